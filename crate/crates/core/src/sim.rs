//! Closed-loop simulation: zero-order-hold plant integration, reference
//! schedules and per-cycle recording.

use std::time::{Duration, Instant};

use nalgebra::Vector3;

use crate::controller::{DroopConfig, DroopController, StgfConfig, StgfController};
use crate::error::{Error, Result};
use crate::model::{
    continuous_dynamics, current_limit, discrete_dynamics, power_output, stage_cost, CostParams,
    GridSignals, Input, PlantParams, State,
};

/// Constraint values up to this size count as satisfied when locating the
/// first feasible cycle.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// How the plant is advanced over one controller period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantMode {
    /// Classical RK4 with the given number of substeps.
    Rk4 { substeps: usize },
    /// One forward-Euler step, identical to the controller's prediction model.
    Euler,
}

impl Default for PlantMode {
    fn default() -> Self {
        PlantMode::Rk4 { substeps: 10 }
    }
}

/// Classical RK4 over `dt` with the input held constant.
pub fn integrate_plant(
    x: &State,
    u: &Input,
    g: &GridSignals,
    p: &PlantParams,
    dt: f64,
    substeps: usize,
) -> Result<State> {
    if substeps == 0 {
        return Err(Error::InvalidParameter {
            name: "substeps",
            reason: "must be at least 1".into(),
        });
    }
    let h = dt / substeps as f64;
    let mut s = x.to_vector();
    for _ in 0..substeps {
        let f = |v: Vector3<f64>| continuous_dynamics(&State::from_slice(v.as_slice()), u, g, p);
        let k1 = f(s);
        let k2 = f(s + k1 * (0.5 * h));
        let k3 = f(s + k2 * (0.5 * h));
        let k4 = f(s + k3 * h);
        s += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    let next = State::from_slice(s.as_slice());
    if !next.is_finite() {
        return Err(Error::NonFinite("plant state".into()));
    }
    Ok(next)
}

pub fn advance_plant(
    x: &State,
    u: &Input,
    g: &GridSignals,
    p: &PlantParams,
    dt: f64,
    mode: PlantMode,
) -> Result<State> {
    match mode {
        PlantMode::Rk4 { substeps } => integrate_plant(x, u, g, p, dt, substeps),
        PlantMode::Euler => {
            let next = discrete_dynamics(x, u, g, p, dt);
            if !next.is_finite() {
                return Err(Error::NonFinite("plant state".into()));
            }
            Ok(next)
        }
    }
}

/// Power references taking effect at the start of cycle `at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceStep {
    pub at: usize,
    pub p_ref: f64,
    pub q_ref: f64,
}

/// Grid signals taking effect at the start of cycle `at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStep {
    pub at: usize,
    pub grid: GridSignals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n_steps: usize,
    /// Controller period (s).
    pub dt: f64,
    pub x_init: State,
    /// Input filling the initial trajectory.
    pub u_init: Input,
    pub grid: GridSignals,
    pub references: Vec<ReferenceStep>,
    pub grid_steps: Vec<GridStep>,
    pub plant_mode: PlantMode,
}

impl Default for Scenario {
    /// 300 cycles of 1 ms, starting at rest with nominal inputs and stepping
    /// to `P* = 2.5`, `Q* = -0.5` at cycle 100.
    fn default() -> Self {
        let grid = GridSignals::default();
        Self {
            n_steps: 300,
            dt: 1e-3,
            x_init: State::default(),
            u_init: Input::new(grid.e_mag, grid.omega_e),
            grid,
            references: vec![ReferenceStep {
                at: 100,
                p_ref: 2.5,
                q_ref: -0.5,
            }],
            grid_steps: Vec::new(),
            plant_mode: PlantMode::default(),
        }
    }
}

fn check_schedule(
    name: &'static str,
    indices: impl Iterator<Item = usize>,
    n: usize,
) -> Result<()> {
    let mut prev: Option<usize> = None;
    for at in indices {
        if at > n || prev.is_some_and(|p| at <= p) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("indices must be strictly increasing within [0, {n}], found {at}"),
            });
        }
        prev = Some(at);
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if let PlantMode::Rk4 { substeps: 0 } = self.plant_mode {
            return Err(Error::InvalidParameter {
                name: "substeps",
                reason: "must be at least 1".into(),
            });
        }
        if !self.x_init.is_finite() || !self.u_init.is_finite() {
            return Err(Error::NonFinite("initial state or input".into()));
        }
        self.grid.validate()?;
        for s in &self.grid_steps {
            s.grid.validate()?;
        }
        if self
            .references
            .iter()
            .any(|r| !r.p_ref.is_finite() || !r.q_ref.is_finite())
        {
            return Err(Error::NonFinite("reference schedule".into()));
        }
        check_schedule(
            "references",
            self.references.iter().map(|r| r.at),
            self.n_steps,
        )?;
        check_schedule(
            "grid_steps",
            self.grid_steps.iter().map(|s| s.at),
            self.n_steps,
        )
    }

    fn references_at(&self, k: usize, base: &CostParams) -> CostParams {
        let mut c = *base;
        if let Some(r) = self.references.iter().rev().find(|r| r.at <= k) {
            c.p_ref = r.p_ref;
            c.q_ref = r.q_ref;
        }
        c
    }

    fn grid_at(&self, k: usize) -> GridSignals {
        self.grid_steps
            .iter()
            .rev()
            .find(|s| s.at <= k)
            .map_or(self.grid, |s| s.grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerKind {
    Stgf(StgfConfig),
    Droop(DroopConfig),
    /// Hold the scenario's initial input.
    OpenLoop,
}

/// One recorded cycle: the state measured at `t`, and the input applied over
/// `[t, t + dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRow {
    pub t: f64,
    pub state: State,
    pub input: Input,
    pub p: f64,
    pub q: f64,
    pub i_mag: f64,
    pub g_val: f64,
    pub stage_cost: f64,
    pub solve_time: Duration,
    pub qp_infeasible: bool,
    pub limiter_active: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimRecord {
    pub rows: Vec<SimRow>,
    /// Plant state after the last cycle.
    pub final_state: State,
    /// First cycle whose optimised trajectory satisfied every current limit.
    pub first_feasible_cycle: Option<usize>,
}

impl SimRecord {
    pub fn max_current(&self) -> f64 {
        self.rows.iter().map(|r| r.i_mag).fold(0.0, f64::max)
    }

    pub fn solve_times(&self) -> Vec<Duration> {
        self.rows.iter().map(|r| r.solve_time).collect()
    }

    pub fn last(&self) -> Option<&SimRow> {
        self.rows.last()
    }
}

enum Runner {
    Stgf(Box<StgfController>),
    Droop(DroopController),
    OpenLoop(Input),
}

/// Simulate the closed loop for `sc.n_steps` cycles.
pub fn run_scenario(
    sc: &Scenario,
    kind: &ControllerKind,
    plant: &PlantParams,
    cost: &CostParams,
) -> Result<SimRecord> {
    sc.validate()?;
    plant.validate()?;
    cost.validate()?;
    let mut runner = match kind {
        ControllerKind::Stgf(cfg) => {
            if (cfg.horizon.dt - sc.dt).abs() > 1e-15 * sc.dt {
                return Err(Error::InvalidParameter {
                    name: "horizon.dt",
                    reason: format!(
                        "{} differs from the scenario period {}",
                        cfg.horizon.dt, sc.dt
                    ),
                });
            }
            Runner::Stgf(Box::new(StgfController::new(
                sc.x_init,
                sc.u_init,
                *cfg,
                *plant,
                sc.references_at(0, cost),
                &sc.grid_at(0),
            )?))
        }
        ControllerKind::Droop(cfg) => {
            Runner::Droop(DroopController::new(*cfg, *plant, *cost, sc.dt)?)
        }
        ControllerKind::OpenLoop => Runner::OpenLoop(sc.u_init),
    };

    let mut record = SimRecord {
        rows: Vec::with_capacity(sc.n_steps),
        final_state: sc.x_init,
        first_feasible_cycle: None,
    };
    let mut x = sc.x_init;
    for k in 0..sc.n_steps {
        let c = sc.references_at(k, cost);
        let grid = sc.grid_at(k);
        let mut qp_infeasible = false;
        let mut limiter_active = false;
        let mut feasible = current_limit(&x, plant) <= FEASIBILITY_TOL;
        let start = Instant::now();
        let u = match &mut runner {
            Runner::Stgf(ctrl) => {
                ctrl.set_cost(c);
                let u = ctrl.step(&x, &grid).map_err(|e| e.at_step(k))?;
                let diag = ctrl.last_flow();
                qp_infeasible = diag.qp_infeasible > 0;
                feasible = diag.max_ineq <= FEASIBILITY_TOL;
                u
            }
            Runner::Droop(ctrl) => {
                ctrl.cost = c;
                let out = ctrl.step(&x, &grid);
                limiter_active = out.limiter_active;
                out.input
            }
            Runner::OpenLoop(u) => *u,
        };
        let solve_time = start.elapsed();
        if feasible && record.first_feasible_cycle.is_none() {
            record.first_feasible_cycle = Some(k);
        }
        let (p, q) = power_output(&x, &grid, plant);
        record.rows.push(SimRow {
            t: k as f64 * sc.dt,
            state: x,
            input: u,
            p,
            q,
            i_mag: x.current_magnitude(),
            g_val: current_limit(&x, plant),
            stage_cost: stage_cost(&x, &u, &grid, plant, &c),
            solve_time,
            qp_infeasible,
            limiter_active,
        });
        x = advance_plant(&x, &u, &grid, plant, sc.dt, sc.plant_mode).map_err(|e| e.at_step(k))?;
    }
    record.final_state = x;
    Ok(record)
}
