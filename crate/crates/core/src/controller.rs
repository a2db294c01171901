//! Feedback controllers for the inverter and the optimal-equilibrium solver.
//!
//! [`StgfController`] runs the safe gradient flow on the trajectory NLP in a
//! rolling horizon: each cycle it re-rolls the stored input trajectory from
//! the measured state, applies `K` flow updates, emits the first input and
//! shifts the inputs one slot left.
//!
//! [`DroopController`] is the explicit P-omega / Q-V droop baseline with a
//! current-magnitude limiter.

use std::time::{Duration, Instant};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    continuous_dynamics, current_limit, current_limit_grad, dynamics_jacobians, power_output,
    stage_cost, stage_cost_with_grad, CostParams, GridSignals, Input, PlantParams, State,
};
use crate::qp::QpStatus;
use crate::sgf::{ClassKappaSpec, NlpEval, NlpFunctions, SgfEngine};
use crate::trajopt::{rollout, HorizonSpec, TrajectoryDecision, TrajectoryProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StgfConfig {
    pub horizon: HorizonSpec,
    /// Flow updates per control cycle.
    pub k_updates: usize,
    /// Flow step size.
    pub xi: f64,
    pub kappa: ClassKappaSpec,
    /// Seed each QP with the previous active set.
    pub warm_start: bool,
}

impl Default for StgfConfig {
    fn default() -> Self {
        Self {
            horizon: HorizonSpec::default(),
            k_updates: 2,
            xi: 1e-3,
            kappa: ClassKappaSpec::default(),
            warm_start: true,
        }
    }
}

impl StgfConfig {
    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        self.kappa.validate()?;
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "xi",
                reason: format!("must be positive, got {}", self.xi),
            });
        }
        Ok(())
    }
}

/// Diagnostics of the most recent control cycle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowDiagnostics {
    pub qp_status: Option<QpStatus>,
    pub direction_norm: f64,
    /// Number of updates in the cycle whose QP was infeasible.
    pub qp_infeasible: usize,
    /// Largest inequality value of the trajectory handed to the flow.
    pub initial_max_ineq: f64,
    /// Largest inequality value of the optimised trajectory.
    pub max_ineq: f64,
    pub wall_time: Duration,
}

/// Rolling-horizon safe trajectory gradient flow controller.
#[derive(Debug, Clone)]
pub struct StgfController {
    cfg: StgfConfig,
    plant: PlantParams,
    cost: CostParams,
    engine: SgfEngine,
    x0: State,
    states: Vec<State>,
    inputs: Vec<Input>,
    last_direction: Option<DVector<f64>>,
    last_flow: FlowDiagnostics,
}

impl StgfController {
    /// Fill the input trajectory with `u_init` and roll the states out from `x0`.
    pub fn new(
        x0: State,
        u_init: Input,
        cfg: StgfConfig,
        plant: PlantParams,
        cost: CostParams,
        grid: &GridSignals,
    ) -> Result<Self> {
        cfg.validate()?;
        plant.validate()?;
        cost.validate()?;
        let inputs = vec![u_init; cfg.horizon.horizon];
        let states = rollout(&x0, &inputs, grid, &plant, cfg.horizon.dt);
        Ok(Self {
            cfg,
            plant,
            cost,
            engine: SgfEngine::new(1e-9, cfg.warm_start),
            x0,
            states,
            inputs,
            last_direction: None,
            last_flow: FlowDiagnostics::default(),
        })
    }

    /// Start from an explicit input trajectory.
    pub fn with_inputs(
        x0: State,
        inputs: Vec<Input>,
        cfg: StgfConfig,
        plant: PlantParams,
        cost: CostParams,
        grid: &GridSignals,
    ) -> Result<Self> {
        if inputs.len() != cfg.horizon.horizon {
            return Err(Error::Dimension {
                context: "initial input trajectory",
                expected: cfg.horizon.horizon,
                got: inputs.len(),
            });
        }
        let mut ctrl = Self::new(x0, inputs[0], cfg, plant, cost, grid)?;
        ctrl.states = rollout(&x0, &inputs, grid, &plant, cfg.horizon.dt);
        ctrl.inputs = inputs;
        Ok(ctrl)
    }

    pub fn config(&self) -> &StgfConfig {
        &self.cfg
    }

    pub fn cost(&self) -> &CostParams {
        &self.cost
    }

    pub fn set_cost(&mut self, cost: CostParams) {
        self.cost = cost;
    }

    pub fn inputs(&self) -> &[Input] {
        &self.inputs
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn last_flow(&self) -> &FlowDiagnostics {
        &self.last_flow
    }

    /// Current trajectory decision (initial state plus stored trajectories).
    pub fn decision(&self) -> TrajectoryDecision {
        TrajectoryDecision {
            x0: self.x0,
            states: self.states.clone(),
            inputs: self.inputs.clone(),
        }
    }

    pub fn problem(&self, grid: &GridSignals) -> TrajectoryProblem {
        TrajectoryProblem::new(self.plant, self.cost, *grid, self.cfg.horizon, self.x0)
    }

    /// Run the `K` flow updates on the current trajectory without re-rolling
    /// or shifting.
    pub fn optimize(&mut self, grid: &GridSignals) -> Result<()> {
        let problem = self.problem(grid);
        let mut w = self.decision().flatten();
        let mut diag = FlowDiagnostics {
            initial_max_ineq: self
                .states
                .iter()
                .map(|x| current_limit(x, &self.plant))
                .fold(f64::NEG_INFINITY, f64::max),
            ..FlowDiagnostics::default()
        };
        for _ in 0..self.cfg.k_updates {
            let direction = match self.engine.direction(&problem, &w, &self.cfg.kappa) {
                Ok(flow) => {
                    diag.qp_status = Some(flow.qp_status);
                    self.last_direction = Some(flow.direction.clone());
                    flow.direction
                }
                Err(Error::QpInfeasible(msg)) => {
                    warn!("STGF QP infeasible, reusing half the previous direction: {msg}");
                    diag.qp_infeasible += 1;
                    diag.qp_status = Some(QpStatus::Infeasible);
                    self.engine.reset_warm_start();
                    match &self.last_direction {
                        Some(d) => d * 0.5,
                        None => DVector::zeros(w.len()),
                    }
                }
                Err(e) => return Err(e),
            };
            diag.direction_norm = direction.norm();
            w += direction * self.cfg.xi;
        }
        let opt = problem.decision(&w)?;
        self.states = opt.states;
        self.inputs = opt.inputs;
        diag.max_ineq = self
            .states
            .iter()
            .map(|x| current_limit(x, &self.plant))
            .fold(f64::NEG_INFINITY, f64::max);
        self.last_flow = diag;
        Ok(())
    }

    /// One control cycle: measure, re-roll, optimise, apply `u_0`, shift.
    pub fn step(&mut self, x_meas: &State, grid: &GridSignals) -> Result<Input> {
        let start = Instant::now();
        self.plan(x_meas, grid)?;
        let applied = self.inputs[0];
        self.inputs.rotate_left(1);
        let last = self.inputs.len() - 1;
        self.inputs[last] = self.inputs[last - 1];
        self.last_flow.wall_time = start.elapsed();
        Ok(applied)
    }

    /// The first half of [`step`](Self::step): take the measurement, re-roll
    /// the states and run the `K` updates, leaving the inputs unshifted.
    pub fn plan(&mut self, x_meas: &State, grid: &GridSignals) -> Result<()> {
        self.x0 = *x_meas;
        self.states = rollout(
            &self.x0,
            &self.inputs,
            grid,
            &self.plant,
            self.cfg.horizon.dt,
        );
        self.optimize(grid)
    }
}

/// Parameters of the droop baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopConfig {
    /// Frequency droop gain (rad/s per pu power).
    pub k_p: f64,
    /// Voltage droop gain (pu per pu reactive power).
    pub k_q: f64,
    /// Power measurement filter time constant (s).
    pub tau_f: f64,
    /// Current magnitude above which the limiter acts (pu).
    pub i_thresh: f64,
    /// Voltage reduction per pu of current above threshold.
    pub k_vi: f64,
    /// Frequency correction per pu of current above threshold (rad/s).
    pub k_sync: f64,
}

impl DroopConfig {
    pub fn for_plant(plant: &PlantParams) -> Self {
        Self {
            k_p: 0.001 * plant.omega_base,
            k_q: 0.002,
            tau_f: 0.01,
            i_thresh: 0.9 * plant.i_max,
            k_vi: 0.05,
            k_sync: 0.05 * plant.omega_base,
        }
    }

    pub fn validate(&self, plant: &PlantParams) -> Result<()> {
        for (name, value) in [
            ("k_p", self.k_p),
            ("k_q", self.k_q),
            ("k_vi", self.k_vi),
            ("k_sync", self.k_sync),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be non-negative, got {value}"),
                });
            }
        }
        if !(self.tau_f > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau_f",
                reason: format!("must be positive, got {}", self.tau_f),
            });
        }
        if !(self.i_thresh > 0.0 && self.i_thresh <= plant.i_max) {
            return Err(Error::InvalidParameter {
                name: "i_thresh",
                reason: format!("must lie in (0, i_max], got {}", self.i_thresh),
            });
        }
        Ok(())
    }
}

/// Filtered power measurements.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DroopState {
    pub p_f: f64,
    pub q_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopOutput {
    pub input: Input,
    pub limiter_active: bool,
}

/// One droop update: filter the measured powers, apply the droop laws and,
/// above the current threshold, reduce the voltage and add a frequency term
/// that pulls the angle difference back towards zero.
pub fn droop_step(
    d: &DroopState,
    x_meas: &State,
    p_meas: f64,
    q_meas: f64,
    cost: &CostParams,
    cfg: &DroopConfig,
    dt: f64,
) -> (DroopOutput, DroopState) {
    let a = -(-dt / cfg.tau_f).exp_m1();
    let next = DroopState {
        p_f: d.p_f + a * (p_meas - d.p_f),
        q_f: d.q_f + a * (q_meas - d.q_f),
    };
    let mut omega = cost.omega_nom + cfg.k_p * (cost.p_ref - next.p_f);
    let mut v = cost.v_nom + cfg.k_q * (cost.q_ref - next.q_f);
    let excess = x_meas.current_magnitude() - cfg.i_thresh;
    let limiter_active = excess > 0.0;
    if limiter_active {
        v -= cfg.k_vi * excess;
        // d(delta)/dt = omega_e - omega, so raising omega when delta > 0
        // shrinks |delta|
        omega += cfg.k_sync * excess * x_meas.delta.signum();
    }
    (
        DroopOutput {
            input: Input::new(v, omega),
            limiter_active,
        },
        next,
    )
}

/// Stateful wrapper around [`droop_step`].
#[derive(Debug, Clone)]
pub struct DroopController {
    pub cfg: DroopConfig,
    pub cost: CostParams,
    pub plant: PlantParams,
    pub state: DroopState,
    pub dt: f64,
}

impl DroopController {
    pub fn new(cfg: DroopConfig, plant: PlantParams, cost: CostParams, dt: f64) -> Result<Self> {
        cfg.validate(&plant)?;
        Ok(Self {
            cfg,
            cost,
            plant,
            state: DroopState::default(),
            dt,
        })
    }

    pub fn step(&mut self, x_meas: &State, grid: &GridSignals) -> DroopOutput {
        let (p, q) = power_output(x_meas, grid, &self.plant);
        let (out, next) = droop_step(&self.state, x_meas, p, q, &self.cost, &self.cfg, self.dt);
        self.state = next;
        out
    }
}

/// Steady-state NLP over `w = (i_d, i_q, delta, v, omega)`: stage cost
/// subject to the current limit and zero state derivative.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumProblem {
    pub plant: PlantParams,
    pub cost: CostParams,
    pub grid: GridSignals,
}

impl EquilibriumProblem {
    pub fn split(w: &DVector<f64>) -> (State, Input) {
        (State::new(w[0], w[1], w[2]), Input::new(w[3], w[4]))
    }

    pub fn join(x: &State, u: &Input) -> DVector<f64> {
        DVector::from_vec(vec![x.i_d, x.i_q, x.delta, u.v, u.omega])
    }
}

impl NlpFunctions for EquilibriumProblem {
    fn dim(&self) -> usize {
        5
    }

    fn eval(&self, w: &DVector<f64>) -> Result<NlpEval> {
        if w.len() != 5 {
            return Err(Error::Dimension {
                context: "equilibrium decision",
                expected: 5,
                got: w.len(),
            });
        }
        let (x, u) = Self::split(w);
        let (cost, gx, gu) = stage_cost_with_grad(&x, &u, &self.grid, &self.plant, &self.cost);
        let mut grad = DVector::zeros(5);
        grad.fixed_rows_mut::<3>(0).copy_from(&gx);
        grad.fixed_rows_mut::<2>(3).copy_from(&gu);

        let f = continuous_dynamics(&x, &u, &self.grid, &self.plant);
        let (a, b) = dynamics_jacobians(&x, &u, &self.grid, &self.plant);
        let mut eq_jac = DMatrix::zeros(3, 5);
        eq_jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
        eq_jac.fixed_view_mut::<3, 2>(0, 3).copy_from(&b);

        let mut ineq_jac = DMatrix::zeros(1, 5);
        ineq_jac
            .fixed_view_mut::<1, 3>(0, 0)
            .copy_from(&current_limit_grad(&x).transpose());

        Ok(NlpEval {
            cost,
            grad,
            ineq: DVector::from_element(1, current_limit(&x, &self.plant)),
            ineq_jac,
            eq: DVector::from_column_slice(f.as_slice()),
            eq_jac,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumSettings {
    pub xi: f64,
    pub max_iters: usize,
    pub kappa: ClassKappaSpec,
}

impl Default for EquilibriumSettings {
    fn default() -> Self {
        Self {
            xi: 0.005,
            max_iters: 200_000,
            kappa: ClassKappaSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub state: State,
    pub input: Input,
    pub cost: f64,
    pub kkt_residual: f64,
    /// Multiplier of the current limit.
    pub limit_multiplier: f64,
    /// `i_d^2 + i_q^2 - i_max^2` at the solution.
    pub limit_value: f64,
    pub active_power: f64,
    pub reactive_power: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl EquilibriumResult {
    /// The current limit binds: its value is within `1e-4` of zero and it
    /// carries a positive multiplier.
    pub fn constraint_active(&self) -> bool {
        self.limit_value >= -1e-4 && self.limit_multiplier > 0.0
    }
}

/// Optimal steady state by flowing the static NLP to convergence from the
/// no-load operating point `(0, 0, 0; e_mag, omega_e)`.
pub fn solve_equilibrium(
    cost: &CostParams,
    plant: &PlantParams,
    grid: &GridSignals,
    tol: f64,
) -> Result<EquilibriumResult> {
    let start = EquilibriumProblem::join(&State::default(), &Input::new(grid.e_mag, grid.omega_e));
    solve_equilibrium_from(
        cost,
        plant,
        grid,
        tol,
        &start,
        &EquilibriumSettings::default(),
    )
}

pub fn solve_equilibrium_from(
    cost: &CostParams,
    plant: &PlantParams,
    grid: &GridSignals,
    tol: f64,
    start: &DVector<f64>,
    settings: &EquilibriumSettings,
) -> Result<EquilibriumResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must be positive, got {tol}"),
        });
    }
    plant.validate()?;
    cost.validate()?;
    grid.validate()?;
    let problem = EquilibriumProblem {
        plant: *plant,
        cost: *cost,
        grid: *grid,
    };
    let mut engine = SgfEngine::new(1e-10, true);
    let out = engine.flow_to_convergence(
        &problem,
        start,
        &settings.kappa,
        settings.xi,
        0.1 * tol,
        settings.max_iters,
    )?;
    let (state, input) = EquilibriumProblem::split(&out.w);
    let (active_power, reactive_power) = power_output(&state, grid, plant);
    Ok(EquilibriumResult {
        state,
        input,
        cost: stage_cost(&state, &input, grid, plant, cost),
        kkt_residual: out.kkt_residual,
        limit_multiplier: out.mu[0],
        limit_value: current_limit(&state, plant),
        active_power,
        reactive_power,
        converged: out.converged && out.kkt_residual <= tol,
        iterations: out.iterations,
    })
}
