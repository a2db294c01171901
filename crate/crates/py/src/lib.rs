//! Python bindings for the STGF inverter controller.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stgf_core::controller::{self as ctl, DroopConfig, StgfConfig};
use stgf_core::model;
use stgf_core::sim::{self, ControllerKind, ReferenceStep, Scenario};
use stgf_core::trajopt::HorizonSpec;
use stgf_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. } | Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(module = "stgf", get_all, set_all, skip_from_py_object)]
#[derive(Debug, Clone, Copy)]
pub struct PlantParams {
    pub r: f64,
    pub l: f64,
    pub i_max: f64,
    pub omega_base: f64,
    pub v_base: f64,
    pub s_base: f64,
    pub i_base: f64,
    pub k_pq: f64,
    pub literal_coupling: bool,
}

impl From<model::PlantParams> for PlantParams {
    fn from(p: model::PlantParams) -> Self {
        Self {
            r: p.r,
            l: p.l,
            i_max: p.i_max,
            omega_base: p.omega_base,
            v_base: p.v_base,
            s_base: p.s_base,
            i_base: p.i_base,
            k_pq: p.k_pq,
            literal_coupling: p.literal_coupling,
        }
    }
}

impl PlantParams {
    fn core(&self) -> model::PlantParams {
        model::PlantParams {
            r: self.r,
            l: self.l,
            i_max: self.i_max,
            omega_base: self.omega_base,
            v_base: self.v_base,
            s_base: self.s_base,
            i_base: self.i_base,
            k_pq: self.k_pq,
            literal_coupling: self.literal_coupling,
        }
    }
}

#[pymethods]
impl PlantParams {
    #[new]
    #[pyo3(signature = (r = None, l = None, i_max = None))]
    fn new(r: Option<f64>, l: Option<f64>, i_max: Option<f64>) -> PyResult<Self> {
        let d = model::PlantParams::default();
        let p = model::PlantParams {
            r: r.unwrap_or(d.r),
            l: l.unwrap_or(d.l),
            i_max: i_max.unwrap_or(d.i_max),
            ..d
        };
        p.validate().map_err(to_py)?;
        Ok(p.into())
    }

    fn __repr__(&self) -> String {
        format!(
            "PlantParams(r={}, l={}, i_max={})",
            self.r, self.l, self.i_max
        )
    }
}

#[pyclass(module = "stgf", get_all, set_all, skip_from_py_object)]
#[derive(Debug, Clone, Copy)]
pub struct GridSignals {
    pub e_mag: f64,
    pub omega_e: f64,
}

impl GridSignals {
    fn core(&self) -> model::GridSignals {
        model::GridSignals {
            e_mag: self.e_mag,
            omega_e: self.omega_e,
        }
    }
}

#[pymethods]
impl GridSignals {
    #[new]
    #[pyo3(signature = (e_mag = 1.0, omega_e = None))]
    fn new(e_mag: f64, omega_e: Option<f64>) -> PyResult<Self> {
        let g = model::GridSignals {
            e_mag,
            omega_e: omega_e.unwrap_or(model::GridSignals::default().omega_e),
        };
        g.validate().map_err(to_py)?;
        Ok(Self {
            e_mag: g.e_mag,
            omega_e: g.omega_e,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "GridSignals(e_mag={}, omega_e={})",
            self.e_mag, self.omega_e
        )
    }
}

#[pyclass(module = "stgf", get_all, set_all, skip_from_py_object)]
#[derive(Debug, Clone, Copy)]
pub struct CostParams {
    pub m_p: f64,
    pub m_q: f64,
    pub tau_v: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub v_nom: f64,
    pub omega_nom: f64,
}

impl CostParams {
    fn core(&self) -> model::CostParams {
        model::CostParams {
            m_p: self.m_p,
            m_q: self.m_q,
            tau_v: self.tau_v,
            p_ref: self.p_ref,
            q_ref: self.q_ref,
            v_nom: self.v_nom,
            omega_nom: self.omega_nom,
        }
    }
}

#[pymethods]
impl CostParams {
    #[new]
    #[pyo3(signature = (p_ref = 0.0, q_ref = 0.0, m_p = None, m_q = None, tau_v = None))]
    fn new(
        p_ref: f64,
        q_ref: f64,
        m_p: Option<f64>,
        m_q: Option<f64>,
        tau_v: Option<f64>,
    ) -> PyResult<Self> {
        let d = model::CostParams::default();
        let c = model::CostParams {
            m_p: m_p.unwrap_or(d.m_p),
            m_q: m_q.unwrap_or(d.m_q),
            tau_v: tau_v.unwrap_or(d.tau_v),
            p_ref,
            q_ref,
            ..d
        };
        c.validate().map_err(to_py)?;
        Ok(Self {
            m_p: c.m_p,
            m_q: c.m_q,
            tau_v: c.tau_v,
            p_ref: c.p_ref,
            q_ref: c.q_ref,
            v_nom: c.v_nom,
            omega_nom: c.omega_nom,
        })
    }

    fn __repr__(&self) -> String {
        format!("CostParams(p_ref={}, q_ref={})", self.p_ref, self.q_ref)
    }
}

#[pyclass(module = "stgf", get_all, set_all, skip_from_py_object)]
#[derive(Debug, Clone, Copy)]
pub struct State {
    pub i_d: f64,
    pub i_q: f64,
    pub delta: f64,
}

impl From<model::State> for State {
    fn from(x: model::State) -> Self {
        Self {
            i_d: x.i_d,
            i_q: x.i_q,
            delta: x.delta,
        }
    }
}

impl State {
    fn core(&self) -> model::State {
        model::State::new(self.i_d, self.i_q, self.delta)
    }
}

#[pymethods]
impl State {
    #[new]
    #[pyo3(signature = (i_d = 0.0, i_q = 0.0, delta = 0.0))]
    fn new(i_d: f64, i_q: f64, delta: f64) -> Self {
        Self { i_d, i_q, delta }
    }

    fn current_magnitude(&self) -> f64 {
        self.core().current_magnitude()
    }

    fn __repr__(&self) -> String {
        format!(
            "State(i_d={}, i_q={}, delta={})",
            self.i_d, self.i_q, self.delta
        )
    }
}

#[pyclass(module = "stgf", get_all, set_all, skip_from_py_object)]
#[derive(Debug, Clone, Copy)]
pub struct Input {
    pub v: f64,
    pub omega: f64,
}

impl From<model::Input> for Input {
    fn from(u: model::Input) -> Self {
        Self {
            v: u.v,
            omega: u.omega,
        }
    }
}

#[pymethods]
impl Input {
    #[new]
    fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    fn __repr__(&self) -> String {
        format!("Input(v={}, omega={})", self.v, self.omega)
    }
}

#[pyclass(module = "stgf", get_all, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub state: State,
    pub input: Input,
    pub cost: f64,
    pub kkt_residual: f64,
    pub limit_value: f64,
    pub limit_multiplier: f64,
    pub active_power: f64,
    pub reactive_power: f64,
    pub converged: bool,
    pub constraint_active: bool,
}

/// `(P, Q)` delivered to the grid at state `x`.
#[pyfunction]
fn power_output(x: &State, grid: &GridSignals, plant: &PlantParams) -> (f64, f64) {
    model::power_output(&x.core(), &grid.core(), &plant.core())
}

/// `i_d^2 + i_q^2 - i_max^2`.
#[pyfunction]
fn current_limit(x: &State, plant: &PlantParams) -> f64 {
    model::current_limit(&x.core(), &plant.core())
}

#[pyfunction]
#[pyo3(signature = (cost, plant = None, grid = None, tol = 1e-9))]
fn solve_equilibrium(
    cost: &CostParams,
    plant: Option<&PlantParams>,
    grid: Option<&GridSignals>,
    tol: f64,
) -> PyResult<Equilibrium> {
    let plant = plant.map_or_else(model::PlantParams::default, PlantParams::core);
    let grid = grid.map_or_else(model::GridSignals::default, GridSignals::core);
    let eq = ctl::solve_equilibrium(&cost.core(), &plant, &grid, tol).map_err(to_py)?;
    Ok(Equilibrium {
        state: eq.state.into(),
        input: eq.input.into(),
        cost: eq.cost,
        kkt_residual: eq.kkt_residual,
        limit_value: eq.limit_value,
        limit_multiplier: eq.limit_multiplier,
        active_power: eq.active_power,
        reactive_power: eq.reactive_power,
        converged: eq.converged,
        constraint_active: eq.constraint_active(),
    })
}

/// Rolling-horizon controller. `step` applies the first planned input and
/// shifts the plan.
#[pyclass(module = "stgf", unsendable)]
pub struct StgfController {
    inner: ctl::StgfController,
}

#[pymethods]
impl StgfController {
    #[new]
    #[pyo3(signature = (x0, cost, plant = None, grid = None, horizon = 10, dt = 1e-3, k_updates = 2, xi = 1e-3))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        x0: &State,
        cost: &CostParams,
        plant: Option<&PlantParams>,
        grid: Option<&GridSignals>,
        horizon: usize,
        dt: f64,
        k_updates: usize,
        xi: f64,
    ) -> PyResult<Self> {
        let plant = plant.map_or_else(model::PlantParams::default, PlantParams::core);
        let grid = grid.map_or_else(model::GridSignals::default, GridSignals::core);
        let cfg = StgfConfig {
            horizon: HorizonSpec::new(horizon, dt).map_err(to_py)?,
            k_updates,
            xi,
            ..StgfConfig::default()
        };
        let u0 = model::Input::new(grid.e_mag, grid.omega_e);
        let inner = ctl::StgfController::new(x0.core(), u0, cfg, plant, cost.core(), &grid)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (x, grid = None))]
    fn step(&mut self, x: &State, grid: Option<&GridSignals>) -> PyResult<Input> {
        let grid = grid.map_or_else(model::GridSignals::default, GridSignals::core);
        let u = self.inner.step(&x.core(), &grid).map_err(to_py)?;
        Ok(u.into())
    }

    fn set_cost(&mut self, cost: &CostParams) {
        self.inner.set_cost(cost.core());
    }

    /// Planned inputs after the last step.
    fn inputs(&self) -> Vec<Input> {
        self.inner.inputs().iter().map(|&u| u.into()).collect()
    }

    fn states(&self) -> Vec<State> {
        self.inner.states().iter().map(|&x| x.into()).collect()
    }

    /// Largest current-limit value over the plan of the last step.
    fn max_limit_value(&self) -> f64 {
        self.inner.last_flow().max_ineq
    }
}

/// Simulate the closed loop and return the recorded columns by name.
#[pyfunction]
#[pyo3(signature = (controller = "stgf", n_steps = 300, p_ref = 2.5, q_ref = -0.5, step_at = 100, plant = None, cost = None))]
#[allow(clippy::too_many_arguments)]
fn run_scenario(
    controller: &str,
    n_steps: usize,
    p_ref: f64,
    q_ref: f64,
    step_at: usize,
    plant: Option<&PlantParams>,
    cost: Option<&CostParams>,
) -> PyResult<HashMap<&'static str, Vec<f64>>> {
    let plant = plant.map_or_else(model::PlantParams::default, PlantParams::core);
    let cost = cost.map_or_else(model::CostParams::default, CostParams::core);
    let kind = match controller {
        "stgf" => ControllerKind::Stgf(StgfConfig::default()),
        "droop" => ControllerKind::Droop(DroopConfig::for_plant(&plant)),
        "open_loop" => ControllerKind::OpenLoop,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown controller `{other}` (stgf, droop, open_loop)"
            )))
        }
    };
    let references = if step_at < n_steps {
        vec![ReferenceStep {
            at: step_at,
            p_ref,
            q_ref,
        }]
    } else {
        Vec::new()
    };
    let sc = Scenario {
        n_steps,
        references,
        ..Scenario::default()
    };
    let rec = sim::run_scenario(&sc, &kind, &plant, &cost).map_err(to_py)?;
    let mut cols: HashMap<&'static str, Vec<f64>> = HashMap::new();
    for r in &rec.rows {
        for (name, v) in [
            ("t", r.t),
            ("i_d", r.state.i_d),
            ("i_q", r.state.i_q),
            ("delta", r.state.delta),
            ("v", r.input.v),
            ("omega", r.input.omega),
            ("p", r.p),
            ("q", r.q),
            ("i_mag", r.i_mag),
            ("g_val", r.g_val),
            ("stage_cost", r.stage_cost),
        ] {
            cols.entry(name).or_default().push(v);
        }
    }
    Ok(cols)
}

#[pymodule]
fn stgf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PlantParams>()?;
    m.add_class::<GridSignals>()?;
    m.add_class::<CostParams>()?;
    m.add_class::<State>()?;
    m.add_class::<Input>()?;
    m.add_class::<Equilibrium>()?;
    m.add_class::<StgfController>()?;
    m.add_function(wrap_pyfunction!(power_output, m)?)?;
    m.add_function(wrap_pyfunction!(current_limit, m)?)?;
    m.add_function(wrap_pyfunction!(solve_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
