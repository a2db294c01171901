//! Averaged dq-frame model of a voltage-source inverter tied to an infinite bus
//! through an RL branch.
//!
//! Every interface quantity is per-unit except angular frequencies (rad/s) and
//! time (s). Internally the branch equations are evaluated in SI units: the
//! per-unit branch impedance is converted with `z_base = v_base / i_base` and
//! `L = l * z_base / omega_base`, voltages are scaled to volts and currents to
//! amperes, and the resulting current rates are scaled back to per-unit.
//!
//! States are `(i_d, i_q, delta)` where `delta` is the grid angle minus the
//! inverter angle; inputs are the inverter voltage magnitude and frequency.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Matrix3, Matrix3x2, Vector2, Vector3};

use crate::error::{Error, Result};

/// Electrical branch parameters and per-unit bases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Branch resistance (pu).
    pub r: f64,
    /// Branch inductance (pu).
    pub l: f64,
    /// Current-magnitude limit (pu).
    pub i_max: f64,
    /// Angular frequency base (rad/s).
    pub omega_base: f64,
    /// Voltage base (V, RMS phase).
    pub v_base: f64,
    /// Power base (VA).
    pub s_base: f64,
    /// Current base (A, RMS).
    pub i_base: f64,
    /// Power-convention constant in the dq power formulas.
    pub k_pq: f64,
    /// Use `-omega * i_q` in the q-axis row instead of the standard `-omega * i_d`.
    pub literal_coupling: bool,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            r: 0.0069,
            l: 0.0196,
            i_max: 1.0,
            omega_base: 2.0 * PI * 60.0,
            v_base: 120.0,
            s_base: 1500.0,
            i_base: 4.167,
            k_pq: 1.5,
            literal_coupling: false,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("l", self.l),
            ("i_max", self.i_max),
            ("omega_base", self.omega_base),
            ("v_base", self.v_base),
            ("s_base", self.s_base),
            ("i_base", self.i_base),
            ("k_pq", self.k_pq),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Base impedance in ohms.
    pub fn z_base(&self) -> f64 {
        self.v_base / self.i_base
    }

    /// Branch resistance in ohms.
    pub fn resistance_si(&self) -> f64 {
        self.r * self.z_base()
    }

    /// Branch inductance in henries.
    pub fn inductance_si(&self) -> f64 {
        self.l * self.z_base() / self.omega_base
    }
}

/// Exogenous grid quantities, read exactly each control cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSignals {
    /// Grid voltage magnitude (pu).
    pub e_mag: f64,
    /// Grid angular frequency (rad/s).
    pub omega_e: f64,
}

impl Default for GridSignals {
    fn default() -> Self {
        Self {
            e_mag: 1.0,
            omega_e: 2.0 * PI * 60.0,
        }
    }
}

impl GridSignals {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_mag >= 0.0 && self.e_mag.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "e_mag",
                reason: format!("must be non-negative, got {}", self.e_mag),
            });
        }
        if !(self.omega_e > 0.0 && self.omega_e.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "omega_e",
                reason: format!("must be positive, got {}", self.omega_e),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub i_d: f64,
    pub i_q: f64,
    pub delta: f64,
}

impl State {
    pub const DIM: usize = 3;

    pub fn new(i_d: f64, i_q: f64, delta: f64) -> Self {
        Self { i_d, i_q, delta }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.i_d, self.i_q, self.delta)
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Current magnitude `||I_dq||` (pu).
    pub fn current_magnitude(&self) -> f64 {
        self.i_d.hypot(self.i_q)
    }

    pub fn is_finite(&self) -> bool {
        self.i_d.is_finite() && self.i_q.is_finite() && self.delta.is_finite()
    }

    /// Copy with `delta` wrapped to (-pi, pi]. Only for logging.
    pub fn wrapped(self) -> Self {
        Self {
            delta: wrap_angle(self.delta),
            ..self
        }
    }
}

impl std::ops::Add<Vector3<f64>> for State {
    type Output = State;

    fn add(self, rhs: Vector3<f64>) -> State {
        State::new(self.i_d + rhs[0], self.i_q + rhs[1], self.delta + rhs[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Input {
    /// Inverter voltage magnitude (pu).
    pub v: f64,
    /// Inverter angular frequency (rad/s).
    pub omega: f64,
}

impl Input {
    pub const DIM: usize = 2;

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.v, self.omega)
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }
}

/// Weights and references of the operating cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub m_p: f64,
    pub m_q: f64,
    pub tau_v: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub v_nom: f64,
    pub omega_nom: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            m_p: 2.0 * PI,
            m_q: 0.05,
            tau_v: 0.1,
            p_ref: 0.0,
            q_ref: 0.0,
            v_nom: 1.0,
            omega_nom: 2.0 * PI * 60.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("m_p", self.m_p), ("m_q", self.m_q), ("tau_v", self.tau_v)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {value}"),
                });
            }
        }
        for (name, value) in [
            ("p_ref", self.p_ref),
            ("q_ref", self.q_ref),
            ("v_nom", self.v_nom),
            ("omega_nom", self.omega_nom),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be finite".into(),
                });
            }
        }
        Ok(())
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Coefficients of the per-unit current equations: `decay` multiplies the
/// currents, `drive` the voltage difference.
#[derive(Debug, Clone, Copy)]
struct BranchCoefficients {
    decay: f64,
    drive: f64,
}

impl BranchCoefficients {
    fn new(p: &PlantParams) -> Self {
        let r_si = p.resistance_si();
        let l_si = p.inductance_si();
        Self {
            decay: r_si / l_si,
            // (sqrt2 / L) * v_base volts per pu, divided by i_base amps per pu
            drive: SQRT_2 / l_si * p.v_base / p.i_base,
        }
    }
}

/// Time derivative `(di_d/dt, di_q/dt, ddelta/dt)` in pu/s and rad/s.
pub fn continuous_dynamics(x: &State, u: &Input, g: &GridSignals, p: &PlantParams) -> Vector3<f64> {
    let r_si = p.resistance_si();
    let l_si = p.inductance_si();
    let i_d = x.i_d * p.i_base;
    let i_q = x.i_q * p.i_base;
    let v = u.v * p.v_base;
    let e = g.e_mag * p.v_base;
    let (sin_d, cos_d) = x.delta.sin_cos();

    let cross_q = if p.literal_coupling { i_q } else { i_d };
    let di_d = -(r_si / l_si) * i_d + u.omega * i_q + SQRT_2 / l_si * (v - e * cos_d);
    let di_q = -(r_si / l_si) * i_q - u.omega * cross_q + SQRT_2 / l_si * (-e * sin_d);

    Vector3::new(di_d / p.i_base, di_q / p.i_base, g.omega_e - u.omega)
}

/// One forward-Euler step of [`continuous_dynamics`].
pub fn discrete_dynamics(x: &State, u: &Input, g: &GridSignals, p: &PlantParams, dt: f64) -> State {
    *x + continuous_dynamics(x, u, g, p) * dt
}

/// Analytic Jacobians `(df/dx, df/du)` of [`continuous_dynamics`].
pub fn dynamics_jacobians(
    x: &State,
    u: &Input,
    g: &GridSignals,
    p: &PlantParams,
) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let k = BranchCoefficients::new(p);
    let (sin_d, cos_d) = x.delta.sin_cos();
    let e = g.e_mag;

    let mut a = Matrix3::zeros();
    a[(0, 0)] = -k.decay;
    a[(0, 1)] = u.omega;
    a[(0, 2)] = k.drive * e * sin_d;
    if p.literal_coupling {
        a[(1, 1)] = -k.decay - u.omega;
    } else {
        a[(1, 0)] = -u.omega;
        a[(1, 1)] = -k.decay;
    }
    a[(1, 2)] = -k.drive * e * cos_d;

    let mut b = Matrix3x2::zeros();
    b[(0, 0)] = k.drive;
    b[(0, 1)] = x.i_q;
    b[(1, 1)] = if p.literal_coupling { -x.i_q } else { -x.i_d };
    b[(2, 1)] = -1.0;
    (a, b)
}

/// Jacobians of [`discrete_dynamics`]: `(I + dt*A, dt*B)`.
pub fn discrete_jacobians(
    x: &State,
    u: &Input,
    g: &GridSignals,
    p: &PlantParams,
    dt: f64,
) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let (a, b) = dynamics_jacobians(x, u, g, p);
    (Matrix3::identity() + a * dt, b * dt)
}

/// Active and reactive power injected into the grid (pu).
pub fn power_output(x: &State, g: &GridSignals, p: &PlantParams) -> (f64, f64) {
    let (sin_d, cos_d) = x.delta.sin_cos();
    let e = g.e_mag;
    let active = p.k_pq * (e * cos_d * x.i_d + e * sin_d * x.i_q);
    let reactive = p.k_pq * (e * sin_d * x.i_d - e * cos_d * x.i_q);
    (active, reactive)
}

/// Gradients of `(P, Q)` with respect to the state.
pub fn power_gradients(
    x: &State,
    g: &GridSignals,
    p: &PlantParams,
) -> (Vector3<f64>, Vector3<f64>) {
    let (sin_d, cos_d) = x.delta.sin_cos();
    let ke = p.k_pq * g.e_mag;
    let dp = Vector3::new(
        ke * cos_d,
        ke * sin_d,
        ke * (-sin_d * x.i_d + cos_d * x.i_q),
    );
    let dq = Vector3::new(
        ke * sin_d,
        -ke * cos_d,
        ke * (cos_d * x.i_d + sin_d * x.i_q),
    );
    (dp, dq)
}

/// Current-limit constraint `i_d^2 + i_q^2 - i_max^2`, feasible when `<= 0`.
pub fn current_limit(x: &State, p: &PlantParams) -> f64 {
    x.i_d * x.i_d + x.i_q * x.i_q - p.i_max * p.i_max
}

pub fn current_limit_grad(x: &State) -> Vector3<f64> {
    Vector3::new(2.0 * x.i_d, 2.0 * x.i_q, 0.0)
}

/// Power-tracking part of the cost, shared by the stage and terminal costs.
fn power_cost(x: &State, g: &GridSignals, p: &PlantParams, c: &CostParams) -> (f64, Vector3<f64>) {
    let (active, reactive) = power_output(x, g, p);
    let (dp, dq) = power_gradients(x, g, p);
    let wq = c.m_q / c.tau_v;
    let ep = active - c.p_ref;
    let eq = reactive - c.q_ref;
    let value = 0.5 * c.m_p * ep * ep + 0.5 * wq * eq * eq;
    let grad = dp * (c.m_p * ep) + dq * (wq * eq);
    (value, grad)
}

/// Stage cost: power tracking plus voltage and frequency deviation penalties.
pub fn stage_cost(x: &State, u: &Input, g: &GridSignals, p: &PlantParams, c: &CostParams) -> f64 {
    stage_cost_with_grad(x, u, g, p, c).0
}

/// Stage cost and its gradients with respect to `x` and `u`.
pub fn stage_cost_with_grad(
    x: &State,
    u: &Input,
    g: &GridSignals,
    p: &PlantParams,
    c: &CostParams,
) -> (f64, Vector3<f64>, Vector2<f64>) {
    let (power, grad_x) = power_cost(x, g, p, c);
    let dv = u.v - c.v_nom;
    let dw = u.omega - c.omega_nom;
    let value = power + 0.5 / c.tau_v * dv * dv + 0.5 * dw * dw;
    let grad_u = Vector2::new(dv / c.tau_v, dw);
    (value, grad_x, grad_u)
}

/// Terminal cost: the power-tracking terms only.
pub fn terminal_cost(x: &State, g: &GridSignals, p: &PlantParams, c: &CostParams) -> f64 {
    power_cost(x, g, p, c).0
}

pub fn terminal_cost_with_grad(
    x: &State,
    g: &GridSignals,
    p: &PlantParams,
    c: &CostParams,
) -> (f64, Vector3<f64>) {
    power_cost(x, g, p, c)
}
