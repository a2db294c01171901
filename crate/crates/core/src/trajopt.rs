//! Finite-horizon trajectory NLP built from the inverter model.
//!
//! The decision vector holds the predicted states `x_1..x_T` followed by the
//! inputs `u_0..u_{T-1}`; the measured state `x_0` is a fixed parameter. The
//! stacked functions are
//!
//! ```text
//! C(w) = c_f(x_T) + sum_{t=0}^{T-1} c(x_t, u_t)
//! G(w) = [ g(x_1); ...; g(x_T) ]                               (<= 0)
//! H(w) = [ x_1 - F(x_0,u_0); ...; x_T - F(x_{T-1},u_{T-1}) ]    (= 0)
//! ```
//!
//! where `F` is the forward-Euler discretisation. Optional per-step equality
//! constraints are appended after the dynamics defects.

use std::ops::AddAssign;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};
use crate::model::{
    current_limit, current_limit_grad, discrete_dynamics, discrete_jacobians, stage_cost_with_grad,
    terminal_cost_with_grad, CostParams, GridSignals, Input, PlantParams, State,
};
use crate::sgf::{NlpEval, NlpFunctions};

/// Stacked cost, constraints and Jacobians of a trajectory.
pub type StackedEval = NlpEval;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonSpec {
    /// Number of steps `T`.
    pub horizon: usize,
    /// Discretisation step (s).
    pub dt: f64,
}

impl HorizonSpec {
    pub fn new(horizon: usize, dt: f64) -> Result<Self> {
        let spec = Self { horizon, dt };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: format!("must be at least 2, got {}", self.horizon),
            });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        Ok(())
    }

    pub fn decision_dim(&self) -> usize {
        (State::DIM + Input::DIM) * self.horizon
    }

    /// First column of `x_t`, for `t` in `1..=T`.
    pub fn state_col(&self, t: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.horizon);
        State::DIM * (t - 1)
    }

    /// First column of `u_t`, for `t` in `0..T`.
    pub fn input_col(&self, t: usize) -> usize {
        debug_assert!(t < self.horizon);
        State::DIM * self.horizon + Input::DIM * t
    }
}

impl Default for HorizonSpec {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 1e-3,
        }
    }
}

/// Trajectory decision `w = (x_1..x_T, u_0..u_{T-1})` together with the
/// measured initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDecision {
    pub x0: State,
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
}

impl TrajectoryDecision {
    pub fn new(x0: State, states: Vec<State>, inputs: Vec<Input>) -> Result<Self> {
        if states.len() != inputs.len() {
            return Err(Error::Dimension {
                context: "trajectory states vs inputs",
                expected: inputs.len(),
                got: states.len(),
            });
        }
        Ok(Self { x0, states, inputs })
    }

    /// Build a defect-free trajectory by rolling the inputs forward from `x0`.
    pub fn from_rollout(
        x0: State,
        inputs: Vec<Input>,
        grid: &GridSignals,
        plant: &PlantParams,
        dt: f64,
    ) -> Self {
        let states = rollout(&x0, &inputs, grid, plant, dt);
        Self { x0, states, inputs }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// State `x_t` for `t` in `0..=T`.
    pub fn state(&self, t: usize) -> State {
        if t == 0 {
            self.x0
        } else {
            self.states[t - 1]
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let t = self.horizon();
        let mut w = DVector::zeros((State::DIM + Input::DIM) * t);
        for (k, x) in self.states.iter().enumerate() {
            w[3 * k] = x.i_d;
            w[3 * k + 1] = x.i_q;
            w[3 * k + 2] = x.delta;
        }
        for (k, u) in self.inputs.iter().enumerate() {
            w[3 * t + 2 * k] = u.v;
            w[3 * t + 2 * k + 1] = u.omega;
        }
        w
    }

    pub fn from_flat(x0: State, w: &DVector<f64>, horizon: usize) -> Result<Self> {
        let dim = (State::DIM + Input::DIM) * horizon;
        if w.len() != dim {
            return Err(Error::Dimension {
                context: "flattened trajectory",
                expected: dim,
                got: w.len(),
            });
        }
        let s = w.as_slice();
        let states = (0..horizon)
            .map(|k| State::from_slice(&s[3 * k..]))
            .collect();
        let inputs = (0..horizon)
            .map(|k| Input::from_slice(&s[3 * horizon + 2 * k..]))
            .collect();
        Ok(Self { x0, states, inputs })
    }
}

/// Predicted states `x_1..x_T` under `inputs` with forward-Euler dynamics.
pub fn rollout(
    x0: &State,
    inputs: &[Input],
    grid: &GridSignals,
    plant: &PlantParams,
    dt: f64,
) -> Vec<State> {
    let mut states = Vec::with_capacity(inputs.len());
    let mut x = *x0;
    for u in inputs {
        x = discrete_dynamics(&x, u, grid, plant, dt);
        states.push(x);
    }
    states
}

/// Extra equality constraints imposed on every predicted state `x_1..x_T`.
pub trait StepEquality: Send + Sync {
    fn rows(&self) -> usize;
    /// Values and `rows x 3` Jacobian at `x`.
    fn eval(&self, x: &State) -> (DVector<f64>, DMatrix<f64>);
}

/// Evaluate the stacked cost and constraints with analytic Jacobians.
pub fn eval_stacked(
    w: &TrajectoryDecision,
    grid: &GridSignals,
    cost: &CostParams,
    plant: &PlantParams,
    spec: &HorizonSpec,
) -> Result<StackedEval> {
    eval_with_extras(w, grid, cost, plant, spec, None)
}

fn eval_with_extras(
    w: &TrajectoryDecision,
    grid: &GridSignals,
    cost: &CostParams,
    plant: &PlantParams,
    spec: &HorizonSpec,
    extra: Option<&dyn StepEquality>,
) -> Result<StackedEval> {
    let horizon = spec.horizon;
    if w.states.len() != horizon || w.inputs.len() != horizon {
        return Err(Error::Dimension {
            context: "trajectory horizon",
            expected: horizon,
            got: w.inputs.len().min(w.states.len()),
        });
    }
    let n = spec.decision_dim();
    let extra_rows = extra.map_or(0, |e| e.rows());
    let n_eq = State::DIM * horizon + extra_rows * horizon;

    let mut cost_val = 0.0;
    let mut grad = DVector::zeros(n);
    let mut ineq = DVector::zeros(horizon);
    let mut ineq_jac = DMatrix::zeros(horizon, n);
    let mut eq = DVector::zeros(n_eq);
    let mut eq_jac = DMatrix::zeros(n_eq, n);

    for t in 0..horizon {
        let x = w.state(t);
        let u = &w.inputs[t];
        let uc = spec.input_col(t);

        let (c, gx, gu) = stage_cost_with_grad(&x, u, grid, plant, cost);
        cost_val += c;
        if t >= 1 {
            let xc = spec.state_col(t);
            grad.fixed_rows_mut::<3>(xc).add_assign(&gx);
        }
        grad.fixed_rows_mut::<2>(uc).add_assign(&gu);

        // defect block: x_{t+1} - F(x_t, u_t)
        let next = w.states[t];
        let predicted = discrete_dynamics(&x, u, grid, plant, spec.dt);
        let row = State::DIM * t;
        eq[row] = next.i_d - predicted.i_d;
        eq[row + 1] = next.i_q - predicted.i_q;
        eq[row + 2] = next.delta - predicted.delta;
        let (fx, fu) = discrete_jacobians(&x, u, grid, plant, spec.dt);
        eq_jac
            .fixed_view_mut::<3, 3>(row, spec.state_col(t + 1))
            .copy_from(&Matrix3::identity());
        if t >= 1 {
            eq_jac
                .fixed_view_mut::<3, 3>(row, spec.state_col(t))
                .copy_from(&(-fx));
        }
        eq_jac.fixed_view_mut::<3, 2>(row, uc).copy_from(&(-fu));

        // current limit on x_{t+1}
        let xc_next = spec.state_col(t + 1);
        ineq[t] = current_limit(&next, plant);
        ineq_jac
            .fixed_view_mut::<1, 3>(t, xc_next)
            .copy_from(&current_limit_grad(&next).transpose());
    }

    let x_end = w.states[horizon - 1];
    let (cf, gf) = terminal_cost_with_grad(&x_end, grid, plant, cost);
    cost_val += cf;
    grad.fixed_rows_mut::<3>(spec.state_col(horizon))
        .add_assign(&gf);

    if let Some(extra) = extra {
        let base = State::DIM * horizon;
        for t in 1..=horizon {
            let (vals, jac) = extra.eval(&w.state(t));
            let row = base + extra_rows * (t - 1);
            eq.rows_mut(row, extra_rows).copy_from(&vals);
            eq_jac
                .view_mut((row, spec.state_col(t)), (extra_rows, State::DIM))
                .copy_from(&jac);
        }
    }

    Ok(StackedEval {
        cost: cost_val,
        grad,
        ineq,
        ineq_jac,
        eq,
        eq_jac,
    })
}

/// The trajectory NLP for one control cycle, with the measured state fixed.
#[derive(Clone)]
pub struct TrajectoryProblem {
    pub plant: PlantParams,
    pub cost: CostParams,
    pub grid: GridSignals,
    pub spec: HorizonSpec,
    pub x0: State,
    pub step_equalities: Option<Arc<dyn StepEquality>>,
}

impl TrajectoryProblem {
    pub fn new(
        plant: PlantParams,
        cost: CostParams,
        grid: GridSignals,
        spec: HorizonSpec,
        x0: State,
    ) -> Self {
        Self {
            plant,
            cost,
            grid,
            spec,
            x0,
            step_equalities: None,
        }
    }

    pub fn eval_decision(&self, w: &TrajectoryDecision) -> Result<StackedEval> {
        eval_with_extras(
            w,
            &self.grid,
            &self.cost,
            &self.plant,
            &self.spec,
            self.step_equalities.as_deref(),
        )
    }

    pub fn decision(&self, w: &DVector<f64>) -> Result<TrajectoryDecision> {
        TrajectoryDecision::from_flat(self.x0, w, self.spec.horizon)
    }
}

impl std::fmt::Debug for TrajectoryProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrajectoryProblem")
            .field("spec", &self.spec)
            .field("x0", &self.x0)
            .field("step_equalities", &self.step_equalities.is_some())
            .finish_non_exhaustive()
    }
}

impl NlpFunctions for TrajectoryProblem {
    fn dim(&self) -> usize {
        self.spec.decision_dim()
    }

    fn eval(&self, w: &DVector<f64>) -> Result<NlpEval> {
        self.eval_decision(&self.decision(w)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stage_cost, terminal_cost};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_decision(rng: &mut ChaCha8Rng, horizon: usize) -> TrajectoryDecision {
        let mut state = || {
            State::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-0.5..0.5),
            )
        };
        let x0 = state();
        let states = (0..horizon).map(|_| state()).collect();
        let inputs = (0..horizon)
            .map(|_| Input::new(rng.random_range(0.9..1.1), rng.random_range(370.0..385.0)))
            .collect();
        TrajectoryDecision::new(x0, states, inputs).unwrap()
    }

    #[test]
    fn rollout_from_equilibrium_is_constant() {
        let plant = PlantParams::default();
        let grid = GridSignals::default();
        let inputs = vec![Input::new(grid.e_mag, grid.omega_e); 5];
        let states = rollout(&State::default(), &inputs, &grid, &plant, 1e-3);
        assert!(states.iter().all(|x| *x == State::default()));
    }

    #[test]
    fn rollout_single_step() {
        let plant = PlantParams::default();
        let grid = GridSignals::default();
        let x0 = State::new(0.1, 0.2, 0.0);
        let u = Input::new(1.0, 370.0);
        let states = rollout(&x0, &[u], &grid, &plant, 1e-3);
        assert_eq!(
            states,
            vec![discrete_dynamics(&x0, &u, &grid, &plant, 1e-3)]
        );
    }

    #[test]
    fn rollout_is_defect_free() {
        let plant = PlantParams::default();
        let grid = GridSignals::default();
        let cost = CostParams::default();
        let spec = HorizonSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_decision(&mut rng, spec.horizon);
        let w = TrajectoryDecision::from_rollout(base.x0, base.inputs, &grid, &plant, spec.dt);
        let ev = eval_stacked(&w, &grid, &cost, &plant, &spec).unwrap();
        assert!(ev.eq.amax() <= 1e-12);
    }

    #[test]
    fn interior_states_have_negative_limit() {
        let plant = PlantParams::default();
        let spec = HorizonSpec::default();
        let w = TrajectoryDecision::new(
            State::default(),
            vec![State::new(0.3, -0.4, 0.1); spec.horizon],
            vec![Input::new(1.0, 377.0); spec.horizon],
        )
        .unwrap();
        let ev = eval_stacked(
            &w,
            &GridSignals::default(),
            &CostParams::default(),
            &plant,
            &spec,
        )
        .unwrap();
        assert!(ev.ineq.iter().all(|&g| g < 0.0));
    }

    #[test]
    fn wrong_horizon_is_rejected() {
        let spec = HorizonSpec::default();
        let w = TrajectoryDecision::new(
            State::default(),
            vec![State::default(); 3],
            vec![Input::default(); 3],
        )
        .unwrap();
        let err = eval_stacked(
            &w,
            &GridSignals::default(),
            &CostParams::default(),
            &PlantParams::default(),
            &spec,
        );
        assert!(matches!(err, Err(Error::Dimension { .. })));
        assert!(HorizonSpec::new(1, 1e-3).is_err());
    }

    #[test]
    fn cost_decomposes_into_stage_and_terminal_terms() {
        let plant = PlantParams::default();
        let grid = GridSignals::default();
        let cost = CostParams {
            p_ref: 2.5,
            q_ref: -0.5,
            ..CostParams::default()
        };
        let spec = HorizonSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let w = random_decision(&mut rng, spec.horizon);
            let ev = eval_stacked(&w, &grid, &cost, &plant, &spec).unwrap();
            let mut total = terminal_cost(&w.state(spec.horizon), &grid, &plant, &cost);
            for t in 0..spec.horizon {
                total += stage_cost(&w.state(t), &w.inputs[t], &grid, &plant, &cost);
            }
            assert!((ev.cost - total).abs() <= 1e-12 * total.max(1.0));
        }
    }

    #[test]
    fn sparsity_pattern() {
        let plant = PlantParams::default();
        let grid = GridSignals::default();
        let cost = CostParams::default();
        let spec = HorizonSpec::new(4, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_decision(&mut rng, spec.horizon);
        let base = eval_stacked(&w, &grid, &cost, &plant, &spec).unwrap();
        let flat = w.flatten();
        for col in 0..spec.decision_dim() {
            let mut pert = flat.clone();
            pert[col] += 1e-3;
            let wp = TrajectoryDecision::from_flat(w.x0, &pert, spec.horizon).unwrap();
            let ev = eval_stacked(&wp, &grid, &cost, &plant, &spec).unwrap();
            let dg = &ev.ineq - &base.ineq;
            let dh = &ev.eq - &base.eq;
            if col < 3 * spec.horizon {
                let sigma = col / 3 + 1;
                for r in 0..spec.horizon {
                    if r + 1 != sigma {
                        assert_eq!(dg[r], 0.0);
                    }
                }
                for block in 0..spec.horizon {
                    // x_sigma appears in defect blocks sigma-1 and sigma
                    if block + 1 != sigma && block != sigma {
                        assert_eq!(dh.rows(3 * block, 3).amax(), 0.0, "col {col} block {block}");
                    }
                }
            } else {
                let sigma = (col - 3 * spec.horizon) / 2;
                assert_eq!(dg.amax(), 0.0);
                for block in 0..spec.horizon {
                    if block != sigma {
                        assert_eq!(dh.rows(3 * block, 3).amax(), 0.0);
                    }
                }
            }
        }
    }

    struct PinAngle;

    impl StepEquality for PinAngle {
        fn rows(&self) -> usize {
            1
        }

        fn eval(&self, x: &State) -> (DVector<f64>, DMatrix<f64>) {
            (
                DVector::from_element(1, x.delta - 0.1),
                DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
            )
        }
    }

    #[test]
    fn step_equalities_are_appended() {
        let spec = HorizonSpec::new(3, 1e-3).unwrap();
        let mut problem = TrajectoryProblem::new(
            PlantParams::default(),
            CostParams::default(),
            GridSignals::default(),
            spec,
            State::default(),
        );
        problem.step_equalities = Some(Arc::new(PinAngle));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = random_decision(&mut rng, 3);
        w.x0 = State::default();
        let ev = problem.eval(&w.flatten()).unwrap();
        assert_eq!(ev.eq.len(), 9 + 3);
        for t in 1..=3 {
            assert_eq!(ev.eq[8 + t], w.state(t).delta - 0.1);
            assert_eq!(ev.eq_jac[(8 + t, spec.state_col(t) + 2)], 1.0);
        }
    }

    proptest! {
        #[test]
        fn flatten_round_trip(seed in any::<u64>(), horizon in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_decision(&mut rng, horizon);
            let back = TrajectoryDecision::from_flat(w.x0, &w.flatten(), horizon).unwrap();
            prop_assert_eq!(back, w);
        }
    }
}
