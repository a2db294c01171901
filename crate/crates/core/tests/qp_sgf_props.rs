use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stgf_core::check::{enumerate_qp, operating_point, random_qp};
use stgf_core::controller::EquilibriumProblem;
use stgf_core::model::{CostParams, GridSignals, PlantParams};
use stgf_core::qp::{kkt_residual, solve, QpProblem, QpStatus};
use stgf_core::sgf::*;
use stgf_core::Result;

/// min x1^2 + x2^2 s.t. 1 - x1 <= 0
struct HalfPlane;

impl NlpFunctions for HalfPlane {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, w: &DVector<f64>) -> Result<NlpEval> {
        Ok(NlpEval {
            cost: w.norm_squared(),
            grad: w * 2.0,
            ineq: dvector![1.0 - w[0]],
            ineq_jac: dmatrix![-1.0, 0.0],
            eq: DVector::zeros(0),
            eq_jac: DMatrix::zeros(0, 2),
        })
    }
}

/// 0.5 |w|^2 with no constraints.
struct Bowl;

impl NlpFunctions for Bowl {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, w: &DVector<f64>) -> Result<NlpEval> {
        Ok(NlpEval {
            cost: 0.5 * w.norm_squared(),
            grad: w.clone(),
            ineq: DVector::zeros(0),
            ineq_jac: DMatrix::zeros(0, 3),
            eq: DVector::zeros(0),
            eq_jac: DMatrix::zeros(0, 3),
        })
    }
}

fn linear() -> ClassKappaSpec {
    ClassKappaSpec {
        ineq: ClassKappa::Linear { gain: 1.0 },
        eq: ClassKappa::Linear { gain: 1.0 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn qp_matches_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = random_qp(&mut rng);
        let sol = solve(&qp, 1e-10, 200).unwrap();
        match enumerate_qp(&qp) {
            Some(y) => {
                prop_assert_eq!(sol.status, QpStatus::Optimal);
                prop_assert!((&sol.y - &y).amax() <= 1e-6);
                prop_assert!((qp.objective(&sol.y) - qp.objective(&y)).abs() <= 1e-8 * (1.0 + qp.objective(&y).abs()));
                prop_assert!(kkt_residual(&qp, &sol) <= 1e-8);
            }
            None => prop_assert_eq!(sol.status, QpStatus::Infeasible),
        }
    }

    #[test]
    fn unconstrained_bowl_flows_to_origin(w in prop::collection::vec(-10.0..10.0f64, 3)) {
        let w0 = DVector::from_vec(w);
        let mut eng = SgfEngine::new(1e-10, false);
        let (w1, flow) = eng.step(&Bowl, &w0, &linear(), 1.0).unwrap();
        prop_assert_eq!(flow.direction, -&w0);
        prop_assert!(w1.amax() == 0.0);
    }

    #[test]
    fn descent_at_steady_interior_points(i_d in -0.6..0.6f64, i_q in -0.6..0.6f64) {
        let plant = PlantParams::default();
        let grid = GridSignals::default();
        let (x, u) = operating_point(i_d, i_q, &grid, &plant).unwrap();
        let pr = EquilibriumProblem {
            plant,
            cost: CostParams { p_ref: 0.4, q_ref: 0.1, ..CostParams::default() },
            grid,
        };
        let w = EquilibriumProblem::join(&x, &u);
        let kappa = ClassKappaSpec::default();
        let mut eng = SgfEngine::new(1e-10, false);
        let flow = eng.direction(&pr, &w, &kappa).unwrap();
        prop_assume!(flow.direction.norm() > 1e-6);
        let c0 = pr.eval(&w).unwrap().cost;
        let mut xi = 1e-2;
        let mut decreased = false;
        for _ in 0..40 {
            if pr.eval(&(&w + &flow.direction * xi)).unwrap().cost < c0 {
                decreased = true;
                break;
            }
            xi *= 0.5;
        }
        prop_assert!(decreased);
    }
}

#[test]
fn hand_example_direction_and_multiplier() {
    let mut eng = SgfEngine::new(1e-12, false);
    let flow = eng
        .direction(&HalfPlane, &dvector![1.0, 0.0], &linear())
        .unwrap();
    assert!((flow.mu[0] - 2.0).abs() < 1e-10, "{}", flow.mu);
    assert!(flow.direction.amax() < 1e-10);
    let res = nlp_kkt_residual(
        &HalfPlane,
        &dvector![1.0, 0.0],
        &dvector![2.0],
        &DVector::zeros(0),
    )
    .unwrap();
    assert!(res <= 1e-12);
}

#[test]
fn hand_example_flows_to_boundary() {
    let mut eng = SgfEngine::new(1e-12, false);
    let out = eng
        .flow_to_convergence(
            &HalfPlane,
            &dvector![3.0, 1.0],
            &linear(),
            0.05,
            1e-9,
            100_000,
        )
        .unwrap();
    assert!(out.converged);
    assert!(
        (out.w[0] - 1.0).abs() < 1e-8 && out.w[1].abs() < 1e-8,
        "{}",
        out.w
    );
    // equilibria are KKT points
    assert!(out.kkt_residual <= 10.0 * 1e-9, "{}", out.kkt_residual);
}

#[test]
fn stationary_point_has_zero_direction() {
    let mut eng = SgfEngine::new(1e-12, false);
    let flow = eng
        .direction(&Bowl, &DVector::zeros(3), &ClassKappaSpec::default())
        .unwrap();
    assert_eq!(flow.direction.amax(), 0.0);
    assert_eq!(flow.mu.len(), 0);
}

#[test]
fn kkt_residual_of_interior_point_is_gradient_norm() {
    let w = dvector![2.0, 1.0];
    let r = nlp_kkt_residual(&HalfPlane, &w, &dvector![0.0], &DVector::zeros(0)).unwrap();
    let g = (&w * 2.0).norm();
    assert!((r - g).abs() <= 1e-12 * g, "{r} vs {g}");
}

#[test]
fn infeasible_qp_is_reported() {
    let qp = QpProblem::new(
        DMatrix::identity(1, 1),
        dvector![0.0],
        dmatrix![1.0; -1.0],
        dvector![-1.0, -1.0],
        DMatrix::zeros(0, 1),
        DVector::zeros(0),
    )
    .unwrap();
    assert_eq!(solve(&qp, 1e-10, 50).unwrap().status, QpStatus::Infeasible);
}
