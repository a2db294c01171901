//! Self-check suites: independent oracles for derivatives, the QP solver,
//! the flow direction and anytime feasibility, plus diagnostics for the
//! literal model and barrier variants.
//!
//! Every suite is deterministic for a given seed and returns a
//! [`SuiteReport`] instead of panicking.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{StgfConfig, StgfController};
use crate::error::Result;
use crate::model::{
    continuous_dynamics, current_limit, current_limit_grad, dynamics_jacobians, power_output,
    stage_cost, stage_cost_with_grad, terminal_cost, terminal_cost_with_grad, CostParams,
    GridSignals, Input, PlantParams, State,
};
use crate::qp::{kkt_residual, QpProblem, QpSettings, QpSolver, QpStatus};
use crate::sgf::{ClassKappaSpec, NlpEval, NlpFunctions, SgfEngine};
use crate::sim::{run_scenario, ControllerKind, Scenario};
use crate::trajopt::{HorizonSpec, TrajectoryDecision, TrajectoryProblem};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest error metric seen across all cases.
    pub worst: f64,
    pub tolerance: f64,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
            notes: Vec::new(),
        }
    }

    /// Record one case; NaN errors count as failures.
    fn record(&mut self, err: f64, label: impl FnOnce() -> String) {
        self.cases += 1;
        if err.is_nan() || err > self.tolerance {
            self.failures += 1;
            if self.notes.len() < 5 {
                self.notes.push(format!("{}: error {err:.3e}", label()));
            }
        }
        if err.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(err);
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {} cases, {} failures, worst {:.3e} (tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.worst,
            self.tolerance
        )?;
        for n in &self.notes {
            write!(f, "\n    {n}")?;
        }
        Ok(())
    }
}

/// Informational result of a diagnostic run; diagnostics never fail.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub name: &'static str,
    pub lines: Vec<String>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[INFO] {}", self.name)?;
        for l in &self.lines {
            write!(f, "\n    {l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub seed: u64,
    pub gradient_points: usize,
    pub qps: usize,
    pub equivalence_points: usize,
    pub feasibility_trials: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            gradient_points: 100,
            qps: 500,
            equivalence_points: 100,
            feasibility_trials: 100,
        }
    }
}

/// Run every suite with the default plant.
pub fn run_all(cfg: &CheckConfig) -> Result<Vec<SuiteReport>> {
    let plant = PlantParams::default();
    Ok(vec![
        gradient_suite(&plant, cfg.gradient_points, cfg.seed)?,
        qp_oracle_suite(cfg.qps, cfg.seed)?,
        form_equivalence_suite(&plant, cfg.equivalence_points, cfg.seed)?,
        anytime_feasibility_suite(&plant, cfg.feasibility_trials, cfg.seed)?,
    ])
}

fn random_state(rng: &mut ChaCha8Rng, i_max: f64) -> State {
    State::new(
        rng.random_range(-i_max..i_max),
        rng.random_range(-i_max..i_max),
        rng.random_range(-0.5..0.5),
    )
}

fn random_input(rng: &mut ChaCha8Rng, grid: &GridSignals) -> Input {
    Input::new(
        grid.e_mag + rng.random_range(-0.05..0.05),
        grid.omega_e + rng.random_range(-5.0..5.0),
    )
}

pub fn random_cost(rng: &mut ChaCha8Rng) -> CostParams {
    CostParams {
        p_ref: rng.random_range(-3.0..3.0),
        q_ref: rng.random_range(-1.5..1.5),
        ..CostParams::default()
    }
}

/// Elementwise error of `analytic` against `numeric`, relative to the
/// largest numeric entry (floored at 1e-3).
fn rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).amax() / numeric.amax().max(1e-3)
}

/// Central differences of a vector function, step scaled by `|w_i|`.
fn central_jacobian(
    w: &DVector<f64>,
    rows: usize,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, w.len());
    for j in 0..w.len() {
        let h = 1e-6 * w[j].abs().max(1.0);
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[j] += h;
        wm[j] -= h;
        let d = (f(&wp) - f(&wm)) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

/// Analytic derivatives of the model and the stacked trajectory functions
/// against central finite differences.
pub fn gradient_suite(plant: &PlantParams, points: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("gradients", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSignals::default();
    let spec = HorizonSpec::default();
    for k in 0..points {
        let x = random_state(&mut rng, 1.5 * plant.i_max);
        let u = random_input(&mut rng, &grid);
        let cost = random_cost(&mut rng);
        let xu = DVector::from_vec(vec![x.i_d, x.i_q, x.delta, u.v, u.omega]);
        let split = |w: &DVector<f64>| (State::new(w[0], w[1], w[2]), Input::new(w[3], w[4]));

        let (a, b) = dynamics_jacobians(&x, &u, &grid, plant);
        let mut ab = DMatrix::zeros(3, 5);
        ab.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
        ab.fixed_view_mut::<3, 2>(0, 3).copy_from(&b);
        let fd = central_jacobian(&xu, 3, |w| {
            let (x, u) = split(w);
            DVector::from_column_slice(continuous_dynamics(&x, &u, &grid, plant).as_slice())
        });
        report.record(rel_err(&ab, &fd), || format!("dynamics point {k}"));

        let (_, gx, gu) = stage_cost_with_grad(&x, &u, &grid, plant, &cost);
        let mut g = DMatrix::zeros(1, 5);
        g.fixed_view_mut::<1, 3>(0, 0).copy_from(&gx.transpose());
        g.fixed_view_mut::<1, 2>(0, 3).copy_from(&gu.transpose());
        let fd = central_jacobian(&xu, 1, |w| {
            let (x, u) = split(w);
            DVector::from_element(1, stage_cost(&x, &u, &grid, plant, &cost))
        });
        report.record(rel_err(&g, &fd), || format!("stage cost point {k}"));

        let x3 = DVector::from_vec(vec![x.i_d, x.i_q, x.delta]);
        let (_, gf) = terminal_cost_with_grad(&x, &grid, plant, &cost);
        let fd = central_jacobian(&x3, 1, |w| {
            DVector::from_element(
                1,
                terminal_cost(&State::new(w[0], w[1], w[2]), &grid, plant, &cost),
            )
        });
        report.record(
            rel_err(&DMatrix::from_row_slice(1, 3, gf.as_slice()), &fd),
            || format!("terminal cost point {k}"),
        );

        let fd = central_jacobian(&x3, 1, |w| {
            DVector::from_element(1, current_limit(&State::new(w[0], w[1], w[2]), plant))
        });
        let gl = current_limit_grad(&x);
        report.record(
            rel_err(&DMatrix::from_row_slice(1, 3, gl.as_slice()), &fd),
            || format!("current limit point {k}"),
        );

        let inputs: Vec<Input> = (0..spec.horizon)
            .map(|_| random_input(&mut rng, &grid))
            .collect();
        let mut traj = TrajectoryDecision::from_rollout(x, inputs, &grid, plant, spec.dt);
        for s in traj.states.iter_mut() {
            s.i_d += rng.random_range(-0.05..0.05);
            s.i_q += rng.random_range(-0.05..0.05);
        }
        let problem = TrajectoryProblem::new(*plant, cost, grid, spec, x);
        let w = traj.flatten();
        let ev = problem.eval(&w)?;
        let eval_or_nan = |w: &DVector<f64>| -> NlpEval {
            problem.eval(w).expect("trajectory evaluation is total")
        };
        let fd = central_jacobian(&w, 1, |w| DVector::from_element(1, eval_or_nan(w).cost));
        report.record(
            rel_err(
                &DMatrix::from_row_slice(1, w.len(), ev.grad.as_slice()),
                &fd,
            ),
            || format!("stacked cost gradient point {k}"),
        );
        let fd = central_jacobian(&w, ev.ineq.len(), |w| eval_or_nan(w).ineq);
        report.record(rel_err(&ev.ineq_jac, &fd), || {
            format!("stacked G Jacobian point {k}")
        });
        let fd = central_jacobian(&w, ev.eq.len(), |w| eval_or_nan(w).eq);
        report.record(rel_err(&ev.eq_jac, &fd), || {
            format!("stacked H Jacobian point {k}")
        });
    }
    Ok(report)
}

/// Solution of a strictly convex QP by enumerating active sets in order of
/// size and returning the first KKT point. Returns `None` when no subset
/// yields one (infeasible problem).
pub fn enumerate_qp(qp: &QpProblem) -> Option<DVector<f64>> {
    let n = qp.dim();
    let me = qp.n_eq();
    let mi = qp.n_ineq();
    let scale = 1.0 + qp.hess.amax() + qp.lin.amax() + qp.ineq_rhs.amax() + qp.eq_rhs.amax();
    let tol = 1e-9 * scale;
    for size in 0..=mi.min(n.saturating_sub(me)) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            let m = me + size;
            let mut k = DMatrix::zeros(n + m, n + m);
            k.view_mut((0, 0), (n, n)).copy_from(&qp.hess);
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&(-&qp.lin));
            for i in 0..me {
                k.view_mut((n + i, 0), (1, n)).copy_from(&qp.eq_mat.row(i));
                k.view_mut((0, n + i), (n, 1))
                    .copy_from(&qp.eq_mat.row(i).transpose());
                rhs[n + i] = qp.eq_rhs[i];
            }
            for (s, &i) in subset.iter().enumerate() {
                k.view_mut((n + me + s, 0), (1, n))
                    .copy_from(&qp.ineq_mat.row(i));
                k.view_mut((0, n + me + s), (n, 1))
                    .copy_from(&qp.ineq_mat.row(i).transpose());
                rhs[n + me + s] = qp.ineq_rhs[i];
            }
            if let Some(sol) = k.lu().solve(&rhs) {
                let y = sol.rows(0, n).into_owned();
                let dual_ok = (0..size).all(|s| sol[n + me + s] >= -tol);
                let primal_ok = (&qp.ineq_mat * &y - &qp.ineq_rhs).iter().all(|&v| v <= tol);
                if sol.iter().all(|v| v.is_finite()) && dual_ok && primal_ok {
                    return Some(y);
                }
            }
            // next combination in lexicographic order
            let mut i = size;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if subset[i] < mi - size + i {
                    subset[i] += 1;
                    for j in i + 1..size {
                        subset[j] = subset[j - 1] + 1;
                    }
                    i = usize::MAX;
                    break;
                }
            }
            if i != usize::MAX {
                break;
            }
        }
    }
    None
}

/// Random strictly convex QP that is feasible by construction.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(2..=6);
    let me = rng.random_range(0..=2.min(n - 1));
    let mi = rng.random_range(0..=8);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let hess = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
    let lin = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let y0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let ineq_mat = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    let ineq_rhs = &ineq_mat * &y0 + DVector::from_fn(mi, |_, _| rng.random_range(0.0..0.5));
    let eq_mat = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    let eq_rhs = &eq_mat * &y0;
    QpProblem::new(hess, lin, ineq_mat, ineq_rhs, eq_mat, eq_rhs)
        .expect("generated QP is well formed")
}

/// The active-set solver against the enumeration oracle.
pub fn qp_oracle_suite(count: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("qp oracle", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5150);
    let mut solver = QpSolver::new(QpSettings {
        tol: 1e-10,
        max_iter: 200,
        warm_start: false,
    });
    let mut worst_kkt: f64 = 0.0;
    let mut kkt_failures = 0;
    for k in 0..count {
        let qp = random_qp(&mut rng);
        let sol = solver.solve(&qp)?;
        let Some(y) = enumerate_qp(&qp) else {
            report.record(f64::NAN, || format!("qp {k}: oracle found no KKT point"));
            continue;
        };
        let primal = (&sol.y - &y).amax();
        let obj = (qp.objective(&sol.y) - qp.objective(&y)).abs();
        let status_ok = sol.status == QpStatus::Optimal;
        let kkt = kkt_residual(&qp, &sol);
        if status_ok {
            worst_kkt = worst_kkt.max(kkt);
            if kkt > 1e-8 {
                kkt_failures += 1;
            }
        }
        // objective tolerance is 1e-8, so scale it onto the primal tolerance
        let err = if status_ok {
            primal.max(obj * 1e2)
        } else {
            f64::NAN
        };
        report.record(err, || {
            format!(
                "qp {k}: status {:?}, primal {primal:.2e}, objective {obj:.2e}",
                sol.status
            )
        });
    }
    if kkt_failures > 0 {
        report.failures += kkt_failures;
        report.notes.push(format!(
            "{kkt_failures} optimal solves with KKT residual above 1e-8"
        ));
    }
    report
        .notes
        .push(format!("worst recomputed KKT residual {worst_kkt:.2e}"));
    Ok(report)
}

/// Steady operating point carrying current `(i_d, i_q)` at grid frequency:
/// Newton on the current equations for `(delta, v)`.
pub fn operating_point(
    i_d: f64,
    i_q: f64,
    grid: &GridSignals,
    plant: &PlantParams,
) -> Option<(State, Input)> {
    let mut x = State::new(i_d, i_q, 0.0);
    let mut u = Input::new(grid.e_mag, grid.omega_e);
    for _ in 0..50 {
        let f = continuous_dynamics(&x, &u, grid, plant);
        let (a, b) = dynamics_jacobians(&x, &u, grid, plant);
        let jac = nalgebra::Matrix2::new(a[(0, 2)], b[(0, 0)], a[(1, 2)], b[(1, 0)]);
        let step = jac.lu().solve(&nalgebra::Vector2::new(-f[0], -f[1]))?;
        x.delta += step[0];
        u.v += step[1];
        if step.amax() < 1e-15 {
            break;
        }
    }
    let f = continuous_dynamics(&x, &u, grid, plant);
    (f.amax() < 1e-8 * (1.0 + plant.omega_base)).then_some((x, u))
}

/// Rollout from a perturbed operating point with current magnitude below
/// `i_mag`, with small input noise.
pub fn operating_trajectory(
    rng: &mut ChaCha8Rng,
    plant: &PlantParams,
    grid: &GridSignals,
    spec: &HorizonSpec,
    i_mag: f64,
) -> (State, TrajectoryDecision) {
    loop {
        let r = i_mag * rng.random_range(0.0f64..1.0).sqrt();
        let th = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let Some((xe, ue)) = operating_point(r * th.cos(), r * th.sin(), grid, plant) else {
            continue;
        };
        let x0 = State::new(
            xe.i_d + rng.random_range(-0.02..0.02),
            xe.i_q + rng.random_range(-0.02..0.02),
            xe.delta + rng.random_range(-1e-3..1e-3),
        );
        let inputs: Vec<Input> = (0..spec.horizon)
            .map(|_| {
                Input::new(
                    ue.v + rng.random_range(-2e-4..2e-4),
                    ue.omega + rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        return (
            x0,
            TrajectoryDecision::from_rollout(x0, inputs, grid, plant, spec.dt),
        );
    }
}

/// Flow direction in primal form: `min |v + grad C|^2` subject to
/// `J_G v <= -alpha(G)` and `J_H v = -alpha_eq(H)`, solved by active-set
/// enumeration.
pub fn primal_direction(ev: &NlpEval, kappa: &ClassKappaSpec) -> Option<DVector<f64>> {
    let n = ev.grad.len();
    let qp = QpProblem::new(
        DMatrix::identity(n, n),
        ev.grad.clone(),
        ev.ineq_jac.clone(),
        ev.ineq.map(|g| -kappa.ineq.apply(g)),
        ev.eq_jac.clone(),
        ev.eq.map(|h| -kappa.eq.apply(h)),
    )
    .ok()?;
    enumerate_qp(&qp)
}

/// Dual-form flow direction against the primal form.
pub fn form_equivalence_suite(
    plant: &PlantParams,
    points: usize,
    seed: u64,
) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("sgf form equivalence", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE0);
    let grid = GridSignals::default();
    let spec = HorizonSpec::default();
    let kappa = ClassKappaSpec::default();
    let mut engine = SgfEngine::new(1e-12, false);
    let mut worst_norm: f64 = 0.0;
    for k in 0..points {
        let cost = random_cost(&mut rng);
        let (x0, mut traj) = operating_trajectory(&mut rng, plant, &grid, &spec, 1.1 * plant.i_max);
        for s in traj.states.iter_mut() {
            s.i_d += rng.random_range(-1e-3..1e-3);
            s.i_q += rng.random_range(-1e-3..1e-3);
            s.delta += rng.random_range(-1e-4..1e-4);
        }
        let problem = TrajectoryProblem::new(*plant, cost, grid, spec, x0);
        let ev = problem.eval(&traj.flatten())?;
        let dual = match engine.direction_from_eval(&ev, &kappa) {
            Ok(flow) => flow.direction,
            Err(e) => {
                report.record(f64::NAN, || format!("point {k}: dual form failed: {e}"));
                continue;
            }
        };
        let err = match primal_direction(&ev, &kappa) {
            Some(primal) => {
                worst_norm = worst_norm.max(primal.norm());
                (&dual - &primal).amax()
            }
            None => f64::NAN,
        };
        report.record(err, || format!("point {k}"));
    }
    report
        .notes
        .push(format!("largest direction norm {worst_norm:.3e}"));
    Ok(report)
}

/// Randomised feasible trajectories (every `G <= -1e-3`) stay feasible
/// through one controller cycle.
pub fn anytime_feasibility_suite(
    plant: &PlantParams,
    trials: usize,
    seed: u64,
) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("anytime feasibility", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFEA5);
    let grid = GridSignals::default();
    let cfg = StgfConfig::default();
    let mut rejected = 0usize;
    let mut margin = f64::INFINITY;
    while report.cases < trials {
        let (x0, traj) = operating_trajectory(&mut rng, plant, &grid, &cfg.horizon, plant.i_max);
        if std::iter::once(&x0)
            .chain(&traj.states)
            .any(|x| current_limit(x, plant) > -1e-3)
        {
            rejected += 1;
            continue;
        }
        let inputs = traj.inputs;
        let cost = random_cost(&mut rng);
        let mut ctrl = StgfController::with_inputs(x0, inputs, cfg, *plant, cost, &grid)?;
        ctrl.optimize(&grid)?;
        let worst = ctrl
            .states()
            .iter()
            .map(|x| current_limit(x, plant))
            .fold(f64::NEG_INFINITY, f64::max);
        margin = margin.min(-worst);
        let case = report.cases;
        report.record(worst.max(0.0), || {
            format!("trial {case}: max G {worst:.3e}")
        });
    }
    report.notes.push(format!(
        "{rejected} samples rejected; smallest remaining margin {margin:.3e}"
    ));
    Ok(report)
}

/// Equality drift under the literal barrier `20 exp(10 z)` on every
/// constraint, and infeasibility of the printed exponential at zero current.
pub fn literal_alpha_diagnostic(plant: &PlantParams) -> Result<Diagnostic> {
    let grid = GridSignals::default();
    let spec = HorizonSpec::default();
    let x0 = State::new(0.3, -0.1, -0.01);
    let u = Input::new(grid.e_mag, grid.omega_e);
    let traj = TrajectoryDecision::from_rollout(x0, vec![u; spec.horizon], &grid, plant, spec.dt);
    let problem = TrajectoryProblem::new(*plant, CostParams::default(), grid, spec, x0);
    let mut lines = Vec::new();
    for (label, kappa) in [
        ("vanishing", ClassKappaSpec::default()),
        (
            "exponential on equalities",
            ClassKappaSpec::exponential_everywhere(20.0, 10.0),
        ),
    ] {
        let mut engine = SgfEngine::default();
        let mut w = traj.flatten();
        let mut status = "ok".to_string();
        for _ in 0..20 {
            match engine.step(&problem, &w, &kappa, 1e-3) {
                Ok((next, _)) => w = next,
                Err(e) => {
                    status = e.to_string();
                    break;
                }
            }
        }
        let drift = problem.eval(&w)?.eq.amax();
        lines.push(format!(
            "{label}: max |H| after 20 updates {drift:.3e} ({status})"
        ));
    }
    let zero = TrajectoryDecision::from_rollout(
        State::default(),
        vec![u; spec.horizon],
        &grid,
        plant,
        spec.dt,
    );
    let problem =
        TrajectoryProblem::new(*plant, CostParams::default(), grid, spec, State::default());
    let mut engine = SgfEngine::default();
    let outcome = match engine.direction(
        &problem,
        &zero.flatten(),
        &ClassKappaSpec::printed_exponential(20.0, 10.0),
    ) {
        Ok(_) => "feasible".to_string(),
        Err(e) => e.to_string(),
    };
    lines.push(format!("printed exponential at zero current: {outcome}"));
    Ok(Diagnostic {
        name: "literal barrier function",
        lines,
    })
}

/// Default scenario under the standard and the literal dq cross-coupling.
pub fn literal_coupling_diagnostic(plant: &PlantParams) -> Result<Diagnostic> {
    let sc = Scenario {
        n_steps: 150,
        ..Scenario::default()
    };
    let cost = CostParams::default();
    let kind = ControllerKind::Stgf(StgfConfig::default());
    let standard = run_scenario(&sc, &kind, plant, &cost)?;
    let literal_plant = PlantParams {
        literal_coupling: true,
        ..*plant
    };
    let mut lines = Vec::new();
    match run_scenario(&sc, &kind, &literal_plant, &cost) {
        Ok(literal) => {
            let div = standard
                .rows
                .iter()
                .zip(&literal.rows)
                .map(|(a, b)| (a.state.to_vector() - b.state.to_vector()).amax())
                .fold(0.0, f64::max);
            lines.push(format!(
                "max state divergence over {} cycles: {div:.3e}",
                sc.n_steps
            ));
            lines.push(format!(
                "max |I|: standard {:.5}, literal {:.5}",
                standard.max_current(),
                literal.max_current()
            ));
            if let (Some(a), Some(b)) = (standard.last(), literal.last()) {
                let grid = sc.grid;
                let (pa, qa) = power_output(&a.state, &grid, plant);
                let (pb, qb) = power_output(&b.state, &grid, &literal_plant);
                lines.push(format!(
                    "final (P, Q): standard ({pa:.4}, {qa:.4}), literal ({pb:.4}, {qb:.4})"
                ));
            }
        }
        Err(e) => lines.push(format!("literal coupling run failed: {e}")),
    }
    Ok(Diagnostic {
        name: "literal dq cross-coupling",
        lines,
    })
}
