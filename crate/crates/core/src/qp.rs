//! Dense convex QP solver.
//!
//! ```text
//!     minimize     1/2 y' P y + q' y
//!     subject to   A y <= b
//!                  E y  = d
//! ```
//!
//! The solver is a dual active-set method in the style of Goldfarb and
//! Idnani: it starts from the equality-constrained minimiser, repeatedly picks
//! the most violated inequality and moves along the primal-dual path that
//! makes it active, dropping working constraints whose multipliers reach zero.
//! Every working-set change solves the equality-augmented KKT system directly,
//! which is cheap at the sizes this crate needs (a few dozen variables).
//!
//! A Tikhonov term `eps = 1e-10 * (1 + trace(P) / n)` is always added to the
//! Hessian so that Gram-structured (rank-deficient) problems have a unique
//! minimiser. Warm starting seeds the working set with the previous solve's
//! active set; the result does not depend on it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hess: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub ineq_mat: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_mat: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        hess: DMatrix<f64>,
        lin: DVector<f64>,
        ineq_mat: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
        eq_mat: DMatrix<f64>,
        eq_rhs: DVector<f64>,
    ) -> Result<Self> {
        let qp = Self {
            hess,
            lin,
            ineq_mat,
            ineq_rhs,
            eq_mat,
            eq_rhs,
        };
        qp.validate()?;
        Ok(qp)
    }

    /// Problem with no constraints.
    pub fn unconstrained(hess: DMatrix<f64>, lin: DVector<f64>) -> Result<Self> {
        let n = lin.len();
        Self::new(
            hess,
            lin,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lin.len();
        let check = |context, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected,
                    got,
                })
            }
        };
        check("hessian rows", n, self.hess.nrows())?;
        check("hessian cols", n, self.hess.ncols())?;
        check("inequality matrix cols", n, self.ineq_mat.ncols())?;
        check("inequality rhs", self.ineq_mat.nrows(), self.ineq_rhs.len())?;
        check("equality matrix cols", n, self.eq_mat.ncols())?;
        check("equality rhs", self.eq_mat.nrows(), self.eq_rhs.len())?;
        let asym = (&self.hess - self.hess.transpose()).amax();
        if asym > 1e-12 * self.hess.amax().max(1.0) {
            return Err(Error::InvalidParameter {
                name: "hess",
                reason: format!("not symmetric (max asymmetry {asym:e})"),
            });
        }
        Ok(())
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.hess * y)) + self.lin.dot(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    /// Terminated with a working set that satisfies every constraint, but the
    /// recomputed KKT residual exceeds the tolerance.
    Inaccurate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub y: DVector<f64>,
    pub ineq_mult: DVector<f64>,
    pub eq_mult: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Inequalities held active at termination.
    pub active_set: Vec<usize>,
    /// Most violated inequality when the problem was found infeasible.
    pub blocking: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            warm_start: true,
        }
    }
}

/// KKT residual of `(y, ineq_mult, eq_mult)`: the maximum of the stationarity
/// norm, the primal violations, the negative-multiplier magnitude and the
/// complementarity magnitude. Uses the Hessian as given (no regularisation).
pub fn kkt_residual_parts(
    qp: &QpProblem,
    y: &DVector<f64>,
    ineq_mult: &DVector<f64>,
    eq_mult: &DVector<f64>,
) -> f64 {
    let stationarity =
        &qp.hess * y + &qp.lin + qp.ineq_mat.tr_mul(ineq_mult) + qp.eq_mat.tr_mul(eq_mult);
    let slack = &qp.ineq_mat * y - &qp.ineq_rhs;
    let eq_viol = &qp.eq_mat * y - &qp.eq_rhs;

    let mut res = stationarity.norm();
    res = res.max(slack.iter().fold(0.0, |m, &s| m.max(s)));
    res = res.max(eq_viol.amax());
    res = res.max(ineq_mult.iter().fold(0.0, |m, &l| m.max(-l)));
    let comp = slack
        .iter()
        .zip(ineq_mult.iter())
        .fold(0.0f64, |m, (&s, &l)| m.max((s * l).abs()));
    res.max(comp)
}

pub fn kkt_residual(qp: &QpProblem, sol: &QpSolution) -> f64 {
    kkt_residual_parts(qp, &sol.y, &sol.ineq_mult, &sol.eq_mult)
}

/// Solve with a fresh (cold-started) solver.
pub fn solve(qp: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    QpSolver::new(QpSettings {
        tol,
        max_iter,
        warm_start: false,
    })
    .solve(qp)
}

/// Reusable solver carrying the warm-start working set between solves.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    warm: Option<WarmStart>,
}

#[derive(Debug, Clone)]
struct WarmStart {
    shape: (usize, usize, usize),
    active: Vec<usize>,
}

/// Equality-constrained subproblem data for the current working set.
struct Kkt<'a> {
    /// Regularised Hessian used for factorisation.
    hess: &'a DMatrix<f64>,
    qp: &'a QpProblem,
}

impl Kkt<'_> {
    /// Solve `[H N'; N 0] [z; r] = [top; bottom]` where `N` stacks the
    /// equalities and the working inequalities.
    fn solve(
        &self,
        working: &[usize],
        top: &DVector<f64>,
        bottom: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.qp.dim();
        let me = self.qp.n_eq();
        let m = me + working.len();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(self.hess);
        for (row, c) in (0..me)
            .map(|i| self.qp.eq_mat.row(i))
            .chain(working.iter().map(|&i| self.qp.ineq_mat.row(i)))
            .enumerate()
        {
            k.view_mut((n + row, 0), (1, n)).copy_from(&c);
            k.view_mut((0, n + row), (n, 1)).copy_from(&c.transpose());
        }
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(top);
        rhs.rows_mut(n, m).copy_from(bottom);

        let mut exact = k.clone();
        exact.view_mut((0, 0), (n, n)).copy_from(&self.qp.hess);
        let lu = k.full_piv_lu();
        let u = lu.u();
        let diag = u.diagonal();
        let max_pivot = diag.amax();
        let min_pivot = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        if !(max_pivot > 0.0) || min_pivot <= 1e-14 * max_pivot {
            return None;
        }
        let mut sol = lu.solve(&rhs)?;
        // iterative refinement removes the regularisation bias
        for _ in 0..3 {
            let res = &rhs - &exact * &sol;
            sol += lu.solve(&res)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
    }

    fn working_rhs(&self, working: &[usize]) -> DVector<f64> {
        let me = self.qp.n_eq();
        let mut b = DVector::zeros(me + working.len());
        b.rows_mut(0, me).copy_from(&self.qp.eq_rhs);
        for (k, &i) in working.iter().enumerate() {
            b[me + k] = self.qp.ineq_rhs[i];
        }
        b
    }

    /// Minimiser over the working set with its multipliers (equalities first).
    fn eqp(&self, working: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let top = -&self.qp.lin;
        self.solve(working, &top, &self.working_rhs(working))
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self {
            settings,
            warm: None,
        }
    }

    /// Forget the warm-start working set.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, qp: &QpProblem) -> Result<QpSolution> {
        qp.validate()?;
        let shape = (qp.dim(), qp.n_eq(), qp.n_ineq());
        let seed = match &self.warm {
            Some(w) if self.settings.warm_start && w.shape == shape => w.active.clone(),
            _ => Vec::new(),
        };
        let sol = self.solve_from(qp, seed)?;
        if sol.status == QpStatus::Optimal {
            self.warm = Some(WarmStart {
                shape,
                active: sol.active_set.clone(),
            });
        }
        Ok(sol)
    }

    fn solve_from(&self, qp: &QpProblem, mut working: Vec<usize>) -> Result<QpSolution> {
        let n = qp.dim();
        let me = qp.n_eq();
        let mi = qp.n_ineq();
        let eps = 1e-10 * (1.0 + qp.hess.trace() / n.max(1) as f64);
        let mut hess = (&qp.hess + qp.hess.transpose()) * 0.5;
        for i in 0..n {
            hess[(i, i)] += eps;
        }
        let kkt = Kkt { hess: &hess, qp };

        // Dual-feasible start: minimiser over the seed working set with
        // non-negative multipliers, dropping constraints until that holds.
        let (mut y, mut lambda) = loop {
            match kkt.eqp(&working) {
                Some((y, lambda)) => {
                    let worst = (0..working.len())
                        .filter(|&k| lambda[me + k] < 0.0)
                        .min_by(|&a, &b| lambda[me + a].total_cmp(&lambda[me + b]));
                    match worst {
                        Some(k) => {
                            working.remove(k);
                        }
                        None => break (y, lambda),
                    }
                }
                None if !working.is_empty() => {
                    working.pop();
                }
                None => {
                    return Err(Error::SingularKkt(
                        "equality constraints are linearly dependent".into(),
                    ))
                }
            }
        };

        let row_norms: Vec<f64> = (0..mi).map(|i| qp.ineq_mat.row(i).norm()).collect();
        let mut iterations = 0;
        let mut status = None;
        let mut blocking = None;

        'outer: while iterations < self.settings.max_iter {
            // most violated inequality, scaled by row norm
            let slack = &qp.ineq_mat * &y - &qp.ineq_rhs;
            let y_norm = y.amax();
            let mut pick: Option<(usize, f64)> = None;
            for i in 0..mi {
                if working.contains(&i) || row_norms[i] == 0.0 && slack[i] <= 0.0 {
                    continue;
                }
                let thresh = 1e-13 * (1.0 + qp.ineq_rhs[i].abs() + row_norms[i] * y_norm);
                if slack[i] > thresh {
                    let score = slack[i] / row_norms[i].max(1e-300);
                    if pick.is_none_or(|(_, s)| score > s) {
                        pick = Some((i, score));
                    }
                }
            }
            let Some((p, _)) = pick else {
                break;
            };
            iterations += 1;

            let a_p = qp.ineq_mat.row(p).transpose();
            let mut u_p = 0.0;
            let zero_bottom = |len: usize| DVector::zeros(len);
            let mut inner = 0;
            loop {
                inner += 1;
                if inner > mi + 2 {
                    status = Some(QpStatus::MaxIter);
                    break 'outer;
                }
                let m = me + working.len();
                let Some((z, r)) = kkt.solve(&working, &(-&a_p), &zero_bottom(m)) else {
                    // cannot happen for independent working rows; treat the
                    // candidate as dependent and stop
                    status = Some(QpStatus::Infeasible);
                    blocking = Some(p);
                    break 'outer;
                };
                let s_p = a_p.dot(&y) - qp.ineq_rhs[p];
                let az = a_p.dot(&z);
                let t_full = if az < -1e-14 * row_norms[p] * row_norms[p] {
                    (-s_p / az).max(0.0)
                } else {
                    f64::INFINITY
                };
                let r_scale = r.amax().max(1.0);
                let mut t_part = f64::INFINITY;
                let mut drop = None;
                for k in 0..working.len() {
                    let rk = r[me + k];
                    if rk < -1e-14 * r_scale {
                        let t = (lambda[me + k] / -rk).max(0.0);
                        if t < t_part {
                            t_part = t;
                            drop = Some(k);
                        }
                    }
                }
                if t_full.is_infinite() && t_part.is_infinite() {
                    status = Some(QpStatus::Infeasible);
                    blocking = Some(p);
                    break 'outer;
                }
                if t_part < t_full {
                    y += &z * t_part;
                    lambda += &r * t_part;
                    u_p += t_part;
                    let k = drop.expect("partial step has a blocking constraint");
                    working.remove(k);
                    lambda = lambda.remove_row(me + k);
                    continue;
                }
                y += &z * t_full;
                lambda += &r * t_full;
                u_p += t_full;
                working.push(p);
                lambda = lambda.insert_row(me + working.len() - 1, u_p);
                break;
            }

            // Re-solve on the new working set to shed accumulated round-off.
            if let Some((y_new, l_new)) = kkt.eqp(&working) {
                if (0..working.len()).all(|k| l_new[me + k] >= -1e-10 * l_new.amax().max(1.0)) {
                    y = y_new;
                    lambda = l_new;
                }
            }
        }

        let mut ineq_mult = DVector::zeros(mi);
        for (k, &i) in working.iter().enumerate() {
            ineq_mult[i] = lambda[me + k].max(0.0);
        }
        let eq_mult = lambda.rows(0, me).into_owned();
        let kkt_res = kkt_residual_parts(qp, &y, &ineq_mult, &eq_mult);
        let status = status.unwrap_or(if iterations >= self.settings.max_iter {
            QpStatus::MaxIter
        } else if kkt_res <= self.settings.tol {
            QpStatus::Optimal
        } else {
            QpStatus::Inaccurate
        });
        let mut active_set = working;
        active_set.sort_unstable();
        Ok(QpSolution {
            y,
            ineq_mult,
            eq_mult,
            status,
            kkt_residual: kkt_res,
            iterations,
            active_set,
            blocking,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_projection() {
        let q0 = DVector::from_vec(vec![0.3, -1.2, 4.0]);
        // min |y - q0|^2  <=>  1/2 y'(2I)y - 2 q0'y
        let qp = QpProblem::unconstrained(DMatrix::identity(3, 3) * 2.0, -&q0 * 2.0).unwrap();
        let sol = solve(&qp, 1e-10, 50).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&sol.y - &q0).amax() < 1e-9);
    }

    #[test]
    fn projection_onto_line() {
        let qp = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let sol = solve(&qp, 1e-10, 50).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.y[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(sol.y[1], 1.0, epsilon = 1e-9);

        // exact solution: y = (1,1), multiplier -2
        let exact = kkt_residual_parts(
            &qp,
            &DVector::from_vec(vec![1.0, 1.0]),
            &DVector::zeros(0),
            &DVector::from_element(1, -2.0),
        );
        assert!(exact <= 1e-12);
        // perturbed point is detected
        let perturbed = kkt_residual_parts(
            &qp,
            &DVector::from_vec(vec![1.1, 1.1]),
            &DVector::zeros(0),
            &DVector::from_element(1, -2.0),
        );
        assert!(perturbed >= 0.2);
    }

    #[test]
    fn zero_problem_residual() {
        let qp = QpProblem::unconstrained(DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(
            kkt_residual_parts(
                &qp,
                &DVector::zeros(2),
                &DVector::zeros(0),
                &DVector::zeros(0)
            ),
            0.0
        );
    }

    #[test]
    fn active_inequality() {
        // min 1/2 x^2 + 1/2 y^2 + x  s.t. x + 2y >= 1
        let qp = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, -2.0]),
            DVector::from_element(1, -1.0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&qp, 1e-10, 50).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.y[0], -0.6, epsilon = 1e-9);
        assert_relative_eq!(sol.y[1], 0.8, epsilon = 1e-9);
        assert_eq!(sol.active_set, vec![0]);
        assert!(sol.ineq_mult[0] > 0.0);
    }

    #[test]
    fn infeasible_is_flagged() {
        // y <= -1 and -y <= -1
        let qp = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&qp, 1e-10, 50).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!(sol.blocking.is_some());
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let bad = QpProblem::unconstrained(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn dependent_equalities_rejected() {
        let qp = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        assert!(matches!(solve(&qp, 1e-8, 10), Err(Error::SingularKkt(_))));
    }

    #[test]
    fn singular_hessian_is_regularised() {
        // rank-one Gram hessian, minimiser set is a line; the regularised
        // problem picks the minimum-norm point on it
        let j = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let hess = j.transpose() * &j * 2.0;
        let qp = QpProblem::new(
            hess,
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let sol = solve(&qp, 1e-8, 10).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.y[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.y[1], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn warm_start_reuses_active_set_and_agrees_with_cold() {
        let qp = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, 1.0, 0.0]),
            DVector::from_vec(vec![-1.0, 5.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let mut solver = QpSolver::default();
        let first = solver.solve(&qp).unwrap();
        let second = solver.solve(&qp).unwrap();
        assert_eq!(second.iterations, 0);
        assert!((&first.y - &second.y).amax() < 1e-12);
        let cold = solve(&qp, 1e-8, 100).unwrap();
        assert!((&cold.y - &second.y).amax() < 1e-12);
    }
}
