//! Safe gradient flow for nonlinear programs
//!
//! ```text
//!     minimize   C(w)   subject to   G(w) <= 0,  H(w) = 0
//! ```
//!
//! The flow is `dw/dt = -grad C - J_G' mu - J_H' nu`, where the multipliers
//! are the minimum-norm correction keeping the feasible set invariant:
//!
//! ```text
//!   (mu, nu) = argmin || J_G' mu + J_H' nu ||^2
//!   s.t.  -J_G J_G' mu - J_G J_H' nu <= J_G grad C - alpha(G)
//!         -J_H J_G' mu - J_H J_H' nu  = J_H grad C - alpha_eq(H)
//! ```
//!
//! The constraints are the barrier conditions `d/dt G <= -alpha(G)` and
//! `d/dt H = -alpha_eq(H)` written in terms of the multipliers. No sign
//! constraint is placed on `mu`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus};

/// Cost, constraint values and Jacobians at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpEval {
    pub cost: f64,
    pub grad: DVector<f64>,
    pub ineq: DVector<f64>,
    pub ineq_jac: DMatrix<f64>,
    pub eq: DVector<f64>,
    pub eq_jac: DMatrix<f64>,
}

impl NlpEval {
    fn check(&self, dim: usize) -> Result<()> {
        let shape = |context, expected: usize, got: usize| {
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
        shape("cost gradient", dim, self.grad.len())?;
        shape(
            "inequality jacobian rows",
            self.ineq.len(),
            self.ineq_jac.nrows(),
        )?;
        shape("inequality jacobian cols", dim, self.ineq_jac.ncols())?;
        shape("equality jacobian rows", self.eq.len(), self.eq_jac.nrows())?;
        shape("equality jacobian cols", dim, self.eq_jac.ncols())?;
        let finite = self.cost.is_finite()
            && self.grad.iter().all(|v| v.is_finite())
            && self.ineq.iter().all(|v| v.is_finite())
            && self.eq.iter().all(|v| v.is_finite())
            && self.ineq_jac.iter().all(|v| v.is_finite())
            && self.eq_jac.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("NLP evaluation".into()));
        }
        Ok(())
    }
}

/// A smooth NLP with analytic first derivatives.
pub trait NlpFunctions {
    fn dim(&self) -> usize;
    fn eval(&self, w: &DVector<f64>) -> Result<NlpEval>;
}

/// Rate function applied to constraint values in the barrier condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassKappa {
    /// `z -> gain * exp(rate * z)`; positive at zero.
    Exponential { gain: f64, rate: f64 },
    /// `z -> gain * (exp(rate * z) - 1)`; vanishes at zero.
    ShiftedExponential { gain: f64, rate: f64 },
    /// `z -> gain * z`.
    Linear { gain: f64 },
}

impl ClassKappa {
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            ClassKappa::Exponential { gain, rate } => gain * (rate * z).exp(),
            ClassKappa::ShiftedExponential { gain, rate } => gain * (rate * z).exp_m1(),
            ClassKappa::Linear { gain } => gain * z,
        }
    }

    pub fn vanishes_at_zero(&self) -> bool {
        !matches!(self, ClassKappa::Exponential { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let (gain, rate) = match *self {
            ClassKappa::Exponential { gain, rate }
            | ClassKappa::ShiftedExponential { gain, rate } => (gain, rate),
            ClassKappa::Linear { gain } => (gain, 1.0),
        };
        if !(gain > 0.0 && rate > 0.0 && gain.is_finite() && rate.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("gain and rate must be positive, got {self:?}"),
            });
        }
        Ok(())
    }
}

/// Rate functions for inequalities and equalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassKappaSpec {
    pub ineq: ClassKappa,
    pub eq: ClassKappa,
}

impl ClassKappaSpec {
    /// Shifted exponential (gain 20, rate 10) on inequalities, linear gain 20
    /// on equalities. Both vanish at zero, so KKT points are equilibria.
    pub fn vanishing(gain: f64, rate: f64) -> Self {
        Self {
            ineq: ClassKappa::ShiftedExponential { gain, rate },
            eq: ClassKappa::Linear { gain },
        }
    }

    /// `gain * exp(rate * z)` on inequalities exactly as written, linear on
    /// equalities. Infeasible whenever an inequality gradient vanishes.
    pub fn printed_exponential(gain: f64, rate: f64) -> Self {
        Self {
            ineq: ClassKappa::Exponential { gain, rate },
            eq: ClassKappa::Linear { gain },
        }
    }

    /// The printed exponential applied to both inequalities and equalities.
    pub fn exponential_everywhere(gain: f64, rate: f64) -> Self {
        Self {
            ineq: ClassKappa::Exponential { gain, rate },
            eq: ClassKappa::Exponential { gain, rate },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ineq.validate()?;
        self.eq.validate()
    }
}

impl Default for ClassKappaSpec {
    fn default() -> Self {
        Self::vanishing(20.0, 10.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub direction: DVector<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    pub w: DVector<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub direction_norm: f64,
}

/// Owns the QP workspace; one engine per thread.
#[derive(Debug, Clone)]
pub struct SgfEngine {
    qp: QpSolver,
    /// Relative QP tolerance, scaled by the magnitude of each QP's data.
    pub qp_tol: f64,
}

impl Default for SgfEngine {
    fn default() -> Self {
        Self::new(1e-9, true)
    }
}

impl SgfEngine {
    pub fn new(qp_tol: f64, warm_start: bool) -> Self {
        Self {
            qp: QpSolver::new(QpSettings {
                tol: qp_tol,
                max_iter: 500,
                warm_start,
            }),
            qp_tol,
        }
    }

    pub fn reset_warm_start(&mut self) {
        self.qp.reset();
    }

    /// Build the minimum-alteration QP in the multipliers `(mu, nu)`.
    pub fn multiplier_qp(ev: &NlpEval, kappa: &ClassKappaSpec) -> Result<QpProblem> {
        let ones = DVector::from_element(ev.ineq.len() + ev.eq.len(), 1.0);
        Self::scaled_multiplier_qp(ev, kappa, &ones)
    }

    /// Same QP in `y = D^-1 (mu, nu)`, i.e. with the rows of `J` and the rates scaled by `D`.
    fn scaled_multiplier_qp(
        ev: &NlpEval,
        kappa: &ClassKappaSpec,
        d: &DVector<f64>,
    ) -> Result<QpProblem> {
        let l = ev.ineq.len();
        let k = ev.eq.len();
        let n = ev.grad.len();
        let mut jac = DMatrix::zeros(l + k, n);
        jac.rows_mut(0, l).copy_from(&ev.ineq_jac);
        jac.rows_mut(l, k).copy_from(&ev.eq_jac);
        for (i, mut row) in jac.row_iter_mut().enumerate() {
            row *= d[i];
        }
        let gram = &jac * jac.transpose();
        let j_grad = &jac * &ev.grad;

        let ineq_rhs = DVector::from_fn(l, |i, _| j_grad[i] - d[i] * kappa.ineq.apply(ev.ineq[i]));
        let eq_rhs = DVector::from_fn(k, |i, _| {
            j_grad[l + i] - d[l + i] * kappa.eq.apply(ev.eq[i])
        });
        if ineq_rhs.iter().chain(eq_rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "barrier rate (constraint value too large for alpha)".into(),
            ));
        }
        QpProblem::new(
            &gram * 2.0,
            DVector::zeros(l + k),
            -gram.rows(0, l),
            ineq_rhs,
            -gram.rows(l, k),
            eq_rhs,
        )
    }

    /// Flow direction at `w`.
    pub fn direction<N: NlpFunctions + ?Sized>(
        &mut self,
        nlp: &N,
        w: &DVector<f64>,
        kappa: &ClassKappaSpec,
    ) -> Result<FlowResult> {
        let ev = nlp.eval(w)?;
        ev.check(nlp.dim())?;
        self.direction_from_eval(&ev, kappa)
    }

    pub fn direction_from_eval(
        &mut self,
        ev: &NlpEval,
        kappa: &ClassKappaSpec,
    ) -> Result<FlowResult> {
        let l = ev.ineq.len();
        let k = ev.eq.len();
        if l + k == 0 {
            return Ok(FlowResult {
                direction: -&ev.grad,
                mu: DVector::zeros(0),
                nu: DVector::zeros(0),
                qp_status: QpStatus::Optimal,
                qp_iterations: 0,
                cost: ev.cost,
            });
        }
        // Jacobi equilibration: unit-norm rows of J keep the Gram system well scaled
        let d = DVector::from_iterator(
            l + k,
            ev.ineq_jac.row_iter().chain(ev.eq_jac.row_iter()).map(|r| {
                let nrm = r.norm();
                if nrm > 1e-12 {
                    1.0 / nrm
                } else {
                    1.0
                }
            }),
        );
        let qp = Self::scaled_multiplier_qp(ev, kappa, &d)?;
        let scale =
            1.0 + qp.hess.amax() + qp.ineq_rhs.amax().max(qp.eq_rhs.amax()) + ev.grad.amax();
        self.qp.settings.tol = self.qp_tol * scale;
        let sol = self.qp.solve(&qp)?;
        if sol.status == QpStatus::Infeasible {
            let p = sol.blocking.unwrap_or(0);
            return Err(Error::QpInfeasible(format!(
                "barrier condition on inequality {p} cannot be met \
                 (G = {:.6e}, |grad G| = {:.3e}, alpha = {:.3e})",
                ev.ineq.get(p).copied().unwrap_or(f64::NAN),
                if p < l {
                    ev.ineq_jac.row(p).norm()
                } else {
                    f64::NAN
                },
                ev.ineq.get(p).map_or(f64::NAN, |&g| kappa.ineq.apply(g)),
            )));
        }
        let y = sol.y.component_mul(&d);
        let mu = y.rows(0, l).into_owned();
        let nu = y.rows(l, k).into_owned();
        let direction = -&ev.grad - ev.ineq_jac.tr_mul(&mu) - ev.eq_jac.tr_mul(&nu);
        Ok(FlowResult {
            direction,
            mu,
            nu,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            cost: ev.cost,
        })
    }

    /// One explicit Euler step of the flow: `w + xi * direction`.
    pub fn step<N: NlpFunctions + ?Sized>(
        &mut self,
        nlp: &N,
        w: &DVector<f64>,
        kappa: &ClassKappaSpec,
        xi: f64,
    ) -> Result<(DVector<f64>, FlowResult)> {
        if !(xi > 0.0) {
            return Err(Error::InvalidParameter {
                name: "xi",
                reason: format!("step size must be positive, got {xi}"),
            });
        }
        let flow = self.direction(nlp, w, kappa)?;
        Ok((w + &flow.direction * xi, flow))
    }

    /// Step with the step size halved until the cost decreases and every
    /// inequality stays satisfied. Returns the accepted step size.
    pub fn step_backtracking<N: NlpFunctions + ?Sized>(
        &mut self,
        nlp: &N,
        w: &DVector<f64>,
        kappa: &ClassKappaSpec,
        xi: f64,
        max_halvings: usize,
    ) -> Result<(DVector<f64>, f64)> {
        let flow = self.direction(nlp, w, kappa)?;
        let mut step = xi;
        for _ in 0..=max_halvings {
            let candidate = w + &flow.direction * step;
            let ev = nlp.eval(&candidate)?;
            if ev.cost < flow.cost && ev.ineq.iter().all(|&g| g <= 0.0) {
                return Ok((candidate, step));
            }
            step *= 0.5;
        }
        Ok((w.clone(), 0.0))
    }

    /// Iterate the flow until the direction norm drops below `tol`.
    pub fn flow_to_convergence<N: NlpFunctions + ?Sized>(
        &mut self,
        nlp: &N,
        w0: &DVector<f64>,
        kappa: &ClassKappaSpec,
        xi: f64,
        tol: f64,
        max_iters: usize,
    ) -> Result<FlowOutcome> {
        if w0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial point".into()));
        }
        let mut w = w0.clone();
        let mut iterations = 0;
        loop {
            let flow = self.direction(nlp, &w, kappa)?;
            let norm = flow.direction.norm();
            let converged = norm <= tol;
            if converged || iterations >= max_iters {
                let kkt = nlp_kkt_residual(nlp, &w, &flow.mu, &flow.nu)?;
                return Ok(FlowOutcome {
                    w,
                    mu: flow.mu,
                    nu: flow.nu,
                    kkt_residual: kkt,
                    iterations,
                    converged,
                    direction_norm: norm,
                });
            }
            w += &flow.direction * xi;
            iterations += 1;
        }
    }
}

/// KKT residual of an NLP point: the maximum of the stationarity norm, the
/// primal violations, the negative-multiplier magnitude and the
/// complementarity magnitude.
pub fn nlp_kkt_residual<N: NlpFunctions + ?Sized>(
    nlp: &N,
    w: &DVector<f64>,
    mu: &DVector<f64>,
    nu: &DVector<f64>,
) -> Result<f64> {
    let ev = nlp.eval(w)?;
    ev.check(nlp.dim())?;
    if mu.len() != ev.ineq.len() {
        return Err(Error::Dimension {
            context: "inequality multipliers",
            expected: ev.ineq.len(),
            got: mu.len(),
        });
    }
    if nu.len() != ev.eq.len() {
        return Err(Error::Dimension {
            context: "equality multipliers",
            expected: ev.eq.len(),
            got: nu.len(),
        });
    }
    let stationarity = &ev.grad + ev.ineq_jac.tr_mul(mu) + ev.eq_jac.tr_mul(nu);
    let mut res = stationarity.norm();
    res = res.max(ev.ineq.iter().fold(0.0, |m, &g| m.max(g)));
    res = res.max(ev.eq.amax());
    res = res.max(mu.iter().fold(0.0, |m, &v| m.max(-v)));
    let comp = mu
        .iter()
        .zip(ev.ineq.iter())
        .fold(0.0f64, |m, (&l, &g)| m.max((l * g).abs()));
    Ok(res.max(comp))
}
