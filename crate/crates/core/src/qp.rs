//! Iterative steppers for the non-negative quadratic program
//! `min 1/2 x^T G x + d^T x` over `x >= 0`, with `G` symmetric and
//! elementwise non-negative: the multiplicative fixed-ratio step, the
//! generalized diagonal-surrogate step, and an additive stepper with
//! pluggable descent directions and explicit step lengths.

use crate::error::{Error, Result};
use crate::linalg::{matvec, Vector};
use crate::rng::Rng;
use crate::weights::QpProblem;

/// Denominator entries below this trigger the degenerate-denominator policy.
pub(crate) const DENOM_FLOOR: f64 = 1e-300;

/// Consecutive small-decrease iterations required to declare convergence.
pub(crate) const CONVERGENCE_WINDOW: usize = 5;

/// Descent-direction choice for [`giqpm_step`] and [`giqpm_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStrategy {
    /// `-grad .* x ./ (G x)`: ratio-scaled gradient with the zero-entry
    /// policy of [`crate::nmf::pick_direction`] applied componentwise.
    LeeSeung,
    /// `-grad .* x`: gradient scaled by the iterate, no denominator.
    ScaledGradient,
    /// `-grad`: stalls when a zero coordinate has positive gradient.
    SteepestDescent,
    /// Step toward the projection of the diagonally preconditioned target
    /// `max(x - grad ./ diag(G), 0)`.
    DiagPrecond,
}

/// Options for [`giqpm_solve`].
#[derive(Debug, Clone)]
pub struct QpSolveOptions {
    pub max_iters: usize,
    /// Relative objective decrease below which an iteration counts toward
    /// the convergence window.
    pub rel_tol: f64,
    /// Lower bound of the feasibility step fraction, in (0, 1). Each
    /// iteration uses the deterministic midpoint `(tau + 1) / 2`.
    pub tau: f64,
    pub strategy: StepStrategy,
    pub seed: u64,
}

impl Default for QpSolveOptions {
    fn default() -> Self {
        QpSolveOptions {
            max_iters: 1000,
            rel_tol: 1e-9,
            tau: 0.5,
            // The projected diagonal direction shrinks toward binding
            // coordinates, so the feasibility cap cannot strangle the whole
            // step; the ratio-scaled direction can stop short of boundary
            // optima when a coordinate collapses to zero.
            strategy: StepStrategy::DiagPrecond,
            seed: 0,
        }
    }
}

impl QpSolveOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        let tol_ok = self.rel_tol.is_finite() && self.rel_tol > 0.0;
        if !tol_ok {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument("tau must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Terminal state of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Stalled,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::Converged => write!(f, "converged"),
            SolveStatus::MaxIters => write!(f, "max_iters"),
            SolveStatus::Stalled => write!(f, "stalled"),
        }
    }
}

/// Per-iteration diagnostics of [`giqpm_solve`].
#[derive(Debug, Clone)]
pub struct QpTraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub alpha: Option<f64>,
}

/// Result of [`giqpm_solve`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    pub trace: Vec<QpTraceRecord>,
    pub status: SolveStatus,
}

/// Result of one [`giqpm_step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub x: Vector,
    /// Step length taken; `None` when the direction was zero.
    pub alpha: Option<f64>,
    /// The iterate did not move: zero direction, or a binding constraint
    /// forced a zero step length.
    pub stalled: bool,
}

fn check_len(x: &Vector, qp: &QpProblem, what: &str) -> Result<()> {
    if x.len() != qp.order() {
        return Err(Error::Shape(format!(
            "{what} length {} does not match problem order {}",
            x.len(),
            qp.order()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum DegeneratePolicy {
    /// Zero numerator yields zero; nonzero numerator is a hard error.
    MultConvention,
    /// Any degenerate denominator is a hard error.
    Reject,
}

/// Shared arithmetic path of [`mult_step`] and [`b_step`]:
/// `x' = x - b .* (G x + d) ./ (G b)` entrywise.
fn diag_surrogate_step(
    x: &Vector,
    b: &Vector,
    qp: &QpProblem,
    policy: DegeneratePolicy,
) -> Result<Vector> {
    let gx = matvec(qp.g(), x)?;
    let gb = if b == x { gx.clone() } else { matvec(qp.g(), b)? };
    let d = qp.dvec();
    let mut out = Vector::zeros(x.len());
    for i in 0..x.len() {
        if gb[i] < DENOM_FLOOR {
            match policy {
                DegeneratePolicy::MultConvention => {
                    if x[i] * d[i] == 0.0 {
                        out[i] = 0.0;
                        continue;
                    }
                    return Err(Error::DegenerateDenominator {
                        index: i,
                        context: format!(
                            ": (G x)[{i}] = {} with numerator {}",
                            gb[i],
                            -x[i] * d[i]
                        ),
                    });
                }
                DegeneratePolicy::Reject => {
                    return Err(Error::DegenerateDenominator {
                        index: i,
                        context: format!(": (G b)[{i}] = {}", gb[i]),
                    });
                }
            }
        }
        let grad_i = gx[i] + d[i];
        // b[i] == 0 leaves the coordinate untouched; skipping the product
        // also avoids 0 * inf when the quotient overflows.
        out[i] = if b[i] == 0.0 { x[i] } else { x[i] - b[i] * (grad_i / gb[i]) };
    }
    if !out.is_finite() {
        return Err(Error::NonFinite { iter: 0 });
    }
    Ok(out)
}

/// Multiplicative step `x' = -x .* d ./ (G x)`.
///
/// Never increases the objective. Preserves non-negativity whenever `d` is
/// elementwise non-positive, and maps zero coordinates to exact zeros.
/// Denominator entries below the floor yield zero when the matching
/// numerator is zero and fail otherwise.
pub fn mult_step(x: &Vector, qp: &QpProblem) -> Result<Vector> {
    check_len(x, qp, "iterate")?;
    if !x.is_non_negative() {
        return Err(Error::InvalidArgument("iterate must be non-negative".into()));
    }
    diag_surrogate_step(x, x, qp, DegeneratePolicy::MultConvention)
}

/// Generalized surrogate step `x' = x - Diag(b) Diag(G b)^-1 (d + G x)`
/// for a non-negative surrogate vector `b` with `G b` strictly positive.
/// With `b = x` this is exactly [`mult_step`], on the same arithmetic path.
pub fn b_step(x: &Vector, b: &Vector, qp: &QpProblem) -> Result<Vector> {
    check_len(x, qp, "iterate")?;
    check_len(b, qp, "surrogate vector")?;
    if !b.is_non_negative() {
        return Err(Error::InvalidArgument(
            "surrogate vector must be non-negative".into(),
        ));
    }
    diag_surrogate_step(x, b, qp, DegeneratePolicy::Reject)
}

/// Componentwise ratio-scaled descent direction with the zero-entry policy.
/// Zero coordinates take the positive part of the negative gradient, so a
/// coordinate can move off zero when its gradient points inward; the plain
/// ratio would pin it at zero whenever the denominator is nonzero, which
/// leaves the additive method stuck on sparse iterates exactly like the
/// multiplicative one. Zero tests are exact.
pub(crate) fn lee_seung_entry(x: f64, grad: f64, denom: f64) -> f64 {
    if x == 0.0 {
        (-grad).max(0.0)
    } else if denom == 0.0 {
        -grad * x
    } else {
        -grad * x / denom
    }
}

/// Descent direction for the given strategy, or the zero vector when the
/// strategy is stationary at `x`.
pub fn direction(x: &Vector, qp: &QpProblem, strategy: StepStrategy) -> Result<Vector> {
    check_len(x, qp, "iterate")?;
    if !x.is_non_negative() {
        return Err(Error::InvalidArgument("iterate must be non-negative".into()));
    }
    let gx = matvec(qp.g(), x)?;
    let d = qp.dvec();
    let mut h = Vector::zeros(x.len());
    for i in 0..x.len() {
        let grad_i = gx[i] + d[i];
        h[i] = match strategy {
            StepStrategy::LeeSeung => lee_seung_entry(x[i], grad_i, gx[i]),
            StepStrategy::ScaledGradient => -grad_i * x[i],
            StepStrategy::SteepestDescent => -grad_i,
            StepStrategy::DiagPrecond => {
                let diag = qp.g()[(i, i)];
                let target = if diag > DENOM_FLOOR {
                    (x[i] - grad_i / diag).max(0.0)
                } else {
                    (x[i] - grad_i).max(0.0)
                };
                target - x[i]
            }
        };
    }
    debug_assert!(
        h.is_zero() || {
            let grad = qp.gradient(x)?;
            h.dot(&grad)? < 0.0
        },
        "nonzero direction must be a descent direction"
    );
    Ok(h)
}

/// Maximum feasible step length and the unconstrained optimal step length
/// along `h` from `x`.
///
/// `alpha_hat` is the largest step keeping `x + alpha * h` non-negative
/// (infinite when `h >= 0`); `alpha_star` minimizes the quadratic along the
/// ray and is infinite when the curvature `h^T G h` is not positive.
pub fn step_lengths(x: &Vector, h: &Vector, qp: &QpProblem) -> Result<(f64, f64)> {
    check_len(x, qp, "iterate")?;
    check_len(h, qp, "direction")?;
    if h.is_zero() {
        return Err(Error::InvalidArgument(
            "step lengths need a nonzero direction".into(),
        ));
    }
    let mut alpha_hat = f64::INFINITY;
    for i in 0..x.len() {
        if h[i] < 0.0 {
            alpha_hat = alpha_hat.min(-x[i] / h[i]);
        }
    }
    let gh = matvec(qp.g(), h)?;
    let curvature = h.dot(&gh)?;
    let gx = matvec(qp.g(), x)?;
    let mut slope = 0.0;
    for i in 0..x.len() {
        slope += (gx[i] + qp.dvec()[i]) * h[i];
    }
    let alpha_star = if curvature <= DENOM_FLOOR {
        f64::INFINITY
    } else {
        -slope / curvature
    };
    if alpha_hat.is_infinite() && alpha_star.is_infinite() && slope < 0.0 {
        return Err(Error::UnboundedDescent);
    }
    Ok((alpha_hat, alpha_star))
}

/// One additive step: choose a direction, limit it by feasibility and by
/// the exact quadratic line minimum, and move. `tau_k` must lie in (0, 1).
pub fn giqpm_step(
    x: &Vector,
    qp: &QpProblem,
    tau_k: f64,
    strategy: StepStrategy,
) -> Result<StepOutcome> {
    if !(tau_k > 0.0 && tau_k < 1.0) {
        return Err(Error::InvalidArgument("tau_k must lie in (0, 1)".into()));
    }
    let h = direction(x, qp, strategy)?;
    if h.is_zero() {
        return Ok(StepOutcome { x: x.clone(), alpha: None, stalled: true });
    }
    let (alpha_hat, alpha_star) = step_lengths(x, &h, qp)?;
    // Ties go to the exact line minimum.
    let capped = tau_k * alpha_hat;
    let alpha = if capped < alpha_star { capped } else { alpha_star };
    let mut out = x.clone();
    for i in 0..out.len() {
        let v = out[i] + alpha * h[i];
        out[i] = if v < 0.0 { 0.0 } else { v };
    }
    if !out.is_finite() {
        return Err(Error::NonFinite { iter: 0 });
    }
    Ok(StepOutcome { stalled: alpha == 0.0, x: out, alpha: Some(alpha) })
}

/// Incremental convergence test: counts consecutive iterations whose
/// relative objective decrease stays below tolerance.
#[derive(Debug, Clone)]
pub(crate) struct ConvergenceWindow {
    prev: Option<f64>,
    run: usize,
    rel_tol: f64,
}

impl ConvergenceWindow {
    pub(crate) fn new(rel_tol: f64) -> Self {
        ConvergenceWindow { prev: None, run: 0, rel_tol }
    }

    /// Record an objective value; true once the window is satisfied.
    pub(crate) fn push(&mut self, objective: f64) -> bool {
        if let Some(prev) = self.prev {
            let decrease = (prev - objective).abs();
            if decrease < self.rel_tol * (1.0 + prev.abs()) {
                self.run += 1;
            } else {
                self.run = 0;
            }
        }
        self.prev = Some(objective);
        self.run >= CONVERGENCE_WINDOW
    }
}

/// Iterate [`giqpm_step`] from a strictly positive random start until the
/// objective flattens, the direction stalls, or the budget runs out.
pub fn giqpm_solve(qp: &QpProblem, opts: &QpSolveOptions) -> Result<QpSolution> {
    opts.validate()?;
    let mut rng = Rng::new(opts.seed);
    let mut x = Vector::zeros(qp.order());
    for v in x.data_mut() {
        *v = rng.next_open01();
    }
    let tau_k = (opts.tau + 1.0) / 2.0;

    let mut trace = vec![QpTraceRecord { iter: 0, objective: qp.objective(&x)?, alpha: None }];
    let mut window = ConvergenceWindow::new(opts.rel_tol);
    window.push(trace[0].objective);

    let mut status = SolveStatus::MaxIters;
    for k in 1..=opts.max_iters {
        let outcome = giqpm_step(&x, qp, tau_k, opts.strategy)?;
        x = outcome.x;
        let objective = qp.objective(&x)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite { iter: k });
        }
        trace.push(QpTraceRecord { iter: k, objective, alpha: outcome.alpha });
        if outcome.stalled {
            status = SolveStatus::Stalled;
            break;
        }
        if window.push(objective) {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(QpSolution { x, trace, status })
}
