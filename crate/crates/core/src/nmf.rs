//! Alternating factorization drivers.
//!
//! [`murnmf`] rescales each factor entry by a ratio of non-negative terms
//! (with numerators clipped away from zero), which preserves non-negativity
//! but locks zero entries at zero. [`aurnmf`] takes explicit additive steps
//! along a ratio-scaled descent direction with a feasibility-limited,
//! optionally line-optimal step length; it can move entries off zero and
//! tolerates sparse starting iterates.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::qp::{lee_seung_entry, SolveStatus, CONVERGENCE_WINDOW, DENOM_FLOOR};
use crate::rng::Rng;
use crate::weights::{
    expand_scalar_weights, objective, quad_operator_l, quad_operator_r, weighted_data,
    weighted_l_gram, weighted_r_gram, ScalarWeights, WeightConfig,
};

/// Current factor iterates: `l` is `rows(Y) x d`, `r` is `d x cols(Y)`,
/// both elementwise non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    l: Matrix,
    r: Matrix,
}

impl FactorPair {
    pub fn new(l: Matrix, r: Matrix) -> Result<Self> {
        if l.cols() != r.rows() {
            return Err(Error::Shape(format!(
                "factor ranks disagree: L is {}x{}, R is {}x{}",
                l.rows(),
                l.cols(),
                r.rows(),
                r.cols()
            )));
        }
        if !l.is_finite() || !r.is_finite() {
            return Err(Error::InvalidArgument("factors must be finite".into()));
        }
        if !l.is_non_negative() || !r.is_non_negative() {
            return Err(Error::InvalidArgument("factors must be non-negative".into()));
        }
        Ok(FactorPair { l, r })
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn rank(&self) -> usize {
        self.l.cols()
    }

    pub fn product(&self) -> Matrix {
        self.l.matmul(&self.r).expect("factor pair dimensions are validated")
    }

    pub fn into_parts(self) -> (Matrix, Matrix) {
        (self.l, self.r)
    }
}

/// Which update rule a driver runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfMethod {
    Mur,
    Aur,
}

impl std::fmt::Display for NmfMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NmfMethod::Mur => write!(f, "mur"),
            NmfMethod::Aur => write!(f, "aur"),
        }
    }
}

/// Additive step-length mode: exact line minimum, or the naive unit step
/// capped by feasibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    Optimal,
    Full,
}

/// Starting iterates: seeded random factors, or caller-supplied ones.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    UniformRandom { sparsity: f64 },
    Given(FactorPair),
}

/// Regularization input: the six-scalar shortcut or a full weight family.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Weighting {
    Scalar(ScalarWeights),
    Full(WeightConfig),
}

/// Options shared by [`murnmf`] and [`aurnmf`].
#[derive(Debug, Clone)]
pub struct NmfOptions {
    pub rank: usize,
    pub weighting: Weighting,
    pub method: NmfMethod,
    /// Numerator clip distance for the multiplicative update. `None` scales
    /// with the data as `1e-7 * mean(|Y|)`.
    pub epsilon: Option<f64>,
    /// Feasibility step fraction lower bound for the additive update; each
    /// iteration uses the deterministic midpoint `(tau + 1) / 2`.
    pub tau: f64,
    pub step_mode: StepMode,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub init: InitStrategy,
    /// Include the off-diagonal penalty in the additive step's curvature
    /// term, making it the exact second-order term of the objective being
    /// minimized. Disabling this reproduces a simplified curvature without
    /// the orthogonality contribution; monotonicity is then no longer
    /// guaranteed when that penalty is active.
    pub curvature_includes_ortho: bool,
}

impl NmfOptions {
    pub fn new(rank: usize, method: NmfMethod) -> Self {
        NmfOptions {
            rank,
            weighting: Weighting::Scalar(ScalarWeights::default()),
            method,
            epsilon: None,
            tau: 0.5,
            step_mode: StepMode::Optimal,
            max_iters: 5000,
            rel_tol: 1e-9,
            seed: 0,
            init: InitStrategy::UniformRandom { sparsity: 0.0 },
            curvature_includes_ortho: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
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
        if let Some(eps) = self.epsilon {
            let eps_ok = eps.is_finite() && eps > 0.0;
            if !eps_ok {
                return Err(Error::InvalidArgument("epsilon must be positive".into()));
            }
        }
        if let InitStrategy::UniformRandom { sparsity } = self.init {
            if !(0.0..=1.0).contains(&sparsity) {
                return Err(Error::InvalidArgument("sparsity must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics. Step lengths are present for the additive
/// method, the clip count for the multiplicative one; iteration 0 records
/// the initial state.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub frob_error: f64,
    pub alpha_l: Option<f64>,
    pub alpha_r: Option<f64>,
    pub clipped_count: Option<usize>,
}

/// Factorization output: final factors, the full per-iteration trace, and
/// the reason iteration stopped.
#[derive(Debug, Clone)]
pub struct NmfResult {
    pub factors: FactorPair,
    pub trace: Vec<TraceRecord>,
    pub status: SolveStatus,
}

/// Verdict of [`check_convergence`] over a trace prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceDecision {
    Continue,
    Converged,
    MaxIters,
}

/// Declare convergence once the relative objective decrease has stayed
/// below `opts.rel_tol` for five consecutive iterations; report budget
/// exhaustion once the last recorded iteration reaches `opts.max_iters`.
pub fn check_convergence(trace: &[TraceRecord], opts: &NmfOptions) -> ConvergenceDecision {
    if trace.len() > CONVERGENCE_WINDOW {
        let tail = &trace[trace.len() - CONVERGENCE_WINDOW - 1..];
        let all_small = tail.windows(2).all(|pair| {
            (pair[0].objective - pair[1].objective).abs()
                < opts.rel_tol * (1.0 + pair[0].objective.abs())
        });
        if all_small {
            return ConvergenceDecision::Converged;
        }
    }
    match trace.last() {
        Some(last) if last.iter >= opts.max_iters => ConvergenceDecision::MaxIters,
        _ => ConvergenceDecision::Continue,
    }
}

/// Seeded uniform starting factors scaled to put `L * R` near the data's
/// magnitude, with a `sparsity` fraction of each factor's entries zeroed at
/// positions chosen by the same generator. A zero `mean_y` falls back to
/// unit scale so dense starts stay strictly positive.
pub fn init_factors(
    rows_y: usize,
    cols_y: usize,
    rank_d: usize,
    seed: u64,
    sparsity: f64,
    mean_y: f64,
) -> Result<FactorPair> {
    if rows_y == 0 || cols_y == 0 || rank_d == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got {rows_y}x{cols_y} rank {rank_d}"
        )));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!(
            "sparsity must lie in [0, 1], got {sparsity}"
        )));
    }
    if !mean_y.is_finite() || mean_y < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "mean_y must be finite and non-negative, got {mean_y}"
        )));
    }
    let scale = {
        let s = (mean_y / rank_d as f64).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let mut rng = Rng::new(seed);
    let mut l = Matrix::zeros(rows_y, rank_d);
    for v in l.data_mut() {
        *v = scale * rng.next_open01();
    }
    let mut r = Matrix::zeros(rank_d, cols_y);
    for v in r.data_mut() {
        *v = scale * rng.next_open01();
    }
    sparsify(&mut l, &mut rng, sparsity);
    sparsify(&mut r, &mut rng, sparsity);
    FactorPair::new(l, r)
}

fn sparsify(m: &mut Matrix, rng: &mut Rng, sparsity: f64) {
    let len = m.data().len();
    let zeros = ((sparsity * len as f64).round() as usize).min(len);
    if zeros == 0 {
        return;
    }
    let mut idx: Vec<usize> = (0..len).collect();
    for t in 0..zeros {
        let j = t + rng.next_below(len - t);
        idx.swap(t, j);
    }
    for &i in &idx[..zeros] {
        m.data_mut()[i] = 0.0;
    }
}

fn resolve_weights(y: &Matrix, opts: &NmfOptions) -> Result<WeightConfig> {
    match &opts.weighting {
        Weighting::Scalar(s) => expand_scalar_weights(s, y.rows(), y.cols(), opts.rank),
        Weighting::Full(w) => {
            if w.rows_y() != y.rows() || w.cols_y() != y.cols() || w.rank() != opts.rank {
                return Err(Error::Shape(format!(
                    "weight config is for {}x{} rank {}, problem is {}x{} rank {}",
                    w.rows_y(),
                    w.cols_y(),
                    w.rank(),
                    y.rows(),
                    y.cols(),
                    opts.rank
                )));
            }
            Ok(w.clone())
        }
    }
}

fn starting_factors(y: &Matrix, opts: &NmfOptions) -> Result<FactorPair> {
    match &opts.init {
        InitStrategy::UniformRandom { sparsity } => init_factors(
            y.rows(),
            y.cols(),
            opts.rank,
            opts.seed,
            *sparsity,
            y.mean_abs(),
        ),
        InitStrategy::Given(f) => {
            if f.l().rows() != y.rows() || f.rank() != opts.rank || f.r().cols() != y.cols() {
                return Err(Error::Shape(format!(
                    "given factors are {}x{} . {}x{}, problem needs {}x{} . {}x{}",
                    f.l().rows(),
                    f.l().cols(),
                    f.r().rows(),
                    f.r().cols(),
                    y.rows(),
                    opts.rank,
                    opts.rank,
                    y.cols()
                )));
            }
            Ok(f.clone())
        }
    }
}

fn validate_data(y: &Matrix) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::InvalidArgument("data matrix must be finite".into()));
    }
    if !y.is_non_negative() {
        return Err(Error::InvalidArgument(
            "data matrix must be elementwise non-negative".into(),
        ));
    }
    Ok(())
}

fn evaluate(y: &Matrix, l: &Matrix, r: &Matrix, w: &WeightConfig) -> Result<(f64, f64)> {
    let frob = y.sub(&l.matmul(r)?)?.frobenius_norm();
    let obj = objective(y, l, r, w)?;
    Ok((obj, frob))
}

/// Clip entries above `cap` down to `cap`; returns how many changed.
fn clip_above(m: &mut Matrix, cap: f64) -> usize {
    let mut clipped = 0;
    for v in m.data_mut() {
        if *v > cap {
            *v = cap;
            clipped += 1;
        }
    }
    clipped
}

/// Multiplicative entry update `x' = -x .* h ./ f` with the degenerate
/// denominator policy: a vanishing denominator passes zero numerators
/// through as zero and rejects nonzero ones.
fn mur_update(x: &Matrix, h: &Matrix, f: &Matrix, iter: usize) -> Result<Matrix> {
    let mut out = x.clone();
    let cols = x.cols();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let (xv, hv, fv) = (x.data()[i], h.data()[i], f.data()[i]);
        if fv < DENOM_FLOOR {
            if xv * hv == 0.0 {
                *o = 0.0;
                continue;
            }
            return Err(Error::DegenerateDenominator {
                index: i,
                context: format!(" (row {}, col {}) at iteration {iter}", i / cols, i % cols),
            });
        }
        *o = -xv * hv / fv;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite { iter });
    }
    Ok(out)
}

/// Multiplicative-update factorization.
///
/// Alternates ratio updates of `L` and `R` with numerators clipped to stay
/// at or below `-epsilon`. Non-negativity is preserved exactly and zero
/// entries never move; the objective is non-increasing on iterations where
/// no clipping occurred.
pub fn murnmf(y: &Matrix, opts: &NmfOptions) -> Result<NmfResult> {
    if opts.method != NmfMethod::Mur {
        return Err(Error::InvalidArgument("murnmf requires method = mur".into()));
    }
    opts.validate()?;
    validate_data(y)?;
    let w = resolve_weights(y, opts)?;
    let pair = starting_factors(y, opts)?;
    let (mut l, mut r) = pair.into_parts();
    let eps = opts.epsilon.unwrap_or_else(|| {
        let scale = y.mean_abs();
        1e-7 * if scale > 0.0 { scale } else { 1.0 }
    });

    let yw = weighted_data(y, &w)?;
    let (obj0, frob0) = evaluate(y, &l, &r, &w)?;
    let mut trace = vec![TraceRecord {
        iter: 0,
        objective: obj0,
        frob_error: frob0,
        alpha_l: None,
        alpha_r: None,
        clipped_count: Some(0),
    }];

    let mut status = SolveStatus::MaxIters;
    for k in 1..=opts.max_iters {
        let mut clipped = 0;

        let mut h = w.w1l().clone();
        h.add_assign_scaled(&yw.matmul(&r.transpose())?, -1.0)?;
        clipped += clip_above(&mut h, -eps);
        let rg = weighted_r_gram(&r, &w)?;
        let f = quad_operator_l(&l, &rg, &w, true)?;
        l = mur_update(&l, &h, &f, k)?;

        let mut j = w.w1r().clone();
        j.add_assign_scaled(&l.transpose().matmul(&yw)?, -1.0)?;
        clipped += clip_above(&mut j, -eps);
        let lg = weighted_l_gram(&l, &w)?;
        let f = quad_operator_r(&r, &lg, &w, true)?;
        r = mur_update(&r, &j, &f, k)?;

        if !l.is_finite() || !r.is_finite() {
            return Err(Error::NonFinite { iter: k });
        }
        let (obj, frob) = evaluate(y, &l, &r, &w)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite { iter: k });
        }
        trace.push(TraceRecord {
            iter: k,
            objective: obj,
            frob_error: frob,
            alpha_l: None,
            alpha_r: None,
            clipped_count: Some(clipped),
        });
        match check_convergence(&trace, opts) {
            ConvergenceDecision::Converged => {
                status = SolveStatus::Converged;
                break;
            }
            ConvergenceDecision::MaxIters => {
                status = SolveStatus::MaxIters;
                break;
            }
            ConvergenceDecision::Continue => {}
        }
    }
    Ok(NmfResult { factors: FactorPair::new(l, r)?, trace, status })
}

/// Ratio-scaled descent direction `-grad .* x ./ f` with zero-entry
/// handling: where `f` and `x` are both zero the direction is the positive
/// part of `-grad`; where only `f` is zero it is `-grad .* x`. The zero
/// test is exact.
pub fn pick_direction(x: &Matrix, grad: &Matrix, f: &Matrix) -> Result<Matrix> {
    if !x.same_shape(grad) || !x.same_shape(f) {
        return Err(Error::Shape("pick_direction operands must share a shape".into()));
    }
    let mut h = Matrix::zeros(x.rows(), x.cols());
    for (i, o) in h.data_mut().iter_mut().enumerate() {
        *o = lee_seung_entry(x.data()[i], grad.data()[i], f.data()[i]);
    }
    Ok(h)
}

struct HalfStep {
    x: Matrix,
    alpha: f64,
    stalled: bool,
}

/// One additive half-step: feasibility-limited move along `h` with the
/// step length chosen by `step_mode`. `curvature` maps a direction to the
/// quadratic operator applied to it, so `tr(h^T curvature(h))` is the exact
/// second-order coefficient along the ray.
fn aur_half_step(
    x: &Matrix,
    grad: &Matrix,
    h: &Matrix,
    curvature: impl FnOnce(&Matrix) -> Result<Matrix>,
    tau_k: f64,
    step_mode: StepMode,
) -> Result<HalfStep> {
    if h.data().iter().all(|&v| v == 0.0) {
        return Ok(HalfStep { x: x.clone(), alpha: 0.0, stalled: true });
    }
    let mut alpha_hat = f64::INFINITY;
    for (i, &hv) in h.data().iter().enumerate() {
        if hv < 0.0 {
            alpha_hat = alpha_hat.min(-x.data()[i] / hv);
        }
    }
    let alpha = match step_mode {
        StepMode::Optimal => {
            let k = curvature(h)?;
            let curv = h.trace_prod(&k)?;
            let slope = grad.trace_prod(h)?;
            let alpha_star = if curv <= DENOM_FLOOR { f64::INFINITY } else { -slope / curv };
            if alpha_hat.is_infinite() && alpha_star.is_infinite() && slope < 0.0 {
                return Err(Error::UnboundedDescent);
            }
            // Ties go to the exact line minimum.
            let capped = tau_k * alpha_hat;
            if capped < alpha_star {
                capped
            } else {
                alpha_star
            }
        }
        StepMode::Full => (tau_k * alpha_hat).min(1.0),
    };
    let mut out = x.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let v = *o + alpha * h.data()[i];
        *o = if v < 0.0 { 0.0 } else { v };
    }
    Ok(HalfStep { stalled: alpha == 0.0, x: out, alpha })
}

/// Additive-update factorization.
///
/// Each iteration takes one explicit step per factor: gradient, direction
/// via [`pick_direction`], maximum feasible step, and (in optimal mode) the
/// exact quadratic line minimum computed by elementwise trace accumulation.
/// The objective is non-increasing on every iteration and iterates stay
/// non-negative exactly.
pub fn aurnmf(y: &Matrix, opts: &NmfOptions) -> Result<NmfResult> {
    if opts.method != NmfMethod::Aur {
        return Err(Error::InvalidArgument("aurnmf requires method = aur".into()));
    }
    opts.validate()?;
    validate_data(y)?;
    let w = resolve_weights(y, opts)?;
    let pair = starting_factors(y, opts)?;
    let (mut l, mut r) = pair.into_parts();
    let tau_k = (opts.tau + 1.0) / 2.0;

    let yw = weighted_data(y, &w)?;
    let (obj0, frob0) = evaluate(y, &l, &r, &w)?;
    let mut trace = vec![TraceRecord {
        iter: 0,
        objective: obj0,
        frob_error: frob0,
        alpha_l: None,
        alpha_r: None,
        clipped_count: None,
    }];

    let mut status = SolveStatus::MaxIters;
    for k in 1..=opts.max_iters {
        // Left half-step.
        let rg = weighted_r_gram(&r, &w)?;
        let fq = quad_operator_l(&l, &rg, &w, true)?;
        let mut grad = fq.clone();
        grad.add_assign_scaled(w.w1l(), 1.0)?;
        grad.add_assign_scaled(&yw.matmul(&r.transpose())?, -1.0)?;
        let h = pick_direction(&l, &grad, &fq)?;
        let left = aur_half_step(
            &l,
            &grad,
            &h,
            |h| quad_operator_l(h, &rg, &w, opts.curvature_includes_ortho),
            tau_k,
            opts.step_mode,
        )?;
        l = left.x;

        // Right half-step, using the freshly updated left factor.
        let lg = weighted_l_gram(&l, &w)?;
        let fq = quad_operator_r(&r, &lg, &w, true)?;
        let mut grad = fq.clone();
        grad.add_assign_scaled(w.w1r(), 1.0)?;
        grad.add_assign_scaled(&l.transpose().matmul(&yw)?, -1.0)?;
        let h = pick_direction(&r, &grad, &fq)?;
        let right = aur_half_step(
            &r,
            &grad,
            &h,
            |h| quad_operator_r(h, &lg, &w, opts.curvature_includes_ortho),
            tau_k,
            opts.step_mode,
        )?;
        r = right.x;

        if !l.is_finite() || !r.is_finite() {
            return Err(Error::NonFinite { iter: k });
        }
        let (obj, frob) = evaluate(y, &l, &r, &w)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite { iter: k });
        }
        trace.push(TraceRecord {
            iter: k,
            objective: obj,
            frob_error: frob,
            alpha_l: Some(left.alpha),
            alpha_r: Some(right.alpha),
            clipped_count: None,
        });
        if left.stalled && right.stalled {
            status = SolveStatus::Stalled;
            break;
        }
        match check_convergence(&trace, opts) {
            ConvergenceDecision::Converged => {
                status = SolveStatus::Converged;
                break;
            }
            ConvergenceDecision::MaxIters => {
                status = SolveStatus::MaxIters;
                break;
            }
            ConvergenceDecision::Continue => {}
        }
    }
    Ok(NmfResult { factors: FactorPair::new(l, r)?, trace, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::{giqpm_step, StepStrategy};
    use crate::weights::{build_qp, Side};

    fn exact_problem(m: usize, true_rank: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let l = Matrix::from_fn(m, true_rank, |_, _| rng.next_open01());
        let r = Matrix::from_fn(true_rank, n, |_, _| rng.next_open01());
        l.matmul(&r).unwrap()
    }

    fn scalar_opts(rank: usize, method: NmfMethod, seed: u64) -> NmfOptions {
        let mut o = NmfOptions::new(rank, method);
        o.seed = seed;
        o
    }

    #[test]
    fn init_factors_dense_start_is_strictly_positive() {
        let f = init_factors(6, 4, 2, 3, 0.0, 1.0).unwrap();
        assert!(f.l().data().iter().all(|&v| v > 0.0));
        assert!(f.r().data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn init_factors_full_sparsity_gives_zero_factors() {
        let f = init_factors(3, 3, 2, 5, 1.0, 1.0).unwrap();
        assert!(f.l().data().iter().all(|&v| v == 0.0));
        assert!(f.r().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_factors_is_deterministic_per_seed() {
        let a = init_factors(5, 4, 3, 11, 0.33, 2.5).unwrap();
        let b = init_factors(5, 4, 3, 11, 0.33, 2.5).unwrap();
        assert_eq!(a, b);
        let c = init_factors(5, 4, 3, 12, 0.33, 2.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_factors_sparsity_fraction_is_respected() {
        let f = init_factors(10, 9, 3, 7, 1.0 / 3.0, 1.0).unwrap();
        let zeros_l = f.l().data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros_l, 10); // round(30 / 3)
        let zeros_r = f.r().data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros_r, 9); // round(27 / 3)
    }

    #[test]
    fn murnmf_one_by_one_hand_case() {
        let y = Matrix::from_rows(&[vec![4.0]]).unwrap();
        let start = FactorPair::new(
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
        )
        .unwrap();
        let mut opts = scalar_opts(1, NmfMethod::Mur, 0);
        opts.init = InitStrategy::Given(start);
        opts.max_iters = 1;
        let res = murnmf(&y, &opts).unwrap();
        // First half-step: numerator -4, denominator 1, so L becomes 4;
        // the R update then pulls the product back onto the data.
        assert_eq!(res.factors.l()[(0, 0)], 4.0);
        assert!((res.factors.product()[(0, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn murnmf_exact_instance_error_decays() {
        let y = exact_problem(30, 2, 8, 17);
        let opts = scalar_opts(2, NmfMethod::Mur, 99);
        let res = murnmf(&y, &opts).unwrap();
        let norm = y.frobenius_norm();
        let final_frob = res.trace.last().unwrap().frob_error;
        assert!(
            final_frob < 1e-4 * norm,
            "final error {final_frob} vs bound {}",
            1e-4 * norm
        );
        for pair in res.trace.windows(2) {
            assert!(pair[1].frob_error <= pair[0].frob_error * (1.0 + 1e-10));
        }
    }

    #[test]
    fn murnmf_zero_entry_never_moves() {
        let y = exact_problem(6, 2, 5, 23);
        let start = init_factors(6, 5, 2, 31, 0.0, y.mean_abs()).unwrap();
        let (mut l0, r0) = start.into_parts();
        l0[(0, 0)] = 0.0;
        let start = FactorPair::new(l0, r0).unwrap();
        let mut opts = scalar_opts(2, NmfMethod::Mur, 0);
        opts.init = InitStrategy::Given(start);
        opts.max_iters = 200;
        let res = murnmf(&y, &opts).unwrap();
        assert_eq!(res.factors.l()[(0, 0)], 0.0);
    }

    #[test]
    fn murnmf_monotone_on_unclipped_iterations() {
        let y = exact_problem(8, 2, 6, 41);
        let mut opts = scalar_opts(3, NmfMethod::Mur, 7);
        opts.weighting =
            Weighting::Scalar(ScalarWeights::new(0.05, 0.05, 0.1, 0.1, 0.02, 0.02).unwrap());
        opts.max_iters = 300;
        let res = murnmf(&y, &opts).unwrap();
        for pair in res.trace.windows(2) {
            if pair[1].clipped_count == Some(0) {
                assert!(
                    pair[1].objective
                        <= pair[0].objective + 1e-10 * (1.0 + pair[0].objective.abs()),
                    "objective rose on unclipped iteration {}",
                    pair[1].iter
                );
            }
        }
        assert!(res.factors.l().is_non_negative());
        assert!(res.factors.r().is_non_negative());
    }

    #[test]
    fn murnmf_matches_classic_update_when_unregularized() {
        // With identity error weights and no regularization, one iteration
        // is the classic ratio update L .* (Y R^T) ./ (L R R^T), then the
        // mirrored update for R using the new L.
        for seed in 0..5 {
            let mut rng = Rng::new(1000 + seed);
            let (m, n, d) = (5, 4, 2);
            let y = Matrix::from_fn(m, n, |_, _| rng.next_open01());
            let l0 = Matrix::from_fn(m, d, |_, _| rng.next_open01());
            let r0 = Matrix::from_fn(d, n, |_, _| rng.next_open01());

            let mut opts = scalar_opts(d, NmfMethod::Mur, 0);
            opts.init = InitStrategy::Given(FactorPair::new(l0.clone(), r0.clone()).unwrap());
            opts.max_iters = 1;
            let res = murnmf(&y, &opts).unwrap();

            let num = y.matmul(&r0.transpose()).unwrap();
            let den = l0.matmul(&r0.matmul(&r0.transpose()).unwrap()).unwrap();
            let mut l1 = l0.clone();
            for i in 0..m {
                for j in 0..d {
                    l1[(i, j)] *= num[(i, j)] / den[(i, j)];
                }
            }
            for i in 0..m {
                for j in 0..d {
                    assert!(
                        (res.factors.l()[(i, j)] - l1[(i, j)]).abs()
                            < 1e-12 * (1.0 + l1[(i, j)].abs()),
                        "L mismatch at ({i}, {j}) for seed {seed}"
                    );
                }
            }

            let num = l1.transpose().matmul(&y).unwrap();
            let den = l1.transpose().matmul(&l1).unwrap().matmul(&r0).unwrap();
            let mut r1 = r0.clone();
            for i in 0..d {
                for j in 0..n {
                    r1[(i, j)] *= num[(i, j)] / den[(i, j)];
                }
            }
            for i in 0..d {
                for j in 0..n {
                    assert!(
                        (res.factors.r()[(i, j)] - r1[(i, j)]).abs()
                            < 1e-12 * (1.0 + r1[(i, j)].abs()),
                        "R mismatch at ({i}, {j}) for seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn pick_direction_plain_ratio_when_all_positive() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let grad = Matrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let f = Matrix::from_rows(&[vec![2.0, 4.0]]).unwrap();
        let h = pick_direction(&x, &grad, &f).unwrap();
        assert_eq!(h.data(), &[-0.25, 0.5]);
    }

    #[test]
    fn pick_direction_zero_zero_takes_positive_part_of_negative_gradient() {
        let x = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let f = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let grad = Matrix::from_rows(&[vec![-2.0]]).unwrap();
        assert_eq!(pick_direction(&x, &grad, &f).unwrap().data(), &[2.0]);
        let grad = Matrix::from_rows(&[vec![2.0]]).unwrap();
        assert_eq!(pick_direction(&x, &grad, &f).unwrap().data(), &[0.0]);
    }

    #[test]
    fn pick_direction_zero_denominator_with_positive_entry() {
        let x = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let f = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let grad = Matrix::from_rows(&[vec![-2.0]]).unwrap();
        assert_eq!(pick_direction(&x, &grad, &f).unwrap().data(), &[6.0]);
    }

    #[test]
    fn aurnmf_stationary_start_stalls_immediately() {
        // Integer-valued factors keep every product exact, so the gradient
        // at the exact factorization is exactly zero.
        let l = Matrix::from_fn(5, 2, |i, j| ((i + j) % 3 + 1) as f64);
        let r = Matrix::from_fn(2, 4, |i, j| ((2 * i + j) % 4 + 1) as f64);
        let y = l.matmul(&r).unwrap();
        let mut opts = scalar_opts(2, NmfMethod::Aur, 0);
        opts.init = InitStrategy::Given(FactorPair::new(l, r).unwrap());
        let res = aurnmf(&y, &opts).unwrap();
        assert!(res.trace.len() <= 2);
        assert!(matches!(res.status, SolveStatus::Stalled | SolveStatus::Converged));
    }

    #[test]
    fn aurnmf_monotone_every_iteration_with_regularization() {
        let y = exact_problem(8, 2, 6, 61);
        let mut opts = scalar_opts(3, NmfMethod::Aur, 13);
        opts.weighting =
            Weighting::Scalar(ScalarWeights::new(0.05, 0.05, 0.1, 0.1, 0.3, 0.3).unwrap());
        opts.max_iters = 300;
        let res = aurnmf(&y, &opts).unwrap();
        for pair in res.trace.windows(2) {
            assert!(
                pair[1].objective <= pair[0].objective + 1e-10 * (1.0 + pair[0].objective.abs()),
                "objective rose at iteration {}",
                pair[1].iter
            );
        }
        assert!(res.factors.l().is_non_negative());
        assert!(res.factors.r().is_non_negative());
    }

    #[test]
    fn aurnmf_simplified_curvature_option_runs() {
        let y = exact_problem(6, 2, 5, 71);
        let mut opts = scalar_opts(2, NmfMethod::Aur, 3);
        opts.weighting =
            Weighting::Scalar(ScalarWeights::new(0.0, 0.0, 0.0, 0.0, 0.5, 0.5).unwrap());
        opts.curvature_includes_ortho = false;
        opts.max_iters = 50;
        aurnmf(&y, &opts).unwrap();
    }

    #[test]
    fn aurnmf_full_step_mode_converges_on_exact_instance() {
        let y = exact_problem(12, 2, 7, 81);
        let mut opts = scalar_opts(2, NmfMethod::Aur, 5);
        opts.step_mode = StepMode::Full;
        opts.max_iters = 3000;
        let res = aurnmf(&y, &opts).unwrap();
        let final_frob = res.trace.last().unwrap().frob_error;
        assert!(final_frob < 1e-2 * y.frobenius_norm());
    }

    #[test]
    fn aur_half_step_matches_vectorized_giqpm_step() {
        let mut rng = Rng::new(91);
        let (m, n, d) = (4, 3, 2);
        let y = Matrix::from_fn(m, n, |_, _| rng.next_open01());
        let l = Matrix::from_fn(m, d, |_, _| rng.next_open01());
        let r = Matrix::from_fn(d, n, |_, _| rng.next_open01());
        let s = ScalarWeights::new(0.1, 0.0, 0.2, 0.0, 0.3, 0.0).unwrap();
        let w = expand_scalar_weights(&s, m, n, d).unwrap();
        let tau_k = 0.75;

        // Matrix path: one left half-step.
        let yw = weighted_data(&y, &w).unwrap();
        let rg = weighted_r_gram(&r, &w).unwrap();
        let fq = quad_operator_l(&l, &rg, &w, true).unwrap();
        let mut grad = fq.clone();
        grad.add_assign_scaled(w.w1l(), 1.0).unwrap();
        grad.add_assign_scaled(&yw.matmul(&r.transpose()).unwrap(), -1.0)
            .unwrap();
        let h = pick_direction(&l, &grad, &fq).unwrap();
        let half = aur_half_step(
            &l,
            &grad,
            &h,
            |h| quad_operator_l(h, &rg, &w, true),
            tau_k,
            StepMode::Optimal,
        )
        .unwrap();

        // Vector path: the same step on the vectorized half-problem.
        let qp = build_qp(&y, &l, &r, Side::L, &w).unwrap();
        let out = giqpm_step(&l.vectorize(), &qp, tau_k, StepStrategy::LeeSeung).unwrap();
        let expect = Matrix::unvectorize(&out.x, m, d).unwrap();
        for i in 0..m {
            for j in 0..d {
                assert!(
                    (half.x[(i, j)] - expect[(i, j)]).abs() < 1e-10,
                    "mismatch at ({i}, {j}): {} vs {}",
                    half.x[(i, j)],
                    expect[(i, j)]
                );
            }
        }
    }

    #[test]
    fn options_validation_rejects_bad_values() {
        let y = exact_problem(4, 2, 3, 1);
        let mut opts = scalar_opts(2, NmfMethod::Mur, 0);
        opts.tau = 1.0;
        assert!(murnmf(&y, &opts).is_err());
        let mut opts = scalar_opts(2, NmfMethod::Mur, 0);
        opts.epsilon = Some(0.0);
        assert!(murnmf(&y, &opts).is_err());
        let mut opts = scalar_opts(2, NmfMethod::Mur, 0);
        opts.init = InitStrategy::UniformRandom { sparsity: 1.5 };
        assert!(murnmf(&y, &opts).is_err());
        // Method mismatch between driver and options.
        let opts = scalar_opts(2, NmfMethod::Aur, 0);
        assert!(murnmf(&y, &opts).is_err());
    }

    #[test]
    fn negative_data_rejected() {
        let mut y = exact_problem(4, 2, 3, 2);
        y[(1, 2)] = -0.5;
        let opts = scalar_opts(2, NmfMethod::Mur, 0);
        assert!(matches!(murnmf(&y, &opts), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn check_convergence_flat_objective() {
        let opts = scalar_opts(2, NmfMethod::Mur, 0);
        let flat: Vec<TraceRecord> = (0..=5)
            .map(|iter| TraceRecord {
                iter,
                objective: 1.0,
                frob_error: 1.0,
                alpha_l: None,
                alpha_r: None,
                clipped_count: None,
            })
            .collect();
        assert_eq!(check_convergence(&flat, &opts), ConvergenceDecision::Converged);
    }

    #[test]
    fn check_convergence_decreasing_objective_continues() {
        let opts = scalar_opts(2, NmfMethod::Mur, 0);
        let falling: Vec<TraceRecord> = (0..=5)
            .map(|iter| TraceRecord {
                iter,
                objective: 100.0 / (iter + 1) as f64,
                frob_error: 1.0,
                alpha_l: None,
                alpha_r: None,
                clipped_count: None,
            })
            .collect();
        assert_eq!(check_convergence(&falling, &opts), ConvergenceDecision::Continue);
    }

    #[test]
    fn check_convergence_budget_exhausted() {
        let mut opts = scalar_opts(2, NmfMethod::Mur, 0);
        opts.max_iters = 3;
        let falling: Vec<TraceRecord> = (0..=3)
            .map(|iter| TraceRecord {
                iter,
                objective: 100.0 / (iter + 1) as f64,
                frob_error: 1.0,
                alpha_l: None,
                alpha_r: None,
                clipped_count: None,
            })
            .collect();
        assert_eq!(check_convergence(&falling, &opts), ConvergenceDecision::MaxIters);
    }
}
