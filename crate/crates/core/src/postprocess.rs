//! Canonicalize and evaluate factorizations.
//!
//! A factorization is only determined up to `L R = (L Q)(Q^-1 R)` for
//! invertible `Q`. [`canonicalize`] fixes the representative with `Q`
//! restricted to a positive diagonal scaling plus a permutation: `R` gets
//! unit row sums and the factors are ordered by non-increasing column sums
//! of `L`. [`r_squared`] scores a fit against the rank-one column-means
//! baseline, and [`frobenius_error`] is the raw residual norm.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::nmf::FactorPair;
use crate::weights::WeightConfig;

/// A canonicalized factor pair together with the transform that produced
/// it: `scale` is the diagonal of the applied `Q` (indexed by the original
/// factor positions) and `order` maps each output position to the original
/// factor index.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub factors: FactorPair,
    pub scale: Vector,
    pub order: Vec<usize>,
}

/// Rescale so each row of `R` sums to one, then reorder the factors so the
/// column sums of `L` are non-increasing. The product `L R` is preserved.
///
/// Rows of `R` with zero sum cannot be rescaled; they keep scale one and
/// are ordered after all the others, ties broken by original index.
pub fn canonicalize(f: &FactorPair) -> Result<CanonicalForm> {
    let d = f.rank();
    let (l, r) = (f.l(), f.r());
    let row_sums = r.row_sums();

    let mut l_scaled = l.clone();
    let mut r_scaled = r.clone();
    let mut scale = Vector::zeros(d);
    for k in 0..d {
        let q = if row_sums[k] > 0.0 { row_sums[k] } else { 1.0 };
        scale[k] = q;
        for i in 0..l.rows() {
            l_scaled[(i, k)] *= q;
        }
        for j in 0..r.cols() {
            r_scaled[(k, j)] /= q;
        }
    }

    let col_sums = l_scaled.column_sums();
    let mut order: Vec<usize> = (0..d).collect();
    // Degenerate (zero-sum) rows of R go last; the rest sort by descending
    // column sum of the rescaled L. Stable sort keeps original-index ties.
    order.sort_by(|&a, &b| {
        let dega = row_sums[a] <= 0.0;
        let degb = row_sums[b] <= 0.0;
        dega.cmp(&degb)
            .then(col_sums[b].partial_cmp(&col_sums[a]).unwrap())
    });

    let mut l_out = Matrix::zeros(l.rows(), d);
    let mut r_out = Matrix::zeros(d, r.cols());
    for (new_k, &old_k) in order.iter().enumerate() {
        for i in 0..l.rows() {
            l_out[(i, new_k)] = l_scaled[(i, old_k)];
        }
        for j in 0..r.cols() {
            r_out[(new_k, j)] = r_scaled[(old_k, j)];
        }
    }

    Ok(CanonicalForm { factors: FactorPair::new(l_out, r_out)?, scale, order })
}

/// Residual Frobenius norm `||Y - L R||_F`.
pub fn frobenius_error(y: &Matrix, f: &FactorPair) -> Result<f64> {
    Ok(y.sub(&f.product())?.frobenius_norm())
}

/// Fit quality against the rank-one baseline that predicts every row as
/// the vector of column means: one minus the ratio of the model's squared
/// residual norm to the baseline's. Equals 1 only for an exact fit, 0 for
/// a fit no better than the column means, and is negative for worse fits.
pub fn r_squared(y: &Matrix, f: &FactorPair) -> Result<f64> {
    let baseline = column_means_model(y);
    let denom = y.sub(&baseline)?.trace_prod(&y.sub(&baseline)?)?;
    if denom <= 0.0 {
        return Err(Error::UndefinedMetric(
            "baseline residual is zero: all rows equal the column means".into(),
        ));
    }
    let resid = y.sub(&f.product())?;
    Ok(1.0 - resid.trace_prod(&resid)? / denom)
}

/// [`r_squared`] with both residuals measured in the weighted norm
/// `tr(E^T W0R E W0C)` of the given configuration. Exposed for weighted
/// fits; the plain [`r_squared`] is the reported metric.
pub fn r_squared_weighted(y: &Matrix, f: &FactorPair, w: &WeightConfig) -> Result<f64> {
    let weighted_sq = |e: &Matrix| -> Result<f64> {
        let t = w.w0r().left_apply(e)?;
        let t = w.w0c().right_apply(&t)?;
        e.trace_prod(&t)
    };
    let baseline = column_means_model(y);
    let denom = weighted_sq(&y.sub(&baseline)?)?;
    if denom <= 0.0 {
        return Err(Error::UndefinedMetric(
            "weighted baseline residual is zero".into(),
        ));
    }
    let num = weighted_sq(&y.sub(&f.product())?)?;
    Ok(1.0 - num / denom)
}

fn column_means_model(y: &Matrix) -> Matrix {
    let m = y.rows() as f64;
    let means: Vec<f64> = y.column_sums().iter().map(|s| s / m).collect();
    Matrix::from_fn(y.rows(), y.cols(), |_, j| means[j])
}
