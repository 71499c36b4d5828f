//! Weighted, regularized factorization objective: weight configurations,
//! objective evaluation, analytic gradients in matrix form, and the
//! vectorized quadratic-program form used as a cross-check oracle.
//!
//! The objective being minimized over non-negative factors `L` (m x d) and
//! `R` (d x n) is
//!
//! ```text
//!   1/2 tr((Y - LR)^T W0R (Y - LR) W0C)
//!   + tr(W1L^T L) + tr(W1R^T R)
//!   + 1/2 sum_j tr(L^T A_j L B_j)
//!   + 1/2 sum_j tr(R^T C_j R D_j)
//! ```
//!
//! where every weight matrix is elementwise non-negative, the quadratic
//! weights are symmetric, and the `(A_j, B_j)` / `(C_j, D_j)` pairs carry
//! both ridge terms and off-diagonal (non-orthogonality) penalties.

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix, Vector};

/// Default cap on the order of the vectorized problem built by [`build_qp`].
pub const DEFAULT_QP_ORDER_LIMIT: usize = 10_000;

/// Orders above this skip the eigenvalue-based PSD validation; the matrices
/// are then trusted and a warning is recorded instead.
const PSD_CHECK_MAX_ORDER: usize = 500;

const SYMMETRY_TOL: f64 = 1e-12;

/// Which factor a half-problem solves for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    L,
    R,
}

/// A square weight matrix, stored structurally so that identity and scaled
/// identity weights cost nothing to apply.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightMat {
    ScaledIdentity { order: usize, scale: f64 },
    Dense(Matrix),
}

impl WeightMat {
    pub fn identity(order: usize) -> Self {
        WeightMat::ScaledIdentity { order, scale: 1.0 }
    }

    pub fn scaled_identity(order: usize, scale: f64) -> Self {
        WeightMat::ScaledIdentity { order, scale }
    }

    /// Wrap a dense matrix, recognizing exact (scaled) identities.
    pub fn from_dense(m: Matrix) -> Self {
        if m.rows() == m.cols() {
            let c = m[(0, 0)];
            let mut structured = true;
            'scan: for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let want = if i == j { c } else { 0.0 };
                    if m[(i, j)] != want {
                        structured = false;
                        break 'scan;
                    }
                }
            }
            if structured {
                return WeightMat::ScaledIdentity { order: m.rows(), scale: c };
            }
        }
        WeightMat::Dense(m)
    }

    pub fn order(&self) -> usize {
        match self {
            WeightMat::ScaledIdentity { order, .. } => *order,
            WeightMat::Dense(m) => m.rows(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, WeightMat::ScaledIdentity { scale, .. } if *scale == 1.0)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            WeightMat::ScaledIdentity { scale, .. } => *scale == 0.0,
            WeightMat::Dense(m) => m.data().iter().all(|&x| x == 0.0),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        match self {
            WeightMat::ScaledIdentity { order, scale } => Matrix::identity(*order).scale(*scale),
            WeightMat::Dense(m) => m.clone(),
        }
    }

    /// `self * m`.
    pub fn left_apply(&self, m: &Matrix) -> Result<Matrix> {
        match self {
            WeightMat::ScaledIdentity { order, scale } => {
                if *order != m.rows() {
                    return Err(Error::Shape(format!(
                        "weight of order {order} cannot left-multiply {}x{}",
                        m.rows(),
                        m.cols()
                    )));
                }
                Ok(if *scale == 1.0 { m.clone() } else { m.scale(*scale) })
            }
            WeightMat::Dense(w) => w.matmul(m),
        }
    }

    /// `m * self`.
    pub fn right_apply(&self, m: &Matrix) -> Result<Matrix> {
        match self {
            WeightMat::ScaledIdentity { order, scale } => {
                if *order != m.cols() {
                    return Err(Error::Shape(format!(
                        "weight of order {order} cannot right-multiply {}x{}",
                        m.rows(),
                        m.cols()
                    )));
                }
                Ok(if *scale == 1.0 { m.clone() } else { m.scale(*scale) })
            }
            WeightMat::Dense(w) => m.matmul(w),
        }
    }

    fn is_non_negative(&self) -> bool {
        match self {
            WeightMat::ScaledIdentity { scale, .. } => *scale >= 0.0,
            WeightMat::Dense(m) => m.is_non_negative(),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            WeightMat::ScaledIdentity { scale, .. } => scale.is_finite(),
            WeightMat::Dense(m) => m.is_finite(),
        }
    }

    fn asymmetry(&self) -> f64 {
        match self {
            WeightMat::ScaledIdentity { .. } => 0.0,
            WeightMat::Dense(m) => m.asymmetry(),
        }
    }

    /// Smallest eigenvalue relative to norm, or `None` when trivially known.
    fn min_eigenvalue(&self) -> Option<(f64, f64)> {
        match self {
            WeightMat::ScaledIdentity { scale, .. } => Some((*scale, scale.abs())),
            WeightMat::Dense(m) => {
                let eigs = symmetric_eigenvalues(m).ok()?;
                Some((eigs[0], m.frobenius_norm()))
            }
        }
    }
}

/// One quadratic penalty term `1/2 tr(X^T row_weight X col_weight)`.
///
/// Terms flagged as orthogonality masks carry the all-ones-minus-identity
/// pattern, which sums the off-diagonal entries of a factor Gram matrix.
/// That mask is indefinite but the penalty stays non-negative on the
/// non-negative orthant, so it is exempt from the PSD validation.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Term {
    row_weight: WeightMat,
    col_weight: WeightMat,
    ortho_mask: bool,
}

impl L2Term {
    pub fn new(row_weight: WeightMat, col_weight: WeightMat) -> Self {
        L2Term { row_weight, col_weight, ortho_mask: false }
    }

    pub fn orthogonality(row_weight: WeightMat, col_weight: WeightMat) -> Self {
        L2Term { row_weight, col_weight, ortho_mask: true }
    }

    pub fn row_weight(&self) -> &WeightMat {
        &self.row_weight
    }

    pub fn col_weight(&self) -> &WeightMat {
        &self.col_weight
    }

    pub fn is_orthogonality(&self) -> bool {
        self.ortho_mask
    }

    fn is_vanishing(&self) -> bool {
        self.row_weight.is_zero() || self.col_weight.is_zero()
    }

    /// `row_weight * x * col_weight`.
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let t = self.row_weight.left_apply(x)?;
        self.col_weight.right_apply(&t)
    }
}

/// Scalar shortcut for the weight family: L1 strengths, ridge strengths,
/// and off-diagonal (non-orthogonality) penalty strengths per side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarWeights {
    pub lambda1_l: f64,
    pub lambda1_r: f64,
    pub lambda2_l: f64,
    pub lambda2_r: f64,
    pub gamma2_l: f64,
    pub gamma2_r: f64,
}

impl ScalarWeights {
    pub fn new(
        lambda1_l: f64,
        lambda1_r: f64,
        lambda2_l: f64,
        lambda2_r: f64,
        gamma2_l: f64,
        gamma2_r: f64,
    ) -> Result<Self> {
        let s = ScalarWeights { lambda1_l, lambda1_r, lambda2_l, lambda2_r, gamma2_l, gamma2_r };
        for (name, v) in [
            ("lambda1_l", s.lambda1_l),
            ("lambda1_r", s.lambda1_r),
            ("lambda2_l", s.lambda2_l),
            ("lambda2_r", s.lambda2_r),
            ("gamma2_l", s.gamma2_l),
            ("gamma2_r", s.gamma2_r),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "scalar weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(s)
    }

    pub fn is_zero(&self) -> bool {
        self.lambda1_l == 0.0
            && self.lambda1_r == 0.0
            && self.lambda2_l == 0.0
            && self.lambda2_r == 0.0
            && self.gamma2_l == 0.0
            && self.gamma2_r == 0.0
    }
}

/// The full family of weighting matrices for a problem of shape
/// `(rows_y, cols_y)` factored at rank `rank`.
#[derive(Debug, Clone)]
pub struct WeightConfig {
    w0r: WeightMat,
    w0c: WeightMat,
    w1l: Matrix,
    w1r: Matrix,
    l2_terms_l: Vec<L2Term>,
    l2_terms_r: Vec<L2Term>,
    rows_y: usize,
    cols_y: usize,
    rank: usize,
    psd_checked: bool,
    warnings: Vec<String>,
}

impl WeightConfig {
    /// Validate and assemble a weight configuration.
    ///
    /// Hard errors: wrong dimensions, negative entries, non-finite entries,
    /// asymmetric quadratic weights, non-PSD `w0r`/`w0c`, and non-PSD
    /// untagged L2 weights. Terms built via [`L2Term::orthogonality`] skip
    /// the PSD check. Orders above 500 skip the eigenvalue check entirely
    /// and record a warning.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w0r: WeightMat,
        w0c: WeightMat,
        w1l: Matrix,
        w1r: Matrix,
        l2_terms_l: Vec<L2Term>,
        l2_terms_r: Vec<L2Term>,
        rows_y: usize,
        cols_y: usize,
        rank: usize,
    ) -> Result<Self> {
        if rows_y == 0 || cols_y == 0 || rank == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got {rows_y}x{cols_y} rank {rank}"
            )));
        }
        let mut cfg = WeightConfig {
            w0r,
            w0c,
            w1l,
            w1r,
            l2_terms_l,
            l2_terms_r,
            rows_y,
            cols_y,
            rank,
            psd_checked: true,
            warnings: Vec::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identity error weights, no regularization: the classic objective.
    pub fn identity(rows_y: usize, cols_y: usize, rank: usize) -> Self {
        WeightConfig {
            w0r: WeightMat::identity(rows_y),
            w0c: WeightMat::identity(cols_y),
            w1l: Matrix::zeros(rows_y, rank),
            w1r: Matrix::zeros(rank, cols_y),
            l2_terms_l: Vec::new(),
            l2_terms_r: Vec::new(),
            rows_y,
            cols_y,
            rank,
            psd_checked: true,
            warnings: Vec::new(),
        }
    }

    fn validate(&mut self) -> Result<()> {
        let (m, n, d) = (self.rows_y, self.cols_y, self.rank);
        if self.w0r.order() != m {
            return Err(Error::Shape(format!(
                "w0r must have order {m}, got {}",
                self.w0r.order()
            )));
        }
        if self.w0c.order() != n {
            return Err(Error::Shape(format!(
                "w0c must have order {n}, got {}",
                self.w0c.order()
            )));
        }
        if self.w1l.rows() != m || self.w1l.cols() != d {
            return Err(Error::Shape(format!(
                "w1l must be {m}x{d}, got {}x{}",
                self.w1l.rows(),
                self.w1l.cols()
            )));
        }
        if self.w1r.rows() != d || self.w1r.cols() != n {
            return Err(Error::Shape(format!(
                "w1r must be {d}x{n}, got {}x{}",
                self.w1r.rows(),
                self.w1r.cols()
            )));
        }
        for (label, term, rows, cols) in self
            .l2_terms_l
            .iter()
            .enumerate()
            .map(|(j, t)| (format!("L2 term {j} for L"), t, m, d))
            .chain(
                self.l2_terms_r
                    .iter()
                    .enumerate()
                    .map(|(j, t)| (format!("L2 term {j} for R"), t, d, n)),
            )
        {
            if term.row_weight.order() != rows || term.col_weight.order() != cols {
                return Err(Error::Shape(format!(
                    "{label}: expected orders ({rows}, {cols}), got ({}, {})",
                    term.row_weight.order(),
                    term.col_weight.order()
                )));
            }
        }

        if !self.w1l.is_finite() || !self.w1r.is_finite() {
            return Err(Error::InvalidArgument("L1 weights must be finite".into()));
        }
        if !self.w1l.is_non_negative() || !self.w1r.is_non_negative() {
            return Err(Error::InvalidArgument("L1 weights must be non-negative".into()));
        }

        let quads: Vec<(String, WeightMat, bool)> = [
            ("w0r".to_string(), self.w0r.clone(), false),
            ("w0c".to_string(), self.w0c.clone(), false),
        ]
        .into_iter()
        .chain(self.l2_terms_l.iter().enumerate().flat_map(|(j, t)| {
            vec![
                (format!("L2 term {j} row weight for L"), t.row_weight.clone(), t.ortho_mask),
                (format!("L2 term {j} col weight for L"), t.col_weight.clone(), t.ortho_mask),
            ]
        }))
        .chain(self.l2_terms_r.iter().enumerate().flat_map(|(j, t)| {
            vec![
                (format!("L2 term {j} row weight for R"), t.row_weight.clone(), t.ortho_mask),
                (format!("L2 term {j} col weight for R"), t.col_weight.clone(), t.ortho_mask),
            ]
        }))
        .collect();

        for (label, w, ortho) in &quads {
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!("{label} must be finite")));
            }
            if !w.is_non_negative() {
                return Err(Error::InvalidArgument(format!(
                    "{label} must be elementwise non-negative"
                )));
            }
            if w.asymmetry() > SYMMETRY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "{label} must be symmetric within {SYMMETRY_TOL}"
                )));
            }
            if *ortho {
                continue;
            }
            if w.order() > PSD_CHECK_MAX_ORDER {
                if matches!(w, WeightMat::Dense(_)) {
                    self.psd_checked = false;
                    self.warnings.push(format!(
                        "{label}: order {} exceeds {PSD_CHECK_MAX_ORDER}, PSD check skipped",
                        w.order()
                    ));
                }
                continue;
            }
            if let Some((min_eig, norm)) = w.min_eigenvalue() {
                if min_eig < -1e-8 * norm.max(1e-300) {
                    return Err(Error::InvalidArgument(format!(
                        "{label} is not positive semidefinite (min eigenvalue {min_eig:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rows_y(&self) -> usize {
        self.rows_y
    }

    pub fn cols_y(&self) -> usize {
        self.cols_y
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn w0r(&self) -> &WeightMat {
        &self.w0r
    }

    pub fn w0c(&self) -> &WeightMat {
        &self.w0c
    }

    pub fn w1l(&self) -> &Matrix {
        &self.w1l
    }

    pub fn w1r(&self) -> &Matrix {
        &self.w1r
    }

    pub fn l2_terms_l(&self) -> &[L2Term] {
        &self.l2_terms_l
    }

    pub fn l2_terms_r(&self) -> &[L2Term] {
        &self.l2_terms_r
    }

    /// Whether every quadratic weight passed (or trivially satisfied) the
    /// PSD check; false when any order was too large to check.
    pub fn psd_checked(&self) -> bool {
        self.psd_checked
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn check_factor_shapes(&self, l: &Matrix, r: &Matrix) -> Result<()> {
        if l.rows() != self.rows_y || l.cols() != self.rank {
            return Err(Error::Shape(format!(
                "L must be {}x{}, got {}x{}",
                self.rows_y,
                self.rank,
                l.rows(),
                l.cols()
            )));
        }
        if r.rows() != self.rank || r.cols() != self.cols_y {
            return Err(Error::Shape(format!(
                "R must be {}x{}, got {}x{}",
                self.rank,
                self.cols_y,
                r.rows(),
                r.cols()
            )));
        }
        Ok(())
    }

    fn check_y_shape(&self, y: &Matrix) -> Result<()> {
        if y.rows() != self.rows_y || y.cols() != self.cols_y {
            return Err(Error::Shape(format!(
                "Y must be {}x{}, got {}x{}",
                self.rows_y,
                self.cols_y,
                y.rows(),
                y.cols()
            )));
        }
        Ok(())
    }
}

/// Expand the scalar shortcut into the full weight family: identity error
/// weights, constant L1 matrices, one ridge term and one off-diagonal
/// penalty term per side. The off-diagonal mask has order `rank_d` and sits
/// on whichever slot touches the rank-d factor Gram matrix: the column slot
/// for the left factor, the row slot for the right factor.
pub fn expand_scalar_weights(
    s: &ScalarWeights,
    rows_y: usize,
    cols_y: usize,
    rank_d: usize,
) -> Result<WeightConfig> {
    // Re-validate; the struct fields are public.
    let s = ScalarWeights::new(
        s.lambda1_l,
        s.lambda1_r,
        s.lambda2_l,
        s.lambda2_r,
        s.gamma2_l,
        s.gamma2_r,
    )?;
    if rows_y == 0 || cols_y == 0 || rank_d == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got {rows_y}x{cols_y} rank {rank_d}"
        )));
    }
    let mask = Matrix::off_diagonal_mask(rank_d);
    let l2_terms_l = vec![
        L2Term::new(
            WeightMat::scaled_identity(rows_y, s.lambda2_l),
            WeightMat::identity(rank_d),
        ),
        L2Term::orthogonality(
            WeightMat::identity(rows_y),
            WeightMat::from_dense(mask.scale(s.gamma2_l)),
        ),
    ];
    let l2_terms_r = vec![
        L2Term::new(
            WeightMat::scaled_identity(rank_d, s.lambda2_r),
            WeightMat::identity(cols_y),
        ),
        L2Term::orthogonality(
            WeightMat::from_dense(mask.scale(s.gamma2_r)),
            WeightMat::identity(cols_y),
        ),
    ];
    WeightConfig::new(
        WeightMat::identity(rows_y),
        WeightMat::identity(cols_y),
        Matrix::filled(rows_y, rank_d, s.lambda1_l),
        Matrix::filled(rank_d, cols_y, s.lambda1_r),
        l2_terms_l,
        l2_terms_r,
        rows_y,
        cols_y,
        rank_d,
    )
}

/// `W0R * Y * W0C`, the weighted data matrix shared by every half-step.
pub(crate) fn weighted_data(y: &Matrix, w: &WeightConfig) -> Result<Matrix> {
    let t = w.w0r.left_apply(y)?;
    w.w0c.right_apply(&t)
}

/// `R * W0C * R^T`, symmetrized.
pub(crate) fn weighted_r_gram(r: &Matrix, w: &WeightConfig) -> Result<Matrix> {
    let rw = w.w0c.right_apply(r)?;
    let mut g = rw.matmul(&r.transpose())?;
    g.symmetrize();
    Ok(g)
}

/// `L^T * W0R * L`, symmetrized.
pub(crate) fn weighted_l_gram(l: &Matrix, w: &WeightConfig) -> Result<Matrix> {
    let wl = w.w0r.left_apply(l)?;
    let mut g = l.transpose().matmul(&wl)?;
    g.symmetrize();
    Ok(g)
}

/// Sum of the quadratic L2 terms applied to `x`:
/// `sum_j row_j * x * col_j` for the requested side.
pub(crate) fn apply_l2_terms(
    x: &Matrix,
    terms: &[L2Term],
    include_ortho: bool,
) -> Result<Option<Matrix>> {
    let mut acc: Option<Matrix> = None;
    for term in terms {
        if term.is_vanishing() || (!include_ortho && term.ortho_mask) {
            continue;
        }
        let t = term.apply(x)?;
        match &mut acc {
            Some(a) => {
                a.add_assign_scaled(&t, 1.0)?;
            }
            None => acc = Some(t),
        }
    }
    Ok(acc)
}

/// Quadratic part of the half-step gradient for the left factor:
/// `W0R * X * (R W0C R^T) + sum_j A_j X B_j`, with `r_gram = R W0C R^T`.
pub(crate) fn quad_operator_l(
    x: &Matrix,
    r_gram: &Matrix,
    w: &WeightConfig,
    include_ortho: bool,
) -> Result<Matrix> {
    let mut f = w.w0r.left_apply(&x.matmul(r_gram)?)?;
    if let Some(l2) = apply_l2_terms(x, &w.l2_terms_l, include_ortho)? {
        f.add_assign_scaled(&l2, 1.0)?;
    }
    Ok(f)
}

/// Quadratic part of the half-step gradient for the right factor:
/// `(L^T W0R L) * X * W0C + sum_j C_j X D_j`, with `l_gram = L^T W0R L`.
pub(crate) fn quad_operator_r(
    x: &Matrix,
    l_gram: &Matrix,
    w: &WeightConfig,
    include_ortho: bool,
) -> Result<Matrix> {
    let mut f = w.w0c.right_apply(&l_gram.matmul(x)?)?;
    if let Some(l2) = apply_l2_terms(x, &w.l2_terms_r, include_ortho)? {
        f.add_assign_scaled(&l2, 1.0)?;
    }
    Ok(f)
}

/// Full objective value at `(l, r)`.
pub fn objective(y: &Matrix, l: &Matrix, r: &Matrix, w: &WeightConfig) -> Result<f64> {
    w.check_y_shape(y)?;
    w.check_factor_shapes(l, r)?;
    let err = y.sub(&l.matmul(r)?)?;
    let werr = {
        let t = w.w0r.left_apply(&err)?;
        w.w0c.right_apply(&t)?
    };
    let mut total = 0.5 * err.trace_prod(&werr)?;
    total += w.w1l.trace_prod(l)?;
    total += w.w1r.trace_prod(r)?;
    if let Some(t) = apply_l2_terms(l, &w.l2_terms_l, true)? {
        total += 0.5 * l.trace_prod(&t)?;
    }
    if let Some(t) = apply_l2_terms(r, &w.l2_terms_r, true)? {
        total += 0.5 * r.trace_prod(&t)?;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { iter: 0 });
    }
    Ok(total)
}

/// Objective restricted to one factor with the other held fixed: the error
/// term plus that side's L1 and L2 terms only. This is the quantity the
/// vectorized half-problem of [`build_qp`] represents.
pub fn objective_half(
    y: &Matrix,
    l: &Matrix,
    r: &Matrix,
    side: Side,
    w: &WeightConfig,
) -> Result<f64> {
    w.check_y_shape(y)?;
    w.check_factor_shapes(l, r)?;
    let err = y.sub(&l.matmul(r)?)?;
    let werr = {
        let t = w.w0r.left_apply(&err)?;
        w.w0c.right_apply(&t)?
    };
    let mut total = 0.5 * err.trace_prod(&werr)?;
    match side {
        Side::L => {
            total += w.w1l.trace_prod(l)?;
            if let Some(t) = apply_l2_terms(l, &w.l2_terms_l, true)? {
                total += 0.5 * l.trace_prod(&t)?;
            }
        }
        Side::R => {
            total += w.w1r.trace_prod(r)?;
            if let Some(t) = apply_l2_terms(r, &w.l2_terms_r, true)? {
                total += 0.5 * r.trace_prod(&t)?;
            }
        }
    }
    Ok(total)
}

/// Gradient of [`objective`] with respect to the left factor.
pub fn gradient_l(y: &Matrix, l: &Matrix, r: &Matrix, w: &WeightConfig) -> Result<Matrix> {
    w.check_y_shape(y)?;
    w.check_factor_shapes(l, r)?;
    let yw = weighted_data(y, w)?;
    let rg = weighted_r_gram(r, w)?;
    let mut g = quad_operator_l(l, &rg, w, true)?;
    g.add_assign_scaled(&w.w1l, 1.0)?;
    g.add_assign_scaled(&yw.matmul(&r.transpose())?, -1.0)?;
    Ok(g)
}

/// Gradient of [`objective`] with respect to the right factor.
pub fn gradient_r(y: &Matrix, l: &Matrix, r: &Matrix, w: &WeightConfig) -> Result<Matrix> {
    w.check_y_shape(y)?;
    w.check_factor_shapes(l, r)?;
    let yw = weighted_data(y, w)?;
    let lg = weighted_l_gram(l, w)?;
    let mut g = quad_operator_r(r, &lg, w, true)?;
    g.add_assign_scaled(&w.w1r, 1.0)?;
    g.add_assign_scaled(&l.transpose().matmul(&yw)?, -1.0)?;
    Ok(g)
}

/// Vectorized half-problem `min 1/2 x^T G x + d^T x` over `x >= 0`.
///
/// `G` is symmetric and elementwise non-negative. It is positive
/// semidefinite whenever every quadratic weight is; orthogonality-mask
/// terms can make it indefinite, which the steppers tolerate through the
/// step-length guard.
#[derive(Debug, Clone)]
pub struct QpProblem {
    g: Matrix,
    dvec: Vector,
    constant: f64,
    warnings: Vec<String>,
}

impl QpProblem {
    pub fn new(g: Matrix, dvec: Vector) -> Result<Self> {
        if g.rows() != g.cols() {
            return Err(Error::Shape(format!(
                "G must be square, got {}x{}",
                g.rows(),
                g.cols()
            )));
        }
        if g.rows() != dvec.len() {
            return Err(Error::Shape(format!(
                "G order {} does not match d length {}",
                g.rows(),
                dvec.len()
            )));
        }
        if !g.is_finite() || !dvec.is_finite() {
            return Err(Error::InvalidArgument("QP data must be finite".into()));
        }
        if !g.is_non_negative() {
            return Err(Error::InvalidArgument(
                "G must be elementwise non-negative".into(),
            ));
        }
        if g.asymmetry() > SYMMETRY_TOL * g.max_abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "G must be symmetric within {SYMMETRY_TOL} relative"
            )));
        }
        Ok(QpProblem { g, dvec, constant: 0.0, warnings: Vec::new() })
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn dvec(&self) -> &Vector {
        &self.dvec
    }

    /// Constant term of the vectorized objective (the data-only term),
    /// kept so objective equivalence against the matrix form is testable.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn order(&self) -> usize {
        self.dvec.len()
    }

    /// `1/2 x^T G x + d^T x` (without the constant).
    pub fn objective(&self, x: &Vector) -> Result<f64> {
        let gx = crate::linalg::matvec(&self.g, x)?;
        Ok(0.5 * x.dot(&gx)? + self.dvec.dot(x)?)
    }

    /// `G x + d`.
    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        let mut gx = crate::linalg::matvec(&self.g, x)?;
        for (g, &d) in gx.data_mut().iter_mut().zip(self.dvec.data()) {
            *g += d;
        }
        Ok(gx)
    }
}

/// Build the vectorized half-problem for one side, holding the other factor
/// fixed, with the default order limit.
pub fn build_qp(
    y: &Matrix,
    l_fixed: &Matrix,
    r_fixed: &Matrix,
    side: Side,
    w: &WeightConfig,
) -> Result<QpProblem> {
    build_qp_with_limit(y, l_fixed, r_fixed, side, w, DEFAULT_QP_ORDER_LIMIT)
}

/// [`build_qp`] with an explicit cap on the vectorized problem order.
pub fn build_qp_with_limit(
    y: &Matrix,
    l_fixed: &Matrix,
    r_fixed: &Matrix,
    side: Side,
    w: &WeightConfig,
    order_limit: usize,
) -> Result<QpProblem> {
    w.check_y_shape(y)?;
    w.check_factor_shapes(l_fixed, r_fixed)?;
    let order = match side {
        Side::L => w.rows_y * w.rank,
        Side::R => w.rank * w.cols_y,
    };
    if order > order_limit {
        return Err(Error::Capacity(format!(
            "vectorized problem order {order} exceeds limit {order_limit}"
        )));
    }

    let mut warnings = Vec::new();
    let fixed_gram = match side {
        Side::L => r_fixed.matmul(&r_fixed.transpose())?,
        Side::R => l_fixed.transpose().matmul(l_fixed)?,
    };
    if let Ok(eigs) = symmetric_eigenvalues(&fixed_gram) {
        let max_eig = eigs.last().copied().unwrap_or(0.0);
        if eigs[0] <= 1e-10 * max_eig.max(1e-300) {
            warnings.push(format!(
                "fixed factor for side {side:?} is rank-deficient at tolerance 1e-10; \
                 the half-problem may have non-unique solutions"
            ));
        }
    }

    let yw = weighted_data(y, w)?;
    let (mut g, dvec) = match side {
        Side::L => {
            let rg = weighted_r_gram(r_fixed, w)?;
            let mut g = rg.kron(&w.w0r.to_matrix())?;
            for term in &w.l2_terms_l {
                if term.is_vanishing() {
                    continue;
                }
                let k = term.col_weight.to_matrix().kron(&term.row_weight.to_matrix())?;
                g.add_assign_scaled(&k, 1.0)?;
            }
            let mut dmat = w.w1l.clone();
            dmat.add_assign_scaled(&yw.matmul(&r_fixed.transpose())?, -1.0)?;
            (g, dmat.vectorize())
        }
        Side::R => {
            let lg = weighted_l_gram(l_fixed, w)?;
            let mut g = w.w0c.to_matrix().kron(&lg)?;
            for term in &w.l2_terms_r {
                if term.is_vanishing() {
                    continue;
                }
                let k = term.col_weight.to_matrix().kron(&term.row_weight.to_matrix())?;
                g.add_assign_scaled(&k, 1.0)?;
            }
            let mut dmat = w.w1r.clone();
            dmat.add_assign_scaled(&l_fixed.transpose().matmul(&yw)?, -1.0)?;
            (g, dmat.vectorize())
        }
    };
    g.symmetrize();
    let constant = 0.5 * y.trace_prod(&yw)?;
    let mut qp = QpProblem::new(g, dvec)?.with_constant(constant);
    qp.warnings = warnings;
    Ok(qp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.next_open01())
    }

    fn scalar_config(s: ScalarWeights, m: usize, n: usize, d: usize) -> WeightConfig {
        expand_scalar_weights(&s, m, n, d).unwrap()
    }

    #[test]
    fn zero_scalars_reduce_to_plain_frobenius_objective() {
        let mut rng = Rng::new(1);
        let y = random_matrix(&mut rng, 4, 3);
        let l = random_matrix(&mut rng, 4, 2);
        let r = random_matrix(&mut rng, 2, 3);
        let w = scalar_config(ScalarWeights::default(), 4, 3, 2);
        let e = y.sub(&l.matmul(&r).unwrap()).unwrap();
        let expect = 0.5 * e.trace_prod(&e).unwrap();
        assert_eq!(objective(&y, &l, &r, &w).unwrap(), expect);
    }

    #[test]
    fn expanded_ridge_term_is_scaled_identity_pair() {
        let s = ScalarWeights::new(0.0, 0.0, 2.0, 0.0, 0.0, 0.0).unwrap();
        let w = scalar_config(s, 3, 5, 3);
        let term = &w.l2_terms_l()[0];
        assert_eq!(term.row_weight().to_matrix(), Matrix::identity(3).scale(2.0));
        assert_eq!(term.col_weight().to_matrix(), Matrix::identity(3));
    }

    #[test]
    fn expanded_orthogonality_mask_has_rank_order() {
        let s = ScalarWeights::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        let w = scalar_config(s, 4, 6, 2);
        let term = &w.l2_terms_r()[1];
        assert!(term.is_orthogonality());
        // The rank-2 off-diagonal mask sits on the slot touching the factor
        // Gram matrix; for the right factor that is the row slot.
        let mask = term.row_weight().to_matrix();
        assert_eq!(mask, Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        assert!(term.col_weight().is_identity());
    }

    #[test]
    fn negative_scalar_weight_rejected() {
        assert!(ScalarWeights::new(-0.1, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn exact_factorization_gives_zero_objective() {
        let mut rng = Rng::new(2);
        let l = random_matrix(&mut rng, 5, 2);
        let r = random_matrix(&mut rng, 2, 4);
        let y = l.matmul(&r).unwrap();
        let w = scalar_config(ScalarWeights::default(), 5, 4, 2);
        assert_eq!(objective(&y, &l, &r, &w).unwrap(), 0.0);
    }

    #[test]
    fn one_by_one_l1_hand_case() {
        let y = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let l = y.clone();
        let r = y.clone();
        let s = ScalarWeights::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let w = scalar_config(s, 1, 1, 1);
        assert_eq!(objective(&y, &l, &r, &w).unwrap(), 2.0);
    }

    #[test]
    fn orthogonality_penalty_sums_off_diagonal_gram_entries() {
        let mut rng = Rng::new(3);
        let gamma = 0.7;
        let l = random_matrix(&mut rng, 5, 3);
        let r = random_matrix(&mut rng, 3, 4);
        let y = Matrix::zeros(5, 4);
        let s = ScalarWeights::new(0.0, 0.0, 0.0, 0.0, gamma, 0.0).unwrap();
        let w = scalar_config(s, 5, 4, 3);
        let w_plain = scalar_config(ScalarWeights::default(), 5, 4, 3);
        let penalty =
            objective(&y, &l, &r, &w).unwrap() - objective(&y, &l, &r, &w_plain).unwrap();
        let gram = l.transpose().matmul(&l).unwrap();
        let mut off_sum = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    off_sum += gram[(i, j)];
                }
            }
        }
        assert!((penalty - 0.5 * gamma * off_sum).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = Rng::new(4);
        for _ in 0..10 {
            let (m, n, d) = (
                2 + rng.next_below(5),
                2 + rng.next_below(4),
                1 + rng.next_below(2),
            );
            let y = random_matrix(&mut rng, m, n);
            let l = random_matrix(&mut rng, m, d);
            let r = random_matrix(&mut rng, d, n);
            let s = ScalarWeights::new(
                rng.next_open01(),
                rng.next_open01(),
                rng.next_open01(),
                rng.next_open01(),
                rng.next_open01(),
                rng.next_open01(),
            )
            .unwrap();
            let w = scalar_config(s, m, n, d);

            let gl = gradient_l(&y, &l, &r, &w).unwrap();
            for i in 0..m {
                for j in 0..d {
                    let h = 1e-6 * (1.0 + l[(i, j)].abs());
                    let mut lp = l.clone();
                    lp[(i, j)] += h;
                    let mut lm = l.clone();
                    lm[(i, j)] -= h;
                    let fd = (objective(&y, &lp, &r, &w).unwrap()
                        - objective(&y, &lm, &r, &w).unwrap())
                        / (2.0 * h);
                    let rel = (fd - gl[(i, j)]).abs() / gl[(i, j)].abs().max(1.0);
                    assert!(rel < 1e-5, "gradient_l mismatch at ({i}, {j}): {rel}");
                }
            }

            let gr = gradient_r(&y, &l, &r, &w).unwrap();
            for i in 0..d {
                for j in 0..n {
                    let h = 1e-6 * (1.0 + r[(i, j)].abs());
                    let mut rp = r.clone();
                    rp[(i, j)] += h;
                    let mut rm = r.clone();
                    rm[(i, j)] -= h;
                    let fd = (objective(&y, &l, &rp, &w).unwrap()
                        - objective(&y, &l, &rm, &w).unwrap())
                        / (2.0 * h);
                    let rel = (fd - gr[(i, j)]).abs() / gr[(i, j)].abs().max(1.0);
                    assert!(rel < 1e-5, "gradient_r mismatch at ({i}, {j}): {rel}");
                }
            }
        }
    }

    #[test]
    fn vectorized_gradient_matches_matrix_gradient() {
        let mut rng = Rng::new(5);
        let (m, n, d) = (4, 3, 2);
        let y = random_matrix(&mut rng, m, n);
        let l = random_matrix(&mut rng, m, d);
        let r = random_matrix(&mut rng, d, n);
        let s = ScalarWeights::new(0.3, 0.2, 0.5, 0.4, 0.1, 0.6).unwrap();
        let w = scalar_config(s, m, n, d);

        for side in [Side::L, Side::R] {
            let qp = build_qp(&y, &l, &r, side, &w).unwrap();
            let (x, grad_mat) = match side {
                Side::L => (l.vectorize(), gradient_l(&y, &l, &r, &w).unwrap()),
                Side::R => (r.vectorize(), gradient_r(&y, &l, &r, &w).unwrap()),
            };
            let grad_vec = qp.gradient(&x).unwrap();
            let expect = grad_mat.vectorize();
            for i in 0..x.len() {
                assert!(
                    (grad_vec[i] - expect[i]).abs() < 1e-10,
                    "side {side:?} entry {i}"
                );
            }
        }
    }

    #[test]
    fn vectorized_objective_matches_half_objective() {
        let mut rng = Rng::new(6);
        let (m, n, d) = (5, 4, 2);
        let y = random_matrix(&mut rng, m, n);
        let l = random_matrix(&mut rng, m, d);
        let r = random_matrix(&mut rng, d, n);
        let s = ScalarWeights::new(0.2, 0.1, 0.3, 0.2, 0.4, 0.5).unwrap();
        let w = scalar_config(s, m, n, d);

        for side in [Side::L, Side::R] {
            let qp = build_qp(&y, &l, &r, side, &w).unwrap();
            let x = match side {
                Side::L => l.vectorize(),
                Side::R => r.vectorize(),
            };
            let lhs = qp.objective(&x).unwrap() + qp.constant();
            let rhs = objective_half(&y, &l, &r, side, &w).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "side {side:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn gradient_vanishes_at_unconstrained_half_optimum() {
        // Solve G x = -d densely (test-only elimination), then check the
        // matrix gradient at the reshaped optimum.
        let mut rng = Rng::new(7);
        let (m, n, d) = (4, 3, 2);
        let y = random_matrix(&mut rng, m, n);
        let l = random_matrix(&mut rng, m, d);
        let r = random_matrix(&mut rng, d, n);
        let s = ScalarWeights::new(0.0, 0.0, 0.2, 0.0, 0.0, 0.0).unwrap();
        let w = scalar_config(s, m, n, d);
        let qp = build_qp(&y, &l, &r, Side::L, &w).unwrap();
        let rhs: Vec<f64> = qp.dvec().data().iter().map(|&v| -v).collect();
        let x = solve_dense(qp.g(), &rhs);
        let l_opt = Matrix::unvectorize(&Vector::new(x).unwrap(), m, d).unwrap();
        let g = gradient_l(&y, &l_opt, &r, &w).unwrap();
        assert!(g.max_abs() < 1e-10, "gradient at optimum: {}", g.max_abs());
    }

    #[test]
    fn identity_reduction_pattern_for_side_r() {
        let y = Matrix::identity(2);
        let l = Matrix::identity(2);
        let r = Matrix::from_rows(&[vec![0.5, 0.25], vec![0.75, 1.0]]).unwrap();
        let w = WeightConfig::identity(2, 2, 2);
        let qp = build_qp(&y, &l, &r, Side::R, &w).unwrap();
        let expect = Matrix::identity(2)
            .kron(&l.transpose().matmul(&l).unwrap())
            .unwrap();
        assert_eq!(qp.g(), &expect);
    }

    #[test]
    fn zero_w1_gives_pure_data_linear_term() {
        let mut rng = Rng::new(8);
        let (m, n, d) = (4, 3, 2);
        let y = random_matrix(&mut rng, m, n);
        let l = random_matrix(&mut rng, m, d);
        let r = random_matrix(&mut rng, d, n);
        let w = scalar_config(ScalarWeights::default(), m, n, d);
        let qp = build_qp(&y, &l, &r, Side::L, &w).unwrap();
        let expect = y.matmul(&r.transpose()).unwrap().scale(-1.0).vectorize();
        for i in 0..expect.len() {
            assert!((qp.dvec()[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn qp_order_limit_enforced() {
        let y = Matrix::zeros(60, 3);
        let l = Matrix::zeros(60, 2);
        let r = Matrix::zeros(2, 3);
        let w = WeightConfig::identity(60, 3, 2);
        assert!(matches!(
            build_qp_with_limit(&y, &l, &r, Side::L, &w, 100),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn rank_deficient_fixed_factor_warns_not_errors() {
        let y = Matrix::filled(3, 4, 1.0);
        let l = Matrix::filled(3, 2, 1.0);
        // Both rows of R identical: rank 1 < 2.
        let r = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let w = WeightConfig::identity(3, 4, 2);
        let qp = build_qp(&y, &l, &r, Side::L, &w).unwrap();
        assert!(!qp.warnings().is_empty());
    }

    #[test]
    fn non_psd_w0_rejected() {
        // Symmetric, non-negative, but indefinite: [[0, 1], [1, 0]].
        let bad = WeightMat::from_dense(
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        );
        let res = WeightConfig::new(
            bad,
            WeightMat::identity(3),
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 3),
            vec![],
            vec![],
            2,
            3,
            2,
        );
        assert!(matches!(res, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn large_dense_weight_skips_psd_check_with_warning() {
        let order = 501;
        let mut m = Matrix::identity(order);
        // Perturb one off-diagonal pair so it does not classify as identity.
        m[(0, 1)] = 0.5;
        m[(1, 0)] = 0.5;
        let w = WeightConfig::new(
            WeightMat::from_dense(m),
            WeightMat::identity(4),
            Matrix::zeros(order, 2),
            Matrix::zeros(2, 4),
            vec![],
            vec![],
            order,
            4,
            2,
        )
        .unwrap();
        assert!(!w.psd_checked());
        assert!(w.warnings().iter().any(|s| s.contains("skipped")));
    }

    #[test]
    fn qp_problem_rejects_asymmetric_or_negative_g() {
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        let d = Vector::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            QpProblem::new(asym, d.clone()),
            Err(Error::InvalidArgument(_))
        ));
        let neg = Matrix::from_rows(&[vec![1.0, -0.1], vec![-0.1, 1.0]]).unwrap();
        assert!(matches!(QpProblem::new(neg, d), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn negative_weight_entry_rejected() {
        let mut w1 = Matrix::zeros(2, 2);
        w1[(0, 0)] = -1.0;
        let res = WeightConfig::new(
            WeightMat::identity(2),
            WeightMat::identity(3),
            w1,
            Matrix::zeros(2, 3),
            vec![],
            vec![],
            2,
            3,
            2,
        );
        assert!(matches!(res, Err(Error::InvalidArgument(_))));
    }

    // Test-only dense solve by Gaussian elimination with partial pivoting.
    fn solve_dense(g: &Matrix, rhs: &[f64]) -> Vec<f64> {
        let n = g.rows();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| g[(i, j)]).collect();
                row.push(rhs[i]);
                row
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let p = a[col][col];
            assert!(p.abs() > 1e-12, "singular test matrix");
            let pivot_row = a[col].clone();
            for (i, row) in a.iter_mut().enumerate() {
                if i == col {
                    continue;
                }
                let f = row[col] / p;
                for (v, pv) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *v -= f * pv;
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }
}
