//! Regularized non-negative matrix factorization.
//!
//! Approximates a non-negative matrix `Y` as a product `L * R` of smaller
//! non-negative factors under a weighted Frobenius loss with optional L1,
//! ridge, and off-diagonal (non-orthogonality) penalties. Two alternating
//! solvers are provided: a multiplicative update with clipped numerators
//! ([`nmf::murnmf`]) and an additive update with explicit step lengths that
//! can move factor entries off zero ([`nmf::aurnmf`]). Each half-step also
//! has a vectorized quadratic-program form ([`weights::build_qp`]) solved by
//! the generic non-negative QP stepper in [`qp`], used throughout the test
//! suite to cross-check the matrix-form algebra.

pub mod error;
pub mod linalg;
pub mod nmf;
pub mod postprocess;
pub mod qp;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::{HadamardOp, Matrix, Vector};
pub use nmf::{
    aurnmf, check_convergence, init_factors, murnmf, pick_direction, ConvergenceDecision,
    FactorPair, InitStrategy, NmfMethod, NmfOptions, NmfResult, StepMode, TraceRecord, Weighting,
};
pub use postprocess::{canonicalize, frobenius_error, r_squared, r_squared_weighted, CanonicalForm};
pub use qp::{
    b_step, direction, giqpm_solve, giqpm_step, mult_step, step_lengths, QpSolveOptions,
    QpSolution, QpTraceRecord, SolveStatus, StepStrategy,
};
pub use weights::{
    build_qp, expand_scalar_weights, gradient_l, gradient_r, objective, objective_half, L2Term,
    QpProblem, ScalarWeights, Side, WeightConfig, WeightMat,
};
