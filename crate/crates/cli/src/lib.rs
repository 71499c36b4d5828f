//! Command-line surface and data plumbing for the factorization library:
//! matrix file ingestion, factorization runs, the simulation harness, and
//! machine-readable trace emission for external plotting.

pub mod commands;
pub mod error;
pub mod io;

pub use commands::{
    run_factorize, run_qp, run_simulate, FactorizeConfig, QpConfig, SimulateConfig, SolverFlags,
};
pub use error::{CliError, Result};
pub use io::{load_matrix, load_vector, save_matrix, MatrixFormat};
