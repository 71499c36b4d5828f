use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rnmf_cli::commands::{
    run_factorize, run_qp, run_simulate, FactorizeConfig, QpConfig, SimulateConfig, SolverFlags,
};
use rnmf_cli::io::MatrixFormat;
use rnmf_core::nmf::{NmfMethod, StepMode};
use rnmf_core::qp::StepStrategy;

#[derive(Parser)]
#[command(
    name = "rnmf",
    version,
    about = "Regularized non-negative matrix factorization: multiplicative and additive solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Factorize a non-negative matrix file as L * R and write the
    /// canonicalized factors, the iteration trace, and a summary.
    Factorize(FactorizeArgs),
    /// Generate an exactly factorable matrix and compare both update rules
    /// from a common starting point.
    Simulate(SimulateArgs),
    /// Solve min 1/2 x^T G x + d^T x over x >= 0 from matrix files.
    Qp(QpArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mur,
    Aur,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Dense,
    Triplet,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepModeArg {
    Optimal,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    LeeSeung,
    ScaledGradient,
    SteepestDescent,
    DiagPrecond,
}

impl From<MethodArg> for NmfMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mur => NmfMethod::Mur,
            MethodArg::Aur => NmfMethod::Aur,
        }
    }
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Dense => MatrixFormat::Dense,
            FormatArg::Triplet => MatrixFormat::Triplet,
        }
    }
}

impl From<StepModeArg> for StepMode {
    fn from(s: StepModeArg) -> Self {
        match s {
            StepModeArg::Optimal => StepMode::Optimal,
            StepModeArg::Full => StepMode::Full,
        }
    }
}

impl From<StrategyArg> for StepStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::LeeSeung => StepStrategy::LeeSeung,
            StrategyArg::ScaledGradient => StepStrategy::ScaledGradient,
            StrategyArg::SteepestDescent => StepStrategy::SteepestDescent,
            StrategyArg::DiagPrecond => StepStrategy::DiagPrecond,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Update rule.
    #[arg(long, value_enum, default_value = "mur")]
    method: MethodArg,
    /// L1 penalty strength on the left factor.
    #[arg(long = "l1-l", default_value_t = 0.0)]
    l1_l: f64,
    /// L1 penalty strength on the right factor.
    #[arg(long = "l1-r", default_value_t = 0.0)]
    l1_r: f64,
    /// Ridge penalty strength on the left factor.
    #[arg(long = "l2-l", default_value_t = 0.0)]
    l2_l: f64,
    /// Ridge penalty strength on the right factor.
    #[arg(long = "l2-r", default_value_t = 0.0)]
    l2_r: f64,
    /// Off-diagonal (non-orthogonality) penalty on the left factor.
    #[arg(long = "ortho-l", default_value_t = 0.0)]
    ortho_l: f64,
    /// Off-diagonal (non-orthogonality) penalty on the right factor.
    #[arg(long = "ortho-r", default_value_t = 0.0)]
    ortho_r: f64,
    /// Numerator clip distance for the multiplicative update
    /// (default: 1e-7 * mean(|Y|)).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Feasibility step fraction lower bound, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Additive step length: exact line minimum or the naive capped step.
    #[arg(long = "step-mode", value_enum, default_value = "optimal")]
    step_mode: StepModeArg,
    #[arg(long = "max-iters", default_value_t = 5000)]
    max_iters: usize,
    /// Relative objective decrease declaring convergence.
    #[arg(long = "tol", default_value_t = 1e-9)]
    rel_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of zeroed entries in random starting iterates.
    #[arg(long = "init-sparsity", default_value_t = 0.0)]
    init_sparsity: f64,
}

impl SolverArgs {
    fn flags(&self) -> SolverFlags {
        SolverFlags {
            method: self.method.into(),
            l1_l: self.l1_l,
            l1_r: self.l1_r,
            l2_l: self.l2_l,
            l2_r: self.l2_r,
            ortho_l: self.ortho_l,
            ortho_r: self.ortho_r,
            epsilon: self.epsilon,
            tau: self.tau,
            step_mode: self.step_mode.into(),
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            seed: self.seed,
            init_sparsity: self.init_sparsity,
        }
    }
}

#[derive(Args)]
struct FactorizeArgs {
    /// Input matrix file.
    #[arg(long)]
    input: PathBuf,
    /// Input layout.
    #[arg(long, value_enum, default_value = "dense")]
    format: FormatArg,
    /// Declared row count for triplet input.
    #[arg(long)]
    rows: Option<usize>,
    /// Declared column count for triplet input.
    #[arg(long)]
    cols: Option<usize>,
    /// Factorization rank d.
    #[arg(long)]
    rank: usize,
    /// Rescale each input row to sum to one before fitting.
    #[arg(long = "row-normalize")]
    row_normalize: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 30)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    /// Rank of the generated data.
    #[arg(long = "true-rank", default_value_t = 2)]
    true_rank: usize,
    /// Rank used for fitting.
    #[arg(long = "fit-rank", default_value_t = 2)]
    fit_rank: usize,
    /// Fraction of zeroed entries in the common starting iterates.
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct QpArgs {
    /// Dense CSV file holding the symmetric non-negative matrix G.
    #[arg(long = "g-matrix")]
    g_matrix: PathBuf,
    /// File holding the linear term d (single row or column).
    #[arg(long = "d-vector")]
    d_vector: PathBuf,
    /// Descent direction strategy.
    #[arg(long, value_enum, default_value = "diag-precond")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    max_iters: usize,
    #[arg(long = "tol", default_value_t = 1e-9)]
    rel_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Factorize(args) => {
            let shape = match (args.rows, args.cols) {
                (Some(r), Some(c)) => Some((r, c)),
                (None, None) => None,
                _ => {
                    eprintln!("error: --rows and --cols must be given together");
                    return ExitCode::from(2);
                }
            };
            let cfg = FactorizeConfig {
                input: args.input,
                format: args.format.into(),
                shape,
                rank: args.rank,
                row_normalize: args.row_normalize,
                out_dir: args.out,
                solver: args.solver.flags(),
            };
            run_factorize(&cfg)
        }
        Command::Simulate(args) => {
            let cfg = SimulateConfig {
                rows: args.rows,
                cols: args.cols,
                true_rank: args.true_rank,
                fit_rank: args.fit_rank,
                sparsity: args.sparsity,
                out_dir: args.out,
                solver: args.solver.flags(),
            };
            run_simulate(&cfg)
        }
        Command::Qp(args) => {
            let cfg = QpConfig {
                g_path: args.g_matrix,
                d_path: args.d_vector,
                strategy: args.strategy.into(),
                tau: args.tau,
                max_iters: args.max_iters,
                rel_tol: args.rel_tol,
                seed: args.seed,
                out_dir: args.out,
            };
            run_qp(&cfg)
        }
    };
    match outcome {
        Ok(summary) => {
            for (k, v) in summary {
                println!("{k} {v}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
