//! Command implementations behind the binary: factorization runs, the
//! simulation harness, and the standalone non-negative QP solver.

use std::path::PathBuf;

use rnmf_core::linalg::Matrix;
use rnmf_core::nmf::{
    aurnmf, init_factors, murnmf, InitStrategy, NmfMethod, NmfOptions, NmfResult, StepMode,
    TraceRecord, Weighting,
};
use rnmf_core::postprocess::{canonicalize, r_squared};
use rnmf_core::qp::{giqpm_solve, QpSolveOptions, StepStrategy};
use rnmf_core::rng::Rng;
use rnmf_core::weights::{QpProblem, ScalarWeights};
use rnmf_core::Error as CoreError;

use crate::error::{CliError, Result};
use crate::io::{
    key_values_to_text, load_matrix, load_vector, matrix_to_csv, save_vector, trace_to_csv,
    write_atomic, MatrixFormat,
};

/// Solver knobs shared by the factorize and simulate commands.
#[derive(Debug, Clone)]
pub struct SolverFlags {
    pub method: NmfMethod,
    pub l1_l: f64,
    pub l1_r: f64,
    pub l2_l: f64,
    pub l2_r: f64,
    pub ortho_l: f64,
    pub ortho_r: f64,
    pub epsilon: Option<f64>,
    pub tau: f64,
    pub step_mode: StepMode,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub init_sparsity: f64,
}

impl Default for SolverFlags {
    fn default() -> Self {
        SolverFlags {
            method: NmfMethod::Mur,
            l1_l: 0.0,
            l1_r: 0.0,
            l2_l: 0.0,
            l2_r: 0.0,
            ortho_l: 0.0,
            ortho_r: 0.0,
            epsilon: None,
            tau: 0.5,
            step_mode: StepMode::Optimal,
            max_iters: 5000,
            rel_tol: 1e-9,
            seed: 0,
            init_sparsity: 0.0,
        }
    }
}

impl SolverFlags {
    fn options(&self, rank: usize) -> Result<NmfOptions> {
        let weights = ScalarWeights::new(
            self.l1_l,
            self.l1_r,
            self.l2_l,
            self.l2_r,
            self.ortho_l,
            self.ortho_r,
        )?;
        let mut opts = NmfOptions::new(rank, self.method);
        opts.weighting = Weighting::Scalar(weights);
        opts.epsilon = self.epsilon;
        opts.tau = self.tau;
        opts.step_mode = self.step_mode;
        opts.max_iters = self.max_iters;
        opts.rel_tol = self.rel_tol;
        opts.seed = self.seed;
        opts.init = InitStrategy::UniformRandom { sparsity: self.init_sparsity };
        Ok(opts)
    }
}

#[derive(Debug, Clone)]
pub struct FactorizeConfig {
    pub input: PathBuf,
    pub format: MatrixFormat,
    /// Declared (rows, cols) for triplet input.
    pub shape: Option<(usize, usize)>,
    pub rank: usize,
    /// Rescale each row of the input to sum to one before fitting; rows
    /// with zero sum are left alone.
    pub row_normalize: bool,
    pub out_dir: PathBuf,
    pub solver: SolverFlags,
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub rows: usize,
    pub cols: usize,
    pub true_rank: usize,
    pub fit_rank: usize,
    /// Fraction of zeroed entries in the starting iterates.
    pub sparsity: f64,
    pub out_dir: PathBuf,
    pub solver: SolverFlags,
}

#[derive(Debug, Clone)]
pub struct QpConfig {
    pub g_path: PathBuf,
    pub d_path: PathBuf,
    pub strategy: StepStrategy,
    pub tau: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn run_method(y: &Matrix, opts: &NmfOptions) -> Result<NmfResult> {
    Ok(match opts.method {
        NmfMethod::Mur => murnmf(y, opts)?,
        NmfMethod::Aur => aurnmf(y, opts)?,
    })
}

fn require_non_negative(y: &Matrix, what: &str) -> Result<()> {
    for i in 0..y.rows() {
        for j in 0..y.cols() {
            if y[(i, j)] < 0.0 {
                return Err(CliError::Validation(format!(
                    "{what} must be non-negative; entry ({i}, {j}) is {}",
                    y[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

fn row_normalize(y: &mut Matrix) {
    let sums = y.row_sums();
    for i in 0..y.rows() {
        if sums[i] > 0.0 {
            for j in 0..y.cols() {
                y[(i, j)] /= sums[i];
            }
        }
    }
}

fn strategy_name(s: StepStrategy) -> &'static str {
    match s {
        StepStrategy::LeeSeung => "lee-seung",
        StepStrategy::ScaledGradient => "scaled-gradient",
        StepStrategy::SteepestDescent => "steepest-descent",
        StepStrategy::DiagPrecond => "diag-precond",
    }
}

/// First iteration at which the trace's residual norm drops to `threshold`.
fn iters_to_threshold(trace: &[TraceRecord], threshold: f64) -> Option<usize> {
    trace.iter().find(|t| t.frob_error <= threshold).map(|t| t.iter)
}

fn crossing_value(c: Option<usize>) -> String {
    c.map(|i| i.to_string()).unwrap_or_else(|| "never".into())
}

/// Factorize a matrix file and write `factors_L.csv`, `factors_R.csv`,
/// `trace.csv`, and `summary.txt` into the output directory. Nothing is
/// written until the solve succeeds. Returns the summary pairs.
pub fn run_factorize(cfg: &FactorizeConfig) -> Result<Vec<(String, String)>> {
    let mut y = load_matrix(&cfg.input, cfg.format, cfg.shape)?;
    require_non_negative(&y, "input matrix")?;
    if cfg.row_normalize {
        row_normalize(&mut y);
    }
    let opts = cfg.solver.options(cfg.rank)?;
    let result = run_method(&y, &opts)?;

    let canon = canonicalize(&result.factors)?;
    let r2 = match r_squared(&y, &canon.factors) {
        Ok(v) => v.to_string(),
        Err(CoreError::UndefinedMetric(_)) => "undefined".to_string(),
        Err(e) => return Err(e.into()),
    };
    let last = result.trace.last().expect("trace always has the initial record");
    let summary = vec![
        ("method".to_string(), opts.method.to_string()),
        ("status".to_string(), result.status.to_string()),
        ("iterations".to_string(), last.iter.to_string()),
        ("objective".to_string(), last.objective.to_string()),
        ("frob_error".to_string(), last.frob_error.to_string()),
        ("r_squared".to_string(), r2),
    ];

    std::fs::create_dir_all(&cfg.out_dir)?;
    write_atomic(&cfg.out_dir.join("factors_L.csv"), &matrix_to_csv(canon.factors.l()))?;
    write_atomic(&cfg.out_dir.join("factors_R.csv"), &matrix_to_csv(canon.factors.r()))?;
    write_atomic(&cfg.out_dir.join("trace.csv"), &trace_to_csv(result.trace.iter()))?;
    write_atomic(&cfg.out_dir.join("summary.txt"), &key_values_to_text(&summary))?;
    Ok(summary)
}

/// Generate an exactly factorable matrix from seeded uniform factors, run
/// both update rules from one common start, and write a trace per method
/// plus a comparison summary. Trace files are named
/// `trace_{mur,aur}_{dense,sparse}.csv` by the start type.
pub fn run_simulate(cfg: &SimulateConfig) -> Result<Vec<(String, String)>> {
    if cfg.rows == 0 || cfg.cols == 0 || cfg.true_rank == 0 || cfg.fit_rank == 0 {
        return Err(CliError::Validation("simulation dimensions must be positive".into()));
    }
    let mut rng = Rng::new(cfg.solver.seed);
    let true_l = Matrix::from_fn(cfg.rows, cfg.true_rank, |_, _| rng.next_open01());
    let true_r = Matrix::from_fn(cfg.true_rank, cfg.cols, |_, _| rng.next_open01());
    let y = true_l.matmul(&true_r)?;
    let norm_y = y.frobenius_norm();

    // Both methods share one starting point, drawn from a seed offset so
    // the start does not reuse the data stream.
    let start = init_factors(
        cfg.rows,
        cfg.cols,
        cfg.fit_rank,
        cfg.solver.seed.wrapping_add(1),
        cfg.sparsity,
        y.mean_abs(),
    )?;
    let start_type = if cfg.sparsity > 0.0 { "sparse" } else { "dense" };

    let mut mur_flags = cfg.solver.clone();
    mur_flags.method = NmfMethod::Mur;
    let mut mur_opts = mur_flags.options(cfg.fit_rank)?;
    mur_opts.init = InitStrategy::Given(start.clone());
    let mur = murnmf(&y, &mur_opts)?;

    let mut aur_flags = cfg.solver.clone();
    aur_flags.method = NmfMethod::Aur;
    let mut aur_opts = aur_flags.options(cfg.fit_rank)?;
    aur_opts.init = InitStrategy::Given(start);
    let aur = aurnmf(&y, &aur_opts)?;

    let loose = 1e-2 * norm_y;
    let tight = 1e-3 * norm_y;
    let mut summary = vec![
        ("rows".to_string(), cfg.rows.to_string()),
        ("cols".to_string(), cfg.cols.to_string()),
        ("true_rank".to_string(), cfg.true_rank.to_string()),
        ("fit_rank".to_string(), cfg.fit_rank.to_string()),
        ("sparsity".to_string(), cfg.sparsity.to_string()),
        ("seed".to_string(), cfg.solver.seed.to_string()),
        ("start_type".to_string(), start_type.to_string()),
        ("norm_y".to_string(), norm_y.to_string()),
        ("threshold_loose".to_string(), loose.to_string()),
        ("threshold_tight".to_string(), tight.to_string()),
    ];
    for (name, res) in [("mur", &mur), ("aur", &aur)] {
        let last = res.trace.last().unwrap();
        summary.push((format!("{name}_status"), res.status.to_string()));
        summary.push((format!("{name}_iterations"), last.iter.to_string()));
        summary.push((format!("{name}_final_objective"), last.objective.to_string()));
        summary.push((format!("{name}_final_frob"), last.frob_error.to_string()));
        summary.push((
            format!("{name}_iters_to_loose"),
            crossing_value(iters_to_threshold(&res.trace, loose)),
        ));
        summary.push((
            format!("{name}_iters_to_tight"),
            crossing_value(iters_to_threshold(&res.trace, tight)),
        ));
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    write_atomic(
        &cfg.out_dir.join(format!("trace_mur_{start_type}.csv")),
        &trace_to_csv(mur.trace.iter()),
    )?;
    write_atomic(
        &cfg.out_dir.join(format!("trace_aur_{start_type}.csv")),
        &trace_to_csv(aur.trace.iter()),
    )?;
    write_atomic(&cfg.out_dir.join("summary.txt"), &key_values_to_text(&summary))?;
    Ok(summary)
}

/// Solve `min 1/2 x^T G x + d^T x, x >= 0` from files and write the
/// solution vector, trace, and summary.
pub fn run_qp(cfg: &QpConfig) -> Result<Vec<(String, String)>> {
    let mut g = load_matrix(&cfg.g_path, MatrixFormat::Dense, None)?;
    if g.rows() != g.cols() {
        return Err(CliError::Validation(format!(
            "G must be square, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    if g.asymmetry() > 1e-9 {
        return Err(CliError::Validation(format!(
            "G is asymmetric beyond 1e-9 (max deviation {:.3e})",
            g.asymmetry()
        )));
    }
    g.symmetrize();
    let d = load_vector(&cfg.d_path)?;
    if d.len() != g.rows() {
        return Err(CliError::Validation(format!(
            "d has length {}, G has order {}",
            d.len(),
            g.rows()
        )));
    }
    let qp = QpProblem::new(g, d)?;
    let opts = QpSolveOptions {
        max_iters: cfg.max_iters,
        rel_tol: cfg.rel_tol,
        tau: cfg.tau,
        strategy: cfg.strategy,
        seed: cfg.seed,
    };
    let sol = giqpm_solve(&qp, &opts)?;

    let last = sol.trace.last().unwrap();
    let summary = vec![
        ("strategy".to_string(), strategy_name(cfg.strategy).to_string()),
        ("status".to_string(), sol.status.to_string()),
        ("iterations".to_string(), last.iter.to_string()),
        ("objective".to_string(), last.objective.to_string()),
        ("order".to_string(), qp.order().to_string()),
    ];

    std::fs::create_dir_all(&cfg.out_dir)?;
    save_vector(&cfg.out_dir.join("solution.csv"), &sol.x)?;
    write_atomic(&cfg.out_dir.join("trace.csv"), &trace_to_csv(sol.trace.iter()))?;
    write_atomic(&cfg.out_dir.join("summary.txt"), &key_values_to_text(&summary))?;
    Ok(summary)
}
