// Keeps the README's library example honest.

use rnmf_core::linalg::Matrix;
use rnmf_core::nmf::{aurnmf, NmfMethod, NmfOptions, Weighting};
use rnmf_core::postprocess::{canonicalize, r_squared};
use rnmf_core::weights::ScalarWeights;

#[test]
fn readme_library_example_runs() -> Result<(), rnmf_core::Error> {
    let y = Matrix::from_rows(&[
        vec![5.0, 3.0, 0.0],
        vec![3.0, 5.0, 0.0],
        vec![0.0, 0.0, 4.0],
        vec![1.0, 1.0, 2.0],
    ])?;

    let mut opts = NmfOptions::new(2, NmfMethod::Aur);
    opts.weighting = Weighting::Scalar(ScalarWeights::new(0.1, 0.1, 0.0, 0.0, 0.0, 0.25)?);
    opts.seed = 7;

    let result = aurnmf(&y, &opts)?;
    let canon = canonicalize(&result.factors)?;
    println!("status {} r^2 {:.4}", result.status, r_squared(&y, &canon.factors)?);
    Ok(())
}
