//! Fixtures shared by the benchmarks in `benches/`.

use mscat::model::{build_system, make_random_channels, random_perturbation, with_a_inf};
use mscat::{Complex64, ComplexMatrix, MultichannelSystem};

/// Deterministic dense Hermitian matrix of order n.
pub fn hermitian(n: usize) -> ComplexMatrix {
    let a = ComplexMatrix::from_fn(n, n, |i, j| Complex64::new(((i * 7 + j * 3) as f64).sin(), ((i + 2 * j) as f64).cos()));
    a.hermitian_part()
}

/// Random coupled system with a perturbation at infinity.
pub fn system(n: usize, channels: usize) -> MultichannelSystem {
    let set = make_random_channels(n, channels, 0.1, 1).expect("factory parameters are valid");
    let set = with_a_inf(&set, random_perturbation(n, 0.3, 2)).expect("dimensions match");
    build_system(set).expect("random systems satisfy the assumptions")
}
