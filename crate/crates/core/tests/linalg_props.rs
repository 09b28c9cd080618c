//! Properties of the dense kernels on random matrices.

use mscat::linalg::{herm_eig, herm_eigvals, op_norm, singular_values, solve};
use mscat::{Complex64, ComplexMatrix};
use proptest::prelude::*;

fn matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
    proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n)
        .prop_map(move |v| ComplexMatrix::from_vec(n, n, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

    #[test]
    fn eigendecomposition_reconstructs(a in (2usize..12).prop_flat_map(matrix)) {
        let h = a.hermitian_part();
        let e = herm_eig(&h).unwrap();
        let n = h.rows();
        let d = ComplexMatrix::from_real_diag(&e.eigenvalues);
        let back = e.eigenvectors.matmul(&d).matmul(&e.eigenvectors.adjoint());
        let scale = h.norm_fro().max(1.0);
        prop_assert!((&back - &h).norm_max() < 1e-12 * scale);
        let gram = e.eigenvectors.adjoint().matmul(&e.eigenvectors);
        prop_assert!((&gram - &ComplexMatrix::identity(n)).norm_max() < 1e-12);
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigenvalues_alone_match_the_decomposition(a in (2usize..12).prop_flat_map(matrix)) {
        let h = a.hermitian_part();
        let full = herm_eig(&h).unwrap().eigenvalues;
        let only = herm_eigvals(&h).unwrap();
        for (x, y) in full.iter().zip(&only) {
            prop_assert!((x - y).abs() < 1e-12 * h.norm_fro().max(1.0));
        }
    }

    #[test]
    fn singular_values_bound_the_action(a in (2usize..10).prop_flat_map(matrix), v in proptest::collection::vec(-1.0f64..1.0, 10)) {
        let n = a.rows();
        let x: Vec<Complex64> = v[..n].iter().map(|&t| Complex64::new(t, 0.5 * t)).collect();
        let nx = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let ax = a.mul_vec(&x).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(ax <= op_norm(&a) * nx * (1.0 + 1e-12) + 1e-14);
        // Sum of squares of singular values is the squared Frobenius norm.
        let s2: f64 = singular_values(&a).iter().map(|s| s * s).sum();
        prop_assert!((s2 - a.norm_fro().powi(2)).abs() < 1e-11 * s2.max(1.0));
    }

    #[test]
    fn solve_inverts_diagonally_dominant_systems(a in (2usize..12).prop_flat_map(matrix)) {
        let n = a.rows();
        let a = a.shift_diag(Complex64::new(2.0 * n as f64, 0.0));
        let b = ComplexMatrix::from_fn(n, 2, |i, j| Complex64::new(i as f64, j as f64 + 1.0));
        let x = solve(&a, &b).unwrap();
        prop_assert!((&a.matmul(&x) - &b).norm_max() < 1e-12 * b.norm_max() * n as f64);
    }
}
