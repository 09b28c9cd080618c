//! The N-body stacking: H = H₀ + ΣV_j, A₀ = diag(H₀ + V_1, …, H₀ + V_N) on
//! ℋ^N, J the row sum, T the matrix with V_j across row j off the diagonal.
//! The resolvent of H comes from the Fredholm equation for R(z)J, and the
//! Faddeev equations and the Y_k system are checked against it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, op_norm, singular_values, ComplexMatrix, LinalgError, Lu, TOL_HERM};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FaddeevError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{which} is not Hermitian (defect {defect:.3e})")]
    NonHermitian { which: String, defect: f64 },
    #[error("Im z = 0 is not allowed")]
    RealEnergy,
    #[error("Fredholm operator is near singular (sigma_min = {sigma_min:.3e})")]
    NearSingularFredholm { sigma_min: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, FaddeevError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaddeevSystem {
    pub h0: ComplexMatrix,
    pub v: Vec<ComplexMatrix>,
    pub h: ComplexMatrix,
    pub a0: ComplexMatrix,
    pub j: ComplexMatrix,
    pub t: ComplexMatrix,
}

impl FaddeevSystem {
    pub fn n(&self) -> usize {
        self.h0.rows()
    }

    pub fn num_potentials(&self) -> usize {
        self.v.len()
    }

    /// H_k = H₀ + V_k.
    pub fn h_k(&self, k: usize) -> ComplexMatrix {
        &self.h0 + &self.v[k]
    }

    pub fn scale(&self) -> f64 {
        op_norm(&self.h) + op_norm(&self.a0)
    }

    /// ‖HJ − JA₀ − JT‖_op.
    pub fn factorisation_residual(&self) -> f64 {
        let lhs = &self.h.matmul(&self.j) - &self.j.matmul(&self.a0);
        op_norm(&(&lhs - &self.j.matmul(&self.t)))
    }
}

pub fn build_faddeev(h0: ComplexMatrix, potentials: Vec<ComplexMatrix>) -> Result<FaddeevSystem> {
    let n = h0.rows();
    if h0.cols() != n || potentials.is_empty() {
        return Err(FaddeevError::DimensionMismatch(format!("H0 is {}x{}, {} potentials", n, h0.cols(), potentials.len())));
    }
    let check = |m: &ComplexMatrix, which: String| -> Result<()> {
        if m.shape() != (n, n) {
            return Err(FaddeevError::DimensionMismatch(format!("{which} is {:?}, expected ({n}, {n})", m.shape())));
        }
        let defect = m.hermitian_defect();
        if defect > TOL_HERM * m.norm_max().max(1.0) {
            return Err(FaddeevError::NonHermitian { which, defect });
        }
        Ok(())
    };
    check(&h0, "H0".into())?;
    for (k, v) in potentials.iter().enumerate() {
        check(v, format!("V_{}", k + 1))?;
    }
    let nv = potentials.len();
    let mut h = h0.clone();
    for v in &potentials {
        h = &h + v;
    }
    let blocks: Vec<ComplexMatrix> = potentials.iter().map(|v| &h0 + v).collect();
    let a0 = ComplexMatrix::block_diag(&blocks.iter().collect::<Vec<_>>());
    let id = ComplexMatrix::identity(n);
    let j = ComplexMatrix::hstack(&vec![&id; nv]);
    let mut t = ComplexMatrix::zeros(n * nv, n * nv);
    for r in 0..nv {
        for c in 0..nv {
            if r != c {
                t.set_submatrix(r * n, c * n, &potentials[r]);
            }
        }
    }
    Ok(FaddeevSystem { h0, v: potentials, h, a0, j, t })
}

/// One-dimensional lattice Laplacian (2 on the diagonal, −1 off it) with
/// Gaussian bumps a·exp(−(x − c_j)²/(2w²)) as potentials.
pub fn lattice_model(n: usize, centers: &[f64], amplitude: f64, width: f64) -> Result<FaddeevSystem> {
    let h0 = laplacian(n);
    let potentials = centers
        .iter()
        .map(|&c| {
            let d: Vec<f64> =
                (0..n).map(|x| amplitude * (-(x as f64 - c).powi(2) / (2.0 * width * width)).exp()).collect();
            ComplexMatrix::from_real_diag(&d)
        })
        .collect();
    build_faddeev(h0, potentials)
}

/// Tridiagonal (2, −1) matrix.
pub fn laplacian(n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |a, b| {
        if a == b {
            Complex64::new(2.0, 0.0)
        } else if a.abs_diff(b) == 1 {
            Complex64::new(-1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

fn resolvent_of(m: &ComplexMatrix, z: Complex64) -> Result<ComplexMatrix> {
    Ok(linalg::solve(&m.shift_diag(-z), &ComplexMatrix::identity(m.rows()))?)
}

/// R₀(z) = diag(ℛ_1(z), …, ℛ_N(z)) with ℛ_k = (H_k − z)⁻¹.
fn free_blocks(sys: &FaddeevSystem, z: Complex64) -> Result<Vec<ComplexMatrix>> {
    (0..sys.num_potentials()).map(|k| resolvent_of(&sys.h_k(k), z)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompactnessReport {
    /// ‖V_j (H₀ − z)⁻¹ V_k‖_op, zero on the diagonal.
    pub norms: Vec<Vec<f64>>,
    /// Singular values of (TR₀(z))², descending.
    pub square_singular_values: Vec<f64>,
}

pub fn compactness_surrogate(sys: &FaddeevSystem, z: Complex64) -> Result<CompactnessReport> {
    if z.im == 0.0 {
        return Err(FaddeevError::RealEnergy);
    }
    let r0 = resolvent_of(&sys.h0, z)?;
    let nv = sys.num_potentials();
    let mut norms = vec![vec![0.0; nv]; nv];
    for j in 0..nv {
        for k in 0..nv {
            if j != k {
                norms[j][k] = op_norm(&sys.v[j].matmul(&r0).matmul(&sys.v[k]));
            }
        }
    }
    let tr0 = sys.t.matmul(&ComplexMatrix::block_diag(&free_blocks(sys, z)?.iter().collect::<Vec<_>>()));
    let square_singular_values = singular_values(&tr0.matmul(&tr0));
    Ok(CompactnessReport { norms, square_singular_values })
}

/// R(z) = (H − z)⁻¹ from R(z)J = JR₀(z)(I + TR₀(z))⁻¹, read off the first
/// column block.
pub fn resolvent_faddeev(sys: &FaddeevSystem, z: Complex64) -> Result<ComplexMatrix> {
    Ok(fredholm_solution(sys, z)?.0)
}

fn fredholm_solution(sys: &FaddeevSystem, z: Complex64) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if z.im == 0.0 {
        return Err(FaddeevError::RealEnergy);
    }
    let n = sys.n();
    let r0 = ComplexMatrix::block_diag(&free_blocks(sys, z)?.iter().collect::<Vec<_>>());
    let f = sys.t.matmul(&r0).shift_diag(ONE);
    let rhs = sys.j.matmul(&r0);
    let lu = match Lu::factor(&f.adjoint()) {
        Ok(lu) => lu,
        Err(LinalgError::Singular { .. }) => {
            return Err(FaddeevError::NearSingularFredholm { sigma_min: linalg::sigma_min(&f) })
        }
        Err(e) => return Err(e.into()),
    };
    let rj = lu.solve(&rhs.adjoint())?.adjoint();
    Ok((rj.columns(0, n), f))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaddeevResiduals {
    pub z_re: f64,
    pub z_im: f64,
    /// ‖R_Fredholm − (H − z)⁻¹‖_op / ‖(H − z)⁻¹‖_op.
    pub direct_relative: f64,
    /// cond(I + TR₀(z)).
    pub cond: f64,
    pub sigma_min: f64,
    /// ‖R(I + Σ_{j≠k}V_jℛ_k) − ℛ_k‖_op for each k.
    pub per_k: Vec<f64>,
    /// ‖Y_k + Σ_{j≠k}Y_jℛ_kV_k − ℛ_kV_k‖_op with Y_k = RV_k, for each k.
    pub y_system: Vec<f64>,
    /// Spread of the column blocks of R(z)J, which must all equal R(z).
    pub block_spread: f64,
}

impl FaddeevResiduals {
    pub fn max_residual(&self) -> f64 {
        self.per_k.iter().chain(&self.y_system).copied().fold(self.direct_relative, f64::max)
    }
}

pub fn faddeev_residuals(sys: &FaddeevSystem, z: Complex64) -> Result<FaddeevResiduals> {
    let (r, f) = fredholm_solution(sys, z)?;
    let n = sys.n();
    let nv = sys.num_potentials();
    let direct = resolvent_of(&sys.h, z)?;
    let direct_relative = op_norm(&(&r - &direct)) / op_norm(&direct);
    let sv = singular_values(&f);
    let sigma_min = *sv.last().unwrap_or(&0.0);
    let cond = sv.first().copied().unwrap_or(0.0) / sigma_min;
    let blocks = free_blocks(sys, z)?;
    let mut per_k = Vec::with_capacity(nv);
    let mut y_system = Vec::with_capacity(nv);
    let y: Vec<ComplexMatrix> = sys.v.iter().map(|v| r.matmul(v)).collect();
    for k in 0..nv {
        let mut s = ComplexMatrix::identity(n);
        let mut ysum = y[k].clone();
        let rv = blocks[k].matmul(&sys.v[k]);
        for j in 0..nv {
            if j != k {
                s = &s + &sys.v[j].matmul(&blocks[k]);
                ysum = &ysum + &y[j].matmul(&rv);
            }
        }
        per_k.push(op_norm(&(&r.matmul(&s) - &blocks[k])));
        y_system.push(op_norm(&(&ysum - &rv)));
    }
    // All column blocks of R(z)J coincide.
    let r0 = ComplexMatrix::block_diag(&blocks.iter().collect::<Vec<_>>());
    let lu = Lu::factor(&f.adjoint())?;
    let rj = lu.solve(&sys.j.matmul(&r0).adjoint())?.adjoint();
    let block_spread = (1..nv).map(|k| (&rj.columns(k * n, n) - &r).norm_max()).fold(0.0, f64::max);
    Ok(FaddeevResiduals { z_re: z.re, z_im: z.im, direct_relative, cond, sigma_min, per_k, y_system, block_spread })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn structure_of_t_and_factorisation() {
        let sys = lattice_model(12, &[2.0, 6.0, 10.0], 1.0, 1.0).unwrap();
        assert!(sys.factorisation_residual() < 1e-13);
        for k in 0..3 {
            assert_eq!(sys.t.submatrix(k * 12, k * 12, 12, 12).norm_max(), 0.0);
        }
        assert_eq!((&sys.t.submatrix(0, 24, 12, 12) - &sys.v[0]).norm_max(), 0.0);
        assert_eq!((&sys.t.submatrix(24, 12, 12, 12) - &sys.v[2]).norm_max(), 0.0);
    }

    #[test]
    fn single_potential_is_trivial() {
        let sys = lattice_model(8, &[3.0], 1.0, 1.0).unwrap();
        assert_eq!(sys.t.norm_max(), 0.0);
        assert!((&sys.a0 - &sys.h).norm_max() < 1e-15);
        let res = faddeev_residuals(&sys, c(1.0, 0.3)).unwrap();
        assert!(res.direct_relative < 1e-13);
        assert!(compactness_surrogate(&sys, c(1.0, 0.3)).unwrap().norms[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn three_body_lattice_residuals() {
        let sys = lattice_model(32, &[6.0, 16.0, 26.0], 1.5, 1.5).unwrap();
        let res = faddeev_residuals(&sys, c(2.0, 0.5)).unwrap();
        assert!(res.max_residual() < 1e-10, "{res:?}");
        assert!(res.block_spread < 1e-10);
        assert!(res.sigma_min > 0.0 && res.cond.is_finite());
        let r = resolvent_faddeev(&sys, c(2.0, 0.5)).unwrap();
        assert_eq!(r.shape(), (32, 32));
        assert!(matches!(resolvent_faddeev(&sys, c(2.0, 0.0)), Err(FaddeevError::RealEnergy)));
    }

    #[test]
    fn disjoint_hard_potentials_do_not_talk() {
        let h0 = ComplexMatrix::from_real_diag(&[0.5, 1.0, 1.5, 2.0]);
        let v1 = ComplexMatrix::from_real_diag(&[1.0, 0.0, 0.0, 0.0]);
        let v2 = ComplexMatrix::from_real_diag(&[0.0, 0.0, 0.7, 0.0]);
        let sys = build_faddeev(h0, vec![v1, v2]).unwrap();
        let rep = compactness_surrogate(&sys, c(1.0, 0.2)).unwrap();
        assert_eq!(rep.norms[0][1], 0.0);
        assert_eq!(rep.norms[1][0], 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let h0 = laplacian(4);
        assert!(matches!(build_faddeev(h0.clone(), vec![laplacian(3)]), Err(FaddeevError::DimensionMismatch(_))));
        let mut v = ComplexMatrix::zeros(4, 4);
        v[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(build_faddeev(h0, vec![v]), Err(FaddeevError::NonHermitian { .. })));
    }
}
