//! Resolvents of the triple, the Fredholm equations for R(z)J and for the
//! sandwiched resolvent QR(z)Q*, boundary values on the real axis by
//! ε-extrapolation, and the exceptional-set scanner.
//!
//! Two models of the free resolvent R₀(z) are available. `FreeModel::Exact`
//! is (A₀ − z)⁻¹ of the matrix. `FreeModel::Continuum` replaces every
//! eigenvalue μ of a channel band by a unit-mass hat density spread over the
//! neighbouring eigenvalues, which turns the point spectrum of a band into an
//! absolutely continuous one with a piecewise linear density. Boundary values
//! only exist in the second model; the first is what the exact identities are
//! checked against.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, inner, op_norm, vec_norm, ComplexMatrix, LinalgError, Lu};
use crate::model::{ModelError, MultichannelSystem};

/// Default relative floor |Im z| ≥ EPS_FLOOR · scale for exact evaluations.
pub const EPS_FLOOR: f64 = 1e-10;
/// Guard for the 1/z factors, relative to the system scale.
pub const Z_FLOOR: f64 = 1e-9;
/// Default threshold for flagging σ_min(I + G₀).
pub const SING_THRESH: f64 = 1e-6;
/// Fredholm operators with σ_min below this are reported as near singular.
pub const FREDHOLM_FLOOR: f64 = 1e-13;
/// Eigenvalues of a channel with |μ| below ZERO_TOL · scale are kernel atoms.
pub const ZERO_TOL: f64 = 1e-9;
/// A spacing larger than GAP_FACTOR times the median spacing separates bands.
pub const GAP_FACTOR: f64 = 4.0;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResolventError {
    #[error("Im z = {im:.3e} is below the floor {floor:.3e}")]
    OnRealAxis { im: f64, floor: f64 },
    #[error("|z| = {abs:.3e} is below the zero-energy floor {floor:.3e}")]
    ZeroEnergy { abs: f64, floor: f64 },
    #[error("Fredholm operator is near singular (sigma_min = {sigma_min:.3e})")]
    NearSingularFredholm { sigma_min: f64 },
    #[error("extrapolation diverges at lambda = {lambda} (corrections {corrections:?})")]
    NoConvergence { lambda: f64, corrections: Vec<f64> },
    #[error("invalid epsilon schedule: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ResolventError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FreeModel {
    Exact,
    #[default]
    Continuum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Side::Plus => "+",
            Side::Minus => "-",
        }
    }
}

/// Cauchy transform ∫ p(s)/(s − z) ds of the unit-mass hat density with peak
/// at μ, support [μ − a, μ + b]. With a = b = 0 this is the atom 1/(μ − z).
/// `z_im_sign` fixes the side when Im z = 0 (boundary value from above for
/// +1, from below for −1).
pub fn hat_cauchy(mu: f64, a: f64, b: f64, z: Complex64, z_im_sign: f64) -> Complex64 {
    if a <= 0.0 && b <= 0.0 {
        return ONE / (Complex64::new(mu, 0.0) - z);
    }
    let (a, b) = (if a > 0.0 { a } else { b }, if b > 0.0 { b } else { a });
    let u = z - mu;
    let w = a.max(b);
    if u.norm() > 4.0 * w {
        // Moment expansion: E[t^k] = 2(b^{k+1} − (−a)^{k+1}) / ((a+b)(k+1)(k+2)).
        let d = Complex64::new(mu, 0.0) - z;
        let mut sum = Complex64::new(0.0, 0.0);
        let mut dpow = d;
        let (mut bp, mut ap) = (b, -a);
        // Odd moments vanish for symmetric hats, so stop on the geometric
        // bound (w/|d|)^k of the tail rather than on a single small term.
        let ratio = w / d.norm();
        let mut bound = 1.0;
        for k in 0..60 {
            let mom = 2.0 * (bp - ap) / ((a + b) * (k as f64 + 1.0) * (k as f64 + 2.0));
            let term = mom / dpow * if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += term;
            bound *= ratio;
            if bound < 1e-17 {
                break;
            }
            dpow *= d;
            bp *= b;
            ap *= -a;
        }
        return sum;
    }
    let side = if z.im != 0.0 { z.im.signum() } else { z_im_sign };
    // d ln d with d = x − z, on the branch continuous along the real axis;
    // each log coefficient is proportional to its d, and d ln d → 0.
    let dlnd = |x: f64| -> Complex64 {
        let d = Complex64::new(x, 0.0) - z;
        if d.norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let l = if z.im != 0.0 {
            d.ln()
        } else if d.re > 0.0 {
            Complex64::new(d.re.ln(), 0.0)
        } else {
            Complex64::new((-d.re).ln(), -side * PI)
        };
        d * l
    };
    let acc = dlnd(mu - a) / a + dlnd(mu + b) / b - dlnd(mu) * (1.0 / a + 1.0 / b);
    acc * (2.0 / (a + b))
}

/// Spectral data of one diagonal block of A₀ with continuum half-widths.
#[derive(Debug, Clone)]
pub struct BlockSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
    /// Left and right widths of the hat around each eigenvalue; (0, 0) marks
    /// an atom that is kept exact in both models.
    pub widths: Vec<(f64, f64)>,
    /// X V, the eigenvectors seen through the smoothing weight.
    pub xv: ComplexMatrix,
}

impl BlockSpectrum {
    /// True if eigenvalue k carries a continuum hat.
    pub fn is_continuum(&self, k: usize) -> bool {
        let (a, b) = self.widths[k];
        a > 0.0 || b > 0.0
    }

    /// Density of the hat of eigenvalue k at λ.
    pub fn density(&self, k: usize, lambda: f64) -> f64 {
        let (a, b) = self.widths[k];
        if a <= 0.0 && b <= 0.0 {
            return 0.0;
        }
        let (a, b) = (if a > 0.0 { a } else { b }, if b > 0.0 { b } else { a });
        let mu = self.eigenvalues[k];
        let h = if lambda <= mu { (lambda - (mu - a)) / a } else { (mu + b - lambda) / b };
        h.max(0.0) * 2.0 / (a + b)
    }
}

/// Continuum half-widths for a sorted list of eigenvalues.
fn continuum_widths(evals: &[f64], zero_tol: f64, cluster_tol: f64) -> Vec<(f64, f64)> {
    // Distinct non-atomic values.
    let mut distinct: Vec<f64> = Vec::new();
    for &l in evals {
        if l.abs() <= zero_tol {
            continue;
        }
        if distinct.last().map_or(true, |&d| l - d > cluster_tol) {
            distinct.push(l);
        }
    }
    let mut out = vec![(0.0, 0.0); evals.len()];
    if distinct.len() < 2 {
        return out;
    }
    let mut spacings: Vec<f64> = distinct.windows(2).map(|w| w[1] - w[0]).collect();
    spacings.sort_by(f64::total_cmp);
    let median = spacings[spacings.len() / 2];
    let gap = GAP_FACTOR * median;
    let nd = distinct.len();
    let mut dw = vec![(0.0, 0.0); nd];
    for i in 0..nd {
        let left = if i > 0 { distinct[i] - distinct[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < nd { distinct[i + 1] - distinct[i] } else { f64::INFINITY };
        let left = if left > gap { 0.0 } else { left };
        let right = if right > gap { 0.0 } else { right };
        dw[i] = match (left > 0.0, right > 0.0) {
            (true, true) => (left, right),
            (true, false) => (left, left),
            (false, true) => (right, right),
            // Isolated value: stays an atom.
            (false, false) => (0.0, 0.0),
        };
    }
    for (k, &l) in evals.iter().enumerate() {
        if l.abs() <= zero_tol {
            continue;
        }
        let idx = distinct.partition_point(|&d| d < l - cluster_tol);
        let idx = idx.min(nd - 1);
        out[k] = dw[idx];
    }
    out
}

/// Precomputed data for repeated resolvent evaluations on one system.
pub struct ResolventContext<'a> {
    pub sys: &'a MultichannelSystem,
    pub blocks: Vec<BlockSpectrum>,
    /// (Q₀*)⁻¹ T.
    q0_adj_inv_t: ComplexMatrix,
}

impl<'a> ResolventContext<'a> {
    pub fn new(sys: &'a MultichannelSystem) -> Result<Self> {
        let scale = sys.scale();
        let blocks = sys
            .eig_blocks
            .iter()
            .map(|e| {
                let widths = continuum_widths(&e.eigenvalues, ZERO_TOL * scale, 1e-12 * scale);
                let xv = sys.base.x.matmul(&e.eigenvectors);
                BlockSpectrum {
                    eigenvalues: e.eigenvalues.clone(),
                    eigenvectors: e.eigenvectors.clone(),
                    widths,
                    xv,
                }
            })
            .collect();
        let q0_adj_inv_t = sys.q0_adj_inv_left(&sys.t)?;
        Ok(Self { sys, blocks, q0_adj_inv_t })
    }

    /// Diagonal of R₀(z) in the eigenbasis of block b.
    fn free_symbol(&self, b: usize, z: Complex64, model: FreeModel, side: f64) -> Vec<Complex64> {
        let blk = &self.blocks[b];
        blk.eigenvalues
            .iter()
            .zip(&blk.widths)
            .map(|(&mu, &(wa, wb))| match model {
                FreeModel::Exact => ONE / (Complex64::new(mu, 0.0) - z),
                FreeModel::Continuum => hat_cauchy(mu, wa, wb, z, side),
            })
            .collect()
    }

    /// R₀(z) on ℋ₀.
    pub fn free_resolvent(&self, z: Complex64, model: FreeModel) -> ComplexMatrix {
        self.free_resolvent_side(z, model, 1.0)
    }

    fn free_resolvent_side(&self, z: Complex64, model: FreeModel, side: f64) -> ComplexMatrix {
        let blocks: Vec<ComplexMatrix> = (0..self.blocks.len())
            .map(|b| {
                let v = &self.blocks[b].eigenvectors;
                let f = self.free_symbol(b, z, model, side);
                linalg::scale_columns(v, &f).matmul(&v.adjoint())
            })
            .collect();
        ComplexMatrix::block_diag(&blocks.iter().collect::<Vec<_>>())
    }

    /// B(z) = Q₀R₀(z)Q₀* together with R₀(z)Q₀*.
    fn sandwich_parts(&self, z: Complex64, model: FreeModel, side: f64) -> (ComplexMatrix, ComplexMatrix) {
        let n = self.sys.n();
        let nb = self.blocks.len();
        let d = nb * n;
        let mut b_mat = ComplexMatrix::zeros(d, d);
        let mut r0q0 = ComplexMatrix::zeros(d, d);
        for b in 0..nb {
            let blk = &self.blocks[b];
            let f = self.free_symbol(b, z, model, side);
            let xv_f = linalg::scale_columns(&blk.xv, &f);
            b_mat.set_submatrix(b * n, b * n, &xv_f.matmul(&blk.xv.adjoint()));
            let v_f = linalg::scale_columns(&blk.eigenvectors, &f);
            r0q0.set_submatrix(b * n, b * n, &v_f.matmul(&blk.xv.adjoint()));
        }
        (b_mat, r0q0)
    }

    /// G₀(z) by the defining relation T R₀(z) Q₀* = Q₀* G₀(z), i.e.
    /// G₀ = (Q₀*)⁻¹ T R₀ Q₀*, and B(z) = Q₀R₀(z)Q₀*.
    pub fn g0_defining(&self, z: Complex64, model: FreeModel, side: f64) -> (ComplexMatrix, ComplexMatrix) {
        let (b_mat, r0q0) = self.sandwich_parts(z, model, side);
        (self.q0_adj_inv_t.matmul(&r0q0), b_mat)
    }

    /// G₀(z) = −z⁻¹M₀* + z⁻¹ K Q₀R₀(z)Q₀* and B(z).
    pub fn g0_explicit(&self, z: Complex64, model: FreeModel) -> (ComplexMatrix, ComplexMatrix) {
        let (b_mat, _) = self.sandwich_parts(z, model, 1.0);
        let zi = ONE / z;
        let mut g0 = self.sys.k.matmul(&b_mat);
        g0.axpy(-ONE, &self.sys.m0.adjoint());
        (g0.scale(zi), b_mat)
    }

    /// Matrix of the Fredholm problem I + G₀ at z for the given model; the
    /// exact model uses the explicit formula, the continuum model the
    /// defining relation.
    fn fredholm(&self, z: Complex64, model: FreeModel, side: f64) -> (ComplexMatrix, ComplexMatrix) {
        let (g0, b) = match model {
            FreeModel::Exact => self.g0_explicit(z, model),
            FreeModel::Continuum => self.g0_defining(z, model, side),
        };
        (g0.shift_diag(ONE), b)
    }

    /// G(z) applied to the right: G(z)·rhs = M B (I+G₀)⁻¹ rhs.
    pub fn g_apply_right(&self, z: Complex64, model: FreeModel, side: f64, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        let (f, b) = self.fredholm(z, model, side);
        let lu = factor_fredholm(&f)?;
        let y = lu.solve(rhs)?;
        Ok(self.sys.m.matmul(&b.matmul(&y)))
    }

    /// lhs·G(z) = lhs M B (I+G₀)⁻¹.
    pub fn g_apply_left(&self, z: Complex64, model: FreeModel, side: f64, lhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        let (f, b) = self.fredholm(z, model, side);
        let lmb = lhs.matmul(&self.sys.m).matmul(&b);
        let lu = factor_fredholm(&f.adjoint())?;
        Ok(lu.solve(&lmb.adjoint())?.adjoint())
    }

    /// Full G(z) = Q R(z) Q* through the sandwiched equation.
    pub fn g_full(&self, z: Complex64, model: FreeModel, side: f64) -> Result<ComplexMatrix> {
        let d = self.sys.dim0();
        self.g_apply_left(z, model, side, &ComplexMatrix::identity(d))
    }

    /// σ_min(I + G₀(z)).
    pub fn fredholm_sigma_min(&self, z: Complex64, model: FreeModel) -> f64 {
        let side = if z.im >= 0.0 { 1.0 } else { -1.0 };
        let (f, _) = self.fredholm(z, model, side);
        sigma_min_inverse_iteration(&f)
    }
}

fn factor_fredholm(f: &ComplexMatrix) -> Result<Lu> {
    match Lu::factor(f) {
        Ok(lu) => Ok(lu),
        Err(LinalgError::Singular { .. }) => {
            Err(ResolventError::NearSingularFredholm { sigma_min: linalg::sigma_min(f) })
        }
        Err(e) => Err(e.into()),
    }
}

/// Smallest singular value of a square matrix by inverse iteration on its
/// Hermitian square F*F, using one LU factorisation of F.
pub fn sigma_min_inverse_iteration(f: &ComplexMatrix) -> f64 {
    let n = f.rows();
    if n == 0 {
        return 0.0;
    }
    let lu = match Lu::factor(f) {
        Ok(l) => l,
        Err(_) => return 0.0,
    };
    let lu_adj = match Lu::factor(&f.adjoint()) {
        Ok(l) => l,
        Err(_) => return 0.0,
    };
    // Deterministic start vector with all modes present.
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0, 0.11 * ((i * 31) % 17) as f64))
        .collect();
    let nv = vec_norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut est = f64::INFINITY;
    for _ in 0..60 {
        // w = (F*F)⁻¹ v = F⁻¹ F*⁻¹ v.
        let y = match lu_adj.solve(&ComplexMatrix::column_vector(&v)) {
            Ok(y) => y,
            Err(_) => return 0.0,
        };
        let w = match lu.solve(&y) {
            Ok(w) => w.into_vec(),
            Err(_) => return 0.0,
        };
        let nw = vec_norm(&w);
        if !nw.is_finite() || nw == 0.0 {
            return 0.0;
        }
        let new_est = 1.0 / nw.sqrt();
        v = w.into_iter().map(|x| x / nw).collect();
        let done = (est - new_est).abs() <= 1e-10 * new_est;
        est = new_est;
        if done {
            break;
        }
    }
    // Rayleigh refinement: ‖F v‖ for the converged vector.
    let fv = f.mul_vec(&v);
    vec_norm(&fv).min(est)
}

fn check_z(sys: &MultichannelSystem, z: Complex64, eps_floor: f64) -> Result<()> {
    let floor = eps_floor * sys.scale();
    if z.im.abs() < floor {
        return Err(ResolventError::OnRealAxis { im: z.im, floor });
    }
    Ok(())
}

fn check_energy(sys: &MultichannelSystem, z: Complex64) -> Result<()> {
    let floor = Z_FLOOR * sys.scale();
    if z.norm() < floor {
        return Err(ResolventError::ZeroEnergy { abs: z.norm(), floor });
    }
    Ok(())
}

/// R(z) = (A − z)⁻¹ by direct solve.
pub fn direct_resolvent(sys: &MultichannelSystem, z: Complex64) -> Result<ComplexMatrix> {
    let n = sys.n();
    Ok(linalg::solve(&sys.a.shift_diag(-z), &ComplexMatrix::identity(n))?)
}

/// R₀(z) = (A₀ − z)⁻¹ from the block eigendecompositions.
pub fn free_resolvent(sys: &MultichannelSystem, z: Complex64) -> ComplexMatrix {
    let blocks: Vec<ComplexMatrix> =
        sys.eig_blocks.iter().map(|e| e.apply_fn(|l| ONE / (Complex64::new(l, 0.0) - z))).collect();
    ComplexMatrix::block_diag(&blocks.iter().collect::<Vec<_>>())
}

/// R(z)J = J R₀(z) (I + T R₀(z))⁻¹.
pub fn resolvent_via_fredholm(sys: &MultichannelSystem, z: Complex64) -> Result<ComplexMatrix> {
    check_z(sys, z, EPS_FLOOR)?;
    let r0 = free_resolvent(sys, z);
    let f = sys.t.matmul(&r0).shift_diag(ONE);
    let rhs = sys.j.matmul(&r0);
    // X (I + T R₀) = J R₀  ⟺  (I + T R₀)* X* = (J R₀)*.
    let lu = factor_fredholm(&f.adjoint())?;
    let x = lu.solve(&rhs.adjoint())?.adjoint();
    if !x.is_finite() {
        return Err(ResolventError::NearSingularFredholm { sigma_min: 0.0 });
    }
    Ok(x)
}

/// Residual ‖R(z)J(I + TR₀(z)) − JR₀(z)‖_op with R(z) computed directly.
pub fn fredholm_identity_residual(sys: &MultichannelSystem, z: Complex64) -> Result<f64> {
    let r = direct_resolvent(sys, z)?;
    let r0 = free_resolvent(sys, z);
    let lhs = r.matmul(&sys.j).matmul(&sys.t.matmul(&r0).shift_diag(ONE));
    Ok(op_norm(&(&lhs - &sys.j.matmul(&r0))))
}

/// All objects at one complex energy.
#[derive(Debug, Clone)]
pub struct ResolventPoint {
    pub z: Complex64,
    pub r0: ComplexMatrix,
    pub r: ComplexMatrix,
    pub g0: ComplexMatrix,
    /// Q R(z) Q* from the sandwiched Fredholm equation.
    pub sandwiched: ComplexMatrix,
    /// ‖QRQ*(I + G₀) − M Q₀R₀Q₀*‖_op.
    pub identity_residual: f64,
}

/// Q R(z) Q* = M Q₀R₀(z)Q₀* (I + G₀(z))⁻¹ with G₀ by the explicit formula.
pub fn sandwiched_resolvent(sys: &MultichannelSystem, z: Complex64) -> Result<ResolventPoint> {
    check_z(sys, z, EPS_FLOOR)?;
    check_energy(sys, z)?;
    let ctx = ResolventContext::new(sys)?;
    sandwiched_resolvent_ctx(&ctx, z)
}

pub fn sandwiched_resolvent_ctx(ctx: &ResolventContext<'_>, z: Complex64) -> Result<ResolventPoint> {
    let sys = ctx.sys;
    check_z(sys, z, EPS_FLOOR)?;
    check_energy(sys, z)?;
    let (g0, b) = ctx.g0_explicit(z, FreeModel::Exact);
    let f = g0.shift_diag(ONE);
    let mb = sys.m.matmul(&b);
    let lu = factor_fredholm(&f.adjoint())?;
    let g = lu.solve(&mb.adjoint())?.adjoint();
    let identity_residual = op_norm(&(&g.matmul(&f) - &mb));
    Ok(ResolventPoint {
        z,
        r0: ctx.free_resolvent(z, FreeModel::Exact),
        r: direct_resolvent(sys, z)?,
        g0,
        sandwiched: g,
        identity_residual,
    })
}

/// Pairwise discrepancies between three routes to Q R(z) Q*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteAgreement {
    pub direct_vs_fredholm: f64,
    pub direct_vs_sandwiched: f64,
    pub fredholm_vs_sandwiched: f64,
    /// ‖QRQ*‖ for scaling.
    pub norm: f64,
}

impl RouteAgreement {
    pub fn max_relative(&self) -> f64 {
        let m = self.direct_vs_fredholm.max(self.direct_vs_sandwiched).max(self.fredholm_vs_sandwiched);
        if self.norm > 0.0 {
            m / self.norm
        } else {
            m
        }
    }
}

pub fn route_agreement(ctx: &ResolventContext<'_>, point: &ResolventPoint) -> Result<RouteAgreement> {
    let sys = ctx.sys;
    let direct = sys.q.matmul(&point.r).matmul(&sys.q.adjoint());
    let rj = resolvent_via_fredholm(sys, point.z)?;
    // Q R Q* = Q₀ J* (R J) Q₀*.
    let via_fredholm = sys.q0.matmul(&sys.j.adjoint()).matmul(&rj).matmul(&sys.q0.adjoint());
    let norm = op_norm(&direct);
    Ok(RouteAgreement {
        direct_vs_fredholm: op_norm(&(&direct - &via_fredholm)),
        direct_vs_sandwiched: op_norm(&(&direct - &point.sandwiched)),
        fredholm_vs_sandwiched: op_norm(&(&via_fredholm - &point.sandwiched)),
        norm,
    })
}

/// Residuals of the single-channel reduction (N = 1), where the system is
/// the pair A₁, A = A₁ + A∞ with A∞ = X*K∞X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleChannelResiduals {
    /// ‖R(I + A∞R₁) − R₁‖ / ‖R₁‖ with R from the Fredholm route.
    pub resolvent_identity: f64,
    /// ‖XRX*(I + K∞XR₁X*) − XR₁X*‖ / ‖XR₁X*‖ with XRX* from the
    /// sandwiched route.
    pub sandwiched_identity: f64,
    /// ‖R_Fredholm − R_direct‖ / ‖R_direct‖.
    pub direct: f64,
}

impl SingleChannelResiduals {
    pub fn max(&self) -> f64 {
        self.resolvent_identity.max(self.sandwiched_identity).max(self.direct)
    }
}

pub fn single_channel_residuals(sys: &MultichannelSystem, z: Complex64) -> Result<SingleChannelResiduals> {
    if sys.num_channels() != 1 {
        return Err(ModelError::BadDimensions(format!("{} channels, expected 1", sys.num_channels())).into());
    }
    let n = sys.n();
    let rj = resolvent_via_fredholm(sys, z)?;
    let r = rj.columns(0, n);
    let r1 = sys.eig_blocks[1].apply_fn(|l| ONE / (Complex64::new(l, 0.0) - z));
    let a_inf = &sys.base.a_inf;
    let lhs = r.matmul(&a_inf.matmul(&r1).shift_diag(ONE));
    let resolvent_identity = op_norm(&(&lhs - &r1)) / op_norm(&r1);

    let point = sandwiched_resolvent(sys, z)?;
    let xrx = point.sandwiched.submatrix(0, 0, n, n);
    let x = &sys.base.x;
    let xr1x = x.matmul(&r1).matmul(&x.adjoint());
    // K∞ = (X*)⁻¹ A∞ X⁻¹.
    let left = sys.x_adj_inv_left(a_inf)?;
    let k_inf = sys.x_adj_inv_left(&left.adjoint())?.adjoint();
    let lhs = xrx.matmul(&k_inf.matmul(&xr1x).shift_diag(ONE));
    let sandwiched_identity = op_norm(&(&lhs - &xr1x)) / op_norm(&xr1x);
    let direct = op_norm(&(&r - &point.r)) / op_norm(&point.r);
    Ok(SingleChannelResiduals { resolvent_identity, sandwiched_identity, direct })
}

/// |Im((I+G₀)g, MQ₀R₀Q₀*g) + ε‖JR₀Q₀*g‖²| at z = λ + iε, relative to
/// |((I+G₀)g, MQ₀R₀Q₀*g)| + |ε|‖JR₀Q₀*g‖² (zero for g = 0).
pub fn imaginary_part_identity(sys: &MultichannelSystem, g: &[Complex64], z: Complex64) -> Result<f64> {
    let ctx = ResolventContext::new(sys)?;
    imaginary_part_identity_ctx(&ctx, g, z)
}

pub fn imaginary_part_identity_ctx(ctx: &ResolventContext<'_>, g: &[Complex64], z: Complex64) -> Result<f64> {
    let sys = ctx.sys;
    check_energy(sys, z)?;
    let (g0, b) = ctx.g0_explicit(z, FreeModel::Exact);
    let lhs_vec = g0.shift_diag(ONE).mul_vec(g);
    let rhs_vec = sys.m.matmul(&b).mul_vec(g);
    let pairing = inner(&lhs_vec, &rhs_vec);
    let r0 = ctx.free_resolvent(z, FreeModel::Exact);
    let u = sys.j.matmul(&r0).matmul(&sys.q0.adjoint()).mul_vec(g);
    let rhs = -z.im * vec_norm(&u).powi(2);
    let scale = pairing.norm() + rhs.abs();
    Ok(if scale > 0.0 { (pairing.im - rhs).abs() / scale } else { 0.0 })
}

/// The default geometric schedule ε_k = 0.1·2^{−k}, k = 0…10.
pub fn default_schedule() -> Vec<f64> {
    (0..=10).map(|k| 0.1 * 0.5_f64.powi(k)).collect()
}

/// Settings of a boundary-value computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    pub schedule: Vec<f64>,
    pub order: usize,
    pub model: FreeModel,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self { schedule: default_schedule(), order: 2, model: FreeModel::Continuum }
    }
}

/// Result of ε-extrapolation towards the real axis.
#[derive(Debug, Clone)]
pub struct BoundaryValue {
    pub lambda: f64,
    pub side: Side,
    /// The extrapolated matrix (the full G(λ ± i0), or an applied version).
    pub g_bv: ComplexMatrix,
    pub eps_schedule: Vec<f64>,
    /// Frobenius norm of the last extrapolation correction.
    pub err_est: f64,
    /// Slope of log‖G(λ ± iε) − G_bv‖ against log ε.
    pub hoelder_fit: f64,
    /// Successive corrections along the final extrapolation column.
    pub corrections: Vec<f64>,
}

fn check_schedule(s: &[f64]) -> Result<()> {
    if s.len() < 2 {
        return Err(ResolventError::BadSchedule("need at least two values".into()));
    }
    if s.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(ResolventError::BadSchedule("values must be positive".into()));
    }
    if s.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ResolventError::BadSchedule("values must be strictly decreasing".into()));
    }
    Ok(())
}

/// Neville extrapolation to ε = 0 of samples taken at the schedule; returns
/// the extrapolant, the last correction and the corrections along the final
/// column.
pub fn extrapolate(eps: &[f64], samples: &[ComplexMatrix], order: usize) -> (ComplexMatrix, f64, Vec<f64>) {
    let k = samples.len();
    let p = order.min(k - 1);
    // table[j][i] = extrapolant of level j ending at sample i.
    let mut prev: Vec<ComplexMatrix> = samples.to_vec();
    for j in 1..=p {
        let mut cur = Vec::with_capacity(k);
        for i in 0..k {
            if i < j {
                cur.push(prev[i].clone());
                continue;
            }
            // Polynomial in ε through the points i−j … i evaluated at 0.
            let w = eps[i] / (eps[i - j] - eps[i]);
            let mut next = prev[i].clone();
            next.axpy(Complex64::new(w, 0.0), &(&prev[i] - &prev[i - 1]));
            cur.push(next);
        }
        prev = cur;
    }
    let corrections: Vec<f64> = (p + 1..k).map(|i| (&prev[i] - &prev[i - 1]).norm_fro()).collect();
    let err = corrections.last().copied().unwrap_or(f64::INFINITY);
    (prev[k - 1].clone(), err, corrections)
}

fn hoelder_slope(eps: &[f64], samples: &[ComplexMatrix], limit: &ComplexMatrix) -> f64 {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(samples)
        .filter_map(|(&e, s)| {
            let d = (s - limit).norm_fro();
            (d > 0.0 && d.is_finite()).then(|| (e.ln(), d.ln()))
        })
        .collect();
    least_squares_slope(&pts)
}

/// Slope of the least-squares line through the points.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

fn diverges(corr: &[f64], scale: f64) -> bool {
    if corr.iter().any(|c| !c.is_finite()) {
        return true;
    }
    let n = corr.len();
    n >= 3 && corr[n - 1] > corr[n - 2] && corr[n - 2] > corr[n - 3] && corr[n - 1] > 1e-6 * scale.max(1.0)
}

/// Generic extrapolated limit of ε ↦ f(λ ± iε).
pub fn boundary_limit<F>(lambda: f64, side: Side, opts: &LimitOptions, f: F) -> Result<BoundaryValue>
where
    F: Fn(Complex64) -> Result<ComplexMatrix> + Sync,
{
    check_schedule(&opts.schedule)?;
    let samples: Vec<ComplexMatrix> = opts
        .schedule
        .par_iter()
        .map(|&e| f(Complex64::new(lambda, side.sign() * e)))
        .collect::<Result<Vec<_>>>()?;
    let (g_bv, err_est, corrections) = extrapolate(&opts.schedule, &samples, opts.order);
    if diverges(&corrections, g_bv.norm_fro()) || !g_bv.is_finite() {
        return Err(ResolventError::NoConvergence { lambda, corrections });
    }
    let hoelder_fit = hoelder_slope(&opts.schedule, &samples, &g_bv);
    Ok(BoundaryValue { lambda, side, g_bv, eps_schedule: opts.schedule.clone(), err_est, hoelder_fit, corrections })
}

/// G(λ ± i0) = Q R(λ ± i0) Q* by extrapolation over the schedule.
pub fn boundary_value(sys: &MultichannelSystem, lambda: f64, side: Side, opts: &LimitOptions) -> Result<BoundaryValue> {
    let ctx = ResolventContext::new(sys)?;
    boundary_value_ctx(&ctx, lambda, side, opts)
}

pub fn boundary_value_ctx(ctx: &ResolventContext<'_>, lambda: f64, side: Side, opts: &LimitOptions) -> Result<BoundaryValue> {
    check_energy(ctx.sys, Complex64::new(lambda, 0.0))?;
    boundary_limit(lambda, side, opts, |z| ctx.g_full(z, opts.model, side.sign()))
}

/// G(λ ± i0)·rhs by extrapolation.
pub fn boundary_value_right(
    ctx: &ResolventContext<'_>,
    lambda: f64,
    side: Side,
    opts: &LimitOptions,
    rhs: &ComplexMatrix,
) -> Result<BoundaryValue> {
    check_energy(ctx.sys, Complex64::new(lambda, 0.0))?;
    boundary_limit(lambda, side, opts, |z| ctx.g_apply_right(z, opts.model, side.sign(), rhs))
}

/// lhs·G(λ ± i0) by extrapolation.
pub fn boundary_value_left(
    ctx: &ResolventContext<'_>,
    lambda: f64,
    side: Side,
    opts: &LimitOptions,
    lhs: &ComplexMatrix,
) -> Result<BoundaryValue> {
    check_energy(ctx.sys, Complex64::new(lambda, 0.0))?;
    boundary_limit(lambda, side, opts, |z| ctx.g_apply_left(z, opts.model, side.sign(), lhs))
}

/// One point of an exceptional-set scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub sigma_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub eps: f64,
    pub sing_thresh: f64,
    pub model: FreeModel,
    /// Golden-section iterations used to refine each local minimum.
    pub refine_iters: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { eps: 1e-8, sing_thresh: SING_THRESH, model: FreeModel::Continuum, refine_iters: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub profile: Vec<ScanPoint>,
    /// Refined local minima of the profile.
    pub minima: Vec<ScanPoint>,
    /// Minima with σ_min below the threshold.
    pub flagged: Vec<ScanPoint>,
}

/// σ_min(I + G₀(λ + iε)) over the grid; local minima are refined by
/// golden-section search and flagged below the threshold.
pub fn exceptional_scan(sys: &MultichannelSystem, grid: &[f64], opts: &ScanOptions) -> Result<ScanResult> {
    let ctx = ResolventContext::new(sys)?;
    exceptional_scan_ctx(&ctx, grid, opts)
}

pub fn exceptional_scan_ctx(ctx: &ResolventContext<'_>, grid: &[f64], opts: &ScanOptions) -> Result<ScanResult> {
    if !(opts.eps > 0.0) {
        return Err(ResolventError::BadSchedule("scan epsilon must be positive".into()));
    }
    for &l in grid {
        check_energy(ctx.sys, Complex64::new(l, 0.0))?;
    }
    let sigma = |l: f64| ctx.fredholm_sigma_min(Complex64::new(l, opts.eps), opts.model);
    let profile: Vec<ScanPoint> =
        grid.par_iter().map(|&lambda| ScanPoint { lambda, sigma_min: sigma(lambda) }).collect();
    let mut brackets = Vec::new();
    let np = profile.len();
    for i in 0..np {
        let s = profile[i].sigma_min;
        let left = if i > 0 { profile[i - 1].sigma_min } else { f64::INFINITY };
        let right = if i + 1 < np { profile[i + 1].sigma_min } else { f64::INFINITY };
        if s <= left && s < right || s < left && s <= right {
            let lo = if i > 0 { profile[i - 1].lambda } else { profile[i].lambda };
            let hi = if i + 1 < np { profile[i + 1].lambda } else { profile[i].lambda };
            brackets.push((lo, profile[i], hi));
        }
    }
    let minima: Vec<ScanPoint> = brackets
        .par_iter()
        .map(|&(lo, best, hi)| golden_minimum(&sigma, lo, hi, best, opts.refine_iters))
        .collect();
    let flagged = minima.iter().copied().filter(|p| p.sigma_min < opts.sing_thresh).collect();
    Ok(ScanResult { profile, minima, flagged })
}

fn golden_minimum(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, start: ScanPoint, iters: usize) -> ScanPoint {
    let mut best = start;
    if hi <= lo {
        return best;
    }
    let g = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-14 * (a.abs() + b.abs()) {
            break;
        }
    }
    for (l, s) in [(c, fc), (d, fd)] {
        if s < best.sigma_min {
            best = ScanPoint { lambda: l, sigma_min: s };
        }
    }
    best
}
