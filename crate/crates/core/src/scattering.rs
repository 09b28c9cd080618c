//! Wave operators by time averaging and by the stationary route, their
//! isometry, orthogonality and completeness defects, and the scattering
//! matrix S(λ) in the fibered representation of A₀.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, op_norm, ComplexMatrix, Interval, LinalgError};
use crate::model::MultichannelSystem;
use crate::resolvent::{boundary_value_left, LimitOptions, ResolventContext, ResolventError, Side};
use crate::spectral::{EmbeddedEigenpair, SpectralDecomposition, SpectralError};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest operator-norm increment accepted as converged.
pub const WAVE_INC_TOL: f64 = 0.05;
/// Largest growth of the increment between the last two schedule steps.
pub const WAVE_STABLE_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScatteringError {
    #[error("lambda = {lambda} is within {distance:.3e} of the exceptional energy {exceptional}")]
    ExceptionalEnergy { lambda: f64, exceptional: f64, distance: f64 },
    #[error("wave operator for {target:?} did not converge (log {log:?})")]
    Unconverged { target: Target, log: Vec<(f64, f64)> },
    #[error("channel {0} does not exist")]
    BadChannel(usize),
    #[error("bad wave-operator parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ScatteringError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveMethod {
    Abel,
    Window,
    Stationary,
}

/// Which identification the wave operator uses: the full row sum J on ℋ₀,
/// or the identity on a single channel j ∈ 1…N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Full,
    Channel(usize),
}

/// Schedule of the averaging parameter: ε_k = start·2^{−k} for Abel
/// averaging, T_k = start·2^k for the time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub start: f64,
    pub steps: usize,
}

impl WaveParams {
    /// Schedule that stops before the averaging scale reaches twice the mean
    /// eigenvalue spacing of one channel in Δ.
    pub fn auto(sys: &MultichannelSystem, delta: Interval, method: WaveMethod) -> Self {
        let count = sys.eig_blocks[1..]
            .iter()
            .map(|e| e.eigenvalues.iter().filter(|&&l| delta.contains(l)).count())
            .max()
            .unwrap_or(0)
            .max(1);
        let spacing = delta.len() / count as f64;
        let start = delta.len() / 2.0;
        let mut steps = 0;
        while start * 0.5_f64.powi(steps as i32 + 1) >= 2.0 * spacing {
            steps += 1;
        }
        let steps = steps.max(3);
        match method {
            WaveMethod::Window => Self { start: 1.0 / start, steps },
            _ => Self { start, steps },
        }
    }

    fn values(&self, method: WaveMethod) -> Vec<f64> {
        (0..=self.steps)
            .map(|k| match method {
                WaveMethod::Window => self.start * 2f64.powi(k as i32),
                _ => self.start * 0.5f64.powi(k as i32),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct WaveOperatorResult {
    /// W as a matrix from the input space (ℋ₀ or ℋ) to ℋ.
    pub w: ComplexMatrix,
    /// W applied to the input eigenvectors, one column each.
    pub columns: ComplexMatrix,
    /// Orthonormal eigenvectors spanning the input subspace over Δ.
    pub input: ComplexMatrix,
    pub input_eigenvalues: Vec<f64>,
    pub method: WaveMethod,
    pub target: Target,
    pub sign: Side,
    /// Final ε (Abel), T (window) or ε floor (stationary).
    pub parameter: f64,
    /// (parameter, ‖W(p_k) − W(p_{k−1})‖_op).
    pub convergence_log: Vec<(f64, f64)>,
    pub converged: bool,
    /// ‖W*W − E₀(Δ)‖_op.
    pub isometry_defect: f64,
    /// ‖AW − WA₀‖_op on Ran E₀(Δ).
    pub intertwine_defect: f64,
}

/// ε∫₀^∞ e^{−εt} e^{±iωt} dt.
fn abel_factor(omega: f64, eps: f64, sign: Side) -> Complex64 {
    Complex64::new(eps, 0.0) / Complex64::new(eps, -sign.sign() * omega)
}

/// ∫ e^{ix s} w(s) ds for the normalised window w(s) = 1 − cos 2π(s − 1)
/// on [1, 2].
fn window_transform(x: f64) -> Complex64 {
    let i0 = |y: f64| -> Complex64 {
        if y.abs() < 1e-6 {
            Complex64::new(1.0, y / 2.0)
        } else {
            (Complex64::new(0.0, y).exp() - ONE) / Complex64::new(0.0, y)
        }
    };
    Complex64::new(0.0, x).exp() * (i0(x) - (i0(x + 2.0 * PI) + i0(x - 2.0 * PI)) * 0.5)
}

/// Input eigenpairs over Δ: lifted A₀ eigenvectors for the full target, A_j
/// eigenvectors for a channel.
fn input_space(sys: &MultichannelSystem, target: Target, delta: Interval) -> Result<(Vec<f64>, ComplexMatrix, ComplexMatrix)> {
    let n = sys.n();
    let (blocks, lifted): (Vec<usize>, bool) = match target {
        Target::Full => ((1..=sys.num_channels()).collect(), true),
        Target::Channel(j) if j >= 1 && j <= sys.num_channels() => (vec![j], false),
        Target::Channel(j) => return Err(ScatteringError::BadChannel(j)),
    };
    let dim_in = if lifted { sys.dim0() } else { n };
    let mut evals = Vec::new();
    let mut cols = Vec::new();
    for &b in &blocks {
        let e = &sys.eig_blocks[b];
        for (k, &mu) in e.eigenvalues.iter().enumerate() {
            if !delta.contains(mu) {
                continue;
            }
            let mut v = vec![Complex64::new(0.0, 0.0); dim_in];
            let off = if lifted { b * n } else { 0 };
            for r in 0..n {
                v[off + r] = e.eigenvectors[(r, k)];
            }
            evals.push(mu);
            cols.push(v);
        }
    }
    let input = ComplexMatrix::from_fn(dim_in, cols.len(), |r, c| cols[c][r]);
    // Images in ℋ: J u for the full target, u itself for a channel.
    let images = if lifted { sys.j.matmul(&input) } else { input.clone() };
    Ok((evals, input, images))
}

/// Wave operator W±(A, A₀; J, Δ), or the channel operator W±(A, A_j; Δ), by
/// Abel or window averaging of e^{iAt} J e^{−iA₀t} E₀(Δ). The averages are
/// evaluated exactly in the eigenbases of A and A₀.
pub fn wave_op_time(
    sys: &MultichannelSystem,
    target: Target,
    delta: Interval,
    sign: Side,
    method: WaveMethod,
    params: WaveParams,
) -> Result<WaveOperatorResult> {
    if method == WaveMethod::Stationary {
        return Err(ScatteringError::BadParams("use wave_op_stationary for the stationary route".into()));
    }
    if !(params.start > 0.0) || !params.start.is_finite() {
        return Err(ScatteringError::BadParams(format!("start = {}", params.start)));
    }
    let (evals, input, images) = input_space(sys, target, delta)?;
    let ea = &sys.eig_a;
    let coeffs = ea.eigenvectors.adjoint().matmul(&images);
    let values = params.values(method);
    let columns_at = |p: f64| -> ComplexMatrix {
        let scaled = ComplexMatrix::from_fn(coeffs.rows(), coeffs.cols(), |m, k| {
            let omega = ea.eigenvalues[m] - evals[k];
            let f = match method {
                WaveMethod::Window => window_transform(sign.sign() * omega * p),
                _ => abel_factor(omega, p, sign),
            };
            coeffs[(m, k)] * f
        });
        ea.eigenvectors.matmul(&scaled)
    };
    let all: Vec<ComplexMatrix> = values.par_iter().map(|&p| columns_at(p)).collect();
    let convergence_log: Vec<(f64, f64)> =
        (1..all.len()).map(|k| (values[k], op_norm(&(&all[k] - &all[k - 1])))).collect();
    let converged = increments_stable(&convergence_log);
    let columns = all.into_iter().last().expect("schedule is never empty");
    finish(sys, columns, input, evals, method, target, sign, *values.last().unwrap(), convergence_log, converged)
}

/// The increment sequence has stabilised: the last increment is below
/// [`WAVE_INC_TOL`] and at most [`WAVE_STABLE_RATIO`] times the previous one.
/// On a finite grid the operator-norm increments level off instead of
/// decaying (states entering the coupling region at times ~1/ε always
/// exist), so a plateau is the strongest available signal.
fn increments_stable(log: &[(f64, f64)]) -> bool {
    let l = log.len();
    l >= 2 && log[l - 1].1 <= WAVE_INC_TOL && log[l - 1].1 <= WAVE_STABLE_RATIO * log[l - 2].1
}

#[allow(clippy::too_many_arguments)]
fn finish(
    sys: &MultichannelSystem,
    columns: ComplexMatrix,
    input: ComplexMatrix,
    evals: Vec<f64>,
    method: WaveMethod,
    target: Target,
    sign: Side,
    parameter: f64,
    convergence_log: Vec<(f64, f64)>,
    converged: bool,
) -> Result<WaveOperatorResult> {
    let k = columns.cols();
    let gram = columns.adjoint().matmul(&columns);
    let isometry_defect = op_norm(&(&gram - &ComplexMatrix::identity(k)));
    let evals_c: Vec<Complex64> = evals.iter().map(|&l| Complex64::new(l, 0.0)).collect();
    let inter = &sys.a.matmul(&columns) - &linalg::scale_columns(&columns, &evals_c);
    let intertwine_defect = op_norm(&inter);
    let w = columns.matmul(&input.adjoint());
    Ok(WaveOperatorResult {
        w,
        columns,
        input,
        input_eigenvalues: evals,
        method,
        target,
        sign,
        parameter,
        convergence_log,
        converged,
        isometry_defect,
        intertwine_defect,
    })
}

/// Gram matrix of channel ranges: entry (j, ℓ) is ‖W_j*W_ℓ‖_op on
/// E_j(Δ) ⊗ E_ℓ(Δ) for j ≠ ℓ and the isometry defect of W_j on the diagonal.
pub fn channel_orthogonality(channels: &[WaveOperatorResult]) -> Result<Vec<Vec<f64>>> {
    for c in channels {
        if !c.converged {
            return Err(ScatteringError::Unconverged { target: c.target, log: c.convergence_log.clone() });
        }
    }
    let nc = channels.len();
    let mut g = vec![vec![0.0; nc]; nc];
    for j in 0..nc {
        for l in 0..nc {
            g[j][l] = if j == l {
                channels[j].isometry_defect
            } else {
                op_norm(&channels[j].columns.adjoint().matmul(&channels[l].columns))
            };
        }
    }
    Ok(g)
}

/// ‖Σ_j W_jW_j* − (E(Δ) − Σ embedded eigenprojections)‖_op.
pub fn completeness_check(
    sys: &MultichannelSystem,
    delta: Interval,
    channels: &[WaveOperatorResult],
    embedded: &[EmbeddedEigenpair],
) -> Result<f64> {
    for c in channels {
        if !c.converged {
            return Err(ScatteringError::Unconverged { target: c.target, log: c.convergence_log.clone() });
        }
    }
    let n = sys.n();
    let mut sum = ComplexMatrix::zeros(n, n);
    for c in channels {
        sum = &sum + &c.columns.matmul(&c.columns.adjoint());
    }
    let e = linalg::spectral_projection_from_eig(&sys.eig_a, delta)?;
    let p = crate::spectral::eigenprojection(embedded, n);
    let target = &e - &p;
    Ok(op_norm(&(&sum - &target)))
}

/// Settings of the stationary computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringOptions {
    pub limit: LimitOptions,
    /// Energies excluded from the stationary formulas (flagged by the scan).
    pub exceptional: Vec<f64>,
    /// Exclusion radius around each exceptional energy.
    pub exclusion: f64,
}

impl Default for ScatteringOptions {
    fn default() -> Self {
        Self { limit: LimitOptions::default(), exceptional: Vec::new(), exclusion: 1e-9 }
    }
}

fn check_exceptional(lambda: f64, opts: &ScatteringOptions) -> Result<()> {
    for &e in &opts.exceptional {
        let distance = (lambda - e).abs();
        if distance <= opts.exclusion {
            return Err(ScatteringError::ExceptionalEnergy { lambda, exceptional: e, distance });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScatteringSample {
    pub lambda: f64,
    pub s: ComplexMatrix,
    pub s_tilde: ComplexMatrix,
    /// ‖S*S − I‖_op.
    pub unitarity_defect: f64,
    /// ‖S̃ − λ²S‖_op / ‖S̃‖_op.
    pub tilde_defect: f64,
    /// Frobenius bound on the error of S inherited from the extrapolation.
    pub err_est: f64,
    /// Channel blocks S_{ℓ,j}; index [ℓ][j].
    pub blocks: Vec<Vec<ComplexMatrix>>,
    /// ‖S_{ℓ,j}‖_op for ℓ ≠ j (zero on the diagonal).
    pub offdiag_norms: Vec<Vec<f64>>,
    /// ‖S_{j,j} − I‖_op.
    pub diag_minus_identity: Vec<f64>,
}

impl ScatteringSample {
    pub fn max_offdiag(&self) -> f64 {
        self.offdiag_norms.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Arguments of the eigenvalues of S, sorted. For k > 1 they come from
    /// the Cayley transform H = i(I + S)⁻¹(S − I), Hermitian when S is
    /// unitary, with arg s = −2 atan h; empty if −1 is an eigenvalue.
    pub fn eigenphases(&self) -> Vec<f64> {
        let k = self.s.rows();
        if k == 1 {
            return vec![self.s[(0, 0)].arg()];
        }
        let id = ComplexMatrix::identity(k);
        let num = (&self.s - &id).scale(Complex64::new(0.0, 1.0));
        match linalg::solve(&(&id + &self.s), &num).and_then(|h| linalg::herm_eig(&h.hermitian_part())) {
            Ok(e) => {
                let mut ph: Vec<f64> = e.eigenvalues.iter().map(|h| -2.0 * h.atan()).collect();
                ph.sort_by(f64::total_cmp);
                ph
            }
            Err(_) => Vec::new(),
        }
    }
}

/// The stationary ingredients at a fiber: Z₀, λ and Z₀K*G(λ ± i0).
struct FiberLimit {
    lambda: f64,
    z0: ComplexMatrix,
    zkg: ComplexMatrix,
    err_est: f64,
}

fn fiber_limit(
    ctx: &ResolventContext<'_>,
    decomp: &SpectralDecomposition,
    lambda: f64,
    side: Side,
    opts: &ScatteringOptions,
) -> Result<FiberLimit> {
    check_exceptional(lambda, opts)?;
    let z0 = decomp.z0_of_lambda(lambda)?.matrix;
    let lhs = z0.matmul(&ctx.sys.k.adjoint());
    let bv = boundary_value_left(ctx, lambda, side, &opts.limit, &lhs)?;
    Ok(FiberLimit { lambda, z0, zkg: bv.g_bv, err_est: bv.err_est })
}

/// S(λ) = I − 2πiλ⁻¹Z₀M*KZ₀* + 2πiλ⁻²Z₀K*G(λ+i0)KZ₀* and the J̃ version
/// S̃(λ) = λ²I − 2πiλZ₀M*KZ₀* + 2πiZ₀K*G(λ+i0)KZ₀*.
pub fn scattering_matrix_stationary(
    ctx: &ResolventContext<'_>,
    decomp: &SpectralDecomposition,
    lambda: f64,
    opts: &ScatteringOptions,
) -> Result<ScatteringSample> {
    let sys = ctx.sys;
    let fl = fiber_limit(ctx, decomp, lambda, Side::Plus, opts)?;
    let kz = sys.k.matmul(&fl.z0.adjoint());
    let first = fl.z0.matmul(&sys.m.adjoint()).matmul(&kz);
    let second = fl.zkg.matmul(&kz);
    let l = Complex64::new(lambda, 0.0);
    let two_pi_i = Complex64::new(0.0, 2.0 * PI);
    let k = fl.z0.rows();
    let id = ComplexMatrix::identity(k);

    let mut s = id.clone();
    s.axpy(-two_pi_i / l, &first);
    s.axpy(two_pi_i / (l * l), &second);

    let mut s_tilde = id.scale(l * l);
    s_tilde.axpy(-two_pi_i * l, &first);
    s_tilde.axpy(two_pi_i, &second);

    let unitarity_defect = op_norm(&(&s.adjoint().matmul(&s) - &id));
    let st_norm = op_norm(&s_tilde);
    let tilde_defect = op_norm(&(&s_tilde - &s.scale(l * l))) / st_norm.max(f64::MIN_POSITIVE);
    let err_est = 2.0 * PI / (lambda * lambda) * fl.err_est * kz.norm_fro();

    let ranges = decomp.channel_ranges();
    let nc = ranges.len();
    let mut blocks = vec![Vec::with_capacity(nc); nc];
    let mut offdiag_norms = vec![vec![0.0; nc]; nc];
    let mut diag_minus_identity = vec![0.0; nc];
    for (li, rl) in ranges.iter().enumerate() {
        for (ji, rj) in ranges.iter().enumerate() {
            let b = s.submatrix(rl.start, rj.start, rl.len(), rj.len());
            if li == ji {
                diag_minus_identity[li] = op_norm(&(&b - &ComplexMatrix::identity(rl.len())));
            } else {
                offdiag_norms[li][ji] = op_norm(&b);
            }
            blocks[li].push(b);
        }
    }
    Ok(ScatteringSample {
        lambda,
        s,
        s_tilde,
        unitarity_defect,
        tilde_defect,
        err_est,
        blocks,
        offdiag_norms,
        diag_minus_identity,
    })
}

/// The fiber of W₊*W₋ at the bin nearest to λ, in the basis of the
/// decomposition.
pub fn scattering_matrix_time(
    w_plus: &WaveOperatorResult,
    w_minus: &WaveOperatorResult,
    decomp: &SpectralDecomposition,
    lambda: f64,
) -> Result<ComplexMatrix> {
    for w in [w_plus, w_minus] {
        if !w.converged {
            return Err(ScatteringError::Unconverged { target: w.target, log: w.convergence_log.clone() });
        }
    }
    if !decomp.delta.contains(lambda) {
        return Err(SpectralError::OutsideInterval { lambda, lo: decomp.delta.lo, hi: decomp.delta.hi }.into());
    }
    let basis = &decomp.bins[decomp.nearest_bin(lambda)].basis;
    let a = w_plus.w.matmul(basis);
    let b = w_minus.w.matmul(basis);
    Ok(a.adjoint().matmul(&b))
}

/// ‖[W₊*W₋, A₀]‖_op restricted to Ran E₀(Δ).
pub fn scattering_commutator(sys: &MultichannelSystem, w_plus: &WaveOperatorResult, w_minus: &WaveOperatorResult) -> f64 {
    let s = w_plus.w.adjoint().matmul(&w_minus.w);
    let e0 = w_plus.input.matmul(&w_plus.input.adjoint());
    let c = s.commutator(&sys.a0);
    op_norm(&c.matmul(&e0))
}

/// Γ±(λ) as an operator on ℋ₀ (acting on g with f = Q*g), and as an
/// operator on ℋ through the right inverse P = (N+1)⁻¹(Q₀*)⁻¹J* of Q*.
#[derive(Debug, Clone)]
pub struct GammaSample {
    pub lambda: f64,
    pub side: Side,
    /// Z₀M* − λ⁻¹Z₀K*G(λ ± i0), fiber_dim × dim ℋ₀.
    pub on_g: ComplexMatrix,
    /// on_g · P, fiber_dim × dim ℋ.
    pub on_f: ComplexMatrix,
    /// Frobenius error bound of on_g.
    pub err_est: f64,
}

fn right_inverse_of_q_adj(sys: &MultichannelSystem) -> Result<ComplexMatrix> {
    let p = sys.q0_adj_inv_left(&sys.j.adjoint()).map_err(ResolventError::from)?;
    Ok(p.scale_real(1.0 / (sys.num_channels() + 1) as f64))
}

pub fn gamma_operator(
    ctx: &ResolventContext<'_>,
    decomp: &SpectralDecomposition,
    lambda: f64,
    side: Side,
    opts: &ScatteringOptions,
) -> Result<GammaSample> {
    let p = right_inverse_of_q_adj(ctx.sys)?;
    gamma_with(ctx, decomp, lambda, side, opts, &p)
}

fn gamma_with(
    ctx: &ResolventContext<'_>,
    decomp: &SpectralDecomposition,
    lambda: f64,
    side: Side,
    opts: &ScatteringOptions,
    p: &ComplexMatrix,
) -> Result<GammaSample> {
    let fl = fiber_limit(ctx, decomp, lambda, side, opts)?;
    let mut on_g = fl.z0.matmul(&ctx.sys.m.adjoint());
    on_g.axpy(Complex64::new(-1.0 / fl.lambda, 0.0), &fl.zkg);
    let on_f = on_g.matmul(p);
    Ok(GammaSample { lambda, side, on_g, on_f, err_est: fl.err_est / lambda.abs() })
}

/// Γ±(λ)f for f = Q*g.
pub fn gamma_pm(
    ctx: &ResolventContext<'_>,
    decomp: &SpectralDecomposition,
    lambda: f64,
    side: Side,
    opts: &ScatteringOptions,
    g: &[Complex64],
) -> Result<Vec<Complex64>> {
    Ok(gamma_operator(ctx, decomp, lambda, side, opts)?.on_g.mul_vec(g))
}

/// Agreement of the J̃-representation with the J-representation at a
/// complex energy z = λ_k ± iε on the fiber of bin k, using the defining
/// formulas with the matrix resolvent R(z):
/// Γ̃ = Γ₀(J̃* − Ṽ*R(z))Q*, Γ = Z₀M* − λ⁻¹Z₀K*·QR(z)Q*.
/// Returns ‖Γ̃ − λΓ‖ / ‖Γ̃‖.
pub fn gamma_tilde_relation(sys: &MultichannelSystem, decomp: &SpectralDecomposition, bin: usize, eps: f64, side: Side) -> Result<f64> {
    let b = &decomp.bins[bin];
    let lambda = b.center;
    let z = Complex64::new(lambda, side.sign() * eps);
    let r = crate::resolvent::direct_resolvent(sys, z)?;
    let gamma0 = b.basis.adjoint().scale_real(decomp.bin_width.powf(-0.5));
    // J̃ = JA₀, Ṽ = JTA₀.
    let jt = sys.j.matmul(&sys.a0);
    let vt = sys.j.matmul(&sys.t).matmul(&sys.a0);
    let inner = &jt.adjoint() - &vt.adjoint().matmul(&r);
    let q_adj = sys.q.adjoint();
    let tilde = gamma0.matmul(&inner).matmul(&q_adj);
    let g = sys.q.matmul(&r).matmul(&q_adj);
    let z0 = decomp.z0_bin(bin);
    let mut gamma = z0.matmul(&sys.m.adjoint());
    gamma.axpy(Complex64::new(-1.0 / lambda, 0.0), &z0.matmul(&sys.k.adjoint()).matmul(&g));
    let diff = &tilde - &gamma.scale_real(lambda);
    Ok(op_norm(&diff) / op_norm(&tilde).max(f64::MIN_POSITIVE))
}

/// W± = F±*F₀ assembled by the midpoint rule over the bins of the
/// decomposition: W± = Σ_k h^{1/2} (Γ±(λ_k)P)* basis_k*.
pub fn wave_op_stationary(
    ctx: &ResolventContext<'_>,
    decomp: &SpectralDecomposition,
    sign: Side,
    opts: &ScatteringOptions,
) -> Result<WaveOperatorResult> {
    let sys = ctx.sys;
    let p = right_inverse_of_q_adj(sys)?;
    let p_norm = op_norm(&p);
    let gammas: Vec<GammaSample> = decomp
        .bins
        .par_iter()
        .map(|b| gamma_with(ctx, decomp, b.center, sign, opts, &p))
        .collect::<Result<Vec<_>>>()?;
    let h = decomp.bin_width;
    let cols: Vec<ComplexMatrix> = gammas.iter().map(|g| g.on_f.adjoint().scale_real(h.sqrt())).collect();
    let columns = ComplexMatrix::hstack(&cols.iter().collect::<Vec<_>>());
    let input = decomp.stacked_basis();
    let evals: Vec<f64> = decomp.bins.iter().flat_map(|b| std::iter::repeat(b.center).take(b.basis.cols())).collect();
    let budget = gammas.iter().map(|g| h * (g.err_est * p_norm).powi(2)).sum::<f64>().sqrt();
    let floor = opts.limit.schedule.last().copied().unwrap_or(0.0);
    finish(sys, columns, input, evals, WaveMethod::Stationary, Target::Full, sign, floor, vec![(floor, budget)], true)
}

/// Frobenius budget of a stationary wave operator (the single log entry).
pub fn stationary_budget(w: &WaveOperatorResult) -> f64 {
    w.convergence_log.first().map_or(0.0, |e| e.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_system, make_multiplication_channels, make_rank_one_model, midpoint_grid, ChannelSet};
    use crate::resolvent::FreeModel;
    use crate::spectral::diagonalize_a0;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn window_transform_is_normalised() {
        assert!((window_transform(0.0) - ONE).norm() < 1e-12);
        // Direct quadrature of ∫_1^2 (1 − cos 2π(s−1)) e^{ixs} ds.
        for &x in &[0.3, 5.0, -17.0] {
            let n = 4000;
            let mut q = c(0.0, 0.0);
            for k in 0..n {
                let s = 1.0 + (k as f64 + 0.5) / n as f64;
                q += c(0.0, x * s).exp() * (1.0 - (2.0 * PI * (s - 1.0)).cos()) / n as f64;
            }
            assert!((window_transform(x) - q).norm() < 1e-6);
        }
        assert!((abel_factor(0.0, 0.1, Side::Plus) - ONE).norm() < 1e-15);
    }

    #[test]
    fn decoupled_wave_operator_is_j_e0() {
        let grid = midpoint_grid(1.0, 2.0, 12);
        let sys = build_system(make_multiplication_channels(&grid, 2, 3.0, 0.0, 0).unwrap()).unwrap();
        let delta = Interval::new(1.0, 2.0).unwrap();
        for method in [WaveMethod::Abel, WaveMethod::Window] {
            for sign in [Side::Plus, Side::Minus] {
                let params = WaveParams::auto(&sys, delta, method);
                let w = wave_op_time(&sys, Target::Full, delta, sign, method, params).unwrap();
                let e0 = linalg::spectral_projection(&sys.a0, delta).unwrap();
                let want = sys.j.matmul(&e0);
                assert!((&w.w - &want).norm_max() < 1e-12);
                assert!(w.isometry_defect < 1e-12 && w.intertwine_defect < 1e-12);
            }
        }
    }

    #[test]
    fn decoupled_scattering_matrix_is_identity() {
        let grid = midpoint_grid(1.0, 2.0, 16);
        let sys = build_system(make_multiplication_channels(&grid, 1, 3.0, 0.0, 0).unwrap()).unwrap();
        let delta = Interval::new(1.0, 2.0).unwrap();
        let ctx = ResolventContext::new(&sys).unwrap();
        let d = diagonalize_a0(&sys, delta, 1.0 / 16.0).unwrap();
        let opts = ScatteringOptions::default();
        let s = scattering_matrix_stationary(&ctx, &d, d.bins[7].center, &opts).unwrap();
        assert!((&s.s - &ComplexMatrix::identity(1)).norm_max() < 1e-10, "{:?}", s.s);
        let g = gamma_operator(&ctx, &d, d.bins[7].center, Side::Minus, &opts).unwrap();
        let z0m = d.z0_bin(7).matmul(&sys.m.adjoint());
        assert!((&g.on_g - &z0m).norm_max() < 1e-9);
        let err = scattering_matrix_stationary(
            &ctx,
            &d,
            1.5,
            &ScatteringOptions { exceptional: vec![1.5], ..ScatteringOptions::default() },
        );
        assert!(matches!(err, Err(ScatteringError::ExceptionalEnergy { .. })));
    }

    #[test]
    fn rank_one_s_matrix_is_unitary_and_tilde_consistent() {
        let set = make_rank_one_model(40, 1.0, 2.0, 2.0, 2.0, 0.3).unwrap();
        let sys = build_system(set).unwrap();
        let ctx = ResolventContext::new(&sys).unwrap();
        let d = diagonalize_a0(&sys, Interval::new(1.0, 2.0).unwrap(), 1.0 / 40.0).unwrap();
        let opts = ScatteringOptions::default();
        let s = scattering_matrix_stationary(&ctx, &d, d.bins[17].center, &opts).unwrap();
        assert!(s.unitarity_defect < 1e-3, "{}", s.unitarity_defect);
        assert!(s.tilde_defect < 1e-12);
        assert!((s.s[(0, 0)] - ONE).norm() > 1e-3);
        let rel = gamma_tilde_relation(&sys, &d, 17, 0.01, Side::Plus).unwrap();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn exact_model_has_no_boundary_value_on_a_pole() {
        let set = make_rank_one_model(10, 1.0, 2.0, 2.0, 2.0, 0.3).unwrap();
        let sys = build_system(set).unwrap();
        let ctx = ResolventContext::new(&sys).unwrap();
        let d = diagonalize_a0(&sys, Interval::new(1.0, 2.0).unwrap(), 0.1).unwrap();
        let eig = sys.eig_a.eigenvalues.iter().copied().find(|&l| l > 1.2 && l < 1.8).unwrap();
        let opts = ScatteringOptions {
            limit: LimitOptions { model: FreeModel::Exact, ..LimitOptions::default() },
            ..ScatteringOptions::default()
        };
        assert!(gamma_operator(&ctx, &d, eig, Side::Plus, &opts).is_err());
    }

    #[test]
    fn orthogonal_channels_have_orthogonal_ranges() {
        let a1 = ComplexMatrix::from_real_diag(&[1.2, 1.4, 0.0, 0.0]);
        let a2 = ComplexMatrix::from_real_diag(&[0.0, 0.0, 1.3, 1.6]);
        let set = ChannelSet::new(ComplexMatrix::zeros(4, 4), vec![a1, a2], ComplexMatrix::identity(4)).unwrap();
        let sys = build_system(set).unwrap();
        let delta = Interval::new(1.0, 2.0).unwrap();
        let params = WaveParams { start: 0.1, steps: 4 };
        let ws: Vec<WaveOperatorResult> = (1..=2)
            .map(|j| wave_op_time(&sys, Target::Channel(j), delta, Side::Plus, WaveMethod::Abel, params).unwrap())
            .collect();
        // Exact wave operators: every increment vanishes.
        for w in &ws {
            assert!(w.converged && w.isometry_defect < 1e-14);
        }
        let gram = channel_orthogonality(&ws).unwrap();
        assert!(gram.iter().flatten().all(|&g| g < 1e-14), "{gram:?}");
        // A schedule without increments certifies nothing.
        let single = WaveParams { start: 0.1, steps: 0 };
        let w1 = wave_op_time(&sys, Target::Channel(1), delta, Side::Plus, WaveMethod::Abel, single).unwrap();
        assert!(matches!(channel_orthogonality(&[w1]), Err(ScatteringError::Unconverged { .. })));
        assert!(matches!(
            wave_op_time(&sys, Target::Channel(3), delta, Side::Plus, WaveMethod::Abel, params),
            Err(ScatteringError::BadChannel(3))
        ));
    }
}
