//! The multichannel triple (A₀, A, J), the coupling matrix T, the smoothing
//! frame Q₀ and the derived operators K, M₀, M, K̃, plus assumption audits and
//! seeded model factories.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{
    self, herm_eig, op_norm, propagator_from_eig, sigma_min, singular_values, ComplexMatrix,
    HermitianEig, Interval, LinalgError, Lu, TOL_HERM,
};

/// Default cap on cond(X).
pub const COND_CAP: f64 = 1e8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("{which} is not Hermitian (relative defect {defect:.3e})")]
    NonHermitian { which: String, defect: f64 },
    #[error("X is ill-conditioned: cond(X) = {cond:.3e} exceeds {cap:.3e}")]
    IllConditionedX { cond: f64, cap: f64 },
    #[error("interval ({lo}, {hi}) contains or touches 0")]
    IntervalContainsZero { lo: f64, hi: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("serialisation: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Where a channel set came from, for reproduction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub factory: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, f64>,
}

/// The channel data: A = A∞ + A₁ + … + A_N on ℋ = ℂⁿ and the smoothing
/// weight X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub n: usize,
    #[serde(rename = "N")]
    pub num_channels: usize,
    pub a_inf: ComplexMatrix,
    pub channels: Vec<ComplexMatrix>,
    pub x: ComplexMatrix,
    #[serde(default)]
    pub provenance: Provenance,
}

impl ChannelSet {
    pub fn new(a_inf: ComplexMatrix, channels: Vec<ComplexMatrix>, x: ComplexMatrix) -> Result<Self> {
        let n = a_inf.rows();
        let set = Self {
            n,
            num_channels: channels.len(),
            a_inf,
            channels,
            x,
            provenance: Provenance::default(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Checks shapes, Hermiticity and injectivity of X.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.num_channels == 0 || self.channels.len() != self.num_channels {
            return Err(ModelError::BadDimensions(format!(
                "N = {} with {} channel matrices",
                self.num_channels,
                self.channels.len()
            )));
        }
        let mut all = vec![("A_inf".to_string(), &self.a_inf), ("X".to_string(), &self.x)];
        for (j, a) in self.channels.iter().enumerate() {
            all.push((format!("A_{}", j + 1), a));
        }
        for (name, m) in &all {
            if m.shape() != (n, n) {
                return Err(ModelError::BadDimensions(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for (name, m) in all.iter().filter(|(name, _)| name != "X") {
            let defect = m.hermitian_defect();
            if defect > TOL_HERM {
                return Err(ModelError::NonHermitian { which: name.clone(), defect });
            }
        }
        if n == 0 || sigma_min(&self.x) == 0.0 {
            return Err(ModelError::BadDimensions("X has a kernel".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| ModelError::Serde(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(s).map_err(|e| ModelError::Serde(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }
}

/// The assembled two-space triple with all derived operators.
///
/// ℋ₀ = ℋ^{N+1}; block 0 carries the zero operator, block j ≥ 1 carries A_j.
#[derive(Debug, Clone)]
pub struct MultichannelSystem {
    pub base: ChannelSet,
    pub a0: ComplexMatrix,
    pub a: ComplexMatrix,
    pub j: ComplexMatrix,
    pub t: ComplexMatrix,
    pub q0: ComplexMatrix,
    pub q: ComplexMatrix,
    pub k: ComplexMatrix,
    pub m0: ComplexMatrix,
    pub m: ComplexMatrix,
    pub ktilde: ComplexMatrix,
    /// Eigendecomposition of A.
    pub eig_a: HermitianEig,
    /// Eigendecompositions of the diagonal blocks of A₀ (index 0 is the zero block).
    pub eig_blocks: Vec<HermitianEig>,
    x_lu: Lu,
    xstar_lu: Lu,
}

impl MultichannelSystem {
    /// Ambient dimension n of ℋ.
    pub fn n(&self) -> usize {
        self.base.n
    }

    /// Number of channels N.
    pub fn num_channels(&self) -> usize {
        self.base.num_channels
    }

    /// Dimension (N+1)n of ℋ₀.
    pub fn dim0(&self) -> usize {
        (self.base.num_channels + 1) * self.base.n
    }

    /// Reference scale ‖A‖ + ‖A₀‖ for relative residuals.
    pub fn scale(&self) -> f64 {
        let na = self.eig_a.spectral_radius();
        let na0 = self.eig_blocks.iter().fold(0.0_f64, |m, e| m.max(e.spectral_radius()));
        (na + na0).max(f64::MIN_POSITIVE)
    }

    /// Block (i, c) of a D×D matrix in the (N+1)×(N+1) block layout.
    pub fn block(&self, m: &ComplexMatrix, i: usize, c: usize) -> ComplexMatrix {
        let n = self.n();
        m.submatrix(i * n, c * n, n, n)
    }

    /// Q₀⁻¹ B (block-diagonal solve with X).
    pub fn q0_inv_left(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.blockwise_left(&self.x_lu, b)
    }

    /// (Q₀*)⁻¹ B.
    pub fn q0_adj_inv_left(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.blockwise_left(&self.xstar_lu, b)
    }

    /// B Q₀⁻¹, i.e. ((Q₀*)⁻¹ B*)*.
    pub fn q0_inv_right(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        Ok(self.q0_adj_inv_left(&b.adjoint())?.adjoint())
    }

    /// B (Q₀*)⁻¹.
    pub fn q0_adj_inv_right(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        Ok(self.q0_inv_left(&b.adjoint())?.adjoint())
    }

    /// X⁻¹ B.
    pub fn x_inv_left(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        Ok(self.x_lu.solve(b)?)
    }

    /// (X*)⁻¹ B.
    pub fn x_adj_inv_left(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        Ok(self.xstar_lu.solve(b)?)
    }

    fn blockwise_left(&self, lu: &Lu, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.n();
        let blocks = b.rows() / n;
        if b.rows() != blocks * n || blocks != self.num_channels() + 1 {
            return Err(ModelError::BadDimensions(format!("block solve with {} rows", b.rows())));
        }
        let mut out = ComplexMatrix::zeros(b.rows(), b.cols());
        for i in 0..blocks {
            let rhs = b.submatrix(i * n, 0, n, b.cols());
            out.set_submatrix(i * n, 0, &lu.solve(&rhs)?);
        }
        Ok(out)
    }

    /// Residual ‖AJ − JA₀ − JT‖_op.
    pub fn factorisation_residual(&self) -> f64 {
        let lhs = &self.a.matmul(&self.j) - &self.j.matmul(&self.a0);
        op_norm(&(&lhs - &self.j.matmul(&self.t)))
    }
}

/// Assembles the triple and all derived operators.
pub fn build_system(base: ChannelSet) -> Result<MultichannelSystem> {
    build_system_with_cap(base, COND_CAP)
}

pub fn build_system_with_cap(base: ChannelSet, cond_cap: f64) -> Result<MultichannelSystem> {
    base.validate()?;
    let n = base.n;
    let nch = base.num_channels;
    let nb = nch + 1;
    let d = nb * n;
    let cond = linalg::cond(&base.x);
    if !(cond <= cond_cap) {
        return Err(ModelError::IllConditionedX { cond, cap: cond_cap });
    }
    let x_lu = Lu::factor(&base.x)?;
    let xstar_lu = Lu::factor(&base.x.adjoint())?;

    let mut diag_blocks = vec![ComplexMatrix::zeros(n, n)];
    diag_blocks.extend(base.channels.iter().map(|a| a.hermitian_part()));
    let a0 = ComplexMatrix::block_diag(&diag_blocks.iter().collect::<Vec<_>>());

    let mut a = base.a_inf.hermitian_part();
    for aj in &diag_blocks[1..] {
        a = &a + aj;
    }

    let eye = ComplexMatrix::identity(n);
    let j = ComplexMatrix::hstack(&vec![&eye; nb]);

    // Row 0 carries A∞ in every column; row i ≥ 1 carries A_i off the diagonal.
    let a_inf = base.a_inf.hermitian_part();
    let mut t = ComplexMatrix::zeros(d, d);
    for i in 0..nb {
        for c in 0..nb {
            if i == 0 {
                t.set_submatrix(0, c * n, &a_inf);
            } else if i != c {
                t.set_submatrix(i * n, c * n, &diag_blocks[i]);
            }
        }
    }

    let q0 = ComplexMatrix::block_diag(&vec![&base.x; nb]);
    let q = q0.matmul(&j.adjoint());

    // K = (Q₀*)⁻¹ T A₀ Q₀⁻¹, blockwise: X*⁻¹ T_{ic} A_c X⁻¹.
    let mut k = ComplexMatrix::zeros(d, d);
    let mut m0 = ComplexMatrix::zeros(d, d);
    let mut ktilde = ComplexMatrix::zeros(d, d);
    for i in 0..nb {
        for c in 0..nb {
            let tic = t.submatrix(i * n, c * n, n, n);
            if c > 0 && tic.norm_max() > 0.0 {
                let kb = double_solve(&xstar_lu, &tic.matmul(&diag_blocks[c]), &xstar_lu)?;
                k.set_submatrix(i * n, c * n, &kb);
            }
            // M₀ = Q₀T*Q₀⁻¹, block (i, c) = X (T_{ci})* X⁻¹.
            let tci = t.submatrix(c * n, i * n, n, n);
            if tci.norm_max() > 0.0 {
                let xt = base.x.matmul(&tci.adjoint());
                let mb = xstar_lu.solve(&xt.adjoint())?.adjoint();
                m0.set_submatrix(i * n, c * n, &mb);
            }
            // K̃ blocks: X*⁻¹ A_i A_c X⁻¹ for i ≠ c, both ≥ 1.
            if i > 0 && c > 0 && i != c {
                let prod = diag_blocks[i].matmul(&diag_blocks[c]);
                let kb = double_solve(&xstar_lu, &prod, &xstar_lu)?;
                ktilde.set_submatrix(i * n, c * n, &kb);
            }
        }
    }
    // M = Q₀J*JQ₀⁻¹ = J*J exactly: every block of J*J is the identity.
    let m = j.adjoint().matmul(&j);

    let eig_a = herm_eig(&a)?;
    let eig_blocks = diag_blocks.iter().map(herm_eig).collect::<std::result::Result<Vec<_>, _>>()?;

    Ok(MultichannelSystem {
        base,
        a0,
        a,
        j,
        t,
        q0,
        q,
        k,
        m0,
        m,
        ktilde,
        eig_a,
        eig_blocks,
        x_lu,
        xstar_lu,
    })
}

/// X*⁻¹ B X⁻¹ given factorisations of X* (used on both sides).
fn double_solve(xstar_lu: &Lu, b: &ComplexMatrix, xstar_lu_right: &Lu) -> Result<ComplexMatrix> {
    let left = xstar_lu.solve(b)?;
    // left X⁻¹ = (X*⁻¹ left*)*.
    Ok(xstar_lu_right.solve(&left.adjoint())?.adjoint())
}

/// Tolerances of an assumption audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditTolerances {
    /// Relative factorisation residual.
    pub residual: f64,
    /// Smallest admissible singular value for injectivity items.
    pub kernel_floor: f64,
    /// Largest admissible norm for boundedness items.
    pub bound_cap: f64,
    /// Smallest admissible smoothness exponent.
    pub min_gamma: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self { residual: 1e-10, kernel_floor: 1e-12, bound_cap: 1e8, min_gamma: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemKind {
    /// Passes when value ≤ tolerance.
    Residual,
    /// Passes when value ≥ tolerance.
    Floor,
    /// Reported only.
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub item: String,
    pub quantity: String,
    pub value: f64,
    pub tolerance: f64,
    pub kind: ItemKind,
    pub pass: bool,
}

impl AuditItem {
    fn new(item: &str, quantity: &str, value: f64, tolerance: f64, kind: ItemKind) -> Self {
        let pass = match kind {
            ItemKind::Residual => value <= tolerance,
            ItemKind::Floor => value >= tolerance,
            ItemKind::Report => true,
        };
        Self { item: item.into(), quantity: quantity.into(), value, tolerance, kind, pass }
    }
}

/// Quantitative audit of the channel and two-space assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub items: Vec<AuditItem>,
    /// Singular values of M₀², descending (compactness surrogate).
    pub m0_squared_profile: Vec<f64>,
    /// Singular values of JA₀²J* − A², descending.
    pub ja0j_profile: Vec<f64>,
    /// Singular values of K, descending.
    pub k_profile: Vec<f64>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn get(&self, quantity: &str) -> Option<&AuditItem> {
        self.items.iter().find(|i| i.quantity == quantity)
    }

    /// Adds the smoothness items (channel and two-space versions) given a
    /// measured Hölder exponent.
    pub fn with_smoothness(mut self, gamma_hat: f64, tols: &AuditTolerances) -> Self {
        self.items.push(AuditItem::new(
            "channel smoothness",
            "gamma_hat(X, A_j)",
            gamma_hat,
            tols.min_gamma,
            ItemKind::Floor,
        ));
        self.items.push(AuditItem::new(
            "two-space smoothness",
            "gamma_hat(Q0, A0)",
            gamma_hat,
            tols.min_gamma,
            ItemKind::Floor,
        ));
        self
    }
}

fn rel(res: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        res / scale
    } else {
        res
    }
}

/// Audits the assumptions on Δ (which must keep away from 0).
pub fn audit(sys: &MultichannelSystem, delta: Interval, tols: &AuditTolerances) -> Result<AssumptionReport> {
    if delta.closure_contains(0.0) {
        return Err(ModelError::IntervalContainsZero { lo: delta.lo, hi: delta.hi });
    }
    let base = &sys.base;
    let n = sys.n();
    let nch = sys.num_channels();
    let xl = &sys.x_lu;
    let xs = &sys.xstar_lu;
    let mut items = Vec::new();

    let smin_x = sigma_min(&base.x);
    items.push(AuditItem::new("weight", "sigma_min(X)", smin_x, tols.kernel_floor, ItemKind::Floor));

    let a_inf = &base.a_inf;
    let k_inf = double_solve(xs, a_inf, xs)?;
    let res = op_norm(&(a_inf - &base.x.adjoint().matmul(&k_inf).matmul(&base.x)));
    items.push(AuditItem::new(
        "A_inf factorisation",
        "A_inf - X*K_inf X",
        rel(res, op_norm(a_inf)),
        tols.residual,
        ItemKind::Residual,
    ));

    for jj in 0..nch {
        for ll in 0..nch {
            if jj == ll {
                continue;
            }
            let prod = base.channels[jj].matmul(&base.channels[ll]);
            let kjl = double_solve(xs, &prod, xs)?;
            let res = op_norm(&(&prod - &base.x.adjoint().matmul(&kjl).matmul(&base.x)));
            items.push(AuditItem::new(
                "channel products",
                &format!("A_{}A_{} - X*K_{},{}X", jj + 1, ll + 1, jj + 1, ll + 1),
                rel(res, op_norm(&prod)),
                tols.residual,
                ItemKind::Residual,
            ));
            items.push(AuditItem::new(
                "channel products",
                &format!("|A_{}A_{}|", jj + 1, ll + 1),
                op_norm(&prod),
                0.0,
                ItemKind::Report,
            ));
        }
    }

    for (jj, aj) in base.channels.iter().enumerate() {
        let conj = xl.solve(&base.x.matmul(aj).adjoint())?.adjoint();
        items.push(AuditItem::new(
            "weighted channels",
            &format!("|X A_{} X^-1|", jj + 1),
            op_norm(&conj),
            tols.bound_cap,
            ItemKind::Residual,
        ));
    }

    items.push(AuditItem::new(
        "J injective",
        "sigma_min(J*)",
        sigma_min(&sys.j.adjoint()),
        tols.kernel_floor,
        ItemKind::Floor,
    ));

    // Ker J ∩ Ker(A₀ + T − z) at z = centre of Δ: smallest singular value of
    // the stacked operator.
    let z = Complex64::new(delta.mid(), 0.0);
    let stacked = ComplexMatrix::vstack(&[&sys.j, &(&sys.a0 + &sys.t).shift_diag(-z)]);
    items.push(AuditItem::new(
        "kernel intersection",
        "sigma_min([J; A0+T-z])",
        sigma_min(&stacked),
        tols.kernel_floor,
        ItemKind::Floor,
    ));
    items.push(AuditItem::new("Q0 injective", "sigma_min(Q0)", smin_x, tols.kernel_floor, ItemKind::Floor));

    let ta0 = sys.t.matmul(&sys.a0);
    let res = op_norm(&(&ta0 - &sys.q0.adjoint().matmul(&sys.k).matmul(&sys.q0)));
    items.push(AuditItem::new(
        "T A0 factorisation",
        "T A0 - Q0* K Q0",
        rel(res, op_norm(&ta0).max(sys.scale())),
        tols.residual,
        ItemKind::Residual,
    ));

    let m0_norm = op_norm(&sys.m0);
    items.push(AuditItem::new("M0 compactness", "|M0|", m0_norm, tols.bound_cap, ItemKind::Residual));
    let m0sq = sys.m0.matmul(&sys.m0);
    let m0_squared_profile = singular_values(&m0sq);
    items.push(AuditItem::new(
        "M0 compactness",
        "|M0^2|",
        m0_squared_profile.first().copied().unwrap_or(0.0),
        0.0,
        ItemKind::Report,
    ));

    let mut q0jjq0 = ComplexMatrix::zeros(sys.dim0(), sys.dim0());
    for i in 0..=nch {
        for c in 0..=nch {
            // X I X⁻¹ computed literally, to measure the identity M = J*J.
            let blk = xs.solve(&base.x.adjoint())?.adjoint();
            q0jjq0.set_submatrix(i * n, c * n, &blk);
        }
    }
    items.push(AuditItem::new(
        "M structure",
        "Q0 J*J Q0^-1 - J*J",
        op_norm(&(&q0jjq0 - &sys.m)),
        tols.residual,
        ItemKind::Residual,
    ));
    items.push(AuditItem::new("M structure", "|M|", op_norm(&sys.m), tols.bound_cap, ItemKind::Residual));

    let jj_minus_i = sys.m.shift_diag(Complex64::new(-1.0, 0.0));
    let lhs = sys.a0.matmul(&jj_minus_i).matmul(&sys.a0);
    let res = op_norm(&(&lhs - &sys.q0.adjoint().matmul(&sys.ktilde).matmul(&sys.q0)));
    items.push(AuditItem::new(
        "Ktilde factorisation",
        "A0(J*J-I)A0 - Q0* Ktilde Q0",
        rel(res, op_norm(&lhs).max(sys.scale())),
        tols.residual,
        ItemKind::Residual,
    ));

    let a0sq = sys.a0.matmul(&sys.a0);
    let diff = &sys.j.matmul(&a0sq).matmul(&sys.j.adjoint()) - &sys.a.matmul(&sys.a);
    let ja0j_profile = singular_values(&diff);
    items.push(AuditItem::new(
        "A^2 compactness",
        "|J A0^2 J* - A^2|",
        ja0j_profile.first().copied().unwrap_or(0.0),
        0.0,
        ItemKind::Report,
    ));
    let k_profile = singular_values(&sys.k);
    let _ = xl;
    Ok(AssumptionReport { items, m0_squared_profile, ja0j_profile, k_profile })
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(gauss(rng), gauss(rng)));
    g.hermitian_part()
}

/// Standard normal sample by Box–Muller.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Common spectral window of the random factory.
pub const RANDOM_BAND: (f64, f64) = (1.0, 2.0);

/// Random coupled channels: A_j = Π_j D_j Π_j* + δ C_j with Π_j isometries onto
/// mutually orthogonal subspaces, D_j filling (1, 2), ‖C_j‖ = 1.
pub fn make_random_channels(n: usize, num_channels: usize, delta: f64, seed: u64) -> Result<ChannelSet> {
    if num_channels == 0 || n < num_channels || !(delta >= 0.0) {
        return Err(ModelError::BadDimensions(format!("n = {n}, N = {num_channels}, delta = {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_hermitian(&mut rng, n);
    let u = propagator_from_eig(&herm_eig(&h)?, 1.0);
    let m = n / num_channels;
    let (lo, hi) = RANDOM_BAND;
    let mut channels = Vec::with_capacity(num_channels);
    for jj in 0..num_channels {
        let pi = u.columns(jj * m, m);
        let d: Vec<f64> = (0..m)
            .map(|k| lo + (hi - lo) * (k as f64 + 0.25 + 0.5 * rng.gen::<f64>()) / m as f64)
            .collect();
        let mut aj = scale_cols_real(&pi, &d).matmul(&pi.adjoint());
        let c = random_hermitian(&mut rng, n);
        let cn = op_norm(&c);
        if delta > 0.0 && cn > 0.0 {
            aj.axpy(Complex64::new(delta / cn, 0.0), &c);
        }
        channels.push(aj.hermitian_part());
    }
    let x = ComplexMatrix::from_real_diag(&(0..n).map(|_| 0.5 + 0.5 * rng.gen::<f64>()).collect::<Vec<_>>());
    let mut params = BTreeMap::new();
    params.insert("n".into(), n as f64);
    params.insert("N".into(), num_channels as f64);
    params.insert("delta".into(), delta);
    Ok(ChannelSet::new(ComplexMatrix::zeros(n, n), channels, x)?.with_provenance(Provenance {
        factory: "random".into(),
        seed: Some(seed),
        params,
    }))
}

fn scale_cols_real(m: &ComplexMatrix, d: &[f64]) -> ComplexMatrix {
    linalg::scale_columns(m, &d.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>())
}

/// Centred lattice positions a − (m−1)/2.
pub fn positions(m: usize) -> Vec<f64> {
    (0..m).map(|a| a as f64 - (m as f64 - 1.0) / 2.0).collect()
}

/// Unitary map from the energy representation (index b carries grid[b]) to
/// the position lattice: U_{ab} = e^{i x_a k_b}/√m with k_b = 2π(b − (m−1)/2)/m.
pub fn position_transform(m: usize) -> ComplexMatrix {
    let pos = positions(m);
    let s = 1.0 / (m as f64).sqrt();
    ComplexMatrix::from_fn(m, m, |a, b| Complex64::from_polar(s, pos[a] * 2.0 * PI * pos[b] / m as f64))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(ModelError::BadGrid("need at least two points".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::BadGrid("grid must be finite and strictly increasing".into()));
    }
    if grid[0] <= 0.0 && grid[grid.len() - 1] >= 0.0 {
        return Err(ModelError::BadGrid("grid straddles 0".into()));
    }
    Ok(())
}

/// Uniform midpoint grid of m points on (lo, hi).
pub fn midpoint_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let h = (hi - lo) / m as f64;
    (0..m).map(|a| lo + (a as f64 + 0.5) * h).collect()
}

/// Discretised multiplication channels. Channel j lives on the j-th block of
/// ℋ = (ℂ^m)^N, where it is the multiplication by the grid in the energy
/// representation; the channels are then coupled by the unitaries
/// W_j = exp(iδH_j), where H_j links block j to the other blocks through a
/// Gaussian profile of width w localised at the lattice origin, with random
/// phases. H_j is normalised so that δ is the first-order (Born) size of the
/// off-diagonal blocks of the scattering matrix. X is the
/// weight (1 + (x/w)²)^{−1} on the position lattice, written in the energy
/// representation.
pub fn make_multiplication_channels(
    grid: &[f64],
    num_channels: usize,
    w: f64,
    delta: f64,
    seed: u64,
) -> Result<ChannelSet> {
    check_grid(grid)?;
    if num_channels == 0 || !(w > 0.0) || !(delta >= 0.0) {
        return Err(ModelError::BadDimensions(format!("N = {num_channels}, w = {w}, delta = {delta}")));
    }
    let m = grid.len();
    let n = m * num_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = position_transform(m);
    let pos = positions(m);

    // Gaussian bump φ in position, expressed in the energy representation.
    let phi_pos: Vec<Complex64> = pos.iter().map(|x| Complex64::new((-x * x / (2.0 * w * w)).exp(), 0.0)).collect();
    let phi = u.adjoint().mul_vec(&phi_pos);
    let phi_norm2: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
    let phi_outer = ComplexMatrix::from_fn(m, m, |a, b| phi[a] * phi[b].conj() / phi_norm2);
    // First-order on-shell coupling between two channels at grid[b] is
    // δ·grid[b]·|φ_b|²/‖φ‖², acting against the density 1/h_b; dividing by
    // its maximum times 2π makes δ the Born size of the off-diagonal S blocks.
    let born = (0..m)
        .map(|b| {
            let h = if b + 1 < m { grid[b + 1] - grid[b] } else { grid[b] - grid[b - 1] };
            2.0 * PI * grid[b].abs() * phi[b].norm_sqr() / phi_norm2 / h
        })
        .fold(0.0_f64, f64::max);

    let gridm = ComplexMatrix::from_real_diag(grid);
    let mut channels = Vec::with_capacity(num_channels);
    for jj in 0..num_channels {
        let mut base_j = ComplexMatrix::zeros(n, n);
        base_j.set_submatrix(jj * m, jj * m, &gridm);
        let mut hj = ComplexMatrix::zeros(n, n);
        for ll in 0..num_channels {
            if ll == jj {
                continue;
            }
            let r = Complex64::from_polar(1.0 / born, 2.0 * PI * rng.gen::<f64>());
            let blk = phi_outer.scale(r);
            let cur = hj.submatrix(jj * m, ll * m, m, m);
            hj.set_submatrix(jj * m, ll * m, &(&cur + &blk));
            let cur = hj.submatrix(ll * m, jj * m, m, m);
            hj.set_submatrix(ll * m, jj * m, &(&cur + &blk.adjoint()));
        }
        let aj = if delta > 0.0 && num_channels > 1 {
            let wj = propagator_from_eig(&herm_eig(&hj)?, delta);
            wj.matmul(&base_j).matmul(&wj.adjoint()).hermitian_part()
        } else {
            base_j
        };
        channels.push(aj);
    }

    let weight: Vec<Complex64> =
        pos.iter().map(|x| Complex64::new(1.0 / (1.0 + (x / w).powi(2)), 0.0)).collect();
    let xm = linalg::scale_columns(&u.adjoint(), &weight).matmul(&u).hermitian_part();
    let x = ComplexMatrix::block_diag(&vec![&xm; num_channels]);

    let mut params = BTreeMap::new();
    params.insert("m".into(), m as f64);
    params.insert("N".into(), num_channels as f64);
    params.insert("w".into(), w);
    params.insert("delta".into(), delta);
    params.insert("grid_lo".into(), grid[0]);
    params.insert("grid_hi".into(), grid[m - 1]);
    Ok(ChannelSet::new(ComplexMatrix::zeros(n, n), channels, x)?.with_provenance(Provenance {
        factory: "multiplication".into(),
        seed: Some(seed),
        params,
    }))
}

/// Unit vector on channel 1 of a multiplication model that is a Gaussian of
/// width `sigma` on the position lattice, in the energy representation.
pub fn gaussian_profile(m: usize, sigma: f64) -> Vec<Complex64> {
    let pos = positions(m);
    let v: Vec<Complex64> =
        pos.iter().map(|x| Complex64::new((-x * x / (2.0 * sigma * sigma)).exp(), 0.0)).collect();
    let v = position_transform(m).adjoint().mul_vec(&v);
    let nv = linalg::vec_norm(&v);
    v.into_iter().map(|z| z / nv).collect()
}

/// Single-channel multiplication model on `m` midpoints of (lo, hi) with the
/// rank-one perturbation A∞ = κ vv*, v a normalised Gaussian profile.
pub fn make_rank_one_model(m: usize, lo: f64, hi: f64, w: f64, sigma: f64, kappa: f64) -> Result<ChannelSet> {
    let grid = midpoint_grid(lo, hi, m);
    let mut set = make_multiplication_channels(&grid, 1, w, 0.0, 0)?;
    let v = gaussian_profile(m, sigma);
    set.a_inf = ComplexMatrix::from_fn(m, m, |a, b| v[a] * v[b].conj() * kappa);
    set.provenance.factory = "rank_one".into();
    set.provenance.seed = None;
    set.provenance.params.insert("kappa".into(), kappa);
    set.provenance.params.insert("sigma".into(), sigma);
    set.validate()?;
    Ok(set)
}

/// Appends one coordinate per value, on which every channel vanishes and A∞
/// acts as the given eigenvalue; X is extended by the identity. Each value
/// becomes an eigenvalue of A whose eigenvector is orthogonal to all
/// channels.
pub fn plant_eigenvalues(set: &ChannelSet, values: &[f64]) -> Result<ChannelSet> {
    let n = set.n;
    let p = values.len();
    let grow = |m: &ComplexMatrix| {
        let mut out = ComplexMatrix::zeros(n + p, n + p);
        out.set_submatrix(0, 0, m);
        out
    };
    let mut a_inf = grow(&set.a_inf);
    for (i, &v) in values.iter().enumerate() {
        a_inf[(n + i, n + i)] = Complex64::new(v, 0.0);
    }
    let channels = set.channels.iter().map(grow).collect();
    let mut x = grow(&set.x);
    for i in 0..p {
        x[(n + i, n + i)] = Complex64::new(1.0, 0.0);
    }
    let mut out = ChannelSet::new(a_inf, channels, x)?;
    out.provenance = set.provenance.clone();
    for (i, &v) in values.iter().enumerate() {
        out.provenance.params.insert(format!("planted_{i}"), v);
    }
    Ok(out)
}

/// Adds a Hermitian perturbation to A∞.
pub fn with_a_inf(set: &ChannelSet, a_inf: ComplexMatrix) -> Result<ChannelSet> {
    let mut out = set.clone();
    out.a_inf = a_inf;
    out.validate()?;
    Ok(out)
}

/// Random Hermitian perturbation of norm `strength`, reproducible from `seed`.
pub fn random_perturbation(n: usize, strength: f64, seed: u64) -> ComplexMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_hermitian(&mut rng, n);
    let hn = op_norm(&h);
    if hn == 0.0 {
        return h;
    }
    h.scale_real(strength / hn)
}

/// Zero matrix helper used by tests and factories.
pub fn zeros(n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| ZERO)
}
