//! Fibered form of A₀ over an interval: eigenvectors grouped into energy
//! bins of constant multiplicity, the map F₀, the operator Z₀(λ), Hölder
//! estimates, the essential-spectrum histogram comparison and the
//! embedded-eigenvalue oracle.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, herm_eig, op_norm, ComplexMatrix, Interval, LinalgError, GAP_TOL};
use crate::model::MultichannelSystem;
use crate::resolvent::{least_squares_slope, ZERO_TOL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("multiplicity differs across bins {bins:?} (counts {counts:?})")]
    Multiplicity { bins: Vec<usize>, counts: Vec<usize> },
    #[error("eigenvalue {eigenvalue} lies within {gap:.3e} of the endpoint {endpoint}")]
    BoundaryEigenvalue { eigenvalue: f64, endpoint: f64, gap: f64 },
    #[error("lambda = {lambda} lies outside ({lo}, {hi})")]
    OutsideInterval { lambda: f64, lo: f64, hi: f64 },
    #[error("{bins} bins are too few, need at least {need}")]
    TooFewBins { bins: usize, need: usize },
    #[error("interval ({lo}, {hi}) contains zero")]
    IntervalContainsZero { lo: f64, hi: f64 },
    #[error("bad bin width {0}")]
    BadBinWidth(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// One energy bin of the fibered decomposition.
#[derive(Debug, Clone)]
pub struct Bin {
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    /// Eigenvalues of the fiber columns, in column order.
    pub eigenvalues: Vec<f64>,
    /// Channel (block index 1…N of ℋ₀) of each column.
    pub channels: Vec<usize>,
    /// Orthonormal eigenvectors of A₀ on ℋ₀, one per column.
    pub basis: ComplexMatrix,
    /// Q₀ · basis.
    pub image: ComplexMatrix,
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub delta: Interval,
    pub bin_width: f64,
    pub fiber_dim: usize,
    /// Columns per channel in every fiber; entry j−1 belongs to channel j.
    pub channel_dims: Vec<usize>,
    pub bins: Vec<Bin>,
}

/// A fiber-valued operator at one energy.
#[derive(Debug, Clone)]
pub struct FiberOperator {
    pub lambda: f64,
    pub matrix: ComplexMatrix,
}

impl SpectralDecomposition {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.center).collect()
    }

    /// All fiber columns side by side, bin after bin.
    pub fn stacked_basis(&self) -> ComplexMatrix {
        let cols: Vec<&ComplexMatrix> = self.bins.iter().map(|b| &b.basis).collect();
        ComplexMatrix::hstack(&cols)
    }

    /// (F₀f) on the bins: bin_width^{−1/2} · basis* f.
    pub fn f0(&self, f: &[Complex64]) -> Vec<Vec<Complex64>> {
        let s = self.bin_width.powf(-0.5);
        self.bins
            .iter()
            .map(|b| b.basis.adjoint().mul_vec(f).into_iter().map(|x| x * s).collect())
            .collect()
    }

    /// Discrete L² norm squared of F₀f.
    pub fn f0_norm_sq(&self, f: &[Complex64]) -> f64 {
        self.f0(f).iter().map(|v| v.iter().map(|x| x.norm_sqr()).sum::<f64>()).sum::<f64>() * self.bin_width
    }

    /// Z₀ at the centre of bin i.
    pub fn z0_bin(&self, i: usize) -> ComplexMatrix {
        self.bins[i].image.adjoint().scale_real(self.bin_width.powf(-0.5))
    }

    /// Z₀(λ) g = (F₀Q₀*g)(λ), linearly interpolated between bin centres.
    pub fn z0_of_lambda(&self, lambda: f64) -> Result<FiberOperator> {
        if !self.delta.contains(lambda) {
            return Err(SpectralError::OutsideInterval { lambda, lo: self.delta.lo, hi: self.delta.hi });
        }
        let nb = self.bins.len();
        let c0 = self.bins[0].center;
        let matrix = if nb == 1 || lambda <= c0 {
            self.z0_bin(0)
        } else if lambda >= self.bins[nb - 1].center {
            self.z0_bin(nb - 1)
        } else {
            let x = (lambda - c0) / self.bin_width;
            let i = (x.floor() as usize).min(nb - 2);
            let t = x - i as f64;
            let mut z = self.z0_bin(i).scale_real(1.0 - t);
            if t > 0.0 {
                z.axpy(Complex64::new(t, 0.0), &self.z0_bin(i + 1));
            }
            z
        };
        Ok(FiberOperator { lambda, matrix })
    }

    /// Index of the bin whose centre is nearest to λ.
    pub fn nearest_bin(&self, lambda: f64) -> usize {
        let x = ((lambda - self.bins[0].center) / self.bin_width).round();
        (x.max(0.0) as usize).min(self.bins.len() - 1)
    }

    /// Row ranges of each channel inside a fiber.
    pub fn channel_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.channel_dims
            .iter()
            .map(|&d| {
                let r = start..start + d;
                start += d;
                r
            })
            .collect()
    }

    /// ‖V*V − I‖_op for the stacked fiber basis.
    pub fn orthonormality_defect(&self) -> f64 {
        let v = self.stacked_basis();
        op_norm(&(&v.adjoint().matmul(&v) - &ComplexMatrix::identity(v.cols())))
    }
}

/// Bins Δ into pieces of the given width and groups the channel eigenvectors
/// of A₀ in Δ into fibers of constant dimension. Phases and in-channel
/// bases of neighbouring fibers are aligned so that Z₀ varies smoothly.
pub fn diagonalize_a0(sys: &MultichannelSystem, delta: Interval, bin_width: f64) -> Result<SpectralDecomposition> {
    if delta.closure_contains(0.0) {
        return Err(SpectralError::IntervalContainsZero { lo: delta.lo, hi: delta.hi });
    }
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(SpectralError::BadBinWidth(bin_width));
    }
    let nb = ((delta.len() / bin_width).round() as usize).max(1);
    let bw = delta.len() / nb as f64;
    let gap = GAP_TOL * sys.scale().max(1.0);
    let n = sys.n();
    let nch = sys.num_channels();

    // (bin, channel, eigenvalue, lifted eigenvector)
    let mut members: Vec<Vec<(usize, f64, Vec<Complex64>)>> = vec![Vec::new(); nb];
    for b in 1..=nch {
        let e = &sys.eig_blocks[b];
        for (k, &mu) in e.eigenvalues.iter().enumerate() {
            for endpoint in [delta.lo, delta.hi] {
                if (mu - endpoint).abs() <= gap {
                    return Err(SpectralError::BoundaryEigenvalue { eigenvalue: mu, endpoint, gap });
                }
            }
            if !delta.contains(mu) {
                continue;
            }
            let i = (((mu - delta.lo) / bw).floor() as usize).min(nb - 1);
            let mut v = vec![Complex64::new(0.0, 0.0); sys.dim0()];
            for r in 0..n {
                v[b * n + r] = e.eigenvectors[(r, k)];
            }
            members[i].push((b, mu, v));
        }
    }
    let per_channel: Vec<Vec<usize>> = members
        .iter()
        .map(|m| (1..=nch).map(|b| m.iter().filter(|x| x.0 == b).count()).collect())
        .collect();
    let reference = mode(&per_channel);
    let offending: Vec<usize> = (0..nb).filter(|&i| per_channel[i] != reference).collect();
    if !offending.is_empty() {
        return Err(SpectralError::Multiplicity {
            counts: offending.iter().map(|&i| per_channel[i].iter().sum()).collect(),
            bins: offending,
        });
    }
    let fiber_dim: usize = reference.iter().sum();
    let mut bins: Vec<Bin> = members
        .into_iter()
        .enumerate()
        .map(|(i, mut m)| {
            m.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let cols: Vec<ComplexMatrix> = m.iter().map(|x| ComplexMatrix::column_vector(&x.2)).collect();
            let basis = if cols.is_empty() {
                ComplexMatrix::zeros(sys.dim0(), 0)
            } else {
                ComplexMatrix::hstack(&cols.iter().collect::<Vec<_>>())
            };
            let image = sys.q0.matmul(&basis);
            Bin {
                center: delta.lo + (i as f64 + 0.5) * bw,
                lo: delta.lo + i as f64 * bw,
                hi: delta.lo + (i as f64 + 1.0) * bw,
                eigenvalues: m.iter().map(|x| x.1).collect(),
                channels: m.iter().map(|x| x.0).collect(),
                basis,
                image,
            }
        })
        .collect();
    let mut ranges = Vec::new();
    let mut start = 0;
    for &d in &reference {
        ranges.push(start..start + d);
        start += d;
    }
    for i in 1..bins.len() {
        let (prev, cur) = bins.split_at_mut(i);
        align_fiber(&prev[i - 1], &mut cur[0], &ranges, &sys.q0)?;
    }
    Ok(SpectralDecomposition { delta, bin_width: bw, fiber_dim, channel_dims: reference, bins })
}

fn mode(v: &[Vec<usize>]) -> Vec<usize> {
    let mut best = (0, v.first().cloned().unwrap_or_default());
    for cand in v {
        let c = v.iter().filter(|x| *x == cand).count();
        if c > best.0 {
            best = (c, cand.clone());
        }
    }
    best.1
}

/// Rotates the columns of `cur` within each channel by the unitary polar
/// factor of the overlap of Q₀-images with `prev`.
fn align_fiber(
    prev: &Bin,
    cur: &mut Bin,
    ranges: &[std::ops::Range<usize>],
    q0: &ComplexMatrix,
) -> std::result::Result<(), LinalgError> {
    let k = cur.basis.cols();
    if k == 0 {
        return Ok(());
    }
    let mut u = ComplexMatrix::identity(k);
    for r in ranges {
        if r.is_empty() {
            continue;
        }
        let pi = prev.image.columns(r.start, r.len());
        let ci = cur.image.columns(r.start, r.len());
        let c = pi.adjoint().matmul(&ci);
        if let Some(polar) = unitary_polar(&c)? {
            u.set_submatrix(r.start, r.start, &polar.adjoint());
        }
    }
    cur.basis = cur.basis.matmul(&u);
    cur.image = q0.matmul(&cur.basis);
    Ok(())
}

/// U with C = U P, P ≥ 0, when C is well conditioned.
fn unitary_polar(c: &ComplexMatrix) -> std::result::Result<Option<ComplexMatrix>, LinalgError> {
    if c.rows() == 1 {
        let x = c[(0, 0)];
        return Ok((x.norm() > 1e-12).then(|| ComplexMatrix::from_diag(&[x / x.norm()])));
    }
    let e = herm_eig(&c.adjoint().matmul(c))?;
    let max = e.eigenvalues.last().copied().unwrap_or(0.0);
    if e.eigenvalues[0] <= 1e-12 * max.max(1e-300) {
        return Ok(None);
    }
    let inv_sqrt = e.apply_fn(|l| Complex64::new(l.powf(-0.5), 0.0));
    Ok(Some(c.matmul(&inv_sqrt)))
}

/// Bin-centre Z₀ rows of a decomposition (one FiberOperator per bin).
pub fn z0_at_centers(decomp: &SpectralDecomposition) -> Vec<FiberOperator> {
    (0..decomp.num_bins()).map(|i| FiberOperator { lambda: decomp.bins[i].center, matrix: decomp.z0_bin(i) }).collect()
}

/// Regression points and exponent of a Hölder estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    pub gamma: f64,
    /// (log|λ − μ|, log‖Z₀(λ) − Z₀(μ)‖).
    pub points: Vec<(f64, f64)>,
}

/// Least-squares Hölder exponent of λ ↦ Z₀(λ) over bin-centre pairs at
/// separations 1, 2, 4, … bins up to a quarter of the interval, clipped to
/// (0, 1].
pub fn smoothness_estimate(decomp: &SpectralDecomposition) -> Result<SmoothnessEstimate> {
    let nb = decomp.num_bins();
    if nb < 8 {
        return Err(SpectralError::TooFewBins { bins: nb, need: 8 });
    }
    let z: Vec<ComplexMatrix> = (0..nb).map(|i| decomp.z0_bin(i)).collect();
    let mut pairs = Vec::new();
    let mut s = 1;
    while s <= (nb / 4).max(1) {
        for i in 0..nb - s {
            pairs.push((i, i + s));
        }
        s *= 2;
    }
    let raw: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = op_norm(&(&z[i] - &z[j]));
            ((decomp.bins[j].center - decomp.bins[i].center).ln(), d)
        })
        .collect();
    let scale = z.iter().map(op_norm).fold(0.0, f64::max);
    if raw.iter().all(|p| p.1 <= 1e-12 * scale.max(1e-300)) {
        return Ok(SmoothnessEstimate { gamma: 1.0, points: Vec::new() });
    }
    // Average over pairs with the same separation before fitting.
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut s = 1;
    let mut start = 0;
    while s <= (nb / 4).max(1) {
        let cnt = nb - s;
        let chunk = &raw[start..start + cnt];
        let mean = chunk.iter().map(|p| p.1).sum::<f64>() / cnt as f64;
        if mean > 0.0 {
            points.push((chunk[0].0, mean.ln()));
        }
        start += cnt;
        s *= 2;
    }
    let slope = least_squares_slope(&points);
    let gamma = if slope.is_finite() { slope.clamp(1e-6, 1.0) } else { 1e-6 };
    Ok(SmoothnessEstimate { gamma, points })
}

/// max over bins of |#spec(A) − #spec(A₀)| / total, ignoring bins that touch
/// a neighbourhood of zero. `edges` are increasing bin edges.
pub fn weyl_compare(sys: &MultichannelSystem, edges: &[f64]) -> f64 {
    let spec_a = &sys.eig_a.eigenvalues;
    let spec_a0: Vec<f64> = sys.eig_blocks.iter().flat_map(|e| e.eigenvalues.iter().copied()).collect();
    let zero_tol = ZERO_TOL * sys.scale().max(1.0);
    let count = |s: &[f64], lo: f64, hi: f64| s.iter().filter(|&&x| x >= lo && x < hi).count() as f64;
    let mut worst = 0.0_f64;
    let mut total = 0.0;
    let mut diffs = Vec::new();
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo - zero_tol <= 0.0 && hi + zero_tol >= 0.0 {
            continue;
        }
        let (ca, c0) = (count(spec_a, lo, hi), count(&spec_a0, lo, hi));
        total += c0;
        diffs.push((ca - c0).abs());
    }
    for d in diffs {
        worst = worst.max(d);
    }
    if total > 0.0 {
        worst / total
    } else {
        worst
    }
}

/// An eigenpair of A whose eigenvector is almost orthogonal to every channel
/// continuum.
#[derive(Debug, Clone)]
pub struct EmbeddedEigenpair {
    pub eigenvalue: f64,
    pub vector: Vec<Complex64>,
    /// Σ_j ‖E_j ψ‖² over the non-kernel spectral subspaces of the channels.
    pub channel_weight: f64,
}

/// Eigenpairs of A in Δ with channel weight below `threshold` (default 1/2):
/// the finite-dimensional surrogate of σ_p(A) ∩ Δ.
pub fn embedded_eigenpairs(sys: &MultichannelSystem, delta: Interval, threshold: f64) -> Vec<EmbeddedEigenpair> {
    let zero_tol = ZERO_TOL * sys.scale().max(1.0);
    // Non-kernel eigenvectors of every channel, side by side.
    let mut cols = Vec::new();
    for b in 1..=sys.num_channels() {
        let e = &sys.eig_blocks[b];
        let idx: Vec<usize> = (0..e.eigenvalues.len()).filter(|&k| e.eigenvalues[k].abs() > zero_tol).collect();
        cols.push(e.eigenvectors.select_columns(&idx));
    }
    let ea = &sys.eig_a;
    (0..ea.eigenvalues.len())
        .filter(|&m| delta.contains(ea.eigenvalues[m]))
        .filter_map(|m| {
            let psi = ea.eigenvectors.column(m);
            let w: f64 = cols.iter().map(|v| linalg::vec_norm(&v.adjoint().mul_vec(&psi)).powi(2)).sum();
            (w < threshold).then(|| EmbeddedEigenpair { eigenvalue: ea.eigenvalues[m], vector: psi, channel_weight: w })
        })
        .collect()
}

/// Projection onto the span of the given eigenpairs.
pub fn eigenprojection(pairs: &[EmbeddedEigenpair], n: usize) -> ComplexMatrix {
    let mut p = ComplexMatrix::zeros(n, n);
    for e in pairs {
        let v = ComplexMatrix::column_vector(&e.vector);
        p = &p + &v.matmul(&v.adjoint());
    }
    p
}
