//! The five subcommands. Each returns the files it wants written and
//! whether its checks passed; nothing here touches the file system.

use mscat::report::{fmt_f64, Cell, Csv};
use mscat::resolvent::{
    boundary_value_ctx, fredholm_identity_residual, imaginary_part_identity_ctx, route_agreement,
    sandwiched_resolvent_ctx, exceptional_scan_ctx, free_resolvent, LimitOptions, ScanOptions,
};
use mscat::scattering::{scattering_matrix_stationary, wave_op_time, ScatteringOptions, WaveParams};
use mscat::spectral::diagonalize_a0;
use mscat::faddeev::FaddeevSystem;
use mscat::{linalg, Complex64, FreeModel, MultichannelSystem, ResolventContext, Side, Target};
use serde::Serialize;
use serde_json::value::RawValue;

use crate::config::RunConfig;

/// A finished command: named outputs and the overall verdict.
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub pass: bool,
}

/// A JSON number written with the fixed 17-digit format; non-finite values
/// become strings.
fn num(x: f64) -> Box<RawValue> {
    let s = if x.is_finite() { fmt_f64(x) } else { format!("\"{}\"", fmt_f64(x)) };
    RawValue::from_string(s).expect("formatted numbers are valid JSON")
}

#[derive(Serialize)]
struct Check {
    name: String,
    z_re: Box<RawValue>,
    z_im: Box<RawValue>,
    value: Box<RawValue>,
    tolerance: Box<RawValue>,
    pass: bool,
}

#[derive(Serialize)]
struct AuditLine {
    item: String,
    quantity: String,
    value: Box<RawValue>,
    tolerance: Box<RawValue>,
    kind: String,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    command: &'static str,
    model: &'static str,
    dimension: usize,
    channels: usize,
    pass: bool,
    checks: Vec<Check>,
    audit: Vec<AuditLine>,
}

fn check(name: &str, z: Complex64, value: f64, tolerance: f64) -> Check {
    Check {
        name: name.into(),
        z_re: num(z.re),
        z_im: num(z.im),
        value: num(value),
        tolerance: num(tolerance),
        pass: value <= tolerance,
    }
}

fn sample_vector(d: usize) -> Vec<Complex64> {
    (0..d).map(|i| Complex64::new((0.37 * i as f64 + 0.2).sin(), (0.11 * i as f64).cos())).collect()
}

/// Exact identities of the triple at the configured energies, and the
/// assumption audit.
pub fn verify(cfg: &RunConfig, sys: &MultichannelSystem) -> Result<Outcome, mscat::Error> {
    let ctx = ResolventContext::new(sys)?;
    let tol = cfg.tolerances.identity;
    let mut checks = vec![check("factorisation", Complex64::new(0.0, 0.0), sys.factorisation_residual(), tol)];
    let g = sample_vector(sys.dim0());
    for z in cfg.z_values() {
        let r0 = free_resolvent(sys, z);
        let scale = linalg::op_norm(&sys.j.matmul(&r0)).max(f64::MIN_POSITIVE);
        checks.push(check("fredholm_identity", z, fredholm_identity_residual(sys, z)? / scale, tol));
        let point = sandwiched_resolvent_ctx(&ctx, z)?;
        let scale = (linalg::op_norm(&point.sandwiched) * (1.0 + linalg::op_norm(&point.g0))).max(f64::MIN_POSITIVE);
        checks.push(check("sandwiched_identity", z, point.identity_residual / scale, tol));
        checks.push(check("route_agreement", z, route_agreement(&ctx, &point)?.max_relative(), tol));
        checks.push(check("imaginary_part_identity", z, imaginary_part_identity_ctx(&ctx, &g, z)?, tol));
    }
    let audit = mscat::model::audit(sys, cfg.delta(), &Default::default())?;
    let audit_pass = audit.all_pass();
    let pass = audit_pass && checks.iter().all(|c| c.pass);
    let report = VerifyReport {
        command: "verify",
        model: cfg.model.name(),
        dimension: sys.n(),
        channels: sys.num_channels(),
        pass,
        checks,
        audit: audit
            .items
            .iter()
            .map(|i| AuditLine {
                item: i.item.clone(),
                quantity: i.quantity.clone(),
                value: num(i.value),
                tolerance: num(i.tolerance),
                kind: format!("{:?}", i.kind),
                pass: i.pass,
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serialises");
    json.push('\n');
    Ok(Outcome { files: vec![("verify.json".into(), json)], pass })
}

/// Boundary values G(λ ± i0) on the λ-grid and the exceptional-set scan.
/// A boundary value that fails at an energy the scan flags is expected and
/// only reported; anywhere else it fails the command.
pub fn limabs(cfg: &RunConfig, sys: &MultichannelSystem) -> Result<Outcome, mscat::Error> {
    let ctx = ResolventContext::new(sys)?;
    let grid = cfg.lambda_grid.points();
    let scan_opts = ScanOptions {
        eps: cfg.tolerances.scan_eps,
        sing_thresh: cfg.tolerances.sing_thresh,
        model: FreeModel::Continuum,
        ..ScanOptions::default()
    };
    let scan = exceptional_scan_ctx(&ctx, &grid, &scan_opts)?;
    let mut sc = Csv::new(&["kind", "lambda", "sigma_min"]);
    for (kind, pts) in [("profile", &scan.profile), ("minimum", &scan.minima), ("flagged", &scan.flagged)] {
        for p in pts {
            sc.push(vec![kind.into(), p.lambda.into(), p.sigma_min.into()]);
        }
    }
    let spacing = grid.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min);
    let radius = if spacing.is_finite() { 0.5 * spacing } else { 1e-9 };
    let flagged = |l: f64| scan.flagged.iter().any(|p| (p.lambda - l).abs() <= radius);

    let opts = LimitOptions { schedule: cfg.schedule(), ..LimitOptions::default() };
    let mut bv = Csv::new(&["lambda", "side", "status", "g_norm", "err_est", "hoelder_fit"]);
    let mut pass = true;
    for &l in &grid {
        for side in [Side::Plus, Side::Minus] {
            match boundary_value_ctx(&ctx, l, side, &opts) {
                Ok(b) => {
                    pass &= b.err_est.is_finite();
                    bv.push(vec![
                        l.into(),
                        side.label().into(),
                        "ok".into(),
                        b.g_bv.norm_fro().into(),
                        b.err_est.into(),
                        b.hoelder_fit.into(),
                    ]);
                }
                Err(e) => {
                    pass &= flagged(l);
                    let status = if flagged(l) { "exceptional" } else { "failed" };
                    eprintln!("mscat: lambda = {l}: {e}");
                    bv.push(vec![
                        l.into(),
                        side.label().into(),
                        status.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                        f64::NAN.into(),
                    ]);
                }
            }
        }
    }
    Ok(Outcome { files: vec![("limabs.csv".into(), bv.render()), ("scan.csv".into(), sc.render())], pass })
}

/// The configured bin width, or the mean eigenvalue spacing of the densest
/// channel in Δ, which puts one eigenvalue per channel in each bin of the
/// grid-based factories.
fn bin_width(cfg: &RunConfig, sys: &MultichannelSystem) -> f64 {
    let delta = cfg.delta();
    cfg.bin_width.unwrap_or_else(|| {
        let count = sys.eig_blocks[1..]
            .iter()
            .map(|e| e.eigenvalues.iter().filter(|&&l| delta.contains(l)).count())
            .max()
            .unwrap_or(1)
            .max(1);
        delta.len() / count as f64
    })
}

/// Stationary scattering matrix diagnostics per λ.
pub fn smatrix(cfg: &RunConfig, sys: &MultichannelSystem) -> Result<Outcome, mscat::Error> {
    let ctx = ResolventContext::new(sys)?;
    let grid = cfg.lambda_grid.points();
    let mut csv = Csv::new(&[
        "lambda",
        "fiber_dim",
        "unitarity_defect",
        "tilde_defect",
        "err_est",
        "max_offdiag",
        "eigenphases",
    ]);
    let mut pass = true;
    if !grid.is_empty() {
        let decomp = diagonalize_a0(sys, cfg.delta(), bin_width(cfg, sys))?;
        let opts = ScatteringOptions {
            limit: LimitOptions { schedule: cfg.schedule(), ..LimitOptions::default() },
            ..ScatteringOptions::default()
        };
        for &l in &grid {
            let s = scattering_matrix_stationary(&ctx, &decomp, l, &opts)?;
            pass &= s.unitarity_defect <= cfg.tolerances.unitarity;
            let phases: Vec<String> = s.eigenphases().iter().map(|&p| fmt_f64(p)).collect();
            csv.push(vec![
                l.into(),
                s.s.rows().into(),
                s.unitarity_defect.into(),
                s.tilde_defect.into(),
                s.err_est.into(),
                s.max_offdiag().into(),
                Cell::Text(phases.join(";")),
            ]);
        }
    }
    Ok(Outcome { files: vec![("smatrix.csv".into(), csv.render())], pass })
}

/// Time-dependent wave operators for J and for every channel, both signs.
pub fn waveops(cfg: &RunConfig, sys: &MultichannelSystem) -> Result<Outcome, mscat::Error> {
    let delta = cfg.delta();
    let method = cfg.wave.method;
    if method == mscat::WaveMethod::Stationary {
        return Err(mscat::ScatteringError::BadParams("waveops runs the time-dependent methods".into()).into());
    }
    let auto = WaveParams::auto(sys, delta, method);
    let params = WaveParams { start: cfg.wave.start.unwrap_or(auto.start), steps: cfg.wave.steps.unwrap_or(auto.steps) };
    let mut log = Csv::new(&["target", "sign", "step", "parameter", "increment"]);
    let mut summary =
        Csv::new(&["target", "sign", "method", "parameter", "converged", "isometry_defect", "intertwine_defect"]);
    let targets: Vec<Target> =
        std::iter::once(Target::Full).chain((1..=sys.num_channels()).map(Target::Channel)).collect();
    let mut pass = true;
    for target in targets {
        let name = match target {
            Target::Full => "full".to_string(),
            Target::Channel(j) => format!("channel_{j}"),
        };
        for sign in [Side::Plus, Side::Minus] {
            let w = wave_op_time(sys, target, delta, sign, method, params)?;
            pass &= w.converged;
            for (k, &(p, inc)) in w.convergence_log.iter().enumerate() {
                log.push(vec![name.clone().into(), sign.label().into(), (k + 1).into(), p.into(), inc.into()]);
            }
            let m = match method {
                mscat::WaveMethod::Abel => "abel",
                _ => "window",
            };
            summary.push(vec![
                name.clone().into(),
                sign.label().into(),
                m.into(),
                w.parameter.into(),
                w.converged.into(),
                w.isometry_defect.into(),
                w.intertwine_defect.into(),
            ]);
        }
    }
    Ok(Outcome {
        files: vec![("waveops.csv".into(), log.render()), ("waveops_summary.csv".into(), summary.render())],
        pass,
    })
}

/// Residual table of the Faddeev system at the configured energies.
pub fn faddeev(cfg: &RunConfig, sys: &FaddeevSystem) -> Result<Outcome, mscat::Error> {
    let zs = cfg.faddeev.as_ref().map(|f| f.z.clone()).unwrap_or_default();
    let mut csv =
        Csv::new(&["z_re", "z_im", "direct_relative", "max_residual", "block_spread", "cond", "sigma_min"]);
    let mut pass = true;
    for z in zs {
        let r = mscat::faddeev::faddeev_residuals(sys, Complex64::new(z[0], z[1]))?;
        pass &= r.max_residual() <= cfg.tolerances.faddeev;
        csv.push(vec![
            z[0].into(),
            z[1].into(),
            r.direct_relative.into(),
            r.max_residual().into(),
            r.block_spread.into(),
            r.cond.into(),
            r.sigma_min.into(),
        ]);
    }
    Ok(Outcome { files: vec![("faddeev.csv".into(), csv.render())], pass })
}
