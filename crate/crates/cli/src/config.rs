//! Run configuration: one JSON document per scenario.

use std::path::{Path, PathBuf};

use mscat::faddeev::{lattice_model, FaddeevSystem};
use mscat::model::{self, build_system, midpoint_grid, plant_eigenvalues, ChannelSet};
use mscat::resolvent::default_schedule;
use mscat::{Complex64, Interval, MultichannelSystem};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot build the model: {0}")]
    Model(#[from] mscat::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Δ = [lo, hi].
    pub interval: [f64; 2],
    /// Eigenvalues planted outside the channels (a coordinate each).
    #[serde(default)]
    pub planted: Vec<f64>,
    /// ε-schedule of the boundary-value extrapolation; defaults to
    /// 0.1·2^{−k}, k = 0…10.
    #[serde(default)]
    pub eps_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_grid: LambdaGrid,
    /// Complex energies (re, im) of the identity checks.
    #[serde(default)]
    pub z_points: Option<Vec<[f64; 2]>>,
    /// Bin width of the spectral decomposition; defaults to the mean
    /// eigenvalue spacing of one channel in Δ.
    #[serde(default)]
    pub bin_width: Option<f64>,
    #[serde(default)]
    pub wave: WaveConfig,
    #[serde(default)]
    pub faddeev: Option<FaddeevConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "factory", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// N multiplication channels with no coupling.
    Decoupled {
        m: usize,
        channels: usize,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    Multiplication {
        m: usize,
        channels: usize,
        #[serde(default = "default_w")]
        w: f64,
        delta: f64,
        seed: Option<u64>,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    Random {
        n: usize,
        channels: usize,
        delta: f64,
        seed: Option<u64>,
    },
    RankOne {
        m: usize,
        #[serde(default = "default_w")]
        w: f64,
        sigma: f64,
        kappa: f64,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
}

fn default_lo() -> f64 {
    1.0
}

fn default_hi() -> f64 {
    2.0
}

fn default_w() -> f64 {
    2.0
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Decoupled { .. } => "decoupled",
            ModelConfig::Multiplication { .. } => "multiplication",
            ModelConfig::Random { .. } => "random",
            ModelConfig::RankOne { .. } => "rank_one",
        }
    }
}

/// Either an explicit list or `count` equispaced points from `from` to `to`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    List(Vec<f64>),
    Uniform { from: f64, to: f64, count: usize },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::List(Vec::new())
    }
}

impl LambdaGrid {
    pub fn points(&self) -> Vec<f64> {
        match *self {
            LambdaGrid::List(ref v) => v.clone(),
            LambdaGrid::Uniform { from, to, count } => match count {
                0 => Vec::new(),
                1 => vec![from],
                _ => (0..count).map(|i| from + (to - from) * i as f64 / (count - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    #[serde(default = "default_method")]
    pub method: mscat::WaveMethod,
    /// First averaging parameter; chosen from the eigenvalue spacing if absent.
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
}

fn default_method() -> mscat::WaveMethod {
    mscat::WaveMethod::Abel
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self { method: default_method(), start: None, steps: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaddeevConfig {
    pub n: usize,
    pub centers: Vec<f64>,
    pub amplitude: f64,
    pub width: f64,
    pub z: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative residual of the exact identities.
    pub identity: f64,
    pub sing_thresh: f64,
    pub scan_eps: f64,
    pub unitarity: f64,
    pub faddeev: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { identity: 1e-10, sing_thresh: mscat::resolvent::SING_THRESH, scan_eps: 1e-8, unitarity: 1e-3, faddeev: 1e-10 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn delta(&self) -> Interval {
        Interval { lo: self.interval[0], hi: self.interval[1] }
    }

    pub fn schedule(&self) -> Vec<f64> {
        self.eps_schedule.clone().unwrap_or_else(default_schedule)
    }

    /// Twelve energies spread over Δ with |Im z| from 1e-3 to 1, both signs.
    pub fn z_values(&self) -> Vec<Complex64> {
        match &self.z_points {
            Some(v) => v.iter().map(|p| Complex64::new(p[0], p[1])).collect(),
            None => {
                let d = self.delta();
                let ims = [1e-3, -1e-3, 1e-2, -1e-2, 3e-2, -0.1, 0.1, -0.3, 0.3, -1.0, 1.0, 3e-3];
                ims.iter()
                    .enumerate()
                    .map(|(i, &im)| Complex64::new(d.lo + d.len() * (i as f64 + 0.5) / ims.len() as f64, im))
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let [lo, hi] = self.interval;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return invalid(format!("interval [{lo}, {hi}] must be bounded and nonempty"));
        }
        if lo <= 0.0 && hi >= 0.0 {
            return invalid(format!("interval [{lo}, {hi}] contains 0"));
        }
        for l in self.lambda_grid.points() {
            if !(l >= lo && l <= hi) {
                return invalid(format!("lambda {l} is outside [{lo}, {hi}]"));
            }
        }
        if let Some(s) = &self.eps_schedule {
            if s.len() < 2 || s.iter().any(|e| !(*e > 0.0 && e.is_finite())) || s.windows(2).any(|w| w[1] >= w[0]) {
                return invalid("eps_schedule must have at least two positive, strictly decreasing values");
            }
        }
        if let Some(b) = self.bin_width {
            if !(b > 0.0 && b.is_finite()) {
                return invalid(format!("bin_width = {b}"));
            }
        }
        for z in self.z_points.iter().flatten() {
            if !(z[0].is_finite() && z[1].is_finite()) || z[1] == 0.0 {
                return invalid(format!("z = {} + {}i must be finite and off the real axis", z[0], z[1]));
            }
        }
        if let Some(s) = self.wave.start {
            if !(s > 0.0 && s.is_finite()) {
                return invalid(format!("wave start = {s}"));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("identity", t.identity),
            ("sing_thresh", t.sing_thresh),
            ("scan_eps", t.scan_eps),
            ("unitarity", t.unitarity),
            ("faddeev", t.faddeev),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("tolerance {name} = {v}"));
            }
        }
        match self.model {
            ModelConfig::Multiplication { seed: None, .. } | ModelConfig::Random { seed: None, .. } => {
                return invalid(format!("factory {} needs a seed", self.model.name()));
            }
            _ => {}
        }
        if let Some(f) = &self.faddeev {
            if f.centers.is_empty() {
                return invalid("faddeev needs at least one potential centre");
            }
            for z in &f.z {
                if !(z[0].is_finite() && z[1].is_finite()) || z[1] == 0.0 {
                    return invalid(format!("faddeev z = {} + {}i must be off the real axis", z[0], z[1]));
                }
            }
        }
        Ok(())
    }

    pub fn channel_set(&self) -> Result<ChannelSet, ConfigError> {
        let set = match self.model {
            ModelConfig::Decoupled { m, channels, lo, hi } => {
                model::make_multiplication_channels(&midpoint_grid(lo, hi, m), channels, default_w(), 0.0, 0)
            }
            ModelConfig::Multiplication { m, channels, w, delta, seed, lo, hi } => {
                model::make_multiplication_channels(&midpoint_grid(lo, hi, m), channels, w, delta, seed.unwrap_or(0))
            }
            ModelConfig::Random { n, channels, delta, seed } => {
                model::make_random_channels(n, channels, delta, seed.unwrap_or(0))
            }
            ModelConfig::RankOne { m, w, sigma, kappa, lo, hi } => model::make_rank_one_model(m, lo, hi, w, sigma, kappa),
        }
        .map_err(mscat::Error::from)?;
        if self.planted.is_empty() {
            Ok(set)
        } else {
            Ok(plant_eigenvalues(&set, &self.planted).map_err(mscat::Error::from)?)
        }
    }

    pub fn system(&self) -> Result<MultichannelSystem, ConfigError> {
        Ok(build_system(self.channel_set()?).map_err(mscat::Error::from)?)
    }

    pub fn faddeev_system(&self) -> Result<FaddeevSystem, ConfigError> {
        let Some(f) = &self.faddeev else {
            return invalid("the faddeev command needs a \"faddeev\" section");
        };
        Ok(lattice_model(f.n, &f.centers, f.amplitude, f.width).map_err(mscat::Error::from)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"model": {"factory": "decoupled", "m": 8, "channels": 2}, "interval": [1.0, 2.0]}"#;

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::parse(BASE).unwrap();
        assert!(c.lambda_grid.points().is_empty());
        assert_eq!(c.z_values().len(), 12);
        assert!(c.z_values().iter().all(|z| z.im.abs() >= 1e-3 && z.im.abs() <= 1.0));
    }

    #[test]
    fn rejects_zero_in_interval() {
        let s = BASE.replace("[1.0, 2.0]", "[-1.0, 2.0]");
        assert!(matches!(RunConfig::parse(&s), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rejects_grid_outside_interval() {
        let s = BASE.replace("2.0]}", "2.0], \"lambda_grid\": [1.5, 2.5]}");
        assert!(matches!(RunConfig::parse(&s), Err(ConfigError::Invalid(_))));
        let s = BASE.replace("2.0]}", "2.0], \"lambda_grid\": [1.5, 2.0]}");
        assert!(RunConfig::parse(&s).is_ok());
    }

    #[test]
    fn randomised_factories_need_a_seed() {
        let s = r#"{"model": {"factory": "random", "n": 8, "channels": 2, "delta": 0.1}, "interval": [1.0, 2.0]}"#;
        assert!(matches!(RunConfig::parse(s), Err(ConfigError::Invalid(_))));
        let s = s.replace("0.1}", "0.1, \"seed\": 3}");
        assert!(RunConfig::parse(&s).is_ok());
    }

    #[test]
    fn uniform_grid() {
        let g = LambdaGrid::Uniform { from: 1.0, to: 2.0, count: 3 };
        assert_eq!(g.points(), vec![1.0, 1.5, 2.0]);
    }
}
