//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gmtaylor_core::measure::VarianceCalibration;
use gmtaylor_core::model::{Qoi, Source};
use gmtaylor_core::risk::RiskKind;
use gmtaylor_core::taylor::Order;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub measure: MeasureConfig,
    pub direction: DirectionConfig,
    pub split: SplitConfig,
    pub surrogate: SurrogateConfig,
    pub risk: RiskConfig,
    pub mc: McConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            measure: MeasureConfig::default(),
            direction: DirectionConfig::default(),
            split: SplitConfig::default(),
            surrogate: SurrogateConfig::default(),
            risk: RiskConfig::default(),
            mc: McConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Adr(AdrParams),
    /// `exp(a^T m) + 1/2 sum beta_j (b_j^T m)^2` with `a_i = a_scale` and
    /// `b_j` drawn from `N(0, I / n)` with the term's seed.
    Analytic {
        #[serde(default)]
        a_scale: f64,
        #[serde(default)]
        terms: Vec<TermConfig>,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Adr(AdrParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdrParams {
    pub velocity: [f64; 2],
    pub reaction: f64,
    pub source: Source,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub qoi: Qoi,
}

impl Default for AdrParams {
    fn default() -> Self {
        let d = gmtaylor_core::model::AdrConfig::default();
        Self {
            velocity: d.velocity,
            reaction: d.reaction,
            source: d.source,
            newton_tol: d.newton_tol,
            max_newton: d.max_newton,
            qoi: d.qoi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub dim: usize,
    pub points: usize,
    /// Correlation length and pointwise variance; ignored when `gamma` and
    /// `delta` are both given.
    pub corr_len: f64,
    pub variance: f64,
    pub calibration: VarianceCalibration,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub noise_variance: Option<f64>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            points: 32,
            corr_len: 1.0,
            variance: 1.0,
            calibration: VarianceCalibration::MeanPointwise,
            gamma: None,
            delta: None,
            noise_variance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionSource {
    /// Dominant covariance eigenvector.
    Kle,
    /// Dominant eigenvector of the covariance-preconditioned Hessian at the mean.
    Hep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionConfig {
    pub source: DirectionSource,
    pub oversampling: usize,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self {
            source: DirectionSource::Hep,
            oversampling: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n: usize,
    pub p: f64,
    /// Split library written by `gmtaylor split`; splits are optimized on
    /// the fly when absent.
    pub library: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n: 39,
            p: 0.5,
            library: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub orders: Vec<Order>,
    pub rank: usize,
    pub oversampling: usize,
    /// Also report single Taylor expansions at the mean.
    pub single: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            orders: vec![Order::Linear, Order::Quadratic],
            rank: 50,
            oversampling: 20,
            single: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub kinds: Vec<RiskKind>,
    pub alphas: Vec<f64>,
    pub samples_per_component: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            kinds: vec![RiskKind::Mean, RiskKind::Sd, RiskKind::Cvar],
            alphas: vec![0.95],
            samples_per_component: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub samples: usize,
    /// Compare estimates against a Monte Carlo reference.
    pub reference: bool,
    pub cache_dir: Option<PathBuf>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            reference: true,
            cache_dir: Some(PathBuf::from("mc-cache")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Nmix,
    Alpha,
    Corrlen,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    /// Parse a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.split.library.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.mc.cache_dir.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output.dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        for &a in &self.risk.alphas {
            if !(a > 0.0 && a < 1.0) {
                bail!("risk.alphas: {a} is not strictly between 0 and 1");
            }
        }
        if self.risk.samples_per_component == 0 {
            bail!("risk.samples_per_component must be at least 1");
        }
        if self.split.n == 0 {
            bail!("split.n must be at least 1");
        }
        if !(self.split.p > 0.0 && self.split.p < 1.0) {
            bail!("split.p must lie strictly between 0 and 1");
        }
        if let Some(lib) = &self.split.library {
            if !lib.exists() {
                bail!("split.library {} does not exist", lib.display());
            }
        }
        if self.surrogate.orders.is_empty() {
            bail!("surrogate.orders is empty");
        }
        if self.surrogate.orders.contains(&Order::Quadratic) && self.surrogate.rank == 0 {
            bail!("surrogate.rank must be positive for quadratic surrogates");
        }
        if self.mc.samples < 2 && self.mc.reference {
            bail!("mc.samples must be at least 2");
        }
        if self.measure.gamma.is_some() != self.measure.delta.is_some() {
            bail!("measure.gamma and measure.delta must be given together");
        }
        if let ModelConfig::Adr(_) = self.model {
            if self.measure.dim != 2 {
                bail!("the ADR model needs a 2D measure");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, leaving out where results and
    /// caches are written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        c.mc.cache_dir = None;
        hash_json(&c)
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    format!("{:x}", Sha256::digest(&bytes))
}
