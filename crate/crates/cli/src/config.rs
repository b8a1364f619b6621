//! Experiment configuration, read from a single JSON document.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nestattr::{
    derive_seed, make_linear_oracle, make_mil_oracle, CoeffSpec, NestedShape, OracleSpec, SolverConfig, WeightSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub oracle: OracleConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "Method::all")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub kernel: WeightSpec,
    /// Pick hyperparameters per cell on held-out validation samples.
    #[serde(default)]
    pub validate: bool,
    /// Write per-sample ADMM traces under `trace/`.
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_high: Vec<usize>,
    pub n_low: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Explained predictions per seed.
    pub samples: usize,
    /// Held-out predictions per seed used when `validate` is set.
    pub validation_samples: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_high: vec![20],
            n_low: vec![50, 100, 150, 200],
            seeds: vec![0, 1, 2],
            samples: 10,
            validation_samples: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    /// Timed solves per grid point; the median is reported.
    pub repeats: usize,
    /// Run exactly this many ADMM iterations instead of stopping on tolerance.
    pub fixed_iters: Option<usize>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            fixed_iters: None,
        }
    }
}

/// Family of synthetic models to explain. Each sample draws a fresh oracle
/// (coefficients, positive groups) from its own RNG stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    Linear {
        group_sizes: Vec<usize>,
        #[serde(default = "one")]
        positive_groups: usize,
        #[serde(default = "default_total")]
        total: f64,
        #[serde(default)]
        noise_std: f64,
    },
    Mil {
        group_sizes: Vec<usize>,
        #[serde(default = "one")]
        positive_groups: usize,
        #[serde(default = "default_bias_gap")]
        bias_gap: f64,
    },
}

fn one() -> usize {
    1
}

fn default_total() -> f64 {
    0.8
}

fn default_bias_gap() -> f64 {
    0.2
}

impl OracleConfig {
    pub fn shape(&self) -> Result<NestedShape> {
        let sizes = match self {
            Self::Linear { group_sizes, .. } | Self::Mil { group_sizes, .. } => group_sizes,
        };
        NestedShape::new(sizes.clone()).context("oracle.group_sizes")
    }

    fn positive_count(&self) -> usize {
        match self {
            Self::Linear { positive_groups, .. } | Self::Mil { positive_groups, .. } => *positive_groups,
        }
    }

    /// The oracle explained by one sample.
    pub fn instantiate(&self, seed: u64) -> Result<OracleSpec> {
        let shape = self.shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positive = sample_indices(&mut rng, shape.n_groups(), self.positive_count()).into_vec();
        positive.sort_unstable();
        let oracle_seed = derive_seed(seed, 1);
        Ok(match self {
            Self::Linear { total, noise_std, .. } => OracleSpec::Linear(make_linear_oracle(
                &shape,
                &CoeffSpec::Random {
                    positive_groups: positive,
                    total: *total,
                },
                *noise_std,
                oracle_seed,
            )?),
            Self::Mil { bias_gap, .. } => OracleSpec::Mil(make_mil_oracle(&shape, &positive, *bias_gap, oracle_seed)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    C2fa,
    Lime,
    BuLime,
    TdLime,
}

impl Method {
    pub fn all() -> Vec<Method> {
        vec![Method::C2fa, Method::Lime, Method::BuLime, Method::TdLime]
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::C2fa => "c2fa",
            Method::Lime => "lime",
            Method::BuLime => "bu_lime",
            Method::TdLime => "td_lime",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::all()
            .into_iter()
            .find(|m| m.name() == s)
            .with_context(|| format!("unknown method `{s}` (expected c2fa, lime, bu_lime or td_lime)"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config field `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.oracle.shape()?;
        match &self.oracle {
            OracleConfig::Linear { total, noise_std, .. } => {
                if !(0.0..=1.0).contains(total) {
                    bail!("config field `oracle.total`: must lie in [0, 1], got {total}");
                }
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    bail!("config field `oracle.noise_std`: must be finite and >= 0, got {noise_std}");
                }
            }
            OracleConfig::Mil { bias_gap, .. } => {
                if !(0.0..=1.0).contains(bias_gap) {
                    bail!("config field `oracle.bias_gap`: must lie in [0, 1], got {bias_gap}");
                }
            }
        }
        let k = self.oracle.positive_count();
        if k == 0 || k > shape.n_groups() {
            bail!("config field `oracle.positive_groups`: must lie in 1..={}, got {k}", shape.n_groups());
        }
        let g = &self.grid;
        for (name, list) in [("grid.n_high", &g.n_high), ("grid.n_low", &g.n_low)] {
            if list.is_empty() {
                bail!("config field `{name}`: must be nonempty");
            }
            if list.contains(&0) {
                bail!("config field `{name}`: perturbation counts must be >= 1");
            }
        }
        if g.seeds.is_empty() {
            bail!("config field `grid.seeds`: must be nonempty");
        }
        if g.samples == 0 {
            bail!("config field `grid.samples`: must be >= 1");
        }
        if self.validate && g.validation_samples == 0 {
            bail!("config field `grid.validation_samples`: must be >= 1 when `validate` is set");
        }
        if self.methods.is_empty() {
            bail!("config field `methods`: must be nonempty");
        }
        self.solver.validate().context("config field `solver`")?;
        if self.scaling.repeats == 0 {
            bail!("config field `scaling.repeats`: must be >= 1");
        }
        if self.scaling.fixed_iters == Some(0) {
            bail!("config field `scaling.fixed_iters`: must be >= 1");
        }
        Ok(())
    }
}
