use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost_model::{
    megaportraits_fixture, oasis_fixture, ArchFixture, CostReport, ScaleFactor, ScalePolicy,
};
use crate::error::{Error, Result};
use crate::predictor::{LossMode, DEFAULT_LEAKY_SLOPE};
use crate::router::{parse_thresholds, ExitCosts};
use crate::sim::{derive_seed, OracleConfig};

/// Either a `start:stop:step` range or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    Range(String),
    List(Vec<f64>),
}

impl ThresholdSpec {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        let list = match self {
            ThresholdSpec::Range(s) => parse_thresholds(s)?,
            ThresholdSpec::List(v) => v.clone(),
        };
        if list.is_empty() {
            return Err(Error::Config("thresholds must not be empty".into()));
        }
        if list.iter().any(|t| !t.is_finite()) || list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "thresholds must be finite and strictly increasing".into(),
            ));
        }
        Ok(list)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureSection {
    /// `builtin:oasis`, `builtin:megaportraits`, or a fixture path relative
    /// to the config file.
    pub fixture: String,
    /// Branch width used for routing experiments.
    pub scale_factor: ScaleFactor,
    /// Scale factors listed in the cost table.
    pub scale_factors: Vec<ScaleFactor>,
    pub min_channels: u32,
    pub width_quantum: Option<u32>,
    /// FLOPs per reported cost unit.
    pub cost_unit: f64,
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        let sf = |d| ScaleFactor::new(1, d).expect("valid");
        Self {
            fixture: "builtin:oasis".into(),
            scale_factor: sf(4),
            scale_factors: vec![sf(2), sf(3), sf(4)],
            min_channels: 64,
            width_quantum: None,
            cost_unit: 1e9,
        }
    }
}

impl ArchitectureSection {
    pub fn policy(&self, scale_factor: ScaleFactor) -> Result<ScalePolicy> {
        let p = ScalePolicy::new(scale_factor, self.min_channels)?;
        match self.width_quantum {
            Some(q) => p.with_width_quantum(q),
            None => Ok(p),
        }
    }

    pub fn load_fixture(&self) -> Result<ArchFixture> {
        match self.fixture.as_str() {
            "builtin:oasis" => Ok(oasis_fixture()),
            "builtin:megaportraits" => Ok(megaportraits_fixture()),
            path => ArchFixture::load(path),
        }
    }
}

/// Explicit route costs, bypassing the fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOverride {
    pub branch: Vec<f64>,
    pub backbone: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub input_dim: usize,
    pub noise_dim: usize,
    pub exit_capacities: Vec<f64>,
    /// Defaults to the built-in pattern driven by the attribute coordinate.
    pub difficulty_weights: Option<Vec<f64>>,
    pub noise_sd: f64,
    pub link_scale: f64,
    pub attribute_index: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        let d = OracleConfig::default();
        Self {
            input_dim: d.input_dim,
            noise_dim: d.noise_dim,
            exit_capacities: d.exit_capacities,
            difficulty_weights: None,
            noise_sd: d.noise_sd,
            link_scale: d.link_scale,
            attribute_index: d.attribute_index,
        }
    }
}

/// Weights of the default oracle, generalised to any input size: the
/// attribute coordinate dominates, the rest alternate +-0.2.
pub fn default_weights(input_dim: usize, attribute_index: usize) -> Vec<f64> {
    (0..input_dim)
        .map(|i| match i {
            _ if i == attribute_index => 1.5,
            _ if i % 2 == 0 => 0.2,
            _ => -0.2,
        })
        .collect()
}

impl OracleSection {
    pub fn to_config(&self, seed: u64) -> OracleConfig {
        OracleConfig {
            input_dim: self.input_dim,
            noise_dim: self.noise_dim,
            exit_capacities: self.exit_capacities.clone(),
            difficulty_weights: self
                .difficulty_weights
                .clone()
                .unwrap_or_else(|| default_weights(self.input_dim, self.attribute_index)),
            noise_sd: self.noise_sd,
            link_scale: self.link_scale,
            attribute_index: self.attribute_index,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_conditions: usize,
    pub n_noise: usize,
    pub val_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_conditions: 50,
            n_noise: 20,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub loss: LossMode,
    pub learning_rate: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            loss: LossMode::Mse,
            learning_rate: 0.01,
            min_lr: 0.0,
            epochs: 100,
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Fresh inputs routed by the sweep, ablation and correlation stages.
    pub eval_inputs: usize,
    pub ablation_exit: u32,
    /// Defaults to the median sweep threshold.
    pub correlation_threshold: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            eval_inputs: 500,
            ablation_exit: 1,
            correlation_threshold: None,
        }
    }
}

/// One flat file drives a whole run. Every random stream is derived from
/// `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub thresholds: ThresholdSpec,
    #[serde(default)]
    pub architecture: ArchitectureSection,
    #[serde(default)]
    pub costs: Option<CostOverride>,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse, resolve relative paths against the file's directory, and
    /// validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if !cfg.architecture.fixture.starts_with("builtin:") {
            cfg.architecture.fixture = base.join(&cfg.architecture.fixture).display().to_string();
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn thresholds(&self) -> Result<Vec<f64>> {
        self.thresholds.resolve()
    }

    pub fn oracle_config(&self) -> OracleConfig {
        self.oracle.to_config(derive_seed(self.seed, "oracle"))
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds()?;
        let arch = &self.architecture;
        if !arch.fixture.starts_with("builtin:") && !Path::new(&arch.fixture).is_file() {
            return Err(Error::Config(format!(
                "fixture `{}` does not exist",
                arch.fixture
            )));
        }
        if !(arch.cost_unit > 0.0 && arch.cost_unit.is_finite()) {
            return Err(Error::Config("cost_unit must be positive".into()));
        }
        self.oracle_config().validate()?;
        let costs = self.exit_costs()?;
        if costs.branch_count() != self.oracle.exit_capacities.len() {
            return Err(Error::Config(format!(
                "{} routes but {} oracle exit capacities",
                costs.branch_count(),
                self.oracle.exit_capacities.len()
            )));
        }
        if self.dataset.n_conditions == 0 || self.dataset.n_noise == 0 {
            return Err(Error::Config("dataset counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dataset.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.analysis.eval_inputs == 0 {
            return Err(Error::Config("eval_inputs must be positive".into()));
        }
        if self.analysis.ablation_exit == 0
            || self.analysis.ablation_exit as usize > costs.branch_count()
        {
            return Err(Error::Config("ablation_exit is not a branch".into()));
        }
        if self.predictor.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> crate::predictor::TrainConfig {
        crate::predictor::TrainConfig {
            loss: self.train.loss,
            learning_rate: self.train.learning_rate,
            min_lr: self.train.min_lr,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: derive_seed(self.seed, "train"),
        }
    }

    /// Route costs in `cost_unit`s, from the override or the fixture at the
    /// routing scale factor.
    pub fn exit_costs(&self) -> Result<ExitCosts> {
        if let Some(c) = &self.costs {
            return ExitCosts::new(c.branch.clone(), c.backbone);
        }
        let arch = &self.architecture;
        let graph = arch
            .load_fixture()?
            .to_graph(&arch.policy(arch.scale_factor)?)?;
        ExitCosts::from_report(&CostReport::for_graph(&graph), arch.cost_unit)
    }
}
