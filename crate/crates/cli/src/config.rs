//! Run configuration, read from TOML. Every table rejects unknown keys and
//! every key has a default, so an empty file is a valid configuration.

use std::path::PathBuf;

use clap::ValueEnum;
use metagrad::autodiff::Precision;
use metagrad::data::SyntheticKind;
use metagrad::snapshot::sha256_hex;
use metagrad::training::{Activation, MlpSpec, NormPlacement, Optimizer, Pooling, UpdateRule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionName {
    F64,
    F32,
}

impl From<PrecisionName> for Precision {
    fn from(p: PrecisionName) -> Self {
        match p {
            PrecisionName::F64 => Precision::F64,
            PrecisionName::F32 => Precision::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Checkpoint tree arity.
    pub k: usize,
    pub precision: PrecisionName,
    pub out_dir: PathBuf,
    pub budget: Budget,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metagrad_check: CheckConfig,
    pub smoothness_scan: ScanConfig,
    pub select_data: SelectConfig,
    pub poison: PoisonConfig,
    pub lr_opt: LrConfig,
    pub bench_replay: BenchConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            k: 4,
            precision: PrecisionName::F64,
            out_dir: PathBuf::from("runs"),
            budget: Budget::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metagrad_check: CheckConfig::default(),
            smoothness_scan: ScanConfig::default(),
            select_data: SelectConfig::default(),
            poison: PoisonConfig::default(),
            lr_opt: LrConfig::default(),
            bench_replay: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    /// States kept in memory before the checkpoint store spills to the
    /// scratch directory. Unset keeps everything in memory.
    pub max_states_in_memory: Option<usize>,
    /// Upper limit on optimizer steps per training run.
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    TwoGaussians,
    Ring,
    LinearRegression,
    /// IDX image file or headered CSV at `path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n: usize,
    pub dim: usize,
    pub noise: f64,
    pub path: Option<PathBuf>,
    /// Fractions of the partition. Subcommands use the parts in order as
    /// (train, validation, test) or (pool, target, validation).
    pub split: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::TwoGaussians,
            n: 400,
            dim: 2,
            noise: 0.15,
            path: None,
            split: vec![0.5, 0.25, 0.25],
        }
    }
}

impl DataConfig {
    pub fn synthetic_kind(&self) -> Option<SyntheticKind> {
        match self.kind {
            DataKind::TwoGaussians => Some(SyntheticKind::TwoGaussians { dim: self.dim }),
            DataKind::Ring => Some(SyntheticKind::Ring),
            DataKind::LinearRegression => Some(SyntheticKind::LinearRegression { dim: self.dim }),
            DataKind::File => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Smooth,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub preset: Preset,
    pub hidden: Vec<usize>,
    pub activation: Option<Activation>,
    pub norm: Option<NormPlacement>,
    pub pooling: Option<Pooling>,
    pub final_scale: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: Preset::Smooth,
            hidden: vec![8],
            activation: None,
            norm: None,
            pooling: None,
            final_scale: None,
        }
    }
}

impl ModelConfig {
    pub fn mlp(&self, preset: Preset, input_dim: usize, output_dim: usize) -> MlpSpec {
        let base = match preset {
            Preset::Smooth => MlpSpec::smooth(input_dim, self.hidden.clone(), output_dim),
            Preset::Standard => MlpSpec::standard(input_dim, self.hidden.clone(), output_dim),
        };
        MlpSpec {
            activation: self.activation.unwrap_or(base.activation),
            norm: self.norm.unwrap_or(base.norm),
            pooling: self.pooling.unwrap_or(base.pooling),
            final_scale: self.final_scale.unwrap_or(base.final_scale),
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    #[default]
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eps_root: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerName::Sgd,
            lr: 1.0,
            momentum: 0.9,
            nesterov: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eps_root: 1e-12,
            weight_decay: 0.0,
            batch_size: 16,
            steps: 40,
        }
    }
}

impl OptimizerName {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerName::Sgd => "sgd",
            OptimizerName::Momentum => "momentum",
            OptimizerName::Adam => "adam",
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self, name: OptimizerName) -> Optimizer {
        match name {
            OptimizerName::Sgd => Optimizer::Sgd,
            OptimizerName::Momentum => Optimizer::Momentum { beta: self.momentum, nesterov: self.nesterov },
            OptimizerName::Adam => {
                Optimizer::Adam { beta1: self.beta1, beta2: self.beta2, eps: self.eps, eps_root: self.eps_root }
            }
        }
    }

    pub fn rule_with(&self, name: OptimizerName, lr: f64) -> UpdateRule {
        UpdateRule { weight_decay: self.weight_decay, ..UpdateRule::new(self.optimizer(name), lr) }
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule_with(self.optimizer, self.lr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub optimizer: OptimizerName,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DataWeights,
    SamplePerturbation,
    LrKeypoints,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::DataWeights => "data-weights",
            Variant::SamplePerturbation => "sample-perturbation",
            Variant::LrKeypoints => "lr-keypoints",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub rules: Vec<RuleSpec>,
    pub variants: Vec<Variant>,
    pub steps: Vec<usize>,
    pub ks: Vec<usize>,
    /// Random directions for the finite-difference check; 0 skips it.
    pub directions: usize,
    pub h: f64,
    pub tolerance: f64,
    pub n_perturbed: usize,
    pub keypoints: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            rules: vec![
                RuleSpec { optimizer: OptimizerName::Sgd, lr: 0.1 },
                RuleSpec { optimizer: OptimizerName::Momentum, lr: 0.05 },
                RuleSpec { optimizer: OptimizerName::Adam, lr: 0.01 },
            ],
            variants: vec![Variant::DataWeights, Variant::SamplePerturbation, Variant::LrKeypoints],
            steps: vec![16],
            ks: vec![2, 4, 8],
            directions: 10,
            h: 1e-4,
            tolerance: 1e-4,
            n_perturbed: 4,
            keypoints: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub widths: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub norms: Vec<NormPlacement>,
    pub final_scales: Vec<f64>,
    pub activations: Vec<Activation>,
    pub poolings: Vec<Pooling>,
    pub depth: usize,
    /// Seeds `seed, seed + 1, ...`.
    pub seeds: usize,
    pub probes: usize,
    pub h: Option<f64>,
    pub n_perturbed: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            widths: vec![16],
            batch_sizes: vec![16],
            norms: vec![NormPlacement::BeforeActivation, NormPlacement::AfterActivation],
            final_scales: vec![0.125, 1.0],
            activations: vec![Activation::Gelu, Activation::Relu],
            poolings: vec![Pooling::Average, Pooling::Max],
            depth: 1,
            seeds: 3,
            probes: 3,
            h: None,
            n_perturbed: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub rounds: usize,
    pub p: f64,
    pub surrogate_step: Option<usize>,
    pub surrogate_scale: f64,
    pub eval_fraction: Option<f64>,
    pub fixed_size: bool,
    /// Fraction of pool labels flipped before selection.
    pub flip_rate: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            rounds: 10,
            p: 0.25,
            surrogate_step: None,
            surrogate_scale: 1.0,
            eval_fraction: None,
            fixed_size: false,
            flip_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoisonConfig {
    pub epsilon: f64,
    pub eta: f64,
    pub rounds: usize,
    pub val_fraction: Option<f64>,
    pub fresh_seed_per_round: bool,
    /// Seeds for retraining the standard model with and without poisons.
    pub transfer_seeds: usize,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        PoisonConfig {
            epsilon: 0.025,
            eta: 0.1,
            rounds: 50,
            val_fraction: None,
            fresh_seed_per_round: true,
            transfer_seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    pub keypoints: usize,
    /// Flat initial schedule; defaults to `train.lr`.
    pub init_lr: Option<f64>,
    pub alpha: f64,
    pub rounds: usize,
    pub floor: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { keypoints: 3, init_lr: None, alpha: 0.05, rounds: 20, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { ns: vec![8, 27, 81, 256, 1024], ks: vec![2, 3, 4, 8] }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// sha256 of the resolved configuration's TOML form, leaving out where
    /// outputs go so that relocated reruns produce the same files.
    pub fn hash(&self) -> String {
        sha256_hex(self.keyed().to_toml().as_bytes())
    }

    /// The configuration with `out_dir` cleared, as hashed and archived.
    pub fn keyed(&self) -> Config {
        Config { out_dir: PathBuf::new(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k < 2 {
            return Err(CliError::Config(format!("tree arity must be >= 2, got {}", self.k)));
        }
        if let Some(cap) = self.budget.max_steps {
            let longest = self.metagrad_check.steps.iter().copied().chain([self.train.steps]).max().unwrap_or(0);
            if longest > cap {
                return Err(CliError::Config(format!("{longest} training steps exceed the budget of {cap}")));
            }
        }
        if self.data.kind == DataKind::File && self.data.path.is_none() {
            return Err(CliError::Config("data.kind = \"file\" needs data.path".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("sede = 3").is_err());
        assert!(Config::from_toml("[train]\nlearning_rate = 0.1").is_err());
    }

    #[test]
    fn hash_tracks_every_key() {
        let a = Config::default();
        let b = Config { seed: 1, ..Config::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Config::default().hash());
        assert_eq!(a.hash(), Config { out_dir: "elsewhere".into(), ..Config::default() }.hash());
    }
}
