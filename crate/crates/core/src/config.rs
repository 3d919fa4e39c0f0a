//! Run configuration: strict JSON parsing, default resolution and echo.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugPolicy;
use crate::contrastive::{LossConfig, Method, SimclrForm, WeightMode, WeightNorm};
use crate::data::{load_cifar10_binary, read_raw, synth_shapes, LabeledDataset};
use crate::error::{Error, Result};
use crate::names::named_enum;
use crate::rng;
use crate::score::{DsmObjective, ScoreConfig};

named_enum!(DsmObjective, "DSM objective");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    All,
    /// Sample twice the batch and keep the half with the larger weight distance.
    MedianThreshold,
}

named_enum!(Optimizer, "optimizer");
named_enum!(Sampling, "sampling");

/// Contrastive phase. `lr` and `optimizer` default per method when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_cl_epochs")]
    pub epochs: usize,
    #[serde(default = "default_cl_batch")]
    pub batch: usize,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub optimizer: Option<Optimizer>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Fraction of all steps spent in linear warmup.
    #[serde(default = "default_warmup")]
    pub warmup_frac: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_eps_var")]
    pub eps_var: f64,
    #[serde(default = "default_whiten_eps")]
    pub whiten_eps: f64,
    #[serde(default = "default_weight_mode")]
    pub weight_mode: WeightMode,
    #[serde(default = "default_weight_norm")]
    pub weight_norm: WeightNorm,
    #[serde(default = "default_simclr_form")]
    pub simclr_form: SimclrForm,
    #[serde(default = "default_sampling")]
    pub sampling: Sampling,
}

fn loss_defaults() -> LossConfig {
    LossConfig::default()
}
fn default_method() -> Method {
    loss_defaults().method
}
fn default_cl_epochs() -> usize {
    50
}
fn default_cl_batch() -> usize {
    128
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_warmup() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    loss_defaults().tau
}
fn default_lambda() -> f64 {
    loss_defaults().lambda
}
fn default_mu() -> f64 {
    loss_defaults().mu
}
fn default_nu() -> f64 {
    loss_defaults().nu
}
fn default_eps_var() -> f64 {
    loss_defaults().eps_var
}
fn default_whiten_eps() -> f64 {
    loss_defaults().whiten_eps
}
fn default_weight_mode() -> WeightMode {
    loss_defaults().weight_mode
}
fn default_weight_norm() -> WeightNorm {
    loss_defaults().weight_norm
}
fn default_simclr_form() -> SimclrForm {
    loss_defaults().simclr_form
}
fn default_sampling() -> Sampling {
    Sampling::All
}

impl Default for ClConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ClConfig {
    pub fn default_optimizer(method: Method) -> Optimizer {
        match method {
            Method::Simclr | Method::Simsiam => Optimizer::Sgd,
            Method::Wmse | Method::Vicreg => Optimizer::Adam,
        }
    }

    pub fn default_lr(method: Method) -> f64 {
        match method {
            Method::Simclr => 0.5,
            Method::Simsiam => 0.06,
            Method::Wmse | Method::Vicreg => 1e-3,
        }
    }

    pub fn resolved_lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| Self::default_lr(self.method))
    }

    pub fn resolved_optimizer(&self) -> Optimizer {
        self.optimizer.unwrap_or_else(|| Self::default_optimizer(self.method))
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            method: self.method,
            tau: self.tau,
            lambda: self.lambda,
            mu: self.mu,
            nu: self.nu,
            eps_var: self.eps_var,
            whiten_eps: self.whiten_eps,
            weight_mode: self.weight_mode,
            weight_norm: self.weight_norm,
            simclr_form: self.simclr_form,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        if self.batch < 2 {
            return Err(Error::Config(format!("cl.batch = {} must be at least 2", self.batch)));
        }
        let lr = self.resolved_lr();
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("cl.lr = {lr} must be positive")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("cl.momentum = {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("cl.weight_decay = {} must be nonnegative", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("cl.warmup_frac = {} outside [0, 1)", self.warmup_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Generated shapes; the test split uses a seed derived from the run seed.
    Synth {
        #[serde(default = "default_synth_n")]
        n: usize,
        #[serde(default = "default_synth_test_n")]
        test_n: usize,
        #[serde(default = "default_resolution")]
        resolution: usize,
        #[serde(default = "default_classes")]
        classes: usize,
    },
    /// CIFAR-10 binary batch files.
    Cifar10 { train: Vec<PathBuf>, test: Vec<PathBuf> },
    /// Raw split files as written by `synth`.
    Raw { train: PathBuf, test: PathBuf },
}

fn default_synth_n() -> usize {
    2000
}
fn default_synth_test_n() -> usize {
    500
}
fn default_resolution() -> usize {
    32
}
fn default_classes() -> usize {
    4
}

/// Train and test splits.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn synth_splits(n: usize, test_n: usize, resolution: usize, classes: usize, seed: u64) -> Result<Splits> {
    Ok(Splits {
        train: synth_shapes(n, resolution, classes, seed)?,
        test: synth_shapes(test_n, resolution, classes, rng::mix(&[seed, 0x7E57]))?,
    })
}

impl DatasetSpec {
    pub fn synth() -> Self {
        DatasetSpec::Synth {
            n: default_synth_n(),
            test_n: default_synth_test_n(),
            resolution: default_resolution(),
            classes: default_classes(),
        }
    }

    pub fn load(&self, seed: u64) -> Result<Splits> {
        match self {
            DatasetSpec::Synth { n, test_n, resolution, classes } => synth_splits(*n, *test_n, *resolution, *classes, seed),
            DatasetSpec::Cifar10 { train, test } => Ok(Splits {
                train: load_cifar10_binary(train)?,
                test: load_cifar10_binary(test)?,
            }),
            DatasetSpec::Raw { train, test } => Ok(Splits { train: read_raw(train)?, test: read_raw(test)? }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub cl: ClConfig,
    #[serde(default)]
    pub aug: AugPolicy,
    /// Record wall-clock time in metrics and checkpoint headers. Off by
    /// default so repeated runs are byte-identical.
    #[serde(default)]
    pub wall_clock: bool,
}

impl RunConfig {
    pub fn new(seed: u64, dataset: DatasetSpec) -> Self {
        RunConfig {
            seed,
            dataset,
            score: ScoreConfig::default(),
            cl: ClConfig::default(),
            aug: AugPolicy::default(),
            wall_clock: false,
        }
    }

    /// Fills method-dependent defaults so the echo states every value.
    pub fn resolve(mut self) -> Result<Self> {
        self.cl.lr = Some(self.cl.resolved_lr());
        self.cl.optimizer = Some(self.cl.resolved_optimizer());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        self.cl.validate()?;
        self.aug.validate().map_err(|e| Error::Config(format!("aug: {e}")))?;
        if let DatasetSpec::Synth { n, test_n, resolution, classes } = self.dataset {
            if n == 0 || test_n == 0 || resolution == 0 || !(1..=4).contains(&classes) {
                return Err(Error::Config("dataset: synth needs n, test_n, resolution ≥ 1 and 1–4 classes".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Strict parse without resolving method defaults, for callers that
/// override fields before calling [`RunConfig::resolve`].
pub fn read_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column())))
}

/// Strict parse of a config document; syntax errors carry line and column.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    read_config_str(text, origin)?.resolve()
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_config_str(&text, &path.display().to_string())
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    read_config(path)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"seed": 3, "dataset": {"kind": "synth"}}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str(MINIMAL, "m").unwrap();
        assert_eq!(cfg.cl.lr, Some(0.5));
        assert_eq!(cfg.cl.optimizer, Some(Optimizer::Sgd));
        assert_eq!(cfg.dataset, DatasetSpec::synth());
        let echo: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        for key in ["seed", "dataset", "score", "cl", "aug", "wall_clock"] {
            assert!(echo.get(key).is_some(), "{key}");
        }
        for key in ["lr", "optimizer", "tau", "weight_mode", "sampling", "warmup_frac"] {
            assert!(!echo["cl"][key].is_null(), "{key}");
        }
    }

    #[test]
    fn echo_reparses_to_the_same_config() {
        let cfg = parse_config_str(MINIMAL, "m").unwrap();
        assert_eq!(parse_config_str(&cfg.to_json(), "echo").unwrap(), cfg);
    }

    #[test]
    fn method_defaults() {
        let cfg = parse_config_str(r#"{"seed": 1, "dataset": {"kind": "synth"}, "cl": {"method": "vicreg"}}"#, "m").unwrap();
        assert_eq!(cfg.cl.optimizer, Some(Optimizer::Adam));
        assert_eq!(cfg.cl.lr, Some(1e-3));
        let cfg = parse_config_str(r#"{"seed": 1, "dataset": {"kind": "synth"}, "cl": {"method": "simsiam", "lr": 0.1}}"#, "m")
            .unwrap();
        assert_eq!(cfg.cl.lr, Some(0.1));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config_str(r#"{"seed": 1, "dataset": {"kind": "synth"}, "lr_sched": 2}"#, "m").unwrap_err();
        assert!(err.to_string().contains("lr_sched"), "{err}");
        let err = parse_config_str(r#"{"seed": 1, "dataset": {"kind": "synth", "size": 2}}"#, "m").unwrap_err();
        assert!(err.to_string().contains("size"), "{err}");
        let err = parse_config_str(r#"{"seed": 1, "dataset": {"kind": "synth"}, "cl": {"tua": 2}}"#, "m").unwrap_err();
        assert!(err.to_string().contains("tua"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config_str("{\n  \"seed\": 1,\n  oops\n}", "cfg.json").unwrap_err();
        assert!(err.to_string().contains("cfg.json:3:"), "{err}");
    }

    #[test]
    fn missing_seed_and_bad_values() {
        assert!(parse_config_str(r#"{"dataset": {"kind": "synth"}}"#, "m").is_err());
        let bad_tau = r#"{"seed": 1, "dataset": {"kind": "synth"}, "cl": {"tau": 0}}"#;
        assert!(parse_config_str(bad_tau, "m").is_err());
        let bad_mode = r#"{"seed": 1, "dataset": {"kind": "synth"}, "cl": {"weight_mode": "lpips"}}"#;
        assert!(parse_config_str(bad_mode, "m").is_err());
    }
}
