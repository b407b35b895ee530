//! Declarative experiment configuration, read from TOML. Unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive_coeff::AdaptiveConfig;
use crate::augmentation::AugPipelineConfig;
use crate::autograd::Variant;
use crate::error::{Error, Result};
use crate::models::{MatchingMode, ModelConfig};
use crate::task_stream::toy::{TOY_MEAN, TOY_STD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Procedurally rendered shapes bundled with the crate.
    Toy,
    /// A dataset directory with a manifest.
    Dir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub toy_train_per_class: usize,
    pub toy_test_per_class: usize,
    pub toy_seed: u64,
    pub first_task_size: usize,
    pub classes_per_task: usize,
    /// Seeds the class-to-task permutation.
    pub split_seed: u64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Toy,
            path: None,
            toy_train_per_class: 100,
            toy_test_per_class: 40,
            toy_seed: 7,
            first_task_size: 5,
            classes_per_task: 5,
            split_seed: 0,
            mean: TOY_MEAN.to_vec(),
            std: TOY_STD.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub optimizer: Variant,
    pub lr: f64,
    pub betas: (f64, f64),
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs after which the learning rate is divided by `lr_factor`.
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Variant::RAdam,
            lr: 1e-4,
            betas: (0.9, 0.999),
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 50,
            milestones: vec![30, 40],
            lr_factor: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub mode: MatchingMode,
    /// Fraction of each classifier batch drawn from the previous generator.
    pub eta: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            mode: MatchingMode::Ifm,
            eta: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub batch_size: usize,
    /// Images the discriminator sees per class of the current task.
    pub images_per_class: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub betas: (f64, f64),
    pub d_steps_per_g_step: usize,
    pub lazy_r1_interval: usize,
    pub gamma: f64,
    pub lambda_gd: f64,
    pub ema_decay: f64,
    /// Also train the generator after the last task.
    pub train_final_task: bool,
    /// Samples per class used to measure generator drift between tasks.
    pub retention_probe: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            images_per_class: 256_000,
            lr_g: 0.0025,
            lr_d: 0.0025,
            betas: (0.0, 0.99),
            d_steps_per_g_step: 1,
            lazy_r1_interval: 16,
            gamma: 0.1,
            lambda_gd: 10.0,
            ema_decay: 0.999,
            train_final_task: true,
            retention_probe: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub arms: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            arms: vec!["ifm".into(), "dfm".into(), "im".into(), "finetune".into()],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub classifier: ClassifierTrainConfig,
    pub replay: ReplayConfig,
    pub gan: GanTrainConfig,
    pub adaptive: AdaptiveConfig,
    pub augment: AugPipelineConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "genifer".into(),
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            classifier: ClassifierTrainConfig::default(),
            replay: ReplayConfig::default(),
            gan: GanTrainConfig::default(),
            adaptive: AdaptiveConfig::default(),
            augment: AugPipelineConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.source == DataSource::Dir && d.path.is_none() {
            return Err(Error::Config("data.source = \"dir\" needs data.path".into()));
        }
        if d.first_task_size == 0 || d.classes_per_task == 0 {
            return Err(Error::Config("task sizes must be positive".into()));
        }
        let c = &self.classifier;
        if c.batch_size == 0 || c.epochs == 0 {
            return Err(Error::Config("classifier batch_size and epochs must be positive".into()));
        }
        if !(c.lr > 0.0) || !(c.lr_factor > 0.0) || c.weight_decay < 0.0 {
            return Err(Error::Config("classifier lr, lr_factor must be positive and weight_decay non-negative".into()));
        }
        let r = &self.replay;
        if !(0.0..=1.0).contains(&r.eta) {
            return Err(Error::Config(format!("replay.eta {} outside [0, 1]", r.eta)));
        }
        let eta_b = (r.eta * c.batch_size as f64).floor() as usize;
        if r.eta > 0.0 && eta_b >= c.batch_size {
            return Err(Error::Config("replay.eta leaves no real samples in a classifier batch".into()));
        }
        let g = &self.gan;
        if g.batch_size == 0 || g.images_per_class == 0 || g.d_steps_per_g_step == 0 || g.lazy_r1_interval == 0 {
            return Err(Error::Config("GAN batch size, budget, step ratio and R1 interval must be positive".into()));
        }
        if !(g.lr_g > 0.0 && g.lr_d > 0.0) {
            return Err(Error::Config("GAN learning rates must be positive".into()));
        }
        if g.gamma < 0.0 || g.lambda_gd < 0.0 {
            return Err(Error::Config("gamma and lambda_gd must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&g.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} outside [0, 1]", g.ema_decay)));
        }
        self.adaptive.validate()?;
        Ok(())
    }

    /// Number of real and synthetic samples in one classifier batch when
    /// replay is active.
    pub fn replay_split(&self) -> (usize, usize) {
        let b = self.classifier.batch_size;
        let syn = (self.replay.eta * b as f64).floor() as usize;
        (b - syn, syn)
    }

    /// Whether any generator is trained in this run.
    pub fn uses_replay(&self) -> bool {
        self.replay.eta > 0.0
    }

    /// SHA-256 over the canonical JSON form, excluding the ablation list.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.ablation = AblationConfig::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Applies a named ablation arm.
    pub fn with_arm(&self, arm: &str) -> Result<Self> {
        let mut c = self.clone();
        c.name = format!("{}-{arm}", self.name);
        match arm {
            "ifm" => c.replay.mode = MatchingMode::Ifm,
            "dfm" => c.replay.mode = MatchingMode::Dfm,
            "im" => c.replay.mode = MatchingMode::Im,
            "ifm-no-ca" => {
                c.replay.mode = MatchingMode::Ifm;
                c.augment.classifier.augment_synthetic = false;
            }
            "ifm-no-ada" => {
                c.replay.mode = MatchingMode::Ifm;
                c.augment.ada.enabled = false;
            }
            "ifm-const-lambda" => {
                c.replay.mode = MatchingMode::Ifm;
                c.adaptive.enabled = false;
            }
            "finetune" => c.replay.eta = 0.0,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation arm `{other}` (expected one of {})",
                    ARMS.join(", ")
                )))
            }
        }
        Ok(c)
    }
}

pub const ARMS: &[&str] = &["ifm", "dfm", "im", "ifm-no-ca", "ifm-no-ada", "ifm-const-lambda", "finetune"];
