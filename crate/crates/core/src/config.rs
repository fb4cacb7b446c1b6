//! Run configuration: a sectioned key=value file on disk, a resolved struct
//! in code. Unknown keys are parse errors, never silently defaulted.

use crate::data::{default_topology, AugmentationConfig, DatasetConfig, Modality};
use crate::encoder::EncoderConfig;
use crate::losses::{LossWeights, TemperatureSet};
use crate::tensor::{Result, TensorError};
use serde::{Deserialize, Serialize};

fn contract(msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op: "config",
        msg: msg.into(),
    }
}

/// Fully resolved configuration for one pretraining run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub augment: AugmentationConfig,
    pub encoder: EncoderConfig,
    pub temperatures: TemperatureSet,
    pub weights: LossWeights,
    /// K_c: anchors per distillation distribution.
    pub k_anchors: usize,
    /// K_d: neighbors aggregated by the cluster branch.
    pub k_neighbors: usize,
    /// N: memory bank capacity.
    pub bank_capacity: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Momentum-encoder coefficient alpha.
    pub key_momentum: f64,
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub disable_cmd: bool,
    pub disable_imd: bool,
    pub modalities: Vec<Modality>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetConfig::default();
        let encoder = EncoderConfig::desk(dataset.frames);
        RunConfig {
            dataset,
            augment: AugmentationConfig::default(),
            encoder,
            temperatures: TemperatureSet::default(),
            weights: LossWeights::default(),
            k_anchors: 128,
            k_neighbors: 16,
            bank_capacity: 512,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            key_momentum: 0.99,
            seed: 42,
            checkpoint_every: 1,
            disable_cmd: false,
            disable_imd: false,
            modalities: Modality::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.augment.validate()?;
        self.encoder.validate()?;
        self.temperatures.validate()?;
        self.weights.validate()?;
        if self.encoder.frames != self.dataset.frames {
            return Err(contract(format!(
                "encoder frames {} != dataset frames {}",
                self.encoder.frames, self.dataset.frames
            )));
        }
        if self.k_anchors == 0 || self.k_anchors > self.bank_capacity {
            return Err(contract("k_anchors must satisfy 1 <= K_c <= bank_capacity"));
        }
        if self.k_neighbors == 0 || self.k_neighbors > self.bank_capacity {
            return Err(contract("k_neighbors must satisfy 1 <= K_d <= bank_capacity"));
        }
        if self.batch_size == 0 || self.batch_size > self.bank_capacity {
            return Err(contract("batch_size must satisfy 1 <= batch <= bank_capacity"));
        }
        if self.epochs == 0 {
            return Err(contract("epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(contract("momentum must be in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(contract("weight_decay must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.key_momentum) {
            return Err(contract("key_momentum must be in [0, 1]"));
        }
        if self.learning_rate <= 0.0 || self.lr_decay_factor <= 0.0 {
            return Err(contract("learning rate and decay factor must be > 0"));
        }
        if self.modalities.is_empty() {
            return Err(contract("at least one modality required"));
        }
        for i in 0..self.modalities.len() {
            for j in (i + 1)..self.modalities.len() {
                if self.modalities[i] == self.modalities[j] {
                    return Err(contract("duplicate modality in list"));
                }
            }
        }
        Ok(())
    }

    /// Epoch at which the learning rate steps down: 80% of the run.
    pub fn lr_decay_epoch(&self) -> usize {
        (self.epochs * 4) / 5
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch() {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    /// Canonical echo: every resolved value, written explicitly.
    pub fn to_echo_toml(&self) -> String {
        let file: FileConfig = self.into();
        toml::to_string(&file).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let file: FileConfig =
            toml::from_str(text).map_err(|e| contract(format!("parse error: {e}")))?;
        let cfg = file.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// ── file schema ───────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: DatasetSection,
    #[serde(default)]
    augment: AugmentationConfig,
    #[serde(default)]
    encoder: EncoderSection,
    #[serde(default)]
    loss: LossSection,
    #[serde(default)]
    training: TrainingSection,
    #[serde(default)]
    ablation: AblationSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    frames: usize,
    noise_std: f64,
    #[serde(default = "default_rotation")]
    rotation_max_rad: f64,
    seed: u64,
}

fn default_rotation() -> f64 {
    crate::data::DEFAULT_ROTATION_MAX_RAD
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSection {
    /// `desk` (default) or `paper`; explicit fields override the preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gcn_channels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transformer_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ffn_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    positional_embedding: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    tau_contrastive: f64,
    tau_teacher: f64,
    tau_student: f64,
    cmd_weight: f64,
    k_anchors: usize,
    k_neighbors: usize,
    bank_capacity: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = RunConfig::default();
        LossSection {
            tau_contrastive: d.temperatures.contrastive,
            tau_teacher: d.temperatures.teacher,
            tau_student: d.temperatures.student,
            cmd_weight: d.weights.cmd_weight,
            k_anchors: d.k_anchors,
            k_neighbors: d.k_neighbors,
            bank_capacity: d.bank_capacity,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    lr_decay_factor: f64,
    momentum: f64,
    weight_decay: f64,
    key_momentum: f64,
    seed: u64,
    checkpoint_every: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = RunConfig::default();
        TrainingSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            lr_decay_factor: d.lr_decay_factor,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            key_momentum: d.key_momentum,
            seed: d.seed,
            checkpoint_every: d.checkpoint_every,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AblationSection {
    disable_cmd: bool,
    disable_imd: bool,
    modalities: Vec<String>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            disable_cmd: false,
            disable_imd: false,
            modalities: Modality::ALL.iter().map(|m| m.name().to_string()).collect(),
        }
    }
}

impl FileConfig {
    fn resolve(self) -> Result<RunConfig> {
        let dataset = DatasetConfig {
            num_classes: self.dataset.num_classes,
            train_per_class: self.dataset.train_per_class,
            test_per_class: self.dataset.test_per_class,
            frames: self.dataset.frames,
            topology: default_topology(),
            noise_std: self.dataset.noise_std,
            rotation_max_rad: self.dataset.rotation_max_rad,
            seed: self.dataset.seed,
        };
        let mut encoder = match self.encoder.preset.as_deref() {
            None | Some("desk") => EncoderConfig::desk(dataset.frames),
            Some("paper") => EncoderConfig::paper_scale(dataset.frames),
            Some(other) => {
                return Err(contract(format!(
                    "unknown encoder preset {other:?}; expected desk or paper"
                )))
            }
        };
        if let Some(v) = self.encoder.gcn_channels {
            encoder.gcn_channels = v;
        }
        if let Some(v) = self.encoder.transformer_layers {
            encoder.transformer_layers = v;
        }
        if let Some(v) = self.encoder.model_dim {
            encoder.model_dim = v;
        }
        if let Some(v) = self.encoder.heads {
            encoder.heads = v;
        }
        if let Some(v) = self.encoder.ffn_dim {
            encoder.ffn_dim = v;
        }
        if let Some(v) = self.encoder.projection_dim {
            encoder.projection_dim = v;
        }
        if let Some(v) = self.encoder.positional_embedding {
            encoder.positional_embedding = v;
        }
        let mut modalities = Vec::new();
        for name in &self.ablation.modalities {
            let m = Modality::parse(name)
                .ok_or_else(|| contract(format!("unknown modality {name:?}")))?;
            modalities.push(m);
        }
        Ok(RunConfig {
            dataset,
            augment: self.augment,
            encoder,
            temperatures: TemperatureSet {
                contrastive: self.loss.tau_contrastive,
                teacher: self.loss.tau_teacher,
                student: self.loss.tau_student,
            },
            weights: LossWeights {
                cmd_weight: self.loss.cmd_weight,
            },
            k_anchors: self.loss.k_anchors,
            k_neighbors: self.loss.k_neighbors,
            bank_capacity: self.loss.bank_capacity,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            lr_decay_factor: self.training.lr_decay_factor,
            momentum: self.training.momentum,
            weight_decay: self.training.weight_decay,
            key_momentum: self.training.key_momentum,
            seed: self.training.seed,
            checkpoint_every: self.training.checkpoint_every,
            disable_cmd: self.ablation.disable_cmd,
            disable_imd: self.ablation.disable_imd,
            modalities,
        })
    }
}

impl From<&RunConfig> for FileConfig {
    fn from(cfg: &RunConfig) -> Self {
        FileConfig {
            dataset: DatasetSection {
                num_classes: cfg.dataset.num_classes,
                train_per_class: cfg.dataset.train_per_class,
                test_per_class: cfg.dataset.test_per_class,
                frames: cfg.dataset.frames,
                noise_std: cfg.dataset.noise_std,
                rotation_max_rad: cfg.dataset.rotation_max_rad,
                seed: cfg.dataset.seed,
            },
            augment: cfg.augment.clone(),
            encoder: EncoderSection {
                preset: None,
                gcn_channels: Some(cfg.encoder.gcn_channels.clone()),
                transformer_layers: Some(cfg.encoder.transformer_layers),
                model_dim: Some(cfg.encoder.model_dim),
                heads: Some(cfg.encoder.heads),
                ffn_dim: Some(cfg.encoder.ffn_dim),
                projection_dim: Some(cfg.encoder.projection_dim),
                positional_embedding: Some(cfg.encoder.positional_embedding),
            },
            loss: LossSection {
                tau_contrastive: cfg.temperatures.contrastive,
                tau_teacher: cfg.temperatures.teacher,
                tau_student: cfg.temperatures.student,
                cmd_weight: cfg.weights.cmd_weight,
                k_anchors: cfg.k_anchors,
                k_neighbors: cfg.k_neighbors,
                bank_capacity: cfg.bank_capacity,
            },
            training: TrainingSection {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                lr_decay_factor: cfg.lr_decay_factor,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
                key_momentum: cfg.key_momentum,
                seed: cfg.seed,
                checkpoint_every: cfg.checkpoint_every,
            },
            ablation: AblationSection {
                disable_cmd: cfg.disable_cmd,
                disable_imd: cfg.disable_imd,
                modalities: cfg.modalities.iter().map(|m| m.name().to_string()).collect(),
            },
        }
    }
}
