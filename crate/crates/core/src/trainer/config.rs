use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::{ExtractorConfig, LossWeights};
use crate::models::{DiscriminatorConfig, GeneratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Initial rate for the MSE-only phase; `None` uses `lr`.
    pub pretrain_lr: Option<f64>,
    pub lr_halve_epoch: usize,
    pub d_steps_per_g: usize,
    pub patch: usize,
    pub seed: u64,
    /// Save a resumable state every this many iterations; 0 saves only at
    /// the end.
    pub checkpoint_every: u64,
    /// Stop after this many iterations even if epochs remain.
    pub max_iterations: Option<u64>,
    pub augment: bool,
    pub desk_scale: bool,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub extractor: ExtractorConfig,
    pub vgg_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::new(1.0, 0.05, 0.4).expect("valid"),
            epochs: 300,
            batch: 4,
            lr: 5e-5,
            pretrain_lr: None,
            lr_halve_epoch: 150,
            d_steps_per_g: 2,
            patch: 192,
            seed: 0,
            checkpoint_every: 0,
            max_iterations: None,
            augment: true,
            desk_scale: false,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            extractor: ExtractorConfig::default(),
            vgg_weights: None,
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// anything else replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

impl TrainConfig {
    /// CPU-sized preset: 4 blocks × 16 features, the 16..64 ladder, 96²
    /// patches, no augmentation and a short schedule with the halving at
    /// its midpoint.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 250,
            lr_halve_epoch: 125,
            // 500 MSE steps at small rates stay below bicubic
            pretrain_lr: Some(5e-3),
            patch: 96,
            augment: false,
            desk_scale: true,
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::desk(),
            extractor: ExtractorConfig::desk(),
            ..Self::default()
        }
    }

    /// Defaults (desk or full, chosen by `desk` or the document's own
    /// `desk_scale` flag) overlaid with `doc`. Unknown keys are errors.
    pub fn from_value(doc: &Value, desk: bool) -> Result<Self> {
        let desk = desk || doc.get("desk_scale").and_then(Value::as_bool).unwrap_or(false);
        let base = if desk { Self::desk() } else { Self::default() };
        let mut merged = serde_json::to_value(base).expect("config serializes");
        merge_json(&mut merged, doc);
        let cfg: TrainConfig =
            serde_json::from_value(merged).map_err(|e| Error::Parse(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, desk: bool) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("training config: {e}")))?;
        Self::from_value(&doc, desk)
    }

    /// No discriminator updates and no perceptual or adversarial term.
    pub fn is_pretraining(&self) -> bool {
        self.d_steps_per_g == 0 && self.weights.lambda1 == 0.0 && self.weights.lambda3 == 0.0
    }

    /// Initial learning rate of the phase this config describes.
    pub fn base_lr(&self) -> f64 {
        match self.pretrain_lr {
            Some(lr) if self.is_pretraining() => lr,
            _ => self.lr,
        }
    }

    pub fn needs_discriminator(&self) -> bool {
        self.d_steps_per_g > 0 || self.weights.lambda3 > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::config("training config", d));
        self.weights.validate()?;
        for lr in std::iter::once(self.lr).chain(self.pretrain_lr) {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning rates must be positive, got {lr}"));
            }
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be at least 1".into());
        }
        if self.patch % self.generator.scale != 0 {
            return bad(format!(
                "patch {} is not a multiple of the scale {}",
                self.patch, self.generator.scale
            ));
        }
        self.generator.validate()?;
        if self.needs_discriminator() {
            self.discriminator.validate()?;
            if self.discriminator.input_extent != self.patch {
                return bad(format!(
                    "discriminator input extent {} differs from patch {}",
                    self.discriminator.input_extent, self.patch
                ));
            }
        }
        if self.weights.lambda1 > 0.0 {
            self.extractor.validate()?;
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, dataset_len: usize) -> u64 {
        dataset_len.div_ceil(self.batch) as u64
    }

    pub fn total_iterations(&self, dataset_len: usize) -> u64 {
        let full = self.epochs as u64 * self.iterations_per_epoch(dataset_len);
        self.max_iterations.map_or(full, |m| m.min(full))
    }

    /// Learning rate for a 1-based epoch index.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        lr_schedule(self.base_lr(), self.lr_halve_epoch as u64, epoch)
    }
}

/// `lr0 · 0.5^[epoch > halve_epoch]`, epochs counted from 1.
pub fn lr_schedule(lr0: f64, halve_epoch: u64, epoch: u64) -> f64 {
    if epoch > halve_epoch {
        lr0 * 0.5
    } else {
        lr0
    }
}
