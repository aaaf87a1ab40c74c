use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_output_extent;

pub const MODEL_CONFIG_VERSION: u32 = 1;

/// RGB mean of the DIV2K training set, in [0, 1].
pub const DIV2K_MEAN: [f64; 3] = [0.4488, 0.4371, 0.4040];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_blocks: usize,
    pub num_features: usize,
    /// Multiplier on each residual block's conv path.
    pub residual_scale: f64,
    pub scale: usize,
    pub kernel_size: usize,
    /// Per-channel RGB mean subtracted at the input and added back at the
    /// output. Off by default; `DIV2K_MEAN` is the usual choice.
    pub mean_shift: Option<[f64; 3]>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_blocks: 32,
            num_features: 256,
            residual_scale: 0.1,
            scale: 4,
            kernel_size: 3,
            mean_shift: None,
        }
    }
}

impl GeneratorConfig {
    /// The baseline network: 64 features, no residual scaling.
    pub fn baseline() -> Self {
        GeneratorConfig {
            num_features: 64,
            residual_scale: 1.0,
            ..Self::default()
        }
    }

    pub fn desk() -> Self {
        GeneratorConfig {
            num_blocks: 4,
            num_features: 16,
            // a 16-feature net spends most of a short run learning the DC level
            mean_shift: Some(DIV2K_MEAN),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::config("generator config", d));
        if self.num_blocks < 1 {
            return bad("num_blocks must be at least 1".into());
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return bad(format!("residual_scale {} outside (0, 1]", self.residual_scale));
        }
        if self.scale != 4 {
            return bad(format!("only x4 upscaling is supported, got x{}", self.scale));
        }
        if self.num_features == 0 || self.kernel_size % 2 == 0 {
            return bad("num_features must be positive and kernel_size odd".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub fc_hidden: usize,
    pub leaky_slope: f64,
    pub input_extent: usize,
    pub kernel_size: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            channels: vec![64, 64, 128, 128, 256, 256, 512, 512],
            strides: vec![1, 2, 1, 2, 1, 2, 1, 2],
            fc_hidden: 1024,
            leaky_slope: 0.2,
            input_extent: 192,
            kernel_size: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub const LAYERS: usize = 10;

    pub fn desk() -> Self {
        DiscriminatorConfig {
            channels: vec![16, 16, 32, 32, 64, 64, 64, 64],
            fc_hidden: 128,
            input_extent: 96,
            ..Self::default()
        }
    }

    pub fn layer_count(&self) -> usize {
        self.channels.len() + 2
    }

    /// Spatial extent after the conv ladder.
    pub fn final_extent(&self) -> Option<usize> {
        self.strides.iter().try_fold(self.input_extent, |e, &s| {
            conv_output_extent(e, self.kernel_size, s, self.kernel_size / 2)
        })
    }

    pub fn flat_features(&self) -> Option<usize> {
        let e = self.final_extent()?;
        Some(self.channels.last()? * e * e)
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let k2 = self.kernel_size * self.kernel_size;
        let mut cin = 3;
        let mut total = 0;
        for &c in &self.channels {
            total += cin * c * k2 + c;
            cin = c;
        }
        let flat = self.flat_features().unwrap_or(0);
        total + flat * self.fc_hidden + self.fc_hidden + self.fc_hidden + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::config("discriminator config", d));
        if self.channels.len() != self.strides.len() {
            return bad("channels and strides must have equal length".into());
        }
        if self.layer_count() != Self::LAYERS {
            return bad(format!(
                "{} conv + 2 fully connected layers = {} layers, expected {}",
                self.channels.len(),
                self.layer_count(),
                Self::LAYERS
            ));
        }
        if self.channels.iter().any(|&c| c == 0) || self.strides.iter().any(|&s| s == 0) {
            return bad("channels and strides must be positive".into());
        }
        if self.fc_hidden == 0 || self.kernel_size % 2 == 0 {
            return bad("fc_hidden must be positive and kernel_size odd".into());
        }
        if self.final_extent().is_none() {
            return bad(format!("input extent {} too small for the ladder", self.input_extent));
        }
        Ok(())
    }
}

/// Versioned JSON document describing both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub version: u32,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            version: MODEL_CONFIG_VERSION,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if cfg.version != MODEL_CONFIG_VERSION {
            return Err(Error::Parse(format!(
                "model config version {} is not supported (expected {})",
                cfg.version, MODEL_CONFIG_VERSION
            )));
        }
        cfg.generator.validate()?;
        cfg.discriminator.validate()?;
        Ok(cfg)
    }
}
