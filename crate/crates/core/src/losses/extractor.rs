use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{in_layer, kaiming, rng_for};
use crate::tensor::{conv2d, max_pool2d, Archive, Scalar, Tensor};

/// Topology of the frozen VGG-style feature stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Convolutions per stage; 2-2-4-4-4 is the VGG19 layout.
    pub stage_convs: Vec<usize>,
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            stage_convs: vec![2, 2, 4, 4, 4],
            channels: vec![64, 128, 256, 512, 512],
            seed: 0x7667,
        }
    }
}

impl ExtractorConfig {
    pub fn desk() -> Self {
        ExtractorConfig {
            channels: vec![16, 32, 64, 128, 128],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_convs.is_empty()
            || self.stage_convs.len() != self.channels.len()
            || self.stage_convs.iter().chain(&self.channels).any(|&v| v == 0)
        {
            return Err(Error::config(
                "feature extractor",
                format!(
                    "stage_convs {:?} and channels {:?} must be equal-length positive lists",
                    self.stage_convs, self.channels
                ),
            ));
        }
        Ok(())
    }
}

/// Where the extractor's weights came from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    Seeded(u64),
    File(PathBuf),
}

#[derive(Debug, Clone)]
struct FrozenConv<T: Scalar> {
    name: String,
    weight: Tensor<T>,
    bias: Tensor<T>,
}

/// Frozen conv stack tapped after the last conv+relu of the final stage,
/// before that stage's pooling. Its tensors never require gradients.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T: Scalar = f32> {
    config: ExtractorConfig,
    stages: Vec<Vec<FrozenConv<T>>>,
    mean: Option<[f64; 3]>,
    std: Option<[f64; 3]>,
    source: WeightSource,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn seeded(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, 3);
        let mut cin = 3;
        let mut stages = Vec::with_capacity(config.channels.len());
        for (s, (&n, &c)) in config.stage_convs.iter().zip(&config.channels).enumerate() {
            let mut convs = Vec::with_capacity(n);
            for i in 0..n {
                let fan_in = cin * 9;
                convs.push(FrozenConv {
                    name: format!("vgg.stage{}.conv{}", s + 1, i + 1),
                    weight: Tensor::from_vec(&[c, cin, 3, 3], kaiming(c * fan_in, fan_in, 1.0, &mut rng))?,
                    bias: Tensor::zeros(&[c]),
                });
                cin = c;
            }
            stages.push(convs);
        }
        let seed = config.seed;
        Ok(FeatureExtractor {
            config,
            stages,
            mean: None,
            std: None,
            source: WeightSource::Seeded(seed),
        })
    }

    /// Loads weights from an archive. A missing file falls back to the
    /// seeded stack with a logged notice; a present but incompatible file
    /// is an error.
    pub fn from_file(config: ExtractorConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut fx = Self::seeded(config)?;
        if !path.exists() {
            log::warn!(
                "feature extractor weights {} not found; using seeded random weights",
                path.display()
            );
            return Ok(fx);
        }
        let archive = Archive::load(path)?;
        for conv in fx.stages.iter_mut().flatten() {
            let w = archive.expect::<T>(&format!("{}.weight", conv.name), conv.weight.shape())?;
            let b = archive.expect::<T>(&format!("{}.bias", conv.name), conv.bias.shape())?;
            conv.weight = Tensor::from_vec(conv.weight.shape(), w)?;
            conv.bias = Tensor::from_vec(conv.bias.shape(), b)?;
        }
        let triple = |key: &str| -> Result<Option<[f64; 3]>> {
            match archive.metadata.get("normalization").and_then(|n| n.get(key)) {
                None => Ok(None),
                Some(v) => serde_json::from_value(v.clone())
                    .map(Some)
                    .map_err(|e| Error::Checkpoint(format!("normalization {key}: {e}"))),
            }
        };
        fx.mean = triple("mean")?;
        fx.std = triple("std")?;
        if let Some(s) = fx.std {
            if s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Checkpoint(format!("normalization std {s:?} must be positive")));
            }
        }
        fx.source = WeightSource::File(path.to_path_buf());
        Ok(fx)
    }

    /// Seeded weights, or the file at `path` if one is given.
    pub fn build(config: ExtractorConfig, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_file(config, p),
            None => Self::seeded(config),
        }
    }

    /// Writes the weights in the archive layout `from_file` reads.
    pub fn to_archive(&self) -> Archive {
        let mut archive = Archive::new();
        for conv in self.stages.iter().flatten() {
            archive.push(format!("{}.weight", conv.name), conv.weight.shape(), conv.weight.data());
            archive.push(format!("{}.bias", conv.name), conv.bias.shape(), conv.bias.data());
        }
        let mut norm = serde_json::Map::new();
        if let Some(m) = self.mean {
            norm.insert("mean".into(), serde_json::json!(m));
        }
        if let Some(s) = self.std {
            norm.insert("std".into(), serde_json::json!(s));
        }
        archive.metadata = serde_json::json!({ "kind": "feature_extractor", "normalization": norm });
        archive
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn source(&self) -> &WeightSource {
        &self.source
    }

    pub fn set_normalization(&mut self, mean: Option<[f64; 3]>, std: Option<[f64; 3]>) {
        self.mean = mean;
        self.std = std;
    }

    /// Features of an `N x 3 x H x W` batch at the tap point.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        if let Some(m) = self.mean {
            h = h.add_channel(&m.map(|v| -v))?;
        }
        if let Some(s) = self.std {
            h = h.mul_channel(&s.map(|v| 1.0 / v))?;
        }
        let last = self.stages.len() - 1;
        for (i, stage) in self.stages.iter().enumerate() {
            for conv in stage {
                h = in_layer(
                    &conv.name,
                    conv2d(&h, &conv.weight, Some(&conv.bias), 1, 1)?.relu(),
                )?;
            }
            if i < last {
                if h.shape()[2] < 2 || h.shape()[3] < 2 {
                    return Err(Error::usage(format!(
                        "input {:?} too small for {} pooling stages",
                        x.shape(),
                        last
                    )));
                }
                h = max_pool2d(&h, 2)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_geometry() {
        let fx: FeatureExtractor<f64> = FeatureExtractor::seeded(ExtractorConfig::desk()).unwrap();
        let out = fx.features(&Tensor::full(&[2, 3, 32, 48], 0.5)).unwrap();
        assert_eq!(out.shape(), &[2, 128, 2, 3]);
        assert!(fx.features(&Tensor::full(&[1, 3, 8, 8], 0.5)).is_err());
    }

    #[test]
    fn weights_never_require_grad() {
        let fx: FeatureExtractor<f64> = FeatureExtractor::seeded(ExtractorConfig::desk()).unwrap();
        assert!(fx.stages.iter().flatten().all(|c| !c.weight.requires_grad() && !c.bias.requires_grad()));
    }

    #[test]
    fn missing_file_falls_back_to_seeded() {
        let fx: FeatureExtractor =
            FeatureExtractor::from_file(ExtractorConfig::desk(), "/nonexistent/vgg.bin").unwrap();
        assert_eq!(fx.source(), &WeightSource::Seeded(ExtractorConfig::desk().seed));
    }

    #[test]
    fn file_round_trip_with_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg.bin");
        let mut fx: FeatureExtractor<f64> = FeatureExtractor::seeded(ExtractorConfig::desk()).unwrap();
        fx.set_normalization(Some([0.485, 0.456, 0.406]), Some([0.229, 0.224, 0.225]));
        fx.to_archive().save(&path).unwrap();
        let mut other_cfg = ExtractorConfig::desk();
        other_cfg.seed = 1;
        let loaded: FeatureExtractor<f64> = FeatureExtractor::from_file(other_cfg, &path).unwrap();
        assert_eq!(loaded.mean, fx.mean);
        assert_eq!(loaded.std, fx.std);
        let x = Tensor::full(&[1, 3, 16, 16], 0.3);
        assert_eq!(loaded.features(&x).unwrap().data(), fx.features(&x).unwrap().data());
    }
}
