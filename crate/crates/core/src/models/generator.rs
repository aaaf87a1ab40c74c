use std::path::Path;

use serde_json::json;

use super::{export_params, import_params, in_layer, rng_for, Conv, GeneratorConfig};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::tensor::{pixel_shuffle, Archive, Parameter, Scalar, Tensor};

/// conv-relu-conv with a scaled conv path and an identity skip.
#[derive(Debug, Clone)]
pub struct ResBlock<T: Scalar> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
    pub scale: f64,
}

impl<T: Scalar> ResBlock<T> {
    /// Returns the block output and the unscaled conv path.
    pub fn forward_parts(&self, x: &Tensor<T>, track: bool) -> Result<(Tensor<T>, Tensor<T>)> {
        let h = in_layer(&self.conv1.name, self.conv1.forward(x, track)?.relu())?;
        let path = self.conv2.forward(&h, track)?;
        let out = in_layer(&self.conv2.name, x.add(&path.scale(self.scale)?))?;
        Ok((out, path))
    }

    pub fn forward(&self, x: &Tensor<T>, track: bool) -> Result<Tensor<T>> {
        Ok(self.forward_parts(x, track)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct Generator<T: Scalar = f32> {
    config: GeneratorConfig,
    pub head: Conv<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub upsample: Vec<Conv<T>>,
    pub tail: Conv<T>,
}

const PREFIX: &str = "generator.";

impl<T: Scalar> Generator<T> {
    /// Seeded uniform fan-in initialisation of every conv.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, 1);
        let (f, k) = (config.num_features, config.kernel_size);
        let head = Conv::new_uniform("generator.head", 3, f, k, &mut rng)?;
        let blocks = (0..config.num_blocks)
            .map(|i| {
                Ok(ResBlock {
                    conv1: Conv::new_uniform(&format!("generator.block{i}.conv1"), f, f, k, &mut rng)?,
                    conv2: Conv::new_uniform(&format!("generator.block{i}.conv2"), f, f, k, &mut rng)?,
                    scale: config.residual_scale,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let upsample = (0..2)
            .map(|i| Conv::new_uniform(&format!("generator.up{i}"), f, 4 * f, k, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let tail = Conv::new_uniform("generator.tail", f, 3, k, &mut rng)?;
        Ok(Generator {
            config,
            head,
            blocks,
            upsample,
            tail,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = self.head.params().into();
        for b in &self.blocks {
            out.extend(b.conv1.params());
            out.extend(b.conv2.params());
        }
        for u in &self.upsample {
            out.extend(u.params());
        }
        out.extend(self.tail.params());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = self.head.params_mut().into();
        for b in &mut self.blocks {
            out.extend(b.conv1.params_mut());
            out.extend(b.conv2.params_mut());
        }
        for u in &mut self.upsample {
            out.extend(u.params_mut());
        }
        out.extend(self.tail.params_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.data().len()).sum()
    }

    fn shift(&self, x: &Tensor<T>, sign: f64) -> Result<Tensor<T>> {
        match self.config.mean_shift {
            Some(m) => x.add_channel(&m.map(|v| sign * v)),
            None => Ok(x.clone()),
        }
    }

    /// Unclamped ×4 output. With `track` the result is differentiable
    /// with respect to the generator's parameters.
    pub fn forward(&self, lr: &Tensor<T>, track: bool) -> Result<Tensor<T>> {
        let s = lr.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::usage(format!("generator expects N x 3 x h x w input, got {s:?}")));
        }
        let x = self.shift(lr, -1.0)?;
        let head = self.head.forward(&x, track)?;
        let mut h = head.clone();
        for b in &self.blocks {
            h = b.forward(&h, track)?;
        }
        h = in_layer("generator.global_skip", h.add(&head))?;
        for u in &self.upsample {
            h = in_layer(&u.name, pixel_shuffle(&u.forward(&h, track)?, 2))?;
        }
        let out = self.tail.forward(&h, track)?;
        self.shift(&out, 1.0)
    }

    /// Evaluation-time output, clamped to `[0, 1]` and detached.
    pub fn infer(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(lr, false)?.clamp(0.0, 1.0)
    }

    /// Super-resolves one image.
    pub fn upscale(&self, lr: &Image) -> Result<Image> {
        Image::from_tensor(&self.infer(&lr.to_tensor::<T>()?)?, 0)
    }

    pub fn to_archive(&self) -> Archive {
        let mut archive = Archive::default();
        export_params(self.parameters(), &mut archive);
        archive.metadata = json!({ "kind": "generator", "config": self.config });
        archive
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    /// Restores weights from an archive holding exactly this config's
    /// parameter set.
    pub fn load_weights(&mut self, archive: &Archive) -> Result<()> {
        import_params(self.parameters_mut(), archive, PREFIX)
    }

    /// Builds a generator for `config` and fills it from a checkpoint.
    pub fn load_pretrained(path: impl AsRef<Path>, config: GeneratorConfig) -> Result<Self> {
        let archive = Archive::load(path)?;
        let mut g = Generator::new(config, 0)?;
        g.load_weights(&archive)?;
        Ok(g)
    }
}
