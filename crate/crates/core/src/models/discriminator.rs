use std::path::Path;

use serde_json::json;

use super::{export_params, import_params, in_layer, rng_for, Conv, Dense, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::tensor::{Archive, Parameter, Scalar, Tensor};

const PREFIX: &str = "discriminator.";

/// Conv ladder with leaky relu, then two fully connected layers and a
/// sigmoid: one probability per batch item.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar = f32> {
    config: DiscriminatorConfig,
    pub convs: Vec<Conv<T>>,
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, 2);
        let slope = config.leaky_slope;
        let gain = (2.0 / (1.0 + slope * slope)).sqrt() / 2f64.sqrt();
        let mut cin = 3;
        let mut convs = Vec::with_capacity(config.channels.len());
        for (i, (&c, &s)) in config.channels.iter().zip(&config.strides).enumerate() {
            convs.push(Conv::new(
                &format!("discriminator.conv{i}"),
                cin,
                c,
                config.kernel_size,
                s,
                gain,
                &mut rng,
            )?);
            cin = c;
        }
        let flat = config.flat_features().expect("validated");
        let fc1 = Dense::new("discriminator.fc1", flat, config.fc_hidden, gain, &mut rng)?;
        let fc2 = Dense::new("discriminator.fc2", config.fc_hidden, 1, 0.5f64.sqrt(), &mut rng)?;
        Ok(Discriminator { config, convs, fc1, fc2 })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        out.extend(self.fc1.params());
        out.extend(self.fc2.params());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.data().len()).sum()
    }

    /// Pre-sigmoid score, shape `N x 1`.
    pub fn logits(&self, img: &Tensor<T>, track: bool) -> Result<Tensor<T>> {
        let s = img.shape();
        let e = self.config.input_extent;
        if s.len() != 4 || s[1] != 3 || s[2] != e || s[3] != e {
            return Err(Error::config(
                "discriminator_forward",
                format!("expected N x 3 x {e} x {e} input, got {s:?}"),
            ));
        }
        let slope = self.config.leaky_slope;
        let mut h = img.clone();
        for c in &self.convs {
            h = in_layer(&c.name, c.forward(&h, track)?.leaky_relu(slope))?;
        }
        let h = in_layer(&self.fc1.name, self.fc1.forward(&h.flatten()?, track)?.leaky_relu(slope))?;
        self.fc2.forward(&h, track)
    }

    /// Probability of "real", strictly inside `(0, 1)`.
    pub fn forward(&self, img: &Tensor<T>, track: bool) -> Result<Tensor<T>> {
        in_layer("discriminator.sigmoid", self.logits(img, track)?.sigmoid())
    }

    pub fn to_archive(&self) -> Archive {
        let mut archive = Archive::default();
        export_params(self.parameters(), &mut archive);
        archive.metadata = json!({ "kind": "discriminator", "config": self.config });
        archive
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load_weights(&mut self, archive: &Archive) -> Result<()> {
        import_params(self.parameters_mut(), archive, PREFIX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_parameter_count_matches_closed_form() {
        let cfg = DiscriminatorConfig::desk();
        let d: Discriminator = Discriminator::new(cfg.clone(), 3).unwrap();
        assert_eq!(d.parameter_count(), cfg.parameter_count());
        assert_eq!(d.convs.len() + 2, DiscriminatorConfig::LAYERS);
    }

    #[test]
    fn wrong_extent_is_config_error() {
        let d: Discriminator = Discriminator::new(DiscriminatorConfig::desk(), 0).unwrap();
        let err = d.forward(&Tensor::zeros(&[1, 3, 64, 64]), false).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }
}
