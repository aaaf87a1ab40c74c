//! The super-resolution generator, the adversarial discriminator and the
//! layer plumbing they share.

mod config;
mod discriminator;
mod generator;

pub use config::{DiscriminatorConfig, GeneratorConfig, ModelConfig, DIV2K_MEAN, MODEL_CONFIG_VERSION};
pub use discriminator::Discriminator;
pub use generator::Generator;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, linear, Archive, Parameter, Scalar, Tensor};

/// Tags a numeric failure with the layer it happened in.
pub(crate) fn in_layer<V>(layer: &str, r: Result<V>) -> Result<V> {
    r.map_err(|e| match e {
        Error::Numeric(op) => Error::Numeric(format!("layer {layer} ({op})")),
        other => other,
    })
}

/// Fan-in scaled normal initialisation.
pub(crate) fn kaiming<T: Scalar>(n: usize, fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| T::from_f64(normal.sample(rng))).collect()
}

/// `U(-1/√fan_in, 1/√fan_in)`, the common framework default for conv
/// layers.
pub(crate) fn uniform_fan_in<T: Scalar>(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let u = Uniform::new_inclusive(-bound, bound);
    (0..n).map(|_| T::from_f64(u.sample(rng))).collect()
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct Conv<T: Scalar> {
    pub name: String,
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv<T> {
    pub(crate) fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        Ok(Conv {
            name: name.to_string(),
            weight: Parameter::new(
                format!("{name}.weight"),
                &[cout, cin, kernel, kernel],
                kaiming(cout * fan_in, fan_in, gain, rng),
            )?,
            bias: Parameter::new(format!("{name}.bias"), &[cout], vec![T::zero(); cout])?,
            stride,
            padding: kernel / 2,
        })
    }

    /// Weights and biases drawn from [`uniform_fan_in`].
    pub(crate) fn new_uniform(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        Ok(Conv {
            name: name.to_string(),
            weight: Parameter::new(
                format!("{name}.weight"),
                &[cout, cin, kernel, kernel],
                uniform_fan_in(cout * fan_in, fan_in, rng),
            )?,
            bias: Parameter::new(format!("{name}.bias"), &[cout], uniform_fan_in(cout, fan_in, rng))?,
            stride: 1,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, track: bool) -> Result<Tensor<T>> {
        in_layer(
            &self.name,
            conv2d(
                x,
                &self.weight.value(track),
                Some(&self.bias.value(track)),
                self.stride,
                self.padding,
            ),
        )
    }

    pub(crate) fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub name: String,
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Dense<T> {
    pub(crate) fn new(name: &str, inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Dense {
            name: name.to_string(),
            weight: Parameter::new(
                format!("{name}.weight"),
                &[outputs, inputs],
                kaiming(outputs * inputs, inputs, gain, rng),
            )?,
            bias: Parameter::new(format!("{name}.bias"), &[outputs], vec![T::zero(); outputs])?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, track: bool) -> Result<Tensor<T>> {
        in_layer(
            &self.name,
            linear(x, &self.weight.value(track), &self.bias.value(track)),
        )
    }

    pub(crate) fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Writes parameter values into an archive.
pub(crate) fn export_params<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a Parameter<T>>,
    archive: &mut Archive,
) {
    for p in params {
        archive.push(p.name.clone(), p.shape(), p.data());
    }
}

/// Restores parameter values by name; the archive must hold exactly the
/// model's parameter set with matching shapes.
pub(crate) fn import_params<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    archive: &Archive,
    prefix: &str,
) -> Result<()> {
    let mut params: Vec<&mut Parameter<T>> = params.into_iter().collect();
    let mut staged = Vec::with_capacity(params.len());
    for p in &params {
        staged.push(archive.expect::<T>(&p.name, p.shape())?);
    }
    if let Some(extra) = archive
        .entries
        .iter()
        .filter(|e| e.name.starts_with(prefix))
        .find(|e| !params.iter().any(|p| p.name == e.name))
    {
        return Err(Error::Checkpoint(format!(
            "entry {} is not a parameter of this model",
            extra.name
        )));
    }
    for (p, data) in params.iter_mut().zip(staged) {
        p.set_data(data)?;
    }
    Ok(())
}
