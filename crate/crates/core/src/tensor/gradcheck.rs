//! Central finite-difference validation of analytic gradients.
//!
//! The numeric side only evaluates the function forward on perturbed
//! constant inputs, so it shares nothing with the backward rules it checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    /// Checks at most this many coordinates per input (all when `None`).
    pub samples_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-4,
            samples_per_input: None,
            seed: 0,
        }
    }
}

/// Comparison for one input tensor.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub input: usize,
    pub checked: usize,
    pub relative_error: f64,
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, falling back to the absolute difference when
/// both gradients vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

impl GradCheck {
    /// Compares the gradient of scalar `f` at `inputs` with central
    /// differences. `f` receives one tensor per input.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<Vec<GradReport>>
    where
        F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    {
        let leaves: Vec<Tensor<f64>> = inputs
            .iter()
            .map(|t| Tensor::parameter(t.shape(), t.to_vec()))
            .collect::<Result<_>>()?;
        let out = f(&leaves)?;
        if out.numel() != 1 {
            return Err(Error::usage("gradient check needs a scalar function"));
        }
        out.backward()?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut reports = Vec::with_capacity(inputs.len());
        for (idx, leaf) in leaves.iter().enumerate() {
            let analytic_full = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
            let n = leaf.numel();
            let coords: Vec<usize> = match self.samples_per_input {
                Some(k) if k < n => {
                    let mut c = sample(&mut rng, n, k).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..n).collect(),
            };
            let mut analytic = Vec::with_capacity(coords.len());
            let mut numeric = Vec::with_capacity(coords.len());
            for &j in &coords {
                let eval = |delta: f64| -> Result<f64> {
                    let perturbed: Vec<Tensor<f64>> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let mut v = t.to_vec();
                            if i == idx {
                                v[j] += delta;
                            }
                            Tensor::from_vec(t.shape(), v)
                        })
                        .collect::<Result<_>>()?;
                    f(&perturbed)?.item()
                };
                let plus = eval(self.step)?;
                let minus = eval(-self.step)?;
                numeric.push((plus - minus) / (2.0 * self.step));
                analytic.push(analytic_full[j]);
            }
            reports.push(GradReport {
                input: idx,
                checked: coords.len(),
                relative_error: relative_error(&analytic, &numeric),
            });
        }
        Ok(reports)
    }

    /// Largest relative error over all inputs.
    pub fn max_error<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<f64>
    where
        F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    {
        Ok(self
            .run(inputs, f)?
            .iter()
            .map(|r| r.relative_error)
            .fold(0.0, f64::max))
    }
}
