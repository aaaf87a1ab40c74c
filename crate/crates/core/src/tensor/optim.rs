use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor plus its ADAM state.
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    value: Tensor<T>,
    pub(crate) first_moment: Vec<T>,
    pub(crate) second_moment: Vec<T>,
    pub(crate) step: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Self> {
        let value = Tensor::parameter(shape, data)?;
        let n = value.numel();
        Ok(Parameter {
            name: name.into(),
            value,
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            step: 0,
        })
    }

    /// The graph leaf. Gradients from `backward` land here.
    pub fn tensor(&self) -> &Tensor<T> {
        &self.value
    }

    /// A copy that does not track gradients, for frozen use.
    pub fn frozen(&self) -> Tensor<T> {
        self.value.detach()
    }

    /// Either the tracked leaf or a frozen copy.
    pub fn value(&self, track: bool) -> Tensor<T> {
        if track {
            self.value.clone()
        } else {
            self.frozen()
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.value.grad()
    }

    pub fn zero_grad(&self) {
        self.value.zero_grad();
    }

    /// Replaces the value (dropping any gradient) and keeps optimizer state.
    pub fn set_data(&mut self, data: Vec<T>) -> Result<()> {
        let shape = self.value.shape().to_vec();
        self.value = Tensor::parameter(&shape, data)?;
        Ok(())
    }

    /// Substitutes an existing tensor of the same shape as the value, so
    /// gradients flow to that tensor. Used to probe gradients externally.
    pub fn set_tensor(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::config(
                "set_tensor",
                format!("{} has shape {:?}, got {:?}", self.name, self.value.shape(), value.shape()),
            ));
        }
        self.value = value;
        Ok(())
    }

    pub(crate) fn restore_state(&mut self, m: Vec<T>, v: Vec<T>, step: u64) -> Result<()> {
        if m.len() != self.value.numel() || v.len() != self.value.numel() {
            return Err(Error::Checkpoint(format!(
                "optimizer state for {} has wrong length",
                self.name
            )));
        }
        self.first_moment = m;
        self.second_moment = v;
        self.step = step;
        Ok(())
    }
}

/// Bias-corrected ADAM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Self::default() }
    }

    /// Applies one update to every parameter and clears their gradients.
    /// Fails before touching anything if a gradient is missing.
    pub fn step<'a, T: Scalar>(
        &self,
        params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    ) -> Result<()> {
        let mut params: Vec<&mut Parameter<T>> = params.into_iter().collect();
        let mut grads = Vec::with_capacity(params.len());
        for p in &params {
            match p.grad() {
                Some(g) => grads.push(g),
                None => {
                    return Err(Error::usage(format!(
                        "parameter {} has no gradient",
                        p.name
                    )))
                }
            }
        }
        for (p, g) in params.iter_mut().zip(grads) {
            self.update(p, &g)?;
        }
        Ok(())
    }

    fn update<T: Scalar>(&self, p: &mut Parameter<T>, grad: &[T]) -> Result<()> {
        p.step += 1;
        let t = p.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut data = p.value.to_vec();
        for i in 0..data.len() {
            let g = grad[i].as_f64();
            let m = b1 * p.first_moment[i].as_f64() + (1.0 - b1) * g;
            let v = b2 * p.second_moment[i].as_f64() + (1.0 - b2) * g * g;
            p.first_moment[i] = T::from_f64(m);
            p.second_moment[i] = T::from_f64(v);
            let m_hat = m / c1;
            let v_hat = v / c2;
            data[i] = T::from_f64(data[i].as_f64() - self.lr * m_hat / (v_hat.sqrt() + self.eps));
        }
        p.set_data(data)
            .map_err(|_| Error::Numeric(format!("adam update of {}", p.name)))
    }
}
