//! Reconstruction, perceptual and adversarial objectives.

mod extractor;

pub use extractor::{ExtractorConfig, FeatureExtractor, WeightSource};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Clip applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-7;

/// Nonnegative weights of the perceptual, reconstruction and adversarial
/// terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::MSE_ONLY
    }
}

impl LossWeights {
    pub const MSE_ONLY: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 1.0,
        lambda3: 0.0,
    };

    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = LossWeights { lambda1, lambda2, lambda3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("loss weights", format!("{all:?} must be finite and nonnegative")));
        }
        if all.iter().all(|&v| v == 0.0) {
            return Err(Error::config("loss weights", "at least one weight must be positive"));
        }
        Ok(())
    }
}

fn check_same<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::usage(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_probabilities<T: Scalar>(what: &str, p: &Tensor<T>) -> Result<()> {
    if let Some(v) = p
        .data()
        .iter()
        .find(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0))
    {
        return Err(Error::Numeric(format!("{what}: discriminator output {v} outside (0, 1)")));
    }
    Ok(())
}

fn check_finite<T: Scalar>(what: &str, z: &Tensor<T>) -> Result<()> {
    if let Some(v) = z.data().iter().find(|v| !v.as_f64().is_finite()) {
        return Err(Error::Numeric(format!("{what}: discriminator score {v} is not finite")));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse_loss<T: Scalar>(est: &Tensor<T>, hr: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("mse_loss", est, hr)?;
    est.mse(hr)
}

/// Mean squared feature difference; `hr` is treated as a constant.
pub fn perceptual_loss<T: Scalar>(
    est: &Tensor<T>,
    hr: &Tensor<T>,
    phi: &FeatureExtractor<T>,
) -> Result<Tensor<T>> {
    check_same("perceptual_loss", est, hr)?;
    let target = phi.features(&hr.detach())?;
    phi.features(est)?.mse(&target)
}

/// Batch mean of `-ln D(G(x))`.
pub fn adversarial_gen_loss<T: Scalar>(d_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_probabilities("adversarial_gen_loss", d_out)?;
    d_out.neg_log_clipped(LOG_EPS)?.mean()
}

/// Batch mean of `-ln D(real) - ln(1 - D(fake))`.
pub fn discriminator_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("discriminator_loss", d_real, d_fake)?;
    check_probabilities("discriminator_loss", d_real)?;
    check_probabilities("discriminator_loss", d_fake)?;
    d_real
        .neg_log_clipped(LOG_EPS)?
        .add(&d_fake.neg_log1m_clipped(LOG_EPS)?)?
        .mean()
}

/// `adversarial_gen_loss` computed from D's pre-sigmoid scores. Used in
/// training: a saturated D still passes gradient to G.
pub fn adversarial_gen_loss_logits<T: Scalar>(d_logits: &Tensor<T>) -> Result<Tensor<T>> {
    check_finite("adversarial_gen_loss_logits", d_logits)?;
    d_logits.neg_log_sigmoid_clipped(LOG_EPS)?.mean()
}

/// `discriminator_loss` computed from pre-sigmoid scores.
pub fn discriminator_loss_logits<T: Scalar>(real_logits: &Tensor<T>, fake_logits: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("discriminator_loss_logits", real_logits, fake_logits)?;
    check_finite("discriminator_loss_logits", real_logits)?;
    check_finite("discriminator_loss_logits", fake_logits)?;
    real_logits
        .neg_log_sigmoid_clipped(LOG_EPS)?
        .add(&fake_logits.neg_log1m_sigmoid_clipped(LOG_EPS)?)?
        .mean()
}

/// Unweighted terms; a term whose weight is zero is not evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_vgg: Option<f64>,
    pub l_e: Option<f64>,
    pub l_adv: Option<f64>,
    pub l_total: f64,
}

/// `λ1·L_vgg + λ2·L_e + λ3·L_adv`. `d_logits` are the discriminator's
/// pre-sigmoid scores on `est`, needed only when `λ3 > 0`; `phi` only when
/// `λ1 > 0`.
pub fn composite_loss<T: Scalar>(
    est: &Tensor<T>,
    hr: &Tensor<T>,
    d_logits: Option<&Tensor<T>>,
    weights: &LossWeights,
    phi: Option<&FeatureExtractor<T>>,
) -> Result<(Tensor<T>, LossBreakdown)> {
    weights.validate()?;
    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Tensor<T>> = None;
    let mut accumulate = |term: Tensor<T>, w: f64| -> Result<()> {
        let weighted = term.scale(w)?;
        total = Some(match total.take() {
            Some(t) => t.add(&weighted)?,
            None => weighted,
        });
        Ok(())
    };
    if weights.lambda1 > 0.0 {
        let phi = phi.ok_or_else(|| Error::usage("lambda1 > 0 needs a feature extractor"))?;
        let l = perceptual_loss(est, hr, phi)?;
        breakdown.l_vgg = Some(l.item()?.as_f64());
        accumulate(l, weights.lambda1)?;
    }
    if weights.lambda2 > 0.0 {
        let l = mse_loss(est, hr)?;
        breakdown.l_e = Some(l.item()?.as_f64());
        accumulate(l, weights.lambda2)?;
    }
    if weights.lambda3 > 0.0 {
        let d = d_logits.ok_or_else(|| Error::usage("lambda3 > 0 needs discriminator output"))?;
        let l = adversarial_gen_loss_logits(d)?;
        breakdown.l_adv = Some(l.item()?.as_f64());
        accumulate(l, weights.lambda3)?;
    }
    let total = total.expect("validated weights have a positive entry");
    breakdown.l_total = total.item()?.as_f64();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn logit_forms_match_probability_forms() {
        for z in [-30.0, -3.0, -0.2, 0.0, 0.7, 4.0, 30.0] {
            let p = 1.0 / (1.0 + (-z as f64).exp());
            let a = adversarial_gen_loss_logits(&t(&[z])).unwrap().item().unwrap();
            let b = adversarial_gen_loss(&t(&[p])).unwrap().item().unwrap();
            assert!((a - b).abs() < 1e-9, "{z}: {a} vs {b}");
            let a = discriminator_loss_logits(&t(&[z]), &t(&[-z / 2.0])).unwrap().item().unwrap();
            let q = 1.0 / (1.0 + (z / 2.0).exp());
            let b = discriminator_loss(&t(&[p]), &t(&[q])).unwrap().item().unwrap();
            assert!((a - b).abs() < 1e-9, "{z}: {a} vs {b}");
        }
        // saturated D: fake scored as certainly real still has a unit gradient
        let z = Tensor::<f64>::parameter(&[1, 1], vec![40.0]).unwrap();
        let r = Tensor::<f64>::from_vec(&[1, 1], vec![40.0]).unwrap();
        discriminator_loss_logits(&r, &z).unwrap().backward().unwrap();
        assert!((z.grad().unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_closed_forms() {
        let l = |p: f64| adversarial_gen_loss(&t(&[p])).unwrap().item().unwrap();
        assert!(l(1.0) < 1e-6);
        assert!((l(0.5) - 2f64.ln()).abs() < 1e-12);
        assert!((l((-1f64).exp()) - 1.0).abs() < 1e-12);
        assert!(matches!(adversarial_gen_loss(&t(&[1.5])), Err(Error::Numeric(_))));
    }

    #[test]
    fn discriminator_closed_forms() {
        let l = |r: f64, f: f64| discriminator_loss(&t(&[r]), &t(&[f])).unwrap().item().unwrap();
        assert!((l(0.5, 0.5) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(l(1.0, 0.0) < 1e-6);
        assert!((l(0.9, 0.1) + 2.0 * 0.9f64.ln()).abs() < 1e-12);
        assert!(discriminator_loss(&t(&[0.5, 0.5]), &t(&[0.5])).is_err());
    }

    #[test]
    fn mse_closed_forms() {
        let a = Tensor::from_vec(&[1, 3, 2, 2], (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap().item().unwrap(), 0.0);
        let b = a.add_channel(&[0.25; 3]).unwrap();
        assert!((mse_loss(&a, &b).unwrap().item().unwrap() - 0.0625).abs() < 1e-15);
        let err = mse_loss(&a, &Tensor::zeros(&[1, 3, 2, 1])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        assert!(LossWeights::new(1.0, 0.05, 0.4).is_ok());
    }

    #[test]
    fn missing_inputs_for_active_terms() {
        let a = Tensor::<f64>::full(&[1, 3, 4, 4], 0.2);
        let w = LossWeights::new(0.0, 1.0, 0.5).unwrap();
        assert!(matches!(composite_loss(&a, &a, None, &w, None), Err(Error::Usage(_))));
        let w = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        assert!(matches!(composite_loss(&a, &a, None, &w, None), Err(Error::Usage(_))));
    }
}
