//! Full-reference distortion measures on the luma channel, NIQE and the
//! Perceptual Index, plus per-dataset reports.

mod niqe;
mod report;

pub use niqe::{aggd_fit, ggd_fit, mscn, niqe_features, niqe_fit, niqe_score, NiqeModel, NiqeParams, NIQE_FEATURES};
pub use report::{evaluate_pair, read_ma_scores, MetricReport, MetricRow};

use crate::error::{Error, Result};
use crate::imaging::{rgb_to_y, Image};

/// Pixels removed from every side before full-reference scoring.
pub const EVAL_BORDER: usize = 4;
pub const PSNR_CAP: f64 = 99.0;

fn same_extent(what: &str, a: &Image, b: &Image) -> Result<()> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::usage(format!(
            "{what}: {}x{}x{} and {}x{}x{} differ",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

fn luma(img: &Image) -> Result<Image> {
    if img.channels() == 1 {
        Ok(img.clone())
    } else {
        rgb_to_y(img)
    }
}

/// Luma of both images with a 4-pixel border removed.
pub fn eval_luma_crop(est: &Image, reference: &Image) -> Result<(Image, Image)> {
    same_extent("eval_luma_crop", est, reference)?;
    if est.height() <= 2 * EVAL_BORDER || est.width() <= 2 * EVAL_BORDER {
        return Err(Error::usage(format!(
            "{}x{} image is too small for the {EVAL_BORDER}-pixel evaluation border",
            est.height(),
            est.width()
        )));
    }
    Ok((luma(est)?.shave(EVAL_BORDER)?, luma(reference)?.shave(EVAL_BORDER)?))
}

/// Root mean squared error on the 0..255 scale.
pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    same_extent("rmse", a, b)?;
    let n = a.data().len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (255.0 * x - 255.0 * y).powi(2))
        .sum();
    Ok((sum / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// True when the images are identical and `db` holds the cap.
    pub capped: bool,
}

pub fn psnr_from_rmse(rmse: f64) -> Psnr {
    if rmse == 0.0 {
        return Psnr { db: PSNR_CAP, capped: true };
    }
    let db = 20.0 * (255.0 / rmse).log10();
    Psnr { db, capped: false }
}

pub fn psnr(a: &Image, b: &Image) -> Result<Psnr> {
    Ok(psnr_from_rmse(rmse(a, b)?))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

pub(crate) fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable correlation over the valid region only.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            tmp[y * wo + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * tmp[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian window (σ 1.5) over the valid region,
/// K1 = 0.01, K2 = 0.03, dynamic range 255. Multi-channel inputs average
/// the per-channel values.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_extent("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::usage(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let k = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let x: Vec<f64> = a.plane(c).iter().map(|v| v * 255.0).collect();
        let y: Vec<f64> = b.plane(c).iter().map(|v| v * 255.0).collect();
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&prod(&x, &x), h, w, &k);
        let syy = filter_valid(&prod(&y, &y), h, w, &k);
        let sxy = filter_valid(&prod(&x, &y), h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

/// `½((10 − ma) + niqe)`.
pub fn perceptual_index(ma: f64, niqe: f64) -> Result<f64> {
    if !ma.is_finite() || !niqe.is_finite() {
        return Err(Error::Numeric(format!("perceptual index of ma {ma}, niqe {niqe}")));
    }
    Ok(0.5 * ((10.0 - ma) + niqe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth;

    #[test]
    fn psnr_closed_forms() {
        assert!((psnr_from_rmse(1.0).db - 48.130_803_608_679_1).abs() < 1e-9);
        assert_eq!(psnr_from_rmse(255.0).db, 0.0);
        assert_eq!(psnr_from_rmse(0.0), Psnr { db: 99.0, capped: true });
    }

    #[test]
    fn uniform_offset_rmse() {
        let a = Image::constant(12, 12, 1, 0.2).unwrap();
        let b = Image::constant(12, 12, 1, 0.2 + 10.0 / 255.0).unwrap();
        assert!((rmse(&a, &b).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn crop_geometry_and_small_images() {
        let a = Image::constant(192, 192, 3, 0.4).unwrap();
        let (x, y) = eval_luma_crop(&a, &a).unwrap();
        assert_eq!((x.height(), x.width(), x.channels()), (184, 184, 1));
        assert_eq!(x, y);
        let s = Image::constant(8, 20, 3, 0.4).unwrap();
        assert!(matches!(eval_luma_crop(&s, &s), Err(Error::Usage(_))));
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = rgb_to_y(&synth::natural_image(48, 48, 3, 3)).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map_planes(48, 48, |p| p.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 0.3);
        let small = Image::constant(10, 30, 1, 0.5).unwrap();
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn pi_closed_forms() {
        assert_eq!(perceptual_index(10.0, 0.0).unwrap(), 0.0);
        assert_eq!(perceptual_index(0.0, 10.0).unwrap(), 10.0);
        assert!((perceptual_index(6.2, 3.1).unwrap() - 3.45).abs() < 1e-12);
    }
}
