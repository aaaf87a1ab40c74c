use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::function::gamma::gamma;

use super::gaussian_taps;
use crate::error::{Error, Result};
use crate::imaging::{resample_weights, resize_plane, rgb_to_y, Image};
use crate::tensor::Archive;

/// Two scales of 2 MSCN + 4×4 pairwise-product statistics.
pub const NIQE_FEATURES: usize = 36;
const PER_SCALE: usize = 18;
const MSCN_WINDOW: usize = 7;
const MSCN_SIGMA: f64 = 7.0 / 6.0;
const MSCN_C: f64 = 1.0;
/// Patches with mean local variance at or below this never count as sharp.
const FLAT_VARIANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NiqeParams {
    pub patch_size: usize,
    /// Sharpness percentile a pristine patch must reach to be kept.
    pub sharpness_percentile: f64,
}

impl Default for NiqeParams {
    fn default() -> Self {
        NiqeParams {
            patch_size: 96,
            sharpness_percentile: 0.75,
        }
    }
}

/// Multivariate Gaussian over pristine patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    /// Row-major `NIQE_FEATURES × NIQE_FEATURES`.
    pub cov: Vec<f64>,
    pub params: NiqeParams,
    pub patches_used: usize,
}

/// Grid for the moment-ratio inversion, shape 0.2..10 by 0.001.
fn shape_grid() -> &'static [(f64, f64, f64)] {
    static GRID: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    GRID.get_or_init(|| {
        (0..=9800)
            .map(|i| {
                let a = 0.2 + i as f64 * 0.001;
                let (g1, g2, g3) = (gamma(1.0 / a), gamma(2.0 / a), gamma(3.0 / a));
                // (GGD ratio E[x²]/E[|x|]², its reciprocal for AGGD)
                (a, g1 * g3 / (g2 * g2), g2 * g2 / (g1 * g3))
            })
            .collect()
    })
}

fn invert_ratio(target: f64, pick: impl Fn(&(f64, f64, f64)) -> f64) -> f64 {
    shape_grid()
        .iter()
        .min_by(|a, b| (pick(a) - target).abs().total_cmp(&(pick(b) - target).abs()))
        .expect("non-empty grid")
        .0
}

/// Zero-mean generalized Gaussian fit by moment matching: `(shape, variance)`.
pub fn ggd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let e_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if e_abs == 0.0 {
        return (f64::NAN, 0.0);
    }
    (invert_ratio(var / (e_abs * e_abs), |g| g.1), var)
}

/// Asymmetric generalized Gaussian fit: `(shape, mean, left variance,
/// right variance)`.
pub fn aggd_fit(x: &[f64]) -> (f64, f64, f64, f64) {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    let left = if ln > 0 { (ls / ln as f64).sqrt() } else { 0.0 };
    let right = if rn > 0 { (rs / rn as f64).sqrt() } else { 0.0 };
    let n = x.len() as f64;
    let e_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let e_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    if left == 0.0 || right == 0.0 || e_sq == 0.0 {
        return (f64::NAN, 0.0, left * left, right * right);
    }
    let g = left / right;
    let r_hat = e_abs * e_abs / e_sq;
    let r_norm = r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let alpha = invert_ratio(r_norm, |g| g.2);
    // scale parameters from the one-sided standard deviations
    let k = (gamma(1.0 / alpha) / gamma(3.0 / alpha)).sqrt();
    let mean = (right - left) * k * gamma(2.0 / alpha) / gamma(1.0 / alpha);
    (alpha, mean, left * left, right * right)
}

/// Separable filter with edge replication, output the same size.
fn filter_same(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * p[y * w + (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(y as isize + i as isize - r).clamp(0, h as isize - 1) as usize * w + x])
                .sum();
        }
    }
    out
}

/// Mean-subtracted contrast-normalised coefficients of a 0..255 plane,
/// plus the local variance map.
pub fn mscn(p: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let k = gaussian_taps(MSCN_WINDOW, MSCN_SIGMA);
    let mu = filter_same(p, h, w, &k);
    let sq: Vec<f64> = p.iter().map(|v| v * v).collect();
    let mu2 = filter_same(&sq, h, w, &k);
    let var: Vec<f64> = mu2.iter().zip(&mu).map(|(s, m)| (s - m * m).abs()).collect();
    let coeffs = p
        .iter()
        .zip(&mu)
        .zip(&var)
        .map(|((v, m), s)| (v - m) / (s.sqrt() + MSCN_C))
        .collect();
    (coeffs, var)
}

fn block_features(c: &[f64], w: usize, top: usize, left: usize, size: usize, out: &mut Vec<f64>) {
    let at = |y: usize, x: usize| c[(top + y) * w + left + x];
    let block: Vec<f64> = (0..size).flat_map(|y| (0..size).map(move |x| (y, x))).map(|(y, x)| at(y, x)).collect();
    let (alpha, var) = ggd_fit(&block);
    out.push(alpha);
    out.push(var);
    for (dy, dx) in [(0isize, 1isize), (1, 0), (1, 1), (1, -1)] {
        let mut prod = Vec::with_capacity(size * size);
        for y in 0..size as isize {
            for x in 0..size as isize {
                let (yy, xx) = (y + dy, x + dx);
                if yy < size as isize && xx >= 0 && xx < size as isize {
                    prod.push(at(y as usize, x as usize) * at(yy as usize, xx as usize));
                }
            }
        }
        let (a, m, l, r) = aggd_fit(&prod);
        out.extend([a, m, l, r]);
    }
}

/// Per-patch 36-dim features and sharpness (mean local variance at the
/// first scale) for a luma plane in `[0, 1]`.
pub fn niqe_features(luma: &Image, patch: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if luma.channels() != 1 {
        return Err(Error::usage("NIQE features need a single-channel luma image"));
    }
    if patch < 4 || patch % 2 != 0 {
        return Err(Error::usage(format!("NIQE patch size {patch} must be even and at least 4")));
    }
    let (rows, cols) = (luma.height() / patch, luma.width() / patch);
    if rows == 0 || cols == 0 {
        return Err(Error::usage(format!(
            "{}x{} image holds no {patch}x{patch} patch",
            luma.height(),
            luma.width()
        )));
    }
    let (h, w) = (rows * patch, cols * patch);
    let p0: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| 255.0 * luma.at(0, y, x))
        .collect();
    let (h1, w1) = (h / 2, w / 2);
    let p1 = resize_plane(&p0, h, w, &resample_weights(h, h1), &resample_weights(w, w1));

    let (c0, var0) = mscn(&p0, h, w);
    let (c1, _) = mscn(&p1, h1, w1);
    let mut feats = Vec::with_capacity(rows * cols);
    let mut sharp = Vec::with_capacity(rows * cols);
    for by in 0..rows {
        for bx in 0..cols {
            let mut f = Vec::with_capacity(NIQE_FEATURES);
            block_features(&c0, w, by * patch, bx * patch, patch, &mut f);
            block_features(&c1, w1, by * patch / 2, bx * patch / 2, patch / 2, &mut f);
            debug_assert_eq!(f.len(), 2 * PER_SCALE);
            let mut s = 0.0;
            for y in 0..patch {
                for x in 0..patch {
                    s += var0[(by * patch + y) * w + bx * patch + x];
                }
            }
            feats.push(f);
            sharp.push(s / (patch * patch) as f64);
        }
    }
    Ok((feats, sharp))
}

fn gaussian_fit(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = NIQE_FEATURES;
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    (mean, cov)
}

fn to_luma(img: &Image) -> Result<Image> {
    if img.channels() == 1 {
        Ok(img.clone())
    } else {
        rgb_to_y(img)
    }
}

fn finite_rows(feats: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    feats.into_iter().filter(|f| f.iter().all(|v| v.is_finite())).collect()
}

/// Fits the pristine model on the sharpest patches of `images`.
pub fn niqe_fit(images: &[Image], params: NiqeParams) -> Result<NiqeModel> {
    if images.len() < 10 {
        return Err(Error::usage(format!(
            "NIQE fitting needs at least 10 images, got {}",
            images.len()
        )));
    }
    let p = params.patch_size;
    let mut all = Vec::new();
    let mut sharpness = Vec::new();
    for img in images {
        if img.height() < 2 * p || img.width() < 2 * p {
            return Err(Error::usage(format!(
                "{}x{} image is smaller than twice the {p}-pixel NIQE patch",
                img.height(),
                img.width()
            )));
        }
        let (f, s) = niqe_features(&to_luma(img)?, p)?;
        all.extend(f);
        sharpness.extend(s);
    }
    let mut sorted = sharpness.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * params.sharpness_percentile).round() as usize;
    let threshold = sorted[idx].max(FLAT_VARIANCE);
    let kept: Vec<Vec<f64>> = all
        .into_iter()
        .zip(&sharpness)
        .filter(|(_, &s)| s >= threshold)
        .map(|(f, _)| f)
        .collect();
    let kept = finite_rows(kept);
    if kept.len() < 2 {
        return Err(Error::Fit(format!(
            "only {} of {} patches are sharp enough to fit a NIQE model",
            kept.len(),
            sharpness.len()
        )));
    }
    let (mean, cov) = gaussian_fit(&kept);
    Ok(NiqeModel {
        mean,
        cov,
        params,
        patches_used: kept.len(),
    })
}

/// Distance between the model and the test image's own feature Gaussian.
pub fn niqe_score(img: &Image, model: &NiqeModel) -> Result<f64> {
    let p = model.params.patch_size;
    if img.height() < 2 * p || img.width() < 2 * p {
        return Err(Error::usage(format!(
            "{}x{} image is smaller than twice the {p}-pixel NIQE patch",
            img.height(),
            img.width()
        )));
    }
    let (feats, _) = niqe_features(&to_luma(img)?, p)?;
    let feats = finite_rows(feats);
    if feats.len() < 2 {
        return Err(Error::Fit(format!(
            "test image yields {} usable NIQE patches; at least 2 are needed",
            feats.len()
        )));
    }
    let (mean, cov) = gaussian_fit(&feats);
    Ok(model.distance(&mean, &cov))
}

impl NiqeModel {
    /// `sqrt((ν1−ν2)ᵀ ((Σ1+Σ2)/2)⁺ (ν1−ν2))`.
    pub fn distance(&self, mean: &[f64], cov: &[f64]) -> f64 {
        let d = NIQE_FEATURES;
        let pooled = DMatrix::from_fn(d, d, |i, j| 0.5 * (self.cov[i * d + j] + cov[i * d + j]));
        let diff = DVector::from_fn(d, |i, _| self.mean[i] - mean[i]);
        let pinv = pooled.pseudo_inverse(1e-12).expect("non-negative epsilon");
        (diff.transpose() * pinv * &diff)[(0, 0)].max(0.0).sqrt()
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.push("mean", &[NIQE_FEATURES], &self.mean);
        a.push("cov", &[NIQE_FEATURES, NIQE_FEATURES], &self.cov);
        a.metadata = json!({
            "kind": "niqe_model",
            "patch_size": self.params.patch_size,
            "threshold": self.params.sharpness_percentile,
            "scales": 2,
            "patches_used": self.patches_used,
        });
        a
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let a = Archive::load(path)?;
        let m = &a.metadata;
        if m["scales"].as_u64() != Some(2) {
            return Err(Error::Checkpoint(format!("NIQE model must have 2 scales, manifest says {}", m["scales"])));
        }
        let patch_size = m["patch_size"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("NIQE model manifest lacks patch_size".into()))? as usize;
        let threshold = m["threshold"].as_f64().unwrap_or(0.75);
        let model = NiqeModel {
            mean: a.expect("mean", &[NIQE_FEATURES])?,
            cov: a.expect("cov", &[NIQE_FEATURES, NIQE_FEATURES])?,
            params: NiqeParams {
                patch_size,
                sharpness_percentile: threshold,
            },
            patches_used: m["patches_used"].as_u64().unwrap_or(0) as usize,
        };
        model.check()?;
        Ok(model)
    }

    /// Finite mean, symmetric covariance.
    pub fn check(&self) -> Result<()> {
        let d = NIQE_FEATURES;
        if self.mean.iter().chain(&self.cov).any(|v| !v.is_finite()) {
            return Err(Error::Fit("NIQE model has non-finite entries".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (self.cov[i * d + j] - self.cov[j * d + i]).abs() > 1e-10 {
                    return Err(Error::Fit(format!("NIQE covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}
