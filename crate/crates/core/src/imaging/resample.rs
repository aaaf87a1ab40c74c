use super::Image;
use crate::error::{Error, Result};

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Input indices and normalised weights contributing to one output sample.
#[derive(Debug, Clone)]
pub struct Taps {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Per-output-sample taps for resizing an axis of `input` samples to
/// `output`. Downscaling stretches the kernel by the scale factor
/// (antialiasing); out-of-range taps replicate the edge sample.
pub fn resample_weights(input: usize, output: usize) -> Vec<Taps> {
    let scale = output as f64 / input as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let half_width = 2.0 / stretch;
    (0..output)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let first = (center - half_width).floor() as isize;
            let last = (center + half_width).ceil() as isize;
            let mut indices = Vec::new();
            let mut weights: Vec<f64> = Vec::new();
            for j in first..=last {
                let w = stretch * cubic_kernel(stretch * (center - j as f64));
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, input as isize - 1) as usize;
                match indices.iter().position(|&k| k == idx) {
                    Some(p) => weights[p] += w,
                    None => {
                        indices.push(idx);
                        weights.push(w);
                    }
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Taps { indices, weights }
        })
        .collect()
}

pub(crate) fn resize_plane(p: &[f64], h: usize, w: usize, rows: &[Taps], cols: &[Taps]) -> Vec<f64> {
    let (ho, wo) = (rows.len(), cols.len());
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        let line = &p[y * w..(y + 1) * w];
        for (x, t) in cols.iter().enumerate() {
            tmp[y * wo + x] = t.indices.iter().zip(&t.weights).map(|(&i, &k)| k * line[i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for (y, t) in rows.iter().enumerate() {
        for x in 0..wo {
            out[y * wo + x] = t
                .indices
                .iter()
                .zip(&t.weights)
                .map(|(&i, &k)| k * tmp[i * wo + x])
                .sum();
        }
    }
    out
}

fn resize(image: &Image, height: usize, width: usize) -> Result<Image> {
    let rows = resample_weights(image.height(), height);
    let cols = resample_weights(image.width(), width);
    let (h, w) = (image.height(), image.width());
    let mut out = image.map_planes(height, width, |p| resize_plane(p, h, w, &rows, &cols))?;
    out.source = image.source.clone();
    Ok(out)
}

/// The ×α bicubic degradation with antialiasing; output clamped to `[0, 1]`.
pub fn bicubic_downsample(image: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || image.height() % factor != 0 || image.width() % factor != 0 {
        return Err(Error::usage(format!(
            "{}x{} image is not divisible by scale factor {factor}",
            image.height(),
            image.width()
        )));
    }
    resize(image, image.height() / factor, image.width() / factor)
}

/// Plain bicubic interpolation by an integer factor (no antialias).
pub fn bicubic_upsample(image: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::usage("scale factor must be positive"));
    }
    resize(image, image.height() * factor, image.width() * factor)
}

pub fn nearest_upsample(image: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::usage("scale factor must be positive"));
    }
    let (h, w) = (image.height(), image.width());
    let (ho, wo) = (h * factor, w * factor);
    image.map_planes(ho, wo, |p| {
        (0..ho * wo)
            .map(|i| p[(i / wo / factor) * w + (i % wo) / factor])
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for k in 0..20 {
            let t = k as f64 / 20.0;
            let s: f64 = (-2..=2).map(|j| cubic_kernel(t - j as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one_everywhere() {
        for &(i, o) in &[(192, 48), (48, 192), (8, 2), (7, 21)] {
            for t in resample_weights(i, o) {
                assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn patch_geometry() {
        let img = Image::constant(192, 192, 3, 0.3).unwrap();
        let lr = bicubic_downsample(&img, 4).unwrap();
        assert_eq!((lr.height(), lr.width()), (48, 48));
        let up = bicubic_upsample(&lr, 4).unwrap();
        assert_eq!((up.height(), up.width()), (192, 192));
    }

    #[test]
    fn constants_are_preserved() {
        let img = Image::constant(16, 12, 3, 0.731).unwrap();
        for out in [bicubic_downsample(&img, 4).unwrap(), bicubic_upsample(&img, 3).unwrap()] {
            assert!(out.data().iter().all(|v| (v - 0.731).abs() < 1e-14));
        }
    }

    #[test]
    fn indivisible_extent_rejected() {
        let img = Image::constant(10, 12, 1, 0.5).unwrap();
        assert!(matches!(bicubic_downsample(&img, 4), Err(Error::Usage(_))));
    }
}
