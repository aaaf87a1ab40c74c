//! Brute-force metric oracles shared by the metric and acceptance tests.

use epsr_core::Image;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Image, Image) {
    let mut gen = || Image::new(h, w, 1, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap();
    (gen(), gen())
}

pub fn oracle_rmse(a: &Image, b: &Image) -> f64 {
    let mut s = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let d = 255.0 * a.at(0, y, x) - 255.0 * b.at(0, y, x);
            s += d * d;
        }
    }
    (s / (a.height() * a.width()) as f64).sqrt()
}

// Direct 2-D window sums, no separable filtering.
pub fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    let n = 11usize;
    let mut k2 = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (i, row) in k2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01 * 255.0f64).powi(2), (0.03 * 255.0f64).powi(2));
    let (ho, wo) = (a.height() - n + 1, a.width() - n + 1);
    let mut acc = 0.0;
    for y in 0..ho {
        for x in 0..wo {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let w = k2[i][j] / total;
                    let p = 255.0 * a.at(0, y + i, x + j);
                    let q = 255.0 * b.at(0, y + i, x + j);
                    mx += w * p;
                    my += w * q;
                    sxx += w * p * p;
                    syy += w * q * q;
                    sxy += w * p * q;
                }
            }
            let (vx, vy, cv) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            acc += (2.0 * mx * my + c1) * (2.0 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    acc / (ho * wo) as f64
}

/// Inverts every channel within `border` pixels of the edge.
pub fn invert_border(image: &Image, border: usize) -> Image {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut data = image.data().to_vec();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if y < border || x < border || y >= h - border || x >= w - border {
                    let i = (ch * h + y) * w + x;
                    data[i] = 1.0 - data[i];
                }
            }
        }
    }
    Image::new(h, w, c, data).unwrap()
}
