//! Seeded procedural images with natural-scene-like structure: smooth
//! illumination, multi-octave 1/f noise, hard-edged occluding shapes and
//! oriented periodic textures. Used as a stand-in corpus wherever real
//! photographs are unavailable.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of bilinearly interpolated lattice noise in `[-1, 1]`.
fn value_noise(h: usize, w: usize, cell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ox = rng.gen_range(0.0..cell);
    let oy = rng.gen_range(0.0..cell);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = (y as f64 + oy) / cell;
        let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..w {
            let fx = (x as f64 + ox) / cell;
            let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let v00 = lattice[iy * gw + ix];
            let v01 = lattice[iy * gw + ix + 1];
            let v10 = lattice[(iy + 1) * gw + ix];
            let v11 = lattice[(iy + 1) * gw + ix + 1];
            let top = v00 + (v01 - v00) * tx;
            let bottom = v10 + (v11 - v10) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

fn fractal_noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut acc = vec![0.0; h * w];
    let mut cell = h.max(w) as f64 / 2.0;
    let mut amp = 1.0;
    while cell >= 1.5 {
        for (a, v) in acc.iter_mut().zip(value_noise(h, w, cell, rng)) {
            *a += amp * v;
        }
        cell /= 2.0;
        amp *= 0.6;
    }
    acc
}

enum Fill {
    Flat,
    Stripes { freq: f64, angle: f64, phase: f64, amp: f64 },
}

/// Random image with values in `[0.02, 0.98]`.
pub fn natural_image(height: usize, width: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a9e_0000_0000);
    let (h, w) = (height, width);
    let n = h * w;
    let luminance = fractal_noise(h, w, &mut rng);
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(channels);
    let gx = rng.gen_range(-0.3..0.3);
    let gy = rng.gen_range(-0.3..0.3);
    for _ in 0..channels {
        let tint = rng.gen_range(0.35..0.65);
        let own = fractal_noise(h, w, &mut rng);
        let mut p = Vec::with_capacity(n);
        for i in 0..n {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            p.push(tint + gx * (x - 0.5) + gy * (y - 0.5) + 0.18 * luminance[i] + 0.06 * own[i]);
        }
        planes.push(p);
    }

    let shapes = rng.gen_range(5..12);
    let scale = h.min(w) as f64;
    for _ in 0..shapes {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let ry = rng.gen_range(0.08..0.35) * scale;
        let rx = rng.gen_range(0.08..0.35) * scale;
        let rot = rng.gen_range(0.0..PI);
        let rectangular = rng.gen_bool(0.4);
        let colour: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.05..0.95)).collect();
        let fill = if rng.gen_bool(0.5) {
            Fill::Stripes {
                freq: rng.gen_range(0.06..0.3),
                angle: rng.gen_range(0.0..PI),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: rng.gen_range(0.08..0.25),
            }
        } else {
            Fill::Flat
        };
        let (sin_r, cos_r) = rot.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let u = (dx * cos_r + dy * sin_r) / rx;
                let v = (-dx * sin_r + dy * cos_r) / ry;
                let norm = if rectangular { u.abs().max(v.abs()) } else { (u * u + v * v).sqrt() };
                // signed distance in pixels, approximately
                let dist = (norm - 1.0) * rx.min(ry);
                let alpha = (0.5 - dist).clamp(0.0, 1.0);
                if alpha == 0.0 {
                    continue;
                }
                let texture = match fill {
                    Fill::Flat => 0.0,
                    Fill::Stripes { freq, angle, phase, amp } => {
                        let t = x as f64 * angle.cos() + y as f64 * angle.sin();
                        amp * (2.0 * PI * freq * t + phase).sin()
                    }
                };
                let i = y * w + x;
                for (c, p) in planes.iter_mut().enumerate() {
                    let target = colour[c] + texture + 0.05 * luminance[i];
                    p[i] = p[i] * (1.0 - alpha) + target * alpha;
                }
            }
        }
    }

    let data = planes
        .into_iter()
        .flatten()
        .map(|v| v.clamp(0.02, 0.98))
        .collect();
    Image::new(height, width, channels, data).expect("values clamped into range")
}

/// `count` images seeded `base_seed, base_seed + 1, ...`.
pub fn corpus(count: usize, height: usize, width: usize, base_seed: u64) -> Vec<Image> {
    (0..count as u64)
        .map(|i| natural_image(height, width, 3, base_seed.wrapping_add(i)))
        .collect()
}
