use epsr_core::imaging::{
    bicubic_downsample, bicubic_upsample, cubic_kernel, nearest_upsample, rgb_to_y, synth,
};
use epsr_core::Image;
use proptest::prelude::*;

/// Dense resampling matrix: every virtual sample position on a wide
/// neighbourhood contributes its kernel weight to the clamped source index.
fn dense_matrix(input: usize, output: usize) -> Vec<Vec<f64>> {
    let scale = output as f64 / input as f64;
    let stretch = scale.min(1.0);
    let reach = input as isize * 2 + 16;
    (0..output)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let mut row = vec![0.0; input];
            for p in -reach..reach {
                let w = stretch * cubic_kernel(stretch * (center - p as f64));
                row[p.clamp(0, input as isize - 1) as usize] += w;
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            row
        })
        .collect()
}

fn dense_resize(img: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let (mr, mc) = (dense_matrix(h, ho), dense_matrix(w, wo));
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for sy in 0..h {
                for sx in 0..w {
                    acc += mr[y][sy] * mc[x][sx] * img[sy * w + sx];
                }
            }
            out[y * wo + x] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

fn ramp(h: usize, w: usize) -> Image {
    let data = (0..h * w).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
    Image::new(h, w, 1, data).unwrap()
}

#[test]
fn downsample_ramp_matches_dense_oracle() {
    let img = ramp(8, 8);
    let out = bicubic_downsample(&img, 4).unwrap();
    let expected = dense_resize(img.data(), 8, 8, 2, 2);
    for (a, e) in out.data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
}

#[test]
fn upsample_ramp_matches_dense_oracle() {
    let img = ramp(6, 5);
    let out = bicubic_upsample(&img, 4).unwrap();
    let expected = dense_resize(img.data(), 6, 5, 24, 20);
    for (a, e) in out.data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
}

#[test]
fn textured_downsample_matches_dense_oracle() {
    let img = synth::natural_image(16, 12, 1, 4);
    let out = bicubic_downsample(&img, 4).unwrap();
    let expected = dense_resize(img.data(), 16, 12, 4, 3);
    for (a, e) in out.data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-9);
    }
}

fn rmse(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    (a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn bicubic_beats_nearest_on_smooth_images() {
    let (h, w) = (64, 64);
    let data = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.5 + 0.3 * (x / 11.0).sin() * (y / 9.0).cos()
        })
        .collect();
    let img = Image::new(h, w, 1, data).unwrap();
    let lr = bicubic_downsample(&img, 4).unwrap();
    let cubic = bicubic_upsample(&lr, 4).unwrap();
    let nearest = nearest_upsample(&lr, 4).unwrap();
    assert!(rmse(&cubic, &img) < rmse(&nearest, &img));
}

proptest! {
    #[test]
    fn downsample_preserves_constants(v in 0.0f64..=1.0, k in 1usize..4, f in 1usize..5) {
        let img = Image::constant(4 * k * f, 4 * f, 3, v).unwrap();
        let out = bicubic_downsample(&img, f).unwrap();
        prop_assert!(out.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn luma_stays_in_studio_range(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let mut data = vec![r; 4];
        data.extend(vec![g; 4]);
        data.extend(vec![b; 4]);
        let y = rgb_to_y(&Image::new(2, 2, 3, data).unwrap()).unwrap();
        prop_assert!(y.data().iter().all(|v| *v >= 16.0 / 255.0 - 1e-12 && *v <= 235.0 / 255.0 + 1e-12));
    }
}
