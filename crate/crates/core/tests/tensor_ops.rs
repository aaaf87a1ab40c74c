use epsr_core::tensor::gradcheck::GradCheck;
use epsr_core::tensor::{conv2d, linear, max_pool2d, pixel_shuffle, pixel_unshuffle, Adam, Parameter};
use epsr_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct nested-loop cross-correlation with zero padding.
fn conv_oracle(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [o, _, k, _] = ws;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for bn in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x[((bn * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bn * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, o, ho, wo])
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[2, 3, 5, 5], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let y = conv2d(&x, &w, Some(&b), 2, 1).unwrap();
    let (expected, shape) = conv_oracle(x.data(), [2, 3, 5, 5], w.data(), [4, 3, 3, 3], b.data(), 2, 1);
    assert_eq!(y.shape(), &shape);
    assert_eq!(shape, [2, 4, 3, 3]);
    for (a, e) in y.data().iter().zip(&expected) {
        assert!((a - e).abs() <= 1e-6 * e.abs().max(1e-12), "{a} vs {e}");
    }
}

#[test]
fn conv_f32_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[1, 4, 7, 6], &mut rng);
    let w = random(&[5, 4, 3, 3], &mut rng);
    let b = random(&[5], &mut rng);
    let xf = Tensor::<f32>::from_vec(x.shape(), x.data().iter().map(|&v| v as f32).collect()).unwrap();
    let wf = Tensor::<f32>::from_vec(w.shape(), w.data().iter().map(|&v| v as f32).collect()).unwrap();
    let bf = Tensor::<f32>::from_vec(b.shape(), b.data().iter().map(|&v| v as f32).collect()).unwrap();
    let y = conv2d(&xf, &wf, Some(&bf), 1, 1).unwrap();
    let (expected, _) = conv_oracle(x.data(), [1, 4, 7, 6], w.data(), [5, 4, 3, 3], b.data(), 1, 1);
    for (a, e) in y.data().iter().zip(&expected) {
        assert!((*a as f64 - e).abs() < 1e-5);
    }
}

fn assert_grad_ok(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> epsr_core::Result<Tensor<f64>>) {
    let err = GradCheck::default().max_error(inputs, f).unwrap();
    assert!(err < 1e-4, "relative gradient error {err}");
}

#[test]
fn gradcheck_conv_all_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(stride, pad) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
        let x = random(&[2, 2, 5, 4], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let probe = random(&[2, 3, 5, 4], &mut rng);
        assert_grad_ok(&[x, w, b], |t| {
            let y = conv2d(&t[0], &t[1], Some(&t[2]), stride, pad)?;
            // random linear probe so every output coordinate matters
            let p = Tensor::from_vec(y.shape(), probe.data()[..y.numel()].to_vec())?;
            y.mul(&p)?.sum()
        });
    }
}

#[test]
fn gradcheck_elementwise_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&[2, 3, 2, 2], &mut rng);
    let b = random(&[2, 3, 2, 2], &mut rng);
    assert_grad_ok(&[a.clone(), b.clone()], |t| t[0].add(&t[1])?.mean_square());
    assert_grad_ok(&[a.clone(), b.clone()], |t| t[0].sub(&t[1])?.mean_square());
    assert_grad_ok(&[a.clone(), b.clone()], |t| t[0].mul(&t[1])?.sum());
    assert_grad_ok(&[a.clone(), b.clone()], |t| t[0].mse(&t[1]));
    assert_grad_ok(&[a.clone()], |t| t[0].scale(-0.3)?.mean_square());
    assert_grad_ok(&[a.clone()], |t| t[0].relu()?.mean_square());
    assert_grad_ok(&[a.clone()], |t| t[0].leaky_relu(0.2)?.mean_square());
    assert_grad_ok(&[a.clone()], |t| t[0].sigmoid()?.mean_square());
    assert_grad_ok(&[a.clone()], |t| t[0].add_channel(&[0.1, -0.2, 0.3])?.mean_square());
    assert_grad_ok(&[a.clone()], |t| t[0].mul_channel(&[0.5, -2.0, 3.0])?.mean_square());
    assert_grad_ok(&[a.clone()], |t| t[0].reshape(&[6, 4])?.flatten()?.mean_square());
    assert_grad_ok(&[a.clone()], |t| t[0].mean());
}

#[test]
fn gradcheck_log_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Tensor::from_vec(&[4, 1], (0..4).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap();
    assert_grad_ok(&[p.clone()], |t| t[0].neg_log_clipped(1e-7)?.mean());
    assert_grad_ok(&[p], |t| t[0].neg_log1m_clipped(1e-7)?.mean());
    let z = random(&[4, 1], &mut rng).scale(4.0).unwrap();
    assert_grad_ok(&[z.clone()], |t| t[0].neg_log_sigmoid_clipped(1e-7)?.mean());
    assert_grad_ok(&[z], |t| t[0].neg_log1m_sigmoid_clipped(1e-7)?.mean());
}

#[test]
fn gradcheck_linear_pool_shuffle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[4, 5], &mut rng);
    let b = random(&[4], &mut rng);
    assert_grad_ok(&[x, w, b], |t| linear(&t[0], &t[1], &t[2])?.mean_square());

    let img = random(&[1, 2, 4, 6], &mut rng);
    assert_grad_ok(&[img.clone()], |t| max_pool2d(&t[0], 2)?.mean_square());

    let packed = random(&[2, 8, 2, 3], &mut rng);
    let probe = random(&[2, 2, 4, 6], &mut rng);
    assert_grad_ok(&[packed], |t| pixel_shuffle(&t[0], 2)?.mul(&probe)?.sum());
    assert_grad_ok(&[probe.clone()], |t| pixel_unshuffle(&t[0], 2)?.mean_square());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pixel_shuffle_round_trip_and_multiset(
        n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, r in 1usize..4, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[n, c * r * r, h, w], &mut rng);
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), &[n, c, h * r, w * r]);
        prop_assert_eq!(y.numel(), x.numel());
        let mut a = x.to_vec();
        let mut b = y.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        let back = pixel_unshuffle(&y, r).unwrap();
        prop_assert_eq!(back.to_vec(), x.to_vec());
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random(&[2, 3, 9, 9], &mut rng);
        let w = random(&[8, 3, 3, 3], &mut rng);
        conv2d(&x, &w, None, 1, 1).unwrap().relu().unwrap().to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

/// Independent ADAM recurrence on plain floats.
fn adam_oracle(w0: f64, grad: impl Fn(f64) -> f64, steps: usize, lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut trace = Vec::new();
    for t in 1..=steps {
        let g = grad(w);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        trace.push(w);
    }
    trace
}

#[test]
fn adam_two_steps_on_quadratic_match_trace() {
    let lr = 0.1;
    let expected = adam_oracle(1.0, |w| 2.0 * (w - 3.0), 2, lr);
    let mut p = Parameter::<f64>::new("w", &[1], vec![1.0]).unwrap();
    let adam = Adam::with_lr(lr);
    let target = Tensor::from_vec(&[1], vec![3.0]).unwrap();
    for e in expected {
        // (w - 3)^2 as a mean over one element
        p.tensor().mse(&target).unwrap().backward().unwrap();
        adam.step([&mut p]).unwrap();
        assert!((p.data()[0] - e).abs() < 1e-10, "{} vs {e}", p.data()[0]);
    }
    assert_eq!(p.step(), 2);
}
