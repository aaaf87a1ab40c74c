mod common;

use common::{invert_border, oracle_rmse, oracle_ssim, random_pair};
use epsr_core::imaging::{gaussian_blur, rgb_to_y, synth};
use epsr_core::metrics::{
    eval_luma_crop, ggd_fit, niqe_fit, niqe_score, psnr, rmse, ssim, NiqeModel, NiqeParams, NIQE_FEATURES,
};
use epsr_core::{Error, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn full_reference_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..50 {
        let (a, b) = random_pair(&mut rng, 16, 16);
        let r = oracle_rmse(&a, &b);
        assert!((rmse(&a, &b).unwrap() - r).abs() < 1e-8);
        assert!((psnr(&a, &b).unwrap().db - 20.0 * (255.0 / r).log10()).abs() < 1e-8);
        assert!((ssim(&a, &b).unwrap() - oracle_ssim(&a, &b)).abs() < 1e-8);
    }
}

#[test]
fn metrics_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let (a, b) = random_pair(&mut rng, 20, 24);
        assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn border_only_error_is_cropped_away() {
    let hr = synth::natural_image(32, 32, 3, 5);
    let est = invert_border(&hr, 4);
    assert!(rmse(&rgb_to_y(&est).unwrap(), &rgb_to_y(&hr).unwrap()).unwrap() > 1.0);
    let (e, r) = eval_luma_crop(&est, &hr).unwrap();
    assert_eq!(rmse(&e, &r).unwrap(), 0.0);
}

#[test]
fn ggd_shape_of_gaussian_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..1_000_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let (shape, var) = ggd_fit(&x);
    assert!((shape - 2.0).abs() < 0.1, "{shape}");
    assert!((var - 1.0).abs() < 0.01);
}

#[test]
fn constant_images_cannot_fit_niqe() {
    let flat: Vec<Image> = (0..10).map(|_| Image::constant(64, 64, 1, 0.5).unwrap()).collect();
    let params = NiqeParams {
        patch_size: 32,
        ..NiqeParams::default()
    };
    let err = niqe_fit(&flat, params).unwrap_err();
    assert!(matches!(err, Error::Fit(_)), "{err}");
    assert!(err.to_string().contains("0 of 40"), "{err}");
    assert!(matches!(niqe_fit(&flat[..9], params), Err(Error::Usage(_))));
}

fn small_model() -> NiqeModel {
    let pristine = synth::corpus(10, 128, 128, 900);
    niqe_fit(
        &pristine,
        NiqeParams {
            patch_size: 32,
            ..NiqeParams::default()
        },
    )
    .unwrap()
}

#[test]
fn niqe_model_contract_and_round_trip() {
    let m = small_model();
    assert_eq!((m.mean.len(), m.cov.len()), (NIQE_FEATURES, NIQE_FEATURES * NIQE_FEATURES));
    m.check().unwrap();
    assert!(m.patches_used >= 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("niqe.bin");
    m.save(&p).unwrap();
    assert_eq!(NiqeModel::load(&p).unwrap(), m);
}

#[test]
fn niqe_is_deterministic_and_offset_invariant() {
    let m = small_model();
    let img = rgb_to_y(&synth::natural_image(96, 96, 3, 42)).unwrap();
    let s = niqe_score(&img, &m).unwrap();
    assert!(s >= 0.0 && s.is_finite());
    assert_eq!(s, niqe_score(&img, &m).unwrap());
    let shifted = img.map_planes(96, 96, |p| p.iter().map(|v| v + 0.01).collect()).unwrap();
    assert!((niqe_score(&shifted, &m).unwrap() - s).abs() < 1e-6);
}

#[test]
fn blur_raises_niqe() {
    let m = small_model();
    let mut pristine = 0.0;
    let mut blurred = 0.0;
    for img in synth::corpus(10, 96, 96, 4000) {
        let y = rgb_to_y(&img).unwrap();
        pristine += niqe_score(&y, &m).unwrap();
        blurred += niqe_score(&gaussian_blur(&y, 2.0).unwrap(), &m).unwrap();
    }
    assert!(pristine < blurred, "{pristine} vs {blurred}");
}
