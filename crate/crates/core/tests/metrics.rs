use dehaze_core::haze::{
    compose_haze, invert_haze, transmission_from_depth, HazeParams, SceneImage, DEFAULT_T_FLOOR,
};
use dehaze_core::metrics::{evaluate_pairs, psnr, ssim};
use dehaze_core::scene::procedural_corpus;
use dehaze_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64) -> SceneImage {
    procedural_corpus(1, 24, 20, seed).remove(0).0
}

fn noisy(img: &SceneImage, amp: f32, seed: u64) -> SceneImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = img
        .pixels()
        .iter()
        .map(|&v| (v + amp * rng.random_range(-1.0f32..1.0)).clamp(0.0, 1.0))
        .collect();
    SceneImage::new(img.width(), img.height(), px).unwrap()
}

#[test]
fn identical_images_score_perfectly() {
    let a = scene(1);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(psnr(&a, &a).unwrap() > 100.0);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let a = scene(2);
    let scores: Vec<f64> = [0.01, 0.03, 0.1, 0.3]
        .iter()
        .map(|&amp| psnr(&a, &noisy(&a, amp, 9)).unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[1] < w[0]), "{scores:?}");
}

#[test]
fn a_negative_image_is_structurally_dissimilar() {
    let a = scene(3);
    let neg = SceneImage::new(
        a.width(),
        a.height(),
        a.pixels().iter().map(|v| 1.0 - v).collect(),
    )
    .unwrap();
    assert!(ssim(&a, &neg).unwrap() < 0.5);
}

#[test]
fn analytic_inversion_is_near_lossless_above_the_floor() {
    for (seed, (item, depth)) in procedural_corpus(4, 24, 24, 11).into_iter().enumerate() {
        let params = HazeParams::achromatic(0.7 + 0.1 * seed as f32, 1.5);
        let t = transmission_from_depth(&depth.normalized(), params.beta).unwrap();
        assert!(t.values().iter().all(|&v| v >= DEFAULT_T_FLOOR));
        let hazy = compose_haze(&item, &t, &params).unwrap();
        let back = invert_haze(&hazy, &t, &params, DEFAULT_T_FLOOR)
            .unwrap()
            .clamped();
        let p = psnr(&item, &back).unwrap();
        assert!(p >= 60.0, "seed {seed}: {p} dB");
    }
}

#[test]
fn reports_average_the_scored_pairs_and_count_skips() {
    let pairs: Vec<(SceneImage, SceneImage)> = (0..5)
        .map(|i| {
            let c = scene(20 + i);
            let h = noisy(&c, 0.1, i);
            (c, h)
        })
        .collect();
    let ev = evaluate_pairs(&pairs, |i, hazy| {
        if i == 3 {
            Err(Error::Param("refused".into()))
        } else {
            Ok(noisy(hazy, 0.02, 100 + i as u64))
        }
    });
    assert_eq!((ev.model.count, ev.model.skipped), (4, 1));
    assert_eq!((ev.baseline.count, ev.baseline.skipped), (4, 1));
    let mean_psnr = ev.model.images.iter().map(|s| s.psnr).sum::<f64>() / 4.0;
    let mean_ssim = ev.model.images.iter().map(|s| s.ssim).sum::<f64>() / 4.0;
    assert!((ev.model.mean_psnr - mean_psnr).abs() < 1e-9);
    assert!((ev.model.mean_ssim - mean_ssim).abs() < 1e-9);
    assert!(ev.model.images.iter().all(|s| s.name != "3"));

    // the identity dehazer on haze-free pairs is perfect
    let clean: Vec<_> = pairs.iter().map(|(c, _)| (c.clone(), c.clone())).collect();
    let ev = evaluate_pairs(&clean, |_, h| Ok(h.clone()));
    assert!((ev.model.mean_ssim - 1.0).abs() < 1e-12);
}

#[test]
fn mismatched_sizes_are_errors() {
    assert!(psnr(&scene(1), &SceneImage::filled(20, 24, 0.5)).is_err());
    assert!(ssim(&scene(1), &SceneImage::filled(20, 24, 0.5)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scores_are_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>(), amp in 0.0f32..0.5) {
        let a = scene(s1 % 1000);
        let b = noisy(&scene(s2 % 1000), amp, s2);
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-9);
    }
}
