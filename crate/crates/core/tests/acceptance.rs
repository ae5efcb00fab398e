//! End-to-end acceptance: every criterion runs, prints one PASS/FAIL line,
//! and the test fails afterwards if any criterion failed.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dehaze_core::checks::run_suite;
use dehaze_core::haze::{
    compose_haze, invert_haze, sample_haze_params, transmission_from_depth, DepthMap, SceneImage,
    DEFAULT_T_FLOOR,
};
use dehaze_core::io::{write_dataset, CorpusItem, Manifest, RunConfig};
use dehaze_core::kernels::{conv2d, conv_transpose2d, ConvGeom};
use dehaze_core::loss::Variant;
use dehaze_core::metrics::{psnr, ssim};
use dehaze_core::nn::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, NormMode};
use dehaze_core::scene::procedural_corpus;
use dehaze_core::train::{load_pairs, train_loop, validate, TrainOutcome};
use dehaze_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &'static str, started: Instant, r: Result<String, String>) -> Verdict {
    let secs = started.elapsed().as_secs_f64();
    let (pass, detail) = match r {
        Ok(d) => (true, format!("{d} [{secs:.1}s]")),
        Err(d) => (false, format!("{d} [{secs:.1}s]")),
    };
    println!(
        "criterion {id} {name}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    Verdict {
        id,
        name,
        pass,
        detail,
    }
}

fn check(cond: bool, msg: String) -> Result<String, String> {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_suite() -> Result<String, String> {
    let t0 = Instant::now();
    let results = run_suite().map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| {
            format!(
                "{} {:.2e} ≥ {:.0e}",
                r.name, r.report.max_rel_error, r.threshold
            )
        })
        .collect();
    let worst = results
        .iter()
        .map(|r| r.report.max_rel_error)
        .fold(0.0, f64::max);
    if !failed.is_empty() {
        return Err(format!("failing cases: {}", failed.join(", ")));
    }
    check(
        elapsed < Duration::from_secs(60),
        format!(
            "{} cases, worst relative error {worst:.2e}, {:.1}s",
            results.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    s: usize,
    p: usize,
) -> Tensor<f64> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (wd + 2 * p - kw) / s + 1;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[oi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * s + i) as isize - p as isize;
                                let ix = (xx * s + j) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oi * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out.data_mut()[((ni * o + oi) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form: every input pixel adds its weighted kernel to the output.
fn naive_conv_transpose(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    s: usize,
    p: usize,
) -> Tensor<f64> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [_, o, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h - 1) * s + kh - 2 * p;
    let ow = (wd - 1) * s + kw - 2 * p;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    out.data_mut()[((ni * o + oi) * oh + y) * ow + xx] = b.data()[oi];
                }
            }
        }
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    let v = x.data()[((ni * c + ci) * h + y) * wd + xx];
                    for oi in 0..o {
                        for i in 0..kh {
                            for j in 0..kw {
                                let oy = (y * s + i) as isize - p as isize;
                                let ox = (xx * s + j) as isize - p as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                out.data_mut()
                                    [((ni * o + oi) * oh + oy as usize) * ow + ox as usize] +=
                                    v * w.data()[((ci * o + oi) * kh + i) * kw + j];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn convolution_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..25 {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=4);
        let o = rng.random_range(1..=4);
        let h = rng.random_range(3..=8);
        let w = rng.random_range(3..=8);
        let k = rng.random_range(1..=3);
        let s = rng.random_range(1..=2);
        let p = rng.random_range(0..=1).min(k - 1);
        let x = Tensor::<f64>::randn(&[n, c, h, w], 1.0, &mut rng);
        let wt = Tensor::<f64>::randn(&[o, c, k, k], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[o], 1.0, &mut rng);
        let geom = ConvGeom::new(s, p);
        let got = conv2d(&x, &wt, Some(&b), geom).map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max(max_abs_diff(&got, &naive_conv(&x, &wt, &b, s, p)));

        let wt_t = Tensor::<f64>::randn(&[c, o, k, k], 1.0, &mut rng);
        let got =
            conv_transpose2d(&x, &wt_t, Some(&b), geom).map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max(max_abs_diff(
            &got,
            &naive_conv_transpose(&x, &wt_t, &b, s, p),
        ));
    }
    check(
        worst < 1e-5,
        format!("25 instances each, max abs difference {worst:.2e}"),
    )
}

fn physics_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(4..24), rng.random_range(4..24));
        let j =
            SceneImage::new(w, h, (0..w * h * 3).map(|_| rng.random::<f32>()).collect()).unwrap();
        let d = DepthMap::new(
            w,
            h,
            (0..w * h).map(|_| rng.random_range(0.0..3.0f32)).collect(),
        )
        .unwrap()
        .normalized();
        let params = sample_haze_params(&mut rng);
        let t = transmission_from_depth(&d, params.beta).unwrap();
        let hazy = compose_haze(&j, &t, &params).unwrap();
        let back = invert_haze(&hazy, &t, &params, DEFAULT_T_FLOOR).unwrap();
        for (i, &ti) in t.values().iter().enumerate() {
            if ti >= DEFAULT_T_FLOOR {
                for c in 0..3 {
                    worst =
                        worst.max((back.pixels()[i * 3 + c] - j.pixels()[i * 3 + c]).abs() as f64);
                    checked += 1;
                }
            }
        }
    }
    check(
        worst <= 1e-6,
        format!("{checked} values, max error {worst:.2e}"),
    )
}

fn metric_goldens() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = SceneImage::new(
        32,
        32,
        (0..32 * 32 * 3)
            .map(|_| rng.random_range(0.0..0.9f32))
            .collect(),
    )
    .unwrap();
    let shifted = SceneImage::new(32, 32, base.pixels().iter().map(|v| v + 0.1).collect()).unwrap();
    let p = psnr(&base, &shifted).map_err(|e| e.to_string())?;
    let s = ssim(
        &SceneImage::filled(32, 32, 0.2),
        &SceneImage::filled(32, 32, 0.6),
    )
    .map_err(|e| e.to_string())?;
    let self_s = ssim(&base, &base).map_err(|e| e.to_string())?;
    let expected = (2.0 * 0.2 * 0.6 + 1e-4) / (0.04 + 0.36 + 1e-4);
    check(
        (p - 20.0).abs() <= 1e-3
            && (s - 0.6001).abs() <= 1e-3
            && (s - expected).abs() < 1e-6
            && self_s == 1.0,
        format!("psnr {p:.4} dB, constant-pair ssim {s:.5}, ssim(a,a) {self_s}"),
    )
}

fn architecture_shapes() -> Result<String, String> {
    let gen = Generator::<f32>::new(GeneratorConfig::default(), 5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen = Vec::new();
    for (h, w) in [(256, 256), (64, 48), (33, 47)] {
        let x = Tensor::<f32>::uniform(&[1, 3, h, w], -1.0, 1.0, &mut rng);
        let y = gen.infer(&x, NormMode::Eval).map_err(|e| e.to_string())?;
        if y.shape() != [1, 3, h, w] || !y.data().iter().all(|v| v.abs() < 1.0) {
            return Err(format!("generator {h}x{w} gave {:?}", y.shape()));
        }
        seen.push(format!("{h}x{w}"));
    }
    let disc =
        Discriminator::<f32>::new(DiscriminatorConfig::default(), 6).map_err(|e| e.to_string())?;
    let pair = Tensor::<f32>::uniform(&[1, 6, 256, 256], -1.0, 1.0, &mut rng);
    let (map, mean) = disc
        .infer(&pair, NormMode::Eval)
        .map_err(|e| e.to_string())?;
    let in_range = map.data().iter().all(|&v| v > 0.0 && v < 1.0);
    check(
        map.shape() == [1, 1, 2, 2] && in_range,
        format!(
            "generator preserves {}; discriminator map {:?}, mean {mean:.3}",
            seen.join(", "),
            map.shape()
        ),
    )
}

fn write_split(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let items: Vec<CorpusItem> = procedural_corpus(count, 32, 32, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (image, depth))| CorpusItem {
            name: format!("scene{i:02}"),
            image,
            depth,
        })
        .collect();
    write_dataset(&items, 1, seed, dir).unwrap();
    dir.join("manifest.jsonl")
}

fn smoke_config(root: &Path, train: &Path, out: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.variant = Variant::Gen;
    cfg.seed = 42;
    cfg.train_manifest = train.to_path_buf();
    cfg.out_dir = root.join(out);
    cfg.train.crop = 0;
    cfg.train.batch_size = 4;
    cfg.train.pretrain_epochs = 50;
    cfg.train.adversarial_epochs = 0;
    cfg.train.checkpoint_every = 25;
    cfg.train.validate_every = 0;
    cfg
}

fn gen_smoke(cfg: &RunConfig) -> (Result<String, String>, Option<TrainOutcome>) {
    let t0 = Instant::now();
    let out = match train_loop(cfg) {
        Ok(o) => o,
        Err(e) => return (Err(e.to_string()), None),
    };
    let w = Variant::Gen.weights();
    let content: Vec<f64> = out.log.iter().map(|r| r.content(&w)).collect();
    let first = content[..10].iter().sum::<f64>() / 10.0;
    let last = content[content.len() - 10..].iter().sum::<f64>() / 10.0;
    let r = check(
        content.len() == 200 && last < 0.5 * first && t0.elapsed() < Duration::from_secs(600),
        format!(
            "{} iterations, content loss first-10 mean {first:.4}, last-10 mean {last:.4} ({:.0}%)",
            content.len(),
            100.0 * last / first
        ),
    );
    (r, Some(out))
}

fn adversarial_smoke(
    root: &Path,
    train: &Path,
    held_out: &Path,
    warm: &Path,
) -> Result<String, String> {
    let mut cfg = smoke_config(root, train, "candy");
    cfg.variant = Variant::CandyL1_9P;
    cfg.warm_start = Some(warm.to_path_buf());
    cfg.train.pretrain_epochs = 0;
    cfg.train.adversarial_epochs = 125;
    let out = train_loop(&cfg).map_err(|e| e.to_string())?;
    let n = out.log.len();
    let finite = out
        .log
        .iter()
        .all(|r| r.total.is_finite() && r.d_loss.is_some_and(f64::is_finite));
    let d_lo = out
        .log
        .iter()
        .filter_map(|r| r.d_min)
        .fold(f64::INFINITY, f64::min);
    let d_hi = out
        .log
        .iter()
        .filter_map(|r| r.d_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let pairs = load_pairs(&Manifest::load(held_out).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let ev = validate(&out.generator, &pairs);
    check(
        n == 500 && finite && d_lo > 0.0 && d_hi < 1.0 && ev.model.count == 4 && ev.model.mean_ssim > ev.baseline.mean_ssim,
        format!(
            "{n} iterations, finite {finite}, D outputs in [{d_lo:.3e}, {d_hi:.6}], held-out ssim dehazed {:.4} vs hazy {:.4}",
            ev.model.mean_ssim, ev.baseline.mean_ssim
        ),
    )
}

fn sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn determinism(first: &TrainOutcome, cfg: &RunConfig) -> Result<String, String> {
    let second = train_loop(cfg).map_err(|e| e.to_string())?;
    let losses = |o: &TrainOutcome| -> Vec<(Option<f64>, Option<f64>, Option<f64>, f64)> {
        o.log
            .iter()
            .take(10)
            .map(|r| (r.l2, r.s1, r.feat, r.total))
            .collect()
    };
    let same_log = losses(first) == losses(&second);
    let (a, b) = (
        first.last_checkpoint().unwrap(),
        second.last_checkpoint().unwrap(),
    );
    let (ha, hb) = (sha256(a), sha256(b));
    check(
        same_log && ha == hb,
        format!(
            "first 10 steps identical: {same_log}; final checkpoint sha256 {} vs {}",
            &ha[..16],
            &hb[..16]
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut verdicts = Vec::new();

    let t = Instant::now();
    verdicts.push(report(1, "gradient suite", t, gradient_suite()));
    let t = Instant::now();
    verdicts.push(report(2, "convolution oracle", t, convolution_oracle()));
    let t = Instant::now();
    verdicts.push(report(3, "physics round trip", t, physics_round_trip()));
    let t = Instant::now();
    verdicts.push(report(4, "metric goldens", t, metric_goldens()));
    let t = Instant::now();
    verdicts.push(report(5, "architecture shapes", t, architecture_shapes()));

    let train = write_split(&root.join("train"), 16, 100);
    let held_out = write_split(&root.join("heldout"), 4, 200);
    let cfg6 = smoke_config(root, &train, "gen-a");
    let t = Instant::now();
    let (r6, run6) = gen_smoke(&cfg6);
    verdicts.push(report(6, "GEN smoke train", t, r6));

    let t = Instant::now();
    let r7 = match run6.as_ref().and_then(|o| o.last_checkpoint()) {
        Some(warm) => adversarial_smoke(root, &train, &held_out, warm),
        None => Err("criterion 6 produced no checkpoint".into()),
    };
    verdicts.push(report(7, "adversarial smoke train", t, r7));

    let t = Instant::now();
    let r8 = match &run6 {
        Some(first) => determinism(first, &smoke_config(root, &train, "gen-b")),
        None => Err("criterion 6 did not complete".into()),
    };
    verdicts.push(report(8, "determinism", t, r8));

    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{} {}: {}", v.id, v.name, v.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
