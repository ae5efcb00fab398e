//! Full-reference image quality: PSNR and SSIM, plus dataset aggregation.
//!
//! Images are compared in [0,1] with dynamic range 1. SSIM uses an 11×11
//! Gaussian window (σ = 1.5) over valid positions only, per channel, and
//! averages the channels.

use std::path::PathBuf;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haze::SceneImage;
use crate::io::{load_image, Manifest, ManifestRecord};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &SceneImage, b: &SceneImage, op: &'static str) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            op,
            format!(
                "{}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            ),
        ));
    }
    Ok(())
}

/// `10·log10(1/MSE)`; `+∞` for identical images.
pub fn psnr(reference: &SceneImage, test: &SceneImage) -> Result<f64> {
    same_shape(reference, test, "psnr")?;
    let n = reference.pixels().len() as f64;
    let mse = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions, averaged over channels.
pub fn ssim(reference: &SceneImage, test: &SceneImage) -> Result<f64> {
    same_shape(reference, test, "ssim")?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = reference
            .pixels()
            .iter()
            .skip(c)
            .step_by(3)
            .map(|&v| v as f64)
            .collect();
        let b: Vec<f64> = test
            .pixels()
            .iter()
            .skip(c)
            .step_by(3)
            .map(|&v| v as f64)
            .collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(&a, w, h, &k);
        let mu_b = filter_valid(&b, w, h, &k);
        let aa = filter_valid(&prod(&a, &a), w, h, &k);
        let bb = filter_valid(&prod(&b, &b), w, h, &k);
        let ab = filter_valid(&prod(&a, &b), w, h, &k);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub count: usize,
    pub skipped: usize,
}

impl MetricReport {
    /// Arithmetic means over `images`, folded in order.
    pub fn from_scores(images: Vec<ImageScore>, skipped: usize) -> Self {
        let count = images.len();
        let mean = |f: fn(&ImageScore) -> f64| {
            if count == 0 {
                f64::NAN
            } else {
                images.iter().map(f).sum::<f64>() / count as f64
            }
        };
        MetricReport {
            mean_psnr: mean(|s| s.psnr),
            mean_ssim: mean(|s| s.ssim),
            count,
            skipped,
            images,
        }
    }
}

/// Scores of a dehazer and of the identity baseline on the same pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: MetricReport,
    pub baseline: MetricReport,
}

pub fn score(name: impl Into<String>, clean: &SceneImage, test: &SceneImage) -> Result<ImageScore> {
    Ok(ImageScore {
        name: name.into(),
        psnr: psnr(clean, test)?,
        ssim: ssim(clean, test)?,
    })
}

/// Applies `dehaze` to every `(clean, hazy)` pair; failing pairs are skipped.
pub fn evaluate_pairs<F>(pairs: &[(SceneImage, SceneImage)], mut dehaze: F) -> Evaluation
where
    F: FnMut(usize, &SceneImage) -> Result<SceneImage>,
{
    let mut model = Vec::new();
    let mut baseline = Vec::new();
    let mut skipped = 0;
    for (i, (clean, hazy)) in pairs.iter().enumerate() {
        let scored = dehaze(i, hazy).and_then(|out| {
            Ok((
                score(i.to_string(), clean, &out)?,
                score(i.to_string(), clean, hazy)?,
            ))
        });
        match scored {
            Ok((m, b)) => {
                model.push(m);
                baseline.push(b);
            }
            Err(e) => {
                warn!("pair {i} skipped: {e}");
                skipped += 1;
            }
        }
    }
    Evaluation {
        model: MetricReport::from_scores(model, skipped),
        baseline: MetricReport::from_scores(baseline, skipped),
    }
}

/// Loaded hazy/clean pair of a manifest record.
pub struct RecordPair<'a> {
    pub record: &'a ManifestRecord,
    pub clean: SceneImage,
    pub hazy: SceneImage,
}

fn load_pair<'a>(m: &Manifest, r: &'a ManifestRecord) -> Result<RecordPair<'a>> {
    let hazy_rel = r
        .hazy_path
        .as_ref()
        .ok_or_else(|| Error::Param(format!("{} has no hazy_path", r.clean_path.display())))?;
    let clean = load_image(m.resolve(&r.clean_path))?;
    let hazy = load_image(m.resolve(hazy_rel))?;
    Ok(RecordPair {
        record: r,
        clean,
        hazy,
    })
}

/// Like [`evaluate_pairs`] over a manifest; unreadable pairs count as skipped.
pub fn evaluate_manifest<F>(manifest: &Manifest, mut dehaze: F) -> Evaluation
where
    F: FnMut(&RecordPair<'_>) -> Result<SceneImage>,
{
    let mut model = Vec::new();
    let mut baseline = Vec::new();
    let mut skipped = 0;
    for r in &manifest.records {
        let name: PathBuf = r.hazy_path.clone().unwrap_or_else(|| r.clean_path.clone());
        let name = name.display().to_string();
        let scored = load_pair(manifest, r).and_then(|p| {
            let out = dehaze(&p)?;
            Ok((
                score(name.clone(), &p.clean, &out)?,
                score(name.clone(), &p.clean, &p.hazy)?,
            ))
        });
        match scored {
            Ok((m, b)) => {
                model.push(m);
                baseline.push(b);
            }
            Err(e) => {
                warn!("{name} skipped: {e}");
                skipped += 1;
            }
        }
    }
    Evaluation {
        model: MetricReport::from_scores(model, skipped),
        baseline: MetricReport::from_scores(baseline, skipped),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let k = gaussian_window();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
        assert!(k[5] > k[4]);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = SceneImage::filled(4, 4, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = SceneImage::filled(4, 4, 0.0);
        // MSE 0.25
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = SceneImage::filled(10, 20, 0.5);
        assert!(ssim(&a, &a).is_err());
    }
}
