//! Atmospheric scattering: haze synthesis from depth and its analytic inverse.
//!
//! Hazy observation `I = J·t + α·(1 − t)` with transmission `t = exp(−β·d)`.
//! All quantities live in [0,1] image space.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Range of the achromatic atmospheric light level `k` (α = [k, k, k]).
pub const ATMOSPHERIC_LIGHT_RANGE: (f32, f32) = (0.7, 1.0);
/// Range of the scattering coefficient β.
pub const SCATTERING_RANGE: (f32, f32) = (0.5, 1.5);
pub const DEFAULT_T_FLOOR: f32 = 0.05;

/// An RGB image, `height × width × 3` interleaved, values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl SceneImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::shape(
                "scene image",
                format!(
                    "{width}x{height}x3 needs {} values, got {}",
                    width * height * 3,
                    pixels.len()
                ),
            ));
        }
        Ok(SceneImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        SceneImage {
            width,
            height,
            pixels: vec![value; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    fn same_size(&self, w: usize, h: usize, op: &'static str) -> Result<()> {
        if (self.width, self.height) != (w, h) {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {w}x{h}", self.width, self.height),
            ));
        }
        Ok(())
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Crops a `w×h` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape(
                "crop",
                format!(
                    "window {w}x{h}+{x0}+{y0} exceeds {}x{}",
                    self.width, self.height
                ),
            ));
        }
        let mut out = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            out.extend_from_slice(&self.pixels[row..row + w * 3]);
        }
        SceneImage::new(w, h, out)
    }

    /// Network tensor (1,3,H,W) with values mapped `v ↦ 2v − 1`.
    pub fn to_network<T: Scalar>(&self) -> Tensor<T> {
        images_to_network(std::slice::from_ref(self)).expect("single image")
    }

    /// Inverse of [`SceneImage::to_network`] for sample `index` of a batch, clamped to [0,1].
    pub fn from_network<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let [n, c, h, w] = t.dims4("from_network")?;
        if c != 3 || index >= n {
            return Err(Error::shape(
                "from_network",
                format!("need N>{index},3,H,W, got {:?}", t.shape()),
            ));
        }
        let plane = h * w;
        let base = index * 3 * plane;
        let mut pixels = vec![0.0; plane * 3];
        for ch in 0..3 {
            for i in 0..plane {
                let v = (t.data()[base + ch * plane + i].as_f64() + 1.0) / 2.0;
                pixels[i * 3 + ch] = (v as f32).clamp(0.0, 1.0);
            }
        }
        SceneImage::new(w, h, pixels)
    }
}

/// Stacks equally sized images into an (N,3,H,W) network tensor in (−1,1) space.
pub fn images_to_network<T: Scalar>(images: &[SceneImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Param("empty image batch".into()))?;
    let (w, h) = (first.width, first.height);
    let plane = w * h;
    let mut data = vec![T::zero(); images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        img.same_size(w, h, "batch")?;
        for i in 0..plane {
            for c in 0..3 {
                data[(n * 3 + c) * plane + i] = T::lit(2.0 * img.pixels[i * 3 + c] as f64 - 1.0);
            }
        }
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Relative scene depth, non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f32>,
    /// Maximum of the raw field before normalization, when normalized.
    pub source_scale: Option<f32>,
    /// Number of negative raw values clamped to zero on load.
    pub clamped_negatives: usize,
}

impl DepthMap {
    /// Wraps a raw field; negative values are clamped to zero and counted.
    pub fn new(width: usize, height: usize, mut depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::shape(
                "depth map",
                format!(
                    "{width}x{height} needs {} values, got {}",
                    width * height,
                    depth.len()
                ),
            ));
        }
        if let Some(bad) = depth.iter().position(|d| !d.is_finite()) {
            return Err(Error::Param(format!("depth value {bad} is not finite")));
        }
        let mut clamped = 0;
        for d in &mut depth {
            if *d < 0.0 {
                *d = 0.0;
                clamped += 1;
            }
        }
        if clamped > 0 {
            warn!("clamped {clamped} negative depth value(s) to zero");
        }
        Ok(DepthMap {
            width,
            height,
            depth,
            source_scale: None,
            clamped_negatives: clamped,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.depth
    }

    pub fn is_normalized(&self) -> bool {
        self.source_scale.is_some()
    }

    /// Divides by the maximum so that the farthest point has depth 1.
    /// A constant-zero map is left unchanged.
    pub fn normalized(mut self) -> Self {
        if self.is_normalized() {
            return self;
        }
        let max = self.depth.iter().copied().fold(0.0f32, f32::max);
        if max > 0.0 {
            for d in &mut self.depth {
                *d /= max;
            }
        }
        self.source_scale = Some(max);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeParams {
    /// Atmospheric light per channel.
    pub alpha: [f32; 3],
    /// Scattering coefficient.
    pub beta: f32,
}

impl HazeParams {
    pub fn achromatic(k: f32, beta: f32) -> Self {
        HazeParams {
            alpha: [k; 3],
            beta,
        }
    }

    /// Light level of the first channel, equal to all channels when achromatic.
    pub fn k(&self) -> f32 {
        self.alpha[0]
    }
}

/// Per-pixel transmission in (0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    width: usize,
    height: usize,
    t: Vec<f32>,
}

impl TransmissionMap {
    pub fn new(width: usize, height: usize, t: Vec<f32>) -> Result<Self> {
        if t.len() != width * height {
            return Err(Error::shape(
                "transmission",
                format!("{width}x{height} needs {} values", width * height),
            ));
        }
        Ok(TransmissionMap { width, height, t })
    }

    pub fn uniform(width: usize, height: usize, t: f32) -> Self {
        TransmissionMap {
            width,
            height,
            t: vec![t; width * height],
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.t
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

pub fn transmission_from_depth(depth: &DepthMap, beta: f32) -> Result<TransmissionMap> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Param(format!(
            "scattering coefficient must be positive, got {beta}"
        )));
    }
    let t = depth.depth.iter().map(|&d| (-beta * d).exp()).collect();
    TransmissionMap::new(depth.width, depth.height, t)
}

/// Blends the clean radiance with atmospheric light according to `t`; arithmetic runs in `f64`.
pub fn compose_haze(
    clean: &SceneImage,
    t: &TransmissionMap,
    params: &HazeParams,
) -> Result<SceneImage> {
    clean.same_size(t.width, t.height, "compose_haze")?;
    let mut out = clean.pixels.clone();
    for (px, &ti) in out.chunks_mut(3).zip(&t.t) {
        for (v, &a) in px.iter_mut().zip(&params.alpha) {
            let (j, t, a) = (*v as f64, ti as f64, a as f64);
            *v = (j * t + a * (1.0 - t)).clamp(0.0, 1.0) as f32;
        }
    }
    SceneImage::new(clean.width, clean.height, out)
}

/// Recovers the clean radiance with transmission floored at `t_floor`.
pub fn invert_haze(
    hazy: &SceneImage,
    t: &TransmissionMap,
    params: &HazeParams,
    t_floor: f32,
) -> Result<SceneImage> {
    if t_floor.is_nan() || t_floor <= 0.0 {
        return Err(Error::Param(format!(
            "t_floor must be positive, got {t_floor}"
        )));
    }
    hazy.same_size(t.width, t.height, "invert_haze")?;
    let mut out = hazy.pixels.clone();
    for (px, &ti) in out.chunks_mut(3).zip(&t.t) {
        let ti = ti.max(t_floor) as f64;
        for (v, &a) in px.iter_mut().zip(&params.alpha) {
            let a = a as f64;
            *v = ((*v as f64 - a) / ti + a).clamp(0.0, 1.0) as f32;
        }
    }
    SceneImage::new(hazy.width, hazy.height, out)
}

/// Draws `k ~ U[0.7, 1]`, `β ~ U[0.5, 1.5]` with achromatic light.
pub fn sample_haze_params<R: Rng + ?Sized>(rng: &mut R) -> HazeParams {
    let k = rng.random_range(ATMOSPHERIC_LIGHT_RANGE.0..=ATMOSPHERIC_LIGHT_RANGE.1);
    let beta = rng.random_range(SCATTERING_RANGE.0..=SCATTERING_RANGE.1);
    HazeParams::achromatic(k, beta)
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One synthesized hazy observation of corpus item `source`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub source: usize,
    pub variant: usize,
    pub seed: u64,
    pub params: HazeParams,
    pub hazy: SceneImage,
}

#[derive(Clone, Debug, Default)]
pub struct SynthOutput {
    pub samples: Vec<SynthSample>,
    /// Corpus items skipped, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Synthesizes `variants` hazy versions of every corpus item.
///
/// Item `i`, variant `v` draws its parameters from a generator seeded with
/// `mix_seed(mix_seed(seed, i), v)`, so results do not depend on scheduling.
pub fn synthesize_dataset(
    corpus: &[(SceneImage, DepthMap)],
    variants: usize,
    seed: u64,
) -> Result<SynthOutput> {
    if corpus.is_empty() {
        return Err(Error::Param("corpus is empty".into()));
    }
    let per_item: Vec<std::result::Result<Vec<SynthSample>, String>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, (image, depth))| {
            if (image.width, image.height) != (depth.width, depth.height) {
                return Err(format!(
                    "depth {}x{} does not match image {}x{}",
                    depth.width, depth.height, image.width, image.height
                ));
            }
            let depth = depth.clone().normalized();
            let item_seed = mix_seed(seed, i as u64);
            (0..variants)
                .map(|v| {
                    let s = mix_seed(item_seed, v as u64);
                    let params = sample_haze_params(&mut ChaCha8Rng::seed_from_u64(s));
                    let t =
                        transmission_from_depth(&depth, params.beta).map_err(|e| e.to_string())?;
                    let hazy = compose_haze(image, &t, &params).map_err(|e| e.to_string())?;
                    Ok(SynthSample {
                        source: i,
                        variant: v,
                        seed: s,
                        params,
                        hazy,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = SynthOutput::default();
    for (i, r) in per_item.into_iter().enumerate() {
        match r {
            Ok(samples) => out.samples.extend(samples),
            Err(reason) => {
                warn!("skipping corpus item {i}: {reason}");
                out.skipped.push((i, reason));
            }
        }
    }
    Ok(out)
}
