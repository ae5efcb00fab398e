//! Procedural outdoor scenes with matching depth, for smoke runs and tests.
//!
//! A scene is a sky band at maximal depth over a ground plane whose depth
//! falls off with perspective, plus textured upright boxes standing on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::haze::{mix_seed, DepthMap, SceneImage};

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn color<R: Rng>(rng: &mut R, low: f32, high: f32) -> [f32; 3] {
    [
        rng.random_range(low..high),
        rng.random_range(low..high),
        rng.random_range(low..high),
    ]
}

pub fn procedural_scene<R: Rng>(
    rng: &mut R,
    width: usize,
    height: usize,
) -> (SceneImage, DepthMap) {
    let (w, h) = (width as f32, height as f32);
    let horizon = rng.random_range(0.3..0.55) * h;
    let sky_top = [
        rng.random_range(0.2..0.5),
        rng.random_range(0.4..0.7),
        rng.random_range(0.7..1.0),
    ];
    let sky_low = lerp(sky_top, [0.9, 0.9, 0.95], rng.random_range(0.3..0.8));
    let ground = color(rng, 0.1, 0.6);
    let stripe = rng.random_range(0.5..2.0);
    let far = 1.0f32;

    let ground_depth = |y: f32| (far * 2.0 / (y - horizon + 2.0)).min(far);

    let mut pixels = vec![0.0f32; width * height * 3];
    let mut depth = vec![0.0f32; width * height];
    for y in 0..height {
        let yf = y as f32 + 0.5;
        for x in 0..width {
            let (c, d) = if yf < horizon {
                (lerp(sky_top, sky_low, yf / horizon), far)
            } else {
                let d = ground_depth(yf);
                // stripes shrink with distance
                let phase = (x as f32 - w / 2.0) * stripe / d.max(0.05) * 0.05 + 1.0 / d;
                let shade = 0.75 + 0.25 * phase.sin();
                ([ground[0] * shade, ground[1] * shade, ground[2] * shade], d)
            };
            let i = y * width + x;
            pixels[i * 3..i * 3 + 3].copy_from_slice(&c);
            depth[i] = d;
        }
    }

    // Boxes far to near so nearer ones occlude.
    let count = rng.random_range(2..6);
    let mut boxes: Vec<(f32, f32, f32, f32)> = (0..count)
        .map(|_| {
            let base = rng.random_range(horizon + 1.0..h + 0.5);
            let bh = rng.random_range(0.15..0.6) * (base - horizon + 2.0).min(h * 0.8);
            let bw = rng.random_range(0.1..0.35) * w;
            let x0 = rng.random_range(-0.1 * w..w * 0.95);
            (base, bh, bw, x0)
        })
        .collect();
    boxes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (base, bh, bw, x0) in boxes {
        let c = color(rng, 0.05, 0.95);
        let d = ground_depth(base);
        let period = rng.random_range(2.0..6.0);
        let y0 = (base - bh).max(0.0) as usize;
        let y1 = (base as usize).min(height);
        let xs = x0.max(0.0) as usize;
        let xe = ((x0 + bw) as usize).min(width);
        for y in y0..y1 {
            for x in xs..xe {
                let checker =
                    ((x as f32 / period).floor() + (y as f32 / period).floor()) as i32 % 2 == 0;
                let shade = if checker { 1.0 } else { 0.7 };
                let i = y * width + x;
                pixels[i * 3..i * 3 + 3].copy_from_slice(&[
                    c[0] * shade,
                    c[1] * shade,
                    c[2] * shade,
                ]);
                depth[i] = d;
            }
        }
    }

    let image = SceneImage::new(width, height, pixels)
        .expect("sized above")
        .clamped();
    let depth = DepthMap::new(width, height, depth).expect("sized above");
    (image, depth)
}

/// `count` scenes; scene `i` is seeded from `(seed, i)` alone.
pub fn procedural_corpus(
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<(SceneImage, DepthMap)> {
    (0..count)
        .map(|i| {
            procedural_scene(
                &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64)),
                width,
                height,
            )
        })
        .collect()
}
