//! Fixed convolutional feature extractor for perceptual losses.
//!
//! Block `i` is `conv3×3 → ReLU → avgpool2`; tap `i` is the output of block
//! `i`, so its spatial size is the input size over `2^i`. Weights never
//! change during training: they are drawn once from a fixed seed or loaded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvLayer;
use super::{eager_forward, Cursor, Module, Named, NamedMut};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernels::{Activation, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_FEATURE_SEED: u64 = 0x5EED;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureNetConfig {
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for FeatureNetConfig {
    fn default() -> Self {
        FeatureNetConfig {
            widths: vec![64, 128, 256, 512],
            seed: DEFAULT_FEATURE_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet<T> {
    layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> FeatureNet<T> {
    /// He-normal weights, zero biases.
    pub fn new(config: &FeatureNetConfig) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::Param(format!(
                "feature widths {:?} must be non-empty and positive",
                config.widths
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut cin = 3;
        let layers = config
            .widths
            .iter()
            .map(|&cout| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let l = ConvLayer::new(cin, cout, 3, ConvGeom::new(1, 1), false, std, &mut rng);
                cin = cout;
                l
            })
            .collect();
        Ok(FeatureNet { layers })
    }

    /// Builds the stack from explicit layers; each must be a 3×3, stride 1,
    /// pad 1 convolution consuming the previous layer's channels.
    pub fn from_layers(layers: Vec<ConvLayer<T>>) -> Result<Self> {
        let mut cin = 3;
        for (i, l) in layers.iter().enumerate() {
            if l.transposed || l.geom != ConvGeom::new(1, 1) || l.weight.shape()[2..] != [3, 3] {
                return Err(Error::Param(format!(
                    "feature layer {} must be a 3x3 stride-1 pad-1 convolution",
                    i + 1
                )));
            }
            if l.in_channels() != cin {
                return Err(Error::shape(
                    "feature net",
                    format!(
                        "layer {} expects {} input channels, previous layer gives {cin}",
                        i + 1,
                        l.in_channels()
                    ),
                ));
            }
            cin = l.out_channels();
        }
        if layers.is_empty() {
            return Err(Error::Param("feature net needs at least one layer".into()));
        }
        Ok(FeatureNet { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn tap_channels(&self, tap: usize) -> Result<usize> {
        self.check_tap(tap)?;
        Ok(self.layers[tap - 1].out_channels())
    }

    fn check_tap(&self, tap: usize) -> Result<()> {
        if tap == 0 || tap > self.layers.len() {
            return Err(Error::Param(format!(
                "feature tap {tap} outside 1..={}",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Activation at `tap` for a (N,3,H,W) batch. Bind `params` with
    /// `trainable = false` so gradients reach only the image.
    pub fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        params: &[G::Node],
        x: &G::Node,
        tap: usize,
    ) -> Result<G::Node> {
        self.check_tap(tap)?;
        let [_, c, h, w] = g.value(x).dims4("feature net")?;
        if c != 3 {
            return Err(Error::shape(
                "feature net",
                format!("expected 3 input channels (axis 1), got {c}"),
            ));
        }
        let scale = 1usize << tap;
        if h < scale || w < scale {
            return Err(Error::shape(
                "feature net",
                format!("input {h}x{w} too small for tap {tap}"),
            ));
        }
        let mut cur = Cursor::new(params);
        let mut h = x.clone();
        for layer in &self.layers[..tap] {
            h = layer.forward(g, &h, &mut cur)?;
            h = g.activation(&h, Activation::Relu)?;
            h = g.avg_pool2d(&h, 2)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor<T>, tap: usize) -> Result<Tensor<T>> {
        eager_forward(self, x, |g, p, x| self.forward(g, p, x, tap))
    }
}

impl<T: Scalar> Module<T> for FeatureNet<T> {
    fn tensors(&self) -> Vec<Named<'_, T>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("conv{}", i + 1), &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&format!("conv{}", i + 1), &mut out);
        }
        out
    }
}
