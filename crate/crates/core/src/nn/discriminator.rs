//! Patch discriminator over (hazy, candidate) pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, ConvLayer};
use super::{eager_forward, Cursor, Module, Named, NamedMut, NormMode, Normalized};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernels::{Activation, BatchStats, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Output channels of each stride-2 convolution; the last must be 1.
    pub widths: Vec<usize>,
    pub init_std: f64,
    pub negative_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![48, 48, 96, 96, 192, 192, 1],
            init_std: 0.02,
            negative_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block<T> {
    conv: ConvLayer<T>,
    bn: Option<BatchNorm2d<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    blocks: Vec<Block<T>>,
}

impl<T: Scalar> Discriminator<T> {
    pub const INPUT_CHANNELS: usize = 6;

    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let n = config.widths.len();
        if n < 2 || config.widths.last() != Some(&1) || config.widths.contains(&0) {
            return Err(Error::Param(format!(
                "discriminator widths {:?} must have ≥ 2 entries ending in 1",
                config.widths
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = ConvGeom::new(2, 1);
        let mut cin = Self::INPUT_CHANNELS;
        let blocks = config
            .widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let conv = ConvLayer::new(cin, cout, 3, geom, false, config.init_std, &mut rng);
                cin = cout;
                Block {
                    conv,
                    bn: (i > 0 && i + 1 < n).then(|| BatchNorm2d::new(cout)),
                }
            })
            .collect();
        Ok(Discriminator { config, blocks })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Spatial extent of the probability map for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let halve = |v: usize| (0..self.blocks.len()).fold(v, |v, _| v.div_ceil(2));
        (halve(h), halve(w))
    }

    /// Maps a (N,6,H,W) pair tensor to the (N,1,h,w) map of patch probabilities.
    pub fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        params: &[G::Node],
        pair: &G::Node,
        mode: NormMode,
    ) -> Result<(G::Node, Vec<BatchStats<T>>)> {
        let [_, c, _, _] = g.value(pair).dims4("discriminator")?;
        if c != Self::INPUT_CHANNELS {
            return Err(Error::shape(
                "discriminator",
                format!("expected 6 input channels (axis 1), got {c}"),
            ));
        }
        let mut cur = Cursor::new(params);
        let mut stats = Vec::new();
        let last = self.blocks.len() - 1;
        let mut h = pair.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.conv.forward(g, &h, &mut cur)?;
            if let Some(bn) = &block.bn {
                h = bn.forward(g, &h, &mut cur, mode, &mut stats)?;
            }
            let act = if i == last {
                Activation::Sigmoid
            } else {
                Activation::LeakyRelu(self.config.negative_slope)
            };
            h = g.activation(&h, act)?;
        }
        cur.finish()?;
        Ok((h, stats))
    }

    /// Probability map and its mean, without recording gradients.
    pub fn infer(&self, pair: &Tensor<T>, mode: NormMode) -> Result<(Tensor<T>, T)> {
        let map = eager_forward(self, pair, |g, p, x| Ok(self.forward(g, p, x, mode)?.0))?;
        let mean = map.mean();
        Ok((map, mean))
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn tensors(&self) -> Vec<Named<'_, T>> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.conv.collect(&format!("conv{}", i + 1), &mut out);
            if let Some(bn) = &b.bn {
                bn.collect(&format!("bn{}", i + 1), &mut out);
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.conv.collect_mut(&format!("conv{}", i + 1), &mut out);
            if let Some(bn) = &mut b.bn {
                bn.collect_mut(&format!("bn{}", i + 1), &mut out);
            }
        }
        out
    }
}

impl<T: Scalar> Normalized<T> for Discriminator<T> {
    fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        let layers: Vec<_> = self
            .blocks
            .iter_mut()
            .filter_map(|b| b.bn.as_mut())
            .collect();
        if layers.len() != stats.len() {
            return Err(Error::Param(format!(
                "expected {} normalization statistics, got {}",
                layers.len(),
                stats.len()
            )));
        }
        for (bn, s) in layers.into_iter().zip(stats) {
            bn.update_running(s)?;
        }
        Ok(())
    }
}
