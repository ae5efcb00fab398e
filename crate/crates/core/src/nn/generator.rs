//! Fully convolutional encoder/decoder that maps a hazy image to a clean one.
//!
//! Six 3×3 convolutions (stride 1, pad 1) followed by six transposed
//! convolutions, all 64 wide, keep the spatial size of the input. Encoder
//! block `k` is `conv → [batchnorm, k > 1] → PReLU`; decoder blocks 1–5 are
//! `deconv → ReLU → batchnorm`; decoder 6 emits three channels into `tanh`.
//! Encoder outputs 2, 4, 6 are added to the inputs of decoders 5, 3, 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, ConvLayer, PRelu};
use super::{eager_forward, Cursor, Module, Named, NamedMut, NormMode, Normalized};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernels::{Activation, BatchStats, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GENERATOR_DEPTH: usize = 6;

/// Output of encoder block `from` is summed into the input of decoder block `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipConnection {
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Feature maps of every hidden layer.
    pub width: usize,
    pub init_std: f64,
    pub leak_init: f64,
    /// One PReLU coefficient per channel instead of one per layer.
    pub per_channel_leak: bool,
    pub skips: Vec<SkipConnection>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 64,
            init_std: 0.02,
            leak_init: 0.25,
            per_channel_leak: false,
            skips: [(2, 5), (4, 3), (6, 1)]
                .map(|(from, to)| SkipConnection { from, to })
                .to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderBlock<T> {
    conv: ConvLayer<T>,
    bn: Option<BatchNorm2d<T>>,
    act: PRelu<T>,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderBlock<T> {
    deconv: ConvLayer<T>,
    /// Absent on the output block, which feeds `tanh` directly.
    bn: Option<BatchNorm2d<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    encoders: Vec<EncoderBlock<T>>,
    decoders: Vec<DecoderBlock<T>>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let w = config.width;
        if w == 0 {
            return Err(Error::Param("generator width must be positive".into()));
        }
        for s in &config.skips {
            if !(1..=GENERATOR_DEPTH).contains(&s.from) || !(1..=GENERATOR_DEPTH).contains(&s.to) {
                return Err(Error::Param(format!(
                    "skip {}→{} outside 1..={GENERATOR_DEPTH}",
                    s.from, s.to
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = ConvGeom::new(1, 1);
        let std = config.init_std;
        let leak_channels = config.per_channel_leak.then_some(w);
        let encoders = (1..=GENERATOR_DEPTH)
            .map(|k| EncoderBlock {
                conv: ConvLayer::new(if k == 1 { 3 } else { w }, w, 3, geom, false, std, &mut rng),
                bn: (k > 1).then(|| BatchNorm2d::new(w)),
                act: PRelu::new(config.leak_init, leak_channels),
            })
            .collect();
        let decoders = (1..=GENERATOR_DEPTH)
            .map(|j| {
                let last = j == GENERATOR_DEPTH;
                DecoderBlock {
                    deconv: ConvLayer::new(
                        w,
                        if last { 3 } else { w },
                        3,
                        geom,
                        true,
                        std,
                        &mut rng,
                    ),
                    bn: (!last).then(|| BatchNorm2d::new(w)),
                }
            })
            .collect();
        Ok(Generator {
            config,
            encoders,
            decoders,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Replaces the skip wiring without touching any weights.
    pub fn set_skips(&mut self, skips: Vec<SkipConnection>) {
        self.config.skips = skips;
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        let mut out =
            Generator::<U>::new(self.config.clone(), 0).expect("config already validated");
        out.load_state(&self.state_dict())
            .expect("identical layout");
        out
    }

    /// Maps (N,3,H,W) in (−1,1) to (N,3,H,W) in (−1,1).
    ///
    /// Returns the output node and, in train mode, the batch statistics of
    /// every normalization layer in forward order.
    pub fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        params: &[G::Node],
        x: &G::Node,
        mode: NormMode,
    ) -> Result<(G::Node, Vec<BatchStats<T>>)> {
        let [_, c, h, w] = g.value(x).dims4("generator")?;
        if c != 3 {
            return Err(Error::shape(
                "generator",
                format!("expected 3 input channels (axis 1), got {c}"),
            ));
        }
        if h < 4 || w < 4 {
            return Err(Error::shape(
                "generator",
                format!("input {h}x{w} smaller than 4x4"),
            ));
        }
        let mut cur = Cursor::new(params);
        let mut stats = Vec::new();
        let mut encoded: Vec<G::Node> = Vec::with_capacity(GENERATOR_DEPTH);
        let mut h = x.clone();
        for block in &self.encoders {
            h = block.conv.forward(g, &h, &mut cur)?;
            if let Some(bn) = &block.bn {
                h = bn.forward(g, &h, &mut cur, mode, &mut stats)?;
            }
            h = block.act.forward(g, &h, &mut cur)?;
            encoded.push(h.clone());
        }
        for (j, block) in self.decoders.iter().enumerate() {
            for skip in self.config.skips.iter().filter(|s| s.to == j + 1) {
                h = g.add(&h, &encoded[skip.from - 1])?;
            }
            h = block.deconv.forward(g, &h, &mut cur)?;
            h = match &block.bn {
                Some(bn) => {
                    let r = g.activation(&h, Activation::Relu)?;
                    bn.forward(g, &r, &mut cur, mode, &mut stats)?
                }
                None => g.activation(&h, Activation::Tanh)?,
            };
        }
        cur.finish()?;
        Ok((h, stats))
    }

    /// Value-only forward pass.
    pub fn infer(&self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        eager_forward(self, x, |g, p, x| Ok(self.forward(g, p, x, mode)?.0))
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn tensors(&self) -> Vec<Named<'_, T>> {
        let mut out = Vec::new();
        for (i, b) in self.encoders.iter().enumerate() {
            let k = i + 1;
            b.conv.collect(&format!("conv{k}"), &mut out);
            if let Some(bn) = &b.bn {
                bn.collect(&format!("bn{k}"), &mut out);
            }
            b.act.collect(&format!("prelu{k}"), &mut out);
        }
        for (i, b) in self.decoders.iter().enumerate() {
            let j = i + 1;
            b.deconv.collect(&format!("deconv{j}"), &mut out);
            if let Some(bn) = &b.bn {
                bn.collect(&format!("dbn{j}"), &mut out);
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        let mut out = Vec::new();
        for (i, b) in self.encoders.iter_mut().enumerate() {
            let k = i + 1;
            b.conv.collect_mut(&format!("conv{k}"), &mut out);
            if let Some(bn) = &mut b.bn {
                bn.collect_mut(&format!("bn{k}"), &mut out);
            }
            b.act.collect_mut(&format!("prelu{k}"), &mut out);
        }
        for (i, b) in self.decoders.iter_mut().enumerate() {
            let j = i + 1;
            b.deconv.collect_mut(&format!("deconv{j}"), &mut out);
            if let Some(bn) = &mut b.bn {
                bn.collect_mut(&format!("dbn{j}"), &mut out);
            }
        }
        out
    }
}

impl<T: Scalar> Normalized<T> for Generator<T> {
    fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        let layers = self
            .encoders
            .iter_mut()
            .filter_map(|b| b.bn.as_mut())
            .chain(self.decoders.iter_mut().filter_map(|b| b.bn.as_mut()));
        let mut n = 0;
        for (bn, s) in layers.zip(stats) {
            bn.update_running(s)?;
            n += 1;
        }
        if n != stats.len() || n != 10 {
            return Err(Error::Param(format!(
                "expected 10 normalization statistics, got {}",
                stats.len()
            )));
        }
        Ok(())
    }
}
