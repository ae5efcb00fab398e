use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Cursor, Named, NamedMut, NormMode, TensorKind};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernels::{BatchStats, ConvGeom, NormStats};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Draws in `f32` and widens, so `f32` and `f64` models built from one seed agree.
pub(crate) fn init_normal<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    std: f64,
    rng: &mut R,
) -> Tensor<T> {
    let normal = Normal::new(0.0f32, std as f32).expect("finite std");
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::lit(normal.sample(rng) as f64))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// A 2-D convolution or transposed convolution with bias.
///
/// Weights are `(out, in, kh, kw)` for convolutions and `(in, out, kh, kw)`
/// for transposed convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geom: ConvGeom,
    pub transposed: bool,
}

impl<T: Scalar> ConvLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        transposed: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let shape = if transposed {
            [in_channels, out_channels, kernel, kernel]
        } else {
            [out_channels, in_channels, kernel, kernel]
        };
        ConvLayer {
            weight: init_normal(&shape, std, rng),
            bias: Tensor::zeros(&[out_channels]),
            geom,
            transposed,
        }
    }

    pub fn from_tensors(
        weight: Tensor<T>,
        bias: Tensor<T>,
        geom: ConvGeom,
        transposed: bool,
    ) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "conv layer",
                format!("weight must be rank 4, got {s:?}"),
            ));
        }
        let out = if transposed { s[1] } else { s[0] };
        if bias.shape() != [out] {
            return Err(Error::shape(
                "conv layer",
                format!("bias {:?} vs {out} output channels", bias.shape()),
            ));
        }
        Ok(ConvLayer {
            weight,
            bias,
            geom,
            transposed,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[usize::from(!self.transposed)]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[usize::from(self.transposed)]
    }

    pub(crate) fn collect<'a>(&'a self, name: &str, out: &mut Vec<Named<'a, T>>) {
        out.push(Named {
            name: format!("{name}.weight"),
            kind: TensorKind::Parameter,
            tensor: &self.weight,
        });
        out.push(Named {
            name: format!("{name}.bias"),
            kind: TensorKind::Parameter,
            tensor: &self.bias,
        });
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, name: &str, out: &mut Vec<NamedMut<'a, T>>) {
        out.push(NamedMut {
            name: format!("{name}.weight"),
            kind: TensorKind::Parameter,
            tensor: &mut self.weight,
        });
        out.push(NamedMut {
            name: format!("{name}.bias"),
            kind: TensorKind::Parameter,
            tensor: &mut self.bias,
        });
    }

    pub(crate) fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        x: &G::Node,
        cur: &mut Cursor<'_, G::Node>,
    ) -> Result<G::Node> {
        let w = cur.next()?;
        let b = cur.next()?;
        if self.transposed {
            g.conv_transpose2d(x, w, Some(b), self.geom)
        } else {
            g.conv2d(x, w, Some(b), self.geom)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the newest batch in the running averages.
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub(crate) fn collect<'a>(&'a self, name: &str, out: &mut Vec<Named<'a, T>>) {
        out.push(Named {
            name: format!("{name}.gamma"),
            kind: TensorKind::Parameter,
            tensor: &self.gamma,
        });
        out.push(Named {
            name: format!("{name}.beta"),
            kind: TensorKind::Parameter,
            tensor: &self.beta,
        });
        out.push(Named {
            name: format!("{name}.running_mean"),
            kind: TensorKind::Buffer,
            tensor: &self.running_mean,
        });
        out.push(Named {
            name: format!("{name}.running_var"),
            kind: TensorKind::Buffer,
            tensor: &self.running_var,
        });
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, name: &str, out: &mut Vec<NamedMut<'a, T>>) {
        out.push(NamedMut {
            name: format!("{name}.gamma"),
            kind: TensorKind::Parameter,
            tensor: &mut self.gamma,
        });
        out.push(NamedMut {
            name: format!("{name}.beta"),
            kind: TensorKind::Parameter,
            tensor: &mut self.beta,
        });
        out.push(NamedMut {
            name: format!("{name}.running_mean"),
            kind: TensorKind::Buffer,
            tensor: &mut self.running_mean,
        });
        out.push(NamedMut {
            name: format!("{name}.running_var"),
            kind: TensorKind::Buffer,
            tensor: &mut self.running_var,
        });
    }

    pub(crate) fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        x: &G::Node,
        cur: &mut Cursor<'_, G::Node>,
        mode: NormMode,
        stats: &mut Vec<BatchStats<T>>,
    ) -> Result<G::Node> {
        let gamma = cur.next()?;
        let beta = cur.next()?;
        let source = match mode {
            NormMode::Train => NormStats::Batch,
            NormMode::Eval => NormStats::Running {
                mean: self.running_mean.data(),
                var: self.running_var.data(),
            },
        };
        let (y, batch) = g.batch_norm(x, gamma, beta, source, T::lit(self.eps))?;
        stats.extend(batch);
        Ok(y)
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats<T>) -> Result<()> {
        let c = self.gamma.len();
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(
                "batchnorm2d",
                format!(
                    "statistics for {} channels, layer has {c}",
                    stats.mean.len()
                ),
            ));
        }
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        let n = T::from_usize(stats.count).unwrap();
        let unbias = if stats.count > 1 {
            n / (n - T::one())
        } else {
            T::one()
        };
        for ch in 0..c {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = keep * *rm + m * stats.mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = keep * *rv + m * stats.var[ch] * unbias;
        }
        Ok(())
    }
}

/// Parametric rectifier `max(0,x) − λ·max(0,−x)` with learned λ.
#[derive(Clone, Debug, PartialEq)]
pub struct PRelu<T> {
    /// One shared value, or one per channel.
    pub leak: Tensor<T>,
}

impl<T: Scalar> PRelu<T> {
    pub fn new(init: f64, per_channel: Option<usize>) -> Self {
        PRelu {
            leak: Tensor::full(&[per_channel.unwrap_or(1)], T::lit(init)),
        }
    }

    pub(crate) fn collect<'a>(&'a self, name: &str, out: &mut Vec<Named<'a, T>>) {
        out.push(Named {
            name: format!("{name}.leak"),
            kind: TensorKind::Parameter,
            tensor: &self.leak,
        });
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, name: &str, out: &mut Vec<NamedMut<'a, T>>) {
        out.push(NamedMut {
            name: format!("{name}.leak"),
            kind: TensorKind::Parameter,
            tensor: &mut self.leak,
        });
    }

    pub(crate) fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        x: &G::Node,
        cur: &mut Cursor<'_, G::Node>,
    ) -> Result<G::Node> {
        let leak = cur.next()?;
        g.prelu(x, leak)
    }
}
