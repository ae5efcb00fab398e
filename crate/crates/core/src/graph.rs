//! The operation set shared by recorded (differentiable) and eager execution.
//!
//! Network and loss code is written once against [`Graph`]; running it on a
//! [`Tape`](crate::tape::Tape) records a differentiable trace, running it on
//! [`Eager`] computes values only and frees intermediates as soon as they are
//! dropped.

use std::sync::Arc;

use crate::error::Result;
use crate::kernels::{self, Activation, BatchStats, ConvGeom, NormStats};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise unary maps with a closed-form derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary<T> {
    Act(Activation),
    Square,
    SmoothL1,
    /// `ln(clamp(x, eps, 1 - eps))`
    ClampedLog(T),
    /// `scale * x + shift`
    Affine(T, T),
}

impl<T: Scalar> Unary<T> {
    pub(crate) fn forward(self, x: T) -> T {
        match self {
            Unary::Act(a) => a.forward(x),
            Unary::Square => x * x,
            Unary::SmoothL1 => kernels::smooth_l1(x),
            Unary::ClampedLog(eps) => x.clamp_nan(eps, T::one() - eps).ln(),
            Unary::Affine(s, b) => s * x + b,
        }
    }

    pub(crate) fn derivative(self, x: T, y: T) -> T {
        match self {
            Unary::Act(a) => a.derivative(x, y),
            Unary::Square => T::lit(2.0) * x,
            Unary::SmoothL1 => kernels::smooth_l1_grad(x),
            Unary::ClampedLog(eps) => {
                if x < eps || x > T::one() - eps {
                    T::zero()
                } else {
                    T::one() / x
                }
            }
            Unary::Affine(s, _) => s,
        }
    }

    pub(crate) fn apply(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.forward(v))
    }
}

/// Execution context for network and loss code.
pub trait Graph<T: Scalar> {
    type Node: Clone;

    fn constant(&mut self, value: Tensor<T>) -> Self::Node;

    /// Registers a model parameter; on a tape, `trainable` parameters receive gradients.
    fn parameter(&mut self, value: &Tensor<T>, trainable: bool) -> Self::Node;

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::Node,
        w: &Self::Node,
        b: Option<&Self::Node>,
        geom: ConvGeom,
    ) -> Result<Self::Node>;

    fn conv_transpose2d(
        &mut self,
        x: &Self::Node,
        w: &Self::Node,
        b: Option<&Self::Node>,
        geom: ConvGeom,
    ) -> Result<Self::Node>;

    /// Batch normalization; returns the batch statistics when normalizing with them.
    fn batch_norm(
        &mut self,
        x: &Self::Node,
        gamma: &Self::Node,
        beta: &Self::Node,
        stats: NormStats<'_, T>,
        eps: T,
    ) -> Result<(Self::Node, Option<BatchStats<T>>)>;

    fn prelu(&mut self, x: &Self::Node, leak: &Self::Node) -> Result<Self::Node>;

    fn unary(&mut self, x: &Self::Node, op: Unary<T>) -> Result<Self::Node>;

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;

    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;

    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;

    fn concat_channels(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;

    fn slice_channels(&mut self, x: &Self::Node, start: usize, len: usize) -> Result<Self::Node>;

    fn avg_pool2d(&mut self, x: &Self::Node, k: usize) -> Result<Self::Node>;

    /// Sum of all elements as a rank-0 tensor.
    fn sum(&mut self, x: &Self::Node) -> Result<Self::Node>;

    /// Mean of all elements as a rank-0 tensor.
    fn mean(&mut self, x: &Self::Node) -> Result<Self::Node>;

    fn activation(&mut self, x: &Self::Node, kind: Activation) -> Result<Self::Node> {
        self.unary(x, Unary::Act(kind))
    }

    fn scalar_value(&self, node: &Self::Node) -> T {
        self.value(node).data()[0]
    }
}

/// Value-only execution; nodes are reference-counted tensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Scalar> Graph<T> for Eager {
    type Node = Arc<Tensor<T>>;

    fn constant(&mut self, value: Tensor<T>) -> Self::Node {
        Arc::new(value)
    }

    fn parameter(&mut self, value: &Tensor<T>, _trainable: bool) -> Self::Node {
        Arc::new(value.clone())
    }

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor<T> {
        node
    }

    fn conv2d(
        &mut self,
        x: &Self::Node,
        w: &Self::Node,
        b: Option<&Self::Node>,
        geom: ConvGeom,
    ) -> Result<Self::Node> {
        Ok(Arc::new(kernels::conv2d(x, w, b.map(|b| &**b), geom)?))
    }

    fn conv_transpose2d(
        &mut self,
        x: &Self::Node,
        w: &Self::Node,
        b: Option<&Self::Node>,
        geom: ConvGeom,
    ) -> Result<Self::Node> {
        Ok(Arc::new(kernels::conv_transpose2d(
            x,
            w,
            b.map(|b| &**b),
            geom,
        )?))
    }

    fn batch_norm(
        &mut self,
        x: &Self::Node,
        gamma: &Self::Node,
        beta: &Self::Node,
        stats: NormStats<'_, T>,
        eps: T,
    ) -> Result<(Self::Node, Option<BatchStats<T>>)> {
        let out = kernels::batch_norm(x, gamma, beta, stats, eps)?;
        Ok((Arc::new(out.y), out.stats))
    }

    fn prelu(&mut self, x: &Self::Node, leak: &Self::Node) -> Result<Self::Node> {
        Ok(Arc::new(kernels::prelu(x, leak)?))
    }

    fn unary(&mut self, x: &Self::Node, op: Unary<T>) -> Result<Self::Node> {
        Ok(Arc::new(op.apply(x)))
    }

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        Ok(Arc::new(a.zip_map(b, "add", |x, y| x + y)?))
    }

    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        Ok(Arc::new(a.zip_map(b, "sub", |x, y| x - y)?))
    }

    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        Ok(Arc::new(a.zip_map(b, "mul", |x, y| x * y)?))
    }

    fn concat_channels(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        Ok(Arc::new(kernels::concat_channels(a, b)?))
    }

    fn slice_channels(&mut self, x: &Self::Node, start: usize, len: usize) -> Result<Self::Node> {
        Ok(Arc::new(kernels::slice_channels(x, start, len)?))
    }

    fn avg_pool2d(&mut self, x: &Self::Node, k: usize) -> Result<Self::Node> {
        Ok(Arc::new(kernels::avg_pool2d(x, k)?))
    }

    fn sum(&mut self, x: &Self::Node) -> Result<Self::Node> {
        Ok(Arc::new(Tensor::scalar(x.sum())))
    }

    fn mean(&mut self, x: &Self::Node) -> Result<Self::Node> {
        Ok(Arc::new(Tensor::scalar(x.mean())))
    }
}
