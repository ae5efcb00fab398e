//! Reverse-mode automatic differentiation over a linear trace.
//!
//! Every operation appends one node; node order is execution order and hence
//! a topological order. [`Tape::backward`] walks the trace once in reverse.
//! Gradients reaching leaves that require them accumulate into the leaf's
//! persistent gradient until [`Tape::zero_grad`] is called.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::graph::{Graph, Unary};
use crate::kernels::{self, BatchStats, ConvGeom, NormStats};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
        transposed: bool,
    },
    Norm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch: bool,
    },
    PRelu {
        x: usize,
        leak: usize,
    },
    Unary {
        x: usize,
        op: Unary<T>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Concat {
        a: usize,
        b: usize,
    },
    Slice {
        x: usize,
        start: usize,
    },
    Pool {
        x: usize,
        k: usize,
    },
    Sum(usize),
    Mean(usize),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } => [Some(x), Some(w), b].into_iter().flatten().collect(),
            Op::Norm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::PRelu { x, leak } => vec![x, leak],
            Op::Unary { x, .. }
            | Op::Slice { x, .. }
            | Op::Pool { x, .. }
            | Op::Sum(x)
            | Op::Mean(x) => vec![x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat { a, b } => vec![a, b],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn index(&self, v: &Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn needs(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.needs(&op.inputs());
        self.push(value, op, rg)
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: &Var) -> Option<&Tensor<T>> {
        let i = self.index(v).ok()?;
        self.nodes[i].grad.as_ref()
    }

    pub fn requires_grad(&self, v: &Var) -> bool {
        self.index(v)
            .map(|i| self.nodes[i].requires_grad)
            .unwrap_or(false)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Propagates d`loss`/d(leaf) into every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.index(&loss)?;
        let shape = self.nodes[root].value.shape().to_vec();
        if self.nodes[root].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(&shape));
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (j, gj) in self.input_grads(i, &g)? {
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&gj),
                    slot => *slot = Some(gj),
                }
            }
        }
        Ok(())
    }

    /// Chain rule for node `i` given its output gradient `g`.
    fn input_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let node = &self.nodes[i];
        Ok(match &node.op {
            Op::Leaf => vec![],
            &Op::Conv {
                x,
                w,
                b,
                geom,
                transposed,
            } => {
                let backward = if transposed {
                    kernels::conv_transpose2d_backward
                } else {
                    kernels::conv2d_backward
                };
                let (dx, dw, db) = backward(self.val(x), self.val(w), b.is_some(), g, geom)?;
                let mut out = vec![(x, dx), (w, dw)];
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((b, db));
                }
                out
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            } => {
                let (dx, dg, db) =
                    kernels::batch_norm_backward(g, xhat, self.val(*gamma), inv_std, *batch);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            &Op::PRelu { x, leak } => {
                let (dx, dl) = kernels::prelu_backward(self.val(x), self.val(leak), g);
                vec![(x, dx), (leak, dl)]
            }
            &Op::Unary { x, op } => {
                let xv = self.val(x).data();
                let yv = node.value.data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(&gi, (&xi, &yi))| gi * op.derivative(xi, yi))
                    .collect();
                vec![(x, Tensor::from_vec(g.shape(), data)?)]
            }
            &Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            &Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|v| -v))],
            &Op::Mul(a, b) => vec![
                (a, g.zip_map(self.val(b), "mul", |gi, bi| gi * bi)?),
                (b, g.zip_map(self.val(a), "mul", |gi, ai| gi * ai)?),
            ],
            &Op::Concat { a, b } => {
                let ca = self.val(a).shape()[1];
                let cb = self.val(b).shape()[1];
                vec![
                    (a, kernels::slice_channels(g, 0, ca)?),
                    (b, kernels::slice_channels(g, ca, cb)?),
                ]
            }
            &Op::Slice { x, start } => {
                vec![(x, kernels::unslice_channels(self.val(x).shape(), start, g))]
            }
            &Op::Pool { x, k } => {
                vec![(x, kernels::avg_pool2d_backward(self.val(x).shape(), k, g))]
            }
            &Op::Sum(x) => vec![(x, Tensor::full(self.val(x).shape(), g.data()[0]))],
            &Op::Mean(x) => {
                let xs = self.val(x);
                let scale = g.data()[0] / T::from_usize(xs.len()).unwrap();
                vec![(x, Tensor::full(xs.shape(), scale))]
            }
        })
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Node = Var;

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn parameter(&mut self, value: &Tensor<T>, trainable: bool) -> Var {
        self.leaf(value.clone(), trainable)
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor<T> {
        let i = self
            .index(node)
            .expect("variable does not belong to this tape");
        self.val(i)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, geom: ConvGeom) -> Result<Var> {
        let (x, w) = (self.index(x)?, self.index(w)?);
        let b = b.map(|b| self.index(b)).transpose()?;
        let y = kernels::conv2d(self.val(x), self.val(w), b.map(|b| self.val(b)), geom)?;
        Ok(self.record(
            y,
            Op::Conv {
                x,
                w,
                b,
                geom,
                transposed: false,
            },
        ))
    }

    fn conv_transpose2d(
        &mut self,
        x: &Var,
        w: &Var,
        b: Option<&Var>,
        geom: ConvGeom,
    ) -> Result<Var> {
        let (x, w) = (self.index(x)?, self.index(w)?);
        let b = b.map(|b| self.index(b)).transpose()?;
        let y = kernels::conv_transpose2d(self.val(x), self.val(w), b.map(|b| self.val(b)), geom)?;
        Ok(self.record(
            y,
            Op::Conv {
                x,
                w,
                b,
                geom,
                transposed: true,
            },
        ))
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        stats: NormStats<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (x, gamma, beta) = (self.index(x)?, self.index(gamma)?, self.index(beta)?);
        let batch = matches!(stats, NormStats::Batch);
        let out = kernels::batch_norm(self.val(x), self.val(gamma), self.val(beta), stats, eps)?;
        let var = self.record(
            out.y,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                batch,
            },
        );
        Ok((var, out.stats))
    }

    fn prelu(&mut self, x: &Var, leak: &Var) -> Result<Var> {
        let (x, leak) = (self.index(x)?, self.index(leak)?);
        let y = kernels::prelu(self.val(x), self.val(leak))?;
        Ok(self.record(y, Op::PRelu { x, leak }))
    }

    fn unary(&mut self, x: &Var, op: Unary<T>) -> Result<Var> {
        let x = self.index(x)?;
        let y = op.apply(self.val(x));
        Ok(self.record(y, Op::Unary { x, op }))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (self.index(a)?, self.index(b)?);
        let y = self.val(a).zip_map(self.val(b), "add", |x, y| x + y)?;
        Ok(self.record(y, Op::Add(a, b)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (self.index(a)?, self.index(b)?);
        let y = self.val(a).zip_map(self.val(b), "sub", |x, y| x - y)?;
        Ok(self.record(y, Op::Sub(a, b)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (self.index(a)?, self.index(b)?);
        let y = self.val(a).zip_map(self.val(b), "mul", |x, y| x * y)?;
        Ok(self.record(y, Op::Mul(a, b)))
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (self.index(a)?, self.index(b)?);
        let y = kernels::concat_channels(self.val(a), self.val(b))?;
        Ok(self.record(y, Op::Concat { a, b }))
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let x = self.index(x)?;
        let y = kernels::slice_channels(self.val(x), start, len)?;
        Ok(self.record(y, Op::Slice { x, start }))
    }

    fn avg_pool2d(&mut self, x: &Var, k: usize) -> Result<Var> {
        let x = self.index(x)?;
        let y = kernels::avg_pool2d(self.val(x), k)?;
        Ok(self.record(y, Op::Pool { x, k }))
    }

    fn sum(&mut self, x: &Var) -> Result<Var> {
        let x = self.index(x)?;
        let y = Tensor::scalar(self.val(x).sum());
        Ok(self.record(y, Op::Sum(x)))
    }

    fn mean(&mut self, x: &Var) -> Result<Var> {
        let x = self.index(x)?;
        let y = Tensor::scalar(self.val(x).mean());
        Ok(self.record(y, Op::Mean(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let s = tape.sum(&x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_sum_gives_twice_x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap(), true);
        let xx = tape.mul(&x, &x).unwrap();
        let s = tape.sum(&xx).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap(), true);
        let sq = tape.unary(&x, Unary::Square).unwrap();
        let s = tape.sum(&sq).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[4.0, -8.0]);
        tape.zero_grad();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[3]), true);
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn foreign_var_is_rejected() {
        let mut a = Tape::<f32>::new();
        let mut b = Tape::<f32>::new();
        let x = a.leaf(Tensor::scalar(1.0), true);
        let _ = b.leaf(Tensor::scalar(1.0), true);
        assert!(matches!(b.backward(x), Err(Error::ForeignVar)));
        assert!(b.sum(&x).is_err());
    }

    #[test]
    fn shared_input_accumulates_from_both_uses() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        let b = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap(), true);
        let c = tape.add(&a, &b).unwrap();
        assert_eq!(tape.value(&c).data(), &[4.0, 6.0]);
        let d = tape.add(&c, &a).unwrap();
        let s = tape.sum(&d).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(&a).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(tape.grad(&b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        let k = tape.constant(Tensor::from_vec(&[2], vec![5.0, 5.0]).unwrap());
        let p = tape.mul(&a, &k).unwrap();
        let s = tape.sum(&p).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(&k).is_none());
        assert_eq!(tape.grad(&a).unwrap().data(), &[5.0, 5.0]);
    }
}
