//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::StateDict;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates for one ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    names: Vec<String>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    /// Zero moments shaped like `params`; `names` label them in diagnostics.
    pub fn new(config: AdamConfig, names: Vec<String>, params: &[&Tensor<T>]) -> Result<Self> {
        config.validate()?;
        if names.len() != params.len() {
            return Err(Error::Param(format!(
                "{} names for {} parameters",
                names.len(),
                params.len()
            )));
        }
        let m: Vec<_> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Adam {
            config,
            names,
            v: m.clone(),
            m,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One update. `None` gradients count as zero. Every gradient is checked
    /// before anything changes, so a rejected step leaves all state intact.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Option<&Tensor<T>>],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Param(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    name: self.names[i].clone(),
                    expected: self.m[i].shape().to_vec(),
                    found: p.shape().to_vec(),
                });
            }
            let Some(g) = g else { continue };
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    name: format!("{} (gradient)", self.names[i]),
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            let bad: Vec<usize> = g
                .data()
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_finite())
                .map(|(j, _)| j)
                .collect();
            if let (Some(&first), Some(&last)) = (bad.first(), bad.last()) {
                return Err(Error::NonFiniteGradient {
                    tensor: self.names[i].clone(),
                    first,
                    last,
                    count: bad.len(),
                });
            }
        }

        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].map(|g| g.data());
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as `{name}.m` / `{name}.v`; the step count goes in checkpoint metadata.
    pub fn state_dict(&self) -> StateDict {
        let mut out = StateDict::new();
        for (i, n) in self.names.iter().enumerate() {
            out.insert(format!("{n}.m"), self.m[i].cast());
            out.insert(format!("{n}.v"), self.v[i].cast());
        }
        out
    }

    pub fn load_state(&mut self, state: &StateDict, steps: u64) -> Result<()> {
        let mut m = Vec::with_capacity(self.m.len());
        let mut v = Vec::with_capacity(self.v.len());
        for (i, n) in self.names.iter().enumerate() {
            for (suffix, dst) in [("m", &mut m), ("v", &mut v)] {
                let key = format!("{n}.{suffix}");
                let t = state
                    .get(&key)
                    .ok_or_else(|| Error::MissingTensor(key.clone()))?;
                if t.shape() != self.m[i].shape() {
                    return Err(Error::ShapeMismatch {
                        name: key,
                        expected: self.m[i].shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
                dst.push(t.cast());
            }
        }
        if state.len() != 2 * self.names.len() {
            return Err(Error::Param(format!(
                "optimizer state has {} tensors, expected {}",
                state.len(),
                2 * self.names.len()
            )));
        }
        self.m = m;
        self.v = v;
        self.t = steps;
        Ok(())
    }
}
