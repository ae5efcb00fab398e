//! Training objectives and their weighted combination.
//!
//! Every loss is a graph computation, so the same code yields values on
//! [`Eager`](crate::graph::Eager) and gradients on a [`Tape`](crate::tape::Tape).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Unary};
use crate::nn::FeatureNet;
use crate::scalar::Scalar;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Named weight presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Gen,
    CandyL1_9P,
    CandyL2_9P,
    CandyL1_23P,
    CandyL2_23P,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Gen,
        Variant::CandyL1_9P,
        Variant::CandyL2_9P,
        Variant::CandyL1_23P,
        Variant::CandyL2_23P,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gen => "GEN",
            Variant::CandyL1_9P => "CANDY-L1-9P",
            Variant::CandyL2_9P => "CANDY-L2-9P",
            Variant::CandyL1_23P => "CANDY-L1-23P",
            Variant::CandyL2_23P => "CANDY-L2-23P",
        }
    }

    pub fn weights(self) -> LossWeights {
        let (adv, l2, s1, tap) = match self {
            Variant::Gen => (0.0, 1.0, 0.0, 2),
            Variant::CandyL1_9P => (1.0, 0.0, 1.0, 2),
            Variant::CandyL2_9P => (1.0, 1.0, 0.0, 2),
            Variant::CandyL1_23P => (1.0, 0.0, 1.0, 4),
            Variant::CandyL2_23P => (1.0, 1.0, 0.0, 4),
        };
        LossWeights {
            adv,
            l2,
            s1,
            feat: 1.0,
            tap,
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Variant::Gen
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected one of GEN, CANDY-L1-9P, CANDY-L2-9P, CANDY-L1-23P, CANDY-L2-23P)")))
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub adv: f64,
    pub l2: f64,
    pub s1: f64,
    pub feat: f64,
    /// Feature tap, 1-based.
    pub tap: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Variant::Gen.weights()
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.adv, self.l2, self.s1, self.feat];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {w:?}"
            )));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        if self.tap == 0 {
            return Err(Error::Config("feature tap must be at least 1".into()));
        }
        Ok(())
    }
}

/// `mean((output - target)²)`
pub fn l2_loss<T: Scalar, G: Graph<T>>(
    g: &mut G,
    target: &G::Node,
    output: &G::Node,
) -> Result<G::Node> {
    let d = g.sub(output, target)?;
    let sq = g.unary(&d, Unary::Square)?;
    g.mean(&sq)
}

/// Mean of the unit-threshold Huber penalty of `target - output`.
pub fn smooth_l1_loss<T: Scalar, G: Graph<T>>(
    g: &mut G,
    target: &G::Node,
    output: &G::Node,
) -> Result<G::Node> {
    let d = g.sub(target, output)?;
    let h = g.unary(&d, Unary::SmoothL1)?;
    g.mean(&h)
}

/// Mean squared difference of the tap activations. `net_params` must be
/// bound non-trainable.
pub fn feature_loss<T: Scalar, G: Graph<T>>(
    g: &mut G,
    net: &FeatureNet<T>,
    net_params: &[G::Node],
    target: &G::Node,
    output: &G::Node,
    tap: usize,
) -> Result<G::Node> {
    let ft = net.forward(g, net_params, target, tap)?;
    let fo = net.forward(g, net_params, output, tap)?;
    l2_loss(g, &ft, &fo)
}

fn mean_log<T: Scalar, G: Graph<T>>(g: &mut G, p: &G::Node) -> Result<G::Node> {
    let l = g.unary(p, Unary::ClampedLog(T::lit(PROB_EPS)))?;
    g.mean(&l)
}

/// `-mean(ln d_real) - mean(ln(1 - d_fake))`
pub fn adversarial_d_loss<T: Scalar, G: Graph<T>>(
    g: &mut G,
    d_real: &G::Node,
    d_fake: &G::Node,
) -> Result<G::Node> {
    let real = mean_log(g, d_real)?;
    let inv = g.unary(d_fake, Unary::Affine(-T::one(), T::one()))?;
    let fake = mean_log(g, &inv)?;
    let s = g.add(&real, &fake)?;
    g.unary(&s, Unary::Affine(-T::one(), T::zero()))
}

/// Non-saturating generator objective `-mean(ln d_fake)`.
pub fn adversarial_g_loss<T: Scalar, G: Graph<T>>(g: &mut G, d_fake: &G::Node) -> Result<G::Node> {
    let l = mean_log(g, d_fake)?;
    g.unary(&l, Unary::Affine(-T::one(), T::zero()))
}

/// Loss terms of one generator evaluation; absent terms were not computed.
#[derive(Clone, Debug, Default)]
pub struct LossComponents<N> {
    pub adv: Option<N>,
    pub l2: Option<N>,
    pub s1: Option<N>,
    pub feat: Option<N>,
}

/// Scalar values of every computed term and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv: Option<f64>,
    pub l2: Option<f64>,
    pub s1: Option<f64>,
    pub feat: Option<f64>,
    pub total: f64,
}

impl LossReport {
    /// Weighted sum of the content terms (everything except `adv`).
    pub fn content(&self, w: &LossWeights) -> f64 {
        self.l2.unwrap_or(0.0) * w.l2
            + self.s1.unwrap_or(0.0) * w.s1
            + self.feat.unwrap_or(0.0) * w.feat
    }
}

/// `Σ wₖ·Lₖ` over the terms with positive weight. Every computed term is
/// reported; a positively weighted term that is missing is an error.
pub fn combined_loss<T: Scalar, G: Graph<T>>(
    g: &mut G,
    weights: &LossWeights,
    parts: &LossComponents<G::Node>,
) -> Result<(G::Node, LossReport)> {
    let terms = [
        ("adv", weights.adv, &parts.adv),
        ("l2", weights.l2, &parts.l2),
        ("s1", weights.s1, &parts.s1),
        ("feat", weights.feat, &parts.feat),
    ];
    let mut total: Option<G::Node> = None;
    let mut values = [None; 4];
    for (i, (name, w, node)) in terms.into_iter().enumerate() {
        if let Some(n) = node {
            values[i] = Some(g.scalar_value(n).as_f64());
        }
        if w == 0.0 {
            continue;
        }
        let n = node.as_ref().ok_or_else(|| {
            Error::Param(format!(
                "loss term `{name}` has weight {w} but was not computed"
            ))
        })?;
        let scaled = if w == 1.0 {
            n.clone()
        } else {
            g.unary(n, Unary::Affine(T::lit(w), T::zero()))?
        };
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(&t, &scaled)?,
        });
    }
    let total = total.ok_or_else(|| Error::Param("all loss weights are zero".into()))?;
    let report = LossReport {
        adv: values[0],
        l2: values[1],
        s1: values[2],
        feat: values[3],
        total: g.scalar_value(&total).as_f64(),
    };
    Ok((total, report))
}
