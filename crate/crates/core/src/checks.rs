//! The standard finite-difference suite over every differentiable operation,
//! the losses and the composed generator.
//!
//! Each case reduces its output to a scalar through a fixed random projection
//! `Σ wᵢ·yᵢ`, so every output element contributes a gradient of order one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport, Probe};
use crate::graph::{Graph, Unary};
use crate::kernels::{Activation, ConvGeom, NormStats};
use crate::loss::{
    adversarial_d_loss, adversarial_g_loss, combined_loss, feature_loss, l2_loss, smooth_l1_loss,
};
use crate::loss::{LossComponents, Variant};
use crate::nn::{FeatureNet, FeatureNetConfig, Generator, GeneratorConfig, Module, NormMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_EPS: f64 = 1e-6;
pub const OP_THRESHOLD: f64 = 1e-4;
pub const GENERATOR_THRESHOLD: f64 = 1e-3;

pub const CASES: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "batchnorm2d",
    "batchnorm2d_eval",
    "prelu",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "avg_pool2d",
    "concat_slice",
    "l2_loss",
    "smooth_l1_loss",
    "feature_loss",
    "adversarial_d_loss",
    "adversarial_g_loss",
    "combined_loss",
    "generator",
];

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub threshold: f64,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.threshold
    }
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

fn project(t: &mut Tape<f64>, y: &Var, seed: u64) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let w = t.constant(Tensor::uniform(
        &shape,
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed),
    ));
    let p = t.mul(y, &w)?;
    t.sum(&p)
}

fn unary_case(act: Activation, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    // keep samples away from kinks so the central difference is smooth
    let x = randn(&[2, 3, 4, 4], rng).map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v });
    grad_check(&[x], FD_EPS, Probe::All, |t, v| {
        let y = t.activation(&v[0], act)?;
        project(t, &y, 11)
    })
}

/// Runs one named case; `None` if the name is unknown.
pub fn run_case(name: &str) -> Option<Result<CheckResult>> {
    let (name, threshold) = CASES.iter().find(|&&c| c == name).map(|&c| {
        (
            c,
            if c == "generator" {
                GENERATOR_THRESHOLD
            } else {
                OP_THRESHOLD
            },
        )
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ name.len() as u64);
    let r = match name {
        "conv2d" => {
            let x = randn(&[2, 3, 6, 5], &mut rng);
            let w = randn(&[4, 3, 3, 3], &mut rng);
            let b = randn(&[4], &mut rng);
            grad_check(&[x, w, b], FD_EPS, Probe::All, |t, v| {
                let y = t.conv2d(&v[0], &v[1], Some(&v[2]), ConvGeom::new(2, 1))?;
                project(t, &y, 1)
            })
        }
        "conv_transpose2d" => {
            let x = randn(&[2, 3, 4, 3], &mut rng);
            let w = randn(&[3, 2, 3, 3], &mut rng);
            let b = randn(&[2], &mut rng);
            grad_check(&[x, w, b], FD_EPS, Probe::All, |t, v| {
                let y = t.conv_transpose2d(&v[0], &v[1], Some(&v[2]), ConvGeom::new(2, 1))?;
                project(t, &y, 2)
            })
        }
        "batchnorm2d" => {
            let x = randn(&[3, 2, 3, 3], &mut rng);
            let g = randn(&[2], &mut rng);
            let b = randn(&[2], &mut rng);
            grad_check(&[x, g, b], FD_EPS, Probe::All, |t, v| {
                let (y, _) = t.batch_norm(&v[0], &v[1], &v[2], NormStats::Batch, 1e-5)?;
                project(t, &y, 3)
            })
        }
        "batchnorm2d_eval" => {
            let x = randn(&[2, 2, 3, 3], &mut rng);
            let g = randn(&[2], &mut rng);
            let b = randn(&[2], &mut rng);
            grad_check(&[x, g, b], FD_EPS, Probe::All, |t, v| {
                let stats = NormStats::Running {
                    mean: &[0.3, -0.2],
                    var: &[1.5, 0.7],
                };
                let (y, _) = t.batch_norm(&v[0], &v[1], &v[2], stats, 1e-5)?;
                project(t, &y, 4)
            })
        }
        "prelu" => {
            let x =
                randn(&[2, 3, 3, 3], &mut rng).map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v });
            let leak = Tensor::from_vec(&[3], vec![0.25, -0.1, 0.6]).unwrap();
            grad_check(&[x, leak], FD_EPS, Probe::All, |t, v| {
                let y = t.prelu(&v[0], &v[1])?;
                project(t, &y, 5)
            })
        }
        "relu" => unary_case(Activation::Relu, &mut rng),
        "leaky_relu" => unary_case(Activation::LeakyRelu(0.2), &mut rng),
        "tanh" => unary_case(Activation::Tanh, &mut rng),
        "sigmoid" => unary_case(Activation::Sigmoid, &mut rng),
        "avg_pool2d" => {
            let x = randn(&[2, 2, 4, 6], &mut rng);
            grad_check(&[x], FD_EPS, Probe::All, |t, v| {
                let y = t.avg_pool2d(&v[0], 2)?;
                project(t, &y, 6)
            })
        }
        "concat_slice" => {
            let a = randn(&[2, 2, 3, 3], &mut rng);
            let b = randn(&[2, 3, 3, 3], &mut rng);
            grad_check(&[a, b], FD_EPS, Probe::All, |t, v| {
                let c = t.concat_channels(&v[0], &v[1])?;
                let s = t.slice_channels(&c, 1, 3)?;
                let sq = t.unary(&s, Unary::Square)?;
                project(t, &sq, 7)
            })
        }
        "l2_loss" => {
            let y = randn(&[2, 3, 4, 4], &mut rng);
            let o = randn(&[2, 3, 4, 4], &mut rng);
            grad_check(&[y, o], FD_EPS, Probe::All, |t, v| l2_loss(t, &v[0], &v[1]))
        }
        "smooth_l1_loss" => {
            // differences in both branches, away from |d| = 1
            let y: Tensor<f64> = Tensor::uniform(&[2, 3, 4, 4], -2.0, 2.0, &mut rng);
            let o = Tensor::<f64>::zeros(&[2, 3, 4, 4]);
            let y = y.map(|d: f64| {
                if (d.abs() - 1.0).abs() < 1e-2 {
                    d * 1.05
                } else {
                    d
                }
            });
            grad_check(&[y, o], FD_EPS, Probe::All, |t, v| {
                smooth_l1_loss(t, &v[0], &v[1])
            })
        }
        "feature_loss" => {
            let net = FeatureNet::<f64>::new(&FeatureNetConfig::default()).expect("default config");
            let target = Tensor::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
            let output = Tensor::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
            let target_c = target.clone();
            grad_check(
                &[output],
                FD_EPS,
                Probe::Sample {
                    per_input: 48,
                    seed: 8,
                },
                move |t, v| {
                    let p = net.bind(t, false);
                    let y = t.constant(target_c.clone());
                    feature_loss(t, &net, &p, &y, &v[0], 2)
                },
            )
        }
        "adversarial_d_loss" => {
            let r = Tensor::uniform(&[2, 1, 2, 2], 0.05, 0.95, &mut rng);
            let f = Tensor::uniform(&[2, 1, 2, 2], 0.05, 0.95, &mut rng);
            grad_check(&[r, f], FD_EPS, Probe::All, |t, v| {
                adversarial_d_loss(t, &v[0], &v[1])
            })
        }
        "adversarial_g_loss" => {
            let f = Tensor::uniform(&[2, 1, 2, 2], 0.05, 0.95, &mut rng);
            grad_check(&[f], FD_EPS, Probe::All, |t, v| {
                adversarial_g_loss(t, &v[0])
            })
        }
        "combined_loss" => {
            let y = randn(&[1, 3, 4, 4], &mut rng);
            let o = randn(&[1, 3, 4, 4], &mut rng).map(|v| v * 0.5);
            let d = Tensor::uniform(&[1, 1, 2, 2], 0.05, 0.95, &mut rng);
            let mut w = Variant::CandyL2_9P.weights();
            w.adv = 0.3;
            w.feat = 0.0;
            w.s1 = 2.0;
            grad_check(&[y, o, d], FD_EPS, Probe::All, move |t, v| {
                let parts = LossComponents {
                    adv: Some(adversarial_g_loss(t, &v[2])?),
                    l2: Some(l2_loss(t, &v[0], &v[1])?),
                    s1: Some(smooth_l1_loss(t, &v[0], &v[1])?),
                    feat: None,
                };
                Ok(combined_loss(t, &w, &parts)?.0)
            })
        }
        "generator" => {
            let gen =
                Generator::<f64>::new(GeneratorConfig::default(), 21).expect("default config");
            let x = Tensor::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut rng);
            // Biases feeding batch normalization have identically zero gradient,
            // so a relative comparison only sees roundoff; they stay constant.
            let mut free = vec![x];
            let mut fixed = Vec::new();
            for (name, p) in gen.parameter_names().into_iter().zip(gen.parameters()) {
                // move biases and norm shifts off their zero init so every path carries signal
                let noise = Tensor::<f64>::randn(p.shape(), 0.02, &mut rng);
                let p = p
                    .zip_map(&noise, "perturb", |a, b| a + b)
                    .expect("same shape");
                let before_norm =
                    name.starts_with("conv") && name.ends_with(".bias") && name != "conv1.bias";
                fixed.push(before_norm.then(|| p.clone()));
                if !before_norm {
                    free.push(p);
                }
            }
            grad_check(
                &free,
                FD_EPS,
                Probe::Sample {
                    per_input: 2,
                    seed: 9,
                },
                move |t, v| {
                    let mut it = v[1..].iter();
                    let params: Vec<Var> = fixed
                        .iter()
                        .map(|f| match f {
                            Some(c) => t.constant(c.clone()),
                            None => *it.next().expect("one var per free parameter"),
                        })
                        .collect();
                    let (y, _) = gen.forward(t, &params, &v[0], NormMode::Train)?;
                    project(t, &y, 10)
                },
            )
        }
        _ => unreachable!("listed in CASES"),
    };
    Some(r.map(|report| CheckResult {
        name,
        threshold,
        report,
    }))
}

/// Every case in [`CASES`] order.
pub fn run_suite() -> Result<Vec<CheckResult>> {
    CASES
        .iter()
        .map(|c| run_case(c).expect("known case"))
        .collect()
}
