//! Central-difference gradient checking in 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::Graph;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which input elements are perturbed.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// At most `per_input` randomly chosen elements of each input.
    Sample {
        per_input: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Element achieving `max_rel_error`.
    pub worst: Option<Mismatch>,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that two vanishing
/// gradients compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape's gradients of `f` against central differences.
///
/// `f` receives one gradient-requiring leaf per input and must return a
/// scalar. Every input is treated as a differentiable parameter.
pub fn grad_check<F>(
    inputs: &[Tensor<f64>],
    eps: f64,
    probe: Probe,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar_value(&out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()))
        })
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut rng = match probe {
        Probe::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Probe::All => None,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (input, x) in inputs.iter().enumerate() {
        let elements: Vec<usize> = match (probe, rng.as_mut()) {
            (Probe::Sample { per_input, .. }, Some(rng)) if per_input < x.len() => {
                let mut picks = sample(rng, x.len(), per_input).into_vec();
                picks.sort_unstable();
                picks
            }
            _ => (0..x.len()).collect(),
        };
        for element in elements {
            let orig = x.data()[element];
            work[input].data_mut()[element] = orig + eps;
            let plus = eval(&work)?;
            work[input].data_mut()[element] = orig - eps;
            let minus = eval(&work)?;
            work[input].data_mut()[element] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[input].data()[element];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some(Mismatch {
                    input,
                    element,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
