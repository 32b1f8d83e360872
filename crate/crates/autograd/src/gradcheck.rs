//! Central finite-difference gradient checks.
//!
//! The check only ever calls the forward pass, so it stays independent of
//! the backward rules it validates.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that tiny gradients are
/// compared on an absolute scale.
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Coordinates left out by [`check_gradients_away_from_kinks`].
    pub skipped: usize,
}

/// Two difference quotients of one coordinate that disagree by more than
/// this (relative) straddle a kink.
pub const KINK_THRESHOLD: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward` against central differences of `loss_fn`.
///
/// `loss_fn` records a scalar loss on a fresh tape from the given input
/// handles; it is called once for the analytic gradient and twice per
/// checked coordinate. At most `per_input` coordinates of each input are
/// sampled (all of them when the input is smaller).
pub fn check_gradients<F, R>(
    inputs: &[Tensor<f64>],
    loss_fn: F,
    per_input: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    run(inputs, loss_fn, per_input, step, false, rng)
}

/// Like [`check_gradients`] for piecewise-smooth losses (ReLU, max-pooling).
///
/// Each coordinate is also differenced with twice the step. On a smooth
/// stretch the two quotients agree to O(step^2); when they differ by more
/// than [`KINK_THRESHOLD`] a switch point lies within reach of the
/// perturbation, the finite difference is meaningless there, and the
/// coordinate is counted in `skipped` instead of compared. The analytic
/// gradient plays no part in that decision.
pub fn check_gradients_away_from_kinks<F, R>(
    inputs: &[Tensor<f64>],
    loss_fn: F,
    per_input: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    run(inputs, loss_fn, per_input, step, true, rng)
}

fn run<F, R>(
    inputs: &[Tensor<f64>],
    loss_fn: F,
    per_input: usize,
    step: f64,
    kink_guard: bool,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.variable(t.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
        skipped: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks = sample(rng, n, per_input.min(n));
        for at in picks {
            let orig = input.data()[at];
            work[i].data_mut()[at] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[at] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[at] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            if kink_guard {
                work[i].data_mut()[at] = orig + 2.0 * step;
                let plus = eval(&work)?;
                work[i].data_mut()[at] = orig - 2.0 * step;
                let minus = eval(&work)?;
                work[i].data_mut()[at] = orig;
                let wide = (plus - minus) / (4.0 * step);
                if relative_error(wide, numeric, DEFAULT_FLOOR) > KINK_THRESHOLD {
                    report.skipped += 1;
                    continue;
                }
            }
            let a = analytic[i].data()[at];
            let err = relative_error(a, numeric, DEFAULT_FLOOR);
            report.checked += 1;
            if err >= report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((i, at, a, numeric));
            }
        }
    }
    Ok(report)
}
