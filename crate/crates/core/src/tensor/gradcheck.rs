//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor4;
use crate::error::{config_err, Result};

/// A differentiable operation over 64-bit tensors, exposing both its forward
/// map and the vector-Jacobian product of its analytic backward pass.
pub trait GradOp {
    fn name(&self) -> String;

    fn forward(&self, inputs: &[Tensor4<f64>]) -> Result<Tensor4<f64>>;

    /// Returns one gradient per input given the gradient of the output.
    fn backward(&self, inputs: &[Tensor4<f64>], grad_out: &Tensor4<f64>)
        -> Result<Vec<Tensor4<f64>>>;
}

/// Location of a single scalar: which input, and where inside it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Coordinate {
    pub input: usize,
    pub index: [usize; 4],
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub worst_coordinate: Coordinate,
    /// Number of coordinates compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tolerance
    }
}

const PROJECTION_SEED: u64 = 0x6772_6164_6368_6b00;

/// Errors above this are re-measured with a step ten times smaller.
const RECHECK_ABOVE: f64 = 1e-6;

fn central_difference(
    loss: &dyn Fn(&[Tensor4<f64>]) -> Result<f64>,
    work: &mut [Tensor4<f64>],
    input: usize,
    flat: usize,
    eps: f64,
) -> Result<f64> {
    let orig = work[input].data()[flat];
    work[input].data_mut()[flat] = orig + eps;
    let plus = loss(work)?;
    work[input].data_mut()[flat] = orig - eps;
    let minus = loss(work)?;
    work[input].data_mut()[flat] = orig;
    Ok((plus - minus) / (2.0 * eps))
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of `op` with central differences on every
/// input coordinate. A coordinate that disagrees is measured again with
/// `eps / 10` and keeps the smaller error, so a step crossing a
/// non-differentiable point does not count as a failure.
///
/// The output is reduced to a scalar by a fixed pseudo-random projection
/// `L = Σ r_k y_k`, so every output element contributes with a distinct weight.
pub fn grad_check(op: &dyn GradOp, inputs: &[Tensor4<f64>], eps: f64) -> Result<GradCheckReport> {
    check(op, inputs, eps, None)
}

/// Like [`grad_check`] but compares at most `per_input` randomly chosen
/// coordinates of each input.
pub fn grad_check_sampled(
    op: &dyn GradOp,
    inputs: &[Tensor4<f64>],
    eps: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    check(op, inputs, eps, Some((per_input, seed)))
}

fn check(
    op: &dyn GradOp,
    inputs: &[Tensor4<f64>],
    eps: f64,
    sampling: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return config_err(format!("grad_check: eps must be positive, got {eps}"));
    }
    let y = op.forward(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let projection = Tensor4::from_fn(y.dims(), |_| rng.gen_range(-1.0..1.0));
    let analytic = op.backward(inputs, &projection)?;
    if analytic.len() != inputs.len() {
        return config_err(format!(
            "grad_check: {} returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        ));
    }

    let loss = |xs: &[Tensor4<f64>]| -> Result<f64> { op.forward(xs)?.dot(&projection) };

    let mut report = GradCheckReport {
        op_name: op.name(),
        max_rel_error: 0.0,
        worst_coordinate: Coordinate::default(),
        checked: 0,
    };
    let mut work: Vec<Tensor4<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        if grad.dims() != inputs[i].dims() {
            return config_err(format!(
                "grad_check: gradient {i} of {} has dims {:?}, input has {:?}",
                op.name(),
                grad.dims(),
                inputs[i].dims()
            ));
        }
        let len = inputs[i].len();
        let coords: Vec<usize> = match sampling {
            Some((k, seed)) if k < len => {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9));
                let mut picked = sample(&mut r, len, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..len).collect(),
        };
        for flat in coords {
            let a = grad.data()[flat];
            let mut rel = rel_error(a, central_difference(&loss, &mut work, i, flat, eps)?);
            if rel > RECHECK_ABOVE {
                // A step that straddles a ReLU kink gives a wrong slope; a real
                // gradient error persists at the smaller step.
                rel = rel.min(rel_error(a, central_difference(&loss, &mut work, i, flat, eps / 10.0)?));
            }
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_coordinate = Coordinate { input: i, index: inputs[i].unravel(flat) };
            }
        }
    }
    Ok(report)
}
