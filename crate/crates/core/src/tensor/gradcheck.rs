use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const MIN_SAMPLES_PER_TENSOR: usize = 200;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|a - n| / max(1e-8, |a| + |n|)`.
    pub max_rel_error: f64,
    /// `(tensor, flat index)` where the max was attained.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

fn eval_loss<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares tape gradients of the scalar `f(params)` with central
/// differences. Tensors with more than `samples_per_tensor` entries are
/// checked on a seeded random subset of that size.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut rng = rng_from_seed(seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coords_checked: 0 };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].numel();
        let mut coords: Vec<usize> = if n <= samples_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, samples_per_tensor).into_vec()
        };
        coords.sort_unstable();
        for idx in coords {
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[idx]);
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + eps;
            let up = eval_loss(&f, &work)?;
            work[pi].data_mut()[idx] = orig - eps;
            let down = eval_loss(&f, &work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, idx);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
