//! Central finite-difference oracle for the tape's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const PROJECTION_SEED: u64 = 0x9e37_79b9;

/// Max over every input coordinate of
/// `|analytic − central difference| / max(1, |central difference|)`.
///
/// Tensor-valued `f` is reduced to a scalar with a fixed random projection,
/// so every output coordinate contributes to the check.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    finite_difference_check_sampled(f, inputs, eps, None)
}

/// As [`finite_difference_check`], probing at most `max_coords` evenly
/// spaced coordinates of each input (all of them when `None`).
pub fn finite_difference_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    max_coords: Option<usize>,
) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }

    let forward = |xs: &[Tensor]| -> Result<Tensor> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok((*f(&tape, &vars)?.value()).clone())
    };
    let first = forward(inputs)?;
    if !first.bit_eq(&forward(inputs)?) {
        return Err(Error::Contract("function under check is not deterministic".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let projection = Tensor::from_fn(first.shape(), |_| {
        let m: f64 = rng.random_range(0.5..1.5);
        if rng.random_bool(0.5) { m } else { -m }
    });
    let project = |t: &Tensor| -> f64 {
        t.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let loss = out.mul(tape.constant(projection.clone()))?.sum_all()?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let n = inputs[i].numel();
        let stride = max_coords.map_or(1, |m| n.div_ceil(m.max(1)));
        for j in (0..n).step_by(stride) {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + eps;
            let up = project(&forward(&probe)?);
            probe[i].data_mut()[j] = x0 - eps;
            let down = project(&forward(&probe)?);
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
