use rand::Rng as _;

use super::params::{Bound, GroupMask, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compare tape gradients against central differences.
///
/// `forward` must build a deterministic scalar loss from the bound parameters. Up to
/// `samples_per_param` coordinates of every parameter are probed. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(
    params: &mut ParamSet<f64>,
    eps: f64,
    samples_per_param: usize,
    rng: &mut super::rng::Rng,
    mut forward: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::config(format!("grad_check eps {eps} outside [1e-6, 1e-4]")));
    }
    if params.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, GroupMask::ALL);
    let loss = forward(&mut tape, &bound)?;
    tape.backward(loss)?;
    params.zero_grads();
    params.collect_grads(&tape, &bound);
    drop(tape);

    let mut eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let b = ps.bind(&mut t, GroupMask::NONE);
        let l = forward(&mut t, &b)?;
        Ok(t.value(l).data()[0])
    };

    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut worst = 0.0f64;
    for name in names {
        let len = params.get(&name).map(|p| p.value.len()).unwrap_or(0);
        let picks: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            (0..samples_per_param).map(|_| rng.random_range(0..len)).collect()
        };
        for idx in picks {
            let analytic = params
                .get(&name)
                .and_then(|p| p.grad.as_ref())
                .map(|g| g.data()[idx])
                .unwrap_or(0.0);
            let orig = params.get(&name).expect("present").value.data()[idx];
            params.get_mut(&name).expect("present").value.data_mut()[idx] = orig + eps;
            let plus = eval(params)?;
            params.get_mut(&name).expect("present").value.data_mut()[idx] = orig - eps;
            let minus = eval(params)?;
            params.get_mut(&name).expect("present").value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    params.zero_grads();
    Ok(worst)
}
