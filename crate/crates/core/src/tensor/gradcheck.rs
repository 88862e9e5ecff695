use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamSet};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, coordinates checked, max relative error)`.
    pub per_param: Vec<(String, usize, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().map(|p| p.2).fold(0.0, f64::max)
    }

    pub fn coords_checked(&self) -> usize {
        self.per_param.iter().map(|p| p.1).sum()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences.
///
/// `loss` must be deterministic; it returns the loss and the gradients of one
/// backward pass. Up to `coords_per_param` coordinates of every parameter are
/// checked (all of them for smaller tensors), sampled with `seed`.
pub fn finite_diff_check<L>(
    params: &ParamSet<f64>,
    mut loss: L,
    eps: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    L: FnMut(&ParamSet<f64>) -> Result<(f64, Gradients<f64>)>,
{
    let mut analytic = params.clone();
    analytic.zero_grad();
    let (base, grads) = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed point".into()));
    }
    analytic.accumulate(&grads);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut per_param = Vec::new();
    for id in params.ids() {
        let name = params.get(id).name.clone();
        let n = params.tensor(id).len();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, coords_per_param).into_vec()
        };
        let zeros = vec![0.0; n];
        let grad = analytic.tensor(id).grad().unwrap_or(&zeros).to_vec();
        let mut worst = 0.0f64;
        for &c in &coords {
            let orig = probe.tensor(id).values()[c];
            probe.tensor_mut(id).values_mut()[c] = orig + eps;
            let (plus, _) = loss(&probe)?;
            probe.tensor_mut(id).values_mut()[c] = orig - eps;
            let (minus, _) = loss(&probe)?;
            probe.tensor_mut(id).values_mut()[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing `{name}`[{c}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad[c], numeric));
        }
        per_param.push((name, coords.len(), worst));
    }
    Ok(GradCheckReport { per_param })
}
