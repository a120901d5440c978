//! Central-difference check of analytic parameter gradients.

use rand::seq::index::sample;

use crate::error::Result;
use crate::rng::stream_rng;

use super::mlp::MlpScoreModel;

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Models with more parameters than this are checked on a random subset.
pub const FULL_CHECK_LIMIT: usize = 2000;
pub const SUBSET_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |a_i − d_i| / max_j max(|a_j|, |d_j|)` over the checked entries.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the gradient written by `loss_fn` into its buffer against central
/// differences of the returned loss.
///
/// `loss_fn(model, grad)` must return the loss and, when `grad` is `Some`,
/// add `∂loss/∂θ` into it. Errors are measured against the largest gradient
/// magnitude, so entries that are zero up to rounding do not dominate.
pub fn grad_check<F>(m: &MlpScoreModel, loss_fn: F, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&MlpScoreModel, Option<&mut [f64]>) -> Result<f64>,
{
    let count = m.param_count();
    let mut analytic = vec![0.0; count];
    loss_fn(m, Some(&mut analytic))?;

    let indices: Vec<usize> = if count <= FULL_CHECK_LIMIT {
        (0..count).collect()
    } else {
        let mut rng = stream_rng(seed, 0);
        let mut idx = sample(&mut rng, count, SUBSET_SIZE).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut probe = m.clone();
    let mut numeric = Vec::with_capacity(indices.len());
    for &i in &indices {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + GRAD_CHECK_STEP;
        let up = loss_fn(&probe, None)?;
        probe.params_mut()[i] = orig - GRAD_CHECK_STEP;
        let down = loss_fn(&probe, None)?;
        probe.params_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * GRAD_CHECK_STEP));
    }

    let scale = indices
        .iter()
        .zip(&numeric)
        .map(|(&i, d)| analytic[i].abs().max(d.abs()))
        .fold(0.0f64, f64::max);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        checked: indices.len(),
    };
    if scale == 0.0 {
        return Ok(report);
    }
    for (&i, d) in indices.iter().zip(&numeric) {
        let err = (analytic[i] - d).abs() / scale;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
