//! Scale-invariant SDR and permutation-invariant evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{dot, order_invariant_sum, permutations, StackedSignal};

/// Reports are clamped to `±SI_SDR_CAP` dB.
pub const SI_SDR_CAP: f64 = 100.0;

pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: est.len(),
        });
    }
    let ref_energy = dot(reference, reference);
    if ref_energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let scale = dot(est, reference) / ref_energy;
    let target = scale * scale * ref_energy;
    let residual: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - scale * r).powi(2))
        .sum();
    if residual == 0.0 {
        return Ok(SI_SDR_CAP);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// SI-SDR of each reference source under the best permutation.
    pub si_sdr: Vec<f64>,
    pub mean_si_sdr: f64,
    /// `perm[i]` is the estimate block matched to reference block `i`.
    pub perm: Vec<usize>,
    /// SI-SDR of the mixture used as the estimate of every source.
    pub mixture_si_sdr: Vec<f64>,
    pub mixture_mean_si_sdr: f64,
    pub improvement: f64,
}

fn mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    order_invariant_sum(&mut v) / values.len() as f64
}

/// Best mean SI-SDR over all source permutations, with the mixture
/// `Σ_k ref_k` as the baseline.
pub fn pit_si_sdr(est: &StackedSignal, reference: &StackedSignal) -> Result<EvalReport> {
    evaluate(est, reference, &reference.mix())
}

/// As [`pit_si_sdr`] with an explicit mixture for the baseline.
pub fn evaluate(est: &StackedSignal, reference: &StackedSignal, mixture: &[f64]) -> Result<EvalReport> {
    est.check_shape(reference.k(), reference.n())?;
    let k = reference.k();
    if k > crate::net::loss::MAX_PIT_SOURCES {
        return Err(Error::InvalidParameter(format!(
            "permutation search supports at most {} sources (got {k})",
            crate::net::loss::MAX_PIT_SOURCES
        )));
    }
    // pairwise table: scores[i][j] = si_sdr(est_j, ref_i)
    let mut scores = vec![vec![0.0; k]; k];
    for (i, row) in scores.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = si_sdr(est.block(j), reference.block(i))?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let vals: Vec<f64> = (0..k).map(|i| scores[i][perm[i]]).collect();
        let m = mean(&vals);
        if best.as_ref().is_none_or(|(b, _)| m > *b) {
            best = Some((m, perm));
        }
    }
    let (mean_si_sdr, perm) = best.expect("at least one permutation");
    let mixture_si_sdr = (0..k)
        .map(|i| si_sdr(mixture, reference.block(i)))
        .collect::<Result<Vec<_>>>()?;
    let mixture_mean_si_sdr = mean(&mixture_si_sdr);
    Ok(EvalReport {
        si_sdr: (0..k).map(|i| scores[i][perm[i]]).collect(),
        mean_si_sdr,
        perm,
        mixture_si_sdr,
        mixture_mean_si_sdr,
        improvement: mean_si_sdr - mixture_mean_si_sdr,
    })
}
