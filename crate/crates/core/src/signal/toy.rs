//! Reproducible synthetic sources.
//!
//! * `SinusoidBank`: each source is a sum of unit-amplitude cosines at integer
//!   DFT bins of the block length, with random phases. Bins are drawn without
//!   replacement from `1..N/2`, so different sources share no bin and are
//!   orthogonal over the block. Each source gets two bins when there is room
//!   for `2K`, otherwise one.
//! * `Chirp`: linear frequency sweeps, source `k` confined to the `k`-th of
//!   `K` equal bands of `(0.02, 0.48)` cycles per sample, random phase.
//! * `GmmDraw`: one draw from [`toy_gmm_prior`].

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::StackedSignal;
use crate::oracle::{GaussianPrior, GmmPrior};
use crate::rng::{stream_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    SinusoidBank,
    GmmDraw,
    Chirp,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid-bank" => Ok(ToyKind::SinusoidBank),
            "gmm-draw" => Ok(ToyKind::GmmDraw),
            "chirp" => Ok(ToyKind::Chirp),
            other => Err(Error::Config(format!("unknown toy source kind `{other}`"))),
        }
    }
}

/// Components of the toy GMM prior.
pub const TOY_COMPONENTS: usize = 4;
/// Per-source variance around every component mean.
pub const TOY_VARIANCE: f64 = 0.05;
const TOY_PRIOR_SEED: u64 = 0x5eed_0f70;

fn sinusoid_bank_from(rng: &mut Rng, k: usize, n: usize) -> Result<StackedSignal> {
    let bins: Vec<usize> = (1..n.div_ceil(2)).collect();
    if bins.len() < k {
        return Err(Error::InvalidParameter(format!(
            "block length {n} has {} usable bins, fewer than {k} sources",
            bins.len()
        )));
    }
    let per_source = if bins.len() >= 2 * k { 2 } else { 1 };
    let mut shuffled = bins;
    shuffled.shuffle(rng);
    let mut blocks = Vec::with_capacity(k);
    for chunk in shuffled.chunks(per_source).take(k) {
        let mut block = vec![0.0; n];
        for &bin in chunk {
            let phase = 2.0 * PI * rng.random::<f64>();
            for (i, v) in block.iter_mut().enumerate() {
                *v += (2.0 * PI * (bin * i) as f64 / n as f64 + phase).cos();
            }
        }
        blocks.push(block);
    }
    StackedSignal::from_blocks(&blocks)
}

fn chirps_from(rng: &mut Rng, k: usize, n: usize) -> Result<StackedSignal> {
    let (lo, hi) = (0.02, 0.48);
    let width = (hi - lo) / k as f64;
    let blocks: Vec<Vec<f64>> = (0..k)
        .map(|src| {
            let band = lo + width * src as f64;
            let (f0, f1) = (band + width * 0.5 * rng.random::<f64>(), band + width * (0.5 + 0.5 * rng.random::<f64>()));
            let phase = 2.0 * PI * rng.random::<f64>();
            (0..n)
                .map(|i| {
                    let t = i as f64;
                    let rate = (f1 - f0) / n.max(1) as f64;
                    (2.0 * PI * (f0 * t + 0.5 * rate * t * t) + phase).cos()
                })
                .collect()
        })
        .collect();
    StackedSignal::from_blocks(&blocks)
}

/// The fixed toy GMM prior for shape `(K, N)`: [`TOY_COMPONENTS`] equally
/// weighted components whose means are sinusoid banks and whose sources have
/// variance [`TOY_VARIANCE`].
pub fn toy_gmm_prior(k: usize, n: usize) -> Result<GmmPrior> {
    let mut rng = stream_rng(TOY_PRIOR_SEED, (k * 1_000_003 + n) as u64);
    let w = 1.0 / TOY_COMPONENTS as f64;
    let components = (0..TOY_COMPONENTS)
        .map(|_| {
            let mean = sinusoid_bank_from(&mut rng, k, n)?;
            Ok((w, GaussianPrior::new(mean, vec![TOY_VARIANCE; k])?))
        })
        .collect::<Result<Vec<_>>>()?;
    GmmPrior::new(components)
}

pub fn make_toy_sources(kind: ToyKind, k: usize, n: usize, seed: u64) -> Result<StackedSignal> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidParameter("K and N must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0);
    match kind {
        ToyKind::SinusoidBank => sinusoid_bank_from(&mut rng, k, n),
        ToyKind::Chirp => chirps_from(&mut rng, k, n),
        ToyKind::GmmDraw => Ok(toy_gmm_prior(k, n)?.to_block()?.sample(&mut rng)),
    }
}

/// `count` independent toy draws, draw `i` seeded with `(seed, i)`.
pub fn toy_dataset(kind: ToyKind, k: usize, n: usize, seed: u64, count: usize) -> Result<Vec<StackedSignal>> {
    (0..count as u64)
        .map(|i| make_toy_sources(kind, k, n, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i)))
        .collect()
}
