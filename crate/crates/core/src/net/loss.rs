//! Training objectives.
//!
//! Both losses have the form `‖L_t q + z + c‖²`. For denoising score matching
//! `c = 0`; for the mismatch loss at `t = T` the offset is
//! `c_π = L_T⁻¹ (s̄ − μ_T(π))` and the smallest value over permutations wins.

use crate::error::{Error, Result};
use crate::mixing::{permutations, StackedSignal};
use crate::sampler::Mode;
use crate::sde::SdeParams;

use super::mlp::{ForwardCache, MlpScoreModel};

/// Loss value and the source permutation that attained it.
#[derive(Debug, Clone, PartialEq)]
pub struct PitLoss {
    pub loss: f64,
    pub perm: Vec<usize>,
}

pub const MAX_PIT_SOURCES: usize = 6;

/// Permutations searched by the mismatch loss.
pub fn loss_permutations(k: usize, mode: Mode) -> Result<Vec<Vec<usize>>> {
    match mode {
        Mode::Enhancement => Ok(vec![(0..k).collect()]),
        Mode::Separation if k > MAX_PIT_SOURCES => Err(Error::InvalidParameter(format!(
            "permutation search supports at most {MAX_PIT_SOURCES} sources (got {k})"
        ))),
        Mode::Separation => Ok(permutations(k)),
    }
}

fn check_time(t: f64, p: &SdeParams) -> Result<()> {
    if t >= p.t_eps && t <= p.t_max {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "loss time {t} outside [{}, {}]",
            p.t_eps, p.t_max
        )))
    }
}

struct Residual {
    r: StackedSignal,
    cache: ForwardCache,
    t: f64,
}

fn dsm_residual(
    m: &MlpScoreModel,
    s: &StackedSignal,
    t: f64,
    z: &StackedSignal,
    p: &SdeParams,
) -> Result<Residual> {
    check_time(t, p)?;
    let y = s.mix();
    let x_t = p.sample_forward(s, t, z)?;
    let (q, cache) = m.forward_with_cache(&x_t, t, &y)?;
    let mg = p.marginal(t, s);
    let r = mg.apply_sqrt(&q).add_scaled(1.0, z);
    Ok(Residual { r, cache, t })
}

/// Pushes `∂‖r‖²/∂q = 2 L_t r` back through the model.
fn accumulate(m: &MlpScoreModel, res: &Residual, p: &SdeParams, grad: &mut [f64]) {
    let (l1, l2) = p.lambdas(res.t);
    let d_q = crate::mixing::apply_projector_mix(2.0 * l1.sqrt(), 2.0 * l2.sqrt(), &res.r);
    m.backward(&res.cache, &d_q, grad);
}

/// `‖L_t q_θ(x_t, t, y) + z‖²` with `x_t = μ_t(s) + L_t z`, `y = mix(s)`.
pub fn dsm_loss(
    m: &MlpScoreModel,
    s: &StackedSignal,
    t: f64,
    z: &StackedSignal,
    p: &SdeParams,
) -> Result<f64> {
    Ok(dsm_residual(m, s, t, z, p)?.r.norm_sq())
}

/// [`dsm_loss`], adding its parameter gradient into `grad`.
pub fn dsm_loss_grad(
    m: &MlpScoreModel,
    s: &StackedSignal,
    t: f64,
    z: &StackedSignal,
    p: &SdeParams,
    grad: &mut [f64],
) -> Result<f64> {
    let res = dsm_residual(m, s, t, z, p)?;
    accumulate(m, &res, p, grad);
    Ok(res.r.norm_sq())
}

fn pit_residual(
    m: &MlpScoreModel,
    s: &StackedSignal,
    z: &StackedSignal,
    p: &SdeParams,
    mode: Mode,
) -> Result<(Residual, Vec<usize>)> {
    let perms = loss_permutations(s.k(), mode)?;
    let y = s.mix();
    let t = p.t_max;
    let x_prior = p.sample_prior(&y, z)?;
    let (q, cache) = m.forward_with_cache(&x_prior, t, &y)?;
    let s_bar = p.mixture_average(&y)?;
    let base = p.marginal(t, s).apply_sqrt(&q).add_scaled(1.0, z);

    let mut best: Option<(f64, StackedSignal, Vec<usize>)> = None;
    for perm in perms {
        let mg = p.marginal(t, &s.permute_blocks(&perm));
        let offset = mg.apply_inv_sqrt(&s_bar.add_scaled(-1.0, &mg.mu))?;
        let r = base.add_scaled(1.0, &offset);
        let loss = r.norm_sq();
        // strict comparison keeps the first minimiser in enumeration order
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, r, perm));
        }
    }
    let (_, r, perm) = best.expect("at least one permutation");
    Ok((Residual { r, cache, t }, perm))
}

/// `min_π ‖L_T q_θ(x̄_T, T, y) + z + L_T⁻¹ (s̄ − μ_T(π))‖²` with `x̄_T = s̄ + L_T z`.
///
/// In enhancement mode only the identity permutation is considered.
pub fn mismatch_pit_loss(
    m: &MlpScoreModel,
    s: &StackedSignal,
    z: &StackedSignal,
    p: &SdeParams,
    mode: Mode,
) -> Result<PitLoss> {
    let (res, perm) = pit_residual(m, s, z, p, mode)?;
    Ok(PitLoss {
        loss: res.r.norm_sq(),
        perm,
    })
}

/// [`mismatch_pit_loss`], adding the gradient of the winning branch into `grad`.
pub fn mismatch_pit_loss_grad(
    m: &MlpScoreModel,
    s: &StackedSignal,
    z: &StackedSignal,
    p: &SdeParams,
    mode: Mode,
    grad: &mut [f64],
) -> Result<PitLoss> {
    let (res, perm) = pit_residual(m, s, z, p, mode)?;
    accumulate(m, &res, p, grad);
    Ok(PitLoss {
        loss: res.r.norm_sq(),
        perm,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::mixing::ProjectorPair;
    use crate::net::mlp::{ModelSpec, Preconditioning};
    use crate::rng::{standard_normal_vec, stream_rng};

    fn small_model(k: usize, n: usize, zero: bool) -> (MlpScoreModel, SdeParams) {
        let p = SdeParams::new(k, n);
        let mut spec = ModelSpec::new(k, n, vec![6, 6]);
        spec.preconditioning = Preconditioning::None;
        let mut m = MlpScoreModel::new(spec, p, 3).unwrap();
        if zero {
            m.zero_output();
        }
        (m, p)
    }

    fn random_signal(seed: u64, k: usize, n: usize) -> StackedSignal {
        let mut rng = stream_rng(seed, 0);
        StackedSignal::new(standard_normal_vec(&mut rng, k * n), k, n).unwrap()
    }

    #[test]
    fn zero_model_dsm_loss_is_noise_energy() {
        let (m, p) = small_model(2, 8, true);
        let s = random_signal(1, 2, 8);
        let z = random_signal(2, 2, 8);
        assert_eq!(dsm_loss(&m, &s, 0.5, &z, &p).unwrap(), z.norm_sq());
    }

    #[test]
    fn zero_model_dsm_loss_averages_to_kn() {
        let (m, p) = small_model(2, 8, true);
        let s = random_signal(1, 2, 8);
        let trials = 4000;
        let mean: f64 = (0..trials)
            .map(|i| dsm_loss(&m, &s, 0.5, &random_signal(100 + i, 2, 8), &p).unwrap())
            .sum::<f64>()
            / trials as f64;
        // chi-square with 16 dof: sd of the mean is sqrt(32 / 4000)
        assert!((mean - 16.0).abs() < 4.0 * (32.0f64 / trials as f64).sqrt(), "{mean}");
    }

    #[test]
    fn oracle_noise_prediction_gives_zero_loss() {
        // with identical source blocks μ_t = s̄, so the x-slot of a noise-preconditioned
        // model holds exactly z; an identity skip then outputs q = −L_t⁻¹ z
        let p = SdeParams::new(2, 3);
        let mut spec = ModelSpec::new(2, 3, vec![]);
        spec.linear_skip = true;
        let mut m = MlpScoreModel::new(spec.clone(), p, 0).unwrap();
        m.zero_output();
        let d_in = spec.input_dim();
        let skip = m.param_count() - d_in * 6;
        for r in 0..6 {
            m.params_mut()[skip + r * d_in + r] = 1.0;
        }
        let b = random_signal(4, 1, 3).into_vec();
        let s = StackedSignal::from_blocks(&[b.clone(), b]).unwrap();
        let z = random_signal(5, 2, 3);
        let loss = dsm_loss(&m, &s, 0.7, &z, &p).unwrap();
        assert!(loss < 1e-24, "{loss}");
    }

    #[test]
    fn dsm_rejects_out_of_range_time() {
        let (m, p) = small_model(2, 4, false);
        let s = random_signal(1, 2, 4);
        assert!(dsm_loss(&m, &s, 0.0, &s, &p).is_err());
        assert!(dsm_loss(&m, &s, 1.5, &s, &p).is_err());
    }

    #[test]
    fn pit_loss_is_invariant_to_source_order() {
        let (m, p) = small_model(3, 4, false);
        let s = random_signal(7, 3, 4);
        let z = random_signal(8, 3, 4);
        let base = mismatch_pit_loss(&m, &s, &z, &p, Mode::Separation).unwrap();
        for perm in permutations(3) {
            let other = mismatch_pit_loss(&m, &s.permute_blocks(&perm), &z, &p, Mode::Separation).unwrap();
            assert_eq!(other.loss, base.loss);
        }
    }

    #[test]
    fn identical_blocks_match_identity_branch() {
        let (m, p) = small_model(2, 4, false);
        let b = random_signal(9, 1, 4).into_vec();
        let s = StackedSignal::from_blocks(&[b.clone(), b]).unwrap();
        let z = random_signal(10, 2, 4);
        let sep = mismatch_pit_loss(&m, &s, &z, &p, Mode::Separation).unwrap();
        let enh = mismatch_pit_loss(&m, &s, &z, &p, Mode::Enhancement).unwrap();
        assert_eq!(sep.loss, enh.loss);
        assert_eq!(sep.perm, vec![0, 1]);
    }

    #[test]
    fn zero_model_pit_loss_matches_dense_oracle() {
        let (k, n) = (2, 4);
        let (m, p) = small_model(k, n, true);
        let pp = ProjectorPair::new(k);
        let (l1, l2) = p.lambdas(p.t_max);
        let kron = |a: DMatrix<f64>| a.kronecker(&DMatrix::<f64>::identity(n, n));
        let l_inv = kron(pp.combination(l1.sqrt().recip(), l2.sqrt().recip()));
        let decay = (-p.gamma * p.t_max).exp();
        let a_mat = kron(pp.average());
        let m_t = kron(pp.average() + pp.complement() * decay);
        for seed in 0..5 {
            let s = random_signal(20 + seed, k, n);
            let z = random_signal(40 + seed, k, n);
            let zv = DVector::from_column_slice(z.as_slice());
            let oracle = permutations(k)
                .into_iter()
                .map(|perm| {
                    let sp = DVector::from_column_slice(s.permute_blocks(&perm).as_slice());
                    let s_bar = &a_mat * &sp;
                    let mu = &m_t * &sp;
                    (&zv + &l_inv * (s_bar - mu)).norm_squared()
                })
                .fold(f64::INFINITY, f64::min);
            let got = mismatch_pit_loss(&m, &s, &z, &p, Mode::Separation).unwrap();
            assert!((got.loss - oracle).abs() <= 1e-12 * oracle, "{} vs {oracle}", got.loss);
        }
    }

    #[test]
    fn enhancement_uses_identity_only() {
        let perms = loss_permutations(4, Mode::Enhancement).unwrap();
        assert_eq!(perms, vec![vec![0, 1, 2, 3]]);
        assert_eq!(loss_permutations(3, Mode::Separation).unwrap().len(), 6);
        assert!(loss_permutations(7, Mode::Separation).is_err());
        assert_eq!(loss_permutations(7, Mode::Enhancement).unwrap().len(), 1);
    }

    #[test]
    fn pit_rejects_more_than_six_sources() {
        let (m, p) = small_model(7, 2, true);
        let s = random_signal(1, 7, 2);
        assert!(mismatch_pit_loss(&m, &s, &s, &p, Mode::Separation).is_err());
    }
}
