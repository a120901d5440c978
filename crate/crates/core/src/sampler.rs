//! Reverse-time predictor-corrector sampler.
//!
//! Starting from `x̄_T ~ N(s̄, Σ_T)`, each step integrates the reverse SDE
//!
//! ```text
//! dx = −[f(x, t) − g(t)² ∇ log p_t(x)] dt + g(t) dw̄,   f(x, t) = −γ P̃ x,
//! ```
//!
//! with `dt` counted in decreasing process time, backwards by one Euler–Maruyama step (the predictor) and then applies
//! `n_corrector` annealed Langevin updates at the new time (the corrector).
//! The state is returned at `t_ε`, never at 0 where the marginal is singular.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{apply_projector_mix, StackedSignal};
use crate::rng::{fill_standard_normal, stream_rng, Rng};
use crate::sde::SdeParams;

/// Anything that estimates `∇_x log p_t(x)` given the mixture `y`.
pub trait ScoreFunction: Sync {
    fn score(&self, x: &StackedSignal, t: f64, y: &[f64]) -> Result<StackedSignal>;
}

impl<F> ScoreFunction for F
where
    F: Fn(&StackedSignal, f64, &[f64]) -> Result<StackedSignal> + Sync,
{
    fn score(&self, x: &StackedSignal, t: f64, y: &[f64]) -> Result<StackedSignal> {
        self(x, t, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeSchedule {
    #[default]
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    #[serde(rename = "sep")]
    Separation,
    #[serde(rename = "enh")]
    Enhancement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorGradConfig {
    pub enabled: bool,
    /// Number of mixture samples averaged for the local power.
    pub window: usize,
}

impl Default for PriorGradConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            window: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_predictor: usize,
    pub n_corrector: usize,
    /// Langevin signal-to-noise parameter `r`.
    pub snr_r: f64,
    pub schedule: TimeSchedule,
    pub priorgrad: PriorGradConfig,
    /// Recorded for downstream evaluation; sampling itself is mode-agnostic.
    pub mode: Mode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_predictor: 30,
            n_corrector: 1,
            snr_r: 0.5,
            schedule: TimeSchedule::Uniform,
            priorgrad: PriorGradConfig::default(),
            mode: Mode::Separation,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_predictor == 0 {
            return Err(Error::InvalidParameter("n_predictor must be at least 1".into()));
        }
        if !(self.snr_r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "snr_r must be positive (got {})",
                self.snr_r
            )));
        }
        if self.priorgrad.enabled && self.priorgrad.window == 0 {
            return Err(Error::InvalidParameter("priorgrad window must be at least 1".into()));
        }
        Ok(())
    }

    /// Strictly decreasing times from `T` to `t_ε`, `n_predictor + 1` entries.
    pub fn time_grid(&self, p: &SdeParams) -> Vec<f64> {
        let steps = self.n_predictor;
        let (hi, lo) = (p.t_max, p.t_eps);
        let mut grid: Vec<f64> = (0..=steps)
            .map(|i| {
                let frac = i as f64 / steps as f64;
                match self.schedule {
                    TimeSchedule::Uniform => hi + (lo - hi) * frac,
                    TimeSchedule::Geometric => hi * (lo / hi).powf(frac),
                }
            })
            .collect();
        grid[steps] = lo;
        grid
    }
}

/// Per-sample standard-deviation multipliers for injected noise, identical
/// across sources.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseShape(pub Vec<f64>);

impl NoiseShape {
    /// `√v[n] / RMS(y)` from the local mixture power. A silent mixture
    /// yields unit multipliers.
    pub fn from_mixture(y: &[f64], window: usize) -> Self {
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64).sqrt();
        if rms == 0.0 {
            return Self(vec![1.0; y.len()]);
        }
        Self(
            priorgrad_variance(y, window)
                .into_iter()
                .map(|v| v.sqrt() / rms)
                .collect(),
        )
    }

    fn apply(&self, z: &mut StackedSignal) {
        let n = z.n();
        for k in 0..z.k() {
            for (v, d) in z.block_mut(k).iter_mut().zip(&self.0[..n]) {
                *v *= d;
            }
        }
    }
}

/// Local power of `y`: `v[n]` is the mean of `y[m]²` over the `window`
/// indices closest to `n` (ties resolved towards earlier samples), truncated
/// at the signal edges.
pub fn priorgrad_variance(y: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let len = y.len();
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0.0);
    for v in y {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    let left = window / 2;
    let right = window - 1 - left;
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(len - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// The drift of the reverse SDE per unit of decreasing time,
/// `−[f(x, t) − g(t)² · score] = γ P̃ x + g(t)² · score`.
pub fn reverse_drift(x: &StackedSignal, t: f64, score: &StackedSignal, p: &SdeParams) -> StackedSignal {
    let g2 = p.diffusion_coeff(t).powi(2);
    apply_projector_mix(0.0, p.gamma, x).add_scaled(g2, score)
}

fn draw_noise(rng: &mut Rng, like: &StackedSignal, shape: Option<&NoiseShape>) -> StackedSignal {
    let mut z = StackedSignal::zeros(like.k(), like.n());
    fill_standard_normal(rng, z.as_mut_slice());
    if let Some(shape) = shape {
        shape.apply(&mut z);
    }
    z
}

/// One reverse Euler–Maruyama step from `t` to `t − dt`.
#[allow(clippy::too_many_arguments)]
pub fn predictor_step(
    x: &StackedSignal,
    t: f64,
    dt: f64,
    score_fn: &dyn ScoreFunction,
    y: &[f64],
    p: &SdeParams,
    rng: &mut Rng,
    shape: Option<&NoiseShape>,
) -> Result<StackedSignal> {
    let score = score_fn.score(x, t, y)?;
    let z = draw_noise(rng, x, shape);
    let drift = reverse_drift(x, t, &score, p);
    Ok(x.add_scaled(dt, &drift)
        .add_scaled(p.diffusion_coeff(t) * dt.sqrt(), &z))
}

/// Langevin step size `ε = 2 (r ‖z‖ / ‖score‖)²`.
pub fn langevin_step_size(snr_r: f64, noise_norm: f64, score_norm: f64) -> f64 {
    2.0 * (snr_r * noise_norm / score_norm).powi(2)
}

/// One annealed Langevin update at time `t`. Skipped when the score vanishes.
pub fn corrector_step(
    x: &StackedSignal,
    t: f64,
    score_fn: &dyn ScoreFunction,
    y: &[f64],
    snr_r: f64,
    rng: &mut Rng,
    shape: Option<&NoiseShape>,
) -> Result<StackedSignal> {
    let score = score_fn.score(x, t, y)?;
    let mut z = StackedSignal::zeros(x.k(), x.n());
    fill_standard_normal(rng, z.as_mut_slice());
    let score_norm = score.norm();
    if score_norm == 0.0 {
        return Ok(x.clone());
    }
    let eps = langevin_step_size(snr_r, z.norm(), score_norm);
    if let Some(shape) = shape {
        shape.apply(&mut z);
    }
    Ok(x.add_scaled(eps, &score).add_scaled((2.0 * eps).sqrt(), &z))
}

/// Saved sampler states, one per predictor step (plus the prior sample).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StackedSignal>,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let width = self.states.first().map_or(0, StackedSignal::len);
        let mut out = String::from("t");
        for i in 0..width {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&t.to_string());
            for v in x.as_slice() {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn check_finite(x: &StackedSignal, step: usize, t: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            t,
            norm: x.norm(),
        })
    }
}

/// Separates `y` with run index 0.
pub fn separate(
    y: &[f64],
    score_fn: &dyn ScoreFunction,
    cfg: &SamplerConfig,
    p: &SdeParams,
) -> Result<StackedSignal> {
    separate_run(y, score_fn, cfg, p, 0, None)
}

/// Separates `y` and records every predictor step.
pub fn separate_with_trajectory(
    y: &[f64],
    score_fn: &dyn ScoreFunction,
    cfg: &SamplerConfig,
    p: &SdeParams,
) -> Result<(StackedSignal, Trajectory)> {
    let mut traj = Trajectory::default();
    let out = separate_run(y, score_fn, cfg, p, 0, Some(&mut traj))?;
    Ok((out, traj))
}

/// One separation run drawing from stream `run` of `cfg.seed`.
pub fn separate_run(
    y: &[f64],
    score_fn: &dyn ScoreFunction,
    cfg: &SamplerConfig,
    p: &SdeParams,
    run: u64,
    mut trajectory: Option<&mut Trajectory>,
) -> Result<StackedSignal> {
    cfg.validate()?;
    if y.len() != p.n {
        return Err(Error::DimensionMismatch {
            expected: p.n,
            got: y.len(),
        });
    }
    let mut rng = stream_rng(cfg.seed, run);
    let shape = cfg
        .priorgrad
        .enabled
        .then(|| NoiseShape::from_mixture(y, cfg.priorgrad.window));
    let shape = shape.as_ref();

    let grid = cfg.time_grid(p);
    let z = draw_noise(&mut rng, &StackedSignal::zeros(p.k, p.n), shape);
    let mut x = p.sample_prior(y, &z)?;
    check_finite(&x, 0, grid[0])?;
    if let Some(tr) = trajectory.as_deref_mut() {
        tr.times.push(grid[0]);
        tr.states.push(x.clone());
    }

    for (step, w) in grid.windows(2).enumerate() {
        let (t, t_next) = (w[0], w[1]);
        x = predictor_step(&x, t, t - t_next, score_fn, y, p, &mut rng, shape)?;
        check_finite(&x, step + 1, t_next)?;
        for _ in 0..cfg.n_corrector {
            x = corrector_step(&x, t_next, score_fn, y, cfg.snr_r, &mut rng, shape)?;
            check_finite(&x, step + 1, t_next)?;
        }
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.times.push(t_next);
            tr.states.push(x.clone());
        }
    }
    Ok(x)
}

/// Independent runs of the same configuration on `workers` threads. Run `i`
/// always uses stream `i`, so the output does not depend on `workers`.
pub fn separate_many(
    ys: &[Vec<f64>],
    score_fn: &dyn ScoreFunction,
    cfg: &SamplerConfig,
    p: &SdeParams,
    workers: usize,
) -> Result<Vec<StackedSignal>> {
    run_parallel(ys.len(), workers, |run| {
        separate_run(&ys[run], score_fn, cfg, p, run as u64, None)
    })
}

/// Evaluates `f(0..count)` on contiguous chunks of indices, one thread per
/// chunk, returning results in index order. The first error wins.
pub fn run_parallel<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(count.max(1));
    let chunk = count.div_ceil(workers).max(1);
    let mut results: Vec<Option<Result<T>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, slots) in results.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (offset, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + offset));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every run executed")).collect()
}

/// `‖mix(ŝ) − y‖ / ‖y‖`, reported but never enforced.
pub fn mixture_deviation(est: &StackedSignal, y: &[f64]) -> f64 {
    let mixed = est.mix();
    let num: f64 = mixed.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = y.iter().map(|v| v * v).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::ProjectorPair;
    use crate::oracle::{GaussianPrior, PointMassScore, PosteriorScore};
    use crate::rng::standard_normal_vec;

    fn zero_score(x: &StackedSignal, _t: f64, _y: &[f64]) -> Result<StackedSignal> {
        Ok(StackedSignal::zeros(x.k(), x.n()))
    }

    #[test]
    fn reverse_drift_examples() {
        let p0 = SdeParams {
            gamma: 0.0,
            ..SdeParams::new(2, 1)
        };
        let x = StackedSignal::new(vec![1.0, 0.0], 2, 1).unwrap();
        let zero = StackedSignal::zeros(2, 1);
        assert_eq!(reverse_drift(&x, 0.5, &zero, &p0).norm(), 0.0);
        let p = SdeParams::new(2, 1);
        assert_eq!(reverse_drift(&x, 0.5, &zero, &p).as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn reverse_drift_matches_dense() {
        let (k, n) = (3, 4);
        let p = SdeParams::new(k, n);
        let mut rng = stream_rng(1, 0);
        let x = StackedSignal::new(standard_normal_vec(&mut rng, k * n), k, n).unwrap();
        let s = StackedSignal::new(standard_normal_vec(&mut rng, k * n), k, n).unwrap();
        let t = 0.37;
        let fast = reverse_drift(&x, t, &s, &p);
        let pc = ProjectorPair::new(k).complement().kronecker(&nalgebra::DMatrix::identity(n, n));
        let xv = nalgebra::DVector::from_column_slice(x.as_slice());
        let sv = nalgebra::DVector::from_column_slice(s.as_slice());
        // −[f − g² s] with f = −γ P̃ x
        let f = -(pc * xv) * p.gamma;
        let dense = -(f - sv * p.diffusion_coeff(t).powi(2));
        for (a, b) in fast.as_slice().iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predictor_noise_scales_with_sqrt_dt() {
        let p = SdeParams::new(2, 4);
        let x = StackedSignal::zeros(2, 4);
        let y = [0.0; 4];
        let dt = 1e-8;
        let mut rng = stream_rng(0, 0);
        let next = predictor_step(&x, 0.5, dt, &zero_score, &y, &p, &mut rng, None).unwrap();
        let change = next.norm();
        assert!(change < 10.0 * p.diffusion_coeff(0.5) * dt.sqrt() * 8f64.sqrt());
        assert!(change > 0.0);
    }

    #[test]
    fn predictor_variance_growth_without_drift() {
        let p = SdeParams {
            gamma: 0.0,
            ..SdeParams::new(1, 1)
        };
        let x = StackedSignal::zeros(1, 1);
        let (t, dt) = (0.6, 0.05);
        let draws = 10_000;
        let mut rng = stream_rng(3, 0);
        let mut sq = 0.0;
        for _ in 0..draws {
            let v = predictor_step(&x, t, dt, &zero_score, &[0.0], &p, &mut rng, None).unwrap();
            sq += v.as_slice()[0].powi(2);
        }
        let expected = p.diffusion_coeff(t).powi(2) * dt;
        assert!((sq / draws as f64 / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn predictor_tracks_point_mass_mean() {
        let (k, n) = (2, 4);
        let p = SdeParams::new(k, n);
        let mut rng = stream_rng(4, 0);
        let s = StackedSignal::new(standard_normal_vec(&mut rng, k * n), k, n).unwrap();
        let y = s.mix();
        let score = PointMassScore {
            sources: s.clone(),
            params: p,
        };
        let cfg = SamplerConfig {
            n_corrector: 0,
            ..SamplerConfig::default()
        };
        let (_, traj) = separate_with_trajectory(&y, &score, &cfg, &p).unwrap();
        let errs: Vec<f64> = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(t, x)| x.add_scaled(-1.0, &p.marginal(*t, &s).mu).norm())
            .collect();
        assert!(errs.last().unwrap() < &(0.25 * errs[0]), "{errs:?}");
        let third = errs.len() / 3;
        assert!(errs[2 * third] < errs[third] && errs[third] < errs[0]);
    }

    #[test]
    fn corrector_skips_on_zero_score() {
        let x = StackedSignal::new(vec![0.3, -0.1], 2, 1).unwrap();
        let mut rng = stream_rng(0, 0);
        let out = corrector_step(&x, 0.5, &zero_score, &[0.2], 0.5, &mut rng, None).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn step_size_quadruples_with_doubled_snr() {
        let a = langevin_step_size(0.5, 3.0, 7.0);
        let b = langevin_step_size(1.0, 3.0, 7.0);
        assert!((b / a - 4.0).abs() < 1e-14);
    }

    #[test]
    fn corrector_keeps_gaussian_mean() {
        // target N(m, v I) with its exact score
        let m = [0.7, -0.4];
        let v = 0.3;
        let score = move |x: &StackedSignal, _t: f64, _y: &[f64]| {
            x.with_data(x.as_slice().iter().zip(&m).map(|(a, b)| -(a - b) / v).collect())
        };
        let chains = 10_000;
        let mut rng = stream_rng(8, 0);
        let mut sum = [0.0; 2];
        for _ in 0..chains {
            let z = standard_normal_vec(&mut rng, 2);
            let mut x = StackedSignal::new(
                vec![m[0] + v.sqrt() * z[0], m[1] + v.sqrt() * z[1]],
                2,
                1,
            )
            .unwrap();
            for _ in 0..5 {
                x = corrector_step(&x, 0.5, &score, &[0.0], 0.5, &mut rng, None).unwrap();
            }
            sum[0] += x.as_slice()[0];
            sum[1] += x.as_slice()[1];
        }
        for i in 0..2 {
            let se = (v / chains as f64).sqrt();
            assert!((sum[i] / chains as f64 - m[i]).abs() < 5.0 * se * 1.5);
        }
    }

    #[test]
    fn time_grid_is_strictly_decreasing() {
        let p = SdeParams::new(2, 2);
        for schedule in [TimeSchedule::Uniform, TimeSchedule::Geometric] {
            let cfg = SamplerConfig {
                schedule,
                ..SamplerConfig::default()
            };
            let g = cfg.time_grid(&p);
            assert_eq!(g.len(), 31);
            assert_eq!(g[0], p.t_max);
            assert_eq!(*g.last().unwrap(), p.t_eps);
            assert!(g.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn separation_is_deterministic_and_mode_agnostic() {
        let p = SdeParams::new(2, 8);
        let score = PosteriorScore::gaussian(&GaussianPrior::standard(2, 8), p);
        let y: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
        let cfg = SamplerConfig::default();
        let a = separate(&y, &score, &cfg, &p).unwrap();
        let b = separate(&y, &score, &cfg, &p).unwrap();
        assert_eq!(a, b);
        let enh = SamplerConfig {
            mode: Mode::Enhancement,
            ..cfg
        };
        assert_eq!(separate(&y, &score, &enh, &p).unwrap(), a);
    }

    #[test]
    fn separate_many_ignores_worker_count() {
        let p = SdeParams::new(2, 4);
        let score = PosteriorScore::gaussian(&GaussianPrior::standard(2, 4), p);
        let ys: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.1; 4]).collect();
        let cfg = SamplerConfig::default();
        let one = separate_many(&ys, &score, &cfg, &p, 1).unwrap();
        let three = separate_many(&ys, &score, &cfg, &p, 3).unwrap();
        assert_eq!(one, three);
        assert_eq!(one[2], separate_run(&ys[2], &score, &cfg, &p, 2, None).unwrap());
    }

    #[test]
    fn non_finite_state_aborts_with_step() {
        let p = SdeParams::new(2, 2);
        let bad = |x: &StackedSignal, _t: f64, _y: &[f64]| x.with_data(vec![f64::NAN; x.len()]);
        let err = separate(&[0.1, 0.2], &bad, &SamplerConfig::default(), &p).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1, .. }), "{err}");
    }

    #[test]
    fn priorgrad_variance_examples() {
        assert_eq!(priorgrad_variance(&[0.5; 10], 4), vec![0.25; 10]);
        let y = [0.3, -1.2, 2.0];
        assert_eq!(priorgrad_variance(&y, 1), vec![0.09, 1.44, 4.0]);
    }

    #[test]
    fn priorgrad_impulse_matches_brute_force() {
        let (len, n0, window) = (1000, 400, 500);
        let mut y = vec![0.0; len];
        y[n0] = 1.0;
        let fast = priorgrad_variance(&y, window);
        for (i, v) in fast.iter().enumerate() {
            // 250 samples before n, n itself, 249 after; cut at the edges
            let (mut acc, mut count) = (0.0, 0usize);
            for d in -250i64..=249 {
                let m = i as i64 + d;
                if (0..len as i64).contains(&m) {
                    acc += y[m as usize] * y[m as usize];
                    count += 1;
                }
            }
            assert!((v - acc / count as f64).abs() < 1e-15, "n = {i}");
            if i >= 250 && i + 250 <= len && i.abs_diff(n0) < 250 {
                assert!((v - 1.0 / 500.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn noise_shape_preserves_average_power_for_stationary_input() {
        let shape = NoiseShape::from_mixture(&[0.5; 64], 16);
        assert!(shape.0.iter().all(|d| (d - 1.0).abs() < 1e-12));
        assert!(NoiseShape::from_mixture(&[0.0; 8], 4).0.iter().all(|d| *d == 1.0));
    }
}
