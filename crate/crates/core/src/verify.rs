//! Monte-Carlo check of the closed-form marginals.
//!
//! Paths of the forward SDE are simulated with Euler–Maruyama on a uniform
//! grid. At each requested time the empirical mean is compared with `μ_t`, and
//! the sample covariance is projected onto `P̄` and `P̃` to estimate `λ₁` and
//! `λ₂`:
//!
//! ```text
//! λ̂₁ = tr(P̄ Ĉ) / N,   λ̂₂ = tr(P̃ Ĉ) / ((K − 1) N)
//! ```
//!
//! Paths are split into contiguous chunks, one per worker. Worker `w` draws
//! from stream `w` of `seed`, and the per-worker sums are merged in worker
//! order, so a report is reproducible for a fixed `(seed, workers)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{order_invariant_sum, StackedSignal};
use crate::rng::{standard_normal, stream_rng};
use crate::mixing::apply_projector_mix;
use crate::sampler::Trajectory;
use crate::sde::{Eigenspace, SdeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_paths: 20_000,
            n_steps: 1_000,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCheck {
    pub t: f64,
    pub mean_rel_err: f64,
    pub lambda1_theory: f64,
    pub lambda1_mc: f64,
    pub lambda2_theory: f64,
    pub lambda2_mc: f64,
}

impl MarginalCheck {
    pub fn lambda1_rel_err(&self) -> f64 {
        rel_err(self.lambda1_mc, self.lambda1_theory)
    }

    pub fn lambda2_rel_err(&self) -> f64 {
        rel_err(self.lambda2_mc, self.lambda2_theory)
    }

    pub fn max_lambda_rel_err(&self) -> f64 {
        self.lambda1_rel_err().max(self.lambda2_rel_err())
    }
}

fn rel_err(estimate: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        estimate.abs()
    } else {
        ((estimate - reference) / reference).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub settings: McSettings,
    pub rows: Vec<MarginalCheck>,
}

impl MarginalReport {
    pub const CSV_HEADER: &'static str =
        "t,mean_rel_err,lambda1_theory,lambda1_mc,lambda2_theory,lambda2_mc";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.t, r.mean_rel_err, r.lambda1_theory, r.lambda1_mc, r.lambda2_theory, r.lambda2_mc
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Per-snapshot running sums of one worker.
#[derive(Clone)]
struct Accum {
    sum: Vec<f64>,
    avg_sq: f64,
    cmp_sq: f64,
}

/// Simulates the forward SDE from `s` and compares against the closed form at
/// every time in `t_grid`. Times are snapped to the step grid on `[0, max t]`.
pub fn verify_marginals_mc(
    s: &StackedSignal,
    t_grid: &[f64],
    p: &SdeParams,
    settings: McSettings,
) -> Result<MarginalReport> {
    if settings.n_paths < 1_000 {
        return Err(Error::InvalidParameter(format!(
            "n_paths must be at least 1000 (got {})",
            settings.n_paths
        )));
    }
    if settings.n_steps < 100 {
        return Err(Error::InvalidParameter(format!(
            "n_steps must be at least 100 (got {})",
            settings.n_steps
        )));
    }
    if s.k() < 2 {
        return Err(Error::InvalidParameter(
            "at least two sources are needed to estimate λ₂".into(),
        ));
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidParameter("time grid must be non-empty and positive".into()));
    }
    let t_end = t_grid.iter().copied().fold(0.0, f64::max);
    let dt = t_end / settings.n_steps as f64;
    let snap_steps: Vec<usize> = t_grid
        .iter()
        .map(|t| ((t / dt).round() as usize).clamp(1, settings.n_steps))
        .collect();

    let workers = settings.workers.max(1).min(settings.n_paths);
    let chunks: Vec<(usize, usize)> = (0..workers)
        .map(|w| {
            (
                w * settings.n_paths / workers,
                (w + 1) * settings.n_paths / workers,
            )
        })
        .collect();

    let results: Vec<Vec<Accum>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .enumerate()
            .map(|(w, &(lo, hi))| {
                let snap_steps = &snap_steps;
                scope.spawn(move || {
                    simulate_chunk(s, p, dt, settings.n_steps, snap_steps, hi - lo, settings.seed, w as u64)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("MC worker panicked")).collect()
    });

    let (k, n) = (s.k(), s.n());
    let paths = settings.n_paths as f64;
    let mut rows = Vec::with_capacity(t_grid.len());
    for (i, &step) in snap_steps.iter().enumerate() {
        let mut total = Accum {
            sum: vec![0.0; k * n],
            avg_sq: 0.0,
            cmp_sq: 0.0,
        };
        for worker in &results {
            let a = &worker[i];
            for (t, v) in total.sum.iter_mut().zip(&a.sum) {
                *t += v;
            }
            total.avg_sq += a.avg_sq;
            total.cmp_sq += a.cmp_sq;
        }
        let mean = s.with_data(total.sum.iter().map(|v| v / paths).collect())?;
        let t = step as f64 * dt;
        let mu = p.marginal(t, s).mu;
        let mu_norm = mu.norm();
        let gap = mean.add_scaled(-1.0, &mu).norm();
        let mean_rel_err = if mu_norm > 0.0 { gap / mu_norm } else { gap };

        // unbiased: Σ‖P(x − m)‖² = Σ‖Px‖² − n‖Pm‖²
        let (mean_avg_sq, mean_cmp_sq) = split_energy(&mean);
        let bessel = paths / (paths - 1.0);
        let tr_avg = (total.avg_sq / paths - mean_avg_sq) * bessel;
        let tr_cmp = (total.cmp_sq / paths - mean_cmp_sq) * bessel;
        let (l1, l2) = p.lambdas(t);
        rows.push(MarginalCheck {
            t,
            mean_rel_err,
            lambda1_theory: l1,
            lambda1_mc: tr_avg / n as f64,
            lambda2_theory: l2,
            lambda2_mc: tr_cmp / ((k - 1) * n) as f64,
        });
    }
    Ok(MarginalReport { settings, rows })
}

/// `(‖P̄x‖², ‖P̃x‖²)`.
fn split_energy(x: &StackedSignal) -> (f64, f64) {
    let (k, n) = (x.k(), x.n());
    let data = x.as_slice();
    let mut scratch = vec![0.0; k];
    let (mut avg, mut cmp) = (0.0, 0.0);
    for i in 0..n {
        for (j, slot) in scratch.iter_mut().enumerate() {
            *slot = data[j * n + i];
        }
        let m = order_invariant_sum(&mut scratch.clone()) / k as f64;
        avg += k as f64 * m * m;
        cmp += scratch.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    (avg, cmp)
}

#[allow(clippy::too_many_arguments)]
fn simulate_chunk(
    s: &StackedSignal,
    p: &SdeParams,
    dt: f64,
    n_steps: usize,
    snap_steps: &[usize],
    paths: usize,
    seed: u64,
    stream: u64,
) -> Vec<Accum> {
    let (k, n) = (s.k(), s.n());
    let mut rng = stream_rng(seed, stream);
    let mut acc = vec![
        Accum {
            sum: vec![0.0; k * n],
            avg_sq: 0.0,
            cmp_sq: 0.0,
        };
        snap_steps.len()
    ];
    let sqrt_dt = dt.sqrt();
    let noise_scale: Vec<f64> = (0..n_steps)
        .map(|i| p.diffusion_coeff(i as f64 * dt) * sqrt_dt)
        .collect();
    let inv_k = 1.0 / k as f64;
    let mut x = vec![0.0; k * n];
    let mut mean = vec![0.0; n];
    let mut scratch = vec![0.0; k];

    for _ in 0..paths {
        x.copy_from_slice(s.as_slice());
        for (step, &scale) in noise_scale.iter().enumerate() {
            for i in 0..n {
                for (j, slot) in scratch.iter_mut().enumerate() {
                    *slot = x[j * n + i];
                }
                mean[i] = order_invariant_sum(&mut scratch) * inv_k;
            }
            for j in 0..k {
                for i in 0..n {
                    let v = &mut x[j * n + i];
                    *v += -p.gamma * (*v - mean[i]) * dt + scale * standard_normal(&mut rng);
                }
            }
            let done = step + 1;
            for (slot, _) in snap_steps.iter().enumerate().filter(|(_, &st)| st == done) {
                let a = &mut acc[slot];
                for (t, v) in a.sum.iter_mut().zip(&x) {
                    *t += v;
                }
                let state = StackedSignal::new(x.clone(), k, n).expect("shape");
                let (avg, cmp) = split_energy(&state);
                a.avg_sq += avg;
                a.cmp_sq += cmp;
            }
        }
    }
    acc
}

/// One Euler–Maruyama path of the forward SDE on `[0, t_end]`, every step recorded.
pub fn simulate_forward_path(
    s: &StackedSignal,
    p: &SdeParams,
    t_end: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if n_steps == 0 || !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need n_steps >= 1 and t_end > 0 (got {n_steps}, {t_end})"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let dt = t_end / n_steps as f64;
    let mut x = s.clone();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
    };
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let drift = apply_projector_mix(0.0, -p.gamma, &x);
        let mut z = StackedSignal::zeros(s.k(), s.n());
        crate::rng::fill_standard_normal(&mut rng, z.as_mut_slice());
        x = x
            .add_scaled(dt, &drift)
            .add_scaled(p.diffusion_coeff(t) * dt.sqrt(), &z);
        traj.times.push((step + 1) as f64 * dt);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

/// `λ_k(t)` from the variance ODE `dλ/dt = −2ξ_k λ + g(t)²`, `λ(0) = 0`,
/// integrated with classical Runge–Kutta.
pub fn lambda_ode(p: &SdeParams, t: f64, space: Eigenspace, steps: usize) -> f64 {
    let xi = match space {
        Eigenspace::Average => 0.0,
        Eigenspace::Difference => p.gamma,
    };
    let f = |tau: f64, l: f64| -2.0 * xi * l + p.diffusion_coeff(tau).powi(2);
    let h = t / steps.max(1) as f64;
    let mut l = 0.0;
    for i in 0..steps.max(1) {
        let tau = i as f64 * h;
        let k1 = f(tau, l);
        let k2 = f(tau + h / 2.0, l + h / 2.0 * k1);
        let k3 = f(tau + h / 2.0, l + h / 2.0 * k2);
        let k4 = f(tau + h, l + h * k3);
        l += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaCurvePoint {
    pub t: f64,
    pub g: f64,
    pub decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// The closed-form process parameters on `points` uniform times in `[0, T]`.
pub fn lambda_curve(p: &SdeParams, points: usize) -> Vec<LambdaCurvePoint> {
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let t = p.t_max * i as f64 / (points - 1) as f64;
            let (lambda1, lambda2) = p.lambdas(t);
            LambdaCurvePoint {
                t,
                g: p.diffusion_coeff(t),
                decay: p.mixing_decay(t),
                lambda1,
                lambda2,
            }
        })
        .collect()
}

pub fn lambda_curve_csv(curve: &[LambdaCurvePoint]) -> String {
    let mut out = String::from("t,g,decay,lambda1,lambda2\n");
    for c in curve {
        out.push_str(&format!("{},{},{},{},{}\n", c.t, c.g, c.decay, c.lambda1, c.lambda2));
    }
    out
}
