//! The subcommands behind the `mixdiff` binary.
//!
//! Every command writes `manifest.json` plus its own artifacts into the
//! configured output directory and returns an [`Outcome`]. JSON reports carry
//! no timing information, so they are bit-identical across runs with the same
//! `(seed, workers)`; timings go to the summary lines and, for WAV commands,
//! to `diagnostics.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixing::StackedSignal;
use crate::net::{evaluate_dsm, Checkpoint, MlpScoreModel, Trainer};
use crate::oracle::{posterior_sources_given_mixture, GaussianPrior, PointMassScore, PosteriorScore};
use crate::rng::stream_rng;
use crate::sampler::{
    mixture_deviation, run_parallel, separate_run, separate_with_trajectory, Mode, ScoreFunction, Trajectory,
};
use crate::sde::{Eigenspace, SdeParams};
use crate::signal::{pit_si_sdr, toy_dataset, toy_gmm_prior, wav_read, wav_write, EvalReport, ToyKind};
use crate::verify::{lambda_curve, lambda_curve_csv, lambda_ode, simulate_forward_path, verify_marginals_mc, McSettings};

use super::config::{Manifest, PriorKind, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Process exit code for an error: numerical breakdowns are quantitative
/// failures (1), everything else is a usage or input problem (2).
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } | Error::DensityUnderflow { .. } | Error::ZeroReference => 1,
        _ => 2,
    }
}

/// One named pass/fail comparison in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
        }
    }

    fn above(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value > tolerance,
            value,
            tolerance,
        }
    }

    fn line(&self) -> String {
        format!(
            "{} {}: {} (tolerance {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join("manifest.json"), &Manifest::new(command, cfg))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, Serialize)]
struct VerifyReport {
    passed: bool,
    k: usize,
    n: usize,
    settings: McSettings,
    rows: Vec<crate::verify::MarginalCheck>,
    failing_t: Vec<f64>,
    checks: Vec<Check>,
}

/// Monte-Carlo check of the closed-form marginals plus the exact-identity
/// suites. Writes `marginals.csv`, `lambda_curve.csv` and `report.json`.
pub fn verify(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare_out(cfg, "verify")?;
    let p = cfg.sde;
    let v = &cfg.verify;
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let s = StackedSignal::new(crate::rng::standard_normal_vec(&mut rng, p.k * p.n), p.k, p.n)?;
    let settings = McSettings {
        n_paths: v.n_paths,
        n_steps: v.n_steps,
        seed: cfg.seed,
        workers: cfg.workers,
    };
    let mut report = verify_marginals_mc(&s, &v.t_grid, &p, settings).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(factor) = v.tamper_lambda {
        for row in &mut report.rows {
            row.lambda1_theory *= factor;
            row.lambda2_theory *= factor;
        }
    }
    report.write_csv(&dir.join("marginals.csv"))?;
    write_text(
        &dir.join("lambda_curve.csv"),
        &lambda_curve_csv(&lambda_curve(&p, v.curve_points)),
    )?;

    let mut checks = Vec::new();
    let mut failing_t = Vec::new();
    for row in &report.rows {
        let mean = Check::at_most(format!("mean t={}", row.t), row.mean_rel_err, v.mean_tol);
        let lambda = Check::at_most(format!("lambda t={}", row.t), row.max_lambda_rel_err(), v.lambda_tol);
        if !(mean.passed && lambda.passed) {
            failing_t.push(row.t);
        }
        checks.push(mean);
        checks.push(lambda);
    }

    // μ_t − s̄ = e^{−γt}(s − s̄)
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let s = StackedSignal::new(crate::rng::standard_normal_vec(&mut rng, p.k * p.n), p.k, p.n)?;
        let t = p.t_max * (i as f64 + 0.5) / 20.0;
        let s_bar = StackedSignal::mixture_average(&s.mix(), p.k);
        let lhs = p.marginal(t, &s).mu.add_scaled(-1.0, &s_bar);
        let rhs = s.add_scaled(-1.0, &s_bar).scaled(p.mixing_decay(t));
        worst = worst.max(lhs.add_scaled(-1.0, &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE));
    }
    checks.push(Check::at_most("mean identity", worst, 1e-12));

    let mut worst: f64 = 0.0;
    for i in 1..=100 {
        let t = p.t_max * i as f64 / 100.0;
        for space in [Eigenspace::Average, Eigenspace::Difference] {
            worst = worst.max(rel(lambda_ode(&p, t, space, 2000), p.lambda(t, space)));
        }
    }
    checks.push(Check::at_most("lambda ode", worst, 1e-8));

    let passed = checks.iter().all(|c| c.passed);
    let mut lines: Vec<String> = checks.iter().map(Check::line).collect();
    if !failing_t.is_empty() {
        lines.push(format!("failing t: {failing_t:?}"));
    }
    write_json(
        &dir.join("report.json"),
        &VerifyReport {
            passed,
            k: p.k,
            n: p.n,
            settings,
            rows: report.rows,
            failing_t,
            checks,
        },
    )?;
    Ok(Outcome { passed, lines, out_dir: dir })
}

// ---------------------------------------------------------------- separate-toy

#[derive(Debug, Clone, Serialize)]
struct MomentStats {
    posterior_mean: Vec<f64>,
    sample_mean: Vec<f64>,
    posterior_var: Vec<f64>,
    sample_var: Vec<f64>,
    max_mean_abs_err: f64,
    max_var_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SeparateToyReport {
    passed: bool,
    prior: PriorKind,
    score: String,
    trials: usize,
    k: usize,
    n: usize,
    mean_si_sdr: f64,
    min_si_sdr: f64,
    mixture_si_sdr: f64,
    improvement_db: f64,
    mean_mixture_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_rel_error: Option<f64>,
    /// RMS relative error of an exact sample at `t_eps`, averaged over trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    moments: Option<MomentStats>,
    checks: Vec<Check>,
}

enum ToyScore {
    Oracle(PosteriorScore),
    PointMass,
    Model(MlpScoreModel),
}

fn load_compatible_checkpoint(path: &Path, k: usize, n: Option<usize>) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    let spec = &ck.model.spec;
    if spec.k != k {
        return Err(Error::Incompatible(format!(
            "{} was trained for K = {}, the run uses K = {k}",
            path.display(),
            spec.k
        )));
    }
    if let Some(n) = n {
        if spec.n != n {
            return Err(Error::Incompatible(format!(
                "{} was trained for N = {}, the run uses N = {n}",
                path.display(),
                spec.n
            )));
        }
    }
    Ok(ck)
}

/// Separates toy mixtures with an oracle score (or a trained checkpoint) and
/// checks the result against the exact posterior.
/// `sqrt(E‖x − s‖²) / ‖s‖` for `x` drawn exactly from the marginal at `t_eps`.
fn t_eps_floor(s: &StackedSignal, p: &SdeParams) -> f64 {
    let mg = p.marginal(p.t_eps, s);
    let (k, n) = (p.k as f64, p.n as f64);
    let trace = n * mg.lambda1 + (k - 1.0) * n * mg.lambda2;
    (mg.mu.add_scaled(-1.0, s).norm_sq() + trace).sqrt() / s.norm()
}

pub fn separate_toy(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare_out(cfg, "separate-toy")?;
    let started = Instant::now();
    let mut p = cfg.sde;
    let toy = &cfg.toy;
    let trials = toy.trials;

    let score = match &cfg.checkpoint {
        Some(path) => {
            let ck = load_compatible_checkpoint(path, p.k, Some(p.n))?;
            p = ck.model.sde;
            ToyScore::Model(ck.score_model())
        }
        None => match toy.prior {
            PriorKind::Gaussian => ToyScore::Oracle(PosteriorScore::gaussian(&GaussianPrior::standard(p.k, p.n), p)),
            PriorKind::Gmm => ToyScore::Oracle(PosteriorScore::new(toy_gmm_prior(p.k, p.n)?.to_block()?, p)),
            PriorKind::PointMass => ToyScore::PointMass,
        },
    };

    // ground-truth sources per trial
    let sources: Vec<StackedSignal> = match toy.prior {
        PriorKind::Gaussian => {
            let prior = GaussianPrior::standard(p.k, p.n).to_block();
            let s = prior.sample(&mut stream_rng(cfg.seed, u64::MAX));
            vec![s; trials]
        }
        PriorKind::Gmm => toy_dataset(ToyKind::GmmDraw, p.k, p.n, cfg.seed, trials)?,
        PriorKind::PointMass => toy_dataset(toy.source, p.k, p.n, cfg.seed, trials)?,
    };
    let ys: Vec<Vec<f64>> = sources.iter().map(StackedSignal::mix).collect();

    let sampler = cfg.sampler;
    let estimates = run_parallel(trials, cfg.workers, |i| {
        let point;
        let score_fn: &dyn ScoreFunction = match &score {
            ToyScore::Oracle(s) => s,
            ToyScore::Model(m) => m,
            ToyScore::PointMass => {
                point = PointMassScore {
                    sources: sources[i].clone(),
                    params: p,
                };
                &point
            }
        };
        separate_run(&ys[i], score_fn, &sampler, &p, i as u64, None)
    })?;

    let evals: Vec<EvalReport> = estimates
        .iter()
        .zip(&sources)
        .map(|(e, s)| pit_si_sdr(e, s))
        .collect::<Result<_>>()?;
    let mean_of = |f: &dyn Fn(&EvalReport) -> f64| evals.iter().map(f).sum::<f64>() / trials as f64;
    let mean_si_sdr = mean_of(&|r| r.mean_si_sdr);
    let mixture_si_sdr = mean_of(&|r| r.mixture_mean_si_sdr);
    let min_si_sdr = evals.iter().map(|r| r.mean_si_sdr).fold(f64::INFINITY, f64::min);
    let deviations: Vec<f64> = estimates.iter().zip(&ys).map(|(e, y)| mixture_deviation(e, y)).collect();

    let mut checks = Vec::new();
    let mut moments = None;
    let mut max_rel_error = None;
    let mut mean_rel_error = None;
    let mut noise_floor = None;
    let oracle = matches!(score, ToyScore::Oracle(_) | ToyScore::PointMass);
    match toy.prior {
        PriorKind::Gaussian if oracle => {
            let post = posterior_sources_given_mixture(&ys[0], &crate::oracle::BlockGmm::single(GaussianPrior::standard(p.k, p.n).to_block()))?;
            let (_, g) = &post.components[0];
            let n = p.n;
            let posterior_mean = g.mean.block(0).to_vec();
            let posterior_var = vec![g.cov[(0, 0)]; n];
            let mut sample_mean = vec![0.0; n];
            for e in &estimates {
                for (m, v) in sample_mean.iter_mut().zip(e.block(0)) {
                    *m += v / trials as f64;
                }
            }
            let mut sample_var = vec![0.0; n];
            for e in &estimates {
                for ((acc, v), m) in sample_var.iter_mut().zip(e.block(0)).zip(&sample_mean) {
                    *acc += (v - m).powi(2) / (trials as f64 - 1.0).max(1.0);
                }
            }
            let max_mean_abs_err = sample_mean
                .iter()
                .zip(&posterior_mean)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let max_var_rel_err = sample_var
                .iter()
                .zip(&posterior_var)
                .map(|(a, b)| rel(*a, *b))
                .fold(0.0, f64::max);
            checks.push(Check::at_most("block-1 mean abs error", max_mean_abs_err, toy.mean_tol));
            checks.push(Check::at_most("block-1 variance rel error", max_var_rel_err, toy.var_tol));
            moments = Some(MomentStats {
                posterior_mean,
                sample_mean,
                posterior_var,
                sample_var,
                max_mean_abs_err,
                max_var_rel_err,
            });
        }
        PriorKind::PointMass => {
            let errs: Vec<f64> = estimates
                .iter()
                .zip(&sources)
                .map(|(e, s)| e.add_scaled(-1.0, s).norm() / s.norm())
                .collect();
            let mean_err = errs.iter().sum::<f64>() / trials as f64;
            let floor = sources.iter().map(|s| t_eps_floor(s, &p)).sum::<f64>() / trials as f64;
            max_rel_error = Some(errs.iter().copied().fold(0.0, f64::max));
            mean_rel_error = Some(mean_err);
            noise_floor = Some(floor);
            checks.push(Check::at_most("relative error above t_eps floor", mean_err - floor, toy.rel_error_tol));
            checks.push(Check::above("min PIT-SI-SDR (dB)", min_si_sdr, toy.min_si_sdr));
        }
        _ => checks.push(Check::above("PIT-SI-SDR improvement (dB)", mean_si_sdr - mixture_si_sdr, 0.0)),
    }

    if cfg.trajectory {
        let score_fn: Box<dyn ScoreFunction> = match &score {
            ToyScore::Oracle(s) => Box::new(s.clone()),
            ToyScore::Model(m) => Box::new(m.clone()),
            ToyScore::PointMass => Box::new(PointMassScore {
                sources: sources[0].clone(),
                params: p,
            }),
        };
        let (_, traj) = separate_with_trajectory(&ys[0], score_fn.as_ref(), &sampler, &p)?;
        traj.write_csv(&dir.join("trajectory.csv"))?;
    }

    let mut csv = String::from("trial,si_sdr,mixture_si_sdr,improvement,perm,mixture_deviation\n");
    for (i, (r, d)) in evals.iter().zip(&deviations).enumerate() {
        let perm: Vec<String> = r.perm.iter().map(usize::to_string).collect();
        csv.push_str(&format!(
            "{i},{},{},{},{},{d}\n",
            r.mean_si_sdr,
            r.mixture_mean_si_sdr,
            r.improvement,
            perm.join(" ")
        ));
    }
    write_text(&dir.join("trials.csv"), &csv)?;

    let passed = checks.iter().all(|c| c.passed);
    let report = SeparateToyReport {
        passed,
        prior: toy.prior,
        score: match score {
            ToyScore::Model(_) => "model".into(),
            _ => "oracle".into(),
        },
        trials,
        k: p.k,
        n: p.n,
        mean_si_sdr,
        min_si_sdr,
        mixture_si_sdr,
        improvement_db: mean_si_sdr - mixture_si_sdr,
        mean_mixture_deviation: deviations.iter().sum::<f64>() / trials as f64,
        max_rel_error,
        mean_rel_error,
        noise_floor,
        moments,
        checks,
    };
    write_json(&dir.join("report.json"), &report)?;
    let mut lines: Vec<String> = report.checks.iter().map(Check::line).collect();
    lines.push(format!(
        "PIT-SI-SDR {mean_si_sdr:.2} dB, mixture {mixture_si_sdr:.2} dB, {trials} trials in {:.2?}",
        started.elapsed()
    ));
    Ok(Outcome { passed, lines, out_dir: dir })
}

// ---------------------------------------------------------------- train-toy

#[derive(Debug, Clone, Serialize)]
struct TrainReport {
    passed: bool,
    steps: u64,
    dsm_branch: u64,
    mismatch_branch: u64,
    baseline_dsm: f64,
    final_dsm: f64,
    final_dsm_ema: f64,
    reduction: f64,
    permutation_set: Vec<Vec<usize>>,
    checkpoint: PathBuf,
}

/// Trains the toy model on draws of the toy GMM prior. Writes `model.ckpt`,
/// `loss_curve.csv` and `report.json`; passes when the held-out denoising loss
/// of the averaged weights falls by `toy.min_reduction` relative to `q ≡ 0`.
pub fn train_toy(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare_out(cfg, "train-toy")?;
    let started = Instant::now();
    let p = cfg.sde;
    let train = toy_dataset(ToyKind::GmmDraw, p.k, p.n, cfg.seed, cfg.toy.train_size)?;
    let held_out = toy_dataset(ToyKind::GmmDraw, p.k, p.n, cfg.seed.wrapping_add(1), cfg.toy.held_out_size)?;
    let eval_seed = cfg.seed.wrapping_add(2);

    let model = MlpScoreModel::new(cfg.model_spec(), p, cfg.seed)?;
    let mut zero = model.clone();
    zero.zero_output();
    let baseline = evaluate_dsm(&zero, &held_out, eval_seed)?;

    let mut trainer = Trainer::new(model, cfg.train)?;
    let mut csv = String::from("epoch,step,train_loss,held_out_dsm,held_out_dsm_ema\n");
    for epoch in 0..cfg.train.epochs {
        let loss = trainer.train_epoch(&train)?;
        let raw = evaluate_dsm(trainer.model(), &held_out, eval_seed)?;
        let ema = evaluate_dsm(&trainer.ema_model(), &held_out, eval_seed)?;
        csv.push_str(&format!("{},{},{loss},{raw},{ema}\n", epoch + 1, trainer.steps()));
    }
    write_text(&dir.join("loss_curve.csv"), &csv)?;

    let final_dsm = evaluate_dsm(trainer.model(), &held_out, eval_seed)?;
    let final_dsm_ema = evaluate_dsm(&trainer.ema_model(), &held_out, eval_seed)?;
    let reduction = 1.0 - final_dsm_ema / baseline;
    let counters = trainer.counters();
    let steps = trainer.steps();
    let (model, ema) = trainer.into_parts();
    let checkpoint = Checkpoint {
        model,
        ema: Some(ema),
        ema_decay: cfg.train.ema_decay,
        train_seed: cfg.seed,
        train_steps: steps,
        sample_rate: Some(cfg.toy.sample_rate),
    };
    let ck_path = dir.join("model.ckpt");
    checkpoint.save(&ck_path)?;

    let check = Check::above("held-out loss reduction", reduction, cfg.toy.min_reduction);
    let passed = check.passed;
    write_json(
        &dir.join("report.json"),
        &TrainReport {
            passed,
            steps,
            dsm_branch: counters.dsm,
            mismatch_branch: counters.mismatch,
            baseline_dsm: baseline,
            final_dsm,
            final_dsm_ema,
            reduction,
            permutation_set: cfg.permutation_set(),
            checkpoint: ck_path.clone(),
        },
    )?;
    Ok(Outcome {
        passed,
        lines: vec![
            check.line(),
            format!(
                "{steps} steps in {:.2?}: held-out loss {baseline:.3} -> {final_dsm_ema:.3} (EMA), {final_dsm:.3} (raw); checkpoint {}",
                started.elapsed(),
                ck_path.display()
            ),
        ],
        out_dir: dir,
    })
}

// ---------------------------------------------------------------- separate-wav / enhance-wav

#[derive(Debug, Clone, Serialize)]
struct WavDiagnostics {
    mode: Mode,
    sample_rate: u32,
    samples: usize,
    chunks: usize,
    chunk_len: usize,
    mixture_deviation: f64,
    clipped_samples: usize,
    runtime_s: f64,
    outputs: Vec<PathBuf>,
    permutation_set: Vec<Vec<usize>>,
}

/// Separates a mono WAV file with a trained checkpoint, block by block.
/// In enhancement mode `K` must be 2 and the outputs are `speech.wav`
/// followed by `noise.wav`; otherwise `source_1.wav` … `source_K.wav`.
pub fn separate_wav(cfg: &RunConfig, mode: Mode) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.sampler.mode = mode;
    cfg.train.mode = mode;
    let command = match mode {
        Mode::Separation => "separate-wav",
        Mode::Enhancement => "enhance-wav",
    };
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| Error::Config(format!("{command} needs --input PATH")))?;
    let ck_path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config(format!("{command} needs --checkpoint PATH")))?;
    if mode == Mode::Enhancement && cfg.sde.k != 2 {
        return Err(Error::Config(format!("enhancement needs K = 2 (got {})", cfg.sde.k)));
    }
    let ck = load_compatible_checkpoint(&ck_path, cfg.sde.k, None)?;
    let wav = wav_read(&input)?;
    if let Some(rate) = ck.sample_rate {
        if rate != wav.sample_rate {
            return Err(Error::Incompatible(format!(
                "{} is sampled at {} Hz, the checkpoint expects {rate} Hz",
                input.display(),
                wav.sample_rate
            )));
        }
    }
    if wav.samples.is_empty() {
        return Err(Error::SignalTooShort { len: 0, min: 1 });
    }
    let dir = prepare_out(&cfg, command)?;
    let started = Instant::now();

    let model = ck.score_model();
    let p = model.sde;
    let chunk_len = p.n;
    let chunks: Vec<Vec<f64>> = wav
        .samples
        .chunks(chunk_len)
        .map(|c| {
            let mut v = c.to_vec();
            v.resize(chunk_len, 0.0);
            v
        })
        .collect();
    let sampler = cfg.sampler;
    let estimates = run_parallel(chunks.len(), cfg.workers, |i| {
        separate_run(&chunks[i], &model, &sampler, &p, i as u64, None)
    })?;

    let total = wav.samples.len();
    let mut sources = vec![Vec::with_capacity(total); p.k];
    for est in &estimates {
        for (k, src) in sources.iter_mut().enumerate() {
            src.extend_from_slice(est.block(k));
        }
    }
    sources.iter_mut().for_each(|s| s.truncate(total));
    let stacked = StackedSignal::from_blocks(&sources)?;
    let deviation = mixture_deviation(&stacked, &wav.samples);

    let names: Vec<String> = match mode {
        Mode::Enhancement => vec!["speech.wav".into(), "noise.wav".into()],
        Mode::Separation => (1..=p.k).map(|i| format!("source_{i}.wav")).collect(),
    };
    let mut clipped = 0;
    let mut outputs = Vec::new();
    for (name, src) in names.iter().zip(&sources) {
        let path = dir.join(name);
        clipped += wav_write(&path, src, wav.sample_rate)?;
        outputs.push(path);
    }
    let runtime_s = started.elapsed().as_secs_f64();
    write_json(
        &dir.join("diagnostics.json"),
        &WavDiagnostics {
            mode,
            sample_rate: wav.sample_rate,
            samples: total,
            chunks: chunks.len(),
            chunk_len,
            mixture_deviation: deviation,
            clipped_samples: clipped,
            runtime_s,
            outputs: outputs.clone(),
            permutation_set: cfg.permutation_set(),
        },
    )?;
    let mut lines = vec![format!(
        "{} chunks of {chunk_len} samples in {runtime_s:.2} s, mixture deviation {deviation:.4}",
        chunks.len()
    )];
    if clipped > 0 {
        lines.push(format!("warning: {clipped} output samples clipped"));
    }
    lines.extend(outputs.iter().map(|o| format!("wrote {}", o.display())));
    Ok(Outcome {
        passed: true,
        lines,
        out_dir: dir,
    })
}

// ---------------------------------------------------------------- simulate-forward

/// Simulates one forward path from toy sources and writes the energy split
/// `forward.csv` (simulated and expected values), `lambda_curve.csv` and,
/// with `trajectory`, every state in `trajectory.csv`.
pub fn simulate_forward(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare_out(cfg, "simulate-forward")?;
    let p = cfg.sde;
    let s = crate::signal::make_toy_sources(cfg.toy.source, p.k, p.n, cfg.seed)?;
    let traj: Trajectory = simulate_forward_path(&s, &p, p.t_max, cfg.verify.n_steps, cfg.seed)?;
    let (diff0, _) = split(&s);
    let mut csv = String::from("t,difference_energy,difference_energy_expected,average_offset,average_offset_expected\n");
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let (diff, _) = split(x);
        let offset = crate::mixing::apply_projector_mix(1.0, 0.0, &x.add_scaled(-1.0, &s)).norm_sq();
        let (l1, l2) = p.lambdas(*t);
        let decay = p.mixing_decay(*t);
        csv.push_str(&format!(
            "{t},{diff},{},{offset},{}\n",
            decay * decay * diff0 + ((p.k - 1) * p.n) as f64 * l2,
            p.n as f64 * l1
        ));
    }
    write_text(&dir.join("forward.csv"), &csv)?;
    write_text(
        &dir.join("lambda_curve.csv"),
        &lambda_curve_csv(&lambda_curve(&p, cfg.verify.curve_points)),
    )?;
    if cfg.trajectory {
        traj.write_csv(&dir.join("trajectory.csv"))?;
    }
    Ok(Outcome {
        passed: true,
        lines: vec![format!(
            "simulated {} steps of the forward process into {}",
            cfg.verify.n_steps,
            dir.display()
        )],
        out_dir: dir,
    })
}

/// `(‖P̃x‖², ‖P̄x‖²)`.
fn split(x: &StackedSignal) -> (f64, f64) {
    let avg = crate::mixing::apply_projector_mix(1.0, 0.0, x).norm_sq();
    let diff = crate::mixing::apply_projector_mix(0.0, 1.0, x).norm_sq();
    (diff, avg)
}
