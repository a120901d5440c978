//! Run configuration: TOML file, command-line overrides and the manifest.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, flags.
//! The top-level `seed` is the only seed; it is copied into the sampler,
//! training and Monte-Carlo settings when the configuration is resolved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::loss::loss_permutations;
use crate::net::{ModelSpec, Preconditioning, TrainConfig};
use crate::sampler::{Mode, SamplerConfig};
use crate::sde::SdeParams;
use crate::signal::{StftParams, ToyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub fourier_features: usize,
    pub preconditioning: Preconditioning,
    pub linear_skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            fourier_features: 4,
            preconditioning: Preconditioning::Noise,
            linear_skip: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub t_grid: Vec<f64>,
    /// Tolerance on the relative error of the empirical mean.
    pub mean_tol: f64,
    /// Tolerance on the relative error of the empirical `λ₁`, `λ₂`.
    pub lambda_tol: f64,
    /// Points of the emitted λ-curve CSV.
    pub curve_points: usize,
    /// Fault injection: multiplies the closed-form λ before comparison.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tamper_lambda: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_paths: 20_000,
            n_steps: 1_000,
            t_grid: vec![0.25, 0.5, 1.0],
            mean_tol: 0.01,
            lambda_tol: 0.05,
            curve_points: 101,
            tamper_lambda: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Gaussian,
    Gmm,
    PointMass,
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(PriorKind::Gaussian),
            "gmm" => Ok(PriorKind::Gmm),
            "point-mass" => Ok(PriorKind::PointMass),
            other => Err(Error::Config(format!("unknown prior kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub prior: PriorKind,
    pub trials: usize,
    /// Source generator for point-mass separation and forward simulation.
    pub source: ToyKind,
    pub train_size: usize,
    pub held_out_size: usize,
    /// Required relative drop of the held-out denoising loss after training.
    pub min_reduction: f64,
    /// Gaussian-prior check: absolute tolerance on the block-1 mean.
    pub mean_tol: f64,
    /// Gaussian-prior check: relative tolerance on the block-1 variance.
    pub var_tol: f64,
    /// Point-mass check: largest allowed mean relative error above the
    /// exact-sample floor at `t_eps`.
    pub rel_error_tol: f64,
    /// Point-mass check: smallest allowed PIT-SI-SDR in dB.
    pub min_si_sdr: f64,
    /// Sample rate stamped into trained checkpoints.
    pub sample_rate: u32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            prior: PriorKind::Gaussian,
            trials: 2000,
            source: ToyKind::SinusoidBank,
            train_size: 256,
            held_out_size: 512,
            min_reduction: 0.3,
            mean_tol: 0.05,
            var_tol: 0.1,
            rel_error_tol: 0.05,
            min_si_sdr: 20.0,
            sample_rate: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub trajectory: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub sde: SdeParams,
    pub sampler: SamplerConfig,
    pub stft: StftParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub verify: VerifyConfig,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
            trajectory: false,
            checkpoint: None,
            input: None,
            sde: SdeParams::default(),
            sampler: SamplerConfig::default(),
            stft: StftParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            verify: VerifyConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

/// Flag values; `None` leaves the file or default value in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub steps: Option<usize>,
    pub corrector: Option<usize>,
    pub snr: Option<f64>,
    pub pt: Option<f64>,
    pub mode: Option<Mode>,
    pub priorgrad: Option<bool>,
    pub trajectory: Option<bool>,
    pub workers: Option<usize>,
    pub trials: Option<usize>,
    pub prior: Option<PriorKind>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr => $($dst:expr),+) => {
                if let Some(v) = $src.clone() {
                    $($dst = v.clone();)+
                }
            };
        }
        set!(o.seed => self.seed);
        set!(o.out => self.out);
        set!(o.k => self.sde.k);
        set!(o.n => self.sde.n);
        set!(o.steps => self.sampler.n_predictor);
        set!(o.corrector => self.sampler.n_corrector);
        set!(o.snr => self.sampler.snr_r);
        set!(o.pt => self.train.p_t);
        set!(o.mode => self.sampler.mode, self.train.mode);
        set!(o.priorgrad => self.sampler.priorgrad.enabled);
        set!(o.trajectory => self.trajectory);
        set!(o.workers => self.workers);
        set!(o.trials => self.toy.trials);
        set!(o.prior => self.toy.prior);
        if o.checkpoint.is_some() {
            self.checkpoint = o.checkpoint.clone();
        }
        if o.input.is_some() {
            self.input = o.input.clone();
        }
    }

    /// Propagates the seed and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.sampler.seed = self.seed;
        self.train.seed = self.seed;
        let cfg = |e: Error| Error::Config(e.to_string());
        self.sde.validate().map_err(cfg)?;
        self.sampler.validate().map_err(cfg)?;
        self.stft.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        self.model_spec().validate().map_err(cfg)?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.toy.trials == 0 {
            return Err(Error::Config("toy.trials must be at least 1".into()));
        }
        if self.toy.train_size == 0 || self.toy.held_out_size == 0 {
            return Err(Error::Config("toy data set sizes must be positive".into()));
        }
        if self.sampler.mode != self.train.mode {
            return Err(Error::Config("sampler.mode and train.mode disagree".into()));
        }
        Ok(self)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            k: self.sde.k,
            n: self.sde.n,
            hidden: self.model.hidden.clone(),
            fourier_features: self.model.fourier_features,
            preconditioning: self.model.preconditioning,
            linear_skip: self.model.linear_skip,
        }
    }

    /// Source permutations searched by the training loss in the configured mode.
    pub fn permutation_set(&self) -> Vec<Vec<usize>> {
        loss_permutations(self.sde.k, self.train.mode).unwrap_or_default()
    }
}

/// Echo of a fully resolved run, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub permutation_set: Vec<Vec<usize>>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            permutation_set: cfg.permutation_set(),
            config: cfg.clone(),
        }
    }
}
