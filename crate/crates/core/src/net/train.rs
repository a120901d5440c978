//! The training loop: per-sample choice between the denoising loss at a
//! random time and the mismatch loss at `T`, one optimizer update per batch,
//! and an exponential moving average of the weights.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::StackedSignal;
use crate::rng::{fill_standard_normal, stream_rng, Rng};
use crate::sampler::Mode;

use super::loss::{dsm_loss, dsm_loss_grad, mismatch_pit_loss_grad};
use super::mlp::MlpScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Probability of the mismatch branch for each sample.
    pub p_t: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub ema_decay: f64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_t: 0.1,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 125,
            seed: 0,
            optimizer: Optimizer::default(),
            ema_decay: 0.999,
            mode: Mode::Separation,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..=1.0).contains(&self.p_t) {
            return bad(format!("p_T must lie in [0, 1] (got {})", self.p_t));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0 (got {})", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("EMA decay must lie in [0, 1] (got {})", self.ema_decay));
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad(format!("momentum must lie in [0, 1) (got {momentum})"))
            }
            Optimizer::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                bad("Adam needs beta1, beta2 in [0, 1) and eps > 0".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BranchCounters {
    pub dsm: u64,
    pub mismatch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean loss over the batch, before the update.
    pub loss: f64,
    pub dsm: usize,
    pub mismatch: usize,
}

#[derive(Debug, Clone)]
enum OptState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Trainer {
    model: MlpScoreModel,
    cfg: TrainConfig,
    ema: Vec<f64>,
    opt: OptState,
    rng: Rng,
    steps: u64,
    counters: BranchCounters,
}

impl Trainer {
    pub fn new(model: MlpScoreModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let count = model.param_count();
        let opt = match cfg.optimizer {
            Optimizer::Sgd { .. } => OptState::Sgd {
                velocity: vec![0.0; count],
            },
            Optimizer::Adam { .. } => OptState::Adam {
                m: vec![0.0; count],
                v: vec![0.0; count],
            },
        };
        Ok(Self {
            ema: model.params().to_vec(),
            rng: stream_rng(cfg.seed, 0),
            model,
            cfg,
            opt,
            steps: 0,
            counters: BranchCounters::default(),
        })
    }

    pub fn model(&self) -> &MlpScoreModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn ema_params(&self) -> &[f64] {
        &self.ema
    }

    /// A copy of the model carrying the averaged weights.
    pub fn ema_model(&self) -> MlpScoreModel {
        let mut m = self.model.clone();
        m.params_mut().copy_from_slice(&self.ema);
        m
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn counters(&self) -> BranchCounters {
        self.counters
    }

    pub fn into_parts(self) -> (MlpScoreModel, Vec<f64>) {
        (self.model, self.ema)
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &[StackedSignal]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::InvalidParameter("empty training batch".into()));
        }
        let p = self.model.sde;
        let mut grad = vec![0.0; self.model.param_count()];
        let mut total = 0.0;
        let mut stats = StepStats {
            loss: 0.0,
            dsm: 0,
            mismatch: 0,
        };
        for s in batch {
            s.check_shape(p.k, p.n)?;
            let mismatch = self.rng.random::<f64>() < self.cfg.p_t;
            let t = if mismatch {
                p.t_max
            } else {
                p.t_eps + (p.t_max - p.t_eps) * self.rng.random::<f64>()
            };
            let mut z = StackedSignal::zeros(p.k, p.n);
            fill_standard_normal(&mut self.rng, z.as_mut_slice());
            total += if mismatch {
                stats.mismatch += 1;
                mismatch_pit_loss_grad(&self.model, s, &z, &p, self.cfg.mode, &mut grad)?.loss
            } else {
                stats.dsm += 1;
                dsm_loss_grad(&self.model, s, t, &z, &p, &mut grad)?
            };
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        stats.loss = total * scale;
        if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step: self.steps as usize,
                t: f64::NAN,
                norm: stats.loss,
            });
        }

        self.apply_update(&grad);
        let d = self.cfg.ema_decay;
        for (e, w) in self.ema.iter_mut().zip(self.model.params()) {
            *e = d * *e + (1.0 - d) * w;
        }
        self.counters.dsm += stats.dsm as u64;
        self.counters.mismatch += stats.mismatch as u64;
        Ok(stats)
    }

    fn apply_update(&mut self, grad: &[f64]) {
        self.steps += 1;
        let lr = self.cfg.learning_rate;
        let params = self.model.params_mut();
        match (&mut self.opt, self.cfg.optimizer) {
            (OptState::Sgd { velocity }, Optimizer::Sgd { momentum }) => {
                for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = momentum * *v + g;
                    *w -= lr * *v;
                }
            }
            (OptState::Adam { m, v }, Optimizer::Adam { beta1, beta2, eps }) => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((w, mi), vi), g) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad) {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
            _ => unreachable!("optimizer state matches the configuration"),
        }
    }

    /// One pass over `dataset` in a freshly shuffled order; returns the mean step loss.
    pub fn train_epoch(&mut self, dataset: &[StackedSignal]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<StackedSignal> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            losses.push(self.train_step(&batch)?.loss);
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Runs `cfg.epochs` epochs; returns the per-epoch mean losses.
    pub fn fit(&mut self, dataset: &[StackedSignal]) -> Result<Vec<f64>> {
        (0..self.cfg.epochs).map(|_| self.train_epoch(dataset)).collect()
    }
}

/// Mean denoising loss over `data` with `(t, z)` drawn from `seed`.
///
/// The draws depend only on `seed` and the position in `data`, so different
/// models are compared on identical noise.
pub fn evaluate_dsm(m: &MlpScoreModel, data: &[StackedSignal], seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("empty evaluation set".into()));
    }
    let p = &m.sde;
    let mut rng = stream_rng(seed, 0);
    let mut total = 0.0;
    for s in data {
        let t = p.t_eps + (p.t_max - p.t_eps) * rng.random::<f64>();
        let mut z = StackedSignal::zeros(p.k, p.n);
        fill_standard_normal(&mut rng, z.as_mut_slice());
        total += dsm_loss(m, s, t, &z, p)?;
    }
    Ok(total / data.len() as f64)
}
