//! Trains the MLP score model on the toy GMM task with the mixed
//! denoising / mismatch objective, saves a checkpoint, and separates held-out
//! mixtures with the averaged weights.
//!
//! cargo run --release --example train_toy_model

use mixdiff::net::{evaluate_dsm, Checkpoint, MlpScoreModel, ModelSpec, TrainConfig, Trainer};
use mixdiff::sampler::{separate_run, SamplerConfig};
use mixdiff::sde::SdeParams;
use mixdiff::signal::{pit_si_sdr, toy_dataset, ToyKind};

fn main() -> mixdiff::Result<()> {
    let (k, n) = (2, 8);
    let p = SdeParams::new(k, n);
    let train = toy_dataset(ToyKind::GmmDraw, k, n, 1, 256)?;
    let held_out = toy_dataset(ToyKind::GmmDraw, k, n, 2, 256)?;

    let model = MlpScoreModel::new(ModelSpec::new(k, n, vec![64, 64]), p, 0)?;
    let mut zero = model.clone();
    zero.zero_output();
    let baseline = evaluate_dsm(&zero, &held_out, 9)?;

    let mut trainer = Trainer::new(model, TrainConfig { p_t: 0.1, ..TrainConfig::default() })?;
    for epoch in 0..trainer.config().epochs {
        let loss = trainer.train_epoch(&train)?;
        if epoch % 25 == 0 {
            println!("epoch {epoch:3}: train loss {loss:.3}");
        }
    }
    let counters = trainer.counters();
    let ema = trainer.ema_model();
    let final_loss = evaluate_dsm(&ema, &held_out, 9)?;
    println!(
        "{} steps ({} denoising, {} mismatch samples): held-out loss {baseline:.3} -> {final_loss:.3}",
        trainer.steps(),
        counters.dsm,
        counters.mismatch
    );

    let path = std::env::temp_dir().join("mixdiff_toy.ckpt");
    let (raw, ema_params) = trainer.into_parts();
    let mut ck = Checkpoint::new(raw);
    ck.ema = Some(ema_params);
    ck.ema_decay = 0.999;
    ck.save(&path)?;
    let model = Checkpoint::load(&path)?.score_model();
    println!("checkpoint written to {}", path.display());

    let cfg = SamplerConfig::default();
    let (mut est_db, mut mix_db) = (0.0, 0.0);
    let count = 100;
    for (i, s) in held_out.iter().take(count).enumerate() {
        let est = separate_run(&s.mix(), &model, &cfg, &p, i as u64, None)?;
        let r = pit_si_sdr(&est, s)?;
        est_db += r.mean_si_sdr / count as f64;
        mix_db += r.mixture_mean_si_sdr / count as f64;
    }
    println!("held-out PIT-SI-SDR {est_db:.2} dB vs mixture {mix_db:.2} dB");
    Ok(())
}
