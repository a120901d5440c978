//! End-to-end WAV separation and enhancement through the command layer, using
//! a freshly trained toy checkpoint.
//!
//! cargo run --release --example wav_separation

use std::f64::consts::PI;

use mixdiff::cli::commands;
use mixdiff::cli::RunConfig;
use mixdiff::sampler::Mode;
use mixdiff::signal::{wav_read, wav_write};

fn main() -> mixdiff::Result<()> {
    let dir = std::env::temp_dir().join("mixdiff_wav_example");
    let rate = 8000;
    let x: Vec<f64> = (0..rate as usize)
        .map(|i| {
            let t = i as f64 / rate as f64;
            0.4 * (2.0 * PI * 440.0 * t).sin() + 0.2 * (2.0 * PI * 1250.0 * t).sin()
        })
        .collect();
    let input = dir.join("mixture.wav");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    wav_write(&input, &x, rate)?;

    let train = RunConfig { out: dir.join("train"), ..RunConfig::default() }.resolve()?;
    let outcome = commands::train_toy(&train)?;
    outcome.lines.iter().for_each(|l| println!("{l}"));

    for mode in [Mode::Separation, Mode::Enhancement] {
        let cfg = RunConfig {
            out: dir.join(format!("{mode:?}").to_lowercase()),
            input: Some(input.clone()),
            checkpoint: Some(train.out.join("model.ckpt")),
            ..RunConfig::default()
        }
        .resolve()?;
        let outcome = commands::separate_wav(&cfg, mode)?;
        outcome.lines.iter().for_each(|l| println!("{l}"));
    }

    let speech = wav_read(&dir.join("enhancement").join("speech.wav"))?;
    println!("speech track: {} samples at {} Hz", speech.samples.len(), speech.sample_rate);
    Ok(())
}
