//! STFT analysis, magnitude compression and resynthesis.
//!
//! cargo run --release --example stft_features

use std::f64::consts::PI;

use mixdiff::signal::{compress_spectrogram, decompress_spectrogram, istft, stft, StftParams, WindowKind};

fn main() -> mixdiff::Result<()> {
    let params = StftParams::default();
    let bin = 32;
    let x: Vec<f64> = (0..8000)
        .map(|i| (2.0 * PI * bin as f64 * i as f64 / params.n_fft as f64).sin() + 0.01 * ((i * 7919) % 13) as f64)
        .collect();

    let spec = stft(&x, &params)?;
    println!("{} frames x {} bins", spec.n_frames(), spec.n_bins());
    let frame = &spec.frames[spec.n_frames() / 2];
    let total: f64 = frame.iter().map(|c| c.norm_sqr()).sum();
    let near: f64 = frame[bin - 1..=bin + 1].iter().map(|c| c.norm_sqr()).sum();
    println!("energy within one bin of {bin}: {:.4}", near / total);

    let compressed = compress_spectrogram(&spec);
    let restored = decompress_spectrogram(&compressed);
    let y = istft(&restored)?;
    let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("compress -> decompress -> istft max error {err:.2e}");

    let rect = StftParams { window: WindowKind::Rectangular, hop: 512, ..params };
    let y = istft(&stft(&x, &rect)?)?;
    let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("rectangular, no overlap: round-trip error {err:.2e}");
    Ok(())
}
