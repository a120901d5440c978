//! 16-bit PCM mono WAV files.

use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;
/// Largest float that maps to a 16-bit sample without overflow.
pub const MAX_SAMPLE: f64 = (i16::MAX as f64) / FULL_SCALE;

#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Reads a 16-bit PCM mono file into floats in `[−1, 1)`.
pub fn wav_read(path: &Path) -> Result<WavData> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is supported",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(WavData {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes floats as 16-bit PCM mono. Values outside `[−1, MAX_SAMPLE]` (and
/// NaN, written as 0) are clipped; the number of clipped samples is returned.
pub fn wav_write(path: &Path, samples: &[f64], sample_rate: u32) -> Result<usize> {
    if sample_rate == 0 {
        return Err(Error::InvalidParameter("sample rate must be positive".into()));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let mut clipped = 0;
    for &x in samples {
        let v = if x.is_nan() {
            clipped += 1;
            0.0
        } else if !(-1.0..=MAX_SAMPLE).contains(&x) {
            clipped += 1;
            x.clamp(-1.0, MAX_SAMPLE)
        } else {
            x
        };
        writer.write_sample((v * FULL_SCALE).round() as i16)?;
    }
    writer.finalize()?;
    Ok(clipped)
}
