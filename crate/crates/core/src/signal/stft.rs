//! Short-time Fourier transform with weighted overlap-add inversion.
//!
//! The signal is zero-padded by `win_len − hop` on the left and enough on the
//! right for the last frame, so every original sample is covered by the same
//! number of frames. The inverse divides by the accumulated squared window,
//! which makes `istft(stft(x)) = x` for any window without zeros in the
//! overlap sum.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    SqrtHann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `len`.
    pub fn build(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::SqrtHann => (0..len).map(|n| (PI * n as f64 / len as f64).sin()).collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftParams {
    pub win_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub window: WindowKind,
    /// Magnitude exponent of the compression.
    pub alpha: f64,
    /// Magnitude scale of the compression.
    pub beta: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            win_len: 512,
            hop: 128,
            n_fft: 512,
            window: WindowKind::SqrtHann,
            alpha: 0.5,
            beta: 0.15,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.win_len == 0 || self.hop == 0 || self.hop > self.win_len {
            return bad(format!("need 0 < hop <= win_len (got hop {}, win_len {})", self.hop, self.win_len));
        }
        if self.n_fft < self.win_len {
            return bad(format!("n_fft {} shorter than the window {}", self.n_fft, self.win_len));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad(format!("compression needs alpha, beta > 0 (got {}, {})", self.alpha, self.beta));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    fn left_pad(&self) -> usize {
        self.win_len - self.hop
    }

    fn frame_count(&self, len: usize) -> usize {
        let span = len + self.left_pad();
        span.div_ceil(self.hop)
    }
}

/// One-sided spectrogram, frame-major: `frames[m][k]` is bin `k` of frame `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub signal_len: usize,
    pub params: StftParams,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bins(&self) -> usize {
        self.params.n_bins()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            frames: self.frames.iter().map(|fr| fr.iter().map(|c| f(*c)).collect()).collect(),
            ..self.clone()
        }
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n_fft: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n_fft),
        inverse: planner.plan_fft_inverse(n_fft),
    }
}

pub fn stft(x: &[f64], params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    if x.len() < params.win_len {
        return Err(Error::SignalTooShort {
            len: x.len(),
            min: params.win_len,
        });
    }
    let window = params.window.build(params.win_len);
    let n_frames = params.frame_count(x.len());
    let pad = params.left_pad();
    let fft = plans(params.n_fft).forward;
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::default(); params.n_fft];
    for m in 0..n_frames {
        buf.fill(Complex64::default());
        for (i, w) in window.iter().enumerate() {
            // position in the unpadded signal
            let pos = (m * params.hop + i).checked_sub(pad);
            if let Some(v) = pos.and_then(|p| x.get(p)) {
                buf[i] = Complex64::new(v * w, 0.0);
            }
        }
        fft.process(&mut buf);
        frames.push(buf[..params.n_bins()].to_vec());
    }
    Ok(Spectrogram {
        frames,
        signal_len: x.len(),
        params: *params,
    })
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let params = &spec.params;
    params.validate()?;
    let n_bins = params.n_bins();
    if spec.frames.iter().any(|f| f.len() != n_bins) {
        return Err(Error::DimensionMismatch {
            expected: n_bins,
            got: spec.frames.iter().map(Vec::len).find(|l| *l != n_bins).unwrap_or(0),
        });
    }
    let window = params.window.build(params.win_len);
    let pad = params.left_pad();
    let total = (spec.n_frames().saturating_sub(1)) * params.hop + params.win_len;
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let ifft = plans(params.n_fft).inverse;
    let scale = 1.0 / params.n_fft as f64;
    let mut buf = vec![Complex64::default(); params.n_fft];
    for (m, frame) in spec.frames.iter().enumerate() {
        buf[..n_bins].copy_from_slice(frame);
        // Hermitian completion of the one-sided spectrum
        for k in n_bins..params.n_fft {
            buf[k] = frame[params.n_fft - k].conj();
        }
        ifft.process(&mut buf);
        for (i, w) in window.iter().enumerate() {
            out[m * params.hop + i] += buf[i].re * scale * w;
            norm[m * params.hop + i] += w * w;
        }
    }
    Ok((0..spec.signal_len)
        .map(|n| {
            let (v, d) = (out[n + pad], norm[n + pad]);
            if d > 1e-10 {
                v / d
            } else {
                0.0
            }
        })
        .collect())
}
