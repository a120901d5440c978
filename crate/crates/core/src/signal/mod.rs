//! Audio-facing plumbing: STFT, compression, WAV I/O, toy sources and metrics.

pub mod compress;
pub mod metrics;
pub mod stft;
pub mod toy;
pub mod wav;

pub use compress::{compress, compress_spectrogram, decompress, decompress_spectrogram};
pub use metrics::{evaluate, pit_si_sdr, si_sdr, EvalReport, SI_SDR_CAP};
pub use stft::{istft, stft, Spectrogram, StftParams, WindowKind};
pub use toy::{make_toy_sources, toy_dataset, toy_gmm_prior, ToyKind};
pub use wav::{wav_read, wav_write, WavData};
