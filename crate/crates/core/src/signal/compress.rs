//! Magnitude compression `c(x) = β⁻¹ |x|^α e^{j∠x}` and its inverse.

use rustfft::num_complex::Complex64;

use super::stft::Spectrogram;

pub fn compress(x: Complex64, alpha: f64, beta: f64) -> Complex64 {
    let mag = x.norm();
    if mag == 0.0 {
        return Complex64::default();
    }
    x * (mag.powf(alpha - 1.0) / beta)
}

pub fn decompress(c: Complex64, alpha: f64, beta: f64) -> Complex64 {
    let mag = c.norm();
    if mag == 0.0 {
        return Complex64::default();
    }
    c * ((beta * mag).powf(alpha.recip()) / mag)
}

pub fn compress_spectrogram(spec: &Spectrogram) -> Spectrogram {
    let (a, b) = (spec.params.alpha, spec.params.beta);
    spec.map(|c| compress(c, a, b))
}

pub fn decompress_spectrogram(spec: &Spectrogram) -> Spectrogram {
    let (a, b) = (spec.params.alpha, spec.params.beta);
    spec.map(|c| decompress(c, a, b))
}
