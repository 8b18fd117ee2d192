use std::f64::consts::PI;

use rcunet_tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{Waveform, FRAME_LEN, FRAME_STEP, N_BINS, N_FFT, SAMPLE_RATE};
use crate::error::{invalid, Result};

/// One-sided STFT, both fields `[N_BINS, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stft {
    pub magnitude: Tensor,
    pub phase: Tensor,
}

/// Periodic Hann window of `FRAME_LEN` samples.
pub fn window() -> Vec<f64> {
    (0..FRAME_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos())
        .collect()
}

/// Number of whole frames in `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        1 + (len - FRAME_LEN) / FRAME_STEP
    }
}

pub fn stft(w: &Waveform) -> Result<Stft> {
    if w.sample_rate != SAMPLE_RATE {
        return invalid("stft", format!("expected {SAMPLE_RATE} Hz input, got {}", w.sample_rate));
    }
    let frames = frame_count(w.len());
    if frames == 0 {
        return invalid("stft", format!("need at least {FRAME_LEN} samples, got {}", w.len()));
    }
    let win = window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let mut magnitude = Tensor::zeros([N_BINS, frames]);
    let mut phase = Tensor::zeros([N_BINS, frames]);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for f in 0..frames {
        let start = f * FRAME_STEP;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < FRAME_LEN { w.samples[start + i] * win[i] } else { 0.0 };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (bin, c) in buf.iter().take(N_BINS).enumerate() {
            magnitude.data_mut()[bin * frames + f] = c.norm();
            phase.data_mut()[bin * frames + f] = c.arg();
        }
    }
    Ok(Stft { magnitude, phase })
}

/// Real `N_FFT`-sample inverse transform of one one-sided spectrum column.
pub fn inverse_frame(magnitude: &[f64], phase: &[f64]) -> Vec<f64> {
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    inverse_into(&*ifft, magnitude, phase, &mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn inverse_into(ifft: &dyn rustfft::Fft<f64>, magnitude: &[f64], phase: &[f64], buf: &mut [Complex<f64>]) {
    for bin in 0..N_BINS {
        buf[bin] = Complex::from_polar(magnitude[bin], phase[bin]);
    }
    // DC and Nyquist bins of a real signal are real
    buf[0] = Complex::new(buf[0].re, 0.0);
    buf[N_FFT / 2] = Complex::new(buf[N_FFT / 2].re, 0.0);
    for bin in 1..N_FFT / 2 {
        buf[N_FFT - bin] = buf[bin].conj();
    }
    ifft.process(buf);
    let scale = 1.0 / N_FFT as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
}

/// Least-squares inverse STFT: each frame is windowed again and overlap-added,
/// then divided by the summed squared window.
pub fn istft(spec: &Stft) -> Result<Waveform> {
    let shape = spec.magnitude.shape();
    if shape.len() != 2 || shape[0] != N_BINS || spec.phase.shape() != shape {
        return invalid(
            "istft",
            format!(
                "magnitude {:?} and phase {:?} must both be [{N_BINS}, frames]",
                shape,
                spec.phase.shape()
            ),
        );
    }
    let frames = shape[1];
    if frames == 0 {
        return invalid("istft", "no frames");
    }
    let len = (frames - 1) * FRAME_STEP + FRAME_LEN;
    let win = window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(N_FFT);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut mag = vec![0.0; N_BINS];
    let mut ph = vec![0.0; N_BINS];
    for f in 0..frames {
        for bin in 0..N_BINS {
            mag[bin] = spec.magnitude.data()[bin * frames + f];
            ph[bin] = spec.phase.data()[bin * frames + f];
        }
        inverse_into(&*ifft, &mag, &ph, &mut buf);
        let start = f * FRAME_STEP;
        for i in 0..FRAME_LEN {
            out[start + i] += buf[i].re * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        *o = if *n > 1e-10 { *o / n } else { 0.0 };
    }
    Ok(Waveform::new(out, SAMPLE_RATE))
}
