//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc.

use super::{Waveform, SUPPORTED_RATES};
use crate::error::{CoreError, Result};

/// Stopband attenuation target in dB.
const ATTENUATION_DB: f64 = 80.0;
/// Transition band width in Hz, centred on the lower Nyquist frequency.
const TRANSITION_HZ: f64 = 150.0;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser_beta(attenuation: f64) -> f64 {
    if attenuation > 50.0 {
        0.1102 * (attenuation - 8.7)
    } else if attenuation >= 21.0 {
        0.5842 * (attenuation - 21.0).powf(0.4) + 0.07886 * (attenuation - 21.0)
    } else {
        0.0
    }
}

/// Low-pass prototype at the upsampled rate `fs_high`, cutoff `cutoff` Hz,
/// scaled by `gain`. Odd length, linear phase.
fn design(fs_high: f64, cutoff: f64, gain: f64) -> Vec<f64> {
    let width = TRANSITION_HZ / fs_high;
    let mut taps = ((ATTENUATION_DB - 7.95) / (14.36 * width)).ceil() as usize;
    if taps.is_multiple_of(2) {
        taps += 1;
    }
    let beta = kaiser_beta(ATTENUATION_DB);
    let centre = (taps - 1) as f64 / 2.0;
    let fc = cutoff / fs_high;
    let norm = bessel_i0(beta);
    (0..taps)
        .map(|n| {
            let t = n as f64 - centre;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let r = t / centre;
            let win = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            gain * sinc * win
        })
        .collect()
}

/// Converts between any two of the supported rates. Identical rates return
/// the input unchanged.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform> {
    let from = w.sample_rate;
    if from == target_hz {
        return Ok(w.clone());
    }
    if !SUPPORTED_RATES.contains(&from) || !SUPPORTED_RATES.contains(&target_hz) {
        return Err(CoreError::UnsupportedRate { from, to: target_hz });
    }
    let g = gcd(from as u64, target_hz as u64);
    let up = (target_hz as u64 / g) as usize;
    let down = (from as u64 / g) as usize;
    let fs_high = from as f64 * up as f64;
    let cutoff = from.min(target_hz) as f64 / 2.0;
    let filter = design(fs_high, cutoff, up as f64);
    let delay = (filter.len() - 1) / 2;

    let n_in = w.samples.len();
    let n_out = (n_in * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        // position on the upsampled grid, shifted to the filter centre
        let pos = j * down + delay;
        let first = (pos + 1).saturating_sub(filter.len()).div_ceil(up);
        let last = (pos / up).min(n_in.saturating_sub(1));
        let mut acc = 0.0;
        if n_in > 0 {
            for i in first..=last {
                acc += w.samples[i] * filter[pos - i * up];
            }
        }
        out.push(acc);
    }
    Ok(Waveform::new(out, target_hz))
}
