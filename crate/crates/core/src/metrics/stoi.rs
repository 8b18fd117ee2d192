//! Short-time objective intelligibility.
//!
//! Constants follow the reference formulation: 10 kHz analysis rate,
//! 256-sample frames at 50% overlap, 15 third-octave bands from 150 Hz,
//! 30-frame envelope segments and a -15 dB lower bound on the
//! signal-to-distortion ratio used for clipping.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{resample, Waveform};
use crate::error::{invalid, Result};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoiResult {
    pub score: f64,
}

/// Symmetric Hann of `FRAME + 2` points without its zero endpoints.
fn analysis_window() -> Vec<f64> {
    let m = (FRAME + 2) as f64;
    (1..=FRAME)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (m - 1.0)).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames more than `DYN_RANGE_DB` below the loudest clean frame and
/// overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64], win: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let windowed = |s: &[f64], start: usize| -> Vec<f64> {
        s[start..start + FRAME].iter().zip(win).map(|(a, w)| a * w).collect()
    };
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let f = windowed(x, s);
            20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10()
        })
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max + DYN_RANGE_DB - e > 0.0)
        .map(|(&s, _)| s)
        .collect();
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * HOP + FRAME };
    let mut xo = vec![0.0; out_len];
    let mut yo = vec![0.0; out_len];
    for (i, &s) in kept.iter().enumerate() {
        let (fx, fy) = (windowed(x, s), windowed(y, s));
        for j in 0..FRAME {
            xo[i * HOP + j] += fx[j];
            yo[i * HOP + j] += fy[j];
        }
    }
    (xo, yo)
}

/// Power spectra `[frames][NFFT/2 + 1]`.
fn power_spectra(x: &[f64], win: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Vec<f64>> {
    let fft = planner.plan_fft_forward(NFFT);
    frame_starts(x.len())
        .map(|s| {
            let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
            for j in 0..FRAME {
                buf[j].re = x[s + j] * win[j];
            }
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Bin ranges `[lo, hi)` of each third-octave band.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| (freqs[a] - target).powi(2).total_cmp(&(freqs[b] - target).powi(2)))
            .unwrap()
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[BANDS][frames]`.
fn band_envelopes(spectra: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|&(lo, hi)| {
            spectra
                .iter()
                .map(|p| p[lo..hi].iter().sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn centre(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<StoiResult> {
    if clean.len() != processed.len() {
        return invalid(
            "stoi",
            format!("length mismatch: clean {}, processed {}", clean.len(), processed.len()),
        );
    }
    if clean.sample_rate != processed.sample_rate {
        return invalid("stoi", "sample rates differ");
    }
    if clean.samples.iter().all(|&v| v == 0.0) {
        return invalid("stoi", "clean signal is silent");
    }
    let x = resample(clean, FS)?.samples;
    let y = resample(processed, FS)?.samples;
    let win = analysis_window();
    let (x, y) = remove_silent_frames(&x, &y, &win);

    let mut planner = FftPlanner::new();
    let bands = third_octave_bins();
    let xe = band_envelopes(&power_spectra(&x, &win, &mut planner), &bands);
    let ye = band_envelopes(&power_spectra(&y, &win, &mut planner), &bands);
    let frames = xe[0].len();
    if frames < SEGMENT {
        return invalid(
            "stoi",
            format!("{frames} active frames, need at least {SEGMENT}"),
        );
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for end in SEGMENT..=frames {
        for band in 0..BANDS {
            let mut xs = xe[band][end - SEGMENT..end].to_vec();
            let ys = &ye[band][end - SEGMENT..end];
            let gain = norm(&xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(&xs)
                .map(|(&yv, &xv)| (yv * gain).min(xv * (1.0 + clip)))
                .collect();
            centre(&mut yp);
            centre(&mut xs);
            let (ny, nx) = (norm(&yp) + EPS, norm(&xs) + EPS);
            total += yp.iter().zip(&xs).map(|(a, b)| (a / ny) * (b / nx)).sum::<f64>();
            count += 1;
        }
    }
    Ok(StoiResult {
        score: total / count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges_increase() {
        let b = third_octave_bins();
        assert_eq!(b.len(), BANDS);
        assert!(b.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        assert!(b.iter().all(|&(lo, hi)| lo < hi));
    }

    #[test]
    fn window_has_no_zero_endpoints() {
        let w = analysis_window();
        assert!(w[0] > 0.0 && w[FRAME - 1] > 0.0);
        assert!((w[0] - w[FRAME - 1]).abs() < 1e-15);
    }
}
