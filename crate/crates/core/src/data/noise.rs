use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::peak_normalize;
use super::speech::{synth_speech, Resonator};
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::CoreError;

const FS: f64 = SAMPLE_RATE as f64;
const BABBLE_TALKERS: u64 = 8;
/// Mean clank rate in events per second.
const CLANK_RATE: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Babble,
    Factory,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Babble => "babble",
            NoiseKind::Factory => "factory",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "babble" => Ok(NoiseKind::Babble),
            "factory" => Ok(NoiseKind::Factory),
            other => Err(CoreError::Format {
                what: "noise kind",
                detail: format!("unknown noise kind {other:?} (expected babble or factory)"),
            }),
        }
    }
}

pub fn synth_noise(seed: u64, duration_secs: f64, kind: NoiseKind) -> Waveform {
    match kind {
        NoiseKind::Babble => babble(seed, duration_secs),
        NoiseKind::Factory => factory(seed, duration_secs),
    }
}

fn babble(seed: u64, duration_secs: f64) -> Waveform {
    let total = (duration_secs * FS).round().max(0.0) as usize;
    let mut sum = vec![0.0; total];
    for talker in 0..BABBLE_TALKERS {
        let stream_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(talker + 1);
        let voice = synth_speech(stream_seed, duration_secs);
        for (s, v) in sum.iter_mut().zip(&voice.samples) {
            *s += v;
        }
    }
    peak_normalize(&mut sum, 0.5);
    Waveform::new(sum, SAMPLE_RATE)
}

/// Broadband noise through a bank of machine-like resonances, plus a hum and
/// randomly timed decaying metallic impacts.
fn factory(seed: u64, duration_secs: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFAC7_0000);
    let total = (duration_secs * FS).round().max(0.0) as usize;
    let bank: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(200.0..3200.0), rng.gen_range(60.0..300.0), rng.gen_range(0.5..1.5)))
        .collect();
    let mut resonators: Vec<Resonator> = bank.iter().map(|_| Resonator::default()).collect();
    let hum_hz = rng.gen_range(45.0..120.0);
    let mut out = Vec::with_capacity(total);
    let mut lowpass = 0.0;
    for n in 0..total {
        let white: f64 = StandardNormal.sample(&mut rng);
        lowpass = 0.7 * lowpass + 0.3 * white;
        let mut s = 0.15 * lowpass;
        for ((f, bw, g), r) in bank.iter().zip(resonators.iter_mut()) {
            s += g * r.step(white, *f, *bw);
        }
        let t = n as f64 / FS;
        s += 0.05 * (2.0 * std::f64::consts::PI * hum_hz * t).sin();
        out.push(s);
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / total.max(1) as f64).sqrt();

    let gaps = Exp::new(CLANK_RATE).expect("positive rate");
    let mut at = gaps.sample(&mut rng);
    while ((at * FS) as usize) < total {
        let start = (at * FS) as usize;
        let freq = rng.gen_range(500.0..3000.0);
        let decay = rng.gen_range(0.02..0.06);
        let amp = rng.gen_range(4.0..8.0) * rms;
        let len = ((decay * 5.0 * FS) as usize).min(total - start);
        for i in 0..len {
            let t = i as f64 / FS;
            let ring = (2.0 * std::f64::consts::PI * freq * t).sin() + 0.5 * (2.0 * std::f64::consts::PI * 2.7 * freq * t).sin();
            out[start + i] += amp * (-t / decay).exp() * ring;
        }
        at += gaps.sample(&mut rng);
    }
    peak_normalize(&mut out, 0.5);
    Waveform::new(out, SAMPLE_RATE)
}

/// Gaussian white noise restricted to `[lo_hz, hi_hz]` by zeroing FFT bins,
/// peak-normalized to 0.5.
pub fn band_limited_noise(seed: u64, len: usize, lo_hz: f64, hi_hz: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * FS / len as f64;
        if f < lo_hz || f > hi_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    peak_normalize(&mut out, 0.5);
    Waveform::new(out, SAMPLE_RATE)
}
