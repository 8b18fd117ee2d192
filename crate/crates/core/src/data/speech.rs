//! Speech-like signal: a harmonic glottal source with drifting pitch,
//! shaped by three moving formant resonators, amplitude-modulated at a
//! syllabic rate and interleaved with unvoiced noise bursts.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::peak_normalize;
use crate::dsp::{Waveform, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;
const F0_RANGE: (f64, f64) = (90.0, 250.0);
const FORMANT_RANGES: [(f64, f64); 3] = [(300.0, 900.0), (900.0, 2300.0), (2300.0, 3300.0)];
const FORMANT_BANDWIDTHS: [f64; 3] = [80.0, 120.0, 180.0];
const FORMANT_GAINS: [f64; 3] = [1.0, 0.6, 0.3];
const HARMONIC_CEILING_HZ: f64 = 3800.0;

/// Two-pole resonator with per-sample retuning.
#[derive(Default)]
pub(crate) struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    pub(crate) fn step(&mut self, x: f64, freq: f64, bandwidth: f64) -> f64 {
        let r = (-PI * bandwidth / FS).exp();
        let theta = 2.0 * PI * freq / FS;
        let y = (1.0 - r) * x + 2.0 * r * theta.cos() * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

struct Syllable {
    len: usize,
    formants: [f64; 3],
    voiced: bool,
    amplitude: f64,
    /// Centre frequency of the fricative noise when unvoiced.
    hiss_hz: f64,
}

fn plan_syllables(rng: &mut ChaCha8Rng, total: usize) -> Vec<Syllable> {
    let rate = rng.gen_range(3.0..6.0);
    let mut out = Vec::new();
    let mut used = 0;
    while used < total {
        let dur = rng.gen_range(0.7..1.3) / rate;
        let len = ((dur * FS) as usize).max(1).min(total - used);
        let pause = rng.gen_bool(0.12);
        out.push(Syllable {
            len,
            formants: [
                rng.gen_range(FORMANT_RANGES[0].0..FORMANT_RANGES[0].1),
                rng.gen_range(FORMANT_RANGES[1].0..FORMANT_RANGES[1].1),
                rng.gen_range(FORMANT_RANGES[2].0..FORMANT_RANGES[2].1),
            ],
            voiced: !rng.gen_bool(0.25),
            amplitude: if pause { 0.0 } else { rng.gen_range(0.4..1.0) },
            hiss_hz: rng.gen_range(2200.0..3500.0),
        });
        used += len;
    }
    out
}

pub fn synth_speech(seed: u64, duration_secs: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (duration_secs * FS).round().max(0.0) as usize;
    let syllables = plan_syllables(&mut rng, total);

    let f0_base = rng.gen_range(110.0..200.0);
    let drift_hz = rng.gen_range(0.2..0.8);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let vibrato_depth = rng.gen_range(0.05..0.2);

    let mut out = Vec::with_capacity(total);
    let mut formant_now = syllables.first().map_or([500.0, 1500.0, 2500.0], |s| s.formants);
    let mut resonators: [Resonator; 3] = Default::default();
    let mut hiss = Resonator::default();
    let mut phase = 0.0f64;
    let mut n = 0usize;
    for syl in &syllables {
        let start_formants = formant_now;
        for i in 0..syl.len {
            let t = n as f64 / FS;
            let tau = i as f64 / syl.len as f64;
            // glide towards this syllable's vowel over its first 30%
            let glide = (tau / 0.3).min(1.0);
            for (k, f) in formant_now.iter_mut().enumerate() {
                *f = start_formants[k] + (syl.formants[k] - start_formants[k]) * glide;
            }
            let f0 = (f0_base * (1.0 + vibrato_depth * (2.0 * PI * drift_hz * t + drift_phase).sin()))
                .clamp(F0_RANGE.0, F0_RANGE.1);
            phase = (phase + 2.0 * PI * f0 / FS) % (2.0 * PI);
            let envelope = syl.amplitude * (PI * tau).sin().powi(2);

            let sample = if syl.voiced {
                let harmonics = (HARMONIC_CEILING_HZ / f0) as usize;
                let source: f64 = (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum();
                let mut s = 0.0;
                for k in 0..3 {
                    s += FORMANT_GAINS[k] * resonators[k].step(source, formant_now[k], FORMANT_BANDWIDTHS[k]);
                }
                s
            } else {
                let white: f64 = StandardNormal.sample(&mut rng);
                // keep the resonators ringing down through unvoiced stretches
                for k in 0..3 {
                    resonators[k].step(0.0, formant_now[k], FORMANT_BANDWIDTHS[k]);
                }
                0.5 * hiss.step(white, syl.hiss_hz, 900.0)
            };
            out.push(envelope * sample);
            n += 1;
        }
    }
    peak_normalize(&mut out, 0.5);
    add_room_floor(&mut out, &mut rng);
    Waveform::new(out, SAMPLE_RATE)
}

/// Level of the background floor relative to the 0.5 peak.
const FLOOR_DB: f64 = -60.0;

/// Adds a low-passed noise floor so pauses are quiet rather than digitally
/// silent, as in any real recording.
fn add_room_floor(out: &mut [f64], rng: &mut ChaCha8Rng) {
    let mut floor = Vec::with_capacity(out.len());
    let mut state = 0.0;
    for _ in 0..out.len() {
        let white: f64 = StandardNormal.sample(rng);
        state = 0.9 * state + white;
        floor.push(state);
    }
    let rms = (floor.iter().map(|v| v * v).sum::<f64>() / floor.len().max(1) as f64).sqrt();
    if rms == 0.0 {
        return;
    }
    let gain = 0.5 * 10f64.powf(FLOOR_DB / 20.0) / rms;
    for (o, f) in out.iter_mut().zip(&floor) {
        *o += gain * f;
    }
    peak_normalize(out, 0.5);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_peak_normalized() {
        let a = synth_speech(7, 1.5);
        let b = synth_speech(7, 1.5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 12000);
        let peak = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
        assert_ne!(a, synth_speech(8, 1.5));
    }
}
