//! Synthetic stand-in corpus: speech-like and noise-like generators, SNR
//! mixing and on-disk persistence.

mod corpus;
mod noise;
mod speech;

pub use corpus::{config_from_manifest, load_corpus, Corpus, CorpusConfig, NoiseChoice, Split};
pub use noise::{band_limited_noise, synth_noise, NoiseKind};
pub use speech::synth_speech;

use crate::dsp::Waveform;
use crate::error::{invalid, Result};

/// Peak above which a mixture is rescaled (together with its components).
pub const CLIP_GUARD: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub clean: Waveform,
    /// Noise after cropping and gain, so `mixture == clean + noise`.
    pub noise: Waveform,
    pub mixture: Waveform,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
}

/// Crops `noise` at `offset` to the length of `clean`, scales it so the
/// full-utterance SNR equals `snr_db`, and returns `(mixture, scaled_noise)`.
/// An infinite SNR gives a zero noise gain.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, offset: usize) -> Result<(Waveform, Waveform)> {
    if clean.sample_rate != noise.sample_rate {
        return invalid("mix_at_snr", "sample rates differ");
    }
    if noise.len() < offset + clean.len() {
        return invalid(
            "mix_at_snr",
            format!(
                "noise of {} samples cannot cover {} samples from offset {offset}",
                noise.len(),
                clean.len()
            ),
        );
    }
    if snr_db.is_nan() {
        return invalid("mix_at_snr", "snr is NaN");
    }
    let crop = &noise.samples[offset..offset + clean.len()];
    let noise_energy: f64 = crop.iter().map(|v| v * v).sum();
    let gain = if snr_db == f64::INFINITY {
        0.0
    } else {
        if noise_energy == 0.0 {
            return invalid("mix_at_snr", "noise segment is silent");
        }
        (clean.energy() / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt()
    };
    let scaled: Vec<f64> = crop.iter().map(|v| v * gain).collect();
    let mixture = clean.samples.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok((
        Waveform::new(mixture, clean.sample_rate),
        Waveform::new(scaled, clean.sample_rate),
    ))
}

/// Scales clean, noise and mixture together when the mixture would clip.
fn guard_clipping(clean: &mut Waveform, noise: &mut Waveform, mixture: &mut Waveform) {
    let peak = mixture.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak <= CLIP_GUARD {
        return;
    }
    let k = CLIP_GUARD / peak;
    clean.samples.iter_mut().for_each(|v| *v *= k);
    noise.samples.iter_mut().for_each(|v| *v *= k);
    for ((m, c), n) in mixture.samples.iter_mut().zip(&clean.samples).zip(&noise.samples) {
        *m = c + n;
    }
}

pub(crate) fn peak_normalize(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        let k = peak / m;
        x.iter_mut().for_each(|v| *v *= k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(seed: u64, len: usize) -> Waveform {
        band_limited_noise(seed, len, 0.0, 4000.0)
    }

    #[test]
    fn zero_db_balances_energy() {
        let (c, n) = (wave(1, 4000), wave(2, 5000));
        let (mix, scaled) = mix_at_snr(&c, &n, 0.0, 300).unwrap();
        assert!((c.energy() - scaled.energy()).abs() <= 1e-9 * c.energy());
        for i in 0..c.len() {
            assert_eq!(mix.samples[i], c.samples[i] + scaled.samples[i]);
        }
    }

    #[test]
    fn minus_ten_db_is_tenfold_noise() {
        let (c, n) = (wave(3, 4000), wave(4, 4000));
        let (_, scaled) = mix_at_snr(&c, &n, -10.0, 0).unwrap();
        assert!((scaled.energy() / c.energy() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn huge_snr_approaches_clean() {
        let (c, n) = (wave(5, 2000), wave(6, 2000));
        let (mix, _) = mix_at_snr(&c, &n, 300.0, 0).unwrap();
        for (m, x) in mix.samples.iter().zip(&c.samples) {
            assert!((m - x).abs() < 1e-12);
        }
        let (mix, scaled) = mix_at_snr(&c, &n, f64::INFINITY, 0).unwrap();
        assert_eq!(mix, c);
        assert_eq!(scaled.energy(), 0.0);
    }

    #[test]
    fn short_noise_rejected() {
        assert!(mix_at_snr(&wave(1, 100), &wave(2, 120), 0.0, 30).is_err());
    }

    #[test]
    fn clipping_guard_preserves_snr_and_sum() {
        let mut c = Waveform::new(vec![0.9, -0.8, 0.5], 8000);
        let mut n = Waveform::new(vec![0.5, -0.5, 0.1], 8000);
        let mut m = Waveform::new(vec![1.4, -1.3, 0.6], 8000);
        let ratio = c.energy() / n.energy();
        guard_clipping(&mut c, &mut n, &mut m);
        assert!(m.samples.iter().all(|v| v.abs() <= CLIP_GUARD + 1e-15));
        assert!((c.energy() / n.energy() - ratio).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(m.samples[i], c.samples[i] + n.samples[i]);
        }
    }
}
