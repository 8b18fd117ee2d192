use rcunet_core::data::*;
use rcunet_core::dsp::{stft, Waveform, N_BINS, N_FFT, SAMPLE_RATE};
use rcunet_core::metrics::{bss_eval, DEFAULT_FILTER_LEN};

/// Long-term power per FFT bin.
fn long_term_spectrum(w: &Waveform) -> Vec<f64> {
    let s = stft(w).unwrap();
    let frames = s.magnitude.shape()[1];
    (0..N_BINS)
        .map(|k| s.magnitude.data()[k * frames..(k + 1) * frames].iter().map(|m| m * m).sum::<f64>() / frames as f64)
        .collect()
}

fn centroid_hz(w: &Waveform) -> f64 {
    let p = long_term_spectrum(w);
    let hz = |k: usize| k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
    p.iter().enumerate().map(|(k, v)| hz(k) * v).sum::<f64>() / p.iter().sum::<f64>()
}

fn kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n / (var * var)
}

#[test]
fn speech_is_low_centroid_and_audible() {
    for seed in 0..8 {
        let s = synth_speech(seed, 2.0);
        assert!(centroid_hz(&s) < 2500.0, "seed {seed}: {}", centroid_hz(&s));
        assert!(s.rms() > 0.01);
    }
}

#[test]
fn babble_spectrum_tracks_speech() {
    // eight 500 Hz bands, each normalized to total power
    let bands = |w: &Waveform| {
        let p = long_term_spectrum(w);
        let total: f64 = p.iter().sum();
        (0..8)
            .map(|b| {
                let lo = b * 32;
                let hi = if b == 7 { N_BINS } else { lo + 32 };
                10.0 * (p[lo..hi].iter().sum::<f64>() / total).log10()
            })
            .collect::<Vec<f64>>()
    };
    for seed in 0..4 {
        let babble = bands(&synth_noise(seed, 3.0, NoiseKind::Babble));
        let speech = bands(&synth_speech(seed + 50, 3.0));
        for (b, (x, y)) in babble.iter().zip(&speech).enumerate() {
            assert!((x - y).abs() < 10.0, "seed {seed} band {b}: {x} vs {y}");
        }
    }
}

#[test]
fn factory_is_more_impulsive_than_babble() {
    let mut factory = 0.0;
    let mut babble = 0.0;
    for seed in 0..16 {
        factory += kurtosis(&synth_noise(seed, 2.0, NoiseKind::Factory).samples);
        babble += kurtosis(&synth_noise(seed, 2.0, NoiseKind::Babble).samples);
    }
    assert!(factory > babble, "factory {} babble {}", factory / 16.0, babble / 16.0);
}

#[test]
fn mixture_sdr_tracks_snr() {
    let cfg = CorpusConfig {
        train_count: 4,
        test_count: 0,
        ..CorpusConfig::default()
    };
    for snr in [0.0, 5.0] {
        let cfg = CorpusConfig { snr_db: snr, ..cfg.clone() };
        for u in cfg.generate().unwrap().train {
            let r = bss_eval(&u.mixture, &u.clean, &u.noise, DEFAULT_FILTER_LEN).unwrap();
            assert!((r.sdr_db - snr).abs() < 1.0, "{}: {} vs {snr}", u.id, r.sdr_db);
        }
    }
}

#[test]
fn default_corpus_shape() {
    let cfg = CorpusConfig::default();
    assert_eq!((cfg.train_count, cfg.test_count), (64, 16));
    let u = cfg.utterance(Split::Test, 3).unwrap();
    assert_eq!(u.id, "test_0003");
    assert!(u.clean.duration_secs() >= 2.0 && u.clean.duration_secs() <= 4.0);
    assert_eq!(u, cfg.utterance(Split::Test, 3).unwrap());
}
