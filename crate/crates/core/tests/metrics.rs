use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcunet_core::data::{band_limited_noise, synth_speech};
use rcunet_core::dsp::{Waveform, SAMPLE_RATE};
use rcunet_core::metrics::*;

fn random(seed: u64, len: usize) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Columns are `x` delayed by 0..taps, truncated to `rows` samples.
fn delay_matrix(signals: &[&[f64]], taps: usize, rows: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, taps * signals.len(), |r, c| {
        let (sig, d) = (signals[c / taps], c % taps);
        if r >= d && r - d < sig.len() {
            sig[r - d]
        } else {
            0.0
        }
    })
}

fn qr_residual(a: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let qr = a.clone().qr();
    let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * r)).unwrap();
    r - a * coef
}

#[test]
fn decomposition_is_orthogonal_energy_split() {
    for seed in 0..5 {
        let s = random(seed, 1500);
        let n = random(seed + 100, 1500);
        let est = Waveform::new(
            s.samples.iter().zip(&n.samples).zip(&random(seed + 200, 1500).samples)
                .map(|((a, b), c)| 0.8 * a + 0.3 * b + 0.2 * c)
                .collect(),
            SAMPLE_RATE,
        );
        let d = bss_decompose(&est, &s, &n, 32).unwrap();
        let total = energy(&d.target) + energy(&d.interference) + energy(&d.artifact);
        assert!((energy(&d.estimate) - total).abs() <= 1e-6 * energy(&d.estimate));
    }
}

#[test]
fn identical_estimate_hits_sentinel() {
    let s = synth_speech(4, 1.0);
    let n = synth_speech(5, 1.0);
    let r = bss_eval(&s, &s, &n, DEFAULT_FILTER_LEN).unwrap();
    assert_eq!(r.sdr_db, SENTINEL_DB);
    assert_eq!(r.sir_db, SENTINEL_DB);
    assert_eq!(r.sar_db, SENTINEL_DB);
}

#[test]
fn scaling_the_estimate_changes_nothing() {
    let s = random(1, 2000);
    let n = random(2, 2000);
    let est = Waveform::new(s.samples.iter().zip(&n.samples).map(|(a, b)| a + 0.5 * b).collect(), SAMPLE_RATE);
    let twice = Waveform::new(est.samples.iter().map(|v| 2.0 * v).collect(), SAMPLE_RATE);
    let a = bss_eval(&est, &s, &n, 64).unwrap();
    let b = bss_eval(&twice, &s, &n, 64).unwrap();
    assert!((a.sdr_db - b.sdr_db).abs() < 1e-9);
    assert!((a.sir_db - b.sir_db).abs() < 1e-9);
    assert!((a.sar_db - b.sar_db).abs() < 1e-9);
    let c = bss_eval(&s, &s, &n, 64).unwrap();
    let d = bss_eval(&Waveform::new(s.samples.iter().map(|v| 2.0 * v).collect(), SAMPLE_RATE), &s, &n, 64).unwrap();
    assert_eq!(c, d);
}

#[test]
fn orthogonal_residual_matches_closed_form() {
    let taps = 8;
    let t = 400;
    let s = random(10, t);
    let n = random(11, t);
    let a = delay_matrix(&[&s.samples, &n.samples], taps, t);
    let e = qr_residual(&a, &DVector::from_vec(random(12, t).samples)) * 0.3;
    let est = Waveform::new(s.samples.iter().zip(e.iter()).map(|(x, y)| x + y).collect(), SAMPLE_RATE);
    let r = bss_eval(&est, &s, &n, taps).unwrap();
    let want = 10.0 * (energy(&s.samples) / e.norm_squared()).log10();
    assert!((r.sdr_db - want).abs() < 0.01, "{} vs {want}", r.sdr_db);
    assert!((r.sar_db - want).abs() < 0.01);
    assert!(r.sir_db > 100.0);
}

#[test]
fn single_tap_matches_direct_least_squares() {
    let t = 800;
    let s = random(20, t);
    let n_raw = DVector::from_vec(random(21, t).samples);
    let s_vec = DVector::from_vec(s.samples.clone());
    // noise made orthogonal to the source
    let n_vec = &n_raw - &s_vec * (s_vec.dot(&n_raw) / s_vec.norm_squared());
    let n = Waveform::new(n_vec.as_slice().to_vec(), SAMPLE_RATE);
    let extra = DVector::from_vec(random(22, t).samples);
    let est_vec = &s_vec * 0.9 + &n_vec * 0.4 + &extra * 0.25;
    let est = Waveform::new(est_vec.as_slice().to_vec(), SAMPLE_RATE);

    let target = &s_vec * (est_vec.dot(&s_vec) / s_vec.norm_squared());
    let interf = &n_vec * (est_vec.dot(&n_vec) / n_vec.norm_squared());
    let artif = &est_vec - &target - &interf;
    let db = |a: f64, b: f64| 10.0 * (a / b).log10();
    let want_sdr = db(target.norm_squared(), (&interf + &artif).norm_squared());
    let want_sir = db(target.norm_squared(), interf.norm_squared());
    let want_sar = db((&target + &interf).norm_squared(), artif.norm_squared());

    let r = bss_eval(&est, &s, &n, 1).unwrap();
    assert!((r.sdr_db - want_sdr).abs() < 1e-6);
    assert!((r.sir_db - want_sir).abs() < 1e-6);
    assert!((r.sar_db - want_sar).abs() < 1e-6);
}

#[test]
fn zero_energy_source_rejected() {
    let z = Waveform::new(vec![0.0; 300], SAMPLE_RATE);
    let x = random(1, 300);
    assert!(bss_eval(&x, &z, &x, 16).is_err());
}

#[test]
fn stoi_self_and_sign_flip() {
    let x = synth_speech(3, 2.0);
    let r = stoi(&x, &x).unwrap();
    assert!((r.score - 1.0).abs() < 1e-9, "{}", r.score);
    let neg = Waveform::new(x.samples.iter().map(|v| -v).collect(), SAMPLE_RATE);
    assert!((stoi(&x, &neg).unwrap().score - 1.0).abs() < 1e-9);
}

#[test]
fn stoi_gain_invariant() {
    let x = synth_speech(6, 2.0);
    let noise = band_limited_noise(1, x.len(), 0.0, 4000.0);
    let y = Waveform::new(x.samples.iter().zip(&noise.samples).map(|(a, b)| a + 0.3 * b).collect(), SAMPLE_RATE);
    let y3 = Waveform::new(y.samples.iter().map(|v| 3.0 * v).collect(), SAMPLE_RATE);
    let a = stoi(&x, &y).unwrap().score;
    let b = stoi(&x, &y3).unwrap().score;
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn stoi_monotone_in_noise_level() {
    let x = synth_speech(8, 2.5);
    let noise = band_limited_noise(2, x.len(), 0.0, 4000.0);
    let scores: Vec<f64> = [0.0, 0.05, 0.15, 0.4, 1.0]
        .iter()
        .map(|&g| {
            let y = Waveform::new(x.samples.iter().zip(&noise.samples).map(|(a, b)| a + g * b).collect(), SAMPLE_RATE);
            stoi(&x, &y).unwrap().score
        })
        .collect();
    assert!(scores.windows(2).all(|w| w[1] <= w[0]), "{scores:?}");
}

#[test]
fn stoi_unrelated_noise_scores_low() {
    let len = 2 * SAMPLE_RATE as usize;
    // tone complex with a slow syllabic envelope
    let tones = Waveform::new(
        (0..len)
            .map(|n| {
                let t = n as f64 / SAMPLE_RATE as f64;
                let env = (std::f64::consts::PI * 4.0 * t).sin().powi(2);
                env * [200.0, 400.0, 800.0, 1600.0, 2400.0]
                    .iter()
                    .map(|f| (2.0 * std::f64::consts::PI * f * t).sin())
                    .sum::<f64>()
            })
            .collect(),
        SAMPLE_RATE,
    );
    let noise = random(77, len);
    let score = stoi(&tones, &noise).unwrap().score;
    assert!(score < 0.4, "{score}");
}

#[test]
fn stoi_rejects_silence_and_mismatch() {
    let z = Waveform::new(vec![0.0; 16000], SAMPLE_RATE);
    assert!(stoi(&z, &z).is_err());
    let x = synth_speech(1, 1.0);
    let short = Waveform::new(x.samples[..100].to_vec(), SAMPLE_RATE);
    assert!(stoi(&x, &short).is_err());
}
