//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs every criterion by default; numeric arguments select a subset, e.g.
//! `cargo test -p rcunet-cli --test acceptance -- 5 7`.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcunet_core::data::{band_limited_noise, synth_speech, CorpusConfig};
use rcunet_core::dsp::{features, istft, reconstruct, stft, MelBank, Waveform, FRAME_LEN, N_BINS, N_MELS, SAMPLE_RATE};
use rcunet_core::metrics::{bss_decompose, bss_eval, stoi, DEFAULT_FILTER_LEN, SENTINEL_DB};
use rcunet_core::model::analysis::{count_params, gradient_footprint, receptive_field, Extent};
use rcunet_core::model::gradcheck::rc_pair_case;
use rcunet_core::model::{canonical_archs, ModelSpec, Network};
use rcunet_core::pipeline;
use rcunet_core::train::{train, TrainConfig};
use rcunet_tensor::gradcheck::cases::{self, TOLERANCE};

/// Outcome of one criterion: whether it holds and a one-line summary.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

const SEEDS: u64 = 20;

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0, String::new());
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut record = |name: &str, seed: u64, err: f64| {
        checked += 1;
        if err > worst.0 {
            worst = (err, format!("{name} seed {seed}"));
        }
        if !(err < TOLERANCE) {
            failures.push(format!("{name} seed {seed}: {err:.2e}"));
        }
    };
    for (name, case) in cases::all() {
        for seed in 0..SEEDS {
            match case(seed) {
                Ok(r) => record(name, seed, r.max_rel_error),
                Err(e) => record(&format!("{name} ({e})"), seed, f64::INFINITY),
            }
        }
    }
    for seed in 0..SEEDS {
        match rc_pair_case(seed) {
            Ok(r) => record("rc_pair", seed, r.max_rel_error),
            Err(e) => record(&format!("rc_pair ({e})"), seed, f64::INFINITY),
        }
    }
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(120);
    Verdict::new(
        failures.is_empty() && fast,
        format!(
            "{checked} checks, worst relative error {:.2e} ({}), {:.1} s{}",
            worst.0,
            worst.1,
            elapsed.as_secs_f64(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    )
}

fn interior_rel_rms(estimate: &[f64], reference: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for n in FRAME_LEN..estimate.len().min(reference.len()) - FRAME_LEN {
        num += (estimate[n] - reference[n]).powi(2);
        den += reference[n] * reference[n];
    }
    (num / den).sqrt()
}

fn dsp_suite() -> Verdict {
    let mut stft_worst: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Waveform::new((0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE);
        let y = istft(&stft(&x).unwrap()).unwrap();
        stft_worst = stft_worst.max(interior_rel_rms(&y.samples, &x.samples));
    }

    let mel = MelBank::new();
    let m = DMatrix::from_row_slice(N_MELS, N_BINS, &mel.weights);
    let p = DMatrix::from_row_slice(N_BINS, N_MELS, &mel.pinv);
    let pinv_residual = (&m * &p * &m - &m).norm() / m.norm();

    let mut round_trip_worst: f64 = 0.0;
    for seed in 0..4 {
        let x = band_limited_noise(seed, 16000, 300.0, 3400.0);
        let s = features(&x, &mel).unwrap();
        let y = reconstruct(&s.logmel, &s.phase, &mel).unwrap();
        round_trip_worst = round_trip_worst.max(interior_rel_rms(&y.samples, &x.samples));
    }
    Verdict::new(
        stft_worst < 1e-10 && pinv_residual < 1e-10 && round_trip_worst < 0.15,
        format!(
            "STFT round trip {stft_worst:.2e} (< 1e-10), mel pseudoinverse residual {pinv_residual:.2e} (< 1e-10), \
             features/reconstruct {round_trip_worst:.3} (< 0.15)"
        ),
    )
}

fn architecture_audit() -> Verdict {
    const SIZE: usize = 64;
    let mut problems = Vec::new();
    let mut summary = Vec::new();
    let mut footprints = std::collections::HashMap::new();
    for arch in canonical_archs() {
        let spec = ModelSpec::UNet(arch.clone());
        let net = Network::build(&spec, 2).unwrap();
        let counted = count_params(&spec).unwrap();
        let registered = net.params.trainable_count();
        if counted != registered {
            problems.push(format!("{}: count {counted} vs registry {registered}", arch.name));
        }
        let rf = receptive_field(&spec).unwrap();
        let fp = gradient_footprint(&net, SIZE, SIZE, 8).unwrap();
        let centre = SIZE / 2;
        if fp.time != rf.time.clipped(centre, SIZE) || fp.freq != rf.freq.clipped(centre, SIZE) {
            problems.push(format!(
                "{}: footprint {}x{} vs symbolic {rf}",
                arch.name, fp.time, fp.freq
            ));
        }
        summary.push(format!("{} {counted} {rf}", arch.name));
        footprints.insert(arch.name.clone(), (rf, fp));
    }
    let (c48_rf, c48_fp) = &footprints["C48"];
    if c48_rf.time != Extent::Finite(21) || c48_rf.freq != Extent::Finite(21) || (c48_fp.time, c48_fp.freq) != (21, 21) {
        problems.push(format!("C48 receptive field {c48_rf}, footprint {}x{}", c48_fp.time, c48_fp.freq));
    }
    let (rc_rf, rc_fp) = &footprints["ALL_RC"];
    if rc_rf.time != Extent::Full || rc_rf.freq != Extent::Full || (rc_fp.time, rc_fp.freq) != (SIZE, SIZE) {
        problems.push(format!("ALL_RC receptive field {rc_rf}, footprint {}x{}", rc_fp.time, rc_fp.freq));
    }
    let (_, mp_fp) = &footprints["C64_MP"];
    if !(mp_fp.time > c48_fp.time && mp_fp.freq > c48_fp.freq) {
        problems.push(format!("C64_MP footprint {}x{} not larger than C48's", mp_fp.time, mp_fp.freq));
    }
    Verdict::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("counts and footprints agree: {}", summary.join("; "))
        } else {
            problems.join("; ")
        },
    )
}

fn random_wave(seed: u64, len: usize) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn metric_oracles() -> Verdict {
    let mut problems = Vec::new();

    let mut identity_worst: f64 = 0.0;
    for seed in 0..5 {
        let s = random_wave(seed, 1500);
        let n = random_wave(seed + 100, 1500);
        let extra = random_wave(seed + 200, 1500);
        let est = Waveform::new(
            (0..1500)
                .map(|i| 0.8 * s.samples[i] + 0.3 * n.samples[i] + 0.2 * extra.samples[i])
                .collect(),
            SAMPLE_RATE,
        );
        let d = bss_decompose(&est, &s, &n, 32).unwrap();
        let parts = energy(&d.target) + energy(&d.interference) + energy(&d.artifact);
        identity_worst = identity_worst.max((energy(&d.estimate) - parts).abs() / energy(&d.estimate));
    }
    if !(identity_worst < 1e-6) {
        problems.push(format!("orthogonal split off by {identity_worst:.2e}"));
    }

    let speech = synth_speech(4, 1.0);
    let other = synth_speech(5, 1.0);
    let same = bss_eval(&speech, &speech, &other, DEFAULT_FILTER_LEN).unwrap();
    if same.sdr_db != SENTINEL_DB {
        problems.push(format!("identical estimate SDR {}", same.sdr_db));
    }

    // Residual orthogonal to every delayed copy of source and noise, built
    // with an independent QR projection.
    let (taps, t) = (8, 400);
    let s = random_wave(10, t);
    let n = random_wave(11, t);
    let a = DMatrix::from_fn(t, 2 * taps, |r, c| {
        let sig = if c < taps { &s.samples } else { &n.samples };
        let d = c % taps;
        if r >= d {
            sig[r - d]
        } else {
            0.0
        }
    });
    let raw = DVector::from_vec(random_wave(12, t).samples);
    let qr = a.clone().qr();
    let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * &raw)).unwrap();
    let residual = (&raw - &a * coef) * 0.3;
    let est = Waveform::new((0..t).map(|i| s.samples[i] + residual[i]).collect(), SAMPLE_RATE);
    let closed_form = 10.0 * (energy(&s.samples) / residual.norm_squared()).log10();
    let measured = bss_eval(&est, &s, &n, taps).unwrap().sdr_db;
    if !((measured - closed_form).abs() < 0.01) {
        problems.push(format!("orthogonal residual SDR {measured:.4} vs {closed_form:.4}"));
    }

    let x = synth_speech(3, 2.0);
    let self_score = stoi(&x, &x).unwrap().score;
    if !((self_score - 1.0).abs() < 1e-9) {
        problems.push(format!("stoi(x, x) = {self_score}"));
    }

    let y = synth_speech(8, 2.5);
    let noise = band_limited_noise(2, y.len(), 0.0, 4000.0);
    let scores: Vec<f64> = [0.0, 0.05, 0.15, 0.4, 1.0]
        .iter()
        .map(|&g| {
            let noisy = Waveform::new(
                y.samples.iter().zip(&noise.samples).map(|(a, b)| a + g * b).collect(),
                SAMPLE_RATE,
            );
            stoi(&y, &noisy).unwrap().score
        })
        .collect();
    if !scores.windows(2).all(|w| w[1] <= w[0]) {
        problems.push(format!("stoi not monotone: {scores:?}"));
    }
    Verdict::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "split identity {identity_worst:.1e}, capped SDR {SENTINEL_DB} dB, closed form {measured:.4} vs \
                 {closed_form:.4} dB, stoi(x,x) = {self_score:.12}, stoi by noise level {}",
                scores.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" > ")
            )
        } else {
            problems.join("; ")
        },
    )
}

fn overfit_sanity() -> Verdict {
    let start = Instant::now();
    let utterances = CorpusConfig {
        train_count: 2,
        test_count: 0,
        ..CorpusConfig::default()
    }
    .generate()
    .unwrap()
    .train;
    let spec = ModelSpec::named("ALL_RC", 2, Some(16)).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        val_fraction: 0.0,
        validate: false,
        ..TrainConfig::for_spec(&spec)
    };
    let mel = MelBank::new();
    let run = || {
        train(Network::build(&spec, 0).unwrap(), &utterances, &cfg, &mel, |_, _| Ok(()))
            .unwrap()
            .state
            .history
    };
    let first = run();
    let second = run();
    let elapsed = start.elapsed();
    let (initial, last) = (first[0].train_loss, first[first.len() - 1].train_loss);
    let ratio = last / initial;
    let identical = first.len() == second.len()
        && first
            .iter()
            .zip(&second)
            .all(|(a, b)| (a.train_loss - b.train_loss).abs() <= 1e-9);
    let in_time = elapsed < Duration::from_secs(15 * 60);
    Verdict::new(
        ratio < 0.1 && identical && in_time,
        format!(
            "epoch 1 loss {initial:.4}, epoch 200 loss {last:.4}, ratio {ratio:.3} (< 0.1); rerun identical: {identical}; \
             {:.0} s for both runs",
            elapsed.as_secs_f64()
        ),
    )
}

struct Scores {
    sdr: f64,
    stoi: f64,
}

fn desk_scale_trend() -> Verdict {
    let corpus = CorpusConfig::default().generate().unwrap();
    let mel = MelBank::new();
    let fit = |name: &str| -> Scores {
        let spec = ModelSpec::named(name, 5, None).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::for_spec(&spec)
        };
        let outcome = train(Network::build(&spec, 0).unwrap(), &corpus.train, &cfg, &mel, |r, _| {
            println!(
                "    {name} epoch {:>2}: loss {:.4}, validation SDR {:.3} dB",
                r.epoch,
                r.train_loss,
                r.val_sdr.unwrap_or(f64::NAN)
            );
            Ok(())
        })
        .unwrap();
        let report = pipeline::evaluate(Some(&outcome.best), &corpus.test, &mel, cfg.fast_math, false).unwrap();
        let mean = report.mean().unwrap();
        Scores {
            sdr: mean.sdr,
            stoi: mean.stoi,
        }
    };
    let mixture = pipeline::evaluate(None, &corpus.test, &mel, true, true)
        .unwrap()
        .passthrough_mean()
        .unwrap();
    let rc = fit("ALL_RC");
    let plain = fit("C48");
    let gain = rc.sdr - mixture.sdr;
    Verdict::new(
        gain >= 2.0 && rc.stoi > mixture.stoi,
        format!(
            "ALL_RC SDR {:.2} dB vs mixture {:.2} dB (gain {gain:.2}, needs >= 2), STOI {:.3} vs {:.3}; \
             informational: C48 SDR {:.2} dB, STOI {:.3} (ALL_RC >= C48: {})",
            rc.sdr,
            mixture.sdr,
            rc.stoi,
            mixture.stoi,
            plain.sdr,
            plain.stoi,
            rc.sdr >= plain.sdr
        ),
    )
}

fn rcunet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rcunet"))
        .args(args)
        .output()
        .expect("rcunet binary runs")
}

fn end_to_end_cli() -> Verdict {
    const SNR_DB: f64 = 5.0;
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (corpus, ckpt, csv) = (path("corpus"), path("model.ckpt"), path("eval.csv"));
    let snr = SNR_DB.to_string();
    let steps: Vec<(&str, Vec<&str>)> = vec![
        (
            "gen-data",
            vec![
                "gen-data", "--out", &corpus, "--train-count", "4", "--test-count", "4", "--snr-db", &snr,
                "--min-duration", "1.5", "--max-duration", "2.0",
            ],
        ),
        (
            "train",
            vec![
                "train", "--arch", "C48", "--levels", "1", "--width", "8", "--corpus", &corpus, "--out", &ckpt,
                "--epochs", "2", "--batch-size", "2",
            ],
        ),
        ("evaluate", vec!["evaluate", "--ckpt", &ckpt, "--corpus", &corpus, "--out", &csv, "--passthrough"]),
    ];
    for (name, args) in &steps {
        let out = rcunet(args);
        if !out.status.success() {
            return Verdict::new(
                false,
                format!("{name} exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)),
            );
        }
    }
    let text = std::fs::read_to_string(&csv).unwrap_or_default();
    let header_ok = text.lines().next() == Some("id,noise_kind,snr_db,sdr,sir,sar,stoi");
    let passthrough_sdr = text
        .lines()
        .find(|l| l.starts_with("passthrough,"))
        .and_then(|l| l.split(',').nth(3))
        .and_then(|v| v.parse::<f64>().ok());
    let checkpoint_written = Path::new(&ckpt).is_file();
    match passthrough_sdr {
        Some(sdr) => Verdict::new(
            header_ok && checkpoint_written && (sdr - SNR_DB).abs() <= 1.0,
            format!("all commands exited 0; passthrough SDR {sdr:.3} dB at {SNR_DB} dB SNR (tolerance 1 dB)"),
        ),
        None => Verdict::new(false, "evaluation CSV has no passthrough row"),
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Verdict); 7] = [
        (1, "gradient suite", gradient_suite),
        (2, "DSP suite", dsp_suite),
        (3, "architecture audit", architecture_audit),
        (4, "metric oracles", metric_oracles),
        (5, "overfit sanity", overfit_sanity),
        (6, "desk-scale trend", desk_scale_trend),
        (7, "end-to-end CLI", end_to_end_cli),
    ];
    let mut failed = 0;
    for (number, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Verdict::new(false, "panicked"));
        println!(
            "criterion {number} ({name}): {} [{:.0} s] {}",
            if verdict.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            verdict.detail
        );
        if !verdict.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
