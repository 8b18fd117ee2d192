use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcunet_core::data::{CorpusConfig, Utterance};
use rcunet_core::dsp::MelBank;
use rcunet_core::model::{Mode, ModelSpec, Network, OutputMode};
use rcunet_core::pipeline;
use rcunet_core::train::{
    batch_order, compute_loss, prepare_example, split_indices, train, Batch, Example, TrainConfig, TrainLog,
    LOG_HEADER, LR_PLAIN, LR_RECURRENT,
};
use rcunet_core::CoreError;
use rcunet_tensor::{Adam, Tape, Tensor};

const BANDS: usize = 64;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-2.0..2.0))
}

fn example(id: &str, frames: usize, channels: usize, seed: u64) -> Example {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Example {
        id: id.to_string(),
        input: random(&[BANDS, frames], &mut rng),
        target: random(&[BANDS, frames, channels], &mut rng),
    }
}

fn tiny_corpus(train_count: usize) -> Vec<Utterance> {
    CorpusConfig {
        train_count,
        test_count: 0,
        min_duration_secs: 0.6,
        max_duration_secs: 0.9,
        ..CorpusConfig::default()
    }
    .generate()
    .unwrap()
    .train
}

fn tiny_spec() -> ModelSpec {
    ModelSpec::named("C48", 1, Some(4)).unwrap()
}

fn quick_config(spec: &ModelSpec, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        ..TrainConfig::for_spec(spec)
    }
}

fn snapshot(net: &Network) -> Vec<(String, Vec<f64>)> {
    net.params
        .iter()
        .map(|p| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}

#[test]
fn learning_rate_decays_geometrically() {
    let cfg = TrainConfig::for_spec(&ModelSpec::named("C48", 5, None).unwrap());
    assert_eq!(cfg.lr0, LR_PLAIN);
    let expected = cfg.lr0 * 0.99f64.powi(99);
    assert!((cfg.lr_at(100) - expected).abs() <= 1e-15 * expected);
    assert_eq!(cfg.lr_at(1), cfg.lr0);
}

#[test]
fn recurrent_networks_default_to_the_higher_rate() {
    assert_eq!(TrainConfig::for_spec(&ModelSpec::named("ALL_RC", 5, None).unwrap()).lr0, LR_RECURRENT);
    assert_eq!(TrainConfig::for_spec(&ModelSpec::named("ODD_RC", 5, None).unwrap()).lr0, LR_RECURRENT);
    assert_eq!(TrainConfig::for_spec(&ModelSpec::named("RNN", 5, Some(8)).unwrap()).lr0, LR_RECURRENT);
    assert_eq!(TrainConfig::for_spec(&ModelSpec::named("C64_MP", 5, None).unwrap()).lr0, LR_PLAIN);
    assert_eq!(TrainConfig::for_spec(&ModelSpec::named("FCLN", 5, None).unwrap()).lr0, LR_PLAIN);
}

#[test]
fn config_rejects_bad_values() {
    let base = TrainConfig::for_spec(&tiny_spec());
    assert!(base.check().is_ok());
    for bad in [
        TrainConfig { val_fraction: 1.0, ..base.clone() },
        TrainConfig { val_fraction: -0.1, ..base.clone() },
        TrainConfig { lr0: 0.0, ..base.clone() },
        TrainConfig { batch_size: 0, ..base.clone() },
        TrainConfig { epochs: 0, ..base.clone() },
    ] {
        assert!(bad.check().is_err(), "{bad:?}");
    }
}

#[test]
fn mixed_lengths_pad_to_the_longest_with_a_mask() {
    let (a, b) = (example("a", 50, 2, 1), example("b", 80, 2, 2));
    let batch = Batch::assemble(&[&a, &b]).unwrap();
    assert_eq!(batch.input.shape(), &[2, BANDS, 80, 1]);
    assert_eq!(batch.target.shape(), &[2, BANDS, 80, 2]);
    let per_sample: Vec<f64> = (0..2)
        .map(|s| {
            let n = BANDS * 80 * 2;
            batch.mask.data()[s * n..(s + 1) * n].iter().sum::<f64>() / (BANDS * 2) as f64
        })
        .collect();
    assert_eq!(per_sample, vec![50.0, 80.0]);
    assert_eq!(batch.valid_frames(), 130.0);
    for band in 0..BANDS {
        for n in 50..80 {
            assert_eq!(batch.input.at(&[0, band, n, 0]), 0.0);
            assert_eq!(batch.mask.at(&[0, band, n, 1]), 0.0);
        }
        for n in 0..50 {
            assert_eq!(batch.input.at(&[0, band, n, 0]), a.input.at(&[band, n]));
            assert_eq!(batch.target.at(&[0, band, n, 1]), a.target.at(&[band, n, 1]));
        }
    }
}

#[test]
fn unit_batches_never_pad() {
    let examples: Vec<Example> = (0..5).map(|i| example("x", 20 + 7 * i, 2, i as u64)).collect();
    for epoch in 1..4 {
        for idx in batch_order(examples.len(), 1, 3, epoch) {
            assert_eq!(idx.len(), 1);
            let batch = Batch::assemble(&[&examples[idx[0]]]).unwrap();
            assert!(batch.mask.data().iter().all(|&m| m == 1.0));
        }
    }
}

#[test]
fn batch_order_is_a_seeded_permutation() {
    let a = batch_order(23, 5, 7, 3);
    assert_eq!(a, batch_order(23, 5, 7, 3));
    assert_ne!(a, batch_order(23, 5, 7, 4));
    assert_ne!(a, batch_order(23, 5, 8, 3));
    assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5, 5, 5, 3]);
    let mut all: Vec<usize> = a.concat();
    all.sort_unstable();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
}

#[test]
fn split_is_seeded_and_disjoint() {
    let (train_idx, val_idx) = split_indices(64, 0.1, 5);
    assert_eq!(val_idx.len(), 6);
    assert_eq!(train_idx.len(), 58);
    assert_eq!((train_idx.clone(), val_idx.clone()), split_indices(64, 0.1, 5));
    let mut all = [train_idx, val_idx].concat();
    all.sort_unstable();
    assert_eq!(all, (0..64).collect::<Vec<_>>());
    assert!(split_indices(2, 0.1, 0).1.is_empty());
}

fn loss_of(pred: &Tensor, batch: &Batch) -> f64 {
    let tape = Tape::new();
    let p = tape.constant(pred.clone());
    compute_loss(p, batch).unwrap().value().data()[0]
}

#[test]
fn perfect_prediction_has_zero_loss() {
    let (a, b) = (example("a", 30, 2, 3), example("b", 41, 2, 4));
    let batch = Batch::assemble(&[&a, &b]).unwrap();
    assert_eq!(loss_of(&batch.target, &batch), 0.0);
}

#[test]
fn speech_offset_by_one_gives_unit_loss() {
    let (a, b) = (example("a", 30, 2, 5), example("b", 41, 2, 6));
    let batch = Batch::assemble(&[&a, &b]).unwrap();
    let pred = Tensor::from_fn(batch.target.shape().to_vec(), |i| {
        batch.target.data()[i] + if i % 2 == 0 { 1.0 } else { 0.0 }
    });
    assert!((loss_of(&pred, &batch) - 1.0).abs() < 1e-12);
}

#[test]
fn loss_matches_per_channel_masked_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let examples = [example("a", 17, 2, 7), example("b", 33, 2, 8), example("c", 25, 2, 9)];
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = Batch::assemble(&refs).unwrap();
    let pred = random(batch.target.shape(), &mut rng);
    let mut expected = 0.0;
    for ch in 0..2 {
        let (mut sum, mut count) = (0.0, 0.0);
        for (s, e) in examples.iter().enumerate() {
            for band in 0..BANDS {
                for n in 0..e.frames() {
                    sum += (pred.at(&[s, band, n, ch]) - e.target.at(&[band, n, ch])).abs();
                    count += 1.0;
                }
            }
        }
        expected += sum / count;
    }
    assert!((loss_of(&pred, &batch) - expected).abs() < 1e-12);
}

#[test]
fn padding_does_not_influence_loss_or_gradient() {
    let (a, b) = (example("a", 20, 2, 10), example("b", 35, 2, 11));
    let batch = Batch::assemble(&[&a, &b]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pred = random(batch.target.shape(), &mut rng);
    let garbage = Tensor::from_fn(pred.shape().to_vec(), |i| {
        if batch.mask.data()[i] == 0.0 {
            1e6
        } else {
            pred.data()[i]
        }
    });
    assert_eq!(loss_of(&pred, &batch), loss_of(&garbage, &batch));

    let tape = Tape::new();
    let p = tape.variable(garbage);
    let grads = tape.backward(compute_loss(p, &batch).unwrap()).unwrap();
    let g = grads.wrt(p);
    for (gi, m) in g.data().iter().zip(batch.mask.data()) {
        if *m == 0.0 {
            assert_eq!(*gi, 0.0);
        }
    }
    assert!(g.data().iter().any(|v| *v != 0.0));
}

#[test]
fn irm_examples_have_one_channel_in_unit_range() {
    let utts = tiny_corpus(1);
    let mel = MelBank::new();
    let e = prepare_example(&utts[0], OutputMode::Irm, &mel).unwrap();
    assert_eq!(e.target.shape(), &[BANDS, e.frames(), 1]);
    assert!(e.target.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let m = prepare_example(&utts[0], OutputMode::Mapping, &mel).unwrap();
    assert_eq!(m.target.shape(), &[BANDS, m.frames(), 2]);
    assert_eq!(m.input.data(), e.input.data());
}

#[test]
fn optimizer_step_touches_only_parameters_with_gradient() {
    let mut net = Network::build(&tiny_spec(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random(&[1, BANDS, 16, 1], &mut rng);
    let target = random(&[1, BANDS, 16, 2], &mut rng);
    let tape = Tape::new();
    let x = tape.constant(input);
    let out = net.forward(&tape, x, Mode::Train).unwrap().output;
    let loss = rcunet_tensor::ops::l1_loss(out, &target).unwrap();
    net.params.zero_grad();
    tape.backward(loss).unwrap().accumulate_into(&mut net.params);
    let frozen = net.params.id_of("head.bias").unwrap();
    net.params.get_mut(frozen).grad = Tensor::zeros(net.params.get(frozen).value.shape().to_vec());

    let before = snapshot(&net);
    let had_grad: Vec<bool> = net.params.iter().map(|p| p.grad.data().iter().any(|g| *g != 0.0)).collect();
    Adam::new(0.01).step(&mut net.params);
    for ((name, old), (p, grad)) in before.iter().zip(net.params.iter().zip(had_grad)) {
        assert_eq!(old != p.value.data(), grad, "{name}");
    }
    assert!(!net.params.by_name("head.bias").unwrap().grad.data().iter().any(|g| *g != 0.0));
}

#[test]
fn validation_leaves_parameters_and_statistics_alone() {
    let utts = tiny_corpus(3);
    let mel = MelBank::new();
    let spec = tiny_spec();
    let cfg = TrainConfig {
        validate: false,
        ..quick_config(&spec, 1)
    };
    let net = train(Network::build(&spec, 0).unwrap(), &utts, &cfg, &mel, |_, _| Ok(()))
        .unwrap()
        .last;
    let before = snapshot(&net);
    pipeline::mean_sdr(&net, &utts, &mel, true).unwrap();
    pipeline::evaluate(Some(&net), &utts, &mel, true, true).unwrap();
    assert_eq!(before, snapshot(&net));

    let e = prepare_example(&utts[0], OutputMode::Mapping, &mel).unwrap();
    let n = e.frames();
    let tape = Tape::new();
    let x = tape.constant(e.input.reshape([1, BANDS, n, 1]).unwrap());
    assert!(net.forward(&tape, x, Mode::Eval).unwrap().updates.is_empty());
}

#[test]
fn best_snapshot_tracks_the_maximum_validation_sdr() {
    let utts = tiny_corpus(4);
    let mel = MelBank::new();
    let spec = tiny_spec();
    let cfg = TrainConfig {
        val_fraction: 0.25,
        ..quick_config(&spec, 4)
    };
    let outcome = train(Network::build(&spec, 1).unwrap(), &utts, &cfg, &mel, |_, _| Ok(())).unwrap();
    let state = &outcome.state;
    assert_eq!(state.history.len(), 4);
    assert_eq!(state.epoch, 4);
    assert!((state.lr_current - cfg.lr0 * 0.99f64.powi(4)).abs() < 1e-15);
    let sdrs: Vec<f64> = state.history.iter().map(|r| r.val_sdr.unwrap()).collect();
    let best = sdrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(state.best_val_sdr, Some(best));
    assert_eq!(sdrs[state.best_epoch - 1], best);
    let mut running = f64::NEG_INFINITY;
    for r in &state.history {
        assert_eq!(r.snapshot, r.val_sdr.unwrap() > running);
        running = running.max(r.val_sdr.unwrap());
    }

    let (_, val_idx) = split_indices(utts.len(), cfg.val_fraction, cfg.seed);
    let val: Vec<Utterance> = val_idx.iter().map(|&i| utts[i].clone()).collect();
    assert_eq!(val.len(), 1);
    let rescored = pipeline::mean_sdr(&outcome.best, &val, &mel, cfg.fast_math).unwrap();
    assert_eq!(rescored, best);
}

#[test]
fn reruns_reproduce_the_loss_history() {
    let utts = tiny_corpus(3);
    let mel = MelBank::new();
    let spec = ModelSpec::named("ALL_RC", 1, Some(4)).unwrap();
    let cfg = TrainConfig {
        validate: false,
        ..quick_config(&spec, 3)
    };
    let run = || {
        train(Network::build(&spec, 2).unwrap(), &utts, &cfg, &mel, |_, _| Ok(()))
            .unwrap()
            .state
            .history
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.train_loss.is_finite() && r.val_sdr.is_none() && r.snapshot));
}

#[test]
fn training_reduces_the_loss() {
    let utts = tiny_corpus(2);
    let mel = MelBank::new();
    let spec = ModelSpec::named("C48", 1, Some(8)).unwrap();
    let cfg = TrainConfig {
        validate: false,
        batch_size: 1,
        lr0: 0.01,
        ..quick_config(&spec, 25)
    };
    let h = train(Network::build(&spec, 0).unwrap(), &utts, &cfg, &mel, |_, _| Ok(()))
        .unwrap()
        .state
        .history;
    assert!(h[24].train_loss < 0.75 * h[0].train_loss, "{} -> {}", h[0].train_loss, h[24].train_loss);
}

#[test]
fn non_finite_loss_aborts_with_the_batch_ids() {
    let utts = tiny_corpus(2);
    let mel = MelBank::new();
    let spec = tiny_spec();
    let mut net = Network::build(&spec, 0).unwrap();
    let id = net.params.id_of("head.bias").unwrap();
    net.params.get_mut(id).value = Tensor::full(vec![2], f64::NAN);
    let cfg = TrainConfig {
        validate: false,
        batch_size: 1,
        ..quick_config(&spec, 1)
    };
    match train(net, &utts, &cfg, &mel, |_, _| Ok(())) {
        Err(CoreError::NonFiniteLoss { epoch, ids, loss, .. }) => {
            assert_eq!(epoch, 1);
            assert_eq!(ids.len(), 1);
            assert!(ids[0].starts_with("train_"));
            assert!(loss.is_nan());
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training on NaN weights succeeded"),
    }
}

#[test]
fn epoch_callback_sees_every_record_and_can_log_it() {
    let utts = tiny_corpus(2);
    let mel = MelBank::new();
    let spec = tiny_spec();
    let cfg = TrainConfig {
        validate: false,
        ..quick_config(&spec, 2)
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let mut log = TrainLog::create(&path).unwrap();
    let mut seen = Vec::new();
    train(Network::build(&spec, 0).unwrap(), &utts, &cfg, &mel, |r, _| {
        seen.push(r.epoch);
        log.append(r)
    })
    .unwrap();
    drop(log);
    assert_eq!(seen, vec![1, 2]);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,0.00100000,"));
    assert!(lines[2].ends_with(",,1"));
}
