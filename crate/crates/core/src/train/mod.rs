//! Mini-batch training with Adam, a decaying learning rate and
//! validation-SDR snapshot selection.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcunet_tensor::ops;
use rcunet_tensor::{clip_store, Adam, ClipScope, Tape, Tensor, Var};

use crate::data::Utterance;
use crate::dsp::{self, MelBank};
use crate::error::{invalid, io_err, CoreError, Result};
use crate::model::{irm, Mode, ModelSpec, Network, OutputMode};
use crate::pipeline;

pub const LR_PLAIN: f64 = 0.001;
pub const LR_RECURRENT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Factor applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub clip_threshold: f64,
    pub clip_scope: ClipScope,
    /// Utterances per forward pass; gradients of a batch are accumulated
    /// over its micro-batches.
    pub micro_batch: usize,
    /// Run convolutions in single precision.
    pub fast_math: bool,
    /// Score the validation split after every epoch. Without it the last
    /// epoch is kept.
    pub validate: bool,
}

impl TrainConfig {
    /// Defaults for `spec`; networks with recurrent layers start at a higher
    /// learning rate.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        Self {
            epochs: 100,
            batch_size: 15,
            lr0: if spec.is_recurrent() { LR_RECURRENT } else { LR_PLAIN },
            lr_decay: 0.99,
            val_fraction: 0.1,
            seed: 0,
            clip_threshold: 100.0,
            clip_scope: ClipScope::Recurrent,
            micro_batch: 1,
            fast_math: true,
            validate: true,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return invalid("train", format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0) {
            return invalid("train", "learning rate and decay must be positive");
        }
        if self.batch_size == 0 || self.micro_batch == 0 || self.epochs == 0 {
            return invalid("train", "epochs, batch size and micro-batch size must be positive");
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch.saturating_sub(1) as i32)
    }
}

/// Network input and regression target for one utterance.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    /// Noisy log-mel `[bands, frames]`.
    pub input: Tensor,
    /// `[bands, frames, C]`: clean and noise log-mel, or the ratio mask.
    pub target: Tensor,
}

impl Example {
    pub fn frames(&self) -> usize {
        self.input.shape()[1]
    }
}

pub fn prepare_example(utt: &Utterance, mode: OutputMode, mel: &MelBank) -> Result<Example> {
    let input = dsp::features(&utt.mixture, mel)?.logmel;
    let (bands, frames) = (input.shape()[0], input.shape()[1]);
    let channels: Vec<Tensor> = match mode {
        OutputMode::Mapping => vec![
            dsp::features(&utt.clean, mel)?.logmel,
            dsp::features(&utt.noise, mel)?.logmel,
        ],
        OutputMode::Irm => vec![irm(
            &dsp::mel_magnitude(&utt.clean, mel)?,
            &dsp::mel_magnitude(&utt.noise, mel)?,
        )?],
    };
    let c = channels.len();
    let target = Tensor::from_fn([bands, frames, c], |i| channels[i % c].data()[i / c]);
    Ok(Example {
        id: utt.id.clone(),
        input,
        target,
    })
}

/// Zero-padded stack of examples with a validity mask over real frames.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[M, bands, max_frames, 1]`
    pub input: Tensor,
    /// `[M, bands, max_frames, C]`
    pub target: Tensor,
    /// Same shape as `target`; 1 on real frames, 0 on padding.
    pub mask: Tensor,
}

impl Batch {
    pub fn assemble(examples: &[&Example]) -> Result<Self> {
        let Some(first) = examples.first() else {
            return invalid("make_batches", "empty batch");
        };
        let bands = first.input.shape()[0];
        let c = first.target.shape()[2];
        let frames = examples.iter().map(|e| e.frames()).max().unwrap_or(0);
        let m = examples.len();
        let mut input = Tensor::zeros([m, bands, frames, 1]);
        let mut target = Tensor::zeros([m, bands, frames, c]);
        let mut mask = Tensor::zeros([m, bands, frames, c]);
        for (s, e) in examples.iter().enumerate() {
            if e.input.shape()[0] != bands || e.target.shape()[2] != c {
                return invalid("make_batches", format!("example {} has a different layout", e.id));
            }
            for b in 0..bands {
                for n in 0..e.frames() {
                    input.set(&[s, b, n, 0], e.input.at(&[b, n]));
                    for ch in 0..c {
                        target.set(&[s, b, n, ch], e.target.at(&[b, n, ch]));
                        mask.set(&[s, b, n, ch], 1.0);
                    }
                }
            }
        }
        Ok(Self {
            ids: examples.iter().map(|e| e.id.clone()).collect(),
            input,
            target,
            mask,
        })
    }

    pub fn valid_frames(&self) -> f64 {
        let c = self.mask.shape()[3];
        let bands = self.mask.shape()[1];
        self.mask.sum() / (c * bands) as f64
    }
}

/// Shuffled batch partition of `count` items for 1-based `epoch`.
pub fn batch_order(count: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Sum over output channels of the masked mean absolute error.
pub fn compute_loss<'t>(output: Var<'t>, batch: &Batch) -> Result<Var<'t>> {
    let channels = batch.target.shape()[3] as f64;
    let l1 = ops::masked_l1_loss(output, &batch.target, &batch.mask)?;
    Ok(ops::scale(l1, channels))
}

/// Seeded partition into (train, validation) index lists.
pub fn split_indices(count: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let n_val = ((count as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(count.saturating_sub(1));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_sdr: Option<f64>,
    pub snapshot: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrainState {
    pub epoch: usize,
    pub lr_current: f64,
    pub best_val_sdr: Option<f64>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    /// Snapshot with the best validation SDR (the last epoch without validation).
    pub best: Network,
    pub last: Network,
    pub state: TrainState,
}

/// One optimizer step over `batch_examples`; returns the batch loss.
fn train_step(
    network: &mut Network,
    adam: &Adam,
    cfg: &TrainConfig,
    batch_examples: &[&Example],
    epoch: usize,
    batch_index: usize,
) -> Result<f64> {
    network.params.zero_grad();
    let total_frames: usize = batch_examples.iter().map(|e| e.frames()).sum();
    let mut batch_loss = 0.0;
    for micro in batch_examples.chunks(cfg.micro_batch) {
        let batch = Batch::assemble(micro)?;
        let weight = batch.valid_frames() / total_frames as f64;
        let tape = Tape::new();
        tape.set_fast_math(cfg.fast_math);
        let input = tape.constant(batch.input.clone());
        let fwd = network.forward(&tape, input, Mode::Train)?;
        let loss = compute_loss(fwd.output, &batch)?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(CoreError::NonFiniteLoss {
                epoch,
                batch: batch_index,
                loss: value,
                ids: batch.ids.clone(),
            });
        }
        batch_loss += weight * value;
        let grads = tape.backward(ops::scale(loss, weight))?;
        grads.accumulate_into(&mut network.params);
        network.apply_stat_updates(&fwd.updates);
    }
    clip_store(&mut network.params, cfg.clip_threshold, cfg.clip_scope);
    adam.step(&mut network.params);
    Ok(batch_loss)
}

/// Trains `network` on `utterances`, holding out a seeded validation split.
/// `on_epoch` sees every epoch record and the current network.
pub fn train(
    mut network: Network,
    utterances: &[Utterance],
    cfg: &TrainConfig,
    mel: &MelBank,
    mut on_epoch: impl FnMut(&EpochRecord, &Network) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.check()?;
    if utterances.is_empty() {
        return invalid("train", "no training utterances");
    }
    let (train_idx, val_idx) = split_indices(utterances.len(), cfg.val_fraction, cfg.seed);
    let val_utts: Vec<Utterance> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| utterances[i].clone()).collect()
    } else {
        val_idx.iter().map(|&i| utterances[i].clone()).collect()
    };
    let mode = network.output_mode();
    let examples: Vec<Example> = train_idx
        .iter()
        .map(|&i| prepare_example(&utterances[i], mode, mel))
        .collect::<Result<_>>()?;
    log::info!(
        "training {} on {} utterances, validating on {}",
        network.spec.name(),
        examples.len(),
        val_utts.len()
    );

    let mut state = TrainState::default();
    let mut best = network.clone();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let adam = Adam::new(lr);
        let order = batch_order(examples.len(), cfg.batch_size, cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for (b, idx) in order.iter().enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            loss_sum += train_step(&mut network, &adam, cfg, &batch, epoch, b)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_sdr = if cfg.validate {
            Some(pipeline::mean_sdr(&network, &val_utts, mel, cfg.fast_math)?)
        } else {
            None
        };
        let snapshot = match (val_sdr, state.best_val_sdr) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if snapshot {
            best = network.clone();
            state.best_epoch = epoch;
            if val_sdr.is_some() {
                state.best_val_sdr = val_sdr;
            }
        }
        state.epoch = epoch;
        state.lr_current = cfg.lr_at(epoch + 1);
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_sdr,
            snapshot,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.6} loss {train_loss:.5} val_sdr {}{}",
            val_sdr.map_or("-".to_string(), |v| format!("{v:.3}")),
            if snapshot { " *" } else { "" }
        );
        on_epoch(&record, &network)?;
        state.history.push(record);
    }
    Ok(TrainOutcome {
        best,
        last: network,
        state,
    })
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_sdr,snapshot";

/// Append-only CSV training log.
pub struct TrainLog {
    file: File,
    path: PathBuf,
}

impl TrainLog {
    /// Creates (truncating) the log and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(io_err(path))?;
        writeln!(file, "{LOG_HEADER}").map_err(io_err(path))?;
        drop(file);
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        let val = r.val_sdr.map_or(String::new(), |v| format!("{v:.6}"));
        writeln!(
            self.file,
            "{},{:.8},{:.8},{},{}",
            r.epoch,
            r.lr,
            r.train_loss,
            val,
            u8::from(r.snapshot)
        )
        .map_err(io_err(&self.path))
    }
}
