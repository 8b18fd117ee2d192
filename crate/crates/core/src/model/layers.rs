//! Parameterized building blocks shared by the U-nets and the baselines.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rcunet_tensor::ops::{self, BatchNormMode, BatchStats, GruWeights, LstmWeights, RunningStats};
use rcunet_tensor::{ParamId, ParamKind, ParamStore, Tape, Tensor, Var};

use super::spec::Axis;
use crate::error::Result;

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics from one training forward pass, applied to the running
/// buffers by [`apply_stat_updates`] once the step is accepted.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub norm: BatchNorm,
    pub batch: BatchStats,
}

/// Shared state threaded through one forward pass.
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s ParamStore,
    pub mode: Mode,
    pub updates: Vec<StatUpdate>,
    /// Tape variables that stand in for stored parameters.
    pub overrides: HashMap<ParamId, Var<'t>>,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            store,
            mode,
            updates: Vec::new(),
            overrides: HashMap::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        match self.overrides.get(&id) {
            Some(&v) => v,
            None => self.tape.param(self.store, id),
        }
    }
}

/// Seeded parameter factory.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64, kind: ParamKind) -> Result<ParamId> {
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..bound));
        Ok(self.store.add(name, value, kind)?)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64, kind: ParamKind) -> Result<ParamId> {
        Ok(self.store.add(name, Tensor::full(shape.to_vec(), value), kind)?)
    }

    /// `[rows, blocks*rows]` made of independent random orthogonal blocks.
    pub fn orthogonal_blocks(&mut self, name: String, rows: usize, blocks: usize, kind: ParamKind) -> Result<ParamId> {
        let mut value = Tensor::zeros([rows, blocks * rows]);
        for b in 0..blocks {
            let q = random_orthogonal(rows, &mut self.rng);
            for i in 0..rows {
                for j in 0..rows {
                    value.set(&[i, b * rows + j], q[(i, j)]);
                }
            }
        }
        Ok(self.store.add(name, value, kind)?)
    }
}

/// Haar-distributed orthogonal matrix from the QR factors of a Gaussian matrix.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Fan-in scaled uniform bound for layers followed by ELU.
pub fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Fan-in scaled uniform bound for linear outputs.
pub fn lecun_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

/// Batch normalization over the trailing feature axis with running buffers.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Number of running-stat updates so far, stored as a one-element buffer.
    pub updates: ParamId,
    pub features: usize,
}

impl BatchNorm {
    pub fn new(init: &mut Init<'_>, prefix: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant(format!("{prefix}.gamma"), &[features], 1.0, ParamKind::Weight)?,
            beta: init.constant(format!("{prefix}.beta"), &[features], 0.0, ParamKind::Weight)?,
            running_mean: init.constant(format!("{prefix}.running_mean"), &[features], 0.0, ParamKind::Buffer)?,
            running_var: init.constant(format!("{prefix}.running_var"), &[features], 1.0, ParamKind::Buffer)?,
            updates: init.constant(format!("{prefix}.updates"), &[1], 0.0, ParamKind::Buffer)?,
            features,
        })
    }

    pub fn running(&self, store: &ParamStore) -> RunningStats {
        RunningStats {
            mean: store.get(self.running_mean).value.data().to_vec(),
            var: store.get(self.running_var).value.data().to_vec(),
            initialized: store.get(self.updates).value.data()[0] > 0.0,
        }
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ops::batchnorm(x, gamma, beta, BatchNormMode::Train, ops::DEFAULT_EPS)?;
                if let Some(batch) = stats {
                    ctx.updates.push(StatUpdate { norm: *self, batch });
                }
                Ok(y)
            }
            Mode::Eval => {
                let running = self.running(ctx.store);
                let (y, _) = ops::batchnorm(x, gamma, beta, BatchNormMode::Eval(&running), ops::DEFAULT_EPS)?;
                Ok(y)
            }
        }
    }
}

/// Folds batch statistics into the running buffers with the given momentum.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate], momentum: f64) {
    for u in updates {
        let mut running = u.norm.running(store);
        running.update(&u.batch, momentum);
        store.get_mut(u.norm.running_mean).value.data_mut().copy_from_slice(&running.mean);
        store.get_mut(u.norm.running_var).value.data_mut().copy_from_slice(&running.var);
        store.get_mut(u.norm.updates).value.data_mut()[0] += 1.0;
    }
}

/// Convolution (plain or stride-2 transposed) followed by batch norm and ELU.
#[derive(Clone, Copy, Debug)]
pub struct ConvUnit {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub norm: BatchNorm,
    pub transposed: bool,
}

/// Kernel size of the transposed convolution that exactly doubles a map.
pub const TRANSPOSED_KERNEL: usize = 6;

impl ConvUnit {
    pub fn new(init: &mut Init<'_>, prefix: &str, size: usize, k_in: usize, k_out: usize, transposed: bool) -> Result<Self> {
        let fan_in = size * size * k_in;
        Ok(Self {
            kernel: init.uniform(
                format!("{prefix}.kernel"),
                &[size, size, k_in, k_out],
                he_bound(fan_in),
                ParamKind::Weight,
            )?,
            bias: init.constant(format!("{prefix}.bias"), &[k_out], 0.0, ParamKind::Weight)?,
            norm: BatchNorm::new(init, &format!("{prefix}.bn"), k_out)?,
            transposed,
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let (k, b) = (ctx.param(self.kernel), ctx.param(self.bias));
        let y = if self.transposed {
            ops::conv_transpose2d(x, k, Some(b), 2, 2)?
        } else {
            ops::conv2d(x, k, Some(b))?
        };
        let y = self.norm.forward(ctx, y)?;
        Ok(ops::elu(y))
    }
}

/// Parameters of one recurrent direction.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

impl RecurrentCell {
    /// `gates` is 3 for a GRU and 4 for an LSTM.
    pub fn new(init: &mut Init<'_>, prefix: &str, k_in: usize, hidden: usize, gates: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_x: init.uniform(format!("{prefix}.w_x"), &[k_in, gates * hidden], bound, ParamKind::Recurrent)?,
            w_h: init.orthogonal_blocks(format!("{prefix}.w_h"), hidden, gates, ParamKind::Recurrent)?,
            bias: init.constant(format!("{prefix}.bias"), &[gates * hidden], 0.0, ParamKind::Recurrent)?,
        })
    }

    pub fn gru<'t>(&self, ctx: &Ctx<'t, '_>) -> GruWeights<'t> {
        GruWeights {
            w_x: ctx.param(self.w_x),
            w_h: ctx.param(self.w_h),
            bias: ctx.param(self.bias),
        }
    }

    pub fn lstm<'t>(&self, ctx: &Ctx<'t, '_>) -> LstmWeights<'t> {
        LstmWeights {
            w_x: ctx.param(self.w_x),
            w_h: ctx.param(self.w_h),
            bias: ctx.param(self.bias),
        }
    }
}

/// Bidirectional weight-sharing recurrence: forward and backward GRUs sweep
/// one spatial axis, sharing weights across the other, and their hidden
/// states are concatenated per position.
#[derive(Clone, Copy, Debug)]
pub struct Bwr {
    pub forward: RecurrentCell,
    pub backward: RecurrentCell,
    pub axis: Axis,
    pub units_per_dir: usize,
}

impl Bwr {
    pub fn new(init: &mut Init<'_>, prefix: &str, k_in: usize, units_per_dir: usize, axis: Axis) -> Result<Self> {
        Ok(Self {
            forward: RecurrentCell::new(init, &format!("{prefix}.fwd"), k_in, units_per_dir, 3)?,
            backward: RecurrentCell::new(init, &format!("{prefix}.bwd"), k_in, units_per_dir, 3)?,
            axis,
            units_per_dir,
        })
    }

    /// `[M, B, N, K]` to `[M, B, N, 2H]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let x = match self.axis {
            Axis::Time => x,
            Axis::Freq => ops::transpose_hw(x)?,
        };
        let shape = x.shape();
        let (m, rows, steps, k) = (shape[0], shape[1], shape[2], shape[3]);
        let seqs = ops::reshape(x, &[m * rows, steps, k])?;
        let fwd = ops::gru_seq(seqs, &self.forward.gru(ctx), None, false)?;
        let bwd = ops::gru_seq(seqs, &self.backward.gru(ctx), None, true)?;
        let both = ops::concat(&[fwd, bwd])?;
        let y = ops::reshape(both, &[m, rows, steps, 2 * self.units_per_dir])?;
        match self.axis {
            Axis::Time => Ok(y),
            Axis::Freq => Ok(ops::transpose_hw(y)?),
        }
    }
}

/// Recurrent-convolutional pair: the normalized BWR output is appended to
/// the input features and fused by a 3x3 conv unit.
#[derive(Clone, Copy, Debug)]
pub struct RcPair {
    pub bwr: Bwr,
    pub recurrent_norm: BatchNorm,
    pub conv: ConvUnit,
}

impl RcPair {
    pub fn new(init: &mut Init<'_>, prefix: &str, k_in: usize, units: usize, axis: Axis, k_out: usize) -> Result<Self> {
        let per_dir = units / 2;
        Ok(Self {
            bwr: Bwr::new(init, &format!("{prefix}.bwr"), k_in, per_dir, axis)?,
            recurrent_norm: BatchNorm::new(init, &format!("{prefix}.bwr_bn"), units)?,
            conv: ConvUnit::new(init, &format!("{prefix}.conv"), 3, k_in + units, k_out, false)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let r = self.bwr.forward(ctx, x)?;
        let r = self.recurrent_norm.forward(ctx, r)?;
        let c = ops::concat(&[x, r])?;
        self.conv.forward(ctx, c)
    }
}

/// Dense layer `x W + b` on `[rows, k_in]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(init: &mut Init<'_>, prefix: &str, k_in: usize, k_out: usize, bound: f64) -> Result<Self> {
        Ok(Self {
            weight: init.uniform(format!("{prefix}.weight"), &[k_in, k_out], bound, ParamKind::Weight)?,
            bias: init.constant(format!("{prefix}.bias"), &[k_out], 0.0, ParamKind::Weight)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(ops::linear(x, ctx.param(self.weight), Some(ctx.param(self.bias)))?)
    }
}
