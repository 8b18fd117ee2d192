//! Seeded finite-difference cases covering every differentiable op.
//!
//! Inputs are drawn as shuffled grids of well-separated values so that no
//! perturbation of size `STEP` crosses a kink (max-pool ties, L1 zeros).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, GradCheckReport};
use crate::error::Result;
use crate::ops::{self, BatchNormMode, GruWeights, LstmWeights, RunningStats};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

pub type CaseFn = fn(u64) -> Result<GradCheckReport>;

/// Values spaced `gap` apart in `[-1, 1]`, shuffled.
pub fn separated(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let gap = 2.0 / (n.max(1) as f64 + 1.0);
    let mut vals: Vec<f64> = (0..n).map(|i| -1.0 + gap * (i as f64 + 1.0)).collect();
    vals.shuffle(rng);
    // jitter well inside the spacing keeps values distinct
    for v in &mut vals {
        *v += rng.gen_range(-0.1..0.1) * gap;
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

/// Reduces `y` to a scalar with fixed random weights so every output
/// element contributes a distinct adjoint.
pub fn project(y: Var<'_>, seed: u64) -> Result<Var<'_>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = uniform(&y.shape(), 1.0, &mut rng);
    Ok(ops::sum(ops::mul_const(y, &w)?))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn add(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[3, 4, 2], 1.0, &mut r), uniform(&[3, 4, 2], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::add(v[0], v[1])?, seed))
}

fn sub(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[4, 3], 1.0, &mut r), uniform(&[4, 3], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::sub(v[0], v[1])?, seed))
}

fn mul(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[3, 3, 3], 1.0, &mut r), uniform(&[3, 3, 3], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::mul(v[0], v[1])?, seed))
}

fn scale_and_mean(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[5, 4], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| {
        let y = ops::mul(v[0], v[0])?;
        Ok(ops::mean(ops::scale(y, -1.7)))
    })
}

fn reshape_narrow(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[4, 6, 3], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| {
        let y = ops::narrow(v[0], 1, 2, 3)?;
        let y = ops::reshape(y, &[12, 3])?;
        let y = ops::narrow(y, 1, 1, 2)?;
        project(y, seed)
    })
}

fn index_select(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[3, 5, 2], 1.0, &mut r)];
    let picks: Vec<usize> = (0..7).map(|_| r.gen_range(0..5)).collect();
    check_gradients(&ins, STEP, |_, v| project(ops::index_select(v[0], 1, &picks)?, seed))
}

fn concat(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[3, 4, 2], 1.0, &mut r), uniform(&[3, 4, 3], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::concat(&[v[0], v[1]])?, seed))
}

fn transpose_hw(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[2, 3, 5, 2], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::transpose_hw(v[0])?, seed))
}

fn linear(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [
        uniform(&[5, 4], 1.0, &mut r),
        uniform(&[4, 3], 1.0, &mut r),
        uniform(&[3], 1.0, &mut r),
    ];
    check_gradients(&ins, STEP, |_, v| project(ops::linear(v[0], v[1], Some(v[2]))?, seed))
}

fn conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [
        uniform(&[6, 6, 3], 1.0, &mut r),
        uniform(&[3, 3, 3, 2], 1.0, &mut r),
        uniform(&[2], 1.0, &mut r),
    ];
    check_gradients(&ins, STEP, |_, v| project(ops::conv2d(v[0], v[1], Some(v[2]))?, seed))
}

fn conv2d_pointwise_batched(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[2, 4, 5, 3], 1.0, &mut r), uniform(&[1, 1, 3, 2], 1.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::conv2d(v[0], v[1], None)?, seed))
}

fn conv_transpose2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [
        uniform(&[3, 2, 2], 1.0, &mut r),
        uniform(&[6, 6, 2, 2], 1.0, &mut r),
        uniform(&[2], 1.0, &mut r),
    ];
    check_gradients(&ins, STEP, |_, v| {
        project(ops::conv_transpose2d(v[0], v[1], Some(v[2]), 2, 2)?, seed)
    })
}

fn maxpool(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [separated(&[5, 6, 3], &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::maxpool2x2(v[0])?, seed))
}

fn elu(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[6, 6, 3], 2.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| project(ops::elu(v[0]), seed))
}

fn tanh_sigmoid(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [uniform(&[4, 5], 3.0, &mut r)];
    check_gradients(&ins, STEP, |_, v| {
        let y = ops::add(ops::tanh(v[0]), ops::sigmoid(v[0]))?;
        project(y, seed)
    })
}

fn batchnorm_train(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [
        uniform(&[4, 5, 3], 2.0, &mut r),
        uniform(&[3], 1.5, &mut r),
        uniform(&[3], 1.0, &mut r),
    ];
    check_gradients(&ins, STEP, |_, v| {
        let (y, _) = ops::batchnorm(v[0], v[1], v[2], BatchNormMode::Train, ops::DEFAULT_EPS)?;
        project(y, seed)
    })
}

fn batchnorm_eval(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [
        uniform(&[3, 4, 2], 2.0, &mut r),
        uniform(&[2], 1.5, &mut r),
        uniform(&[2], 1.0, &mut r),
    ];
    let running = RunningStats {
        mean: vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
        var: vec![r.gen_range(0.5..2.0), r.gen_range(0.5..2.0)],
        initialized: true,
    };
    check_gradients(&ins, STEP, |_, v| {
        let (y, _) = ops::batchnorm(v[0], v[1], v[2], BatchNormMode::Eval(&running), ops::DEFAULT_EPS)?;
        project(y, seed)
    })
}

fn l1(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let pred = separated(&[4, 6], &mut r);
    // every target sits at least 0.05 away from its prediction
    let target = Tensor::from_fn(pred.shape().to_vec(), |i| {
        let p = pred.data()[i];
        let gap = 0.05 + 0.5 * (p * 7.3).sin().abs();
        if i % 2 == 0 { p + gap } else { p - gap }
    });
    check_gradients(&[pred], STEP, |_, v| ops::l1_loss(v[0], &target))
}

fn masked_l1(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let pred = separated(&[3, 8], &mut r);
    let target = Tensor::from_fn(pred.shape().to_vec(), |i| {
        let off = 0.05 + 0.3 * ((i * 37 % 11) as f64) / 11.0;
        if i % 3 == 0 { pred.data()[i] - off } else { pred.data()[i] + off }
    });
    let mask = Tensor::from_fn(pred.shape().to_vec(), |i| if i % 8 < 5 { 1.0 } else { 0.0 });
    check_gradients(&[pred], STEP, |_, v| ops::masked_l1_loss(v[0], &target, &mask))
}

fn gru(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (m, t, k, h) = (2, 4, 3, 3);
    let reverse = seed % 2 == 1;
    let ins = [
        uniform(&[m, t, k], 1.0, &mut r),
        uniform(&[k, 3 * h], 0.8, &mut r),
        uniform(&[h, 3 * h], 0.8, &mut r),
        uniform(&[3 * h], 0.5, &mut r),
        uniform(&[m, h], 0.5, &mut r),
    ];
    check_gradients(&ins, STEP, |_, v| {
        let w = GruWeights { w_x: v[1], w_h: v[2], bias: v[3] };
        project(ops::gru_seq(v[0], &w, Some(v[4]), reverse)?, seed)
    })
}

fn lstm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (m, t, k, h) = (2, 4, 3, 2);
    let reverse = seed.is_multiple_of(2);
    let ins = [
        uniform(&[m, t, k], 1.0, &mut r),
        uniform(&[k, 4 * h], 0.8, &mut r),
        uniform(&[h, 4 * h], 0.8, &mut r),
        uniform(&[4 * h], 0.5, &mut r),
        uniform(&[m, h], 0.5, &mut r),
        uniform(&[m, h], 0.5, &mut r),
    ];
    check_gradients(&ins, STEP, |_, v| {
        let w = LstmWeights { w_x: v[1], w_h: v[2], bias: v[3] };
        project(ops::lstm_seq(v[0], &w, Some(v[4]), Some(v[5]), reverse)?, seed)
    })
}

fn conv_elu_l1(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let ins = [
        uniform(&[5, 5, 2], 1.0, &mut r),
        uniform(&[3, 3, 2, 2], 0.7, &mut r),
        uniform(&[2], 0.3, &mut r),
    ];
    // target far from any reachable output keeps L1 off its kink
    let target = Tensor::full([5, 5, 2], 25.0);
    check_gradients(&ins, STEP, |_, v| {
        let y = ops::elu(ops::conv2d(v[0], v[1], Some(v[2]))?);
        ops::l1_loss(y, &target)
    })
}

/// Every op case, by name.
pub fn all() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("add", add as CaseFn),
        ("sub", sub),
        ("mul", mul),
        ("scale_mean", scale_and_mean),
        ("reshape_narrow", reshape_narrow),
        ("index_select", index_select),
        ("concat", concat),
        ("transpose_hw", transpose_hw),
        ("linear", linear),
        ("conv2d", conv2d),
        ("conv2d_1x1", conv2d_pointwise_batched),
        ("conv_transpose2d", conv_transpose2d),
        ("maxpool2x2", maxpool),
        ("elu", elu),
        ("tanh_sigmoid", tanh_sigmoid),
        ("batchnorm_train", batchnorm_train),
        ("batchnorm_eval", batchnorm_eval),
        ("l1_loss", l1),
        ("masked_l1_loss", masked_l1),
        ("gru_seq", gru),
        ("lstm_seq", lstm),
        ("conv_elu_l1", conv_elu_l1),
    ]
}
