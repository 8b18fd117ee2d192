//! Batch normalization over all non-feature axes (feature axis last).

use crate::error::{shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Running statistics carried between training steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// False until the first training-mode update.
    pub initialized: bool,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
            initialized: false,
        }
    }

    /// Exponential moving average: `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        self.initialized = true;
    }
}

/// Per-feature mean and (biased) variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub enum BatchNormMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval(&'a RunningStats),
}

fn check(op: &'static str, x: &[usize], gamma: &[usize], beta: &[usize]) -> Result<usize> {
    let Some(&k) = x.last() else {
        return shape_err(op, "input must have a feature axis");
    };
    if gamma != [k] || beta != [k] {
        return shape_err(
            op,
            format!("gamma {gamma:?} / beta {beta:?} must both be [{k}]"),
        );
    }
    Ok(k)
}

/// Returns the normalized output and, in training mode, the batch statistics
/// that the caller folds into its running statistics.
pub fn batchnorm<'t>(
    x: Var<'t>,
    gamma: Var<'t>,
    beta: Var<'t>,
    mode: BatchNormMode<'_>,
    eps: f64,
) -> Result<(Var<'t>, Option<BatchStats>)> {
    let shape = x.shape();
    let k = check("batchnorm", &shape, &gamma.shape(), &beta.shape())?;
    let vx = x.value();
    let count = vx.len() / k.max(1);
    let (vg, vb) = (gamma.value(), beta.value());

    let (mean, var, stats) = match mode {
        BatchNormMode::Train => {
            if count < 2 {
                return Err(crate::TensorError::InvalidArgument {
                    op: "batchnorm",
                    detail: "training mode needs more than one element per feature".into(),
                });
            }
            let mut mean = vec![0.0; k];
            for px in vx.data().chunks(k) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; k];
            for px in vx.data().chunks(k) {
                for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= count as f64);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(stats))
        }
        BatchNormMode::Eval(running) => {
            if running.initialized {
                (running.mean.clone(), running.var.clone(), None)
            } else {
                log::warn!("batchnorm evaluated before any training update; using mean 0, variance 1");
                (vec![0.0; k], vec![1.0; k], None)
            }
        }
    };
    let training = stats.is_some();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; vx.len()];
    let mut out = vec![0.0; vx.len()];
    for (i, (xv, (h, o))) in vx
        .data()
        .iter()
        .zip(xhat.iter_mut().zip(out.iter_mut()))
        .enumerate()
    {
        let f = i % k;
        *h = (xv - mean[f]) * inv_std[f];
        *o = vg.data()[f] * *h + vb.data()[f];
    }
    let out = Tensor::new(shape.clone(), out)?;
    let var_out = x.tape().record(
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let g = g.data();
            let mut sum_g = vec![0.0; k];
            let mut sum_gx = vec![0.0; k];
            for (i, (gv, h)) in g.iter().zip(&xhat).enumerate() {
                sum_g[i % k] += gv;
                sum_gx[i % k] += gv * h;
            }
            let gx = needs[0].then(|| {
                let n = count as f64;
                let d = g
                    .iter()
                    .zip(&xhat)
                    .enumerate()
                    .map(|(i, (gv, h))| {
                        let f = i % k;
                        let scale = vg.data()[f] * inv_std[f];
                        if training {
                            scale * (gv - sum_g[f] / n - h * sum_gx[f] / n)
                        } else {
                            scale * gv
                        }
                    })
                    .collect();
                Tensor::new(shape.clone(), d).unwrap()
            });
            vec![
                gx,
                needs[1].then(|| Tensor::new(vec![k], sum_gx.clone()).unwrap()),
                needs[2].then(|| Tensor::new(vec![k], sum_g.clone()).unwrap()),
            ]
        }),
    );
    Ok((var_out, stats))
}
