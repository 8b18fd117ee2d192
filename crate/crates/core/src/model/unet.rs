//! U-net over log-mel spectrograms with skip concatenations.

use rcunet_tensor::ops;
use rcunet_tensor::{ParamKind, Var};

use super::layers::{lecun_bound, ConvUnit, Ctx, Init, RcPair, TRANSPOSED_KERNEL};
use super::spec::{ArchSpec, Layer};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug)]
pub enum Unit {
    Conv(ConvUnit),
    Rc(RcPair),
    MaxPool,
}

#[derive(Clone, Debug)]
pub struct UNet {
    pub spec: ArchSpec,
    pub blocks: Vec<Vec<Unit>>,
    pub head_kernel: rcunet_tensor::ParamId,
    pub head_bias: rcunet_tensor::ParamId,
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}

impl UNet {
    pub fn new(spec: &ArchSpec, init: &mut Init<'_>) -> Result<Self> {
        let plans = spec.plan()?;
        let mut blocks = Vec::with_capacity(plans.len());
        for (i, plan) in plans.iter().enumerate() {
            let mut units = Vec::with_capacity(plan.layers.len());
            for (j, lp) in plan.layers.iter().enumerate() {
                let prefix = format!("pb{}.{}", i + 1, j);
                let unit = match lp.layer {
                    Layer::Conv { features, size } => {
                        Unit::Conv(ConvUnit::new(init, &prefix, size, lp.in_features, features, false)?)
                    }
                    Layer::TransposedConv { features } => Unit::Conv(ConvUnit::new(
                        init,
                        &prefix,
                        TRANSPOSED_KERNEL,
                        lp.in_features,
                        features,
                        true,
                    )?),
                    Layer::Rc { units, axis, features } => {
                        Unit::Rc(RcPair::new(init, &prefix, lp.in_features, units, axis, features)?)
                    }
                    Layer::MaxPool => Unit::MaxPool,
                };
                units.push(unit);
            }
            blocks.push(units);
        }
        let k_last = plans.last().map(|p| p.out_features).unwrap_or(1);
        let channels = spec.output_mode.channels();
        let head_kernel = init.uniform(
            "head.kernel".into(),
            &[1, 1, k_last, channels],
            lecun_bound(k_last),
            ParamKind::Weight,
        )?;
        let head_bias = init.constant("head.bias".into(), &[channels], 0.0, ParamKind::Weight)?;
        Ok(Self {
            spec: spec.clone(),
            blocks,
            head_kernel,
            head_bias,
        })
    }

    /// Spatial multiple required by the pooling depth.
    pub fn alignment(&self) -> usize {
        1 << self.spec.pool_count()
    }

    /// `[M, B, N, 1]` to `[M, B, N, channels]`.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, input: Var<'t>) -> Result<Var<'t>> {
        let shape = input.shape();
        if shape.len() != 4 || shape[3] != 1 {
            return invalid("unet_forward", format!("expected [M, bands, frames, 1], got {shape:?}"));
        }
        let (bands, frames) = (shape[1], shape[2]);
        let align = self.alignment();
        let padded_len = |n: usize| n.div_ceil(align) * align;
        let (pb, pn) = (padded_len(bands), padded_len(frames));
        let mut x = input;
        if pb != bands {
            let idx: Vec<usize> = (0..pb).map(|i| reflect(i, bands)).collect();
            x = ops::index_select(x, 1, &idx)?;
        }
        if pn != frames {
            let idx: Vec<usize> = (0..pn).map(|i| reflect(i, frames)).collect();
            x = ops::index_select(x, 2, &idx)?;
        }

        let mut outputs: Vec<Var<'t>> = Vec::with_capacity(self.blocks.len());
        for (i, units) in self.blocks.iter().enumerate() {
            let parts: Vec<Var<'t>> = self
                .spec
                .sources(i)
                .into_iter()
                .map(|src| match src {
                    None => x,
                    Some(j) => outputs[j],
                })
                .collect();
            let mut h = if parts.len() == 1 { parts[0] } else { ops::concat(&parts)? };
            for unit in units {
                h = match unit {
                    Unit::Conv(c) => c.forward(ctx, h)?,
                    Unit::Rc(rc) => rc.forward(ctx, h)?,
                    Unit::MaxPool => ops::maxpool2x2(h)?,
                };
            }
            outputs.push(h);
        }
        let last = *outputs.last().expect("spec has blocks");
        let mut y = ops::conv2d(last, ctx.param(self.head_kernel), Some(ctx.param(self.head_bias)))?;
        if pb != bands {
            y = ops::narrow(y, 1, 0, bands)?;
        }
        if pn != frames {
            y = ops::narrow(y, 2, 0, frames)?;
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::reflect;

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (0..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 3, 2, 1]);
        let idx: Vec<usize> = (0..7).map(|i| reflect(i, 2)).collect();
        assert_eq!(idx, vec![0, 1, 0, 1, 0, 1, 0]);
        assert_eq!(reflect(9, 1), 0);
    }
}
