//! Parameter counts and receptive fields derived from a spec, plus an
//! empirical receptive-field probe on a built network.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcunet_tensor::{ops, Tape, Tensor};

use super::baselines::BaselineKind;
use super::layers::{Mode, TRANSPOSED_KERNEL};
use super::spec::{ArchSpec, Axis, Layer};
use super::{ModelSpec, Network};
use crate::error::Result;

/// Trainable scalars of a spec, counted from layer shapes alone.
pub fn count_params(spec: &ModelSpec) -> Result<usize> {
    match spec {
        ModelSpec::UNet(a) => count_unet(a),
        ModelSpec::Baseline(b) => {
            let outputs = b.outputs();
            let count = match b.kind {
                BaselineKind::Fcln => {
                    let mut k_in = b.bands * b.window;
                    let mut total = 0;
                    for _ in 0..b.layers {
                        total += dense_params(k_in, b.hidden);
                        k_in = b.hidden;
                    }
                    total + dense_params(k_in, outputs)
                }
                BaselineKind::Rnn => {
                    let mut k_in = b.bands;
                    let mut total = 0;
                    for _ in 0..b.layers {
                        total += 2 * recurrent_params(k_in, b.hidden, 4);
                        k_in = 2 * b.hidden;
                    }
                    total + dense_params(k_in, outputs)
                }
            };
            Ok(count)
        }
    }
}

fn dense_params(k_in: usize, k_out: usize) -> usize {
    k_in * k_out + k_out
}

/// Conv kernel and bias plus the batch-norm scale and shift.
fn conv_unit_params(size: usize, k_in: usize, k_out: usize) -> usize {
    size * size * k_in * k_out + k_out + 2 * k_out
}

fn recurrent_params(k_in: usize, hidden: usize, gates: usize) -> usize {
    gates * (k_in * hidden + hidden * hidden + hidden)
}

fn count_unet(spec: &ArchSpec) -> Result<usize> {
    let plans = spec.plan()?;
    let mut total = 0;
    for lp in plans.iter().flat_map(|p| &p.layers) {
        total += match lp.layer {
            Layer::Conv { features, size } => conv_unit_params(size, lp.in_features, features),
            Layer::TransposedConv { features } => conv_unit_params(TRANSPOSED_KERNEL, lp.in_features, features),
            Layer::Rc { units, features, .. } => {
                2 * recurrent_params(lp.in_features, units / 2, 3)
                    + 2 * units
                    + conv_unit_params(3, lp.in_features + units, features)
            }
            Layer::MaxPool => 0,
        };
    }
    let k_last = plans.last().map(|p| p.out_features).unwrap_or(1);
    Ok(total + dense_params(k_last, spec.output_mode.channels()))
}

/// Extent of input positions along one axis that reach one output element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extent {
    Finite(usize),
    Full,
}

impl Extent {
    fn grow(self, by: usize) -> Extent {
        match self {
            Extent::Finite(e) => Extent::Finite(e + by),
            Extent::Full => Extent::Full,
        }
    }

    fn max(self, other: Extent) -> Extent {
        match (self, other) {
            (Extent::Finite(a), Extent::Finite(b)) => Extent::Finite(a.max(b)),
            _ => Extent::Full,
        }
    }

    /// Footprint of a centred window of this extent on an axis of `len`
    /// positions around `centre`.
    pub fn clipped(self, centre: usize, len: usize) -> usize {
        match self {
            Extent::Full => len,
            Extent::Finite(e) => {
                let half = (e - 1) / 2;
                let lo = centre.saturating_sub(half);
                let hi = (centre + (e - 1 - half)).min(len - 1);
                hi - lo + 1
            }
        }
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Finite(e) => write!(f, "{e}"),
            Extent::Full => f.write_str("full"),
        }
    }
}

/// Receptive field as (time, frequency) extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceptiveField {
    pub time: Extent,
    pub freq: Extent,
}

impl fmt::Display for ReceptiveField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.time, self.freq)
    }
}

impl ReceptiveField {
    fn grow(self, by: usize) -> Self {
        Self {
            time: self.time.grow(by),
            freq: self.freq.grow(by),
        }
    }

    fn max(self, other: Self) -> Self {
        Self {
            time: self.time.max(other.time),
            freq: self.freq.max(other.freq),
        }
    }
}

/// Symbolic receptive field. Extents are in input positions; a layer at
/// downsampling factor `s` widens them by `(k-1)*s` for a `k`-tap conv, `s`
/// for a 2x2 pool and `2s` for the 6-tap stride-2 transposed conv. A
/// recurrent sweep makes its axis full. Concatenations take the wider input.
pub fn receptive_field(spec: &ModelSpec) -> Result<ReceptiveField> {
    match spec {
        ModelSpec::UNet(a) => unet_receptive_field(a),
        ModelSpec::Baseline(b) => Ok(ReceptiveField {
            time: Extent::Finite(b.window),
            freq: Extent::Full,
        }),
    }
}

fn unet_receptive_field(spec: &ArchSpec) -> Result<ReceptiveField> {
    let plans = spec.plan()?;
    let point = ReceptiveField {
        time: Extent::Finite(1),
        freq: Extent::Finite(1),
    };
    let mut fields: Vec<ReceptiveField> = Vec::with_capacity(plans.len());
    for plan in &plans {
        let mut rf = plan
            .sources
            .iter()
            .map(|s| match s {
                None => point,
                Some(j) => fields[*j],
            })
            .reduce(ReceptiveField::max)
            .unwrap_or(point);
        for lp in &plan.layers {
            let s = lp.scale;
            rf = match lp.layer {
                Layer::Conv { size, .. } => rf.grow((size - 1) * s),
                Layer::MaxPool => rf.grow(s),
                Layer::TransposedConv { .. } => rf.grow(2 * s),
                Layer::Rc { axis, .. } => {
                    let swept = match axis {
                        Axis::Time => ReceptiveField {
                            time: Extent::Full,
                            ..rf
                        },
                        Axis::Freq => ReceptiveField {
                            freq: Extent::Full,
                            ..rf
                        },
                    };
                    swept.grow(2 * s)
                }
            };
        }
        fields.push(rf);
    }
    Ok(*fields.last().expect("spec has blocks"))
}

/// Bounding box (frames, bands) of input positions with nonzero gradient
/// for one output element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub time: usize,
    pub freq: usize,
}

/// Measures which input positions influence the output element at
/// (`bands/2`, `frames/2`) by backpropagating from it. Batch normalization
/// runs on running statistics gathered from one training pass so that no
/// batch coupling leaks into the result.
pub fn gradient_footprint(network: &Network, bands: usize, frames: usize, seed: u64) -> Result<Footprint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_fn([1, bands, frames, 1], |_| rng.gen_range(-1.0..1.0));
    let mut net = network.clone();
    {
        let tape = Tape::new();
        let x = tape.constant(input.clone());
        let fwd = net.forward(&tape, x, Mode::Train)?;
        let updates = fwd.updates;
        net.apply_stat_updates(&updates);
    }
    let tape = Tape::new();
    let x = tape.variable(input);
    let out = net.forward(&tape, x, Mode::Eval)?.output;
    let (cb, cn) = (bands / 2, frames / 2);
    let element = ops::narrow(ops::narrow(ops::narrow(out, 1, cb, 1)?, 2, cn, 1)?, 3, 0, 1)?;
    let grads = tape.backward(ops::sum(element))?;
    let g = grads.wrt(x);
    let (mut b_lo, mut b_hi, mut n_lo, mut n_hi) = (usize::MAX, 0, usize::MAX, 0);
    for b in 0..bands {
        for n in 0..frames {
            if g.at(&[0, b, n, 0]) != 0.0 {
                b_lo = b_lo.min(b);
                b_hi = b_hi.max(b);
                n_lo = n_lo.min(n);
                n_hi = n_hi.max(n);
            }
        }
    }
    if b_lo == usize::MAX {
        return Ok(Footprint { time: 0, freq: 0 });
    }
    Ok(Footprint {
        time: n_hi - n_lo + 1,
        freq: b_hi - b_lo + 1,
    })
}

/// Human-readable per-block layout with feature counts and scales.
pub fn block_table(spec: &ArchSpec) -> Result<String> {
    let plans = spec.plan()?;
    let mut out = String::from("block  side     level  in    layers            out   scale\n");
    for (i, (plan, block)) in plans.iter().zip(&spec.blocks).enumerate() {
        let side = match block.side {
            super::spec::Side::Encoder => "encoder",
            super::spec::Side::Decoder => "decoder",
        };
        out.push_str(&format!(
            "PB{:<4} {:<8} {:<6} {:<5} {:<17} {:<5} 1/{}\n",
            i + 1,
            side,
            block.level,
            plan.in_features,
            block.to_string(),
            plan.out_features,
            plan.out_scale
        ));
    }
    out.push_str(&format!(
        "head   1x1 linear conv -> {} channel(s) ({})\n",
        spec.output_mode.channels(),
        spec.output_mode
    ));
    Ok(out)
}
