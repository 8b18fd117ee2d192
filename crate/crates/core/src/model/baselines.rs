//! Sliding-window baselines: a fully connected network and a stacked
//! bidirectional LSTM, both predicting one output frame per window.

use std::fmt;

use rcunet_tensor::ops;
use rcunet_tensor::Var;

use super::layers::{he_bound, lecun_bound, Ctx, Dense, Init, RecurrentCell};
use super::spec::OutputMode;
use crate::dsp::N_MELS;
use crate::error::{invalid, CoreError, Result};

pub const DEFAULT_WINDOW: usize = 23;
pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_LAYERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Fcln,
    Rnn,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Fcln => "fcln",
            BaselineKind::Rnn => "rnn",
        }
    }
}

/// Size of a sliding-window baseline. For the RNN `hidden` is the number of
/// LSTM units per direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub name: String,
    pub bands: usize,
    pub window: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output_mode: OutputMode,
}

impl BaselineSpec {
    pub fn fcln() -> Self {
        Self {
            kind: BaselineKind::Fcln,
            name: "FCLN".into(),
            bands: N_MELS,
            window: DEFAULT_WINDOW,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            output_mode: OutputMode::Irm,
        }
    }

    pub fn rnn() -> Self {
        Self {
            kind: BaselineKind::Rnn,
            name: "RNN".into(),
            ..Self::fcln()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) || self.bands == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(CoreError::InvalidArch(format!(
                "{}: window must be odd and bands, hidden, layers positive",
                self.name
            )));
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        self.bands * self.output_mode.channels()
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind={}", self.kind.as_str())?;
        writeln!(f, "name={}", self.name)?;
        writeln!(f, "bands={}", self.bands)?;
        writeln!(f, "window={}", self.window)?;
        writeln!(f, "hidden={}", self.hidden)?;
        writeln!(f, "layers={}", self.layers)?;
        writeln!(f, "output={}", self.output_mode)
    }
}

/// Frame indices of every centred window, edge frames replicated.
pub fn window_indices(frames: usize, window: usize) -> Vec<usize> {
    let half = (window / 2) as isize;
    let last = frames as isize - 1;
    let mut idx = Vec::with_capacity(frames * window);
    for n in 0..frames as isize {
        for j in -half..=half {
            idx.push((n + j).clamp(0, last) as usize);
        }
    }
    idx
}

/// `[M, B, N, 1]` to `[M*N, W, B]` windows.
fn windows<'t>(x: Var<'t>, window: usize) -> Result<(Var<'t>, usize, usize, usize)> {
    let shape = x.shape();
    if shape.len() != 4 || shape[3] != 1 {
        return invalid("baseline_forward", format!("expected [M, bands, frames, 1], got {shape:?}"));
    }
    let (m, bands, frames) = (shape[0], shape[1], shape[2]);
    let t = ops::transpose_hw(x)?;
    let t = ops::reshape(t, &[m, frames, bands])?;
    let w = ops::index_select(t, 1, &window_indices(frames, window))?;
    Ok((ops::reshape(w, &[m * frames, window, bands])?, m, bands, frames))
}

/// `[M*N, B*C]` rows back to `[M, B, N, C]`.
fn unwindow<'t>(y: Var<'t>, m: usize, bands: usize, frames: usize, channels: usize) -> Result<Var<'t>> {
    let y = ops::reshape(y, &[m, frames, bands, channels])?;
    Ok(ops::transpose_hw(y)?)
}

#[derive(Clone, Debug)]
pub struct Fcln {
    pub spec: BaselineSpec,
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl Fcln {
    pub fn new(spec: &BaselineSpec, init: &mut Init<'_>) -> Result<Self> {
        spec.validate()?;
        let mut k_in = spec.bands * spec.window;
        let mut hidden = Vec::with_capacity(spec.layers);
        for i in 0..spec.layers {
            hidden.push(Dense::new(init, &format!("fc{i}"), k_in, spec.hidden, he_bound(k_in))?);
            k_in = spec.hidden;
        }
        let output = Dense::new(init, "out", k_in, spec.outputs(), lecun_bound(k_in))?;
        Ok(Self {
            spec: spec.clone(),
            hidden,
            output,
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, input: Var<'t>) -> Result<Var<'t>> {
        let (w, m, bands, frames) = windows(input, self.spec.window)?;
        let mut h = ops::reshape(w, &[m * frames, self.spec.window * bands])?;
        for layer in &self.hidden {
            h = ops::elu(layer.forward(ctx, h)?);
        }
        let y = self.output.forward(ctx, h)?;
        unwindow(y, m, bands, frames, self.spec.output_mode.channels())
    }
}

/// One bidirectional LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub forward: RecurrentCell,
    pub backward: RecurrentCell,
}

impl BiLstm {
    /// `[S, T, K]` to `[S, T, 2H]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let f = ops::lstm_seq(x, &self.forward.lstm(ctx), None, None, false)?;
        let b = ops::lstm_seq(x, &self.backward.lstm(ctx), None, None, true)?;
        Ok(ops::concat(&[f, b])?)
    }
}

#[derive(Clone, Debug)]
pub struct Rnn {
    pub spec: BaselineSpec,
    pub layers: Vec<BiLstm>,
    pub output: Dense,
}

impl Rnn {
    pub fn new(spec: &BaselineSpec, init: &mut Init<'_>) -> Result<Self> {
        spec.validate()?;
        let mut k_in = spec.bands;
        let mut layers = Vec::with_capacity(spec.layers);
        for i in 0..spec.layers {
            layers.push(BiLstm {
                forward: RecurrentCell::new(init, &format!("lstm{i}.fwd"), k_in, spec.hidden, 4)?,
                backward: RecurrentCell::new(init, &format!("lstm{i}.bwd"), k_in, spec.hidden, 4)?,
            });
            k_in = 2 * spec.hidden;
        }
        let output = Dense::new(init, "out", k_in, spec.outputs(), lecun_bound(k_in))?;
        Ok(Self {
            spec: spec.clone(),
            layers,
            output,
        })
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, '_>, input: Var<'t>) -> Result<Var<'t>> {
        let (mut h, m, bands, frames) = windows(input, self.spec.window)?;
        for layer in &self.layers {
            h = layer.forward(ctx, h)?;
        }
        let centre = ops::narrow(h, 1, self.spec.window / 2, 1)?;
        let centre = ops::reshape(centre, &[m * frames, 2 * self.spec.hidden])?;
        let y = self.output.forward(ctx, centre)?;
        unwindow(y, m, bands, frames, self.spec.output_mode.channels())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_replicated_windows() {
        let idx = window_indices(4, 5);
        assert_eq!(&idx[..5], &[0, 0, 0, 1, 2]);
        assert_eq!(&idx[15..], &[1, 2, 3, 3, 3]);
        assert_eq!(window_indices(1, 3), vec![0, 0, 0]);
    }
}
