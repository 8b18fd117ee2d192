//! Networks mapping a noisy log-mel spectrogram to clean and noise
//! estimates (or a ratio mask): U-nets built from conv, recurrent-conv,
//! pooling and transposed-conv layers, plus two sliding-window baselines.

pub mod analysis;
pub mod baselines;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod spec;
pub mod unet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcunet_tensor::ops::DEFAULT_MOMENTUM;
use rcunet_tensor::{ParamStore, Tape, Tensor, Var};

pub use baselines::{BaselineKind, BaselineSpec, Fcln, Rnn};
pub use layers::{Mode, StatUpdate};
pub use spec::{canonical_arch, canonical_archs, ArchSpec, Axis, Layer, OutputMode, CANONICAL_NAMES};
pub use unet::UNet;

use crate::error::{CoreError, Result};
use layers::{Ctx, Init};

/// Any buildable network description.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    UNet(ArchSpec),
    Baseline(BaselineSpec),
}

/// Every architecture name accepted by [`ModelSpec::named`].
pub fn known_names() -> Vec<&'static str> {
    let mut names = CANONICAL_NAMES.to_vec();
    names.extend(["FCLN", "RNN"]);
    names
}

impl ModelSpec {
    /// Looks up a canonical U-net or baseline by name. `levels` and `width`
    /// shrink U-nets; `width` also sets the baselines' hidden size.
    pub fn named(name: &str, levels: usize, width: Option<usize>) -> Result<Self> {
        match name {
            "FCLN" => Ok(ModelSpec::Baseline(BaselineSpec {
                hidden: width.unwrap_or(baselines::DEFAULT_HIDDEN),
                ..BaselineSpec::fcln()
            })),
            "RNN" => Ok(ModelSpec::Baseline(BaselineSpec {
                hidden: width.unwrap_or(baselines::DEFAULT_HIDDEN),
                ..BaselineSpec::rnn()
            })),
            _ if CANONICAL_NAMES.contains(&name) => {
                Ok(ModelSpec::UNet(canonical_arch(name, levels, width, Axis::Freq)?))
            }
            _ => Err(CoreError::InvalidArch(format!(
                "unknown architecture {name:?}; expected one of {}",
                known_names().join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ModelSpec::UNet(a) => &a.name,
            ModelSpec::Baseline(b) => &b.name,
        }
    }

    pub fn output_mode(&self) -> OutputMode {
        match self {
            ModelSpec::UNet(a) => a.output_mode,
            ModelSpec::Baseline(b) => b.output_mode,
        }
    }

    pub fn with_output_mode(self, mode: OutputMode) -> Self {
        match self {
            ModelSpec::UNet(a) => ModelSpec::UNet(a.with_output_mode(mode)),
            ModelSpec::Baseline(b) => ModelSpec::Baseline(BaselineSpec { output_mode: mode, ..b }),
        }
    }

    /// True when the network contains recurrent layers.
    pub fn is_recurrent(&self) -> bool {
        match self {
            ModelSpec::UNet(a) => a
                .blocks
                .iter()
                .flat_map(|b| &b.layers)
                .any(|l| matches!(l, Layer::Rc { .. })),
            ModelSpec::Baseline(b) => b.kind == BaselineKind::Rnn,
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            ModelSpec::UNet(a) => a.to_text(),
            ModelSpec::Baseline(b) => b.to_string(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kind = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("kind="))
            .ok_or_else(|| CoreError::InvalidArch("missing kind".into()))?;
        match kind {
            "unet" => Ok(ModelSpec::UNet(ArchSpec::parse(text)?)),
            "fcln" | "rnn" => {
                let mut spec = if kind == "fcln" {
                    BaselineSpec::fcln()
                } else {
                    BaselineSpec::rnn()
                };
                for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| CoreError::InvalidArch(format!("expected key=value, got {line:?}")))?;
                    let number = || {
                        value
                            .parse::<usize>()
                            .map_err(|_| CoreError::InvalidArch(format!("bad value for {key}: {value:?}")))
                    };
                    match key {
                        "kind" => {}
                        "name" => spec.name = value.to_string(),
                        "bands" => spec.bands = number()?,
                        "window" => spec.window = number()?,
                        "hidden" => spec.hidden = number()?,
                        "layers" => spec.layers = number()?,
                        "output" => spec.output_mode = value.parse()?,
                        other => return Err(CoreError::InvalidArch(format!("unknown key {other:?}"))),
                    }
                }
                spec.validate()?;
                Ok(ModelSpec::Baseline(spec))
            }
            other => Err(CoreError::InvalidArch(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Body {
    UNet(UNet),
    Fcln(Fcln),
    Rnn(Rnn),
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub body: Body,
}

/// Output of one forward pass plus the batch statistics gathered in training mode.
pub struct Forward<'t> {
    /// `[M, B, N, C]` with `C` = 2 (speech, noise) for mapping or 1 for a mask.
    pub output: Var<'t>,
    pub updates: Vec<StatUpdate>,
}

impl Network {
    /// Builds the network with seeded initialization.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let body = match spec {
            ModelSpec::UNet(a) => Body::UNet(UNet::new(a, &mut init)?),
            ModelSpec::Baseline(b) => match b.kind {
                BaselineKind::Fcln => Body::Fcln(Fcln::new(b, &mut init)?),
                BaselineKind::Rnn => Body::Rnn(Rnn::new(b, &mut init)?),
            },
        };
        Ok(Self {
            spec: spec.clone(),
            params,
            body,
        })
    }

    pub fn output_mode(&self) -> OutputMode {
        self.spec.output_mode()
    }

    /// Runs the network on `[M, bands, frames, 1]`.
    pub fn forward<'t>(&self, tape: &'t Tape, input: Var<'t>, mode: Mode) -> Result<Forward<'t>> {
        let mut ctx = Ctx::new(tape, &self.params, mode);
        let output = match &self.body {
            Body::UNet(u) => u.forward(&mut ctx, input)?,
            Body::Fcln(f) => f.forward(&mut ctx, input)?,
            Body::Rnn(r) => r.forward(&mut ctx, input)?,
        };
        Ok(Forward {
            output,
            updates: ctx.updates,
        })
    }

    /// Folds training-mode batch statistics into the running buffers.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        layers::apply_stat_updates(&mut self.params, updates, DEFAULT_MOMENTUM);
    }

    /// Evaluation-mode inference on one `[bands, frames]` log-mel map;
    /// returns `[bands, frames, C]`.
    pub fn predict(&self, logmel: &Tensor, fast_math: bool) -> Result<Tensor> {
        let shape = logmel.shape().to_vec();
        if shape.len() != 2 {
            return crate::error::invalid("predict", format!("expected [bands, frames], got {shape:?}"));
        }
        let tape = Tape::new();
        tape.set_fast_math(fast_math);
        let input = tape.constant(logmel.clone().reshape([1, shape[0], shape[1], 1])?);
        let out = self.forward(&tape, input, Mode::Eval)?.output.value();
        let c = out.shape()[3];
        Ok((*out).clone().reshape([shape[0], shape[1], c])?)
    }
}

/// Ideal ratio mask `sqrt(S^2 / (S^2 + N^2))` on linear magnitudes; 0/0 gives 0.
pub fn irm(speech: &Tensor, noise: &Tensor) -> Result<Tensor> {
    if speech.shape() != noise.shape() {
        return crate::error::invalid(
            "irm",
            format!("speech {:?} and noise {:?} differ in shape", speech.shape(), noise.shape()),
        );
    }
    let data = speech
        .data()
        .iter()
        .zip(noise.data())
        .map(|(s, n)| {
            let (s2, n2) = (s * s, n * n);
            if s2 + n2 == 0.0 {
                0.0
            } else {
                (s2 / (s2 + n2)).sqrt()
            }
        })
        .collect();
    Ok(Tensor::new(speech.shape().to_vec(), data)?)
}
