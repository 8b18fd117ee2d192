//! Declarative architecture descriptions and their text form.
//!
//! A U-net is a list of processing blocks; each block is a short list of
//! layer atoms written `C48` (3x3 conv, 48 maps), `C8k1` (1x1 conv),
//! `RT16_C48` / `RF16_C48` (recurrent-convolutional pair sweeping time or
//! frequency with 16 recurrent units in total), `MP` (2x2 max-pool) and
//! `TC64` (stride-2 transposed conv). Atoms within a block are joined by `+`.

use std::fmt;
use std::str::FromStr;

use crate::error::{CoreError, Result};

pub const CANONICAL_LEVELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Along frames.
    Time,
    /// Along mel bands.
    Freq,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::Time => Axis::Freq,
            Axis::Freq => Axis::Time,
        }
    }

    fn letter(self) -> char {
        match self {
            Axis::Time => 'T',
            Axis::Freq => 'F',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv { features: usize, size: usize },
    /// Recurrent pass over `axis` with `units` hidden units split evenly
    /// between the two directions, concatenated with its input and fused by
    /// a 3x3 conv to `features` maps.
    Rc { units: usize, axis: Axis, features: usize },
    MaxPool,
    TransposedConv { features: usize },
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Conv { features, size: 3 } => write!(f, "C{features}"),
            Layer::Conv { features, size } => write!(f, "C{features}k{size}"),
            Layer::Rc { units, axis, features } => write!(f, "R{}{units}_C{features}", axis.letter()),
            Layer::MaxPool => f.write_str("MP"),
            Layer::TransposedConv { features } => write!(f, "TC{features}"),
        }
    }
}

fn arch_err(detail: impl Into<String>) -> CoreError {
    CoreError::InvalidArch(detail.into())
}

fn parse_count(s: &str, atom: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(arch_err(format!("bad number in layer {atom:?}"))),
    }
}

impl FromStr for Layer {
    type Err = CoreError;

    fn from_str(atom: &str) -> Result<Self> {
        if atom == "MP" {
            return Ok(Layer::MaxPool);
        }
        if let Some(rest) = atom.strip_prefix("TC") {
            return Ok(Layer::TransposedConv {
                features: parse_count(rest, atom)?,
            });
        }
        if let Some(rest) = atom.strip_prefix('R') {
            let axis = match rest.chars().next() {
                Some('T') => Axis::Time,
                Some('F') => Axis::Freq,
                _ => return Err(arch_err(format!("recurrent atom {atom:?} needs axis T or F"))),
            };
            let (units, conv) = rest[1..]
                .split_once("_C")
                .ok_or_else(|| arch_err(format!("recurrent atom {atom:?} must look like RT16_C48")))?;
            return Ok(Layer::Rc {
                units: parse_count(units, atom)?,
                axis,
                features: parse_count(conv, atom)?,
            });
        }
        if let Some(rest) = atom.strip_prefix('C') {
            let (features, size) = match rest.split_once('k') {
                Some((f, k)) => (parse_count(f, atom)?, parse_count(k, atom)?),
                None => (parse_count(rest, atom)?, 3),
            };
            return Ok(Layer::Conv { features, size });
        }
        Err(arch_err(format!("unknown layer atom {atom:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub layers: Vec<Layer>,
    /// 1-based depth; encoder block `l` and decoder block `L+1-l` share it.
    pub level: usize,
    pub side: Side,
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atoms: Vec<String> = self.layers.iter().map(Layer::to_string).collect();
        f.write_str(&atoms.join("+"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMode {
    /// Two log-mel maps: clean speech and noise estimates.
    Mapping,
    /// One ratio mask on linear mel magnitudes.
    Irm,
}

impl OutputMode {
    pub fn channels(self) -> usize {
        match self {
            OutputMode::Mapping => 2,
            OutputMode::Irm => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutputMode::Mapping => "mapping",
            OutputMode::Irm => "irm",
        }
    }
}

impl FromStr for OutputMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mapping" => Ok(OutputMode::Mapping),
            "irm" => Ok(OutputMode::Irm),
            other => Err(arch_err(format!("unknown output mode {other:?} (mapping or irm)"))),
        }
    }
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Resolved feature and scale bookkeeping for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub layer: Layer,
    pub in_features: usize,
    pub out_features: usize,
    /// Downsampling factor of the layer's input relative to the network input.
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPlan {
    /// Producers of the block input: `None` is the network input, `Some(j)`
    /// the output of block `j` (0-based). Two entries mean concatenation.
    pub sources: Vec<Option<usize>>,
    pub in_features: usize,
    pub layers: Vec<LayerPlan>,
    pub out_features: usize,
    pub out_scale: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub blocks: Vec<BlockSpec>,
    pub output_mode: OutputMode,
}

impl ArchSpec {
    /// Builds a spec from per-block layer lists, assigning levels and sides.
    pub fn from_layers(name: impl Into<String>, blocks: Vec<Vec<Layer>>, output_mode: OutputMode) -> Result<Self> {
        let total = blocks.len();
        let blocks = blocks
            .into_iter()
            .enumerate()
            .map(|(i, layers)| {
                let l = i + 1;
                let (level, side) = if l <= total / 2 {
                    (l, Side::Encoder)
                } else {
                    (total + 1 - l, Side::Decoder)
                };
                BlockSpec { layers, level, side }
            })
            .collect();
        let spec = Self {
            name: name.into(),
            blocks,
            output_mode,
        };
        spec.plan()?;
        Ok(spec)
    }

    pub fn levels(&self) -> usize {
        self.blocks.len() / 2
    }

    pub fn pool_count(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| &b.layers)
            .filter(|l| matches!(l, Layer::MaxPool))
            .count()
    }

    pub fn with_output_mode(mut self, mode: OutputMode) -> Self {
        self.output_mode = mode;
        self
    }

    /// Input sources of block `i` (0-based) under the skip-connection rule.
    pub fn sources(&self, i: usize) -> Vec<Option<usize>> {
        let total = self.blocks.len();
        let l = i + 1;
        if l == 1 {
            vec![None]
        } else if l <= total / 2 + 1 {
            vec![Some(i - 1)]
        } else {
            vec![Some(i - 1), Some(total - l)]
        }
    }

    /// Checks structural rules and resolves feature counts and scales.
    pub fn plan(&self) -> Result<Vec<BlockPlan>> {
        let total = self.blocks.len();
        if total < 2 || !total.is_multiple_of(2) {
            return Err(arch_err(format!("{}: block count {total} must be even and at least 2", self.name)));
        }
        let mut plans: Vec<BlockPlan> = Vec::with_capacity(total);
        for (i, block) in self.blocks.iter().enumerate() {
            if block.layers.is_empty() {
                return Err(arch_err(format!("{}: block {} has no layers", self.name, i + 1)));
            }
            let sources = self.sources(i);
            let mut in_features = 0;
            let mut scale = None;
            for src in &sources {
                let (f, s) = match src {
                    None => (1, 1),
                    Some(j) => (plans[*j].out_features, plans[*j].out_scale),
                };
                in_features += f;
                match scale {
                    None => scale = Some(s),
                    Some(prev) if prev != s => {
                        return Err(arch_err(format!(
                            "{}: block {} concatenates maps at scales 1/{prev} and 1/{s}",
                            self.name,
                            i + 1
                        )))
                    }
                    _ => {}
                }
            }
            let mut scale = scale.unwrap_or(1);
            let mut features = in_features;
            let mut layers = Vec::with_capacity(block.layers.len());
            for &layer in &block.layers {
                let out = match layer {
                    Layer::Conv { features: f, size } => {
                        if size % 2 == 0 {
                            return Err(arch_err(format!("{}: conv size {size} must be odd", self.name)));
                        }
                        f
                    }
                    Layer::Rc { units, features: f, .. } => {
                        if units % 2 != 0 {
                            return Err(arch_err(format!(
                                "{}: recurrent units {units} must be even (split over two directions)",
                                self.name
                            )));
                        }
                        f
                    }
                    Layer::MaxPool => {
                        if block.side != Side::Encoder {
                            return Err(arch_err(format!("{}: max-pool in decoder block {}", self.name, i + 1)));
                        }
                        features
                    }
                    Layer::TransposedConv { features: f } => {
                        if block.side != Side::Decoder {
                            return Err(arch_err(format!(
                                "{}: transposed conv in encoder block {}",
                                self.name,
                                i + 1
                            )));
                        }
                        if scale < 2 {
                            return Err(arch_err(format!(
                                "{}: transposed conv in block {} would upsample past the input resolution",
                                self.name,
                                i + 1
                            )));
                        }
                        f
                    }
                };
                layers.push(LayerPlan {
                    layer,
                    in_features: features,
                    out_features: out,
                    scale,
                });
                match layer {
                    Layer::MaxPool => scale *= 2,
                    Layer::TransposedConv { .. } => scale /= 2,
                    _ => {}
                }
                features = out;
            }
            plans.push(BlockPlan {
                sources,
                in_features,
                layers,
                out_features: features,
                out_scale: scale,
            });
        }
        let last = plans.last().expect("at least two blocks");
        if last.out_scale != 1 {
            return Err(arch_err(format!(
                "{}: output is at scale 1/{}, expected full resolution",
                self.name, last.out_scale
            )));
        }
        Ok(plans)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("kind=unet\nname={}\noutput={}\n", self.name, self.output_mode);
        for b in &self.blocks {
            s.push_str(&format!("block={b}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut mode = OutputMode::Mapping;
        let mut blocks = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| arch_err(format!("expected key=value, got {line:?}")))?;
            match key {
                "kind" if value == "unet" => {}
                "kind" => return Err(arch_err(format!("not a U-net description (kind={value})"))),
                "name" => name = Some(value.to_string()),
                "output" => mode = value.parse()?,
                "block" => blocks.push(value.split('+').map(str::parse).collect::<Result<Vec<Layer>>>()?),
                other => return Err(arch_err(format!("unknown key {other:?}"))),
            }
        }
        let name = name.ok_or_else(|| arch_err("missing name"))?;
        Self::from_layers(name, blocks, mode)
    }
}

/// Names accepted by [`canonical_arch`], in presentation order.
pub const CANONICAL_NAMES: [&str; 6] = ["C48", "C64", "C48_C48", "C64_MP", "ALL_RC", "ODD_RC"];
/// Recurrent units per RC pair in the canonical specs.
pub const RC_UNITS: usize = 16;

/// Axis pattern for the recurrent blocks: alternates starting from `first`.
fn alternating(first: Axis, k: usize) -> Axis {
    if k.is_multiple_of(2) {
        first
    } else {
        first.other()
    }
}

/// One of the six canonical U-nets with `levels` levels. `width` replaces
/// the default feature count (48 or 64) when given.
pub fn canonical_arch(name: &str, levels: usize, width: Option<usize>, first_axis: Axis) -> Result<ArchSpec> {
    if levels == 0 {
        return Err(arch_err("at least one level is required"));
    }
    let total = 2 * levels;
    let w48 = width.unwrap_or(48);
    let w64 = width.unwrap_or(64);
    let conv = |f| Layer::Conv { features: f, size: 3 };
    let rc = |axis, f| Layer::Rc {
        units: RC_UNITS,
        axis,
        features: f,
    };
    let blocks: Vec<Vec<Layer>> = match name {
        "C48" => (0..total).map(|_| vec![conv(w48)]).collect(),
        "C64" => (0..total).map(|_| vec![conv(w64)]).collect(),
        "C48_C48" => (0..total).map(|_| vec![conv(w48), conv(w48)]).collect(),
        "C64_MP" => (1..=total)
            .map(|l| {
                if l < levels {
                    vec![conv(w64), Layer::MaxPool]
                } else if l > levels + 1 {
                    vec![Layer::TransposedConv { features: w64 }, conv(w64)]
                } else {
                    vec![conv(w64)]
                }
            })
            .collect(),
        "ALL_RC" => (0..total).map(|i| vec![rc(alternating(first_axis, i), w48)]).collect(),
        "ODD_RC" => (0..total)
            .map(|i| {
                if i % 2 == 0 {
                    vec![rc(alternating(first_axis, i / 2), w48)]
                } else {
                    vec![conv(w48)]
                }
            })
            .collect(),
        other => {
            return Err(arch_err(format!(
                "unknown architecture {other:?}; expected one of {}",
                CANONICAL_NAMES.join(", ")
            )))
        }
    };
    ArchSpec::from_layers(name, blocks, OutputMode::Mapping)
}

/// The six canonical U-nets at full size.
pub fn canonical_archs() -> Vec<ArchSpec> {
    CANONICAL_NAMES
        .iter()
        .map(|n| canonical_arch(n, CANONICAL_LEVELS, None, Axis::Freq).expect("canonical specs are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_round_trip() {
        for atom in ["C48", "C8k1", "RT16_C48", "RF4_C16", "MP", "TC64"] {
            assert_eq!(atom.parse::<Layer>().unwrap().to_string(), atom);
        }
        for bad in ["", "X3", "C", "C0", "RX16_C48", "R16_C48", "RT16", "TC"] {
            assert!(bad.parse::<Layer>().is_err(), "{bad}");
        }
    }

    #[test]
    fn canonical_layouts() {
        let archs = canonical_archs();
        assert_eq!(archs.len(), 6);
        for a in &archs {
            assert_eq!(a.blocks.len(), 10, "{}", a.name);
            assert_eq!(ArchSpec::parse(&a.to_text()).unwrap(), *a);
        }
        let all_rc = &archs[4];
        let axes: Vec<Axis> = all_rc
            .blocks
            .iter()
            .map(|b| match b.layers[0] {
                Layer::Rc { axis, .. } => axis,
                _ => panic!("expected RC"),
            })
            .collect();
        for pair in axes.windows(2) {
            assert_ne!(pair[0], pair[1]);
        }
        assert_eq!(axes[0], Axis::Freq);
        let odd = &archs[5];
        assert_eq!(odd.blocks[0].to_string(), "RF16_C48");
        assert_eq!(odd.blocks[1].to_string(), "C48");
        assert_eq!(odd.blocks[2].to_string(), "RT16_C48");
        assert_eq!(odd.blocks[8].to_string(), "RF16_C48");
        let mp = &archs[3];
        assert_eq!(mp.blocks[0].to_string(), "C64+MP");
        assert_eq!(mp.blocks[4].to_string(), "C64");
        assert_eq!(mp.blocks[5].to_string(), "C64");
        assert_eq!(mp.blocks[6].to_string(), "TC64+C64");
        assert_eq!(mp.pool_count(), 4);
    }

    #[test]
    fn skip_wiring() {
        let a = &canonical_archs()[0];
        assert_eq!(a.sources(0), vec![None]);
        assert_eq!(a.sources(5), vec![Some(4)]);
        assert_eq!(a.sources(6), vec![Some(5), Some(3)]);
        assert_eq!(a.sources(9), vec![Some(8), Some(0)]);
        let plan = a.plan().unwrap();
        assert_eq!(plan[0].in_features, 1);
        assert_eq!(plan[6].in_features, 96);
    }

    #[test]
    fn pooled_scales_line_up() {
        let plan = canonical_archs()[3].plan().unwrap();
        let scales: Vec<usize> = plan.iter().map(|p| p.out_scale).collect();
        assert_eq!(scales, vec![2, 4, 8, 16, 16, 16, 8, 4, 2, 1]);
    }

    #[test]
    fn structural_errors() {
        let conv = Layer::Conv { features: 4, size: 3 };
        assert!(ArchSpec::from_layers("odd", vec![vec![conv]; 3], OutputMode::Mapping).is_err());
        assert!(ArchSpec::from_layers("mp-dec", vec![vec![conv], vec![conv, Layer::MaxPool]], OutputMode::Mapping).is_err());
        assert!(ArchSpec::from_layers("unbalanced", vec![vec![conv, Layer::MaxPool], vec![conv]], OutputMode::Mapping).is_err());
        let odd_units = Layer::Rc { units: 3, axis: Axis::Time, features: 4 };
        assert!(ArchSpec::from_layers("units", vec![vec![odd_units], vec![conv]], OutputMode::Mapping).is_err());
        assert!(canonical_arch("NOPE", 5, None, Axis::Freq).is_err());
    }

    #[test]
    fn reduced_levels() {
        let a = canonical_arch("ALL_RC", 2, Some(16), Axis::Freq).unwrap();
        assert_eq!(a.blocks.len(), 4);
        assert_eq!(a.blocks[3].to_string(), "RT16_C16");
        let mp = canonical_arch("C64_MP", 2, Some(8), Axis::Freq).unwrap();
        assert_eq!(mp.pool_count(), 1);
        assert_eq!(mp.plan().unwrap().last().unwrap().out_scale, 1);
    }
}
