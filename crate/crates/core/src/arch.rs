//! Symbolic architecture descriptors.
//!
//! A descriptor lists layer kinds and sizes without parameters. Its text
//! form has one layer per line:
//!
//! ```text
//! input 8x8x1
//! conv 8
//! pool
//! dropout 0.25
//! flatten
//! dense 32
//! softmax 2
//! ```
//!
//! Blank lines and `#` comments are ignored.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Layer, Network};

/// Standard deviation of freshly added output-unit weights.
pub const OUTPUT_INIT_STD: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { filters: usize },
    Pool,
    Dropout { rate: f32 },
    Flatten,
    Dense { units: usize },
    Softmax { classes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    /// Input height, width, channels.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Number of widen and deepen transformations to apply to a candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpansionAction {
    pub wider: usize,
    pub deeper: usize,
}

impl ExpansionAction {
    pub fn new(wider: usize, deeper: usize) -> Self {
        Self { wider, deeper }
    }

    pub fn is_noop(&self) -> bool {
        self.wider == 0 && self.deeper == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertKind {
    Conv,
    Dense,
}

/// Where an identity layer may be inserted: directly after layer `after`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeepenSite {
    pub after: usize,
    pub kind: InsertKind,
}

impl ArchDescriptor {
    pub fn new(input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let desc = Self { input, layers };
        desc.validate()?;
        Ok(desc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Descriptor(m));
        if self.input.contains(&0) {
            return bad(format!("input dimensions must be positive: {:?}", self.input));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax { .. }) => {}
            _ => return bad("last layer must be softmax".into()),
        }
        let softmaxes = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Softmax { .. }))
            .count();
        if softmaxes != 1 {
            return bad(format!("expected exactly one softmax layer, found {softmaxes}"));
        }
        let flattens: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Flatten))
            .map(|(i, _)| i)
            .collect();
        if flattens.len() != 1 {
            return bad(format!("expected exactly one flatten layer, found {}", flattens.len()));
        }
        let flat = flattens[0];
        let (mut h, mut w) = (self.input[0], self.input[1]);
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { filters } => {
                    if i > flat {
                        return bad(format!("conv at line {} follows flatten", i + 1));
                    }
                    if filters == 0 {
                        return bad("conv needs at least one filter".into());
                    }
                }
                LayerSpec::Pool => {
                    if i > flat {
                        return bad(format!("pool at line {} follows flatten", i + 1));
                    }
                    if h < 2 || w < 2 {
                        return bad(format!("pool at line {} on a {}x{} map", i + 1, h, w));
                    }
                    h /= 2;
                    w /= 2;
                }
                LayerSpec::Dense { units } => {
                    if i < flat {
                        return bad(format!("dense at line {} precedes flatten", i + 1));
                    }
                    if units == 0 {
                        return bad("dense needs at least one unit".into());
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return bad(format!("dropout rate {rate} outside [0, 1)"));
                    }
                }
                LayerSpec::Softmax { classes } => {
                    if classes == 0 {
                        return bad("softmax needs at least one class".into());
                    }
                }
                LayerSpec::Flatten => {}
            }
        }
        if self.conv_count() == 0 {
            return bad("at least one conv layer is required".into());
        }
        if self.dense_count() == 0 {
            return bad("at least one hidden dense layer is required".into());
        }
        Ok(())
    }

    /// Number of convolution layers (A_conv in the controller state).
    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    /// Number of hidden dense layers (A_fc in the controller state).
    pub fn dense_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .count()
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) => *classes,
            _ => 0,
        }
    }

    pub fn with_classes(&self, classes: usize) -> Self {
        let mut d = self.clone();
        if let Some(LayerSpec::Softmax { classes: c }) = d.layers.last_mut() {
            *c = classes;
        }
        d
    }

    /// Parameter count of the network this descriptor instantiates.
    pub fn param_count(&self) -> usize {
        let (mut h, mut w, mut c) = (self.input[0], self.input[1], self.input[2]);
        let mut features = 0;
        let mut total = 0;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv { filters } => {
                    total += c * filters * 9 + filters;
                    c = filters;
                }
                LayerSpec::Pool => {
                    h /= 2;
                    w /= 2;
                }
                LayerSpec::Flatten => features = h * w * c,
                LayerSpec::Dense { units } | LayerSpec::Softmax { classes: units } => {
                    total += features * units + units;
                    features = units;
                }
                LayerSpec::Dropout { .. } => {}
            }
        }
        total
    }

    /// Layer indices eligible for Net2WiderNet: every conv and hidden dense.
    pub fn widen_sites(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Dense { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Insertion points for Net2DeeperNet: after any conv (conv insertion)
    /// or after any hidden dense (dense insertion).
    pub fn deepen_sites(&self) -> Vec<DeepenSite> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                LayerSpec::Conv { .. } => Some(DeepenSite {
                    after: i,
                    kind: InsertKind::Conv,
                }),
                LayerSpec::Dense { .. } => Some(DeepenSite {
                    after: i,
                    kind: InsertKind::Dense,
                }),
                _ => None,
            })
            .collect()
    }

    /// Builds a freshly initialised network: He-uniform for ReLU layers,
    /// Glorot-uniform for the output layer, zero biases.
    pub fn instantiate(&self, seed: u64) -> Result<Network> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut h, mut w, mut c) = (self.input[0], self.input[1], self.input[2]);
        let mut features = 0;
        let mut layers = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            let layer = match *spec {
                LayerSpec::Conv { filters } => {
                    let l = Layer::Conv2d(Conv2d::he(&mut rng, c, filters));
                    c = filters;
                    l
                }
                LayerSpec::Pool => {
                    h /= 2;
                    w /= 2;
                    Layer::MaxPool2d
                }
                LayerSpec::Dropout { rate } => Layer::Dropout(rate),
                LayerSpec::Flatten => {
                    features = h * w * c;
                    Layer::Flatten
                }
                LayerSpec::Dense { units } => {
                    let l = Layer::Dense(Dense::he(&mut rng, features, units));
                    features = units;
                    l
                }
                LayerSpec::Softmax { classes } => {
                    Layer::SoftmaxOutput(Dense::glorot(&mut rng, features, classes))
                }
            };
            layers.push(layer);
        }
        Network::new(self.input.to_vec(), layers)
            .map_err(|e| Error::Descriptor(e.to_string()))
    }

    /// Reads the descriptor of an image network.
    pub fn of(net: &Network) -> Result<Self> {
        let input: [usize; 3] = net
            .input_shape()
            .try_into()
            .map_err(|_| Error::Descriptor("network input is not h×w×c".into()))?;
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => LayerSpec::Conv { filters: c.filters },
                Layer::MaxPool2d => LayerSpec::Pool,
                Layer::Dropout(rate) => LayerSpec::Dropout { rate: *rate },
                Layer::Flatten => LayerSpec::Flatten,
                Layer::Dense(d) => LayerSpec::Dense { units: d.units },
                Layer::SoftmaxOutput(d) => LayerSpec::Softmax { classes: d.units },
            })
            .collect();
        Self::new(input, layers)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { filters } => write!(f, "conv {filters}"),
            LayerSpec::Pool => write!(f, "pool"),
            LayerSpec::Dropout { rate } => write!(f, "dropout {rate}"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Dense { units } => write!(f, "dense {units}"),
            LayerSpec::Softmax { classes } => write!(f, "softmax {classes}"),
        }
    }
}

impl fmt::Display for ArchDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input {}x{}x{}", self.input[0], self.input[1], self.input[2])?;
        for l in &self.layers {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

impl ArchDescriptor {
    /// Compact single-line form, e.g. `conv 8 | pool | flatten | dense 32 | softmax 2`.
    pub fn summary(&self) -> String {
        self.layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

impl FromStr for ArchDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        for (no, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Descriptor(format!("line {}: {m}: {line:?}", no + 1));
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap().to_ascii_lowercase();
            let arg = parts.next();
            if parts.next().is_some() {
                return Err(err("too many fields"));
            }
            let int = |a: Option<&str>| -> Result<usize> {
                a.ok_or_else(|| err("missing size"))?
                    .parse()
                    .map_err(|_| err("bad size"))
            };
            let spec = match kind.as_str() {
                "input" => {
                    let dims: Vec<usize> = arg
                        .ok_or_else(|| err("missing dimensions"))?
                        .split('x')
                        .map(|d| d.parse().map_err(|_| err("bad dimension")))
                        .collect::<Result<_>>()?;
                    if input.is_some() || !layers.is_empty() {
                        return Err(err("input must be the first line"));
                    }
                    input = Some(
                        <[usize; 3]>::try_from(dims)
                            .map_err(|_| err("input must be HxWxC"))?,
                    );
                    continue;
                }
                "conv" => LayerSpec::Conv { filters: int(arg)? },
                "pool" => LayerSpec::Pool,
                "flatten" => LayerSpec::Flatten,
                "dense" => LayerSpec::Dense { units: int(arg)? },
                "softmax" => LayerSpec::Softmax { classes: int(arg)? },
                "dropout" => LayerSpec::Dropout {
                    rate: arg
                        .ok_or_else(|| err("missing rate"))?
                        .parse()
                        .map_err(|_| err("bad rate"))?,
                },
                _ => return Err(err("unknown layer kind")),
            };
            if matches!(spec, LayerSpec::Pool | LayerSpec::Flatten) && arg.is_some() {
                return Err(err("unexpected argument"));
            }
            layers.push(spec);
        }
        let input = input.ok_or_else(|| Error::Descriptor("missing input line".into()))?;
        Self::new(input, layers)
    }
}

/// Grows the output layer to `new_total_classes` units. Existing rows are
/// copied bit-for-bit; new weights are drawn from N(0, 0.01²) and new
/// biases are zero, so logits of old classes are unchanged.
pub fn expand_output(net: &Network, new_total_classes: usize, seed: u64) -> Result<Network> {
    let current = net.class_count();
    if new_total_classes <= current {
        return Err(Error::NoOp {
            requested: new_total_classes,
            current,
        });
    }
    let mut out = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, OUTPUT_INIT_STD).expect("valid std");
    if let Some(Layer::SoftmaxOutput(d)) = out.layers_mut().last_mut() {
        let extra = new_total_classes - current;
        d.weight
            .extend((0..extra * d.inputs).map(|_| normal.sample(&mut rng)));
        d.bias.extend(std::iter::repeat_n(0.0, extra));
        d.units = new_total_classes;
    }
    Ok(out)
}
