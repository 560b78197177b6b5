//! Function-preserving network morphisms (Net2WiderNet / Net2DeeperNet).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchDescriptor, DeepenSite, ExpansionAction, InsertKind};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Layer, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphConfig {
    /// Half-width of the multiplicative uniform noise applied to the
    /// incoming weights of replicated units. Zero preserves the function.
    pub noise_scale: f32,
    /// One widening takes a layer from `n` to `ceil(widen_factor · n)` units.
    pub widen_factor: f64,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self {
            noise_scale: 5e-3,
            widen_factor: 1.5,
        }
    }
}

impl MorphConfig {
    pub fn exact() -> Self {
        Self {
            noise_scale: 0.0,
            ..Self::default()
        }
    }

    pub fn widened(&self, width: usize) -> usize {
        ((width as f64 * self.widen_factor).ceil() as usize).max(width + 1)
    }
}

/// One applied transformation, kept for reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Morphism {
    Deepen { after: usize, kind: InsertKind },
    Widen { layer: usize, from: usize, to: usize },
}

impl fmt::Display for Morphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Morphism::Deepen { after, kind } => {
                let k = match kind {
                    InsertKind::Conv => "conv",
                    InsertKind::Dense => "dense",
                };
                write!(f, "deepen({k} after {after})")
            }
            Morphism::Widen { layer, from, to } => write!(f, "widen({layer}: {from}->{to})"),
        }
    }
}

fn width_of(layer: &Layer) -> Option<usize> {
    match layer {
        Layer::Dense(d) => Some(d.units),
        Layer::Conv2d(c) => Some(c.filters),
        _ => None,
    }
}

/// Net2WiderNet: widens the conv or hidden dense layer at `layer_idx` to
/// `new_width` units by replicating existing units, and divides the
/// consuming layer's weights by the replication counts.
pub fn net2wider(
    net: &Network,
    layer_idx: usize,
    new_width: usize,
    noise_scale: f32,
    seed: u64,
) -> Result<Network> {
    let n = net
        .layers()
        .get(layer_idx)
        .and_then(width_of)
        .ok_or(Error::Site(layer_idx))?;
    if new_width <= n {
        return Err(Error::Width {
            requested: new_width,
            current: n,
        });
    }
    let consumer = net.layers()[layer_idx + 1..]
        .iter()
        .position(Layer::has_params)
        .map(|p| layer_idx + 1 + p)
        .ok_or(Error::Site(layer_idx))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mapping: Vec<usize> = (0..new_width)
        .map(|j| if j < n { j } else { rng.gen_range(0..n) })
        .collect();
    let mut counts = vec![0usize; n];
    for &g in &mapping {
        counts[g] += 1;
    }
    let mut jitter = |w: f32, j: usize| {
        if j >= n && noise_scale > 0.0 {
            w * (1.0 + rng.gen_range(-noise_scale..=noise_scale))
        } else {
            w
        }
    };

    let mut out = net.clone();
    let layers = out.layers_mut();
    match &mut layers[layer_idx] {
        Layer::Dense(d) => {
            let mut weight = Vec::with_capacity(new_width * d.inputs);
            for (j, &g) in mapping.iter().enumerate() {
                for &w in &d.weight[g * d.inputs..(g + 1) * d.inputs] {
                    weight.push(jitter(w, j));
                }
            }
            d.bias = mapping.iter().map(|&g| d.bias[g]).collect();
            d.weight = weight;
            d.units = new_width;
        }
        Layer::Conv2d(c) => {
            let filter_len = c.in_channels * 9;
            let mut weight = Vec::with_capacity(new_width * filter_len);
            for (j, &g) in mapping.iter().enumerate() {
                for &w in &c.weight[g * filter_len..(g + 1) * filter_len] {
                    weight.push(jitter(w, j));
                }
            }
            c.bias = mapping.iter().map(|&g| c.bias[g]).collect();
            c.weight = weight;
            c.filters = new_width;
        }
        _ => unreachable!("checked by width_of"),
    }

    match &mut layers[consumer] {
        Layer::Conv2d(next) => {
            let old = next.clone();
            let mut grown = Conv2d::zeros(new_width, old.filters);
            grown.bias = old.bias.clone();
            for o in 0..old.filters {
                for (j, &g) in mapping.iter().enumerate() {
                    let scale = counts[g] as f32;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let at = grown.weight_index(o, j, ky, kx);
                            grown.weight[at] = old.weight[old.weight_index(o, g, ky, kx)] / scale;
                        }
                    }
                }
            }
            *next = grown;
        }
        Layer::Dense(next) | Layer::SoftmaxOutput(next) => {
            // Flattened NHWC features: index = position · channels + channel.
            if next.inputs % n != 0 {
                return Err(Error::Shape(format!(
                    "consumer fan-in {} is not a multiple of width {}",
                    next.inputs, n
                )));
            }
            let positions = next.inputs / n;
            let old = next.clone();
            let mut grown = Dense::zeros(positions * new_width, old.units);
            grown.bias = old.bias.clone();
            for u in 0..old.units {
                let src = &old.weight[u * old.inputs..(u + 1) * old.inputs];
                let dst = &mut grown.weight[u * grown.inputs..(u + 1) * grown.inputs];
                for p in 0..positions {
                    for (j, &g) in mapping.iter().enumerate() {
                        dst[p * new_width + j] = src[p * n + g] / counts[g] as f32;
                    }
                }
            }
            *next = grown;
        }
        _ => unreachable!("consumer has parameters"),
    }
    // Re-validate shapes end to end.
    Network::new(out.input_shape().to_vec(), out.layers().to_vec())
}

/// Net2DeeperNet: inserts an identity-initialised ReLU layer directly after
/// the conv or hidden dense layer named by `site`.
pub fn net2deeper(net: &Network, site: DeepenSite) -> Result<Network> {
    let layer = match (net.layers().get(site.after), site.kind) {
        (Some(Layer::Dense(d)), InsertKind::Dense) => {
            let mut id = Dense::zeros(d.units, d.units);
            for i in 0..d.units {
                id.weight[i * d.units + i] = 1.0;
            }
            Layer::Dense(id)
        }
        (Some(Layer::Conv2d(c)), InsertKind::Conv) => {
            let mut id = Conv2d::zeros(c.filters, c.filters);
            for o in 0..c.filters {
                let at = id.weight_index(o, o, 1, 1);
                id.weight[at] = 1.0;
            }
            Layer::Conv2d(id)
        }
        _ => return Err(Error::Site(site.after)),
    };
    let mut layers = net.layers().to_vec();
    layers.insert(site.after + 1, layer);
    Network::new(net.input_shape().to_vec(), layers)
}

#[derive(Clone, Debug)]
pub struct Morphed {
    pub network: Network,
    pub descriptor: ArchDescriptor,
    pub applied: Vec<Morphism>,
}

/// Applies `action.deeper` insertions followed by `action.wider`
/// widenings, each at a uniformly drawn eligible site.
pub fn apply_actions(
    net: &Network,
    action: ExpansionAction,
    cfg: &MorphConfig,
    seed: u64,
) -> Result<Morphed> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = net.clone();
    let mut descriptor = ArchDescriptor::of(&current)?;
    let mut applied = Vec::with_capacity(action.wider + action.deeper);
    for _ in 0..action.deeper {
        let sites = descriptor.deepen_sites();
        let site = sites[rng.gen_range(0..sites.len())];
        current = net2deeper(&current, site)?;
        descriptor = ArchDescriptor::of(&current)?;
        applied.push(Morphism::Deepen {
            after: site.after,
            kind: site.kind,
        });
    }
    for _ in 0..action.wider {
        let sites = descriptor.widen_sites();
        let layer = sites[rng.gen_range(0..sites.len())];
        let from = width_of(&current.layers()[layer]).expect("widen site");
        let to = cfg.widened(from);
        current = net2wider(&current, layer, to, cfg.noise_scale, rng.gen())?;
        descriptor = ArchDescriptor::of(&current)?;
        applied.push(Morphism::Widen { layer, from, to });
    }
    Ok(Morphed {
        network: current,
        descriptor,
        applied,
    })
}
