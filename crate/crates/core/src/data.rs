//! Labelled image datasets: CIFAR-100 binary parsing, per-class splits,
//! a synthetic Gaussian-cluster generator and label remapping.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Samples, Tensor};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
/// coarse label, fine label, 3072 pixel bytes.
pub const CIFAR_RECORD: usize = 2 + CIFAR_PIXELS;
pub const CIFAR_CLASSES: usize = 100;
pub const CIFAR_TRAIN_RECORDS: usize = 50_000;
pub const CIFAR_TEST_RECORDS: usize = 10_000;
/// Trailing train-file images per class moved to the validation split.
pub const CIFAR_VAL_PER_CLASS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images (N × H × W × C, values in [0, 1]) with labels and split tags.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    /// CIFAR coarse labels, kept only so records can be re-serialised.
    pub coarse: Option<Vec<u8>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let w = self.image_len();
        &self.images[i * w..(i + 1) * w]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Number of classes, i.e. one past the largest label.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Example indices of one split grouped by class, in dataset order.
    pub fn by_class(&self, split: Split) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (&l, &s)) in self.labels.iter().zip(&self.splits).enumerate() {
            if s == split {
                out.entry(l).or_default().push(i);
            }
        }
        out
    }

    /// Indices of `split` whose label is in `classes`.
    pub fn select(&self, split: Split, classes: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split && classes(self.labels[i]))
            .collect()
    }

    /// Examples whose label satisfies `keep`, labels unchanged.
    pub fn filter_classes(&self, keep: impl Fn(usize) -> bool) -> LabeledDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        let mut images = Vec::with_capacity(idx.len() * self.image_len());
        for &i in &idx {
            images.extend_from_slice(self.image(i));
        }
        LabeledDataset {
            height: self.height,
            width: self.width,
            channels: self.channels,
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            splits: idx.iter().map(|&i| self.splits[i]).collect(),
            coarse: self
                .coarse
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Materialises the given examples as a training/evaluation batch.
    pub fn samples(&self, indices: &[usize]) -> Samples {
        let w = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let inputs = Tensor::new(
            vec![indices.len(), self.height, self.width, self.channels],
            data,
        )
        .expect("consistent image size");
        Samples::new(inputs, indices.iter().map(|&i| self.labels[i]).collect())
            .expect("one label per image")
    }
}

fn parse_records(
    bytes: &[u8],
    expected: usize,
    what: &str,
) -> Result<(Vec<u8>, Vec<usize>, Vec<f32>)> {
    if bytes.len() != expected * CIFAR_RECORD {
        return Err(Error::Format(format!(
            "{what}: expected {} bytes ({expected} records of {CIFAR_RECORD}), got {}",
            expected * CIFAR_RECORD,
            bytes.len()
        )));
    }
    let mut coarse = Vec::with_capacity(expected);
    let mut fine = Vec::with_capacity(expected);
    let mut images = Vec::with_capacity(expected * CIFAR_PIXELS);
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[1] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!(
                "{what}: record {r} has fine label {label}"
            )));
        }
        coarse.push(rec[0]);
        fine.push(label);
        let px = &rec[2..];
        // Channel planes → interleaved HWC.
        for p in 0..plane {
            for c in 0..CIFAR_CHANNELS {
                images.push(f32::from(px[c * plane + p]) / 255.0);
            }
        }
    }
    Ok((coarse, fine, images))
}

/// Parses the CIFAR-100 binary train/test pair from memory. Per class, the
/// last 50 train-file images become validation, the rest training, and
/// every test-file image is test.
pub fn parse_cifar100(train: &[u8], test: &[u8]) -> Result<LabeledDataset> {
    let (mut coarse, mut labels, mut images) =
        parse_records(train, CIFAR_TRAIN_RECORDS, "train file")?;
    let (tc, tl, ti) = parse_records(test, CIFAR_TEST_RECORDS, "test file")?;

    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        per_class.entry(l).or_default().push(i);
    }
    let mut splits = vec![Split::Train; labels.len()];
    for (class, idx) in &per_class {
        if idx.len() <= CIFAR_VAL_PER_CLASS {
            return Err(Error::Format(format!(
                "class {class} has only {} training records",
                idx.len()
            )));
        }
        for &i in &idx[idx.len() - CIFAR_VAL_PER_CLASS..] {
            splits[i] = Split::Val;
        }
    }
    coarse.extend(tc);
    labels.extend(tl);
    images.extend(ti);
    splits.extend(std::iter::repeat_n(Split::Test, CIFAR_TEST_RECORDS));
    Ok(LabeledDataset {
        height: CIFAR_SIDE,
        width: CIFAR_SIDE,
        channels: CIFAR_CHANNELS,
        images,
        labels,
        splits,
        coarse: Some(coarse),
    })
}

pub fn load_cifar100(train_path: &Path, test_path: &Path) -> Result<LabeledDataset> {
    let train = std::fs::read(train_path).map_err(|e| Error::io(train_path, e))?;
    let test = std::fs::read(test_path).map_err(|e| Error::io(test_path, e))?;
    parse_cifar100(&train, &test)
}

/// Serialises a 32×32×3 dataset back into CIFAR-100 records: train and
/// validation examples into the first buffer, test examples into the second,
/// each in dataset order.
pub fn to_cifar_bytes(ds: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if ds.input_shape() != [CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS] {
        return Err(Error::Format(format!(
            "CIFAR records need 32x32x3 images, dataset is {:?}",
            ds.input_shape()
        )));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..ds.len() {
        if ds.labels[i] > u8::MAX as usize {
            return Err(Error::Format(format!("label {} does not fit a byte", ds.labels[i])));
        }
        let out = if ds.splits[i] == Split::Test {
            &mut test
        } else {
            &mut train
        };
        out.push(ds.coarse.as_ref().map_or(0, |c| c[i]));
        out.push(ds.labels[i] as u8);
        let img = ds.image(i);
        for c in 0..CIFAR_CHANNELS {
            for p in 0..plane {
                out.push((img[p * CIFAR_CHANNELS + c] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    /// Distance of each class mean from the origin, in noise standard
    /// deviations.
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 120,
            height: 8,
            width: 8,
            separation: 3.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.per_class < 12 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(
                "synthetic data needs per_class ≥ 12 and a non-empty image".into(),
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("synthetic separation must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Latent units per pixel intensity unit; latent 0 renders as mid-grey.
const SYNTHETIC_PIXEL_SCALE: f64 = 0.125;

/// Per-class split sizes in the 9 : 1 : 2 ratio (train, val, test).
pub fn synthetic_split_sizes(per_class: usize) -> (usize, usize, usize) {
    let val = per_class / 12;
    let test = per_class * 2 / 12;
    (per_class - val - test, val, test)
}

/// Gaussian clusters rendered as single-channel images. Class means are
/// mutually orthogonal (a scaled simplex) when `classes ≤ pixels`, random
/// directions otherwise; noise is unit-variance per pixel in latent units.
pub fn synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let dims = spec.height * spec.width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
        if means.len() < dims {
            for m in &means {
                let dot: f64 = v.iter().zip(m).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(m).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        means.push(v);
    }
    let (n_train, n_val, _) = synthetic_split_sizes(spec.per_class);
    let total = spec.classes * spec.per_class;
    let mut images = Vec::with_capacity(total * dims);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    for (class, mean) in means.iter().enumerate() {
        for k in 0..spec.per_class {
            for m in mean {
                let z: f64 = rng.sample(StandardNormal);
                let latent = spec.separation * m + z;
                images.push((0.5 + SYNTHETIC_PIXEL_SCALE * latent).clamp(0.0, 1.0) as f32);
            }
            labels.push(class);
            splits.push(if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok(LabeledDataset {
        height: spec.height,
        width: spec.width,
        channels: 1,
        images,
        labels,
        splits,
        coarse: None,
    })
}

/// Bijection between original and arrival-order labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    /// `to_new[original] = arrival index`.
    pub to_new: Vec<usize>,
    /// `to_original[arrival index] = original`.
    pub to_original: Vec<usize>,
}

impl LabelMap {
    pub fn from_order(arrival_order: &[usize]) -> Result<Self> {
        let n = arrival_order.len();
        let mut to_new = vec![usize::MAX; n];
        for (i, &c) in arrival_order.iter().enumerate() {
            if c >= n || to_new[c] != usize::MAX {
                return Err(Error::Order(format!("{arrival_order:?}")));
            }
            to_new[c] = i;
        }
        Ok(Self {
            to_new,
            to_original: arrival_order.to_vec(),
        })
    }
}

/// Renumbers labels so the class arriving `i`-th gets label `i`.
pub fn remap_labels(ds: &LabeledDataset, arrival_order: &[usize]) -> Result<(LabeledDataset, LabelMap)> {
    let classes = ds.class_count();
    if arrival_order.len() != classes {
        return Err(Error::Order(format!(
            "{} entries for {classes} classes",
            arrival_order.len()
        )));
    }
    let map = LabelMap::from_order(arrival_order)?;
    let mut out = ds.clone();
    out.labels.iter_mut().for_each(|l| *l = map.to_new[*l]);
    Ok((out, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LabeledDataset {
        synthetic_dataset(
            &SyntheticSpec {
                classes: 4,
                per_class: 120,
                ..Default::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn synthetic_split_ratio() {
        let ds = small();
        assert_eq!(synthetic_split_sizes(120), (90, 10, 20));
        for split in [Split::Train, Split::Val, Split::Test] {
            let by = ds.by_class(split);
            assert_eq!(by.len(), 4);
            let want = match split {
                Split::Train => 90,
                Split::Val => 10,
                Split::Test => 20,
            };
            assert!(by.values().all(|v| v.len() == want));
        }
        assert!(ds.images.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SyntheticSpec::default();
        assert_eq!(synthetic_dataset(&spec, 1).unwrap(), synthetic_dataset(&spec, 1).unwrap());
        assert_ne!(synthetic_dataset(&spec, 1).unwrap(), synthetic_dataset(&spec, 2).unwrap());
    }

    #[test]
    fn synthetic_rejects_single_class() {
        let spec = SyntheticSpec {
            classes: 1,
            ..Default::default()
        };
        assert!(synthetic_dataset(&spec, 0).is_err());
    }

    #[test]
    fn remap_identity_reverse_and_inverse() {
        let ds = small();
        let (same, _) = remap_labels(&ds, &[0, 1, 2, 3]).unwrap();
        assert_eq!(same, ds);
        let (rev, map) = remap_labels(&ds, &[3, 2, 1, 0]).unwrap();
        let i = ds.labels.iter().position(|&l| l == 3).unwrap();
        assert_eq!(rev.labels[i], 0);
        let (back, _) = remap_labels(&rev, &map.to_new).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn remap_rejects_non_permutation() {
        let ds = small();
        assert!(matches!(remap_labels(&ds, &[0, 1, 1, 3]), Err(Error::Order(_))));
        assert!(matches!(remap_labels(&ds, &[0, 1, 2]), Err(Error::Order(_))));
        assert!(matches!(remap_labels(&ds, &[0, 1, 2, 4]), Err(Error::Order(_))));
    }

    #[test]
    fn cifar_rejects_bad_sizes_and_labels() {
        let short = vec![0u8; CIFAR_RECORD * 3];
        assert!(matches!(parse_cifar100(&short, &short), Err(Error::Format(_))));
        let mut train = vec![0u8; CIFAR_RECORD * CIFAR_TRAIN_RECORDS];
        let test = vec![0u8; CIFAR_RECORD * CIFAR_TEST_RECORDS];
        train[1] = 100;
        assert!(matches!(parse_cifar100(&train, &test), Err(Error::Format(_))));
    }

    #[test]
    fn pixel_scaling_extremes() {
        let mut train = vec![0u8; CIFAR_RECORD * CIFAR_TRAIN_RECORDS];
        for (r, rec) in train.chunks_exact_mut(CIFAR_RECORD).enumerate() {
            rec[1] = (r % 100) as u8;
        }
        train[2] = 0xFF;
        let test = vec![0u8; CIFAR_RECORD * CIFAR_TEST_RECORDS];
        let ds = parse_cifar100(&train, &test).unwrap();
        assert_eq!(ds.image(0)[0], 1.0);
        assert_eq!(ds.image(0)[1], 0.0);
    }
}
