use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::tensor::{argmax, softmax_rows, Tensor};
use crate::error::{Error, Result};

/// A materialised set of labelled inputs, e.g. one data split.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(inputs: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies out the given rows, in order.
    pub fn gather(&self, rows: &[usize]) -> Samples {
        let w = self.inputs.row_len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(self.inputs.row(r));
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = rows.len();
        Samples {
            inputs: Tensor::new(shape, data).expect("row gather keeps shape"),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Shuffling and dropout seed; runs derive it per training call.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            max_epochs: 100,
            patience: 5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be ≥ 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }

    pub fn with_max_epochs(&self, max_epochs: usize) -> Self {
        Self {
            max_epochs,
            ..self.clone()
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut [f32]>, grads: &[&[f32]]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(params.len(), grads.len(), "parameter/gradient block mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: BTreeMap<usize, f64>,
}

const EVAL_CHUNK: usize = 256;

/// Argmax predictions, ties to the lowest class index.
pub fn predict(net: &Network, samples: &Samples) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    let rows: Vec<usize> = (0..samples.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let part = samples.gather(chunk);
        let logits = net.logits(&part.inputs)?;
        let w = logits.row_len();
        out.extend(logits.data().chunks(w).map(argmax));
    }
    Ok(out)
}

pub fn evaluate(net: &Network, samples: &Samples) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyData("evaluation split".into()));
    }
    let classes = net.class_count();
    if let Some(&label) = samples.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let predicted = predict(net, samples)?;
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (p, &y) in predicted.iter().zip(&samples.labels) {
        let e = hits.entry(y).or_default();
        e.1 += 1;
        if *p == y {
            e.0 += 1;
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        correct,
        total: samples.len(),
        per_class: hits
            .into_iter()
            .map(|(c, (ok, n))| (c, ok as f64 / n as f64))
            .collect(),
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the best validation accuracy over the trained epochs.
    /// The initial parameters (epoch 0) are returned only when no epoch
    /// completed.
    pub network: Network,
    pub val_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Epoch at which the loss became non-finite, if it did.
    pub diverged_at: Option<usize>,
}

/// Mean cross-entropy of one batch and its gradient w.r.t. the logits.
pub fn cross_entropy_grad(logits: &Tensor<f32>, labels: &[usize]) -> (f64, Tensor<f32>) {
    let probs = softmax_rows(logits);
    let n = labels.len();
    let w = logits.row_len();
    let mut grad = probs.clone();
    let mut loss = 0.0f64;
    let inv = 1.0 / n as f32;
    for (i, &y) in labels.iter().enumerate() {
        loss -= f64::from(probs.data()[i * w + y].max(f32::MIN_POSITIVE)).ln();
        let row = &mut grad.data_mut()[i * w..(i + 1) * w];
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    (loss / n as f64, grad)
}

/// Early-stopped mini-batch training that records divergence instead of
/// failing. See [`train`] for the strict variant.
pub fn fit(net: Network, train: &Samples, val: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyData("training split".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyData("validation split".into()));
    }
    let classes = net.class_count();
    if let Some(&label) = train.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let initial = evaluate(&net, val)?.accuracy;
    let mut best = TrainOutcome {
        network: net.clone(),
        val_accuracy: initial,
        epochs_run: 0,
        best_epoch: 0,
        diverged_at: None,
    };
    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.gather(chunk);
            let trace = net.forward_train(&batch.inputs, &mut rng)?;
            let (loss, dlogits) = cross_entropy_grad(trace.logits(), &batch.labels);
            if !loss.is_finite() {
                best.epochs_run = epoch;
                best.diverged_at = Some(epoch);
                return Ok(best);
            }
            let grads = net.backward(&trace, &dlogits, false);
            let blocks = grads.blocks();
            adam.update(net.params_mut(), &blocks);
        }
        if !net.is_finite() {
            best.epochs_run = epoch;
            best.diverged_at = Some(epoch);
            return Ok(best);
        }
        best.epochs_run = epoch;
        let acc = evaluate(&net, val)?.accuracy;
        if epoch == 1 || acc > best.val_accuracy {
            best.network = net.clone();
            best.val_accuracy = acc;
            best.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}

/// Trains with Adam on cross-entropy, restoring the best validation
/// snapshot. Fails with [`Error::Divergence`] on a non-finite loss.
pub fn train(net: Network, train: &Samples, val: &Samples, cfg: &TrainConfig) -> Result<(Network, f64)> {
    let out = fit(net, train, val, cfg)?;
    if let Some(epoch) = out.diverged_at {
        return Err(Error::Divergence { epoch });
    }
    Ok((out.network, out.val_accuracy))
}
