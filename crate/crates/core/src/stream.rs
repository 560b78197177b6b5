//! Class-incremental data streams.
//!
//! A stream partitions a dataset's training examples into time steps. Step 0
//! is the base knowledge. A class's validation examples arrive together
//! with its first training examples; test examples are never streamed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{remap_labels, LabelMap, LabeledDataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// `k` fresh classes per step, all of their data at once.
    KClass,
    /// A random number of fresh classes plus a portion of one other class.
    Mixed,
    /// `k` fresh classes per step with half their data; the rest arrives
    /// `gap` steps later.
    Half,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Number of base-knowledge classes delivered at step 0.
    pub base: usize,
    /// Fresh classes per step (k-class and half).
    pub k: usize,
    /// Inclusive range of fresh classes per step (mixed).
    pub k_min: usize,
    pub k_max: usize,
    /// Candidate portion sizes for the extra class (mixed).
    pub portions: Vec<f64>,
    /// Steps between a class's first and second half (half).
    pub gap: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::KClass,
            base: 10,
            k: 2,
            k_min: 1,
            k_max: 19,
            portions: vec![0.25, 0.5],
            gap: 5,
        }
    }
}

impl Scenario {
    pub fn k_class(k: usize, base: usize) -> Self {
        Self {
            kind: ScenarioKind::KClass,
            k,
            base,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if self.base == 0 {
            return bad("base must be at least 1");
        }
        match self.kind {
            ScenarioKind::KClass | ScenarioKind::Half if self.k == 0 => bad("k must be at least 1"),
            ScenarioKind::Half if self.gap == 0 => bad("gap must be at least 1"),
            ScenarioKind::Mixed if self.k_min == 0 || self.k_min > self.k_max => {
                bad("need 1 <= k_min <= k_max")
            }
            ScenarioKind::Mixed
                if self.portions.is_empty()
                    || self.portions.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) =>
            {
                bad("portions must be non-empty and within (0, 1]")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamStep {
    pub t: usize,
    /// Training examples arriving at this step.
    pub train: Vec<usize>,
    /// Validation examples of classes first seen at this step.
    pub val: Vec<usize>,
    /// Labels present in this step's data.
    pub classes: BTreeSet<usize>,
    /// Never-before-seen classes, in arrival order.
    pub new_classes: Vec<usize>,
    /// Mixed scenario: the drawn fresh-class count and portion.
    pub drawn: Option<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub steps: Vec<StreamStep>,
    /// Classes by first appearance.
    pub arrival_order: Vec<usize>,
}

impl Stream {
    /// Renumbers dataset labels to arrival order so that the `i`-th class
    /// to appear has label `i`, and rewrites the steps to match.
    pub fn relabel(&self, ds: &LabeledDataset) -> Result<(LabeledDataset, Stream, LabelMap)> {
        let (ds, map) = remap_labels(ds, &self.arrival_order)?;
        let steps = self
            .steps
            .iter()
            .map(|s| StreamStep {
                classes: s.classes.iter().map(|&c| map.to_new[c]).collect(),
                new_classes: s.new_classes.iter().map(|&c| map.to_new[c]).collect(),
                ..s.clone()
            })
            .collect();
        let stream = Stream {
            steps,
            arrival_order: (0..self.arrival_order.len()).collect(),
        };
        Ok((ds, stream, map))
    }
}

struct Builder {
    /// Training examples per class.
    totals: BTreeMap<usize, usize>,
    /// Undelivered training examples per class.
    remaining: BTreeMap<usize, VecDeque<usize>>,
    val: BTreeMap<usize, Vec<usize>>,
    seen: BTreeSet<usize>,
    arrival: Vec<usize>,
    steps: Vec<StreamStep>,
}

impl Builder {
    fn new(ds: &LabeledDataset) -> Self {
        let train = ds.by_class(Split::Train);
        Self {
            totals: train.iter().map(|(c, v)| (*c, v.len())).collect(),
            remaining: train.into_iter().map(|(c, v)| (c, v.into())).collect(),
            val: ds.by_class(Split::Val),
            seen: BTreeSet::new(),
            arrival: Vec::new(),
            steps: Vec::new(),
        }
    }

    fn total(&self, class: usize) -> usize {
        self.totals[&class]
    }

    fn open(&mut self) -> StreamStep {
        StreamStep {
            t: self.steps.len(),
            train: Vec::new(),
            val: Vec::new(),
            classes: BTreeSet::new(),
            new_classes: Vec::new(),
            drawn: None,
        }
    }

    /// Moves up to `count` undelivered examples of `class` into `step`.
    fn deliver(&mut self, step: &mut StreamStep, class: usize, count: usize) {
        let queue = self.remaining.get_mut(&class).expect("known class");
        let take = count.min(queue.len());
        step.train.extend(queue.drain(..take));
        if self.seen.insert(class) {
            self.arrival.push(class);
            step.new_classes.push(class);
            step.val.extend(self.val.get(&class).into_iter().flatten());
        }
        step.classes.insert(class);
    }

    fn deliver_all(&mut self, step: &mut StreamStep, class: usize) {
        self.deliver(step, class, usize::MAX);
    }

    fn close(&mut self, step: StreamStep) {
        if !step.train.is_empty() || !step.val.is_empty() {
            self.steps.push(step);
        }
    }

    fn finish(self) -> Stream {
        Stream {
            steps: self.steps,
            arrival_order: self.arrival,
        }
    }
}

/// Builds the stream for `scenario`. Fresh classes are taken in
/// `class_order`; randomness (mixed scenario) comes from `seed`.
pub fn make_stream(
    scenario: &Scenario,
    ds: &LabeledDataset,
    class_order: &[usize],
    seed: u64,
) -> Result<Stream> {
    scenario.validate()?;
    let mut b = Builder::new(ds);
    let classes: BTreeSet<usize> = b.remaining.keys().copied().collect();
    let order_set: BTreeSet<usize> = class_order.iter().copied().collect();
    if order_set != classes || class_order.len() != classes.len() {
        return Err(Error::Order(format!(
            "class order must be a permutation of the {} training classes",
            classes.len()
        )));
    }
    if scenario.base > class_order.len() {
        return Err(Error::Config(format!(
            "scenario: base knowledge of {} classes exceeds the {} available",
            scenario.base,
            class_order.len()
        )));
    }

    let mut step = b.open();
    for &c in &class_order[..scenario.base] {
        b.deliver_all(&mut step, c);
    }
    b.close(step);
    let mut fresh = class_order[scenario.base..].iter().copied();

    match scenario.kind {
        ScenarioKind::KClass => loop {
            let mut step = b.open();
            for c in fresh.by_ref().take(scenario.k) {
                b.deliver_all(&mut step, c);
            }
            if step.train.is_empty() {
                break;
            }
            b.close(step);
        },
        ScenarioKind::Half => {
            let mut fresh: VecDeque<usize> = fresh.collect();
            let mut pending: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            let mut clock = 0;
            loop {
                clock += 1;
                if fresh.is_empty() {
                    // Only second halves remain: jump to the next one due.
                    match pending.keys().next() {
                        Some(&due) => clock = clock.max(due),
                        None => break,
                    }
                }
                let mut step = b.open();
                for c in fresh.drain(..scenario.k.min(fresh.len())) {
                    let half = b.total(c).div_ceil(2);
                    b.deliver(&mut step, c, half);
                    pending.entry(clock + scenario.gap).or_default().push(c);
                }
                while let Some(entry) = pending.first_entry() {
                    if *entry.key() > clock {
                        break;
                    }
                    for c in entry.remove() {
                        b.deliver_all(&mut step, c);
                    }
                }
                b.close(step);
            }
        }
        ScenarioKind::Mixed => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut fresh: VecDeque<usize> = fresh.collect();
            while b.remaining.values().any(|q| !q.is_empty()) {
                let k = rng.gen_range(scenario.k_min..=scenario.k_max);
                let p = scenario.portions[rng.gen_range(0..scenario.portions.len())];
                let mut step = b.open();
                step.drawn = Some((k, p));
                let mut taken = BTreeSet::new();
                while taken.len() < k {
                    // A class already introduced through a portion is no
                    // longer fresh.
                    let Some(c) = fresh.pop_front() else { break };
                    if b.seen.contains(&c) {
                        continue;
                    }
                    b.deliver_all(&mut step, c);
                    taken.insert(c);
                }
                let others: Vec<usize> = b
                    .remaining
                    .iter()
                    .filter(|(c, q)| !q.is_empty() && !taken.contains(c))
                    .map(|(c, _)| *c)
                    .collect();
                if !others.is_empty() {
                    let c = others[rng.gen_range(0..others.len())];
                    let count = (p * b.total(c) as f64).ceil() as usize;
                    b.deliver(&mut step, c, count);
                }
                b.close(step);
            }
        }
    }
    Ok(b.finish())
}
