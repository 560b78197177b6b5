//! The incremental learning loop, its metric, and the baseline variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{expand_output, ArchDescriptor, ExpansionAction};
use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{evaluate, train, Network, TrainConfig};
use crate::rl::{encode_state, ActorConfig, Controller};
use crate::search::{
    arch_search, greedy_rule, heuristic_func, CandidateResult, Decision, EarlyStopTrainer, Policy,
    SearchConfig, SearchRequest,
};
use crate::seed;
use crate::stream::StreamStep;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Learned action sampling with the heuristic gate.
    Cnas,
    /// Static architecture: no search.
    Sa,
    /// Uniform action sampling, expand whenever the best candidate wins.
    Ras,
    /// Uniform action sampling with the heuristic gate.
    RasHf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cnas, Method::Sa, Method::Ras, Method::RasHf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cnas => "cnas",
            Method::Sa => "sa",
            Method::Ras => "ras",
            Method::RasHf => "ras-hf",
        }
    }

    fn searches(self) -> bool {
        self != Method::Sa
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Everything the loop needs besides data and state.
#[derive(Clone, Debug, PartialEq)]
pub struct DriverConfig {
    pub method: Method,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub agent: ActorConfig,
    pub workers: usize,
    pub seed: u64,
}

impl DriverConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            agent: ActorConfig::default(),
            workers: 1,
            seed,
        }
    }

    fn step_seed(&self, t: usize, tag: u64) -> u64 {
        seed::derive(self.seed, &[seed::STEP, t as u64, tag])
    }
}

/// Learner state between time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    /// Index of the last completed step.
    pub step: usize,
    pub network: Network,
    pub policy: Policy,
    /// Aggregated training examples, in arrival order.
    pub train: Vec<usize>,
    /// Aggregated validation examples, in arrival order.
    pub val: Vec<usize>,
    pub classes_seen: usize,
}

impl LearnerState {
    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor::of(&self.network).expect("task network follows the descriptor grammar")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub classes_seen: usize,
    pub new_classes: usize,
    /// Size of the aggregated training set.
    pub train_examples: usize,
    /// Average incremental accuracy on the test data of all seen classes.
    pub aia: f64,
    /// Overall test accuracy on the same data.
    pub test_accuracy: f64,
    /// Validation accuracy after the final training of the step.
    pub val_accuracy: f64,
    /// Validation accuracy after the pre-search training (the search baseline).
    pub v_prev: Option<f64>,
    /// The same network's accuracy on the validation data of previously seen classes.
    pub v_prev_distribution: Option<f64>,
    pub v_diff: f64,
    pub params: usize,
    pub descriptor: String,
    pub decision: Option<Decision>,
    pub expanded: bool,
    /// Action of the best candidate.
    pub action: Option<ExpansionAction>,
    /// Morphisms of the best candidate.
    pub applied: Vec<String>,
    pub v_sampled: Vec<f64>,
    pub wall_s: f64,
    #[serde(skip)]
    pub candidates: Vec<CandidateResult>,
}

/// Mean of per-class accuracies over classes `0..classes`.
pub fn average_incremental_accuracy(per_class: &BTreeMap<usize, f64>, classes: usize) -> Result<f64> {
    if classes == 0 {
        return Err(Error::Coverage(0));
    }
    let mut sum = 0.0;
    for c in 0..classes {
        sum += per_class.get(&c).ok_or(Error::Coverage(c))?;
    }
    Ok(sum / classes as f64)
}

fn check_arrivals(step: &StreamStep, classes_seen: usize) -> Result<()> {
    let expected: Vec<usize> = (classes_seen..classes_seen + step.new_classes.len()).collect();
    if step.new_classes != expected {
        return Err(Error::Order(format!(
            "step {} introduces {:?}; labels must follow arrival order ({:?})",
            step.t, step.new_classes, expected
        )));
    }
    Ok(())
}

struct Scores {
    aia: f64,
    test_accuracy: f64,
}

fn test_scores(net: &Network, ds: &LabeledDataset, classes: usize) -> Result<Scores> {
    let test = ds.select(Split::Test, |l| l < classes);
    let eval = evaluate(net, &ds.samples(&test))?;
    Ok(Scores {
        aia: average_incremental_accuracy(&eval.per_class, classes)?,
        test_accuracy: eval.accuracy,
    })
}

/// Trains the initial architecture on the base knowledge (step 0). No
/// search runs at this step.
pub fn initial_state(
    base: &ArchDescriptor,
    step: &StreamStep,
    ds: &LabeledDataset,
    cfg: &DriverConfig,
) -> Result<(LearnerState, StepReport)> {
    let started = Instant::now();
    check_arrivals(step, 0)?;
    if base.input != ds.input_shape() {
        return Err(Error::Descriptor(format!(
            "architecture input {:?} does not match data {:?}",
            base.input,
            ds.input_shape()
        )));
    }
    let classes = step.new_classes.len();
    let desc = base.with_classes(classes);
    let net = desc.instantiate(seed::derive(cfg.seed, &[seed::INIT]))?;
    let policy = match cfg.method {
        Method::Cnas => Policy::Learned(Controller::new(
            cfg.search.max_wider,
            cfg.search.max_deeper,
            &cfg.agent,
            seed::derive(cfg.seed, &[seed::CONTROLLER]),
        )),
        _ => Policy::Uniform,
    };
    let train_s = ds.samples(&step.train);
    let val_s = ds.samples(&step.val);
    let tcfg = cfg.train.with_seed(cfg.step_seed(step.t, seed::FINAL_TRAIN));
    let (net, val_accuracy) = train(net, &train_s, &val_s, &tcfg)?;
    let scores = test_scores(&net, ds, classes)?;
    let report = StepReport {
        step: step.t,
        classes_seen: classes,
        new_classes: classes,
        train_examples: step.train.len(),
        aia: scores.aia,
        test_accuracy: scores.test_accuracy,
        val_accuracy,
        v_prev: None,
        v_prev_distribution: None,
        v_diff: 0.0,
        params: net.param_count(),
        descriptor: desc.summary(),
        decision: None,
        expanded: false,
        action: None,
        applied: Vec::new(),
        v_sampled: Vec::new(),
        wall_s: started.elapsed().as_secs_f64(),
        candidates: Vec::new(),
    };
    let state = LearnerState {
        step: step.t,
        network: net,
        policy,
        train: step.train.clone(),
        val: step.val.clone(),
        classes_seen: classes,
    };
    Ok((state, report))
}

/// One time step: aggregate the data, grow the output layer, train, search,
/// gate, and train the chosen network again.
pub fn incremental_learn(
    mut state: LearnerState,
    step: &StreamStep,
    ds: &LabeledDataset,
    cfg: &DriverConfig,
) -> Result<(LearnerState, StepReport)> {
    let started = Instant::now();
    check_arrivals(step, state.classes_seen)?;
    let previous_val = state.val.clone();
    state.train.extend_from_slice(&step.train);
    state.val.extend_from_slice(&step.val);

    let mut net = state.network;
    let classes = state.classes_seen + step.new_classes.len();
    if classes > state.classes_seen {
        net = expand_output(&net, classes, cfg.step_seed(step.t, seed::OUTPUT_GROWTH))?;
    }

    let train_s = ds.samples(&state.train);
    let val_s = ds.samples(&state.val);
    let tcfg = cfg.train.with_seed(cfg.step_seed(step.t, seed::PRE_SEARCH_TRAIN));
    let (net, v_prev) = train(net, &train_s, &val_s, &tcfg)?;
    let v_prev_distribution = if previous_val.is_empty() {
        None
    } else {
        Some(evaluate(&net, &ds.samples(&previous_val))?.accuracy)
    };
    let v_diff = v_prev_distribution.map_or(0.0, |p| v_prev - p);

    let mut decision = None;
    let mut chosen = net;
    let mut action = None;
    let mut applied = Vec::new();
    let mut v_sampled = Vec::new();
    let mut candidates = Vec::new();
    if cfg.method.searches() {
        let desc = ArchDescriptor::of(&chosen)?;
        let trainer = EarlyStopTrainer {
            train: &train_s,
            val: &val_s,
            cfg: cfg.train.with_max_epochs(cfg.search.epoch_limit),
        };
        let req = SearchRequest {
            network: &chosen,
            v_prev,
            state: encode_state(&desc, v_diff, step.new_classes.len()),
            cfg: &cfg.search,
            workers: cfg.workers,
            seed: cfg.step_seed(step.t, seed::CANDIDATE),
        };
        let outcome = arch_search(&req, &mut state.policy, &trainer)?;
        v_sampled = outcome.v_sampled();
        let d = match cfg.method {
            Method::Ras => greedy_rule(v_prev, &v_sampled)?,
            _ => heuristic_func(v_prev, &v_sampled)?,
        };
        let best = outcome.best();
        action = Some(best.action);
        applied = best.applied.iter().map(ToString::to_string).collect();
        if d == Decision::Expand {
            chosen = outcome.best_network;
        }
        decision = Some(d);
        candidates = outcome.candidates;
    }

    let tcfg = cfg.train.with_seed(cfg.step_seed(step.t, seed::FINAL_TRAIN));
    let (net, val_accuracy) = train(chosen, &train_s, &val_s, &tcfg)?;
    let scores = test_scores(&net, ds, classes)?;
    let report = StepReport {
        step: step.t,
        classes_seen: classes,
        new_classes: step.new_classes.len(),
        train_examples: state.train.len(),
        aia: scores.aia,
        test_accuracy: scores.test_accuracy,
        val_accuracy,
        v_prev: Some(v_prev),
        v_prev_distribution,
        v_diff,
        params: net.param_count(),
        descriptor: ArchDescriptor::of(&net)?.summary(),
        decision,
        expanded: decision == Some(Decision::Expand),
        action,
        applied,
        v_sampled,
        wall_s: started.elapsed().as_secs_f64(),
        candidates,
    };
    state.network = net;
    state.step = step.t;
    state.classes_seen = classes;
    Ok((state, report))
}

/// Runs a whole (relabelled) stream with one method.
pub fn run_baseline(
    base: &ArchDescriptor,
    steps: &[StreamStep],
    ds: &LabeledDataset,
    cfg: &DriverConfig,
) -> Result<Vec<StepReport>> {
    let (first, rest) = steps
        .split_first()
        .ok_or_else(|| Error::EmptyData("stream has no steps".into()))?;
    let (mut state, report) = initial_state(base, first, ds, cfg)?;
    let mut reports = vec![report];
    for step in rest {
        let (next, report) = incremental_learn(state, step, ds, cfg)?;
        log::info!(
            "{} step {}: aia {:.4} params {} {:?}",
            cfg.method,
            report.step,
            report.aia,
            report.params,
            report.decision
        );
        state = next;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aia_examples() {
        let m = |v: &[(usize, f64)]| v.iter().copied().collect::<BTreeMap<_, _>>();
        assert_eq!(average_incremental_accuracy(&m(&[(0, 1.0), (1, 0.5)]), 2).unwrap(), 0.75);
        let a = average_incremental_accuracy(&m(&[(0, 0.9), (1, 0.8), (2, 0.4)]), 3).unwrap();
        assert!((a - 0.7).abs() < 1e-12);
        assert_eq!(average_incremental_accuracy(&m(&[(0, 0.3), (1, 0.3)]), 2).unwrap(), 0.3);
        assert!(matches!(
            average_incremental_accuracy(&m(&[(0, 1.0)]), 2),
            Err(Error::Coverage(1))
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("RAS_HF".parse::<Method>().unwrap(), Method::RasHf);
        assert!("greedy".parse::<Method>().is_err());
    }
}
