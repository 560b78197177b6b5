//! Candidate search over Net2Net expansions and the expansion gate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchDescriptor, ExpansionAction};
use crate::error::{Error, Result};
use crate::net2net::{apply_actions, MorphConfig, Morphism};
use crate::nn::{fit, Network, Samples, TrainConfig, TrainOutcome};
use crate::rl::{normalize_rewards, Controller, Episode, SearchState};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Candidates sampled per step (`n`).
    pub sample_size: usize,
    /// Training epoch cap per candidate (`l`).
    pub epoch_limit: usize,
    pub max_wider: usize,
    pub max_deeper: usize,
    pub noise_scale: f32,
    pub widen_factor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let morph = MorphConfig::default();
        Self {
            sample_size: 20,
            epoch_limit: 5,
            max_wider: 3,
            max_deeper: 3,
            noise_scale: morph.noise_scale,
            widen_factor: morph.widen_factor,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("search: {m}")));
        if self.sample_size == 0 {
            return bad("sample_size must be at least 1");
        }
        if self.epoch_limit == 0 {
            return bad("epoch_limit must be at least 1");
        }
        if self.max_wider == 0 || self.max_deeper == 0 {
            return bad("max_wider and max_deeper must be at least 1");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be a finite non-negative number");
        }
        if !(self.widen_factor > 1.0 && self.widen_factor.is_finite()) {
            return bad("widen_factor must exceed 1");
        }
        Ok(())
    }

    pub fn morph(&self) -> MorphConfig {
        MorphConfig {
            noise_scale: self.noise_scale,
            widen_factor: self.widen_factor,
        }
    }
}

/// Where candidate actions come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    /// The REINFORCE actors, updated once per search.
    Learned(Controller),
    /// Uniform over `0..=max` for each transformation type.
    Uniform,
}

impl Policy {
    pub fn controller(&self) -> Option<&Controller> {
        match self {
            Policy::Learned(c) => Some(c),
            Policy::Uniform => None,
        }
    }

    fn sample(&self, state: &SearchState, cfg: &SearchConfig, seed: u64) -> ExpansionAction {
        match self {
            Policy::Learned(c) => ExpansionAction::new(
                c.wider.sample_seeded(state, seed::derive(seed, &[0])),
                c.deeper.sample_seeded(state, seed::derive(seed, &[1])),
            ),
            Policy::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let wider = rng.gen_range(0..=cfg.max_wider);
                let deeper = rng.gen_range(0..=cfg.max_deeper);
                ExpansionAction::new(wider, deeper)
            }
        }
    }
}

/// Trains one morphed candidate. The default implementation is
/// [`EarlyStopTrainer`]; tests substitute fixed scores.
pub trait CandidateTrainer: Sync {
    fn train(&self, idx: usize, candidate: Network, seed: u64) -> Result<TrainOutcome>;
}

/// Early-stopped training capped at the search epoch limit.
pub struct EarlyStopTrainer<'a> {
    pub train: &'a Samples,
    pub val: &'a Samples,
    pub cfg: TrainConfig,
}

impl CandidateTrainer for EarlyStopTrainer<'_> {
    fn train(&self, _idx: usize, candidate: Network, seed: u64) -> Result<TrainOutcome> {
        fit(candidate, self.train, self.val, &self.cfg.with_seed(seed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub idx: usize,
    pub action: ExpansionAction,
    pub applied: Vec<Morphism>,
    pub descriptor: ArchDescriptor,
    pub val_accuracy: f64,
    pub params: usize,
    pub seed: u64,
    /// Training hit a non-finite loss; the score is the best accuracy
    /// reached before that.
    pub diverged: bool,
    pub epochs_run: usize,
}

/// One JSON line of the per-candidate log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLog {
    pub step: usize,
    pub idx: usize,
    pub wider: usize,
    pub deeper: usize,
    pub val_acc: f64,
    pub params: usize,
    pub seed: u64,
}

impl CandidateResult {
    pub fn log(&self, step: usize) -> CandidateLog {
        CandidateLog {
            step,
            idx: self.idx,
            wider: self.action.wider,
            deeper: self.action.deeper,
            val_acc: self.val_accuracy,
            params: self.params,
            seed: self.seed,
        }
    }
}

pub struct SearchOutcome {
    pub candidates: Vec<CandidateResult>,
    /// Index of the winning candidate.
    pub best: usize,
    /// Trained weights of the winning candidate.
    pub best_network: Network,
    pub episodes: Vec<Episode>,
}

impl SearchOutcome {
    pub fn v_sampled(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.val_accuracy).collect()
    }

    pub fn best(&self) -> &CandidateResult {
        &self.candidates[self.best]
    }
}

/// Highest accuracy wins; ties go to fewer parameters, then lower index.
pub fn select_best(candidates: &[CandidateResult]) -> Option<usize> {
    (0..candidates.len()).reduce(|best, i| {
        let (a, b) = (&candidates[best], &candidates[i]);
        if b.val_accuracy > a.val_accuracy
            || (b.val_accuracy == a.val_accuracy && b.params < a.params)
        {
            i
        } else {
            best
        }
    })
}

/// Inputs to one search call.
pub struct SearchRequest<'a> {
    /// The current task network, already trained on the aggregate data.
    pub network: &'a Network,
    /// Its validation accuracy, the baseline for rewards.
    pub v_prev: f64,
    pub state: SearchState,
    pub cfg: &'a SearchConfig,
    /// Candidate jobs run on this many threads; `<= 1` runs serially.
    pub workers: usize,
    pub seed: u64,
}

/// Samples `n` actions, morphs and trains a candidate for each, then updates
/// a learned policy once with the normalised rewards `v̂_i − v_prev`.
pub fn arch_search(
    req: &SearchRequest<'_>,
    policy: &mut Policy,
    trainer: &dyn CandidateTrainer,
) -> Result<SearchOutcome> {
    req.cfg.validate()?;
    let n = req.cfg.sample_size;
    let actions: Vec<ExpansionAction> = (0..n)
        .map(|i| {
            policy.sample(
                &req.state,
                req.cfg,
                seed::derive(req.seed, &[seed::ACTION, i as u64]),
            )
        })
        .collect();
    let morph = req.cfg.morph();
    let job = |i: usize| -> Result<(CandidateResult, Network)> {
        let cand_seed = seed::derive(req.seed, &[seed::CANDIDATE, i as u64]);
        let morphed = apply_actions(req.network, actions[i], &morph, seed::derive(cand_seed, &[0]))?;
        let out = trainer.train(i, morphed.network, seed::derive(cand_seed, &[1]))?;
        let result = CandidateResult {
            idx: i,
            action: actions[i],
            applied: morphed.applied,
            descriptor: morphed.descriptor,
            val_accuracy: out.val_accuracy,
            params: out.network.param_count(),
            seed: cand_seed,
            diverged: out.diverged_at.is_some(),
            epochs_run: out.epochs_run,
        };
        Ok((result, out.network))
    };
    let runs: Vec<Result<(CandidateResult, Network)>> = if req.workers <= 1 {
        (0..n).map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(req.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map(job).collect())
    };
    let mut candidates = Vec::with_capacity(n);
    let mut networks = Vec::with_capacity(n);
    for run in runs {
        let (c, net) = run?;
        if c.diverged {
            log::warn!("candidate {} diverged; keeping its best score {:.4}", c.idx, c.val_accuracy);
        }
        candidates.push(c);
        networks.push(Some(net));
    }

    let raw: Vec<f64> = candidates.iter().map(|c| c.val_accuracy - req.v_prev).collect();
    let episodes: Vec<Episode> = normalize_rewards(&raw)
        .into_iter()
        .zip(&raw)
        .zip(&candidates)
        .map(|((normalized, &raw), c)| Episode {
            state: req.state,
            wider_action: c.action.wider,
            deeper_action: c.action.deeper,
            raw_reward: raw,
            normalized_reward: normalized,
        })
        .collect();
    if let Policy::Learned(controller) = policy {
        controller.update(&episodes)?;
    }

    let best = select_best(&candidates).expect("sample_size >= 1");
    let best_network = networks[best].take().expect("one network per candidate");
    Ok(SearchOutcome {
        candidates,
        best,
        best_network,
        episodes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Expand,
    Keep,
}

/// Expand iff fewer than half the candidates fall below `v_prev` and their
/// mean beats it.
pub fn heuristic_func(v_prev: f64, v_sampled: &[f64]) -> Result<Decision> {
    if v_sampled.is_empty() {
        return Err(Error::EmptyBatch("no sampled accuracies"));
    }
    let negative = v_sampled.iter().filter(|&&v| v < v_prev).count();
    let mean = v_sampled.iter().sum::<f64>() / v_sampled.len() as f64;
    if (negative as f64) < v_sampled.len() as f64 / 2.0 && mean > v_prev {
        Ok(Decision::Expand)
    } else {
        Ok(Decision::Keep)
    }
}

/// Expand whenever the best candidate beats `v_prev`.
pub fn greedy_rule(v_prev: f64, v_sampled: &[f64]) -> Result<Decision> {
    let best = v_sampled
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::EmptyBatch("no sampled accuracies"))?;
    Ok(if best > v_prev {
        Decision::Expand
    } else {
        Decision::Keep
    })
}
