//! REINFORCE meta-controller: two independent categorical policies choosing
//! how many widen and deepen transformations a candidate receives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchDescriptor;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Dense, Gradients, Layer, Network, Tensor};

pub const STATE_DIM: usize = 4;

/// Controller observation at one time step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub a_conv: usize,
    pub a_fc: usize,
    /// Validation accuracy on the current distribution minus that on the
    /// previous one.
    pub v_diff: f64,
    /// Classes never seen before this step.
    pub n_new: usize,
}

impl SearchState {
    /// MLP input vector, scaled to O(1).
    pub fn inputs(&self) -> [f32; STATE_DIM] {
        [
            self.a_conv as f32 / 10.0,
            self.a_fc as f32 / 10.0,
            self.v_diff as f32,
            self.n_new as f32 / 10.0,
        ]
    }
}

/// Builds the controller state. Only layer counts are encoded, not widths.
pub fn encode_state(desc: &ArchDescriptor, v_diff: f64, n_new: usize) -> SearchState {
    SearchState {
        a_conv: desc.conv_count(),
        a_fc: desc.dense_count(),
        v_diff: v_diff.clamp(-1.0, 1.0),
        n_new,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    pub hidden: usize,
    pub learning_rate: f32,
    pub entropy_coef: f64,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            learning_rate: 1e-3,
            entropy_coef: 0.01,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("agent.hidden must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("agent.learning_rate must be > 0".into()));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(Error::Config("agent.entropy_coef must be >= 0".into()));
        }
        Ok(())
    }
}

/// A categorical policy over `0..=max_actions` transformation counts.
/// Output neuron `i` is the probability of taking `i` transformations.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    policy: Network,
    learning_rate: f32,
    updates: usize,
}

impl Actor {
    pub fn new(max_actions: usize, cfg: &ActorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let policy = Network::new(
            vec![STATE_DIM],
            vec![
                Layer::Dense(Dense::he(&mut rng, STATE_DIM, h)),
                Layer::Dense(Dense::he(&mut rng, h, h)),
                Layer::SoftmaxOutput(Dense::glorot(&mut rng, h, max_actions + 1)),
            ],
        )
        .expect("actor topology is valid");
        Self {
            policy,
            learning_rate: cfg.learning_rate,
            updates: 0,
        }
    }

    pub fn from_network(policy: Network, learning_rate: f32) -> Result<Self> {
        if policy.input_shape() != [STATE_DIM] {
            return Err(Error::Shape(format!(
                "actor input must be [{STATE_DIM}], got {:?}",
                policy.input_shape()
            )));
        }
        Ok(Self {
            policy,
            learning_rate,
            updates: 0,
        })
    }

    /// Rebuilds an actor from a checkpoint, keeping its update count.
    pub fn restore(policy: Network, learning_rate: f32, updates: usize) -> Result<Self> {
        let mut actor = Self::from_network(policy, learning_rate)?;
        actor.updates = updates;
        Ok(actor)
    }

    pub fn network(&self) -> &Network {
        &self.policy
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.policy
    }

    pub fn max_actions(&self) -> usize {
        self.policy.class_count() - 1
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    /// Number of policy updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    fn state_batch(states: &[SearchState]) -> Tensor {
        let data = states.iter().flat_map(|s| s.inputs()).collect();
        Tensor::new(vec![states.len(), STATE_DIM], data).expect("state batch")
    }

    pub fn probabilities(&self, state: &SearchState) -> Vec<f64> {
        let logits = self
            .policy
            .logits(&Self::state_batch(&[*state]))
            .expect("actor input shape");
        softmax_f64(logits.data())
    }

    pub fn log_prob(&self, state: &SearchState, action: usize) -> f64 {
        self.probabilities(state)[action].ln()
    }

    /// Shannon entropy of the policy at `state`, in nats.
    pub fn entropy(&self, state: &SearchState) -> f64 {
        entropy(&self.probabilities(state))
    }

    /// Draws a transformation count from the policy.
    pub fn sample<R: Rng + ?Sized>(&self, state: &SearchState, rng: &mut R) -> usize {
        sample_categorical(&self.probabilities(state), rng)
    }

    pub fn sample_seeded(&self, state: &SearchState, seed: u64) -> usize {
        self.sample(state, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Σ_e R_e ∇θ ln π(a_e | s_e), as per-layer gradient blocks.
    pub fn weighted_log_prob_grad(&self, samples: &[(SearchState, usize, f64)]) -> Gradients<f32> {
        let states: Vec<SearchState> = samples.iter().map(|s| s.0).collect();
        let batch = Self::state_batch(&states);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self
            .policy
            .forward_train(&batch, &mut rng)
            .expect("actor input shape");
        let probs = softmax_rows(trace.logits());
        let k = probs.row_len();
        let mut dlogits = probs.clone();
        for (e, (_, action, weight)) in samples.iter().enumerate() {
            let row = &mut dlogits.data_mut()[e * k..(e + 1) * k];
            for (i, v) in row.iter_mut().enumerate() {
                let onehot = if i == *action { 1.0 } else { 0.0 };
                *v = (*weight as f32) * (onehot - *v);
            }
        }
        self.policy.backward(&trace, &dlogits, false)
    }

    /// One REINFORCE step, θ ← θ + α Σ_e R_e ∇θ ln π(a_e|s_e), where
    /// R_e = reward_e + entropy_coef · H(π(·|s_e)).
    pub fn reinforce_update(
        &mut self,
        samples: &[(SearchState, usize, f64)],
        entropy_coef: f64,
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch("no episodes for policy update"));
        }
        let max = self.max_actions();
        if let Some(bad) = samples.iter().find(|s| s.1 > max) {
            return Err(Error::Shape(format!(
                "action {} outside 0..={max}",
                bad.1
            )));
        }
        let shaped: Vec<(SearchState, usize, f64)> = samples
            .iter()
            .map(|&(s, a, r)| (s, a, r + entropy_coef * self.entropy(&s)))
            .collect();
        let grads = self.weighted_log_prob_grad(&shaped);
        let blocks: Vec<Vec<f32>> = grads.blocks().into_iter().map(<[f32]>::to_vec).collect();
        let lr = self.learning_rate;
        for (param, grad) in self.policy.params_mut().into_iter().zip(&blocks) {
            for (p, g) in param.iter_mut().zip(grad) {
                *p += lr * g;
            }
        }
        self.updates += 1;
        Ok(())
    }
}

fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exp: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total mass; return the last action with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Scales rewards into [-1, 1] by the largest magnitude; all-zero stays zero.
pub fn normalize_rewards(raw: &[f64]) -> Vec<f64> {
    let scale = raw.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if scale == 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|r| r / scale).collect()
}

/// One candidate's contribution to the policy update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub state: SearchState,
    pub wider_action: usize,
    pub deeper_action: usize,
    pub raw_reward: f64,
    pub normalized_reward: f64,
}

/// The wider and deeper actors, trained independently.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub wider: Actor,
    pub deeper: Actor,
    pub entropy_coef: f64,
}

impl Controller {
    pub fn new(max_wider: usize, max_deeper: usize, cfg: &ActorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            wider: Actor::new(max_wider, cfg, rng.gen()),
            deeper: Actor::new(max_deeper, cfg, rng.gen()),
            entropy_coef: cfg.entropy_coef,
        }
    }

    /// Updates each actor once with its own action component of every
    /// episode. Both actors see the same normalised reward.
    pub fn update(&mut self, episodes: &[Episode]) -> Result<()> {
        if episodes.is_empty() {
            return Err(Error::EmptyBatch("no episodes for policy update"));
        }
        let wider: Vec<_> = episodes
            .iter()
            .map(|e| (e.state, e.wider_action, e.normalized_reward))
            .collect();
        let deeper: Vec<_> = episodes
            .iter()
            .map(|e| (e.state, e.deeper_action, e.normalized_reward))
            .collect();
        self.wider.reinforce_update(&wider, self.entropy_coef)?;
        self.deeper.reinforce_update(&deeper, self.entropy_coef)?;
        Ok(())
    }
}
