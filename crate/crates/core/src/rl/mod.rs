//! Geodesic-penalized model-based offline RL.
//!
//! Synthetic rollouts from the latent forward model receive rewards penalized
//! by the mean geodesic distance to the K nearest dataset embeddings; a
//! discrete soft Q-learning policy trains on a 50/50 mix of real and
//! synthetic latent transitions.

pub mod gelato;
pub mod policy;

pub use gelato::{
    evaluate_policy, metrics_csv, rollout, run_gelato, run_gelato_with_bundle, EpochMetrics,
    GelatoConfig, GelatoRun, GelatoVariant, PenaltyRecord, RolloutStats,
};
pub use policy::{train_policy, DiscretePolicy, PolicyConfig};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::latent::{action_index, LatentModelBundle};
use rand::Rng;

/// Knobs of the penalized latent MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// Reward penalty coefficient λ; 0 disables neighbor queries entirely.
    pub lambda: f64,
    /// Neighbor count K for the distance penalty.
    pub k: usize,
    /// Skew α_prox toward the proximity metric; `None` uses the unskewed
    /// composite metric.
    pub alpha_prox: Option<f64>,
    /// Model rollout horizon h.
    pub horizon: usize,
    /// Rollouts per epoch b.
    pub rollout_batch: usize,
    /// Ring-buffer capacity of the synthetic replay buffer.
    pub model_capacity: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda: 1.0,
            k: 20,
            alpha_prox: None,
            horizon: 5,
            rollout_batch: 50,
            model_capacity: 50_000,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be nonnegative and finite"));
        }
        if self.k == 0 {
            return Err(Error::invalid("neighbor count K must be positive"));
        }
        if let Some(a) = self.alpha_prox {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!(
                    "alpha_prox must lie in [0, 1], got {a}"
                )));
            }
        }
        if self.horizon == 0 {
            return Err(Error::invalid("rollout horizon must be positive"));
        }
        if self.rollout_batch == 0 {
            return Err(Error::invalid("rollout batch must be positive"));
        }
        if self.model_capacity == 0 {
            return Err(Error::invalid("model buffer capacity must be positive"));
        }
        Ok(())
    }
}

/// Running-max penalty normalizer: the largest mean neighbor distance seen so
/// far divides every subsequent mean, keeping applied penalties in [0, 1].
#[derive(Debug, Clone, Default)]
pub struct PenaltyTracker {
    running_max: f64,
}

impl PenaltyTracker {
    pub fn new() -> Self {
        PenaltyTracker { running_max: 0.0 }
    }

    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    /// r̃ = r̂ − λ·p with p the running-max-normalized mean of `distances`.
    /// The running max is updated before normalizing, so p ∈ [0, 1] always.
    /// Returns (r̃, p).
    pub fn penalized_reward(
        &mut self,
        r_hat: f64,
        distances: &[f64],
        lambda: f64,
    ) -> Result<(f64, f64)> {
        if distances.is_empty() {
            return Err(Error::invalid("penalty needs at least one distance"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda must be nonnegative and finite"));
        }
        if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("distances must be finite and nonnegative"));
        }
        if !r_hat.is_finite() {
            return Err(Error::non_finite("penalized reward input"));
        }
        let mean = distances.iter().sum::<f64>() / distances.len() as f64;
        self.running_max = self.running_max.max(mean);
        let penalty = if self.running_max > 0.0 {
            mean / self.running_max
        } else {
            0.0
        };
        Ok((r_hat - lambda * penalty, penalty))
    }
}

/// One latent-space transition usable by the policy learner. Real dataset
/// transitions carry their normalized reward; synthetic transitions carry the
/// penalized reward and a flag when any neighbor distance came from the
/// straight-line fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTransition {
    pub z: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_z: Vec<f64>,
    pub done: bool,
    pub fallback: bool,
}

/// Fixed-capacity ring buffer over synthetic transitions.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    entries: Vec<LatentTransition>,
    capacity: usize,
    next: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Self {
        RingBuffer {
            entries: Vec::new(),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts one entry, overwriting the oldest once full.
    pub fn push(&mut self, entry: LatentTransition) {
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            self.entries[self.next] = entry;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &LatentTransition {
        &self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &LatentTransition> {
        self.entries.iter()
    }
}

/// The two Alg.-style replay buffers: the latent-encoded offline dataset and
/// the synthetic model buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffers {
    pub data: Vec<LatentTransition>,
    pub model: RingBuffer,
}

impl ReplayBuffers {
    pub fn new(data: Vec<LatentTransition>, model_capacity: usize) -> Result<Self> {
        if model_capacity == 0 {
            return Err(Error::invalid("model buffer capacity must be positive"));
        }
        Ok(ReplayBuffers {
            data,
            model: RingBuffer::new(model_capacity),
        })
    }

    /// Draws `batch` transitions, half from each buffer (the data buffer
    /// takes the odd one). Errors when either buffer is empty.
    pub fn sample_batch<'a>(
        &'a self,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<&'a LatentTransition>> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.data.is_empty() || self.model.is_empty() {
            return Err(Error::invalid(
                "policy training needs both replay buffers nonempty",
            ));
        }
        let from_model = batch / 2;
        let from_data = batch - from_model;
        let mut out = Vec::with_capacity(batch);
        for _ in 0..from_data {
            out.push(&self.data[rng.gen_range(0..self.data.len())]);
        }
        for _ in 0..from_model {
            out.push(self.model.get(rng.gen_range(0..self.model.len())));
        }
        Ok(out)
    }
}

/// Encodes every dataset transition to latent space with the encoder mean.
/// A transition is terminal when its raw (denormalized) reward is the unit
/// goal reward.
pub fn encode_dataset(bundle: &LatentModelBundle, dataset: &Dataset) -> Result<Vec<LatentTransition>> {
    if dataset.d_s != bundle.config.d_s || dataset.d_a != bundle.config.d_a {
        return Err(Error::invalid(
            "dataset dimensions do not match the model bundle",
        ));
    }
    let mut out = Vec::with_capacity(dataset.len());
    for tr in &dataset.transitions {
        let z = bundle.embed_state(&tr.state)?.mu;
        let next_z = bundle.embed_state(&tr.next_state)?.mu;
        let action = action_index(&tr.action)?;
        let done = dataset.denormalize_reward(tr.reward) > 0.5;
        out.push(LatentTransition {
            z,
            action,
            reward: tr.reward,
            next_z,
            done,
            fallback: false,
        });
    }
    Ok(out)
}
