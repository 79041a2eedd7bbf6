//! Discrete soft Q-learning over latent states.
//!
//! The policy is the Boltzmann distribution softmax(Q(z)/temperature). Targets
//! bootstrap through the soft state value V(z') = τ·logsumexp(Q_target(z')/τ),
//! equivalently the softmax-expected target Q plus the temperature-scaled
//! entropy. A Polyak-averaged target network stabilizes the bootstrap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamParams, AdamState, DenseNetwork, ParamGrads};
use crate::checkpoint::TensorStore;
use crate::error::{Error, Result};
use crate::latent::softmax;
use crate::rl::{LatentTransition, ReplayBuffers};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub d_z: usize,
    pub num_actions: usize,
    pub hidden: Vec<usize>,
    /// Soft Q-learning temperature τ.
    pub temperature: f64,
    pub discount: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Polyak coefficient for the target network (1.0 copies outright).
    pub tau: f64,
    /// Gradient steps between target network updates.
    pub target_interval: usize,
    /// |Q| or |target| above this aborts training as diverged.
    pub divergence_threshold: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            d_z: 2,
            num_actions: 4,
            hidden: vec![256, 256],
            temperature: 0.05,
            discount: 0.99,
            learning_rate: 1e-3,
            batch_size: 128,
            tau: 0.01,
            target_interval: 1,
            divergence_threshold: 1e3,
        }
    }
}

impl PolicyConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::format(format!("bad policy config: {e}")))
    }

    fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.num_actions == 0 {
            return Err(Error::invalid("policy dimensions must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::invalid("discount must lie in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau must lie in (0, 1]"));
        }
        if self.target_interval == 0 {
            return Err(Error::invalid("target interval must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DiscretePolicy {
    pub config: PolicyConfig,
    q: DenseNetwork,
    target_q: DenseNetwork,
    opt: AdamState,
    steps: u64,
}

impl DiscretePolicy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut dims = Vec::with_capacity(config.hidden.len() + 2);
        dims.push(config.d_z);
        dims.extend_from_slice(&config.hidden);
        dims.push(config.num_actions);
        let mut rng = derive_rng(seed, "policy/q");
        let q = DenseNetwork::new(&dims, Activation::Tanh, Activation::Identity, &mut rng)?;
        let target_q = q.clone();
        let opt = AdamState::new(q.param_count());
        Ok(DiscretePolicy {
            config,
            q,
            target_q,
            opt,
            steps: 0,
        })
    }

    pub fn q_values(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.q.forward(z)
    }

    /// Boltzmann action distribution softmax(Q(z)/τ); sums to 1.
    pub fn probabilities(&self, z: &[f64]) -> Result<Vec<f64>> {
        let q = self.q.forward(z)?;
        let scaled: Vec<f64> = q.iter().map(|v| v / self.config.temperature).collect();
        Ok(softmax(&scaled))
    }

    pub fn sample_action(&self, z: &[f64], rng: &mut impl Rng) -> Result<usize> {
        let probs = self.probabilities(z)?;
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(a);
            }
        }
        Ok(probs.len() - 1)
    }

    /// Highest-Q action, ties to the lowest index.
    pub fn greedy_action(&self, z: &[f64]) -> Result<usize> {
        let q = self.q.forward(z)?;
        let mut best = 0;
        for (a, v) in q.iter().enumerate() {
            if *v > q[best] {
                best = a;
            }
        }
        Ok(best)
    }

    /// Soft state value τ·logsumexp(Q/τ) under the target network.
    fn target_soft_value(&self, z: &[f64]) -> Result<f64> {
        let q = self.target_q.forward(z)?;
        let tau = self.config.temperature;
        let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = q.iter().map(|v| ((v - max) / tau).exp()).sum();
        Ok(max + tau * sum.ln())
    }

    /// One minibatch update. Returns the mean squared Bellman error.
    pub fn train_step(&mut self, batch: &[&LatentTransition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty policy batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = ParamGrads::zeros_like(&self.q);
        let mut loss = 0.0;
        for tr in batch {
            let target = if tr.done {
                tr.reward
            } else {
                tr.reward + self.config.discount * self.target_soft_value(&tr.next_z)?
            };
            if !target.is_finite() {
                return Err(Error::non_finite("soft Q target"));
            }
            if target.abs() > self.config.divergence_threshold {
                return Err(Error::Divergence {
                    context: "soft Q target",
                    value: target,
                });
            }
            let (q_row, trace) = self.q.forward_traced(&tr.z)?;
            let predicted = q_row[tr.action];
            if !predicted.is_finite() {
                return Err(Error::non_finite("Q value"));
            }
            if predicted.abs() > self.config.divergence_threshold {
                return Err(Error::Divergence {
                    context: "Q value",
                    value: predicted,
                });
            }
            let err = predicted - target;
            loss += err * err * scale;
            let mut delta = vec![0.0; self.config.num_actions];
            delta[tr.action] = 2.0 * err * scale;
            self.q.backward_accumulate(&trace, &mut delta, &mut grads);
        }
        self.opt.step(
            &AdamParams::with_lr(self.config.learning_rate),
            self.q.params_mut(),
            grads.iter(),
        );
        self.steps += 1;
        if self.steps % self.config.target_interval as u64 == 0 {
            let tau = self.config.tau;
            for (t, s) in self.target_q.params_mut().zip(self.q.params()) {
                *t = (1.0 - tau) * *t + tau * s;
            }
        }
        Ok(loss)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Tensor container with both Q networks and the config header.
    pub fn to_store(&self) -> TensorStore {
        let mut store = TensorStore::new(self.config.to_json());
        crate::latent::net_to_store(&mut store, "q", &self.q);
        crate::latent::net_to_store(&mut store, "target_q", &self.target_q);
        store
    }

    pub fn from_store(store: &TensorStore) -> Result<Self> {
        let config = PolicyConfig::from_json(store.config_json())?;
        let mut policy = DiscretePolicy::new(config, 0)?;
        crate::latent::net_from_store(store, "q", &mut policy.q)?;
        crate::latent::net_from_store(store, "target_q", &mut policy.target_q)?;
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_store().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_store(&TensorStore::load(path)?)
    }

    #[cfg(test)]
    pub(crate) fn q_net(&self) -> &DenseNetwork {
        &self.q
    }

    #[cfg(test)]
    pub(crate) fn q_net_mut(&mut self) -> &mut DenseNetwork {
        &mut self.q
    }

    #[cfg(test)]
    pub(crate) fn target_net(&self) -> &DenseNetwork {
        &self.target_q
    }
}

/// Runs `steps` soft Q-learning updates on 50/50 mixed batches. Returns the
/// per-step losses.
pub fn train_policy(
    buffers: &ReplayBuffers,
    policy: &mut DiscretePolicy,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch = buffers.sample_batch(policy.config.batch_size, rng)?;
        losses.push(policy.train_step(&batch)?);
    }
    Ok(losses)
}
