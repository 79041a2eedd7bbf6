//! The end-to-end penalized model-based loop: train or accept a frozen
//! bundle, build the embedding index, then alternate synthetic rollouts
//! (penalized by geodesic neighbor distances) with soft Q-learning epochs,
//! evaluating greedily in the real environment after each epoch.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{CompositeField, GeodesicConfig, MetricField};
use crate::gridworld::FourRooms;
use crate::latent::{one_hot, LatentModelBundle, ModelConfig, TrainConfig};
use crate::neighbors::EmbeddingIndex;
use crate::rl::policy::{train_policy, DiscretePolicy, PolicyConfig};
use crate::rl::{encode_dataset, LatentTransition, PenaltyConfig, PenaltyTracker, ReplayBuffers};
use crate::rng::{derive_rng, derive_rng_indexed};
use rand::Rng;

/// Paper-named penalty presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GelatoVariant {
    /// Unskewed composite metric, λ = 1.
    Gelato,
    /// Uncertainty-skewed metric (α_prox = 0.1), λ = 2.
    Uncertainty,
    /// Proximity-skewed metric (α_prox = 0.9), λ = 2.
    Proximity,
}

impl GelatoVariant {
    /// (λ, α_prox) for this variant.
    pub fn penalty_settings(self) -> (f64, Option<f64>) {
        match self {
            GelatoVariant::Gelato => (1.0, None),
            GelatoVariant::Uncertainty => (2.0, Some(0.1)),
            GelatoVariant::Proximity => (2.0, Some(0.9)),
        }
    }

    /// Applies the preset onto a penalty config.
    pub fn apply(self, penalty: &mut PenaltyConfig) {
        let (lambda, alpha) = self.penalty_settings();
        penalty.lambda = lambda;
        penalty.alpha_prox = alpha;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GelatoConfig {
    pub seed: u64,
    /// Rollout/training epochs T.
    pub epochs: usize,
    /// Soft Q-learning steps per epoch.
    pub policy_steps: usize,
    pub eval_episodes: usize,
    pub eval_step_cap: usize,
    /// Euclidean shortlist size M for neighbor queries.
    pub shortlist: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub penalty: PenaltyConfig,
    pub policy: PolicyConfig,
    pub geodesic: GeodesicConfig,
}

impl Default for GelatoConfig {
    fn default() -> Self {
        GelatoConfig {
            seed: 0,
            epochs: 100,
            policy_steps: 1000,
            eval_episodes: 20,
            eval_step_cap: 100,
            shortlist: crate::neighbors::DEFAULT_SHORTLIST,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            penalty: PenaltyConfig::default(),
            policy: PolicyConfig::default(),
            geodesic: GeodesicConfig::default(),
        }
    }
}

/// One CSV row of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean normalized penalty over this epoch's synthetic transitions.
    pub mean_penalty: f64,
    /// Mean penalized reward r̃ over this epoch's synthetic transitions.
    pub mean_reward: f64,
    /// Mean greedy-policy return in the real environment.
    pub eval_return: f64,
    /// Running max of the mean neighbor distance (the normalizer).
    pub max_penalty: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,mean_penalty,mean_reward,eval_return,max_penalty\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.mean_penalty, m.mean_reward, m.eval_return, m.max_penalty
        ));
    }
    out
}

/// Per-transition penalty log entry, aligned with the returned transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyRecord {
    pub r_hat: f64,
    pub r_tilde: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub transitions_added: usize,
    pub mean_penalty: f64,
    pub mean_r_hat: f64,
    pub mean_r_tilde: f64,
    pub fallback_count: usize,
    pub records: Vec<PenaltyRecord>,
}

pub struct GelatoRun {
    pub bundle: LatentModelBundle,
    pub index: EmbeddingIndex,
    pub policy: DiscretePolicy,
    pub metrics: Vec<EpochMetrics>,
}

/// Runs `penalty.rollout_batch` independent model rollouts of horizon
/// `penalty.horizon`, returning the penalized transitions in insertion order.
///
/// Start states are drawn uniformly from the encoded dataset. Each rollout
/// owns an rng derived from (seed, epoch, rollout), so results do not depend
/// on scheduling. With λ = 0 neighbor queries are skipped and the penalty is
/// exactly zero.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    bundle: &LatentModelBundle,
    index: &EmbeddingIndex,
    policy: &DiscretePolicy,
    field: &dyn MetricField,
    penalty: &PenaltyConfig,
    geodesic: &GeodesicConfig,
    tracker: &mut PenaltyTracker,
    data: &[LatentTransition],
    seed: u64,
    epoch: u64,
) -> Result<(Vec<LatentTransition>, RolloutStats)> {
    penalty.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("rollouts need a nonempty data buffer"));
    }
    let d_a = bundle.config.d_a;
    let mut transitions = Vec::with_capacity(penalty.rollout_batch * penalty.horizon);
    let mut records = Vec::with_capacity(penalty.rollout_batch * penalty.horizon);
    let mut sum_penalty = 0.0;
    let mut sum_r_hat = 0.0;
    let mut sum_r_tilde = 0.0;
    let mut fallback_count = 0;
    for b in 0..penalty.rollout_batch {
        let mut rng = derive_rng_indexed(
            seed,
            "gelato/rollout",
            epoch * penalty.rollout_batch as u64 + b as u64,
        );
        let mut z = data[rng.gen_range(0..data.len())].z.clone();
        for _ in 0..penalty.horizon {
            let action = policy.sample_action(&z, &mut rng)?;
            let e = bundle.embed_state_action(&z, &one_hot(action, d_a))?;
            let next_z = bundle.predict_next(&e)?.sample(&mut rng);
            let r_hat = bundle.predict_reward(&e)?.sample(&mut rng)[0];
            let (r_tilde, p, fallback) = if penalty.lambda > 0.0 {
                let hits = index.query(&e, penalty.k, field, geodesic)?;
                let distances: Vec<f64> = hits.iter().map(|h| h.distance).collect();
                let fallback = hits.iter().any(|h| h.fallback);
                let (r_tilde, p) =
                    tracker.penalized_reward(r_hat, &distances, penalty.lambda)?;
                (r_tilde, p, fallback)
            } else {
                (r_hat, 0.0, false)
            };
            if fallback {
                fallback_count += 1;
            }
            sum_penalty += p;
            sum_r_hat += r_hat;
            sum_r_tilde += r_tilde;
            records.push(PenaltyRecord {
                r_hat,
                r_tilde,
                penalty: p,
            });
            transitions.push(LatentTransition {
                z: z.clone(),
                action,
                reward: r_tilde,
                next_z: next_z.clone(),
                done: false,
                fallback,
            });
            z = next_z;
        }
    }
    let count = transitions.len() as f64;
    let stats = RolloutStats {
        transitions_added: transitions.len(),
        mean_penalty: sum_penalty / count,
        mean_r_hat: sum_r_hat / count,
        mean_r_tilde: sum_r_tilde / count,
        fallback_count,
        records,
    };
    Ok((transitions, stats))
}

/// Mean greedy-policy return over seeded evaluation episodes in the real
/// environment. States are encoded with the encoder mean at every step.
pub fn evaluate_policy(
    env: &FourRooms,
    bundle: &LatentModelBundle,
    policy: &DiscretePolicy,
    episodes: usize,
    step_cap: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if episodes == 0 || step_cap == 0 {
        return Err(Error::invalid("evaluation needs episodes and a step cap"));
    }
    let starts: Vec<_> = env
        .free_cells()
        .into_iter()
        .filter(|&c| c != env.goal())
        .collect();
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut cell = starts[rng.gen_range(0..starts.len())];
        for _ in 0..step_cap {
            let s = env.to_ambient(cell);
            let z = bundle.embed_state(&s)?.mu;
            let action = policy.greedy_action(&z)?;
            let out = env.step(cell, action, rng);
            total += out.reward;
            if out.done {
                break;
            }
            cell = out.next;
        }
    }
    Ok(total / episodes as f64)
}

/// Full pipeline on a frozen bundle: build index, then alternate rollouts and
/// policy updates for `cfg.epochs` epochs.
pub fn run_gelato_with_bundle(
    bundle: LatentModelBundle,
    env: &FourRooms,
    dataset: &Dataset,
    cfg: &GelatoConfig,
) -> Result<GelatoRun> {
    cfg.penalty.validate()?;
    if cfg.policy.d_z != bundle.config.d_z {
        return Err(Error::invalid(
            "policy latent dimension does not match the bundle",
        ));
    }
    if cfg.policy.num_actions != bundle.config.d_a {
        return Err(Error::invalid(
            "policy action count does not match the bundle",
        ));
    }
    if cfg.epochs == 0 {
        return Err(Error::invalid("epoch count must be positive"));
    }
    let mut index = EmbeddingIndex::build(&bundle, dataset)?;
    index.set_shortlist_size(cfg.shortlist)?;
    let data = encode_dataset(&bundle, dataset)?;
    let mut buffers = ReplayBuffers::new(data, cfg.penalty.model_capacity)?;
    let mut policy = DiscretePolicy::new(cfg.policy.clone(), cfg.seed)?;
    let mut tracker = PenaltyTracker::new();
    let mut policy_rng = derive_rng(cfg.seed, "gelato/policy");
    let mut metrics = Vec::with_capacity(cfg.epochs);
    {
        let field = match cfg.penalty.alpha_prox {
            None => CompositeField::new(&bundle),
            Some(a) => CompositeField::with_skew(&bundle, a)?,
        };
        for epoch in 0..cfg.epochs {
            let (transitions, stats) = rollout(
                &bundle,
                &index,
                &policy,
                &field,
                &cfg.penalty,
                &cfg.geodesic,
                &mut tracker,
                &buffers.data,
                cfg.seed,
                epoch as u64,
            )?;
            for tr in transitions {
                buffers.model.push(tr);
            }
            train_policy(&buffers, &mut policy, cfg.policy_steps, &mut policy_rng)?;
            let mut eval_rng = derive_rng_indexed(cfg.seed, "gelato/eval", epoch as u64);
            let eval_return = evaluate_policy(
                env,
                &bundle,
                &policy,
                cfg.eval_episodes,
                cfg.eval_step_cap,
                &mut eval_rng,
            )?;
            metrics.push(EpochMetrics {
                epoch,
                mean_penalty: stats.mean_penalty,
                mean_reward: stats.mean_r_tilde,
                eval_return,
                max_penalty: tracker.running_max(),
            });
        }
    }
    Ok(GelatoRun {
        bundle,
        index,
        policy,
        metrics,
    })
}

/// Trains the latent model on the dataset, then runs the penalized loop.
pub fn run_gelato(env: &FourRooms, dataset: &Dataset, cfg: &GelatoConfig) -> Result<GelatoRun> {
    let mut bundle = LatentModelBundle::new(cfg.model.clone(), cfg.seed)?;
    crate::latent::train(&mut bundle, dataset, &cfg.train)?;
    run_gelato_with_bundle(bundle, env, dataset, cfg)
}
