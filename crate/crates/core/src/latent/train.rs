//! Two-phase training loop for the latent model.
//!
//! Phase 1 minimizes the window ELBO with a per-batch calibrated constant
//! decoder sigma (recomputed from the batch reconstruction MSE before every
//! gradient step, never trained through). Phase 2 freezes everything and fits
//! a state-dependent decoder deviation: either the sigma network by NLL
//! descent, or the RBF precision head.

use rand::Rng;

use crate::autodiff::{AdamParams, AdamState, ParamGrads};
use crate::dataset::{Dataset, Transition};
use crate::error::{Error, Result};
use crate::latent::elbo::{
    elbo_window, sigma_fit_sample, BundleGrads, DecoderSigma, ElboBreakdown, WindowNoise,
};
use crate::latent::{sigma_from_mse, DecoderSigmaMode, LatentModelBundle, RbfVarianceHead, SIGMA_MAX};
use crate::rng::derive_rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTwoMode {
    /// Leave the calibrated constant sigma in place.
    Skip,
    /// Fit the decoder sigma network by NLL descent with the rest frozen.
    SigmaNetwork,
    /// Fit the RBF precision head on mean codes and residuals.
    Rbf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub steps_phase1: usize,
    pub steps_phase2: usize,
    /// Transitions per ELBO window.
    pub horizon: usize,
    pub learning_rate: f64,
    /// Momentum coefficient for the target encoder (1.0 copies outright).
    pub tau: f64,
    /// Gradient steps between target encoder updates.
    pub target_interval: usize,
    pub phase_two: PhaseTwoMode,
    pub rbf_clusters: usize,
    /// Multiplier on the RBF kernel length scales; values below one sharpen
    /// the precision falloff around the data.
    pub rbf_bandwidth_scale: f64,
    /// Loss above this aborts training with a divergence error.
    pub divergence_threshold: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 128,
            steps_phase1: 2000,
            steps_phase2: 500,
            horizon: 2,
            learning_rate: 1e-3,
            tau: 0.01,
            target_interval: 1,
            phase_two: PhaseTwoMode::SigmaNetwork,
            rbf_clusters: 128,
            rbf_bandwidth_scale: 1.0,
            divergence_threshold: 1e6,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// (step, batch-averaged loss components), every `log_every` steps.
    pub phase1: Vec<(usize, ElboBreakdown)>,
    /// (step, batch-averaged sigma-fit NLL).
    pub phase2: Vec<(usize, f64)>,
    /// Full-dataset calibrated sigma stored after phase 1.
    pub calibrated_sigma: Vec<f64>,
}

struct Optimizers {
    params: AdamParams,
    encoder_mu: AdamState,
    encoder_sigma: AdamState,
    embedding: AdamState,
    forward_mu: AdamState,
    forward_sigma: AdamState,
    decoder_mu: AdamState,
    reward_mu: AdamState,
    reward_sigma: AdamState,
    behavior: AdamState,
}

impl Optimizers {
    fn new(bundle: &LatentModelBundle, lr: f64) -> Self {
        Optimizers {
            params: AdamParams::with_lr(lr),
            encoder_mu: AdamState::new(bundle.encoder.mu.param_count()),
            encoder_sigma: AdamState::new(bundle.encoder.sigma.param_count()),
            embedding: AdamState::new(bundle.embedding.param_count()),
            forward_mu: AdamState::new(bundle.forward_model.mu.param_count()),
            forward_sigma: AdamState::new(bundle.forward_model.sigma.param_count()),
            decoder_mu: AdamState::new(bundle.decoder.mu.param_count()),
            reward_mu: AdamState::new(bundle.reward.mu.param_count()),
            reward_sigma: AdamState::new(bundle.reward.sigma.param_count()),
            behavior: AdamState::new(bundle.behavior.param_count()),
        }
    }

    fn apply(&mut self, bundle: &mut LatentModelBundle, grads: &BundleGrads) {
        let p = &self.params;
        self.encoder_mu
            .step(p, bundle.encoder.mu.params_mut(), grads.encoder_mu.iter());
        self.encoder_sigma
            .step(p, bundle.encoder.sigma.params_mut(), grads.encoder_sigma.iter());
        self.embedding
            .step(p, bundle.embedding.params_mut(), grads.embedding.iter());
        self.forward_mu
            .step(p, bundle.forward_model.mu.params_mut(), grads.forward_mu.iter());
        self.forward_sigma.step(
            p,
            bundle.forward_model.sigma.params_mut(),
            grads.forward_sigma.iter(),
        );
        self.decoder_mu
            .step(p, bundle.decoder.mu.params_mut(), grads.decoder_mu.iter());
        self.reward_mu
            .step(p, bundle.reward.mu.params_mut(), grads.reward_mu.iter());
        self.reward_sigma
            .step(p, bundle.reward.sigma.params_mut(), grads.reward_sigma.iter());
        self.behavior
            .step(p, bundle.behavior.params_mut(), grads.behavior.iter());
    }
}

pub fn train(
    bundle: &mut LatentModelBundle,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.d_s != bundle.config.d_s || dataset.d_a != bundle.config.d_a {
        return Err(Error::invalid("dataset dimensions do not match the model"));
    }
    if cfg.batch_size == 0 || cfg.horizon == 0 || cfg.target_interval == 0 {
        return Err(Error::invalid(
            "batch_size, horizon, and target_interval must be positive",
        ));
    }
    if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
        return Err(Error::invalid("tau must lie in (0, 1]"));
    }
    let starts = dataset.window_starts(cfg.horizon);
    if starts.is_empty() {
        return Err(Error::invalid(
            "dataset has no window of the requested horizon",
        ));
    }

    let mut report = TrainReport {
        phase1: Vec::new(),
        phase2: Vec::new(),
        calibrated_sigma: bundle.calibrated_sigma.clone(),
    };
    let mut opt = Optimizers::new(bundle, cfg.learning_rate);
    let mut batch_rng = derive_rng(cfg.seed, "train/batch");
    let mut noise_rng = derive_rng(cfg.seed, "train/noise");
    let d_z = bundle.config.d_z;
    let d_s = bundle.config.d_s;

    for step in 0..cfg.steps_phase1 {
        let windows: Vec<&[Transition]> = (0..cfg.batch_size)
            .map(|_| {
                let s = starts[batch_rng.gen_range(0..starts.len())];
                &dataset.transitions[s..s + cfg.horizon]
            })
            .collect();
        let noises: Vec<WindowNoise> = (0..cfg.batch_size)
            .map(|_| WindowNoise::draw(&mut noise_rng, cfg.horizon, d_z))
            .collect();

        // Per-batch sigma calibration from reconstruction MSE at the same
        // sampled latents the gradient pass will see.
        let mut sum_sq = vec![0.0; d_s];
        let mut count = 0usize;
        for (window, noise) in windows.iter().zip(&noises) {
            for i in 0..=cfg.horizon {
                let s = if i < cfg.horizon {
                    &window[i].state
                } else {
                    &window[cfg.horizon - 1].next_state
                };
                let q = bundle.embed_state(s)?;
                let z = q.sample_with_noise(&noise.eps[i]);
                let mu = bundle.decoder.mu.forward(&z)?;
                for (acc, (&m, &x)) in sum_sq.iter_mut().zip(mu.iter().zip(s.iter())) {
                    *acc += (m - x) * (m - x);
                }
                count += 1;
            }
        }
        let sigma_star = sigma_from_mse(&sum_sq, count as f64);

        let mut grads = BundleGrads::zeros_like(bundle);
        let mut breakdown = ElboBreakdown::default();
        for (window, noise) in windows.iter().zip(&noises) {
            elbo_window(
                bundle,
                window,
                DecoderSigma::Fixed(&sigma_star),
                noise,
                &mut grads,
                &mut breakdown,
            )?;
        }
        let scale = 1.0 / cfg.batch_size as f64;
        grads.scale(scale);
        breakdown.scale(scale);

        if let Some(name) = breakdown.non_finite_component() {
            return Err(Error::non_finite(format!("elbo {name}")));
        }
        let total = breakdown.total();
        if total > cfg.divergence_threshold {
            return Err(Error::Divergence {
                context: "phase-1 elbo",
                value: total,
            });
        }

        opt.apply(bundle, &grads);
        if (step + 1) % cfg.target_interval == 0 {
            bundle.update_target_encoder(cfg.tau);
        }
        if step % cfg.log_every == 0 || step + 1 == cfg.steps_phase1 {
            report.phase1.push((step, breakdown));
        }
    }

    bundle.calibrated_sigma = bundle.calibrate_decoder_sigma(dataset)?;
    bundle.config.decoder_sigma_mode = DecoderSigmaMode::Calibrated;
    report.calibrated_sigma = bundle.calibrated_sigma.clone();

    match cfg.phase_two {
        PhaseTwoMode::Skip => {}
        PhaseTwoMode::SigmaNetwork => {
            let mut sigma_opt = AdamState::new(bundle.decoder.sigma.param_count());
            let mut rng = derive_rng(cfg.seed, "train/phase2");
            for step in 0..cfg.steps_phase2 {
                let mut grads = ParamGrads::zeros_like(&bundle.decoder.sigma);
                let mut loss = 0.0;
                for _ in 0..cfg.batch_size {
                    let t = &dataset.transitions[rng.gen_range(0..dataset.len())];
                    let eps: Vec<f64> =
                        (0..d_z).map(|_| crate::latent::standard_normal(&mut rng)).collect();
                    loss += sigma_fit_sample(bundle, &t.state, &eps, &mut grads)?;
                }
                let scale = 1.0 / cfg.batch_size as f64;
                grads.scale(scale);
                loss *= scale;
                if !loss.is_finite() {
                    return Err(Error::non_finite("phase-2 sigma fit"));
                }
                if loss > cfg.divergence_threshold {
                    return Err(Error::Divergence {
                        context: "phase-2 sigma fit",
                        value: loss,
                    });
                }
                sigma_opt.step(&opt.params, bundle.decoder.sigma.params_mut(), grads.iter());
                if step % cfg.log_every == 0 || step + 1 == cfg.steps_phase2 {
                    report.phase2.push((step, loss));
                }
            }
            bundle.config.decoder_sigma_mode = DecoderSigmaMode::Network;
        }
        PhaseTwoMode::Rbf => {
            let mut codes = Vec::with_capacity(dataset.len());
            let mut residual_sq = Vec::with_capacity(dataset.len());
            for t in &dataset.transitions {
                let z = bundle.embed_state(&t.state)?.mu;
                let mu = bundle.decoder.mu.forward(&z)?;
                residual_sq.push(
                    mu.iter()
                        .zip(&t.state)
                        .map(|(&m, &s)| (m - s) * (m - s))
                        .collect::<Vec<f64>>(),
                );
                codes.push(z);
            }
            bundle.rbf = Some(RbfVarianceHead::fit(
                &codes,
                &residual_sq,
                cfg.rbf_clusters,
                cfg.rbf_bandwidth_scale,
                SIGMA_MAX,
                cfg.steps_phase2,
                cfg.seed,
            )?);
            bundle.config.decoder_sigma_mode = DecoderSigmaMode::Rbf;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{BehaviorPolicy, FourRooms};
    use crate::latent::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_s: 2,
            d_a: 4,
            d_z: 2,
            hidden: vec![16],
            coupling_layers: 2,
            coupling_hidden: vec![8],
            ..ModelConfig::default()
        }
    }

    fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        let env = FourRooms::default_layout();
        env.generate_dataset(n, BehaviorPolicy::UniformRandom, 30, seed)
            .unwrap()
    }

    #[test]
    fn training_reduces_the_elbo() {
        let dataset = tiny_dataset(400, 3);
        let mut bundle = LatentModelBundle::new(tiny_config(), 3).unwrap();
        let cfg = TrainConfig {
            seed: 3,
            batch_size: 16,
            steps_phase1: 150,
            steps_phase2: 0,
            horizon: 2,
            phase_two: PhaseTwoMode::Skip,
            log_every: 10,
            ..TrainConfig::default()
        };
        let report = train(&mut bundle, &dataset, &cfg).unwrap();
        assert!(report.phase1.len() >= 6);
        let head: f64 = report.phase1[..3].iter().map(|(_, b)| b.total()).sum::<f64>() / 3.0;
        let tail: f64 = report.phase1[report.phase1.len() - 3..]
            .iter()
            .map(|(_, b)| b.total())
            .sum::<f64>()
            / 3.0;
        assert!(
            tail < head,
            "loss should trend down: first {head}, last {tail}"
        );
        assert!(report.calibrated_sigma.iter().all(|&s| s >= crate::latent::SIGMA_MIN));
    }

    #[test]
    fn tau_one_collapses_target_to_online() {
        let dataset = tiny_dataset(120, 5);
        let mut bundle = LatentModelBundle::new(tiny_config(), 5).unwrap();
        let cfg = TrainConfig {
            seed: 5,
            batch_size: 8,
            steps_phase1: 3,
            steps_phase2: 0,
            horizon: 1,
            tau: 1.0,
            phase_two: PhaseTwoMode::Skip,
            ..TrainConfig::default()
        };
        train(&mut bundle, &dataset, &cfg).unwrap();
        let online: Vec<f64> = bundle.encoder.mu.params().collect();
        let target: Vec<f64> = bundle.target_encoder.mu.params().collect();
        assert_eq!(online, target);
    }

    #[test]
    fn small_tau_leaves_target_lagging() {
        let dataset = tiny_dataset(120, 6);
        let mut bundle = LatentModelBundle::new(tiny_config(), 6).unwrap();
        let cfg = TrainConfig {
            seed: 6,
            batch_size: 8,
            steps_phase1: 5,
            steps_phase2: 0,
            horizon: 1,
            tau: 0.01,
            phase_two: PhaseTwoMode::Skip,
            ..TrainConfig::default()
        };
        train(&mut bundle, &dataset, &cfg).unwrap();
        let online: Vec<f64> = bundle.encoder.mu.params().collect();
        let target: Vec<f64> = bundle.target_encoder.mu.params().collect();
        assert_ne!(online, target);
        // The target started equal to the online net and moves toward it.
        let max_gap = online
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap < 0.1, "target should stay close, gap {max_gap}");
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = tiny_dataset(200, 7);
        let cfg = TrainConfig {
            seed: 7,
            batch_size: 8,
            steps_phase1: 30,
            steps_phase2: 10,
            horizon: 2,
            phase_two: PhaseTwoMode::SigmaNetwork,
            ..TrainConfig::default()
        };
        let mut a = LatentModelBundle::new(tiny_config(), 7).unwrap();
        let mut b = a.clone();
        train(&mut a, &dataset, &cfg).unwrap();
        train(&mut b, &dataset, &cfg).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn runaway_learning_rate_trips_the_divergence_guard() {
        let dataset = tiny_dataset(120, 8);
        let mut bundle = LatentModelBundle::new(tiny_config(), 8).unwrap();
        let cfg = TrainConfig {
            seed: 8,
            batch_size: 8,
            steps_phase1: 50,
            steps_phase2: 0,
            horizon: 1,
            learning_rate: 1e4,
            phase_two: PhaseTwoMode::Skip,
            ..TrainConfig::default()
        };
        let err = train(&mut bundle, &dataset, &cfg).unwrap_err();
        assert!(err.is_numerical(), "expected a numerical failure, got {err}");
    }

    #[test]
    fn phase_two_switches_the_sigma_mode() {
        let dataset = tiny_dataset(200, 9);
        let mut bundle = LatentModelBundle::new(tiny_config(), 9).unwrap();
        let cfg = TrainConfig {
            seed: 9,
            batch_size: 8,
            steps_phase1: 20,
            steps_phase2: 20,
            horizon: 2,
            phase_two: PhaseTwoMode::SigmaNetwork,
            ..TrainConfig::default()
        };
        train(&mut bundle, &dataset, &cfg).unwrap();
        assert_eq!(bundle.config.decoder_sigma_mode, DecoderSigmaMode::Network);
        let sigma = bundle.decoder_sigma(&[0.0, 0.0]).unwrap();
        assert!(sigma.iter().all(|&s| s.is_finite() && s >= crate::latent::SIGMA_MIN));
    }

    #[test]
    fn phase_two_rbf_fits_a_head() {
        let dataset = tiny_dataset(200, 10);
        let mut bundle = LatentModelBundle::new(tiny_config(), 10).unwrap();
        let cfg = TrainConfig {
            seed: 10,
            batch_size: 8,
            steps_phase1: 20,
            steps_phase2: 50,
            horizon: 2,
            phase_two: PhaseTwoMode::Rbf,
            rbf_clusters: 16,
            ..TrainConfig::default()
        };
        train(&mut bundle, &dataset, &cfg).unwrap();
        assert_eq!(bundle.config.decoder_sigma_mode, DecoderSigmaMode::Rbf);
        let head = bundle.rbf.as_ref().unwrap();
        assert!(head.weights.iter().all(|&w| w > 0.0));
        // Round-trip through the checkpoint keeps the head.
        let restored = LatentModelBundle::from_store(&bundle.to_store()).unwrap();
        assert!(restored.rbf.is_some());
        assert_eq!(bundle.fingerprint(), restored.fingerprint());
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let dataset = tiny_dataset(50, 11);
        let mut config = tiny_config();
        config.d_s = 3;
        let mut bundle = LatentModelBundle::new(config, 11).unwrap();
        assert!(train(&mut bundle, &dataset, &TrainConfig::default()).is_err());
    }
}
