//! Variational latent dynamics model.
//!
//! The bundle holds six learnable components: a Gaussian encoder q(z|s), a
//! momentum copy of it used as the transition-KL target, an invertible
//! state-action embedding E(z, a), a Gaussian latent forward model
//! P(z'|e), a Gaussian decoder P(s|z), a Gaussian reward head P(r|e), and a
//! categorical behavior head pi(a|s). Every Gaussian head keeps separate mu
//! and sigma networks; sigma networks end in softplus and the head adds a
//! 0.01 floor, so predicted deviations never collapse below the minimum.

mod elbo;
mod rbf;
mod train;

pub use elbo::{elbo_window, sigma_fit_sample, BundleGrads, DecoderSigma, ElboBreakdown, WindowNoise};
pub(crate) use elbo::softmax;
pub use rbf::RbfVarianceHead;
pub use train::{train, PhaseTwoMode, TrainConfig, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AffineCoupling, DenseNetwork};
use crate::checkpoint::TensorStore;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Hard floor applied to every predicted standard deviation.
pub const SIGMA_MIN: f64 = 0.01;

/// Cap for the RBF head's deviation, reached when its precision underflows.
pub const SIGMA_MAX: f64 = 10.0;

/// Integrity tolerance for the embedding round trip.
pub const INVERSION_TOLERANCE: f64 = 1e-5;

const LOG_2PI: f64 = 1.8378770664093453;

/// Mean and per-dimension standard deviation of a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianParams {
    /// Reparameterized draw mu + sigma * eps with eps ~ N(0, I).
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(&m, &s)| m + s * standard_normal(rng))
            .collect()
    }

    pub fn sample_with_noise(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(eps)
            .map(|((&m, &s), &e)| m + s * e)
            .collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(x)
            .map(|((&m, &s), &v)| {
                let z = (v - m) / s;
                -s.ln() - 0.5 * (LOG_2PI + z * z)
            })
            .sum()
    }
}

/// One standard normal draw by Box-Muller, consuming exactly two uniforms.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// KL(p || q) between diagonal Gaussians, in closed form.
pub fn gaussian_kl(p: &GaussianParams, q: &GaussianParams) -> f64 {
    p.mu
        .iter()
        .zip(&p.sigma)
        .zip(q.mu.iter().zip(&q.sigma))
        .map(|((&m1, &s1), (&m2, &s2))| {
            (s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5
        })
        .sum()
}

/// KL(p || N(0, I)).
pub fn gaussian_kl_prior(p: &GaussianParams) -> f64 {
    p.mu
        .iter()
        .zip(&p.sigma)
        .map(|(&m, &s)| -s.ln() + (s * s + m * m) / 2.0 - 0.5)
        .sum()
}

/// Gaussian head with independent mu and sigma networks.
#[derive(Debug, Clone)]
pub struct GaussianNet {
    pub(crate) mu: DenseNetwork,
    pub(crate) sigma: DenseNetwork,
}

impl GaussianNet {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        Ok(GaussianNet {
            mu: DenseNetwork::new(&dims, Activation::Tanh, Activation::Identity, rng)?,
            sigma: DenseNetwork::new(&dims, Activation::Tanh, Activation::Softplus, rng)?,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<GaussianParams> {
        let mu = self.mu.forward(x)?;
        let sigma = self
            .sigma
            .forward(x)?
            .into_iter()
            .map(|v| v + SIGMA_MIN)
            .collect();
        Ok(GaussianParams { mu, sigma })
    }

    pub fn mu_net(&self) -> &DenseNetwork {
        &self.mu
    }

    pub fn sigma_net(&self) -> &DenseNetwork {
        &self.sigma
    }
}

/// How the decoder's standard deviation is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderSigmaMode {
    /// Constant per-dimension value from maximum-likelihood calibration.
    Calibrated,
    /// The decoder's sigma network (fitted in phase 2).
    Network,
    /// Radial-basis-function inverse-precision head (fitted in phase 2).
    Rbf,
}

/// Architecture description; serialized into checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_s: usize,
    pub d_a: usize,
    pub d_z: usize,
    pub hidden: Vec<usize>,
    pub coupling_layers: usize,
    pub coupling_hidden: Vec<usize>,
    pub sigma_min: f64,
    pub decoder_sigma_mode: DecoderSigmaMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_s: 2,
            d_a: 4,
            d_z: 2,
            hidden: vec![256, 256],
            coupling_layers: 2,
            coupling_hidden: vec![256],
            sigma_min: SIGMA_MIN,
            decoder_sigma_mode: DecoderSigmaMode::Calibrated,
        }
    }
}

impl ModelConfig {
    pub fn d_e(&self) -> usize {
        self.d_z + self.d_a
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::format(format!("bad model config: {e}")))
    }
}

/// The full latent model.
#[derive(Debug, Clone)]
pub struct LatentModelBundle {
    pub config: ModelConfig,
    pub encoder: GaussianNet,
    pub target_encoder: GaussianNet,
    pub embedding: AffineCoupling,
    pub forward_model: GaussianNet,
    pub decoder: GaussianNet,
    pub reward: GaussianNet,
    pub behavior: DenseNetwork,
    /// Per-dimension decoder sigma in `Calibrated` mode.
    pub calibrated_sigma: Vec<f64>,
    pub rbf: Option<RbfVarianceHead>,
}

impl LatentModelBundle {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.d_s == 0 || config.d_a == 0 || config.d_z == 0 {
            return Err(Error::invalid("model dimensions must be nonzero"));
        }
        if config.sigma_min <= 0.0 {
            return Err(Error::invalid("sigma_min must be positive"));
        }
        let d_e = config.d_e();
        let encoder = GaussianNet::new(
            config.d_s,
            &config.hidden,
            config.d_z,
            &mut derive_rng(seed, "model/encoder"),
        )?;
        let target_encoder = encoder.clone();
        let embedding = AffineCoupling::new(
            d_e,
            config.coupling_layers,
            &config.coupling_hidden,
            &mut derive_rng(seed, "model/embedding"),
        )?;
        let forward_model = GaussianNet::new(
            d_e,
            &config.hidden,
            config.d_z,
            &mut derive_rng(seed, "model/forward"),
        )?;
        let decoder = GaussianNet::new(
            config.d_z,
            &config.hidden,
            config.d_s,
            &mut derive_rng(seed, "model/decoder"),
        )?;
        let reward = GaussianNet::new(d_e, &config.hidden, 1, &mut derive_rng(seed, "model/reward"))?;
        let mut dims = Vec::with_capacity(config.hidden.len() + 2);
        dims.push(config.d_s);
        dims.extend_from_slice(&config.hidden);
        dims.push(config.d_a);
        let behavior = DenseNetwork::new(
            &dims,
            Activation::Tanh,
            Activation::Identity,
            &mut derive_rng(seed, "model/behavior"),
        )?;
        let calibrated_sigma = vec![1.0; config.d_s];
        Ok(LatentModelBundle {
            config,
            encoder,
            target_encoder,
            embedding,
            forward_model,
            decoder,
            reward,
            behavior,
            calibrated_sigma,
            rbf: None,
        })
    }

    pub fn d_e(&self) -> usize {
        self.config.d_e()
    }

    /// Posterior q(z|s) from the online encoder.
    pub fn embed_state(&self, s: &[f64]) -> Result<GaussianParams> {
        self.encoder.forward(s)
    }

    /// Posterior from the momentum (target) encoder.
    pub fn embed_state_target(&self, s: &[f64]) -> Result<GaussianParams> {
        self.target_encoder.forward(s)
    }

    /// Bijective state-action embedding e = E(z, a), verified by inverting
    /// back to the input; a residual above 1e-5 is an integrity error.
    pub fn embed_state_action(&self, z: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.config.d_z {
            return Err(Error::DimensionMismatch {
                context: "embed_state_action z",
                expected: self.config.d_z,
                actual: z.len(),
            });
        }
        if a.len() != self.config.d_a {
            return Err(Error::DimensionMismatch {
                context: "embed_state_action a",
                expected: self.config.d_a,
                actual: a.len(),
            });
        }
        let mut x = Vec::with_capacity(self.d_e());
        x.extend_from_slice(z);
        x.extend_from_slice(a);
        let e = self.embedding.forward(&x)?;
        let back = self.embedding.inverse(&e)?;
        let residual = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual > INVERSION_TOLERANCE {
            return Err(Error::InversionIntegrity { residual });
        }
        Ok(e)
    }

    /// Latent transition distribution P(z'|e).
    pub fn predict_next(&self, e: &[f64]) -> Result<GaussianParams> {
        self.forward_model.forward(e)
    }

    /// Scalar reward distribution P(r|e) over normalized rewards.
    pub fn predict_reward(&self, e: &[f64]) -> Result<GaussianParams> {
        self.reward.forward(e)
    }

    /// Decoder sigma for the active mode, floored at sigma_min elementwise.
    pub fn decoder_sigma(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self.config.decoder_sigma_mode {
            DecoderSigmaMode::Calibrated => Ok(self.calibrated_sigma.clone()),
            DecoderSigmaMode::Network => Ok(self
                .decoder
                .sigma
                .forward(z)?
                .into_iter()
                .map(|v| v + SIGMA_MIN)
                .collect()),
            DecoderSigmaMode::Rbf => {
                let head = self
                    .rbf
                    .as_ref()
                    .ok_or_else(|| Error::invalid("decoder_sigma_mode is rbf but no head is fitted"))?;
                Ok(head
                    .sigma(z)?
                    .into_iter()
                    .map(|v| v.max(SIGMA_MIN))
                    .collect())
            }
        }
    }

    /// Observation distribution P(s|z).
    pub fn decode(&self, z: &[f64]) -> Result<GaussianParams> {
        let mu = self.decoder.mu.forward(z)?;
        let sigma = self.decoder_sigma(z)?;
        Ok(GaussianParams { mu, sigma })
    }

    pub fn behavior_logits(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.behavior.forward(s)
    }

    /// Moves the target encoder toward the online encoder:
    /// theta_target <- (1 - tau) * theta_target + tau * theta_online.
    pub fn update_target_encoder(&mut self, tau: f64) {
        for (t, o) in self
            .target_encoder
            .mu
            .params_mut()
            .zip(self.encoder.mu.params())
        {
            *t = (1.0 - tau) * *t + tau * o;
        }
        for (t, o) in self
            .target_encoder
            .sigma
            .params_mut()
            .zip(self.encoder.sigma.params())
        {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }

    /// Maximum-likelihood constant decoder sigma over a dataset, using mean
    /// encodings: per dimension, sqrt(MSE) floored at sigma_min.
    pub fn calibrate_decoder_sigma(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let mut sum_sq = vec![0.0; self.config.d_s];
        for t in &dataset.transitions {
            let z = self.embed_state(&t.state)?.mu;
            let mu = self.decoder.mu.forward(&z)?;
            for (acc, (&m, &s)) in sum_sq.iter_mut().zip(mu.iter().zip(&t.state)) {
                *acc += (m - s) * (m - s);
            }
        }
        let n = dataset.len() as f64;
        Ok(sigma_from_mse(&sum_sq, n))
    }

    /// Tensor container with the full parameter set and config header.
    pub fn to_store(&self) -> TensorStore {
        let mut store = TensorStore::new(self.config.to_json());
        gaussian_to_store(&mut store, "encoder", &self.encoder);
        gaussian_to_store(&mut store, "target_encoder", &self.target_encoder);
        coupling_to_store(&mut store, "embedding", &self.embedding);
        gaussian_to_store(&mut store, "forward", &self.forward_model);
        gaussian_to_store(&mut store, "decoder", &self.decoder);
        gaussian_to_store(&mut store, "reward", &self.reward);
        net_to_store(&mut store, "behavior", &self.behavior);
        store
            .insert(
                "decoder.calibrated_sigma",
                vec![self.calibrated_sigma.len()],
                self.calibrated_sigma.clone(),
            )
            .expect("shape matches");
        if let Some(rbf) = &self.rbf {
            rbf.to_store(&mut store, "decoder.rbf");
        }
        store
    }

    pub fn from_store(store: &TensorStore) -> Result<Self> {
        let config = ModelConfig::from_json(store.config_json())?;
        let mut bundle = LatentModelBundle::new(config, 0)?;
        gaussian_from_store(store, "encoder", &mut bundle.encoder)?;
        gaussian_from_store(store, "target_encoder", &mut bundle.target_encoder)?;
        coupling_from_store(store, "embedding", &mut bundle.embedding)?;
        gaussian_from_store(store, "forward", &mut bundle.forward_model)?;
        gaussian_from_store(store, "decoder", &mut bundle.decoder)?;
        gaussian_from_store(store, "reward", &mut bundle.reward)?;
        net_from_store(store, "behavior", &mut bundle.behavior)?;
        let calibrated = store.get("decoder.calibrated_sigma")?;
        bundle.calibrated_sigma = calibrated.data.clone();
        if bundle.config.decoder_sigma_mode == DecoderSigmaMode::Rbf {
            bundle.rbf = Some(RbfVarianceHead::from_store(store, "decoder.rbf")?);
        }
        Ok(bundle)
    }

    /// Identity over architecture plus exact parameter bytes.
    pub fn fingerprint(&self) -> u64 {
        self.to_store().fingerprint()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_store().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_store(&TensorStore::load(path)?)
    }
}

pub(crate) fn sigma_from_mse(sum_sq: &[f64], n: f64) -> Vec<f64> {
    sum_sq
        .iter()
        .map(|&acc| (acc / n).sqrt().max(SIGMA_MIN))
        .collect()
}

/// Index of the active entry of a one-hot action vector.
pub fn action_index(onehot: &[f64]) -> Result<usize> {
    if onehot.is_empty() || onehot.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("action vector"));
    }
    let mut best = 0;
    for (i, &v) in onehot.iter().enumerate() {
        if v > onehot[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn one_hot(index: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = 1.0;
    v
}

pub(crate) fn net_to_store(store: &mut TensorStore, prefix: &str, net: &DenseNetwork) {
    for l in 0..net.num_layers() {
        let layer = net.layer(l);
        store
            .insert(
                format!("{prefix}.layer{l}.weight"),
                vec![layer.out_dim, layer.in_dim],
                layer.weight.clone(),
            )
            .expect("shape matches");
        store
            .insert(
                format!("{prefix}.layer{l}.bias"),
                vec![layer.out_dim],
                layer.bias.clone(),
            )
            .expect("shape matches");
    }
}

pub(crate) fn net_from_store(store: &TensorStore, prefix: &str, net: &mut DenseNetwork) -> Result<()> {
    for l in 0..net.num_layers() {
        let (out_dim, in_dim) = {
            let layer = net.layer(l);
            (layer.out_dim, layer.in_dim)
        };
        let weight = store.get(&format!("{prefix}.layer{l}.weight"))?;
        if weight.shape != [out_dim, in_dim] {
            return Err(Error::format(format!(
                "tensor {prefix}.layer{l}.weight has shape {:?}, expected [{out_dim}, {in_dim}]",
                weight.shape
            )));
        }
        let bias = store.get(&format!("{prefix}.layer{l}.bias"))?;
        if bias.shape != [out_dim] {
            return Err(Error::format(format!(
                "tensor {prefix}.layer{l}.bias has shape {:?}, expected [{out_dim}]",
                bias.shape
            )));
        }
        let layer = net.layer_mut(l);
        layer.weight.copy_from_slice(&weight.data);
        layer.bias.copy_from_slice(&bias.data);
    }
    Ok(())
}

fn gaussian_to_store(store: &mut TensorStore, prefix: &str, net: &GaussianNet) {
    net_to_store(store, &format!("{prefix}.mu"), &net.mu);
    net_to_store(store, &format!("{prefix}.sigma"), &net.sigma);
}

fn gaussian_from_store(store: &TensorStore, prefix: &str, net: &mut GaussianNet) -> Result<()> {
    net_from_store(store, &format!("{prefix}.mu"), &mut net.mu)?;
    net_from_store(store, &format!("{prefix}.sigma"), &mut net.sigma)
}

fn coupling_to_store(store: &mut TensorStore, prefix: &str, coupling: &AffineCoupling) {
    for l in 0..coupling.num_layers() {
        let (scale, translate) = coupling.layer_nets(l);
        net_to_store(store, &format!("{prefix}.layer{l}.scale"), scale);
        net_to_store(store, &format!("{prefix}.layer{l}.translate"), translate);
    }
}

fn coupling_from_store(store: &TensorStore, prefix: &str, coupling: &mut AffineCoupling) -> Result<()> {
    for l in 0..coupling.num_layers() {
        let (scale, translate) = coupling.layer_nets_mut(l);
        net_from_store(store, &format!("{prefix}.layer{l}.scale"), scale)?;
        net_from_store(store, &format!("{prefix}.layer{l}.translate"), translate)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_s: 2,
            d_a: 4,
            d_z: 2,
            hidden: vec![8],
            coupling_layers: 2,
            coupling_hidden: vec![6],
            sigma_min: SIGMA_MIN,
            decoder_sigma_mode: DecoderSigmaMode::Calibrated,
        }
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let p = GaussianParams {
            mu: vec![0.3, -1.2],
            sigma: vec![0.5, 2.0],
        };
        assert!(gaussian_kl(&p, &p).abs() < 1e-15);
    }

    #[test]
    fn kl_hand_case() {
        // KL(N(1,1) || N(0,1)) = 0.5
        let p = GaussianParams {
            mu: vec![1.0],
            sigma: vec![1.0],
        };
        let q = GaussianParams {
            mu: vec![0.0],
            sigma: vec![1.0],
        };
        assert!((gaussian_kl(&p, &q) - 0.5).abs() < 1e-15);
        assert!((gaussian_kl_prior(&p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_matches_monte_carlo() {
        let p = GaussianParams {
            mu: vec![0.4, -0.7],
            sigma: vec![0.8, 1.3],
        };
        let q = GaussianParams {
            mu: vec![-0.2, 0.1],
            sigma: vec![1.1, 0.6],
        };
        let closed = gaussian_kl(&p, &q);
        let mut rng = derive_rng(42, "klmc");
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = p.sample(&mut rng);
            let v = p.log_prob(&x) - q.log_prob(&x);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (closed - mean).abs() < 3.0 * se,
            "closed {closed}, mc {mean} +- {se}"
        );
    }

    #[test]
    fn sampled_mean_converges_to_mu() {
        let p = GaussianParams {
            mu: vec![2.0],
            sigma: vec![0.5],
        };
        let mut rng = derive_rng(7, "mean");
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| p.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        let se = 0.5 / (n as f64).sqrt();
        assert!((mean - 2.0).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn sigma_heads_respect_floor() {
        let mut rng = derive_rng(3, "floor");
        let net = GaussianNet::new(3, &[8], 2, &mut rng).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = net.forward(&x).unwrap();
            assert!(p.sigma.iter().all(|&s| s >= SIGMA_MIN));
        }
    }

    #[test]
    fn embedding_round_trip_is_exact_for_fresh_bundle() {
        let bundle = LatentModelBundle::new(small_config(), 5).unwrap();
        let e = bundle.embed_state_action(&[0.2, -0.3], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        // Fresh couplings are the identity.
        assert_eq!(e, vec![0.2, -0.3, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn embedding_is_injective_over_distinct_actions() {
        let mut bundle = LatentModelBundle::new(small_config(), 6).unwrap();
        let mut rng = derive_rng(6, "inj");
        for v in bundle.embedding.params_mut() {
            if *v == 0.0 {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let z = [0.1, 0.4];
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for a in 0..4 {
            let e = bundle.embed_state_action(&z, &one_hot(a, 4)).unwrap();
            for prev in &seen {
                let dist: f64 = prev
                    .iter()
                    .zip(&e)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist > 1e-6, "embeddings collide");
            }
            seen.push(e);
        }
    }

    #[test]
    fn sigma_from_known_residuals() {
        // Per-dim MSE {4.0, 0.0} -> sigma {2.0, SIGMA_MIN}.
        let sigma = sigma_from_mse(&[8.0, 0.0], 2.0);
        assert_eq!(sigma, vec![2.0, SIGMA_MIN]);
    }

    #[test]
    fn checkpoint_round_trip_preserves_parameters_exactly() {
        let mut config = small_config();
        config.decoder_sigma_mode = DecoderSigmaMode::Network;
        let bundle = LatentModelBundle::new(config, 11).unwrap();
        let store = bundle.to_store();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        let restored =
            LatentModelBundle::from_store(&TensorStore::read_from(&mut bytes.as_slice()).unwrap())
                .unwrap();
        assert_eq!(bundle.fingerprint(), restored.fingerprint());
        let s = [0.3, -0.8];
        let a = bundle.embed_state(&s).unwrap();
        let b = restored.embed_state(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            bundle.decode(&[0.1, 0.2]).unwrap(),
            restored.decode(&[0.1, 0.2]).unwrap()
        );
    }

    #[test]
    fn embed_state_is_deterministic() {
        let bundle = LatentModelBundle::new(small_config(), 8).unwrap();
        let a = bundle.embed_state(&[0.5, 0.5]).unwrap();
        let b = bundle.embed_state(&[0.5, 0.5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn action_index_picks_the_hot_entry() {
        assert_eq!(action_index(&[0.0, 0.0, 1.0, 0.0]).unwrap(), 2);
        assert_eq!(action_index(&one_hot(3, 4)).unwrap(), 3);
        assert!(action_index(&[f64::NAN, 0.0]).is_err());
    }
}
