//! Window negative ELBO and its exact parameter gradients.
//!
//! A window is `h` consecutive transitions from one episode, giving states
//! s_0..s_h and actions/rewards a_0..a_{h-1}, r_0..r_{h-1}. The loss is
//!
//!   sum_i NLL(s_i | decoder(z_i))
//! + sum_i NLL(r_i | reward(e_i))
//! + sum_i CE(a_i | behavior(s_i))
//! + sum_i KL(q_target(z|s_{i+1}) || forward(e_i))
//! + KL(q(z|s_0) || N(0, I))
//!
//! with z_i a single reparameterized sample from the online encoder and
//! e_i the coupling embedding of (z_i, a_i). The backward pass is assembled
//! by hand from the per-network adjoint passes; `elbo_gradients_match_fd`
//! checks every parameter against central finite differences.

use rand::Rng;

use crate::autodiff::{CouplingGrads, ParamGrads};
use crate::dataset::Transition;
use crate::error::{Error, Result};
use crate::latent::{
    action_index, gaussian_kl, gaussian_kl_prior, standard_normal, GaussianParams,
    LatentModelBundle, SIGMA_MIN,
};

const LOG_2PI: f64 = 1.8378770664093453;

/// Loss components of one window (or an accumulated batch).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElboBreakdown {
    pub recon_state: f64,
    pub recon_reward: f64,
    pub behavior: f64,
    pub kl_transition: f64,
    pub kl_prior: f64,
}

impl ElboBreakdown {
    pub fn total(&self) -> f64 {
        self.recon_state + self.recon_reward + self.behavior + self.kl_transition + self.kl_prior
    }

    pub fn add_assign(&mut self, other: &ElboBreakdown) {
        self.recon_state += other.recon_state;
        self.recon_reward += other.recon_reward;
        self.behavior += other.behavior;
        self.kl_transition += other.kl_transition;
        self.kl_prior += other.kl_prior;
    }

    pub fn scale(&mut self, factor: f64) {
        self.recon_state *= factor;
        self.recon_reward *= factor;
        self.behavior *= factor;
        self.kl_transition *= factor;
        self.kl_prior *= factor;
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("recon_state", self.recon_state),
            ("recon_reward", self.recon_reward),
            ("behavior", self.behavior),
            ("kl_transition", self.kl_transition),
            ("kl_prior", self.kl_prior),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Gradient buffers for every trainable component of the bundle.
#[derive(Debug, Clone)]
pub struct BundleGrads {
    pub encoder_mu: ParamGrads,
    pub encoder_sigma: ParamGrads,
    pub embedding: CouplingGrads,
    pub forward_mu: ParamGrads,
    pub forward_sigma: ParamGrads,
    pub decoder_mu: ParamGrads,
    pub decoder_sigma: ParamGrads,
    pub reward_mu: ParamGrads,
    pub reward_sigma: ParamGrads,
    pub behavior: ParamGrads,
}

impl BundleGrads {
    pub fn zeros_like(bundle: &LatentModelBundle) -> Self {
        BundleGrads {
            encoder_mu: ParamGrads::zeros_like(&bundle.encoder.mu),
            encoder_sigma: ParamGrads::zeros_like(&bundle.encoder.sigma),
            embedding: CouplingGrads::zeros_like(&bundle.embedding),
            forward_mu: ParamGrads::zeros_like(&bundle.forward_model.mu),
            forward_sigma: ParamGrads::zeros_like(&bundle.forward_model.sigma),
            decoder_mu: ParamGrads::zeros_like(&bundle.decoder.mu),
            decoder_sigma: ParamGrads::zeros_like(&bundle.decoder.sigma),
            reward_mu: ParamGrads::zeros_like(&bundle.reward.mu),
            reward_sigma: ParamGrads::zeros_like(&bundle.reward.sigma),
            behavior: ParamGrads::zeros_like(&bundle.behavior),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.encoder_mu.scale(factor);
        self.encoder_sigma.scale(factor);
        self.embedding.scale_by(factor);
        self.forward_mu.scale(factor);
        self.forward_sigma.scale(factor);
        self.decoder_mu.scale(factor);
        self.decoder_sigma.scale(factor);
        self.reward_mu.scale(factor);
        self.reward_sigma.scale(factor);
        self.behavior.scale(factor);
    }
}

/// Reparameterization noise for one window: h+1 vectors of dimension d_z.
#[derive(Debug, Clone)]
pub struct WindowNoise {
    pub eps: Vec<Vec<f64>>,
}

impl WindowNoise {
    pub fn draw(rng: &mut impl Rng, horizon: usize, d_z: usize) -> Self {
        let eps = (0..=horizon)
            .map(|_| (0..d_z).map(|_| standard_normal(rng)).collect())
            .collect();
        WindowNoise { eps }
    }
}

/// Where the decoder sigma for the reconstruction term comes from.
#[derive(Debug, Clone, Copy)]
pub enum DecoderSigma<'a> {
    /// Constant per-dimension value; the sigma network receives no gradient.
    Fixed(&'a [f64]),
    /// The decoder sigma network, trained along with everything else.
    FromNet,
}

/// Accumulates one window's loss into `breakdown` and exact gradients into
/// `grads`. Noise must supply h+1 vectors so the loss is a deterministic
/// function of the parameters.
pub fn elbo_window(
    bundle: &LatentModelBundle,
    window: &[Transition],
    sigma_dec: DecoderSigma,
    noise: &WindowNoise,
    grads: &mut BundleGrads,
    breakdown: &mut ElboBreakdown,
) -> Result<()> {
    let h = window.len();
    if h == 0 {
        return Err(Error::invalid("elbo window must contain transitions"));
    }
    if noise.eps.len() != h + 1 {
        return Err(Error::DimensionMismatch {
            context: "elbo noise vectors",
            expected: h + 1,
            actual: noise.eps.len(),
        });
    }
    let d_z = bundle.config.d_z;
    let first = window[0].episode;
    for (k, t) in window.iter().enumerate().skip(1) {
        if t.episode != first {
            return Err(Error::invalid("elbo window crosses an episode boundary"));
        }
        if window[k - 1].next_state != t.state {
            return Err(Error::invalid("elbo window transitions are not consecutive"));
        }
    }

    // States s_0..s_h along the window.
    let states: Vec<&[f64]> = window
        .iter()
        .map(|t| t.state.as_slice())
        .chain(std::iter::once(window[h - 1].next_state.as_slice()))
        .collect();

    // Forward pass, keeping every trace.
    let mut enc_mu_traces = Vec::with_capacity(h + 1);
    let mut enc_sigma_traces = Vec::with_capacity(h + 1);
    let mut posteriors = Vec::with_capacity(h + 1);
    let mut zs = Vec::with_capacity(h + 1);
    let mut dec_mu_traces = Vec::with_capacity(h + 1);
    let mut dec_sigma_traces = Vec::with_capacity(h + 1);
    let mut dec_mus = Vec::with_capacity(h + 1);
    let mut dec_sigmas = Vec::with_capacity(h + 1);
    for (i, s) in states.iter().enumerate() {
        let (mu_q, mu_trace) = bundle.encoder.mu.forward_traced(s)?;
        let (sig_raw, sig_trace) = bundle.encoder.sigma.forward_traced(s)?;
        let sigma_q: Vec<f64> = sig_raw.into_iter().map(|v| v + SIGMA_MIN).collect();
        let z: Vec<f64> = mu_q
            .iter()
            .zip(&sigma_q)
            .zip(&noise.eps[i])
            .map(|((&m, &sd), &e)| m + sd * e)
            .collect();
        let (mu_d, dec_trace) = bundle.decoder.mu.forward_traced(&z)?;
        let sigma_d = match sigma_dec {
            DecoderSigma::Fixed(s) => {
                if s.len() != bundle.config.d_s {
                    return Err(Error::DimensionMismatch {
                        context: "fixed decoder sigma",
                        expected: bundle.config.d_s,
                        actual: s.len(),
                    });
                }
                dec_sigma_traces.push(None);
                s.to_vec()
            }
            DecoderSigma::FromNet => {
                let (raw, trace) = bundle.decoder.sigma.forward_traced(&z)?;
                dec_sigma_traces.push(Some(trace));
                raw.into_iter().map(|v| v + SIGMA_MIN).collect()
            }
        };
        breakdown.recon_state += gaussian_nll(s, &mu_d, &sigma_d);
        enc_mu_traces.push(mu_trace);
        enc_sigma_traces.push(sig_trace);
        posteriors.push(GaussianParams {
            mu: mu_q,
            sigma: sigma_q,
        });
        zs.push(z);
        dec_mu_traces.push(dec_trace);
        dec_mus.push(mu_d);
        dec_sigmas.push(sigma_d);
    }

    let mut coupling_traces = Vec::with_capacity(h);
    let mut embeddings = Vec::with_capacity(h);
    let mut reward_mu_traces = Vec::with_capacity(h);
    let mut reward_sigma_traces = Vec::with_capacity(h);
    let mut reward_params = Vec::with_capacity(h);
    let mut forward_mu_traces = Vec::with_capacity(h);
    let mut forward_sigma_traces = Vec::with_capacity(h);
    let mut forward_params = Vec::with_capacity(h);
    let mut targets = Vec::with_capacity(h);
    let mut behavior_traces = Vec::with_capacity(h);
    let mut behavior_probs = Vec::with_capacity(h);
    let mut action_ids = Vec::with_capacity(h);
    for (i, t) in window.iter().enumerate() {
        let mut x = Vec::with_capacity(bundle.d_e());
        x.extend_from_slice(&zs[i]);
        x.extend_from_slice(&t.action);
        let (e, ctrace) = bundle.embedding.forward_traced(&x)?;

        let (mu_r, r_mu_trace) = bundle.reward.mu.forward_traced(&e)?;
        let (sig_r_raw, r_sig_trace) = bundle.reward.sigma.forward_traced(&e)?;
        let sigma_r: Vec<f64> = sig_r_raw.into_iter().map(|v| v + SIGMA_MIN).collect();
        breakdown.recon_reward += gaussian_nll(&[t.reward], &mu_r, &sigma_r);

        let (mu_f, f_mu_trace) = bundle.forward_model.mu.forward_traced(&e)?;
        let (sig_f_raw, f_sig_trace) = bundle.forward_model.sigma.forward_traced(&e)?;
        let sigma_f: Vec<f64> = sig_f_raw.into_iter().map(|v| v + SIGMA_MIN).collect();
        let target = bundle.target_encoder.forward(states[i + 1])?;
        let fwd = GaussianParams {
            mu: mu_f,
            sigma: sigma_f,
        };
        breakdown.kl_transition += gaussian_kl(&target, &fwd);

        let (logits, b_trace) = bundle.behavior.forward_traced(t.state.as_slice())?;
        let probs = softmax(&logits);
        let a_idx = action_index(&t.action)?;
        breakdown.behavior += cross_entropy(&logits, a_idx);

        coupling_traces.push(ctrace);
        embeddings.push(e);
        reward_mu_traces.push(r_mu_trace);
        reward_sigma_traces.push(r_sig_trace);
        reward_params.push((
            GaussianParams {
                mu: mu_r,
                sigma: sigma_r,
            },
            t.reward,
        ));
        forward_mu_traces.push(f_mu_trace);
        forward_sigma_traces.push(f_sig_trace);
        forward_params.push(fwd);
        targets.push(target);
        behavior_traces.push(b_trace);
        behavior_probs.push(probs);
        action_ids.push(a_idx);
    }
    breakdown.kl_prior += gaussian_kl_prior(&posteriors[0]);

    // Backward pass. Adjoints with respect to each sampled latent.
    let mut adj_z = vec![vec![0.0; d_z]; h + 1];

    // Reconstruction terms push into z through the decoder.
    for i in 0..=h {
        let mut delta = gaussian_nll_grad_mu(states[i], &dec_mus[i], &dec_sigmas[i]);
        bundle
            .decoder
            .mu
            .backward_accumulate(&dec_mu_traces[i], &mut delta, &mut grads.decoder_mu);
        add_into(&mut adj_z[i], &delta);
        if let Some(trace) = &dec_sigma_traces[i] {
            let mut delta = gaussian_nll_grad_sigma(states[i], &dec_mus[i], &dec_sigmas[i]);
            bundle
                .decoder
                .sigma
                .backward_accumulate(trace, &mut delta, &mut grads.decoder_sigma);
            add_into(&mut adj_z[i], &delta);
        }
    }

    // Reward and transition terms push into e, then through the coupling.
    for i in 0..h {
        let mut adj_e = vec![0.0; bundle.d_e()];
        let (rp, r) = &reward_params[i];
        let mut delta = gaussian_nll_grad_mu(&[*r], &rp.mu, &rp.sigma);
        bundle
            .reward
            .mu
            .backward_accumulate(&reward_mu_traces[i], &mut delta, &mut grads.reward_mu);
        add_into(&mut adj_e, &delta);
        let mut delta = gaussian_nll_grad_sigma(&[*r], &rp.mu, &rp.sigma);
        bundle
            .reward
            .sigma
            .backward_accumulate(&reward_sigma_traces[i], &mut delta, &mut grads.reward_sigma);
        add_into(&mut adj_e, &delta);

        let fwd = &forward_params[i];
        let tgt = &targets[i];
        let mut delta: Vec<f64> = fwd
            .mu
            .iter()
            .zip(&tgt.mu)
            .zip(&fwd.sigma)
            .map(|((&mf, &mt), &sf)| (mf - mt) / (sf * sf))
            .collect();
        bundle
            .forward_model
            .mu
            .backward_accumulate(&forward_mu_traces[i], &mut delta, &mut grads.forward_mu);
        add_into(&mut adj_e, &delta);
        let mut delta: Vec<f64> = fwd
            .mu
            .iter()
            .zip(&tgt.mu)
            .zip(fwd.sigma.iter().zip(&tgt.sigma))
            .map(|((&mf, &mt), (&sf, &st))| 1.0 / sf - (st * st + (mt - mf) * (mt - mf)) / (sf * sf * sf))
            .collect();
        bundle
            .forward_model
            .sigma
            .backward_accumulate(&forward_sigma_traces[i], &mut delta, &mut grads.forward_sigma);
        add_into(&mut adj_e, &delta);

        let (adj_x, cgrads) = bundle.embedding.backward(&coupling_traces[i], &adj_e);
        grads.embedding.add_assign(&cgrads);
        add_into(&mut adj_z[i], &adj_x[..d_z]);

        let mut delta = behavior_probs[i].clone();
        delta[action_ids[i]] -= 1.0;
        bundle
            .behavior
            .backward_accumulate(&behavior_traces[i], &mut delta, &mut grads.behavior);
    }

    // Encoder receives reparameterized adjoints plus the prior term at i=0.
    for i in 0..=h {
        let mut adj_mu = adj_z[i].clone();
        let mut adj_sigma: Vec<f64> = adj_z[i]
            .iter()
            .zip(&noise.eps[i])
            .map(|(&a, &e)| a * e)
            .collect();
        if i == 0 {
            let p = &posteriors[0];
            for ((am, asg), (&m, &sd)) in adj_mu
                .iter_mut()
                .zip(adj_sigma.iter_mut())
                .zip(p.mu.iter().zip(&p.sigma))
            {
                *am += m;
                *asg += sd - 1.0 / sd;
            }
        }
        bundle
            .encoder
            .mu
            .backward_accumulate(&enc_mu_traces[i], &mut adj_mu, &mut grads.encoder_mu);
        bundle.encoder.sigma.backward_accumulate(
            &enc_sigma_traces[i],
            &mut adj_sigma,
            &mut grads.encoder_sigma,
        );
    }
    Ok(())
}

/// Negative log-likelihood fit of the decoder sigma network on one state:
/// NLL(s | stop_grad(mu_D(z)), sigma_D(z)) with z sampled from the online
/// encoder. Only the sigma network receives gradient.
pub fn sigma_fit_sample(
    bundle: &LatentModelBundle,
    state: &[f64],
    eps: &[f64],
    grads: &mut ParamGrads,
) -> Result<f64> {
    let q = bundle.embed_state(state)?;
    let z = q.sample_with_noise(eps);
    let mu_d = bundle.decoder.mu.forward(&z)?;
    let (raw, trace) = bundle.decoder.sigma.forward_traced(&z)?;
    let sigma: Vec<f64> = raw.into_iter().map(|v| v + SIGMA_MIN).collect();
    let nll = gaussian_nll(state, &mu_d, &sigma);
    let mut delta = gaussian_nll_grad_sigma(state, &mu_d, &sigma);
    bundle
        .decoder
        .sigma
        .backward_accumulate(&trace, &mut delta, grads);
    Ok(nll)
}

pub(crate) fn gaussian_nll(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&v, &m), &s)| {
            let z = (v - m) / s;
            s.ln() + 0.5 * (LOG_2PI + z * z)
        })
        .sum()
}

fn gaussian_nll_grad_mu(x: &[f64], mu: &[f64], sigma: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&v, &m), &s)| (m - v) / (s * s))
        .collect()
}

fn gaussian_nll_grad_sigma(x: &[f64], mu: &[f64], sigma: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&v, &m), &s)| 1.0 / s - (v - m) * (v - m) / (s * s * s))
        .collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn cross_entropy(logits: &[f64], index: usize) -> f64 {
    -log_softmax(logits)[index]
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use crate::latent::{DecoderSigmaMode, ModelConfig};
    use crate::rng::derive_rng;
    use rand::Rng;

    fn tiny_bundle(seed: u64) -> LatentModelBundle {
        let config = ModelConfig {
            d_s: 2,
            d_a: 3,
            d_z: 2,
            hidden: vec![6],
            coupling_layers: 2,
            coupling_hidden: vec![4],
            sigma_min: SIGMA_MIN,
            decoder_sigma_mode: DecoderSigmaMode::Calibrated,
        };
        let mut bundle = LatentModelBundle::new(config, seed).unwrap();
        // Coupling layers initialize to the identity; give them structure so
        // the finite-difference check exercises every parameter.
        let mut rng = derive_rng(seed, "test/jiggle");
        for v in bundle.embedding.params_mut() {
            if *v == 0.0 {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        bundle
    }

    fn test_window(bundle: &LatentModelBundle, h: usize, seed: u64) -> Vec<Transition> {
        let mut rng = derive_rng(seed, "test/window");
        let d_s = bundle.config.d_s;
        let d_a = bundle.config.d_a;
        let mut states: Vec<Vec<f64>> = Vec::new();
        for _ in 0..=h {
            states.push((0..d_s).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        (0..h)
            .map(|i| Transition {
                state: states[i].clone(),
                action: crate::latent::one_hot(rng.gen_range(0..d_a), d_a),
                reward: rng.gen_range(-1.0..1.0),
                next_state: states[i + 1].clone(),
                episode: 0,
            })
            .collect()
    }

    fn loss_of(
        bundle: &LatentModelBundle,
        window: &[Transition],
        sigma_dec: DecoderSigma,
        noise: &WindowNoise,
    ) -> f64 {
        let mut grads = BundleGrads::zeros_like(bundle);
        let mut breakdown = ElboBreakdown::default();
        elbo_window(bundle, window, sigma_dec, noise, &mut grads, &mut breakdown).unwrap();
        breakdown.total()
    }

    fn bump<'a>(mut params: impl Iterator<Item = &'a mut f64>, k: usize, delta: f64) {
        *params.nth(k).expect("parameter index in range") += delta;
    }

    /// Central finite difference over every parameter of one component;
    /// `perturb` adds a delta to the k-th parameter of that component.
    fn check_component_fd(
        bundle: &LatentModelBundle,
        window: &[Transition],
        noise: &WindowNoise,
        fixed_sigma: Option<&[f64]>,
        analytic: &[f64],
        perturb: fn(&mut LatentModelBundle, usize, f64),
        label: &str,
    ) {
        let h = 1e-5;
        let eval = |b: &LatentModelBundle| match fixed_sigma {
            Some(s) => loss_of(b, window, DecoderSigma::Fixed(s), noise),
            None => loss_of(b, window, DecoderSigma::FromNet, noise),
        };
        for (k, &got) in analytic.iter().enumerate() {
            let mut up_bundle = bundle.clone();
            perturb(&mut up_bundle, k, h);
            let up = eval(&up_bundle);
            let mut down_bundle = bundle.clone();
            perturb(&mut down_bundle, k, -h);
            let down = eval(&down_bundle);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(got.abs()).max(1e-6);
            assert!(
                (fd - got).abs() / denom < 1e-4,
                "{label}[{k}]: fd {fd}, analytic {got}"
            );
        }
    }

    #[test]
    fn elbo_gradients_match_fd() {
        let bundle = tiny_bundle(17);
        let window = test_window(&bundle, 3, 17);
        let mut rng = derive_rng(17, "test/noise");
        let noise = WindowNoise::draw(&mut rng, 3, bundle.config.d_z);
        let sigma = vec![0.5, 0.8];

        let mut grads = BundleGrads::zeros_like(&bundle);
        let mut breakdown = ElboBreakdown::default();
        elbo_window(
            &bundle,
            &window,
            DecoderSigma::Fixed(&sigma),
            &noise,
            &mut grads,
            &mut breakdown,
        )
        .unwrap();
        assert!(breakdown.total().is_finite());

        let cases: Vec<(&str, Vec<f64>, fn(&mut LatentModelBundle, usize, f64))> = vec![
            ("encoder.mu", grads.encoder_mu.iter().collect(), |b, k, d| {
                bump(b.encoder.mu.params_mut(), k, d)
            }),
            ("encoder.sigma", grads.encoder_sigma.iter().collect(), |b, k, d| {
                bump(b.encoder.sigma.params_mut(), k, d)
            }),
            ("embedding", grads.embedding.iter().collect(), |b, k, d| {
                bump(b.embedding.params_mut(), k, d)
            }),
            ("forward.mu", grads.forward_mu.iter().collect(), |b, k, d| {
                bump(b.forward_model.mu.params_mut(), k, d)
            }),
            ("forward.sigma", grads.forward_sigma.iter().collect(), |b, k, d| {
                bump(b.forward_model.sigma.params_mut(), k, d)
            }),
            ("decoder.mu", grads.decoder_mu.iter().collect(), |b, k, d| {
                bump(b.decoder.mu.params_mut(), k, d)
            }),
            ("reward.mu", grads.reward_mu.iter().collect(), |b, k, d| {
                bump(b.reward.mu.params_mut(), k, d)
            }),
            ("reward.sigma", grads.reward_sigma.iter().collect(), |b, k, d| {
                bump(b.reward.sigma.params_mut(), k, d)
            }),
            ("behavior", grads.behavior.iter().collect(), |b, k, d| {
                bump(b.behavior.params_mut(), k, d)
            }),
        ];
        for (label, analytic, perturb) in cases {
            check_component_fd(&bundle, &window, &noise, Some(&sigma), &analytic, perturb, label);
        }
    }

    #[test]
    fn elbo_gradients_match_fd_with_sigma_net() {
        let bundle = tiny_bundle(23);
        let window = test_window(&bundle, 2, 23);
        let mut rng = derive_rng(23, "test/noise");
        let noise = WindowNoise::draw(&mut rng, 2, bundle.config.d_z);

        let mut grads = BundleGrads::zeros_like(&bundle);
        let mut breakdown = ElboBreakdown::default();
        elbo_window(
            &bundle,
            &window,
            DecoderSigma::FromNet,
            &noise,
            &mut grads,
            &mut breakdown,
        )
        .unwrap();

        let analytic: Vec<f64> = grads.decoder_sigma.iter().collect();
        check_component_fd(
            &bundle,
            &window,
            &noise,
            None,
            &analytic,
            |b, k, d| bump(b.decoder.sigma.params_mut(), k, d),
            "decoder.sigma",
        );
        let analytic: Vec<f64> = grads.encoder_mu.iter().collect();
        check_component_fd(
            &bundle,
            &window,
            &noise,
            None,
            &analytic,
            |b, k, d| bump(b.encoder.mu.params_mut(), k, d),
            "encoder.mu via sigma net",
        );
    }

    #[test]
    fn breakdown_components_sum_to_total() {
        let bundle = tiny_bundle(31);
        let window = test_window(&bundle, 4, 31);
        let mut rng = derive_rng(31, "test/noise");
        let noise = WindowNoise::draw(&mut rng, 4, bundle.config.d_z);
        let sigma = vec![0.4, 0.9];
        let mut grads = BundleGrads::zeros_like(&bundle);
        let mut b = ElboBreakdown::default();
        elbo_window(&bundle, &window, DecoderSigma::Fixed(&sigma), &noise, &mut grads, &mut b)
            .unwrap();
        let total = b.recon_state + b.recon_reward + b.behavior + b.kl_transition + b.kl_prior;
        assert!((b.total() - total).abs() < 1e-12);
        assert!(b.recon_reward.is_finite() && b.kl_transition >= 0.0 && b.kl_prior >= 0.0);
    }

    #[test]
    fn window_crossing_episodes_is_rejected() {
        let bundle = tiny_bundle(41);
        let mut window = test_window(&bundle, 2, 41);
        window[1].episode = 5;
        let noise = WindowNoise {
            eps: vec![vec![0.0; 2]; 3],
        };
        let sigma = vec![1.0, 1.0];
        let mut grads = BundleGrads::zeros_like(&bundle);
        let mut b = ElboBreakdown::default();
        let err = elbo_window(&bundle, &window, DecoderSigma::Fixed(&sigma), &noise, &mut grads, &mut b);
        assert!(err.is_err());
    }

    #[test]
    fn window_with_gap_is_rejected() {
        let bundle = tiny_bundle(43);
        let mut window = test_window(&bundle, 2, 43);
        window[1].state[0] += 0.5;
        let noise = WindowNoise {
            eps: vec![vec![0.0; 2]; 3],
        };
        let sigma = vec![1.0, 1.0];
        let mut grads = BundleGrads::zeros_like(&bundle);
        let mut b = ElboBreakdown::default();
        assert!(
            elbo_window(&bundle, &window, DecoderSigma::Fixed(&sigma), &noise, &mut grads, &mut b)
                .is_err()
        );
    }

    #[test]
    fn sigma_fit_gradients_match_fd() {
        let bundle = tiny_bundle(53);
        let state = vec![0.3, -0.6];
        let eps = vec![0.4, -1.1];
        let mut grads = ParamGrads::zeros_like(&bundle.decoder.sigma);
        sigma_fit_sample(&bundle, &state, &eps, &mut grads).unwrap();
        let analytic: Vec<f64> = grads.iter().collect();

        let eval = |b: &LatentModelBundle| {
            let mut g = ParamGrads::zeros_like(&b.decoder.sigma);
            sigma_fit_sample(b, &state, &eps, &mut g).unwrap()
        };
        let h = 1e-5;
        for (k, &got) in analytic.iter().enumerate() {
            let mut up_bundle = bundle.clone();
            bump(up_bundle.decoder.sigma.params_mut(), k, h);
            let up = eval(&up_bundle);
            let mut down_bundle = bundle.clone();
            bump(down_bundle.decoder.sigma.params_mut(), k, -h);
            let down = eval(&down_bundle);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(got.abs()).max(1e-6);
            assert!(
                (fd - got).abs() / denom < 1e-4,
                "decoder.sigma[{k}]: fd {fd}, analytic {got}"
            );
        }
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let p = softmax(&[1000.0, 1001.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v.is_finite() && v >= 0.0));
        let ls = log_softmax(&[-1000.0, 0.0]);
        assert!(ls.iter().all(|v| v.is_finite()));
    }
}
