//! Metric fields: callables assigning a metric tensor to every point.
//!
//! Fields that support geodesic optimization also expose their energy maps:
//! the deterministic functions m whose pairwise differences along a
//! discretized curve define the energy that Alg-style gradient descent
//! minimizes. For latent-model fields these are the decoder mean and
//! deviation heads (composed with the forward mean when the field lives in
//! embedding space).

use crate::autodiff::Jacobian;
use crate::error::{Error, Result};
use crate::geometry::metric::{pullback, skewed_metric, MetricTensor};
use crate::latent::{DecoderSigmaMode, LatentModelBundle, SIGMA_MIN};
use crate::rng::derive_rng_indexed;

pub trait MetricField {
    fn dim(&self) -> usize;

    fn metric_at(&self, x: &[f64]) -> Result<MetricTensor>;

    /// Values of the maps whose discrete differences define curve energy.
    fn energy_values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let _ = x;
        Err(Error::invalid(
            "this metric field does not support geodesic optimization",
        ))
    }

    /// Sum over energy maps of J_m(x)^T adjoint_m.
    fn energy_vjp(&self, x: &[f64], adjoints: &[Vec<f64>]) -> Result<Vec<f64>> {
        let _ = (x, adjoints);
        Err(Error::invalid(
            "this metric field does not support geodesic optimization",
        ))
    }
}

/// The Euclidean metric; geodesics are straight lines.
#[derive(Debug, Clone)]
pub struct IdentityField {
    pub dim: usize,
}

impl MetricField for IdentityField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn metric_at(&self, x: &[f64]) -> Result<MetricTensor> {
        Ok(MetricTensor::identity(self.dim, x.to_vec()))
    }

    fn energy_values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![x.to_vec()])
    }

    fn energy_vjp(&self, _x: &[f64], adjoints: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(adjoints[0].clone())
    }
}

/// Pullback field of an analytic map given by closures for the value and the
/// row-major Jacobian. Useful for synthetic geometries with known answers.
pub struct FunctionField<F, J>
where
    F: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> Vec<f64>,
{
    pub in_dim: usize,
    pub out_dim: usize,
    pub map: F,
    pub jacobian: J,
}

impl<F, J> MetricField for FunctionField<F, J>
where
    F: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.in_dim
    }

    fn metric_at(&self, x: &[f64]) -> Result<MetricTensor> {
        let j = Jacobian::new(self.out_dim, self.in_dim, (self.jacobian)(x), x.to_vec())?;
        pullback(&j)
    }

    fn energy_values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![(self.map)(x)])
    }

    fn energy_vjp(&self, x: &[f64], adjoints: &[Vec<f64>]) -> Result<Vec<f64>> {
        let j = (self.jacobian)(x);
        let adj = &adjoints[0];
        let mut out = vec![0.0; self.in_dim];
        for r in 0..self.out_dim {
            let a = adj[r];
            if a == 0.0 {
                continue;
            }
            for c in 0..self.in_dim {
                out[c] += a * j[r * self.in_dim + c];
            }
        }
        Ok(out)
    }
}

/// Decoder-induced metric over latent space Z: the expected pullback of the
/// stochastic decoder, alpha-skewed between its proximity and uncertainty
/// parts when requested.
pub struct DecoderField<'a> {
    bundle: &'a LatentModelBundle,
    alpha: Option<f64>,
}

impl<'a> DecoderField<'a> {
    pub fn new(bundle: &'a LatentModelBundle) -> Self {
        DecoderField {
            bundle,
            alpha: None,
        }
    }

    pub fn with_skew(bundle: &'a LatentModelBundle, alpha_prox: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_prox) {
            return Err(Error::invalid(format!(
                "alpha_prox must lie in [0, 1], got {alpha_prox}"
            )));
        }
        Ok(DecoderField {
            bundle,
            alpha: Some(alpha_prox),
        })
    }
}

impl MetricField for DecoderField<'_> {
    fn dim(&self) -> usize {
        self.bundle.config.d_z
    }

    fn metric_at(&self, z: &[f64]) -> Result<MetricTensor> {
        let j_mu = self.bundle.decoder.mu_net().input_jacobian(z)?;
        let j_sigma = decoder_sigma_jacobian(self.bundle, z)?;
        combine_parts(&pullback(&j_mu)?, &pullback(&j_sigma)?, self.alpha)
    }

    fn energy_values(&self, z: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![
            self.bundle.decoder.mu_net().forward(z)?,
            self.bundle.decoder_sigma(z)?,
        ])
    }

    fn energy_vjp(&self, z: &[f64], adjoints: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (_, trace) = self.bundle.decoder.mu_net().forward_traced(z)?;
        let (mut grad, _) = self.bundle.decoder.mu_net().backward(&trace, &adjoints[0]);
        let sigma_grad = decoder_sigma_vjp(self.bundle, z, &adjoints[1])?;
        for (g, s) in grad.iter_mut().zip(&sigma_grad) {
            *g += s;
        }
        Ok(grad)
    }
}

/// Forward-model metric over embedding space E.
pub struct ForwardField<'a> {
    bundle: &'a LatentModelBundle,
}

impl<'a> ForwardField<'a> {
    pub fn new(bundle: &'a LatentModelBundle) -> Self {
        ForwardField { bundle }
    }
}

impl MetricField for ForwardField<'_> {
    fn dim(&self) -> usize {
        self.bundle.d_e()
    }

    fn metric_at(&self, e: &[f64]) -> Result<MetricTensor> {
        let j_mu = self.bundle.forward_model.mu_net().input_jacobian(e)?;
        let j_sigma = self.bundle.forward_model.sigma_net().input_jacobian(e)?;
        combine_parts(&pullback(&j_mu)?, &pullback(&j_sigma)?, None)
    }

    fn energy_values(&self, e: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = self.bundle.predict_next(e)?;
        Ok(vec![p.mu, p.sigma])
    }

    fn energy_vjp(&self, e: &[f64], adjoints: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (_, mu_trace) = self.bundle.forward_model.mu_net().forward_traced(e)?;
        let (mut grad, _) = self
            .bundle
            .forward_model
            .mu_net()
            .backward(&mu_trace, &adjoints[0]);
        let (_, sig_trace) = self.bundle.forward_model.sigma_net().forward_traced(e)?;
        let (sig_grad, _) = self
            .bundle
            .forward_model
            .sigma_net()
            .backward(&sig_trace, &adjoints[1]);
        for (g, s) in grad.iter_mut().zip(&sig_grad) {
            *g += s;
        }
        Ok(grad)
    }
}

/// Composite metric over embedding space E for the decoder-after-forward
/// map: G = J_muF^T Gbar_D J_muF + J_sigmaF^T diag(Gbar_D) J_sigmaF.
pub struct CompositeField<'a> {
    bundle: &'a LatentModelBundle,
    alpha: Option<f64>,
    /// 0 evaluates Gbar_D at the forward mean; S > 0 averages S draws of z'.
    samples: usize,
    seed: u64,
}

impl<'a> CompositeField<'a> {
    pub fn new(bundle: &'a LatentModelBundle) -> Self {
        CompositeField {
            bundle,
            alpha: None,
            samples: 0,
            seed: 0,
        }
    }

    pub fn with_skew(bundle: &'a LatentModelBundle, alpha_prox: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_prox) {
            return Err(Error::invalid(format!(
                "alpha_prox must lie in [0, 1], got {alpha_prox}"
            )));
        }
        Ok(CompositeField {
            bundle,
            alpha: Some(alpha_prox),
            samples: 0,
            seed: 0,
        })
    }

    /// Switches Gbar_D to an S-sample Monte-Carlo average over z' draws,
    /// seeded deterministically per query point.
    pub fn with_samples(mut self, samples: usize, seed: u64) -> Self {
        self.samples = samples;
        self.seed = seed;
        self
    }

    /// (Gbar_mu, Gbar_sigma): decoder metric parts averaged per the sampling
    /// policy, both d_z x d_z.
    fn decoder_parts(&self, e: &[f64]) -> Result<(MetricTensor, MetricTensor)> {
        let next = self.bundle.predict_next(e)?;
        if self.samples == 0 {
            return decoder_metric_parts(self.bundle, &next.mu);
        }
        let d_z = self.bundle.config.d_z;
        let mut acc_mu = vec![0.0; d_z * d_z];
        let mut acc_sigma = vec![0.0; d_z * d_z];
        let mut point_bytes = Vec::with_capacity(e.len() * 8);
        for v in e {
            point_bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut rng = derive_rng_indexed(
            self.seed,
            "composite/mc",
            crate::rng::fnv1a64(&point_bytes),
        );
        for _ in 0..self.samples {
            let z = next.sample(&mut rng);
            let (g_mu, g_sigma) = decoder_metric_parts(self.bundle, &z)?;
            for (a, v) in acc_mu.iter_mut().zip(&g_mu.data) {
                *a += v;
            }
            for (a, v) in acc_sigma.iter_mut().zip(&g_sigma.data) {
                *a += v;
            }
        }
        let scale = 1.0 / self.samples as f64;
        for v in acc_mu.iter_mut() {
            *v *= scale;
        }
        for v in acc_sigma.iter_mut() {
            *v *= scale;
        }
        Ok((
            MetricTensor::new(d_z, acc_mu, next.mu.clone())?,
            MetricTensor::new(d_z, acc_sigma, next.mu)?,
        ))
    }
}

impl MetricField for CompositeField<'_> {
    fn dim(&self) -> usize {
        self.bundle.d_e()
    }

    fn metric_at(&self, e: &[f64]) -> Result<MetricTensor> {
        let (gbar_mu, gbar_sigma) = self.decoder_parts(e)?;
        let gbar = combine_parts(&gbar_mu, &gbar_sigma, self.alpha)?;
        let j_mu_f = self.bundle.forward_model.mu_net().input_jacobian(e)?;
        let j_sigma_f = self.bundle.forward_model.sigma_net().input_jacobian(e)?;
        let d_e = self.bundle.d_e();
        let d_z = self.bundle.config.d_z;
        let mut data =
            crate::linalg::congruence(d_z, d_e, &j_mu_f.data, &gbar.data);
        let mut diag = vec![0.0; d_z * d_z];
        for i in 0..d_z {
            diag[i * d_z + i] = gbar.data[i * d_z + i];
        }
        let sigma_term = crate::linalg::congruence(d_z, d_e, &j_sigma_f.data, &diag);
        for (d, s) in data.iter_mut().zip(&sigma_term) {
            *d += s;
        }
        MetricTensor::new(d_e, data, e.to_vec())
    }

    fn energy_values(&self, e: &[f64]) -> Result<Vec<Vec<f64>>> {
        let z = self.bundle.forward_model.mu_net().forward(e)?;
        Ok(vec![
            self.bundle.decoder.mu_net().forward(&z)?,
            self.bundle.decoder_sigma(&z)?,
        ])
    }

    fn energy_vjp(&self, e: &[f64], adjoints: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (z, f_trace) = self.bundle.forward_model.mu_net().forward_traced(e)?;
        let (_, d_trace) = self.bundle.decoder.mu_net().forward_traced(&z)?;
        let (mut adj_z, _) = self.bundle.decoder.mu_net().backward(&d_trace, &adjoints[0]);
        let sigma_adj = decoder_sigma_vjp(self.bundle, &z, &adjoints[1])?;
        for (a, s) in adj_z.iter_mut().zip(&sigma_adj) {
            *a += s;
        }
        let (grad, _) = self.bundle.forward_model.mu_net().backward(&f_trace, &adj_z);
        Ok(grad)
    }
}

/// Decoder metric parts (G_mu, G_sigma) at a latent point.
pub fn decoder_metric_parts(
    bundle: &LatentModelBundle,
    z: &[f64],
) -> Result<(MetricTensor, MetricTensor)> {
    let j_mu = bundle.decoder.mu_net().input_jacobian(z)?;
    let j_sigma = decoder_sigma_jacobian(bundle, z)?;
    Ok((pullback(&j_mu)?, pullback(&j_sigma)?))
}

/// Convenience wrapper for the default composite metric (point-evaluated
/// Gbar_D, no skew).
pub fn composite_metric(bundle: &LatentModelBundle, e: &[f64]) -> Result<MetricTensor> {
    CompositeField::new(bundle).metric_at(e)
}

fn combine_parts(
    g_mu: &MetricTensor,
    g_sigma: &MetricTensor,
    alpha: Option<f64>,
) -> Result<MetricTensor> {
    match alpha {
        None => MetricTensor::linear_combination(1.0, g_mu, 1.0, g_sigma),
        Some(a) => skewed_metric(g_mu, g_sigma, a),
    }
}

/// Jacobian of the mode-dependent decoder deviation. Calibrated mode is
/// constant (zero Jacobian); the RBF head's rows vanish where its output is
/// floored at sigma_min or capped at sigma_max.
fn decoder_sigma_jacobian(bundle: &LatentModelBundle, z: &[f64]) -> Result<Jacobian> {
    let d_z = bundle.config.d_z;
    let d_s = bundle.config.d_s;
    match bundle.config.decoder_sigma_mode {
        DecoderSigmaMode::Calibrated => {
            Jacobian::new(d_s, d_z, vec![0.0; d_s * d_z], z.to_vec())
        }
        DecoderSigmaMode::Network => bundle.decoder.sigma_net().input_jacobian(z),
        DecoderSigmaMode::Rbf => {
            let head = bundle
                .rbf
                .as_ref()
                .ok_or_else(|| Error::invalid("rbf mode without a fitted head"))?;
            let mut jac = head.sigma_jacobian(z)?;
            let sigma = head.sigma(z)?;
            for (j, &s) in sigma.iter().enumerate() {
                if s < SIGMA_MIN {
                    for c in 0..d_z {
                        jac.data[j * d_z + c] = 0.0;
                    }
                }
            }
            Ok(jac)
        }
    }
}

fn decoder_sigma_vjp(bundle: &LatentModelBundle, z: &[f64], adj: &[f64]) -> Result<Vec<f64>> {
    match bundle.config.decoder_sigma_mode {
        DecoderSigmaMode::Calibrated => Ok(vec![0.0; bundle.config.d_z]),
        DecoderSigmaMode::Network => {
            let (_, trace) = bundle.decoder.sigma_net().forward_traced(z)?;
            let (grad, _) = bundle.decoder.sigma_net().backward(&trace, adj);
            Ok(grad)
        }
        DecoderSigmaMode::Rbf => {
            let jac = decoder_sigma_jacobian(bundle, z)?;
            let d_z = bundle.config.d_z;
            let mut out = vec![0.0; d_z];
            for r in 0..jac.rows {
                let a = adj[r];
                if a == 0.0 {
                    continue;
                }
                for c in 0..d_z {
                    out[c] += a * jac.data[r * d_z + c];
                }
            }
            Ok(out)
        }
    }
}
