//! Metric tensors and the closed forms that produce them.

use crate::autodiff::Jacobian;
use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry tolerance, relative to the largest entry magnitude.
const SYMMETRY_TOL: f64 = 1e-10;

/// A symmetric positive-semidefinite matrix attached to the point where it
/// was evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    pub dim: usize,
    /// Row-major dim x dim entries; symmetrized on construction.
    pub data: Vec<f64>,
    pub point: Vec<f64>,
}

impl MetricTensor {
    /// Validates finiteness and symmetry (to 1e-10, scaled by the largest
    /// entry), then stores the exactly symmetrized matrix.
    pub fn new(dim: usize, data: Vec<f64>, point: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                context: "MetricTensor entries",
                expected: dim * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("metric tensor"));
        }
        let scale = data.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let tol = SYMMETRY_TOL * scale.max(1.0);
        let mut sym = data;
        for r in 0..dim {
            for c in (r + 1)..dim {
                let a = sym[r * dim + c];
                let b = sym[c * dim + r];
                if (a - b).abs() > tol {
                    return Err(Error::invalid(format!(
                        "metric asymmetry {} at ({r}, {c}) exceeds tolerance {tol}",
                        (a - b).abs()
                    )));
                }
                let avg = 0.5 * (a + b);
                sym[r * dim + c] = avg;
                sym[c * dim + r] = avg;
            }
        }
        Ok(MetricTensor {
            dim,
            data: sym,
            point,
        })
    }

    pub fn identity(dim: usize, point: Vec<f64>) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        MetricTensor { dim, data, point }
    }

    /// v^T G v.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "quadratic form vector",
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(linalg::quadratic_form(self.dim, &self.data, v))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::sym_eigenvalues(self.dim, &self.data)
    }

    /// Entrywise a*G1 + b*G2, keeping G1's point.
    pub fn linear_combination(a: f64, g1: &MetricTensor, b: f64, g2: &MetricTensor) -> Result<Self> {
        if g1.dim != g2.dim {
            return Err(Error::DimensionMismatch {
                context: "metric combination",
                expected: g1.dim,
                actual: g2.dim,
            });
        }
        let data = g1
            .data
            .iter()
            .zip(&g2.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        MetricTensor::new(g1.dim, data, g1.point.clone())
    }
}

/// G = J^T J, the metric induced by pulling the Euclidean metric back
/// through the map whose Jacobian is J.
pub fn pullback(j: &Jacobian) -> Result<MetricTensor> {
    let data = linalg::gram(j.rows, j.cols, &j.data);
    MetricTensor::new(j.cols, data, j.point.clone())
}

/// Proximity and uncertainty parts of the expected metric of the stochastic
/// map x -> mu(x) + sigma(x) * eps: (J_mu^T J_mu, J_sigma^T J_sigma).
pub fn expected_metric_parts(
    j_mu: &Jacobian,
    j_sigma: &Jacobian,
) -> Result<(MetricTensor, MetricTensor)> {
    if j_mu.cols != j_sigma.cols || j_mu.rows != j_sigma.rows {
        return Err(Error::DimensionMismatch {
            context: "expected metric Jacobians",
            expected: j_mu.cols,
            actual: j_sigma.cols,
        });
    }
    Ok((pullback(j_mu)?, pullback(j_sigma)?))
}

/// Expected pullback metric E[G_f] = J_mu^T J_mu + J_sigma^T J_sigma.
pub fn expected_metric(j_mu: &Jacobian, j_sigma: &Jacobian) -> Result<MetricTensor> {
    let (g_mu, g_sigma) = expected_metric_parts(j_mu, j_sigma)?;
    MetricTensor::linear_combination(1.0, &g_mu, 1.0, &g_sigma)
}

/// Skewed metric alpha * G_mu + (1 - alpha) * G_sigma.
pub fn skewed_metric(
    g_mu: &MetricTensor,
    g_sigma: &MetricTensor,
    alpha_prox: f64,
) -> Result<MetricTensor> {
    if !(0.0..=1.0).contains(&alpha_prox) {
        return Err(Error::invalid(format!(
            "alpha_prox must lie in [0, 1], got {alpha_prox}"
        )));
    }
    MetricTensor::linear_combination(alpha_prox, g_mu, 1.0 - alpha_prox, g_sigma)
}

/// E[B^T A B] for B = diag(eps) J_f with eps ~ N(0, I): equals
/// J_f^T diag(A) J_f, where diag(A) keeps only A's diagonal.
pub fn lemma_ebab(j_f: &Jacobian, a: &[f64]) -> Result<Vec<f64>> {
    let k = j_f.rows;
    if a.len() != k * k {
        return Err(Error::DimensionMismatch {
            context: "lemma matrix A",
            expected: k * k,
            actual: a.len(),
        });
    }
    let diag: Vec<f64> = (0..k).map(|i| a[i * k + i]).collect();
    // J^T diag(A) J assembled column by column.
    let d = j_f.cols;
    let mut out = vec![0.0; d * d];
    for i in 0..k {
        let row = &j_f.data[i * d..(i + 1) * d];
        let w = diag[i];
        for r in 0..d {
            let wr = w * row[r];
            if wr == 0.0 {
                continue;
            }
            for c in 0..d {
                out[r * d + c] += wr * row[c];
            }
        }
    }
    Ok(out)
}

/// sqrt(det G) via symmetric eigendecomposition, clamping negative
/// eigenvalues (numerical noise) at zero.
pub fn volume_measure(g: &MetricTensor) -> f64 {
    let prod: f64 = g.eigenvalues().into_iter().map(|l| l.max(0.0)).product();
    prod.sqrt()
}
