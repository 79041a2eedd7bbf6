//! Radial-basis-function precision head for the decoder.
//!
//! The head models per-dimension precision beta_j(z) = sum_i W[i,j] phi_i(z)
//! with phi_i(z) = exp(-lambda_i/2 ||z - c_i||^2) and nonnegative weights, so
//! predicted deviation sigma_j = beta_j^(-1/2) grows as z leaves the support
//! of the codes the centers were fitted on. Deviations are capped at
//! `sigma_max` (reached when every basis function underflows).

use rand::Rng;

use crate::autodiff::{AdamParams, AdamState, Jacobian};
use crate::checkpoint::TensorStore;
use crate::error::{Error, Result};
use crate::rng::derive_rng;

const BETA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RbfVarianceHead {
    /// Cluster centers, k x d_z row-major.
    pub centers: Vec<f64>,
    /// Per-center inverse squared length scales.
    pub bandwidths: Vec<f64>,
    /// Nonnegative mixing weights, k x d_out row-major.
    pub weights: Vec<f64>,
    pub d_z: usize,
    pub d_out: usize,
    pub sigma_max: f64,
}

impl RbfVarianceHead {
    pub fn num_centers(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn features(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.d_z {
            return Err(Error::DimensionMismatch {
                context: "rbf input",
                expected: self.d_z,
                actual: z.len(),
            });
        }
        Ok(self
            .bandwidths
            .iter()
            .enumerate()
            .map(|(i, &lambda)| {
                let c = &self.centers[i * self.d_z..(i + 1) * self.d_z];
                let sq: f64 = z.iter().zip(c).map(|(&a, &b)| (a - b) * (a - b)).sum();
                (-0.5 * lambda * sq).exp()
            })
            .collect())
    }

    /// Per-dimension precision beta(z) = W^T phi(z).
    pub fn beta(&self, z: &[f64]) -> Result<Vec<f64>> {
        let phi = self.features(z)?;
        let mut beta = vec![0.0; self.d_out];
        for (i, &p) in phi.iter().enumerate() {
            let row = &self.weights[i * self.d_out..(i + 1) * self.d_out];
            for (b, &w) in beta.iter_mut().zip(row) {
                *b += w * p;
            }
        }
        Ok(beta)
    }

    /// sigma_j = beta_j^(-1/2), capped at sigma_max when the precision
    /// underflows far from every center.
    pub fn sigma(&self, z: &[f64]) -> Result<Vec<f64>> {
        let cap_beta = 1.0 / (self.sigma_max * self.sigma_max);
        Ok(self
            .beta(z)?
            .into_iter()
            .map(|b| if b <= cap_beta { self.sigma_max } else { 1.0 / b.sqrt() })
            .collect())
    }

    /// Exact Jacobian d(sigma)/d(z); rows are zero where the cap is active.
    pub fn sigma_jacobian(&self, z: &[f64]) -> Result<Jacobian> {
        let phi = self.features(z)?;
        let beta = self.beta(z)?;
        let cap_beta = 1.0 / (self.sigma_max * self.sigma_max);
        let mut data = vec![0.0; self.d_out * self.d_z];
        for j in 0..self.d_out {
            if beta[j] <= cap_beta {
                continue;
            }
            let scale = -0.5 * beta[j].powf(-1.5);
            for (i, &p) in phi.iter().enumerate() {
                let w = self.weights[i * self.d_out + j];
                if w == 0.0 || p == 0.0 {
                    continue;
                }
                let c = &self.centers[i * self.d_z..(i + 1) * self.d_z];
                let lambda = self.bandwidths[i];
                for k in 0..self.d_z {
                    // d(beta_j)/d(z_k) summand: W[i,j] * phi_i * (-lambda (z_k - c_k))
                    data[j * self.d_z + k] += scale * w * p * (-lambda * (z[k] - c[k]));
                }
            }
        }
        Jacobian::new(self.d_out, self.d_z, data, z.to_vec())
    }

    /// Fits centers by k-means over the codes, bandwidths from within-cluster
    /// spread scaled by `bandwidth_scale`, and weights by gradient descent on
    /// the Gaussian NLL of the provided per-dimension squared residuals.
    pub fn fit(
        codes: &[Vec<f64>],
        residual_sq: &[Vec<f64>],
        clusters: usize,
        bandwidth_scale: f64,
        sigma_max: f64,
        steps: usize,
        seed: u64,
    ) -> Result<Self> {
        if codes.is_empty() || codes.len() != residual_sq.len() {
            return Err(Error::invalid(
                "rbf fit needs matching nonempty codes and residuals",
            ));
        }
        if clusters == 0 || sigma_max <= 0.0 {
            return Err(Error::invalid("rbf fit needs clusters > 0 and sigma_max > 0"));
        }
        if bandwidth_scale <= 0.0 || !bandwidth_scale.is_finite() {
            return Err(Error::invalid("rbf bandwidth scale must be positive"));
        }
        let d_z = codes[0].len();
        let d_out = residual_sq[0].len();
        let mut rng = derive_rng(seed, "rbf/kmeans");
        let (centers, assignment) = kmeans(codes, clusters, 25, &mut rng);
        let k = centers.len() / d_z;

        // Bandwidth per center: inverse mean squared member distance, with
        // the global spread as fallback for empty or degenerate clusters.
        let mut sum_sq = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (p, &a) in codes.iter().zip(&assignment) {
            let c = &centers[a * d_z..(a + 1) * d_z];
            sum_sq[a] += sq_dist(p, c);
            count[a] += 1;
        }
        let total_sq: f64 = sum_sq.iter().sum();
        let total_n: usize = count.iter().sum();
        let global_mean = if total_n > 0 && total_sq > 0.0 {
            total_sq / total_n as f64
        } else {
            1.0
        };
        let scale_sq = bandwidth_scale * bandwidth_scale;
        let bandwidths: Vec<f64> = (0..k)
            .map(|i| {
                let mean = if count[i] > 0 { sum_sq[i] / count[i] as f64 } else { 0.0 };
                1.0 / (scale_sq * if mean > 1e-12 { mean } else { global_mean })
            })
            .collect();

        // Weight optimization in log space (W = exp(v)), which keeps W
        // strictly positive and makes the order-of-magnitude sweep from the
        // initial precision to 1/MSE cheap. Initialize at the per-dimension
        // inverse mean squared residual.
        let mut head = RbfVarianceHead {
            centers,
            bandwidths,
            weights: vec![1.0; k * d_out],
            d_z,
            d_out,
            sigma_max,
        };
        let phis: Vec<Vec<f64>> = codes
            .iter()
            .map(|z| head.features(z))
            .collect::<Result<_>>()?;
        let mut raw = vec![0.0; k * d_out];
        for j in 0..d_out {
            let mean_rsq = residual_sq.iter().map(|r| r[j]).sum::<f64>() / codes.len() as f64;
            let v0 = (1.0 / mean_rsq.max(1e-6)).min(1e6).ln();
            for i in 0..k {
                raw[i * d_out + j] = v0;
            }
        }
        let mut adam = AdamState::new(raw.len());
        let params = AdamParams::with_lr(0.05);
        for _ in 0..steps {
            let weights: Vec<f64> = raw.iter().map(|&v| v.exp()).collect();
            let mut grad = vec![0.0; raw.len()];
            for (phi, rsq) in phis.iter().zip(residual_sq) {
                for j in 0..d_out {
                    let mut beta = 0.0;
                    for (i, &p) in phi.iter().enumerate() {
                        beta += weights[i * d_out + j] * p;
                    }
                    if beta <= BETA_FLOOR {
                        continue;
                    }
                    // d/d(beta) of (-ln beta + beta r^2) / 2
                    let dbeta = 0.5 * (rsq[j] - 1.0 / beta);
                    for (i, &p) in phi.iter().enumerate() {
                        grad[i * d_out + j] += dbeta * p * weights[i * d_out + j];
                    }
                }
            }
            let scale = 1.0 / codes.len() as f64;
            adam.step(&params, raw.iter_mut(), grad.iter().map(|g| g * scale));
            for v in raw.iter_mut() {
                *v = v.clamp(-20.0, 20.0);
            }
        }
        head.weights = raw.iter().map(|&v| v.exp()).collect();
        Ok(head)
    }

    pub fn to_store(&self, store: &mut TensorStore, prefix: &str) {
        let k = self.num_centers();
        store
            .insert(format!("{prefix}.centers"), vec![k, self.d_z], self.centers.clone())
            .expect("shape matches");
        store
            .insert(format!("{prefix}.bandwidths"), vec![k], self.bandwidths.clone())
            .expect("shape matches");
        store
            .insert(format!("{prefix}.weights"), vec![k, self.d_out], self.weights.clone())
            .expect("shape matches");
        store
            .insert(format!("{prefix}.sigma_max"), vec![1], vec![self.sigma_max])
            .expect("shape matches");
    }

    pub fn from_store(store: &TensorStore, prefix: &str) -> Result<Self> {
        let centers = store.get(&format!("{prefix}.centers"))?;
        let bandwidths = store.get(&format!("{prefix}.bandwidths"))?;
        let weights = store.get(&format!("{prefix}.weights"))?;
        let sigma_max = store.get(&format!("{prefix}.sigma_max"))?;
        if centers.shape.len() != 2 || weights.shape.len() != 2 {
            return Err(Error::format("rbf tensors must be rank 2"));
        }
        let k = centers.shape[0];
        if bandwidths.shape != [k] || weights.shape[0] != k || sigma_max.data.len() != 1 {
            return Err(Error::format("inconsistent rbf tensor shapes"));
        }
        Ok(RbfVarianceHead {
            centers: centers.data.clone(),
            bandwidths: bandwidths.data.clone(),
            weights: weights.data.clone(),
            d_z: centers.shape[1],
            d_out: weights.shape[1],
            sigma_max: sigma_max.data[0],
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm; returns flattened centers and the final assignment.
/// Empty clusters keep their previous center.
pub(crate) fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    iters: usize,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<usize>) {
    let n = points.len();
    let d = points[0].len();
    let k = k.min(n);
    // Sample k distinct seeds by partial Fisher-Yates.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut centers: Vec<f64> = idx[..k]
        .iter()
        .flat_map(|&i| points[i].iter().copied())
        .collect();
    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for (p, a) in points.iter().zip(assignment.iter_mut()) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(p, &centers[c * d..(c + 1) * d]);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            for j in 0..d {
                centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    (centers, assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_head() -> RbfVarianceHead {
        RbfVarianceHead {
            centers: vec![0.0, 0.0],
            bandwidths: vec![1.0],
            weights: vec![1.0],
            d_z: 2,
            d_out: 1,
            sigma_max: 10.0,
        }
    }

    #[test]
    fn sigma_is_one_at_a_unit_center() {
        let head = unit_head();
        assert!((head.sigma(&[0.0, 0.0]).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_is_capped_far_from_centers() {
        let head = unit_head();
        let far = head.sigma(&[100.0, 100.0]).unwrap();
        assert_eq!(far[0], 10.0);
        let jac = head.sigma_jacobian(&[100.0, 100.0]).unwrap();
        assert!(jac.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigma_grows_monotonically_away_from_the_center() {
        let head = unit_head();
        let mut last = 0.0;
        for step in 0..20 {
            let z = [0.2 * step as f64, 0.0];
            let s = head.sigma(&z).unwrap()[0];
            assert!(s >= last, "sigma should not shrink with distance");
            assert!(s <= 10.0);
            last = s;
        }
    }

    #[test]
    fn sigma_jacobian_matches_fd() {
        let head = RbfVarianceHead {
            centers: vec![0.0, 0.0, 1.0, -0.5],
            bandwidths: vec![1.3, 0.7],
            weights: vec![0.8, 1.4, 0.3, 0.9],
            d_z: 2,
            d_out: 2,
            sigma_max: 10.0,
        };
        let z = vec![0.4, -0.2];
        let jac = head.sigma_jacobian(&z).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut up = z.clone();
            up[k] += h;
            let mut down = z.clone();
            down[k] -= h;
            let su = head.sigma(&up).unwrap();
            let sd = head.sigma(&down).unwrap();
            for j in 0..2 {
                let fd = (su[j] - sd[j]) / (2.0 * h);
                let got = jac.data[j * 2 + k];
                assert!(
                    (fd - got).abs() / fd.abs().max(got.abs()).max(1e-8) < 1e-5,
                    "d sigma[{j}]/dz[{k}]: fd {fd}, got {got}"
                );
            }
        }
    }

    #[test]
    fn kmeans_recovers_separated_clusters() {
        let mut rng = derive_rng(9, "kmeans-test");
        let mut points = Vec::new();
        for i in 0..60 {
            let offset = if i % 2 == 0 { -5.0 } else { 5.0 };
            points.push(vec![
                offset + rng.gen_range(-0.1..0.1),
                offset + rng.gen_range(-0.1..0.1),
            ]);
        }
        let (centers, assignment) = kmeans(&points, 2, 25, &mut rng);
        assert_eq!(centers.len(), 4);
        assert_eq!(assignment.len(), 60);
        let mut sorted = vec![centers[0], centers[2]];
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((sorted[0] + 5.0).abs() < 0.2 && (sorted[1] - 5.0).abs() < 0.2);
    }

    #[test]
    fn kmeans_caps_k_at_point_count() {
        let mut rng = derive_rng(10, "kmeans-cap");
        let points = vec![vec![0.0], vec![1.0]];
        let (centers, _) = kmeans(&points, 16, 10, &mut rng);
        assert_eq!(centers.len(), 2);
    }

    #[test]
    fn fit_learns_high_precision_where_residuals_are_small() {
        let mut rng = derive_rng(11, "rbf-fit");
        let mut codes = Vec::new();
        let mut residual_sq = Vec::new();
        // Left blob reconstructs well, right blob poorly.
        for i in 0..200 {
            let left = i % 2 == 0;
            let x = if left { -2.0 } else { 2.0 } + rng.gen_range(-0.3..0.3);
            codes.push(vec![x, rng.gen_range(-0.3..0.3)]);
            let sd: f64 = if left { 0.05 } else { 0.8 };
            residual_sq.push(vec![sd * sd]);
        }
        let head = RbfVarianceHead::fit(&codes, &residual_sq, 8, 10.0, 400, 11).unwrap();
        assert!(head.weights.iter().all(|&w| w > 0.0));
        let s_left = head.sigma(&[-2.0, 0.0]).unwrap()[0];
        let s_right = head.sigma(&[2.0, 0.0]).unwrap()[0];
        assert!(
            s_left < s_right,
            "expected smaller sigma where residuals are small: {s_left} vs {s_right}"
        );
        assert!((s_left - 0.05).abs() < 0.05, "left sigma {s_left}");
        assert!((s_right - 0.8).abs() < 0.4, "right sigma {s_right}");
        // Off-manifold probes should be at least as uncertain as data codes.
        let s_off = head.sigma(&[0.0, 8.0]).unwrap()[0];
        assert!(s_off > s_left && s_off > s_right);
        assert!(s_off <= 10.0);
    }

    #[test]
    fn store_round_trip_is_exact() {
        let head = RbfVarianceHead {
            centers: vec![0.1, 0.2, -0.3, 0.4],
            bandwidths: vec![1.5, 2.5],
            weights: vec![0.7, 0.9, 1.1, 1.3],
            d_z: 2,
            d_out: 2,
            sigma_max: 10.0,
        };
        let mut store = TensorStore::new("{}".to_string());
        head.to_store(&mut store, "decoder.rbf");
        let back = RbfVarianceHead::from_store(&store, "decoder.rbf").unwrap();
        assert_eq!(head.centers, back.centers);
        assert_eq!(head.bandwidths, back.bandwidths);
        assert_eq!(head.weights, back.weights);
        assert_eq!(head.sigma_max, back.sigma_max);
    }

    #[test]
    fn fit_rejects_bad_arguments() {
        assert!(RbfVarianceHead::fit(&[], &[], 4, 10.0, 10, 0).is_err());
        let codes = vec![vec![0.0]];
        let rsq = vec![vec![0.1]];
        assert!(RbfVarianceHead::fit(&codes, &rsq, 0, 10.0, 10, 0).is_err());
        assert!(RbfVarianceHead::fit(&codes, &rsq, 4, -1.0, 10, 0).is_err());
    }
}
