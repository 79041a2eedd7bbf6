//! Discrete geodesic estimation by curve-energy minimization.
//!
//! A candidate curve is a spline with pinned endpoints. Its energy is the sum
//! of squared differences of the field's energy maps along an n-point grid;
//! momentum gradient descent on the spline coefficients shortens the curve,
//! and the result is measured with the discretized length functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::field::MetricField;
use crate::geometry::spline::{basis_values, SplineCurve, NUM_BASIS};

/// Tolerance below which a negative quadratic form is treated as roundoff.
const QUAD_FORM_TOLERANCE: f64 = -1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicConfig {
    /// Gradient iterations of the energy objective.
    pub iterations: usize,
    /// Grid size n: the curve is evaluated at t_i = i/n, i = 0..n.
    pub grid: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        GeodesicConfig {
            iterations: 20,
            grid: 10,
            learning_rate: 1e-3,
            momentum: 0.99,
        }
    }
}

impl GeodesicConfig {
    fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::invalid("geodesic grid size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicResult {
    pub curve: SplineCurve,
    pub distance: f64,
    /// True when optimization ran to completion with finite energy and did
    /// not end above its starting energy.
    pub converged: bool,
    /// True when non-finite energy or gradients forced the straight-line
    /// fallback.
    pub fallback: bool,
    /// Energy before each iteration plus the final energy.
    pub energy_trace: Vec<f64>,
}

/// Length of `curve` under `field`: Σ_{i=1..n} √(v_iᵀ G(γ(t_i)) v_i)·Δt with
/// t_i = i/n, Δt = 1/n and the analytic spline derivative v_i.
pub fn curve_length(curve: &SplineCurve, field: &dyn MetricField, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("curve_length grid size must be at least 2"));
    }
    if curve.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            context: "curve_length field dimension",
            expected: curve.dim(),
            actual: field.dim(),
        });
    }
    let dt = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 1..=n {
        let t = i as f64 * dt;
        let point = curve.eval(t);
        let velocity = curve.velocity(t);
        let g = field.metric_at(&point)?;
        let quad = g.quadratic_form(&velocity)?;
        if quad < QUAD_FORM_TOLERANCE {
            return Err(Error::MetricViolation { value: quad });
        }
        total += quad.max(0.0).sqrt() * dt;
    }
    Ok(total)
}

/// Estimates the geodesic between `e0` and `e1` under `field`.
///
/// The spline starts as the straight line and its free coefficients follow
/// momentum gradient descent on the discrete curve energy. Non-finite energy
/// or gradients abort optimization and fall back to the straight line. The
/// returned distance never exceeds the straight-line length: if optimization
/// fails to improve on the initialization, the straight line is returned.
pub fn estimate_geodesic(
    e0: &[f64],
    e1: &[f64],
    field: &dyn MetricField,
    config: &GeodesicConfig,
) -> Result<GeodesicResult> {
    config.validate()?;
    if e0.len() != field.dim() || e1.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            context: "estimate_geodesic endpoints",
            expected: field.dim(),
            actual: if e0.len() != field.dim() {
                e0.len()
            } else {
                e1.len()
            },
        });
    }
    if e0.iter().chain(e1).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("estimate_geodesic endpoints"));
    }
    let straight = SplineCurve::straight(e0.to_vec(), e1.to_vec());
    if e0 == e1 {
        return Ok(GeodesicResult {
            curve: straight,
            distance: 0.0,
            converged: true,
            fallback: false,
            energy_trace: vec![0.0],
        });
    }
    let straight_length = curve_length(&straight, field, config.grid)?;
    if !straight_length.is_finite() {
        return Err(Error::non_finite("straight-line curve length"));
    }

    let dim = e0.len();
    let mut curve = straight.clone();
    let mut velocity = vec![0.0; dim * NUM_BASIS];
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut fallback = false;
    for _ in 0..config.iterations {
        let (energy, grad) = curve_energy(&curve, field, config.grid)?;
        if !energy.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            fallback = true;
            break;
        }
        trace.push(energy);
        for ((v, g), c) in velocity
            .iter_mut()
            .zip(&grad)
            .zip(curve.coeffs.iter_mut())
        {
            *v = config.momentum * *v - config.learning_rate * g;
            *c += *v;
        }
    }
    if !fallback {
        match curve_energy(&curve, field, config.grid) {
            Ok((energy, _)) if energy.is_finite() => trace.push(energy),
            Ok(_) => fallback = true,
            Err(e) => return Err(e),
        }
    }
    if !fallback {
        let length = curve_length(&curve, field, config.grid)?;
        if length.is_finite() && length <= straight_length {
            let converged = match (trace.first(), trace.last()) {
                (Some(first), Some(last)) => last <= &(first + 1e-12),
                _ => false,
            };
            return Ok(GeodesicResult {
                curve,
                distance: length,
                converged,
                fallback: false,
                energy_trace: trace,
            });
        }
        if !length.is_finite() {
            fallback = true;
        }
    }
    Ok(GeodesicResult {
        curve: straight,
        distance: straight_length,
        converged: false,
        fallback,
        energy_trace: trace,
    })
}

/// Batch form of [`estimate_geodesic`] over endpoint pairs.
pub fn estimate_geodesic_batch(
    pairs: &[(Vec<f64>, Vec<f64>)],
    field: &dyn MetricField,
    config: &GeodesicConfig,
) -> Result<Vec<GeodesicResult>> {
    pairs
        .iter()
        .map(|(e0, e1)| estimate_geodesic(e0, e1, field, config))
        .collect()
}

/// Discrete energy Σ_{i=1..n} Σ_m ‖m(γ(t_i)) − m(γ(t_{i−1}))‖² and its
/// gradient w.r.t. the spline coefficients. Endpoint grid points contribute
/// no gradient because every basis function vanishes there.
fn curve_energy(
    curve: &SplineCurve,
    field: &dyn MetricField,
    n: usize,
) -> Result<(f64, Vec<f64>)> {
    let dim = curve.dim();
    let dt = 1.0 / n as f64;
    let mut values: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        values.push(field.energy_values(&curve.eval(i as f64 * dt))?);
    }
    let maps = values[0].len();
    let mut energy = 0.0;
    for i in 1..=n {
        for m in 0..maps {
            for (a, b) in values[i][m].iter().zip(&values[i - 1][m]) {
                let d = a - b;
                energy += d * d;
            }
        }
    }
    let mut grad = vec![0.0; dim * NUM_BASIS];
    for i in 1..n {
        let t = i as f64 * dt;
        let adjoints: Vec<Vec<f64>> = (0..maps)
            .map(|m| {
                values[i][m]
                    .iter()
                    .zip(&values[i - 1][m])
                    .zip(&values[i + 1][m])
                    .map(|((cur, prev), next)| 2.0 * (cur - prev) - 2.0 * (next - cur))
                    .collect()
            })
            .collect();
        let point_grad = field.energy_vjp(&curve.eval(t), &adjoints)?;
        let basis = basis_values(t);
        for d in 0..dim {
            for (k, b) in basis.iter().enumerate() {
                grad[d * NUM_BASIS + k] += point_grad[d] * b;
            }
        }
    }
    Ok((energy, grad))
}
