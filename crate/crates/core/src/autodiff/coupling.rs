use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{DenseNetwork, NetworkTrace, ParamGrads};
use super::{check_dim, Activation};
use crate::error::{Error, Result};

/// Log-scale outputs are clamped to this symmetric band before
/// exponentiation, so the forward map can never overflow.
pub const LOG_SCALE_CLAMP: f64 = 6.0;

/// One coupling layer: dimensions with `mask[i] == true` condition the
/// scale/translate networks and pass through unchanged; the rest are
/// transformed as `y = x * exp(s) + t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingLayer {
    mask: Vec<bool>,
    scale: DenseNetwork,
    translate: DenseNetwork,
}

/// Invertible affine coupling stack with alternating parity masks. The
/// scale and translate networks start with zeroed final layers, so a fresh
/// stack is exactly the identity map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineCoupling {
    dim: usize,
    layers: Vec<CouplingLayer>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    b: Vec<f64>,
    s_raw: Vec<f64>,
    s: Vec<f64>,
    scale_trace: NetworkTrace,
    translate_trace: NetworkTrace,
}

/// Forward trace of the full stack, consumed by [`AffineCoupling::backward`].
#[derive(Debug, Clone)]
pub struct CouplingTrace {
    layers: Vec<LayerTrace>,
}

/// Per-layer scale/translate gradients, in the same order as
/// [`AffineCoupling::params`].
#[derive(Debug, Clone)]
pub struct CouplingGrads {
    pub(crate) scale: Vec<ParamGrads>,
    pub(crate) translate: Vec<ParamGrads>,
}

impl CouplingGrads {
    pub fn zeros_like(coupling: &AffineCoupling) -> Self {
        CouplingGrads {
            scale: coupling
                .layers
                .iter()
                .map(|l| ParamGrads::zeros_like(&l.scale))
                .collect(),
            translate: coupling
                .layers
                .iter()
                .map(|l| ParamGrads::zeros_like(&l.translate))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &CouplingGrads) {
        for (a, b) in self.scale.iter_mut().zip(&other.scale) {
            a.add_assign(b);
        }
        for (a, b) in self.translate.iter_mut().zip(&other.translate) {
            a.add_assign(b);
        }
    }

    pub fn scale_by(&mut self, factor: f64) {
        for g in self.scale.iter_mut().chain(self.translate.iter_mut()) {
            g.scale(factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.scale
            .iter()
            .zip(&self.translate)
            .flat_map(|(s, t)| s.iter().chain(t.iter()))
    }
}

impl AffineCoupling {
    pub fn new(
        dim: usize,
        num_layers: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("AffineCoupling requires dim >= 2"));
        }
        if num_layers == 0 {
            return Err(Error::invalid("AffineCoupling requires at least one layer"));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let mask: Vec<bool> = (0..dim).map(|i| i % 2 == l % 2).collect();
            let a_len = mask.iter().filter(|&&m| m).count();
            let b_len = dim - a_len;
            let mut dims = Vec::with_capacity(hidden.len() + 2);
            dims.push(a_len);
            dims.extend_from_slice(hidden);
            dims.push(b_len);
            let scale = DenseNetwork::new(&dims, Activation::Tanh, Activation::Identity, rng)?
                .zero_final_layer();
            let translate = DenseNetwork::new(&dims, Activation::Tanh, Activation::Identity, rng)?
                .zero_final_layer();
            layers.push(CouplingLayer {
                mask,
                scale,
                translate,
            });
        }
        Ok(AffineCoupling { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<(Vec<f64>, CouplingTrace)> {
        check_dim("AffineCoupling::forward input", self.dim, x.len())?;
        let mut cur = x.to_vec();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, b) = split(&layer.mask, &cur);
            let (s_raw, scale_trace) = layer.scale.forward_traced(&a)?;
            if s_raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("coupling log-scale"));
            }
            let s: Vec<f64> = s_raw
                .iter()
                .map(|&v| v.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP))
                .collect();
            let (t, translate_trace) = layer.translate.forward_traced(&a)?;
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("coupling translation"));
            }
            let yb: Vec<f64> = b
                .iter()
                .zip(&s)
                .zip(&t)
                .map(|((&bv, &sv), &tv)| bv * sv.exp() + tv)
                .collect();
            cur = merge(&layer.mask, &a, &yb);
            traces.push(LayerTrace {
                b,
                s_raw,
                s,
                scale_trace,
                translate_trace,
            });
        }
        Ok((cur, CouplingTrace { layers: traces }))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("AffineCoupling::inverse input", self.dim, y.len())?;
        let mut cur = y.to_vec();
        for layer in self.layers.iter().rev() {
            let (a, yb) = split(&layer.mask, &cur);
            let s_raw = layer.scale.forward(&a)?;
            if s_raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("coupling log-scale"));
            }
            let t = layer.translate.forward(&a)?;
            let b: Vec<f64> = yb
                .iter()
                .zip(&s_raw)
                .zip(&t)
                .map(|((&yv, &sv), &tv)| {
                    (yv - tv) * (-sv.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)).exp()
                })
                .collect();
            cur = merge(&layer.mask, &a, &b);
        }
        Ok(cur)
    }

    /// Adjoint pass through the forward map. The clamp contributes zero
    /// gradient to log-scales outside the open band.
    pub fn backward(&self, trace: &CouplingTrace, adjoint: &[f64]) -> (Vec<f64>, CouplingGrads) {
        debug_assert_eq!(adjoint.len(), self.dim);
        let mut grads = CouplingGrads::zeros_like(self);
        let mut adj = adjoint.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let lt = &trace.layers[l];
            let (ga, gb) = split(&layer.mask, &adj);
            let db: Vec<f64> = gb.iter().zip(&lt.s).map(|(&g, &s)| g * s.exp()).collect();
            let ds: Vec<f64> = gb
                .iter()
                .zip(&lt.s)
                .zip(&lt.b)
                .zip(&lt.s_raw)
                .map(|(((&g, &s), &b), &raw)| {
                    if raw.abs() < LOG_SCALE_CLAMP {
                        g * b * s.exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let dt = gb;
            let (da_s, sg) = layer.scale.backward(&lt.scale_trace, &ds);
            let (da_t, tg) = layer.translate.backward(&lt.translate_trace, &dt);
            grads.scale[l].add_assign(&sg);
            grads.translate[l].add_assign(&tg);
            let da: Vec<f64> = ga
                .iter()
                .zip(&da_s)
                .zip(&da_t)
                .map(|((&g, &s), &t)| g + s + t)
                .collect();
            adj = merge(&layer.mask, &da, &db);
        }
        (adj, grads)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.scale.param_count() + l.translate.param_count())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.scale.params().chain(l.translate.params()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.scale.params_mut().chain(l.translate.params_mut()))
    }

    pub(crate) fn layer_nets(&self, index: usize) -> (&DenseNetwork, &DenseNetwork) {
        let l = &self.layers[index];
        (&l.scale, &l.translate)
    }

    pub(crate) fn layer_nets_mut(&mut self, index: usize) -> (&mut DenseNetwork, &mut DenseNetwork) {
        let l = &mut self.layers[index];
        (&mut l.scale, &mut l.translate)
    }
}

fn split(mask: &[bool], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(mask.len());
    let mut b = Vec::with_capacity(mask.len());
    for (&m, &v) in mask.iter().zip(x) {
        if m {
            a.push(v);
        } else {
            b.push(v);
        }
    }
    (a, b)
}

fn merge(mask: &[bool], a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(mask.len());
    let (mut ia, mut ib) = (0, 0);
    for &m in mask {
        if m {
            out.push(a[ia]);
            ia += 1;
        } else {
            out.push(b[ib]);
            ib += 1;
        }
    }
    out
}
