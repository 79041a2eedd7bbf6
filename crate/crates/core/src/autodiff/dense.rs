use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_dim, Activation, Jacobian};
use crate::error::{Error, Result};

/// One fully connected layer. `weight` is row-major with shape
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
}

/// Dense MLP with exact reverse-mode gradients.
///
/// Weights and biases are initialized uniformly in
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

/// Forward trace kept for the adjoint pass: the input to every layer and
/// every pre-activation vector.
#[derive(Debug, Clone)]
pub struct NetworkTrace {
    pub(crate) inputs: Vec<Vec<f64>>,
    pub(crate) pre: Vec<Vec<f64>>,
}

impl NetworkTrace {
    pub fn output(&self, net: &DenseNetwork) -> Vec<f64> {
        let last = net.layers.len() - 1;
        let act = net.layers[last].activation;
        self.pre[last].iter().map(|&z| act.apply(z)).collect()
    }
}

/// Per-layer parameter gradients mirroring the network layout.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub(crate) weight: Vec<Vec<f64>>,
    pub(crate) bias: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        ParamGrads {
            weight: net.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            for x in a.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// Gradients in canonical parameter order (per layer: weight then bias),
    /// matching [`DenseNetwork::params`].
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weight
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .copied()
    }
}

impl DenseNetwork {
    /// Builds a network with layer widths `dims` (input first). All layers
    /// but the last use `hidden`; the last uses `output`.
    pub fn new(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("DenseNetwork needs at least one layer"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("DenseNetwork layer widths must be nonzero"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let weight = (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            let bias = (0..out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                weight,
                bias,
                activation: hidden,
            });
        }
        layers.last_mut().expect("nonempty").activation = output;
        Ok(DenseNetwork { layers })
    }

    /// Zeroes the final layer's weights and biases, so the network initially
    /// outputs exactly zero (used by coupling scale/translate networks).
    pub fn zero_final_layer(mut self) -> Self {
        let last = self.layers.last_mut().expect("nonempty");
        last.weight.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Layer {
        &mut self.layers[index]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("DenseNetwork::forward input", self.input_dim(), x.len())?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer_forward(layer, &cur);
        }
        Ok(cur)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<(Vec<f64>, NetworkTrace)> {
        check_dim("DenseNetwork::forward input", self.input_dim(), x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let z = affine(layer, &cur);
            inputs.push(cur);
            cur = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
        }
        Ok((
            cur,
            NetworkTrace { inputs, pre },
        ))
    }

    /// Reverse-mode pass. `adjoint` is dL/d(output); returns dL/d(input) and
    /// per-parameter gradients.
    pub fn backward(&self, trace: &NetworkTrace, adjoint: &[f64]) -> (Vec<f64>, ParamGrads) {
        debug_assert_eq!(adjoint.len(), self.output_dim());
        let mut grads = ParamGrads::zeros_like(self);
        let mut delta = adjoint.to_vec();
        self.backward_accumulate(trace, &mut delta, &mut grads);
        (delta, grads)
    }

    /// Like [`backward`](Self::backward) but adds into existing gradient
    /// buffers; `delta` is consumed as the adjoint and replaced by dL/d(input).
    pub fn backward_accumulate(
        &self,
        trace: &NetworkTrace,
        delta: &mut Vec<f64>,
        grads: &mut ParamGrads,
    ) {
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[l];
            for (d, &z) in delta.iter_mut().zip(pre) {
                *d *= layer.activation.derivative(z);
            }
            let input = &trace.inputs[l];
            let gw = &mut grads.weight[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                grads.bias[l][o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            *delta = prev;
        }
    }

    /// Convenience wrapper: traced forward plus adjoint pass in one call.
    pub fn param_gradients(&self, x: &[f64], adjoint: &[f64]) -> Result<(Vec<f64>, ParamGrads)> {
        check_dim(
            "DenseNetwork::param_gradients adjoint",
            self.output_dim(),
            adjoint.len(),
        )?;
        let (_, trace) = self.forward_traced(x)?;
        Ok(self.backward(&trace, adjoint))
    }

    /// Exact Jacobian d(output)/d(input) by forward accumulation.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Jacobian> {
        check_dim("DenseNetwork::input_jacobian input", self.input_dim(), x.len())?;
        let in_dim = self.input_dim();
        let mut j: Vec<f64> = (0..in_dim * in_dim)
            .map(|i| if i % (in_dim + 1) == 0 { 1.0 } else { 0.0 })
            .collect();
        let mut rows = in_dim;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let z = affine(layer, &cur);
            // J <- diag(act'(z)) * W * J
            let mut next = vec![0.0; layer.out_dim * in_dim];
            for o in 0..layer.out_dim {
                let wrow = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let out = &mut next[o * in_dim..(o + 1) * in_dim];
                for (k, &w) in wrow.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let jrow = &j[k * in_dim..(k + 1) * in_dim];
                    for c in 0..in_dim {
                        out[c] += w * jrow[c];
                    }
                }
                let d = layer.activation.derivative(z[o]);
                for v in out.iter_mut() {
                    *v *= d;
                }
            }
            j = next;
            rows = layer.out_dim;
            cur = z.iter().map(|&v| layer.activation.apply(v)).collect();
        }
        Jacobian::new(rows, in_dim, j, x.to_vec())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in canonical order (per layer: weight row-major, then bias).
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .copied()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let mut z = layer.bias.clone();
    for o in 0..layer.out_dim {
        let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut acc = 0.0;
        for (w, &v) in row.iter().zip(x) {
            acc += w * v;
        }
        z[o] += acc;
    }
    z
}

fn layer_forward(layer: &Layer, x: &[f64]) -> Vec<f64> {
    affine(layer, x)
        .into_iter()
        .map(|z| layer.activation.apply(z))
        .collect()
}
