//! Fixed-architecture ELU multilayer perceptron with hand-written
//! reverse-mode derivatives.
//!
//! Parameters live in a single flat buffer, layer by layer: the row-major
//! weight matrix (`out x in`) followed by the bias vector. Hidden layers use
//! ELU with `alpha = 1`; the output layer is affine.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    data: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config(format!(
            "an MLP needs at least an input and an output width, got {sizes:?}"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::config(format!(
            "MLP layer widths must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

/// He-style uniform initialization with bound `sqrt(6 / fan_in)` and zero biases.
pub fn init_mlp(layer_sizes: &[usize], rng_seed: u64) -> Result<MlpParams> {
    validate_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut params = MlpParams {
        sizes: layer_sizes.to_vec(),
        data: vec![0.0; param_count(layer_sizes)],
    };
    for layer in 0..params.num_layers() {
        let fan_in = params.sizes[layer] as f64;
        let bound = (6.0 / fan_in).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for w in params.weights_mut(layer) {
            *w = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

impl MlpParams {
    pub fn from_parts(sizes: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_sizes(&sizes)?;
        Error::check_dim("MLP parameter buffer", param_count(&sizes), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("MLP parameters must be finite"));
        }
        Ok(MlpParams { sizes, data })
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            sizes: self.sizes.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.layer_offset(layer);
        start..start + self.sizes[layer] * self.sizes[layer + 1]
    }

    fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.weight_range(layer).end;
        start..start + self.sizes[layer + 1]
    }

    /// Row-major `out x in` weight matrix of `layer`.
    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.data[self.weight_range(layer)]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.weight_range(layer);
        &mut self.data[r]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.data[self.bias_range(layer)]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.bias_range(layer);
        &mut self.data[r]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("MLP input", self.input_dim(), x.len())?;
        let mut act = x.to_vec();
        for layer in 0..self.num_layers() {
            let mut out = self.affine(layer, &act);
            if layer + 1 < self.num_layers() {
                out.iter_mut().for_each(|v| *v = elu(*v));
            }
            act = out;
        }
        Ok(act)
    }

    /// Forward evaluation that keeps the intermediates needed by [`ForwardPass::backward`].
    pub fn forward_pass(&self, x: &[f64]) -> Result<ForwardPass> {
        Error::check_dim("MLP input", self.input_dim(), x.len())?;
        let hidden = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(hidden);
        inputs.push(x.to_vec());
        for layer in 0..hidden {
            let s = self.affine(layer, &inputs[layer]);
            inputs.push(s.iter().map(|&v| elu(v)).collect());
            pre.push(s);
        }
        let output = self.affine(hidden, &inputs[hidden]);
        Ok(ForwardPass {
            inputs,
            pre,
            output,
        })
    }

    /// Returns `(u^T df/dtheta, u^T df/dx)` for cotangent `u`.
    pub fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
        let pass = self.forward_pass(x)?;
        let mut grads = self.zeros_like();
        let input_grad = pass.backward(self, cotangent, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    fn affine(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let w = self.weights(layer);
        let cols = self.sizes[layer];
        self.bias(layer)
            .iter()
            .zip(w.chunks_exact(cols))
            .map(|(b, row)| b + dot(row, x))
            .collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intermediates of one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }

    /// Back-propagates `cotangent`, accumulating parameter gradients into
    /// `param_grads` when given, and returns the input gradient.
    pub fn backward(
        &self,
        params: &MlpParams,
        cotangent: &[f64],
        mut param_grads: Option<&mut MlpParams>,
    ) -> Result<Vec<f64>> {
        Error::check_dim("MLP cotangent", params.output_dim(), cotangent.len())?;
        if let Some(g) = param_grads.as_deref() {
            if g.sizes != params.sizes {
                return Err(Error::config("gradient buffer has a different architecture"));
            }
        }
        let mut delta = cotangent.to_vec();
        for layer in (0..params.num_layers()).rev() {
            if layer + 1 < params.num_layers() {
                for (d, &s) in delta.iter_mut().zip(&self.pre[layer]) {
                    *d *= elu_derivative(s);
                }
            }
            let input = &self.inputs[layer];
            let cols = params.sizes[layer];
            if let Some(g) = param_grads.as_deref_mut() {
                let gw = g.weights_mut(layer);
                for (row, &d) in gw.chunks_exact_mut(cols).zip(&delta) {
                    if d != 0.0 {
                        for (gij, &xj) in row.iter_mut().zip(input) {
                            *gij += d * xj;
                        }
                    }
                }
                for (gb, &d) in g.bias_mut(layer).iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            let mut prev = vec![0.0; cols];
            for (row, &d) in params.weights(layer).chunks_exact(cols).zip(&delta) {
                if d != 0.0 {
                    for (p, &wij) in prev.iter_mut().zip(row) {
                        *p += wij * d;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}
