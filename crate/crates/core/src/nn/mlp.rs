use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::params::ParamVector;
use crate::error::{check_len, HedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }

    pub fn with_activations(mut self, hidden: Activation, output: Activation) -> Self {
        self.hidden_activation = hidden;
        self.output_activation = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(HedError::InvalidSpec(
                "input and output dims must be >= 1".into(),
            ));
        }
        if self.hidden_dims.is_empty() {
            return Err(HedError::InvalidSpec(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(HedError::InvalidSpec("hidden dims must be >= 1".into()));
        }
        if self.hidden_activation == Activation::Identity {
            return Err(HedError::InvalidSpec(
                "hidden activation must be relu or tanh".into(),
            ));
        }
        if self.output_activation == Activation::Relu {
            return Err(HedError::InvalidSpec(
                "output activation must be identity or tanh".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_offset: usize,
    b_offset: usize,
    activation: Activation,
}

/// Fully connected network whose parameters are stored as one [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    params: ParamVector,
}

/// Activations recorded by [`Mlp::forward_batch`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output, `batch x output_dim` row-major.
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("network has at least one layer")
    }
}

fn layout(spec: &MlpSpec) -> Vec<Layer> {
    let shapes = spec.layer_shapes();
    let last = shapes.len() - 1;
    let mut offset = 0;
    shapes
        .into_iter()
        .enumerate()
        .map(|(idx, (fan_in, fan_out))| {
            let w_offset = offset;
            let b_offset = w_offset + fan_in * fan_out;
            offset = b_offset + fan_out;
            Layer {
                fan_in,
                fan_out,
                w_offset,
                b_offset,
                activation: if idx == last {
                    spec.output_activation
                } else {
                    spec.hidden_activation
                },
            }
        })
        .collect()
}

impl Mlp {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layers = layout(&spec);
        let mut params = ParamVector::zeros(spec.num_params());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut params[layer.w_offset..layer.b_offset] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        check_len("Mlp::from_params", spec.num_params(), params.len())?;
        let layers = layout(&spec);
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        let n = spec.num_params();
        Self::from_params(spec, ParamVector::zeros(n))
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Copy of the flat parameter vector.
    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    /// Replace all parameters; the length must match the spec.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        check_len("Mlp::unflatten", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Weight matrix of `layer` as a row-major `(fan_out, fan_in)` slice.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.params[l.w_offset..l.b_offset]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.params[l.b_offset..l.b_offset + l.fan_out]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Mlp::forward input", self.spec.input_dim, x.len())?;
        let tape = self.forward_batch(x, 1)?;
        Ok(tape.output().to_vec())
    }

    /// Evaluates `batch` row-major inputs at once.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Tape> {
        check_len(
            "Mlp::forward_batch input",
            batch * self.spec.input_dim,
            inputs.len(),
        )?;
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outputs.last().map_or(inputs, Vec::as_slice);
            let bias = &self.params[layer.b_offset..layer.b_offset + layer.fan_out];
            let mut out = Vec::with_capacity(batch * layer.fan_out);
            for _ in 0..batch {
                out.extend_from_slice(bias);
            }
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                1.0,
                x,
                (layer.fan_in, 1),
                &self.params[layer.w_offset..layer.b_offset],
                (1, layer.fan_in),
                1.0,
                &mut out,
                (layer.fan_out, 1),
            );
            if layer.activation != Activation::Identity {
                out.iter_mut().for_each(|z| *z = layer.activation.apply(*z));
            }
            outputs.push(out);
        }
        Ok(Tape {
            batch,
            input: inputs.to_vec(),
            outputs,
        })
    }

    /// Gradients of `sum_b upstream_b . output_b` with respect to the
    /// parameters and to the inputs.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
        let tape = self.forward_batch(x, 1)?;
        self.backward_batch(&tape, upstream)
    }

    pub fn backward_batch(&self, tape: &Tape, upstream: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
        let mut grad = ParamVector::zeros(self.params.len());
        let input_grad = self.backprop(tape, upstream, Some(&mut grad))?;
        Ok((grad, input_grad))
    }

    /// Input gradient only; skips the weight-gradient products.
    pub fn input_gradient_batch(&self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backprop(tape, upstream, None)
    }

    fn backprop(
        &self,
        tape: &Tape,
        upstream: &[f64],
        mut param_grad: Option<&mut ParamVector>,
    ) -> Result<Vec<f64>> {
        let batch = tape.batch;
        check_len(
            "Mlp::backward upstream",
            batch * self.spec.output_dim,
            upstream.len(),
        )?;
        check_len("Mlp::backward tape", self.layers.len(), tape.outputs.len())?;
        let mut delta = upstream.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let y = &tape.outputs[idx];
            if layer.activation != Activation::Identity {
                for (d, &yv) in delta.iter_mut().zip(y) {
                    *d *= layer.activation.derivative_from_output(yv);
                }
            }
            let x = if idx == 0 {
                &tape.input
            } else {
                &tape.outputs[idx - 1]
            };
            if let Some(grad) = param_grad.as_deref_mut() {
                gemm(
                    layer.fan_out,
                    batch,
                    layer.fan_in,
                    1.0,
                    &delta,
                    (1, layer.fan_out),
                    x,
                    (layer.fan_in, 1),
                    0.0,
                    &mut grad[layer.w_offset..layer.b_offset],
                    (layer.fan_in, 1),
                );
                let gb = &mut grad[layer.b_offset..layer.b_offset + layer.fan_out];
                for row in delta.chunks_exact(layer.fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            let mut dx = vec![0.0; batch * layer.fan_in];
            gemm(
                batch,
                layer.fan_out,
                layer.fan_in,
                1.0,
                &delta,
                (layer.fan_out, 1),
                &self.params[layer.w_offset..layer.b_offset],
                (layer.fan_in, 1),
                0.0,
                &mut dx,
                (layer.fan_in, 1),
            );
            delta = dx;
        }
        Ok(delta)
    }
}
