//! Fully connected layers, batch normalization, dropout and the MLP stack.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Running-statistics momentum: `running = m * running + (1 - m) * batch`.
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Whether stochastic layers sample (training) or act deterministically.
pub enum Mode<'a> {
    Train(&'a mut SeededRng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
}

impl Activation {
    pub fn apply<'t>(&self, x: Var<'t>) -> Var<'t> {
        match *self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu { alpha } => x.leaky_relu(alpha),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths; the output layer is added on top.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout_rate: f64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(NnError::Config("an MLP needs at least one hidden layer".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(NnError::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if let Activation::LeakyRelu { alpha } = self.activation {
            if !alpha.is_finite() {
                return Err(NnError::Config("leaky ReLU slope must be finite".into()));
            }
        }
        Ok(())
    }
}

/// `x W + b` with `W: in x out` and `b: 1 x out`.
pub fn affine<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    x.matmul(weight)?.add_row(bias)
}

/// Inverted dropout: surviving units are scaled by `1 / (1 - p)`.
pub fn dropout<'t>(x: Var<'t>, p: f64, mode: &mut Mode<'_>) -> Result<Var<'t>> {
    let Mode::Train(rng) = mode else {
        return Ok(x);
    };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let [r, c] = x.shape();
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.mask_mul(Rc::new(Tensor::new(r, c, mask)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform fan-in initialization on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let weight = Tensor::new(fan_in, fan_out, draw(fan_in * fan_out)).expect("sized");
        let bias = Tensor::new(1, fan_out, draw(fan_out)).expect("sized");
        Self { weight, bias }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Tensor::filled(1, width, 1.0),
            beta: Tensor::zeros(1, width),
            running_mean: Tensor::zeros(1, width),
            running_var: Tensor::filled(1, width, 1.0),
        }
    }

    /// Normalizes with batch statistics when training (and folds them into
    /// the running estimates) or with the running estimates otherwise.
    pub fn forward<'t>(
        &mut self,
        x: Var<'t>,
        gamma: Var<'t>,
        beta: Var<'t>,
        train: bool,
    ) -> Result<Var<'t>> {
        let tape = x.tape();
        let normalized = if train {
            let n = x.shape()[0];
            let mean = x.mean_rows();
            let centered = x.sub(mean.broadcast_rows(n))?;
            let var = centered.square().mean_rows();
            let inv_std = var.add_scalar(BATCH_NORM_EPS).sqrt().recip();
            let m = BATCH_NORM_MOMENTUM;
            self.running_mean = self
                .running_mean
                .zip_map(&mean.value(), |r, b| m * r + (1.0 - m) * b)?;
            self.running_var = self
                .running_var
                .zip_map(&var.value(), |r, b| m * r + (1.0 - m) * b)?;
            centered.mul_row(inv_std)?
        } else {
            let shift = tape.constant(self.running_mean.map(|v| -v));
            let inv_std = tape.constant(self.running_var.map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()));
            x.add_row(shift)?.mul_row(inv_std)?
        };
        normalized.mul_row(gamma)?.add_row(beta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Hidden {
    linear: Linear,
    norm: Option<BatchNorm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    input_dim: usize,
    output_dim: usize,
    hidden: Vec<Hidden>,
    output: Linear,
}

/// An MLP's parameters recorded on a tape, in [`Mlp::parameters`] order.
pub struct BoundMlp<'t> {
    pub vars: Vec<Var<'t>>,
}

impl Mlp {
    pub fn new(
        config: MlpConfig,
        input_dim: usize,
        output_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || output_dim == 0 {
            return Err(NnError::Config("MLP input and output widths must be positive".into()));
        }
        let mut fan_in = input_dim;
        let mut hidden = Vec::with_capacity(config.layer_widths.len());
        for &width in &config.layer_widths {
            hidden.push(Hidden {
                linear: Linear::init(fan_in, width, rng),
                norm: config.batch_norm.then(|| BatchNorm::new(width)),
            });
            fan_in = width;
        }
        let output = Linear::init(fan_in, output_dim, rng);
        Ok(Self {
            config,
            input_dim,
            output_dim,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Trainable tensors: per hidden layer weight, bias and (with batch
    /// norm) scale and shift, then the output weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for h in &self.hidden {
            out.push(&h.linear.weight);
            out.push(&h.linear.bias);
            if let Some(n) = &h.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for h in &mut self.hidden {
            out.push(&mut h.linear.weight);
            out.push(&mut h.linear.bias);
            if let Some(n) = &mut h.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    /// Records the parameters on `tape`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        BoundMlp {
            vars: self
                .parameters()
                .into_iter()
                .map(|p| tape.leaf(p.clone(), trainable))
                .collect(),
        }
    }

    pub fn forward<'t>(
        &mut self,
        bound: &BoundMlp<'t>,
        x: Var<'t>,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'t>> {
        if x.shape()[1] != self.input_dim {
            return Err(NnError::Shape(format!(
                "MLP expects {} input columns, got {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        let train = mode.is_train();
        let activation = self.config.activation;
        let dropout_rate = self.config.dropout_rate;
        let mut vars = bound.vars.iter().copied();
        let mut next = || vars.next().expect("bound parameters match the layer layout");
        let mut h = x;
        for layer in &mut self.hidden {
            h = affine(h, next(), next())?;
            if let Some(norm) = &mut layer.norm {
                let (gamma, beta) = (next(), next());
                h = norm.forward(h, gamma, beta, train)?;
            }
            h = activation.apply(h);
            h = dropout(h, dropout_rate, mode)?;
        }
        affine(h, next(), next())
    }

    /// Deterministic forward pass on plain tensors.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let input = tape.constant(x.clone());
        // Eval mode never touches running statistics, so a scratch copy keeps
        // `predict` callable through a shared reference.
        let mut scratch = self.clone();
        let out = scratch.forward(&bound, input, &mut Mode::Eval)?;
        Ok((*out.value()).clone())
    }
}
