use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, BatchStats, ParamStore, Tape, Tensor, Var};

/// Fully connected network `input -> hidden... -> output` with one shared
/// hidden activation and an optional output activation.
///
/// Weights are stored as `{prefix}.l{k}.w` (`d_in x d_out`) and
/// `{prefix}.l{k}.b` (`1 x d_out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub output: Option<Activation>,
}

impl Mlp {
    pub fn new(prefix: &str, dims: Vec<usize>, hidden: Activation, output: Option<Activation>) -> Self {
        debug_assert!(dims.len() >= 2);
        Self {
            prefix: prefix.to_string(),
            dims,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for both
    /// weights and biases.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for (k, pair) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
            let w = Tensor::from_vec(fan_in, fan_out, draw(fan_in * fan_out))?;
            let b = Tensor::from_vec(1, fan_out, draw(fan_out))?;
            store.insert(self.weight_name(k), w)?;
            store.insert(self.bias_name(k), b)?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, trainable: bool) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::Dimension {
                op: "network input",
                left: tape.value(x).shape(),
                right: (cols, self.input_dim()),
            });
        }
        let layers = self.dims.len() - 1;
        let mut h = x;
        for k in 0..layers {
            let w = tape.bind(store, &self.weight_name(k), trainable)?;
            let b = tape.bind(store, &self.bias_name(k), trainable)?;
            h = tape.affine(h, w, b)?;
            if k + 1 < layers {
                h = tape.activation(h, self.hidden);
            } else if let Some(act) = self.output {
                h = tape.activation(h, act);
            }
        }
        Ok(h)
    }

    /// Forward pass on plain values without gradient tracking.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, store, xv, false)?;
        Ok(tape.value(y).clone())
    }
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Exponential moving average update; the running variance uses the
    /// unbiased batch variance.
    pub fn update(&mut self, stats: &BatchStats, batch: usize) {
        let unbias = if batch > 1 {
            batch as f64 / (batch as f64 - 1.0)
        } else {
            1.0
        };
        let m = self.momentum;
        for j in 0..self.mean.len() {
            self.mean[j] = (1.0 - m) * self.mean[j] + m * stats.mean[j];
            self.var[j] = (1.0 - m) * self.var[j] + m * stats.var[j] * unbias;
        }
    }
}
