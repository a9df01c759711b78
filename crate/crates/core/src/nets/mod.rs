//! The perceptrons of the system: encoder, decoder, discriminator and the
//! online classifier head.

mod io;
mod models;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, ModelFile, MODEL_MAGIC, MODEL_VERSION};
pub use models::{
    BoundClassifier, BoundHallucinator, ClassifierHead, DiscriminatorModel, HallucinatorModel, CLASSIFIER_WIDTH, CODE_DIM,
    HIDDEN_WIDTH,
};

use rand::Rng as _;
use thiserror::Error;

use crate::numgrad::{Gradients, Graph, Mat, NodeId, NumError, Tensor};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("layer dimensions must be positive (in={input}, hidden={hidden}, out={output})")]
    ZeroDimension {
        input: usize,
        hidden: usize,
        output: usize,
    },
    #[error("{what} cannot use the {found:?} activation")]
    Activation { what: &'static str, found: Activation },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Softplus => g.softplus(x),
            Activation::Identity => x,
        }
    }
}

/// Affine layer `x·W + b` with `W: in×out` and `b: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut rng::Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound) as f32)
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, weight).expect("finite init"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundDense {
        let (weight, bias) = if trainable {
            (g.param(&self.weight), g.param(&self.bias))
        } else {
            (g.constant(&self.weight), g.constant(&self.bias))
        };
        BoundDense { weight, bias }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDense {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl BoundDense {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, NumError> {
        let xw = g.matmul(x, self.weight)?;
        g.add(xw, self.bias)
    }
}

/// Three-layer perceptron: input, one ReLU hidden layer, output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp3 {
    pub hidden: Dense,
    pub output: Dense,
    pub activation: Activation,
}

impl Mlp3 {
    pub fn init(input: usize, hidden: usize, output: usize, activation: Activation, seed: u64) -> Result<Self, NetError> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(NetError::ZeroDimension { input, hidden, output });
        }
        let mut r = rng::stream(seed, 0);
        Ok(Self {
            hidden: Dense::init(input, hidden, &mut r),
            output: Dense::init(hidden, output, &mut r),
            activation,
        })
    }

    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        Self {
            hidden: Dense::zeros(input, hidden),
            output: Dense::zeros(hidden, output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.fan_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.fan_out()
    }

    pub fn output_dim(&self) -> usize {
        self.output.fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.output.param_count()
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.hidden.weight, &self.hidden.bias, &self.output.weight, &self.output.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        BoundMlp {
            hidden: self.hidden.bind(g, trainable),
            output: self.output.bind(g, trainable),
            activation: self.activation,
        }
    }

    /// Batched inference over the rows of `x`.
    pub fn forward_rows(&self, x: &Mat) -> Result<Mat, NetError> {
        if x.cols != self.input_dim() {
            return Err(NetError::Dimension {
                what: "mlp input",
                expected: self.input_dim(),
                got: x.cols,
            });
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xi = g.constant_mat(x.clone());
        let y = bound.forward(&mut g, xi)?;
        Ok(g.value(y).clone())
    }
}

/// An [`Mlp3`] whose parameters live in a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundMlp {
    pub hidden: BoundDense,
    pub output: BoundDense,
    pub activation: Activation,
}

/// Intermediate nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct MlpTrace {
    pub hidden_pre: NodeId,
    pub logits: NodeId,
    pub out: NodeId,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, NumError> {
        Ok(self.trace(g, x)?.out)
    }

    pub fn trace(&self, g: &mut Graph, x: NodeId) -> Result<MlpTrace, NumError> {
        let hidden_pre = self.hidden.forward(g, x)?;
        let h = g.relu(hidden_pre);
        let logits = self.output.forward(g, h)?;
        let out = self.activation.apply(g, logits);
        Ok(MlpTrace { hidden_pre, logits, out })
    }

    pub fn nodes(&self) -> [NodeId; 4] {
        [self.hidden.weight, self.hidden.bias, self.output.weight, self.output.bias]
    }

    pub fn grads<'a>(&self, grads: &'a Gradients) -> [&'a [f64]; 4] {
        self.nodes().map(|id| grads.data(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let a = Mlp3::init(6, 5, 3, Activation::Relu, 11).unwrap();
        let b = Mlp3::init(6, 5, 3, Activation::Relu, 11).unwrap();
        let c = Mlp3::init(6, 5, 3, Activation::Relu, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Mlp3::init(0, 4, 2, Activation::Relu, 0),
            Err(NetError::ZeroDimension { .. })
        ));
    }

    #[test]
    fn paper_scale_parameter_count() {
        let m = Mlp3::zeros(2 * 4608, 2048, 64, Activation::Relu);
        assert_eq!(m.param_count(), 2 * 4608 * 2048 + 2048 + 2048 * 64 + 64);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let m = Mlp3::init(40, 30, 20, Activation::Relu, 3).unwrap();
        let bound = (6.0f64 / 70.0).sqrt() as f32;
        assert!(m.hidden.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(m.hidden.bias.data().iter().all(|&b| b == 0.0));
        assert!(m.output.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_weight_mean_is_centered() {
        // Uniform(-b, b) has σ = b/√3; the sample mean over n weights should
        // lie within 3σ/√n of zero.
        let m = Mlp3::init(200, 300, 10, Activation::Relu, 99).unwrap();
        let w = m.hidden.weight.data();
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let sigma = (6.0f64 / 500.0).sqrt() / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    }
}
