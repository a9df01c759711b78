use super::{Activation, BoundDense, BoundMlp, Dense, Mlp3, NetError};
use crate::numgrad::{Gradients, Graph, Mat, NodeId, NumError, Tensor};
use crate::rng;

/// Default hidden width of the encoder, decoder and discriminator.
pub const HIDDEN_WIDTH: usize = 2048;
/// Default deformation-code dimension.
pub const CODE_DIM: usize = 64;
/// Default width of the classifier's two hidden layers.
pub const CLASSIFIER_WIDTH: usize = 512;

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), NetError> {
    if expected == got {
        Ok(())
    } else {
        Err(NetError::Dimension { what, expected, got })
    }
}

fn row(v: &[f32]) -> Mat {
    Mat::from_rows(&[v]).expect("single row")
}

/// Encoder/decoder pair. The encoder maps a concatenated pair `[x1, x2]`
/// (2·D) to a nonnegative code (C); the decoder maps `[z, x]` (C + D) to a
/// nonnegative feature (D).
#[derive(Clone, Debug, PartialEq)]
pub struct HallucinatorModel {
    pub encoder: Mlp3,
    pub decoder: Mlp3,
}

impl HallucinatorModel {
    pub fn new(feature_dim: usize, code_dim: usize, hidden: usize, seed: u64) -> Result<Self, NetError> {
        Ok(Self {
            encoder: Mlp3::init(2 * feature_dim, hidden, code_dim, Activation::Relu, rng::derive(seed, 1))?,
            decoder: Mlp3::init(code_dim + feature_dim, hidden, feature_dim, Activation::Softplus, rng::derive(seed, 2))?,
        })
    }

    pub fn zeros(feature_dim: usize, code_dim: usize, hidden: usize) -> Self {
        Self {
            encoder: Mlp3::zeros(2 * feature_dim, hidden, code_dim, Activation::Relu),
            decoder: Mlp3::zeros(code_dim + feature_dim, hidden, feature_dim, Activation::Softplus),
        }
    }

    /// Assembles a model from parts, checking that the code slot of the
    /// decoder matches the encoder output. The encoder must end in ReLU and
    /// the decoder in ReLU or softplus.
    pub fn from_parts(encoder: Mlp3, decoder: Mlp3) -> Result<Self, NetError> {
        if encoder.activation != Activation::Relu {
            return Err(NetError::Activation {
                what: "encoder output",
                found: encoder.activation,
            });
        }
        if !matches!(decoder.activation, Activation::Relu | Activation::Softplus) {
            return Err(NetError::Activation {
                what: "decoder output",
                found: decoder.activation,
            });
        }
        let d = decoder.output_dim();
        check("encoder input (2·D)", 2 * d, encoder.input_dim())?;
        check("decoder input (C + D)", encoder.output_dim() + d, decoder.input_dim())?;
        Ok(Self { encoder, decoder })
    }

    pub fn feature_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encode(&self, xa1: &[f32], xa2: &[f32]) -> Result<Vec<f32>, NetError> {
        let d = self.feature_dim();
        check("encode x1", d, xa1.len())?;
        check("encode x2", d, xa2.len())?;
        let x: Vec<f32> = xa1.iter().chain(xa2).copied().collect();
        Ok(self.encoder.forward_rows(&row(&x))?.row_f32(0))
    }

    pub fn decode(&self, z: &[f32], xb1: &[f32]) -> Result<Vec<f32>, NetError> {
        check("decode code", self.code_dim(), z.len())?;
        check("decode feature", self.feature_dim(), xb1.len())?;
        let x: Vec<f32> = z.iter().chain(xb1).copied().collect();
        Ok(self.decoder.forward_rows(&row(&x))?.row_f32(0))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.encoder.params().into_iter().chain(self.decoder.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let [a, b, c, d] = self.encoder.params_mut();
        let [e, f, g, h] = self.decoder.params_mut();
        vec![a, b, c, d, e, f, g, h]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundHallucinator {
        BoundHallucinator {
            encoder: self.encoder.bind(g, trainable),
            decoder: self.decoder.bind(g, trainable),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundHallucinator {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
}

impl BoundHallucinator {
    /// `Eₙ([x1, x2])` over batched rows.
    pub fn encode(&self, g: &mut Graph, x1: NodeId, x2: NodeId) -> Result<NodeId, NumError> {
        let pair = g.concat(x1, x2)?;
        self.encoder.forward(g, pair)
    }

    /// `Dₑ([z, x])` over batched rows.
    pub fn decode(&self, g: &mut Graph, z: NodeId, x: NodeId) -> Result<NodeId, NumError> {
        let input = g.concat(z, x)?;
        self.decoder.forward(g, input)
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.encoder.nodes().into_iter().chain(self.decoder.nodes()).collect()
    }

    pub fn grads<'a>(&self, grads: &'a Gradients) -> Vec<&'a [f64]> {
        self.nodes().into_iter().map(|id| grads.data(id)).collect()
    }
}

/// Pair discriminator: `[x1, x2]` (2·D) to a probability that the pair is a
/// real same-identity pair.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    pub net: Mlp3,
}

impl DiscriminatorModel {
    pub fn new(feature_dim: usize, hidden: usize, seed: u64) -> Result<Self, NetError> {
        Ok(Self {
            net: Mlp3::init(2 * feature_dim, hidden, 1, Activation::Sigmoid, rng::derive(seed, 3))?,
        })
    }

    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self {
            net: Mlp3::zeros(2 * feature_dim, hidden, 1, Activation::Sigmoid),
        }
    }

    pub fn from_net(net: Mlp3) -> Result<Self, NetError> {
        check("discriminator output", 1, net.output_dim())?;
        if net.input_dim() % 2 != 0 {
            return Err(NetError::Dimension {
                what: "discriminator input (even)",
                expected: net.input_dim() + 1,
                got: net.input_dim(),
            });
        }
        Ok(Self { net })
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim() / 2
    }

    pub fn discriminate(&self, x1: &[f32], x2: &[f32]) -> Result<f64, NetError> {
        let d = self.feature_dim();
        check("discriminate x1", d, x1.len())?;
        check("discriminate x2", d, x2.len())?;
        let x: Vec<f32> = x1.iter().chain(x2).copied().collect();
        Ok(self.net.forward_rows(&row(&x))?.data[0])
    }
}

/// Online classifier: `D → w1 → w2 → 2` with ReLU between layers and a
/// softmax over (positive, negative).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub layers: [Dense; 3],
}

impl ClassifierHead {
    pub fn new(input: usize, widths: (usize, usize), seed: u64) -> Result<Self, NetError> {
        if input == 0 || widths.0 == 0 || widths.1 == 0 {
            return Err(NetError::ZeroDimension {
                input,
                hidden: widths.0.min(widths.1),
                output: 2,
            });
        }
        let mut r = rng::stream(seed, 4);
        Ok(Self {
            layers: [
                Dense::init(input, widths.0, &mut r),
                Dense::init(widths.0, widths.1, &mut r),
                Dense::init(widths.1, 2, &mut r),
            ],
        })
    }

    pub fn zeros(input: usize, widths: (usize, usize)) -> Self {
        Self {
            layers: [
                Dense::zeros(input, widths.0),
                Dense::zeros(widths.0, widths.1),
                Dense::zeros(widths.1, 2),
            ],
        }
    }

    pub fn from_layers(layers: [Dense; 3]) -> Result<Self, NetError> {
        check("classifier layer 2 input", layers[0].fan_out(), layers[1].fan_in())?;
        check("classifier layer 3 input", layers[1].fan_out(), layers[2].fan_in())?;
        check("classifier output", 2, layers[2].fan_out())?;
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundClassifier {
        BoundClassifier {
            layers: [
                self.layers[0].bind(g, trainable),
                self.layers[1].bind(g, trainable),
                self.layers[2].bind(g, trainable),
            ],
        }
    }

    /// Raw (positive, negative) logits per row.
    pub fn logits_rows(&self, x: &Mat) -> Result<Mat, NetError> {
        check("classifier input", self.input_dim(), x.cols)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xi = g.constant_mat(x.clone());
        let y = bound.logits(&mut g, xi)?;
        Ok(g.value(y).clone())
    }

    /// Positive-class probability per row.
    pub fn positive_scores(&self, x: &Mat) -> Result<Vec<f64>, NetError> {
        let logits = self.logits_rows(x)?;
        Ok((0..logits.rows)
            .map(|i| softmax2(logits.row(i)[0], logits.row(i)[1]).0)
            .collect())
    }

    pub fn classify(&self, x: &[f32]) -> Result<(f64, f64), NetError> {
        let logits = self.logits_rows(&row(x))?;
        Ok(softmax2(logits.data[0], logits.data[1]))
    }
}

/// Two-way softmax, returning `(p0, p1)`.
pub fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    (ea / (ea + eb), eb / (ea + eb))
}

#[derive(Clone, Copy, Debug)]
pub struct BoundClassifier {
    pub layers: [BoundDense; 3],
}

impl BoundClassifier {
    pub fn logits(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, NumError> {
        let h1 = self.layers[0].forward(g, x)?;
        let h1 = g.relu(h1);
        let h2 = self.layers[1].forward(g, h1)?;
        let h2 = g.relu(h2);
        self.layers[2].forward(g, h2)
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn grads<'a>(&self, grads: &'a Gradients) -> Vec<&'a [f64]> {
        self.nodes().into_iter().map(|id| grads.data(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_zero_code_and_constant_feature() {
        let m = HallucinatorModel::zeros(5, 3, 7);
        let x = [0.3, -1.0, 2.0, 0.0, 4.0];
        assert_eq!(m.encode(&x, &x).unwrap(), vec![0.0; 3]);
        assert_eq!(m.decode(&[1.0, 2.0, 3.0], &x).unwrap(), vec![std::f32::consts::LN_2; 5]);
    }

    #[test]
    fn encode_decode_ranges_and_shapes() {
        let m = HallucinatorModel::new(6, 4, 16, 5).unwrap();
        let a: Vec<f32> = (0..6).map(|i| (i as f32 * 0.7).sin()).collect();
        let b: Vec<f32> = (0..6).map(|i| (i as f32 * 1.3).cos()).collect();
        let z = m.encode(&a, &b).unwrap();
        assert_eq!(z.len(), 4);
        assert!(z.iter().all(|&v| v >= 0.0));
        let x = m.decode(&z, &a).unwrap();
        assert_eq!(x.len(), 6);
        assert!(x.iter().all(|&v| v >= 0.0));
        assert_eq!(x, m.decode(&z, &a).unwrap());
        // Self-pair is a valid input.
        assert_eq!(m.encode(&a, &a).unwrap().len(), 4);
    }

    #[test]
    fn dimension_errors() {
        let m = HallucinatorModel::new(6, 4, 8, 1).unwrap();
        assert!(matches!(m.encode(&[0.0; 5], &[0.0; 6]), Err(NetError::Dimension { .. })));
        assert!(matches!(m.decode(&[0.0; 3], &[0.0; 6]), Err(NetError::Dimension { .. })));
        let d = DiscriminatorModel::new(6, 8, 1).unwrap();
        assert!(d.discriminate(&[0.0; 6], &[0.0; 7]).is_err());
        let c = ClassifierHead::new(6, (4, 4), 1).unwrap();
        assert!(c.classify(&[0.0; 2]).is_err());
    }

    #[test]
    fn zero_discriminator_and_classifier_are_uninformative() {
        let d = DiscriminatorModel::zeros(4, 8);
        assert_eq!(d.discriminate(&[1.0; 4], &[2.0; 4]).unwrap(), 0.5);
        let c = ClassifierHead::zeros(4, (3, 3));
        assert_eq!(c.classify(&[1.0, 2.0, 3.0, 4.0]).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn discriminator_is_not_symmetric() {
        let d = DiscriminatorModel::new(4, 16, 9).unwrap();
        let a = [0.1, 0.9, -0.4, 0.3];
        let b = [1.2, -0.3, 0.8, 0.0];
        let p = d.discriminate(&a, &b).unwrap();
        let q = d.discriminate(&b, &a).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_ne!(p, q);
    }

    #[test]
    fn softmax_shift_invariance() {
        let (p, q) = softmax2(1.5, -0.5);
        let (p2, q2) = softmax2(101.5, 99.5);
        assert!((p - p2).abs() < 1e-12 && (q - q2).abs() < 1e-12);
    }

    #[test]
    fn paper_scale_encoder_shape() {
        let m = HallucinatorModel::zeros(4608, CODE_DIM, HIDDEN_WIDTH);
        assert_eq!(m.encoder.input_dim(), 2 * 4608);
        assert_eq!(m.code_dim(), 64);
        assert_eq!(m.decoder.input_dim(), 64 + 4608);
    }

    proptest! {
        #[test]
        fn classifier_outputs_a_distribution(xs in proptest::collection::vec(-50.0f32..50.0, 5), seed in 0u64..1000) {
            let c = ClassifierHead::new(5, (8, 6), seed).unwrap();
            let (p, q) = c.classify(&xs).unwrap();
            prop_assert!((p + q - 1.0).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn discriminator_output_in_open_interval(xs in proptest::collection::vec(-5.0f32..5.0, 6), seed in 0u64..1000) {
            let d = DiscriminatorModel::new(3, 8, seed).unwrap();
            let p = d.discriminate(&xs[..3], &xs[3..]).unwrap();
            prop_assert!(p > 0.0 && p < 1.0 && p.is_finite());
        }

        #[test]
        fn shapes_compose_for_any_config(d in 1usize..12, c in 1usize..6, h in 1usize..10, seed in 0u64..100) {
            let m = HallucinatorModel::new(d, c, h, seed).unwrap();
            let x = vec![0.5f32; d];
            let z = m.encode(&x, &x).unwrap();
            let y = m.decode(&z, &x).unwrap();
            prop_assert_eq!(y.len(), d);
            prop_assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}
