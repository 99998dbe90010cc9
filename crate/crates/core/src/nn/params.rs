use rand::Rng as _;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Layer sizes of the LSTM -> LSTM -> dense(relu) -> dense(linear) regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub input_size: usize,
    pub lstm1: usize,
    pub lstm2: usize,
    pub dense: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { input_size: 151, lstm1: 64, lstm2: 128, dense: 32 }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.lstm1 == 0 || self.lstm2 == 0 || self.dense == 0 {
            return Err(Error::InvalidArchitecture(format!("all layer sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// How a configured dropout value is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutReading {
    /// The value is the probability of dropping a unit.
    #[default]
    DropRate,
    /// The value is the probability of keeping a unit.
    KeepProbability,
}

/// Inverted dropout on hidden-layer outputs; recurrent connections are never dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutConfig {
    /// Drop probability in `[0, 1)`.
    pub rate: f64,
    pub after_lstm1: bool,
    pub after_lstm2: bool,
    pub after_dense1: bool,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self { rate: 0.2, after_lstm1: true, after_lstm2: true, after_dense1: true }
    }
}

impl DropoutConfig {
    pub fn disabled() -> Self {
        Self { rate: 0.0, ..Self::default() }
    }

    pub fn from_reading(value: f64, reading: DropoutReading) -> Self {
        let rate = match reading {
            DropoutReading::DropRate => value,
            DropoutReading::KeepProbability => 1.0 - value,
        };
        Self { rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidArchitecture(format!("dropout rate {} is outside [0, 1)", self.rate)));
        }
        Ok(())
    }
}

/// Gate blocks are stacked in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// `4H x D`
    pub input_weights: Matrix,
    /// `4H x H`
    pub recurrent_weights: Matrix,
    /// `4H`
    pub bias: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_weights: Matrix::zeros(4 * hidden_size, input_size),
            recurrent_weights: Matrix::zeros(4 * hidden_size, hidden_size),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_weights.cols
    }

    pub fn hidden_size(&self) -> usize {
        self.recurrent_weights.cols
    }

    /// Forget-gate slice of the bias.
    pub fn forget_bias(&self) -> &[f64] {
        let h = self.hidden_size();
        &self.bias[h..2 * h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerParams {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayerParams {
    pub fn zeros(input_size: usize, output_size: usize, activation: Activation) -> Self {
        Self { weights: Matrix::zeros(output_size, input_size), bias: vec![0.0; output_size], activation }
    }
}

/// Every trainable tensor of the regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub lstm1: LstmLayerParams,
    pub lstm2: LstmLayerParams,
    pub dense1: DenseLayerParams,
    pub dense2: DenseLayerParams,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "lstm1.input_weights",
    "lstm1.recurrent_weights",
    "lstm1.bias",
    "lstm2.input_weights",
    "lstm2.recurrent_weights",
    "lstm2.bias",
    "dense1.weights",
    "dense1.bias",
    "dense2.weights",
    "dense2.bias",
];

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            lstm1: LstmLayerParams::zeros(arch.input_size, arch.lstm1),
            lstm2: LstmLayerParams::zeros(arch.lstm1, arch.lstm2),
            dense1: DenseLayerParams::zeros(arch.lstm2, arch.dense, Activation::Relu),
            dense2: DenseLayerParams::zeros(arch.dense, 1, Activation::Identity),
        }
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.lstm1.input_weights.data,
            &self.lstm1.recurrent_weights.data,
            &self.lstm1.bias,
            &self.lstm2.input_weights.data,
            &self.lstm2.recurrent_weights.data,
            &self.lstm2.bias,
            &self.dense1.weights.data,
            &self.dense1.bias,
            &self.dense2.weights.data,
            &self.dense2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            &mut self.lstm1.input_weights.data,
            &mut self.lstm1.recurrent_weights.data,
            &mut self.lstm1.bias,
            &mut self.lstm2.input_weights.data,
            &mut self.lstm2.recurrent_weights.data,
            &mut self.lstm2.bias,
            &mut self.dense1.weights.data,
            &mut self.dense1.bias,
            &mut self.dense2.weights.data,
            &mut self.dense2.bias,
        ]
    }

    /// `(rows, cols)` of each tensor; vectors are `(len, 1)`.
    pub fn shapes(&self) -> [(usize, usize); 10] {
        let m = |m: &Matrix| (m.rows, m.cols);
        let v = |v: &Vec<f64>| (v.len(), 1);
        [
            m(&self.lstm1.input_weights),
            m(&self.lstm1.recurrent_weights),
            v(&self.lstm1.bias),
            m(&self.lstm2.input_weights),
            m(&self.lstm2.recurrent_weights),
            v(&self.lstm2.bias),
            m(&self.dense1.weights),
            v(&self.dense1.bias),
            m(&self.dense2.weights),
            v(&self.dense2.bias),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.shapes() == other.shapes()
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Order-sensitive hash of every parameter bit.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            h = (h ^ t.len() as u64).wrapping_mul(0x0100_0000_01b3);
            for x in t {
                h = (h ^ x.to_bits()).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Gradients of a scalar loss, congruent with [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Params);

impl std::ops::Deref for Gradients {
    type Target = Params;
    fn deref(&self) -> &Params {
        &self.0
    }
}

impl std::ops::DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut Params {
        &mut self.0
    }
}

impl Gradients {
    pub fn zeros_like(params: &Params) -> Self {
        let mut g = params.clone();
        for t in g.tensors_mut() {
            t.fill(0.0);
        }
        Gradients(g)
    }

    pub fn scale(&mut self, by: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= by);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub dropout: DropoutConfig,
    pub params: Params,
}

impl Network {
    pub fn zeros(arch: Architecture, dropout: DropoutConfig) -> Result<Self> {
        arch.validate()?;
        dropout.validate()?;
        Ok(Self { arch, dropout, params: Params::zeros(&arch) })
    }

    /// Fingerprint of architecture and parameters, used to reject stale caches.
    pub fn fingerprint(&self) -> u64 {
        let a = &self.arch;
        let dims = [a.input_size, a.lstm1, a.lstm2, a.dense];
        dims.iter().fold(self.params.fingerprint(), |h, &d| (h ^ d as u64).wrapping_mul(0x0100_0000_01b3))
    }
}

/// Fan-based uniform initialization with all biases zero except the LSTM
/// forget-gate bias, which starts at one.
pub fn init_network(arch: Architecture, dropout: DropoutConfig, seed: u64) -> Result<Network> {
    let mut net = Network::zeros(arch, dropout)?;
    let mut rng = rng::seeded(seed);
    let mut fill = |m: &mut Matrix, fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        m.data.iter_mut().for_each(|x| *x = rng.sample(dist));
    };
    let p = &mut net.params;
    for layer in [&mut p.lstm1, &mut p.lstm2] {
        let (d, h) = (layer.input_size(), layer.hidden_size());
        fill(&mut layer.input_weights, d, h);
        fill(&mut layer.recurrent_weights, h, h);
        layer.bias[h..2 * h].fill(1.0);
    }
    fill(&mut p.dense1.weights, arch.lstm2, arch.dense);
    fill(&mut p.dense2.weights, arch.dense, 1);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_unit_forget_bias() {
        let a = init_network(Architecture::default(), DropoutConfig::default(), 9).unwrap();
        let b = init_network(Architecture::default(), DropoutConfig::default(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_network(Architecture::default(), DropoutConfig::default(), 10).unwrap());
        assert!(a.params.lstm1.forget_bias().iter().all(|&x| x == 1.0));
        assert!(a.params.lstm2.forget_bias().iter().all(|&x| x == 1.0));
        let h = a.arch.lstm1;
        assert!(a.params.lstm1.bias[..h].iter().all(|&x| x == 0.0));
        assert!(a.params.lstm1.bias[2 * h..].iter().all(|&x| x == 0.0));
        assert!(a.params.dense1.bias.iter().chain(&a.params.dense2.bias).all(|&x| x == 0.0));
    }

    #[test]
    fn init_respects_fan_bounds() {
        let net = init_network(Architecture::default(), DropoutConfig::default(), 1).unwrap();
        let bound = (6.0f64 / 215.0).sqrt();
        let w = &net.params.lstm1.input_weights.data;
        assert!(w.iter().all(|x| x.abs() <= bound));
        // The bound is approached, so the rule is the one applied.
        assert!(w.iter().any(|x| x.abs() > 0.95 * bound));
        let rb = (6.0f64 / 128.0).sqrt();
        assert!(net.params.lstm1.recurrent_weights.data.iter().all(|x| x.abs() <= rb));
    }

    #[test]
    fn invalid_architecture_is_rejected() {
        let arch = Architecture { lstm1: 0, ..Default::default() };
        assert!(matches!(init_network(arch, DropoutConfig::default(), 0), Err(Error::InvalidArchitecture(_))));
        let drop = DropoutConfig { rate: 1.0, ..Default::default() };
        assert!(init_network(Architecture::default(), drop, 0).is_err());
    }

    #[test]
    fn keep_probability_reading_inverts_the_value() {
        assert_eq!(DropoutConfig::from_reading(0.2, DropoutReading::DropRate).rate, 0.2);
        assert_eq!(DropoutConfig::from_reading(0.2, DropoutReading::KeepProbability).rate, 0.8);
    }

    #[test]
    fn shapes_follow_architecture() {
        let arch = Architecture { input_size: 5, lstm1: 4, lstm2: 6, dense: 3 };
        let p = Params::zeros(&arch);
        assert_eq!(p.shapes()[0], (16, 5));
        assert_eq!(p.shapes()[3], (24, 4));
        assert_eq!(p.shapes()[4], (24, 6));
        assert_eq!(p.shapes()[6], (3, 6));
        assert_eq!(p.shapes()[8], (1, 3));
        assert_eq!(p.len(), 16 * 5 + 16 * 4 + 16 + 24 * 4 + 24 * 6 + 24 + 3 * 6 + 3 + 3 + 1);
    }
}
