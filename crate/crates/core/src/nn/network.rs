//! Forward and backward passes of the full regressor.
//!
//! The dense head reads only lstm2's final hidden state. Inverted dropout
//! masks (entries 0 or `1 / (1 - rate)`) act on the lstm1 output sequence,
//! lstm2's final output and the dense1 output.

use rand::Rng as _;

use super::lstm::{lstm_backward, lstm_forward, LstmCache};
use super::params::{Activation, DenseLayerParams, Gradients, Network};
use crate::error::{Error, Result};
use crate::features::SequenceSample;
use crate::linalg::{self, Matrix};
use crate::rng::Rng;

pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Dropout masks for one training pass; `None` keeps every unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutMasks {
    /// `T x H1`
    pub lstm1: Option<Matrix>,
    pub lstm2: Option<Vec<f64>>,
    pub dense1: Option<Vec<f64>>,
}

impl DropoutMasks {
    pub fn keep_all() -> Self {
        Self::default()
    }

    /// Draws masks for a sequence of `steps` time steps.
    pub fn sample(net: &Network, steps: usize, rng: &mut Rng) -> Self {
        let cfg = net.dropout;
        if cfg.rate <= 0.0 {
            return Self::keep_all();
        }
        let keep = 1.0 - cfg.rate;
        let scale = 1.0 / keep;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 }).collect()
        };
        let lstm1 = cfg.after_lstm1.then(|| Matrix::from_vec(steps, net.arch.lstm1, draw(steps * net.arch.lstm1)));
        let lstm2 = cfg.after_lstm2.then(|| draw(net.arch.lstm2));
        let dense1 = cfg.after_dense1.then(|| draw(net.arch.dense));
        Self { lstm1, lstm2, dense1 }
    }
}

/// Intermediate values of one training-mode pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    pub lstm1: LstmCache,
    pub lstm2: LstmCache,
    pub masks: DropoutMasks,
    /// lstm2 final hidden state after dropout: the dense1 input.
    pub dense1_input: Vec<f64>,
    pub dense1_preactivation: Vec<f64>,
    /// dense1 output after activation and dropout: the dense2 input.
    pub dense2_input: Vec<f64>,
    pub prediction: f64,
}

fn dense_forward(layer: &DenseLayerParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut z = layer.bias.clone();
    linalg::matvec_add(&layer.weights.data, x, &mut z);
    let a = match layer.activation {
        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Identity => z.clone(),
    };
    (z, a)
}

fn apply_mask(values: &mut [f64], mask: Option<&[f64]>) {
    if let Some(m) = mask {
        values.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

/// Forward pass with fixed dropout masks (pass [`DropoutMasks::keep_all`]
/// for an undropped pass).
pub fn forward_with_masks(net: &Network, features: &Matrix, masks: DropoutMasks) -> Result<ForwardCache> {
    if features.cols != net.arch.input_size {
        return Err(Error::ShapeMismatch(format!(
            "feature width {} != network input size {}",
            features.cols, net.arch.input_size
        )));
    }
    if features.rows == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(m) = &masks.lstm1 {
        if m.rows != features.rows || m.cols != net.arch.lstm1 {
            return Err(Error::ShapeMismatch("lstm1 dropout mask".into()));
        }
    }
    let p = &net.params;
    let lstm1 = lstm_forward(&p.lstm1, features, None, None)?;
    let mut seq = lstm1.hidden_sequence();
    apply_mask(&mut seq.data, masks.lstm1.as_ref().map(|m| m.data.as_slice()));
    let lstm2 = lstm_forward(&p.lstm2, &seq, None, None)?;
    let mut dense1_input = lstm2.final_hidden().to_vec();
    apply_mask(&mut dense1_input, masks.lstm2.as_deref());
    let (dense1_preactivation, mut dense2_input) = dense_forward(&p.dense1, &dense1_input);
    apply_mask(&mut dense2_input, masks.dense1.as_deref());
    let (_, out) = dense_forward(&p.dense2, &dense2_input);
    Ok(ForwardCache {
        fingerprint: net.fingerprint(),
        lstm1,
        lstm2,
        masks,
        dense1_input,
        dense1_preactivation,
        dense2_input,
        prediction: out[0],
    })
}

/// Predicts from a feature matrix. Train mode draws dropout masks from `rng`
/// and returns the cache for [`network_backward`]; eval mode returns none.
pub fn network_forward_features(net: &Network, features: &Matrix, mode: Mode<'_>) -> Result<(f64, Option<ForwardCache>)> {
    match mode {
        Mode::Eval => {
            let cache = forward_with_masks(net, features, DropoutMasks::keep_all())?;
            Ok((cache.prediction, None))
        }
        Mode::Train(rng) => {
            let masks = DropoutMasks::sample(net, features.rows, rng);
            let cache = forward_with_masks(net, features, masks)?;
            Ok((cache.prediction, Some(cache)))
        }
    }
}

pub fn network_forward(net: &Network, sample: &SequenceSample, mode: Mode<'_>) -> Result<(f64, Option<ForwardCache>)> {
    network_forward_features(net, &sample.features, mode)
}

/// Eval-mode prediction.
pub fn predict(net: &Network, features: &Matrix) -> Result<f64> {
    network_forward_features(net, features, Mode::Eval).map(|(p, _)| p)
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = predictions.len() as f64;
    let loss = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = predictions.iter().zip(targets).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Exact reverse-mode gradient of `dloss_dpred * prediction` with respect to
/// every parameter, through both LSTM layers and the dropout masks.
pub fn network_backward(net: &Network, cache: &ForwardCache, dloss_dpred: f64) -> Result<Gradients> {
    if cache.fingerprint != net.fingerprint() {
        return Err(Error::StaleCache);
    }
    let p = &net.params;
    let mut g = Gradients::zeros_like(p);

    // dense2 (identity)
    linalg::axpy(dloss_dpred, &cache.dense2_input, &mut g.dense2.weights.data);
    g.dense2.bias[0] += dloss_dpred;
    let mut d_a1 = vec![0.0; net.arch.dense];
    linalg::matvec_t_add(&p.dense2.weights.data, &[dloss_dpred], &mut d_a1);

    // dense1 (relu) with its output mask
    apply_mask(&mut d_a1, cache.masks.dense1.as_deref());
    let d_z1: Vec<f64> = d_a1
        .iter()
        .zip(&cache.dense1_preactivation)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    let in1 = &cache.dense1_input;
    for (r, &dz) in d_z1.iter().enumerate() {
        linalg::axpy(dz, in1, g.dense1.weights.row_mut(r));
    }
    linalg::axpy(1.0, &d_z1, &mut g.dense1.bias);
    let mut d_h2 = vec![0.0; net.arch.lstm2];
    linalg::matvec_t_add(&p.dense1.weights.data, &d_z1, &mut d_h2);
    apply_mask(&mut d_h2, cache.masks.lstm2.as_deref());

    // lstm2: only the final step feeds the head
    let steps = cache.lstm2.steps();
    let mut d_seq2 = Matrix::zeros(steps, net.arch.lstm2);
    d_seq2.row_mut(steps - 1).copy_from_slice(&d_h2);
    let mut d_seq1 = lstm_backward(&p.lstm2, &cache.lstm2, &d_seq2, &mut g.lstm2, true)?
        .expect("input gradient requested");
    apply_mask(&mut d_seq1.data, cache.masks.lstm1.as_ref().map(|m| m.data.as_slice()));

    lstm_backward(&p.lstm1, &cache.lstm1, &d_seq1, &mut g.lstm1, false)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{init_network, Architecture, DropoutConfig};
    use crate::rng;

    fn small_arch() -> Architecture {
        Architecture { input_size: 5, lstm1: 4, lstm2: 6, dense: 3 }
    }

    fn features(steps: usize, width: usize, seed: u64) -> Matrix {
        use rand::Rng as _;
        let mut r = rng::seeded(seed);
        Matrix::from_vec(steps, width, (0..steps * width).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap().0, 5.0);
        assert_eq!(mse_loss(&[2.0], &[5.0]).unwrap(), (9.0, vec![-6.0]));
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(mse_loss(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn no_dropout_train_equals_eval() {
        let net = init_network(small_arch(), DropoutConfig::disabled(), 3).unwrap();
        let x = features(7, 5, 1);
        let eval = predict(&net, &x).unwrap();
        let mut r = rng::seeded(0);
        let (train, cache) = network_forward_features(&net, &x, Mode::Train(&mut r)).unwrap();
        assert_eq!(eval, train);
        assert!(cache.is_some());
    }

    #[test]
    fn keep_all_mask_equals_eval_with_dropout_configured() {
        let net = init_network(small_arch(), DropoutConfig::default(), 3).unwrap();
        let x = features(4, 5, 2);
        let c = forward_with_masks(&net, &x, DropoutMasks::keep_all()).unwrap();
        assert_eq!(c.prediction, predict(&net, &x).unwrap());
    }

    #[test]
    fn zero_network_predicts_bias() {
        let net = Network::zeros(small_arch(), DropoutConfig::default()).unwrap();
        assert_eq!(predict(&net, &features(3, 5, 0)).unwrap(), 0.0);
        let mut net = net;
        net.params.dense2.bias[0] = 0.37;
        assert_eq!(predict(&net, &features(3, 5, 0)).unwrap(), 0.37);
    }

    #[test]
    fn dropout_masks_are_inverted() {
        let net = init_network(Architecture::default(), DropoutConfig::default(), 0).unwrap();
        let mut r = rng::seeded(5);
        let m = DropoutMasks::sample(&net, 50, &mut r);
        let l1 = m.lstm1.unwrap();
        assert!(l1.data.iter().all(|&v| v == 0.0 || v == 1.25));
        let kept = l1.data.iter().filter(|&&v| v > 0.0).count() as f64 / l1.data.len() as f64;
        assert!((kept - 0.8).abs() < 0.03, "{kept}");
    }

    #[test]
    fn zero_upstream_gradient_is_zero() {
        let net = init_network(small_arch(), DropoutConfig::default(), 1).unwrap();
        let mut r = rng::seeded(2);
        let (_, cache) = network_forward_features(&net, &features(3, 5, 3), Mode::Train(&mut r)).unwrap();
        let g = network_backward(&net, &cache.unwrap(), 0.0).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn zero_input_gives_zero_input_weight_gradient() {
        let net = init_network(small_arch(), DropoutConfig::disabled(), 1).unwrap();
        let c = forward_with_masks(&net, &Matrix::zeros(4, 5), DropoutMasks::keep_all()).unwrap();
        let g = network_backward(&net, &c, 1.0).unwrap();
        assert!(g.lstm1.input_weights.data.iter().all(|&x| x == 0.0));
        assert!(g.dense2.bias[0] == 1.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = init_network(small_arch(), DropoutConfig::disabled(), 1).unwrap();
        let c = forward_with_masks(&net, &features(2, 5, 0), DropoutMasks::keep_all()).unwrap();
        net.params.dense1.bias[0] += 1e-3;
        assert!(matches!(network_backward(&net, &c, 1.0), Err(Error::StaleCache)));
    }

    #[test]
    fn shape_mismatch() {
        let net = init_network(small_arch(), DropoutConfig::disabled(), 1).unwrap();
        assert!(matches!(predict(&net, &features(2, 6, 0)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn hidden_states_are_bounded() {
        let net = init_network(small_arch(), DropoutConfig::disabled(), 4).unwrap();
        let x = Matrix::from_vec(6, 5, (0..30).map(|i| if i % 2 == 0 { 10.0 } else { -10.0 }).collect());
        let c = forward_with_masks(&net, &x, DropoutMasks::keep_all()).unwrap();
        for cache in [&c.lstm1, &c.lstm2] {
            assert!(cache.hiddens.data.iter().all(|h| (-1.0..=1.0).contains(h)));
            assert!(cache.tanh_cells.data.iter().all(|h| (-1.0..=1.0).contains(h)));
        }
    }
}
