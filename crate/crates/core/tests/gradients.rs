use std::time::Instant;

use cyclelife::linalg::Matrix;
use cyclelife::nn::{
    forward_with_masks, grad_check, gradcheck_problem, init_network, Architecture, DropoutConfig, DropoutMasks,
    LstmLayerParams, Network,
};

const SMALL: Architecture = Architecture { input_size: 5, lstm1: 4, lstm2: 6, dense: 32 };

#[test]
fn network_gradients_match_finite_differences_over_ten_seeds() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let p = gradcheck_problem(SMALL, DropoutConfig::default(), 3, seed).unwrap();
        let report = grad_check(&p.network, &p.features, p.target, &p.masks, 1e-5).unwrap();
        assert!(
            report.max_relative_error < 1e-4,
            "seed {seed}: {} at {}[{}] analytic {} numeric {}",
            report.max_relative_error,
            report.worst_tensor,
            report.worst_index,
            report.analytic,
            report.numeric
        );
        assert_eq!(report.checked, p.network.params.len());
        worst = worst.max(report.max_relative_error);
    }
    assert!(started.elapsed().as_secs_f64() < 30.0);
    println!("worst relative error over 10 seeds: {worst:e}");
}

#[test]
fn gradients_without_dropout_also_match() {
    for seed in 20..23 {
        let p = gradcheck_problem(SMALL, DropoutConfig::disabled(), 4, seed).unwrap();
        assert_eq!(p.masks, DropoutMasks::keep_all());
        let report = grad_check(&p.network, &p.features, p.target, &p.masks, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn coarse_step_is_no_more_accurate() {
    let p = gradcheck_problem(SMALL, DropoutConfig::default(), 3, 3).unwrap();
    let fine = grad_check(&p.network, &p.features, p.target, &p.masks, 1e-5).unwrap();
    let coarse = grad_check(&p.network, &p.features, p.target, &p.masks, 1e-3).unwrap();
    assert!(coarse.max_relative_error >= fine.max_relative_error, "{coarse:?} vs {fine:?}");
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line LSTM layer: one loop per gate row, no shared kernels.
#[allow(clippy::needless_range_loop)]
fn naive_lstm(p: &LstmLayerParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h_size = p.hidden_size();
    let d = p.input_size();
    let mut h = vec![0.0; h_size];
    let mut c = vec![0.0; h_size];
    let mut out = Vec::new();
    for x in xs {
        let mut a = vec![0.0; 4 * h_size];
        for (r, a_r) in a.iter_mut().enumerate() {
            let mut s = p.bias[r];
            for k in 0..d {
                s += p.input_weights.data[r * d + k] * x[k];
            }
            for k in 0..h_size {
                s += p.recurrent_weights.data[r * h_size + k] * h[k];
            }
            *a_r = s;
        }
        let mut h_new = vec![0.0; h_size];
        for j in 0..h_size {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[h_size + j]);
            let g = a[2 * h_size + j].tanh();
            let o = sigmoid(a[3 * h_size + j]);
            c[j] = f * c[j] + i * g;
            h_new[j] = o * c[j].tanh();
        }
        h = h_new;
        out.push(h.clone());
    }
    out
}

fn naive_network(net: &Network, features: &Matrix) -> f64 {
    let xs: Vec<Vec<f64>> = (0..features.rows).map(|r| features.row(r).to_vec()).collect();
    let h1 = naive_lstm(&net.params.lstm1, &xs);
    let h2 = naive_lstm(&net.params.lstm2, &h1);
    let last = h2.last().unwrap();
    let d1 = &net.params.dense1;
    let hidden: Vec<f64> = (0..d1.bias.len())
        .map(|r| {
            let z: f64 = d1.bias[r] + (0..last.len()).map(|k| d1.weights.data[r * last.len() + k] * last[k]).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    let d2 = &net.params.dense2;
    d2.bias[0] + hidden.iter().zip(&d2.weights.data).map(|(a, w)| a * w).sum::<f64>()
}

#[test]
fn forward_matches_straight_line_oracle() {
    for seed in 0..5 {
        let arch = Architecture { input_size: 7, lstm1: 5, lstm2: 9, dense: 6 };
        let mut net = init_network(arch, DropoutConfig::disabled(), seed).unwrap();
        // Non-zero biases so every term of the recurrence is exercised.
        for (i, b) in net.params.dense1.bias.iter_mut().enumerate() {
            *b = 0.05 * i as f64 - 0.1;
        }
        net.params.dense2.bias[0] = 0.3;
        net.params.lstm2.bias.iter_mut().enumerate().for_each(|(i, b)| *b += 0.01 * i as f64);
        let features = Matrix::from_vec(6, 7, (0..42).map(|i| ((i * 37 + seed as usize) % 17) as f64 / 8.0 - 1.0).collect());
        let got = forward_with_masks(&net, &features, DropoutMasks::keep_all()).unwrap().prediction;
        let want = naive_network(&net, &features);
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
    }
}
