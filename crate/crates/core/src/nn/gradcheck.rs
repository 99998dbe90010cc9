//! Central finite-difference check of [`network_backward`].

use super::dd::{self, Dd};
use super::network::{forward_with_masks, mse_loss, network_backward, DropoutMasks};
use super::params::{init_network, Architecture, DropoutConfig, Gradients, Network, TENSOR_NAMES};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::rng;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// A seeded random network, input sequence of `steps` rows, target and
/// frozen dropout masks: everything one finite-difference check needs.
#[derive(Debug, Clone)]
pub struct GradCheckProblem {
    pub network: Network,
    pub features: Matrix,
    pub target: f64,
    pub masks: DropoutMasks,
}

pub fn gradcheck_problem(arch: Architecture, dropout: DropoutConfig, steps: usize, seed: u64) -> Result<GradCheckProblem> {
    let network = init_network(arch, dropout, seed)?;
    let mut r = rng::seeded(rng::derive_seed(seed, &[7]));
    let data = (0..steps * arch.input_size).map(|_| r.random_range(-1.0..1.0)).collect();
    let features = Matrix::from_vec(steps, arch.input_size, data);
    let target = r.random_range(0.5..1.5);
    let masks = DropoutMasks::sample(&network, steps, &mut r);
    Ok(GradCheckProblem { network, features, target, masks })
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of the squared error against central
/// differences `(L(θ + eps) - L(θ - eps)) / (2 eps)` for every parameter.
///
/// The two losses are evaluated in double-double arithmetic by a separate
/// straight-line forward pass. In plain f64 their difference loses about
/// `1e-16 / eps` absolute accuracy to cancellation, which swamps entries
/// whose true gradient is below ~1e-7.
pub fn grad_check(net: &Network, features: &Matrix, target: f64, masks: &DropoutMasks, eps: f64) -> Result<GradCheckReport> {
    grad_check_with(net, features, target, masks, eps, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradients before
/// comparison, for negative controls.
pub fn grad_check_with(
    net: &Network,
    features: &Matrix,
    target: f64,
    masks: &DropoutMasks,
    eps: f64,
    tamper: impl Fn(&mut Gradients),
) -> Result<GradCheckReport> {
    let cache = forward_with_masks(net, features, masks.clone())?;
    let (_, dpred) = mse_loss(&[cache.prediction], &[target])?;
    let mut analytic = network_backward(net, &cache, dpred[0])?;
    tamper(&mut analytic);

    // Shape and mask checks happen in the f64 pass above.
    let mut probe = dd::lift(net);
    let eps_dd = Dd::from(eps);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_tensor: TENSOR_NAMES[0],
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        let len = analytic.tensors()[k].len();
        for j in 0..len {
            let orig = probe[k][j];
            probe[k][j] = orig + eps_dd;
            let plus = dd::squared_error(net, &probe, features, masks, target);
            probe[k][j] = orig - eps_dd;
            let minus = dd::squared_error(net, &probe, features, masks, target);
            probe[k][j] = orig;
            let numeric = ((plus - minus) / (eps_dd + eps_dd)).to_f64();
            let a = analytic.tensors()[k][j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.checked == 1 {
                report = GradCheckReport {
                    max_relative_error: err,
                    worst_tensor: name,
                    worst_index: j,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
