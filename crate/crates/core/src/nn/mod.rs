//! The LSTM -> LSTM -> dense -> dense regressor, written from first
//! principles: forward, backpropagation through time, a finite-difference
//! gradient checker and the model artifact format.

pub mod artifact;
mod dd;
pub mod gradcheck;
pub mod lstm;
pub mod network;
pub mod params;

pub use artifact::{ModelArtifact, ARTIFACT_VERSION};
pub use gradcheck::{grad_check, grad_check_with, gradcheck_problem, relative_error, GradCheckProblem, GradCheckReport};
pub use lstm::{lstm_backward, lstm_forward, LstmCache};
pub use network::{
    forward_with_masks, mse_loss, network_backward, network_forward, network_forward_features, predict,
    DropoutMasks, ForwardCache, Mode,
};
pub use params::{
    init_network, Activation, Architecture, DenseLayerParams, DropoutConfig, DropoutReading, Gradients,
    LstmLayerParams, Network, Params, TENSOR_NAMES,
};
