//! Single LSTM layer: forward over a sequence and exact BPTT.
//!
//! `a_t = W x_t + U h_{t-1} + b`, gates `i, f, o = sigmoid`, `g = tanh`,
//! `c_t = f * c_{t-1} + i * g`, `h_t = o * tanh(c_t)`.

use super::params::LstmLayerParams;
use crate::error::{Error, Result};
use crate::linalg::{self, gemm, sigmoid, Matrix, Op};

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    /// `T x D`
    pub inputs: Matrix,
    /// Gate pre-activations, `T x 4H`.
    pub preactivations: Matrix,
    /// Gate activations, `T x 4H`.
    pub gates: Matrix,
    /// `(T + 1) x H`; row 0 is the initial cell state.
    pub cells: Matrix,
    /// `(T + 1) x H`; row 0 is the initial hidden state.
    pub hiddens: Matrix,
    /// `tanh(c_t)`, `T x H`.
    pub tanh_cells: Matrix,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.inputs.rows
    }

    /// Hidden outputs `h_1..h_T` as a `T x H` matrix.
    pub fn hidden_sequence(&self) -> Matrix {
        let h = self.hiddens.cols;
        Matrix::from_vec(self.steps(), h, self.hiddens.data[h..].to_vec())
    }

    pub fn final_hidden(&self) -> &[f64] {
        self.hiddens.row(self.steps())
    }

    pub fn final_cell(&self) -> &[f64] {
        self.cells.row(self.steps())
    }
}

/// Runs the layer over the rows of `inputs`. Zero initial states when `h0`
/// or `c0` are `None`.
pub fn lstm_forward(
    params: &LstmLayerParams,
    inputs: &Matrix,
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
) -> Result<LstmCache> {
    let d = params.input_size();
    let h = params.hidden_size();
    let t_len = inputs.rows;
    if inputs.cols != d {
        return Err(Error::ShapeMismatch(format!("lstm input width {} != {d}", inputs.cols)));
    }
    for (name, s) in [("h0", h0), ("c0", c0)] {
        if s.is_some_and(|s| s.len() != h) {
            return Err(Error::ShapeMismatch(format!("{name} length != {h}")));
        }
    }
    let g4 = 4 * h;

    let mut pre = Matrix::zeros(t_len, g4);
    for t in 0..t_len {
        pre.row_mut(t).copy_from_slice(&params.bias);
    }
    gemm(
        1.0,
        &inputs.data,
        t_len,
        d,
        Op::N,
        &params.input_weights.data,
        g4,
        d,
        Op::T,
        1.0,
        &mut pre.data,
    );

    let mut gates = Matrix::zeros(t_len, g4);
    let mut cells = Matrix::zeros(t_len + 1, h);
    let mut hiddens = Matrix::zeros(t_len + 1, h);
    let mut tanh_cells = Matrix::zeros(t_len, h);
    if let Some(h0) = h0 {
        hiddens.row_mut(0).copy_from_slice(h0);
    }
    if let Some(c0) = c0 {
        cells.row_mut(0).copy_from_slice(c0);
    }

    for t in 0..t_len {
        let (h_prev, h_rest) = hiddens.data.split_at_mut((t + 1) * h);
        let h_prev = &h_prev[t * h..];
        let a = pre.row_mut(t);
        linalg::matvec_add(&params.recurrent_weights.data, h_prev, a);

        let gate = gates.row_mut(t);
        for k in 0..h {
            gate[k] = sigmoid(a[k]);
            gate[h + k] = sigmoid(a[h + k]);
            gate[2 * h + k] = a[2 * h + k].tanh();
            gate[3 * h + k] = sigmoid(a[3 * h + k]);
        }
        let (c_prev, c_rest) = cells.data.split_at_mut((t + 1) * h);
        let c_prev = &c_prev[t * h..];
        let c_new = &mut c_rest[..h];
        let h_new = &mut h_rest[..h];
        let tc = tanh_cells.row_mut(t);
        for k in 0..h {
            let c = gate[h + k] * c_prev[k] + gate[k] * gate[2 * h + k];
            c_new[k] = c;
            tc[k] = c.tanh();
            h_new[k] = gate[3 * h + k] * tc[k];
        }
    }

    Ok(LstmCache { inputs: inputs.clone(), preactivations: pre, gates, cells, hiddens, tanh_cells })
}

/// Backpropagates `d_hidden` (`T x H`, the loss gradient with respect to each
/// `h_t`) through the layer, accumulating parameter gradients into `grads`.
/// Returns the gradient with respect to the inputs when `want_inputs`.
pub fn lstm_backward(
    params: &LstmLayerParams,
    cache: &LstmCache,
    d_hidden: &Matrix,
    grads: &mut LstmLayerParams,
    want_inputs: bool,
) -> Result<Option<Matrix>> {
    let d = params.input_size();
    let h = params.hidden_size();
    let t_len = cache.steps();
    if d_hidden.rows != t_len || d_hidden.cols != h {
        return Err(Error::ShapeMismatch(format!(
            "hidden gradient is {}x{}, expected {t_len}x{h}",
            d_hidden.rows, d_hidden.cols
        )));
    }
    let g4 = 4 * h;
    let mut d_pre = Matrix::zeros(t_len, g4);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];

    for t in (0..t_len).rev() {
        let gate = cache.gates.row(t);
        let c_prev = cache.cells.row(t);
        let tc = cache.tanh_cells.row(t);
        let dh_ext = d_hidden.row(t);
        let da = d_pre.row_mut(t);
        for k in 0..h {
            let (i, f, g, o) = (gate[k], gate[h + k], gate[2 * h + k], gate[3 * h + k]);
            let dh = dh_ext[k] + dh_next[k];
            let dc = dc_next[k] + dh * o * (1.0 - tc[k] * tc[k]);
            da[k] = dc * g * i * (1.0 - i);
            da[h + k] = dc * c_prev[k] * f * (1.0 - f);
            da[2 * h + k] = dc * i * (1.0 - g * g);
            da[3 * h + k] = dh * tc[k] * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next.fill(0.0);
        linalg::matvec_t_add(&params.recurrent_weights.data, da, &mut dh_next);
    }

    // dU += dA^T * H_prev, with H_prev the first T rows of the hidden cache.
    gemm(
        1.0,
        &d_pre.data,
        t_len,
        g4,
        Op::T,
        &cache.hiddens.data[..t_len * h],
        t_len,
        h,
        Op::N,
        1.0,
        &mut grads.recurrent_weights.data,
    );
    gemm(
        1.0,
        &d_pre.data,
        t_len,
        g4,
        Op::T,
        &cache.inputs.data,
        t_len,
        d,
        Op::N,
        1.0,
        &mut grads.input_weights.data,
    );
    for t in 0..t_len {
        linalg::axpy(1.0, d_pre.row(t), &mut grads.bias);
    }

    if !want_inputs {
        return Ok(None);
    }
    let mut dx = Matrix::zeros(t_len, d);
    gemm(
        1.0,
        &d_pre.data,
        t_len,
        g4,
        Op::N,
        &params.input_weights.data,
        g4,
        d,
        Op::N,
        0.0,
        &mut dx.data,
    );
    Ok(Some(dx))
}
