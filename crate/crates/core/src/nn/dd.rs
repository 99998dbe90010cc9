//! Double-double arithmetic (about 32 significant digits) for the
//! finite-difference reference loss, plus a straight-line forward pass in it.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::network::DropoutMasks;
use super::params::{Activation, DenseLayerParams, LstmLayerParams, Network};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd { hi: self.hi * f, lo: self.lo * f }
    }

    pub(crate) fn exp(self) -> Dd {
        if self.hi > 700.0 {
            return Dd { hi: f64::INFINITY, lo: 0.0 };
        }
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        // x = k ln2 + r, then exp(r / 2^10) by Taylor series and square back.
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from(k)).scale_pow2(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..=14 {
            term = term * r / Dd::from(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    pub(crate) fn sigmoid(self) -> Dd {
        if self.hi >= 0.0 {
            Dd::ONE / (Dd::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Dd::ONE + e)
        }
    }

    pub(crate) fn tanh(self) -> Dd {
        let neg = self.hi < 0.0;
        let a = if neg { -self } else { self };
        let e = (-(a + a)).exp();
        let t = (Dd::ONE - e) / (Dd::ONE + e);
        if neg {
            -t
        } else {
            t
        }
    }

    fn relu(self) -> Dd {
        if self.hi > 0.0 {
            self
        } else {
            Dd::ZERO
        }
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

/// Parameters in double-double, so a perturbation `θ ± eps` is held exactly.
pub(crate) type DdTensors = Vec<Vec<Dd>>;

pub(crate) fn lift(net: &Network) -> DdTensors {
    net.params.tensors().iter().map(|t| t.iter().map(|&x| Dd::from(x)).collect()).collect()
}

fn lstm(layer: &LstmLayerParams, w: &[Dd], u: &[Dd], b: &[Dd], xs: &[Vec<Dd>]) -> Vec<Vec<Dd>> {
    let h_size = layer.hidden_size();
    let d = layer.input_size();
    let mut h = vec![Dd::ZERO; h_size];
    let mut c = vec![Dd::ZERO; h_size];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let a: Vec<Dd> = (0..4 * h_size)
            .map(|r| {
                let mut s = b[r];
                for k in 0..d {
                    s = s + w[r * d + k] * x[k];
                }
                for k in 0..h_size {
                    s = s + u[r * h_size + k] * h[k];
                }
                s
            })
            .collect();
        for j in 0..h_size {
            let i = a[j].sigmoid();
            let f = a[h_size + j].sigmoid();
            let g = a[2 * h_size + j].tanh();
            let o = a[3 * h_size + j].sigmoid();
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

fn dense(layer: &DenseLayerParams, w: &[Dd], b: &[Dd], x: &[Dd]) -> Vec<Dd> {
    (0..b.len())
        .map(|r| {
            let mut z = b[r];
            for (k, xk) in x.iter().enumerate() {
                z = z + w[r * x.len() + k] * *xk;
            }
            match layer.activation {
                Activation::Relu => z.relu(),
                Activation::Identity => z,
            }
        })
        .collect()
}

fn masked(values: &mut [Dd], mask: Option<&[f64]>) {
    if let Some(m) = mask {
        values.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * Dd::from(k));
    }
}

/// Squared error of the masked forward pass with parameters `t`, laid out in
/// `TENSOR_NAMES` order. `net` supplies shapes and activations only.
pub(crate) fn squared_error(net: &Network, t: &DdTensors, features: &Matrix, masks: &DropoutMasks, target: f64) -> Dd {
    let p = &net.params;
    let xs: Vec<Vec<Dd>> = (0..features.rows).map(|r| features.row(r).iter().map(|&x| Dd::from(x)).collect()).collect();
    let mut h1 = lstm(&p.lstm1, &t[0], &t[1], &t[2], &xs);
    if let Some(m) = &masks.lstm1 {
        for (r, row) in h1.iter_mut().enumerate() {
            masked(row, Some(m.row(r)));
        }
    }
    let h2 = lstm(&p.lstm2, &t[3], &t[4], &t[5], &h1);
    let mut last = h2.last().cloned().unwrap_or_default();
    masked(&mut last, masks.lstm2.as_deref());
    let mut a1 = dense(&p.dense1, &t[6], &t[7], &last);
    masked(&mut a1, masks.dense1.as_deref());
    let out = dense(&p.dense2, &t[8], &t[9], &a1);
    let e = out[0] - Dd::from(target);
    e * e
}
