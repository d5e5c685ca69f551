//! Stateless forward/backward primitives.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// `W·x + b`.
pub fn affine_forward(
    weight: ArrayView2<'_, f64>,
    bias: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let (out, inp) = weight.dim();
    if x.len() != inp {
        return Err(Error::shape("affine input", inp, x.len()));
    }
    if bias.len() != out {
        return Err(Error::shape("affine bias", out, bias.len()));
    }
    Ok(weight.dot(&x) + bias)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub x: Array1<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub fn affine_backward(
    weight: ArrayView2<'_, f64>,
    x: ArrayView1<'_, f64>,
    grad_out: ArrayView1<'_, f64>,
) -> AffineGrads {
    let g = grad_out.to_owned().insert_axis(ndarray::Axis(1));
    let xr = x.to_owned().insert_axis(ndarray::Axis(0));
    AffineGrads {
        x: weight.t().dot(&grad_out),
        weight: g.dot(&xr),
        bias: grad_out.to_owned(),
    }
}

pub fn relu(x: ArrayView1<'_, f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Subgradient 0 at the kink.
pub fn relu_backward(pre: ArrayView1<'_, f64>, grad_out: ArrayView1<'_, f64>) -> Array1<f64> {
    ndarray::Zip::from(pre)
        .and(grad_out)
        .map_collect(|&p, &g| if p > 0.0 { g } else { 0.0 })
}

/// Max-shifted softmax. An empty input gives an empty output.
pub fn softmax(x: ArrayView1<'_, f64>) -> Array1<f64> {
    if x.is_empty() {
        return Array1::zeros(0);
    }
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = x.mapv(|v| (v - max).exp());
    let total = exp.sum();
    exp / total
}

/// Given `p = softmax(s)` and `dL/dp`, returns `dL/ds = p ⊙ (g − p·g)`.
pub fn softmax_backward(p: ArrayView1<'_, f64>, grad_out: ArrayView1<'_, f64>) -> Array1<f64> {
    let dot = p.dot(&grad_out);
    ndarray::Zip::from(p)
        .and(grad_out)
        .map_collect(|&pi, &gi| pi * (gi - dot))
}

/// Two-class cross-entropy on raw logits. Returns `(loss, dloss/dlogits)`.
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: bool) -> Result<(f64, Array1<f64>)> {
    if logits.len() != 2 {
        return Err(Error::shape("cross_entropy logits", 2, logits.len()));
    }
    let target = usize::from(label);
    let (hi, lo) = if logits[0] >= logits[1] { (0, 1) } else { (1, 0) };
    // -log p[target] = (max - x[target]) + ln(1 + exp(x[lo] - max))
    let loss = (logits[hi] - logits[target]) + (logits[lo] - logits[hi]).exp().ln_1p();
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}
