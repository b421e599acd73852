use super::{Result, Tensor};

/// NaN passes through unchanged.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v < 0.0 { 0.0 } else { v })
}

/// Gradient through [`relu`], evaluated at the pre-activation `x`.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    x.check_same("relu_backward", grad)?;
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient through [`sigmoid`], given its output `y`.
pub fn sigmoid_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    y.check_same("sigmoid_backward", grad)?;
    let data = y
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Gradient through [`tanh`], given its output `y`.
pub fn tanh_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    y.check_same("tanh_backward", grad)?;
    let data = y
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&t, &g)| g * (1.0 - t * t))
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn softmax_backward_row(y: &[f64], grad: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(grad).map(|(a, b)| a * b).sum();
    for ((o, &s), &g) in out.iter_mut().zip(y).zip(grad) {
        *o = s * (g - dot);
    }
}

/// Softmax over the last axis, stabilised by subtracting the row maximum.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

/// Gradient through [`softmax`], given its output `y`.
pub fn softmax_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    y.check_same("softmax_backward", grad)?;
    let mut out = Tensor::zeros_like(y);
    let cols = y.cols();
    for ((ys, gs), os) in y
        .data()
        .chunks(cols)
        .zip(grad.data().chunks(cols))
        .zip(out.data_mut().chunks_mut(cols))
    {
        softmax_backward_row(ys, gs, os);
    }
    Ok(out)
}

/// Divides each row by its sum, turning positive scores into a probability vector.
pub fn normalize_sum(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Gradient through [`normalize_sum`]; needs the input `x` and the output `p`.
pub fn normalize_sum_backward(x: &Tensor, p: &Tensor, grad: &Tensor) -> Result<Tensor> {
    x.check_same("normalize_sum_backward", grad)?;
    let cols = x.cols();
    let mut out = Tensor::zeros_like(x);
    for (((xs, ps), gs), os) in x
        .data()
        .chunks(cols)
        .zip(p.data().chunks(cols))
        .zip(grad.data().chunks(cols))
        .zip(out.data_mut().chunks_mut(cols))
    {
        let s: f64 = xs.iter().sum();
        let dot: f64 = ps.iter().zip(gs).map(|(a, b)| a * b).sum();
        for (o, &g) in os.iter_mut().zip(gs) {
            *o = (g - dot) / s;
        }
    }
    Ok(out)
}
