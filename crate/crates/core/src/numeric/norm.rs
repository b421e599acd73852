use super::{NumericError, Result, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

/// Row-wise layer normalisation with learned `gamma` (scale) and `beta` (shift).
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let d = x.cols();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(NumericError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    let mut xhat = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for (o, v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let xh = xhat.row(r).to_vec();
        for (j, o) in y.row_mut(r).iter_mut().enumerate() {
            *o = xh[j] * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    cache.xhat.check_same("layer_norm_backward", grad)?;
    let d = grad.cols();
    let mut dx = Tensor::zeros_like(grad);
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let mut dxhat = vec![0.0; d];
    for r in 0..grad.rows() {
        let g = grad.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            dgamma.data_mut()[j] += g[j] * xh[j];
            dbeta.data_mut()[j] += g[j];
            dxhat[j] = g[j] * gamma.data()[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalised_rows_have_zero_mean_unit_variance() {
        let x = Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap();
        let (y, _) = layer_norm(&x, &Tensor::filled(&[4], 1.0), &Tensor::zeros(&[4])).unwrap();
        for r in 0..2 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
