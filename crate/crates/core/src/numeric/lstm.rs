use super::activations::sigmoid_scalar as sigmoid_s;
use super::linear::{gemm, MatView, MatViewMut};
use super::{NumericError, Result, Tensor};

/// Stacked LSTM weights.
///
/// `w` is `[4*hidden, input + hidden]` with gate blocks in the order
/// input, forget, cell, output; columns `[0, input)` act on `x` and the rest on
/// the previous hidden state. `b` is `[4*hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    pub w: &'a Tensor,
    pub b: &'a Tensor,
}

impl LstmParams<'_> {
    pub fn hidden(&self) -> usize {
        self.w.rows() / 4
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }

    fn validate(&self) -> Result<()> {
        let h4 = self.w.rows();
        if self.w.shape().len() != 2 || !h4.is_multiple_of(4) || self.w.cols() <= h4 / 4 || self.b.shape() != [h4] {
            return Err(NumericError::ShapeMismatch {
                op: "lstm params",
                left: self.w.shape().to_vec(),
                right: self.b.shape().to_vec(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub dw: Tensor,
    pub db: Tensor,
}

impl LstmGrads {
    pub fn zeros_for(params: LstmParams<'_>) -> Self {
        Self {
            dw: Tensor::zeros_like(params.w),
            db: Tensor::zeros_like(params.b),
        }
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCellCache {
    xh: Tensor,
    gates: Tensor,
    c_prev: Tensor,
    tanh_c: Tensor,
}

/// One LSTM step over a batch: `x: [B, input]`, `h, c: [B, hidden]`.
pub fn lstm_cell(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    params: LstmParams<'_>,
) -> Result<(Tensor, Tensor, LstmCellCache)> {
    params.validate()?;
    let (n_in, n_h) = (params.input(), params.hidden());
    let batch = x.rows();
    if x.cols() != n_in || h.cols() != n_h || c.cols() != n_h || h.rows() != batch || c.rows() != batch {
        return Err(NumericError::ShapeMismatch {
            op: "lstm_cell",
            left: vec![batch, x.cols(), h.cols()],
            right: params.w.shape().to_vec(),
        });
    }
    let width = n_in + n_h;
    let mut xh = Tensor::zeros(&[batch, width]);
    for r in 0..batch {
        let row = xh.row_mut(r);
        row[..n_in].copy_from_slice(x.row(r));
        row[n_in..].copy_from_slice(h.row(r));
    }
    let mut z = Vec::with_capacity(batch * 4 * n_h);
    for _ in 0..batch {
        z.extend_from_slice(params.b.data());
    }
    gemm(
        1.0,
        MatView::dense(xh.data(), batch, width),
        MatView::dense(params.w.data(), 4 * n_h, width).t(),
        1.0,
        MatViewMut::dense(&mut z, batch, 4 * n_h),
    );
    let mut gates = Tensor::matrix(batch, 4 * n_h, z)?;
    let mut c_next = Tensor::zeros(&[batch, n_h]);
    let mut h_next = Tensor::zeros(&[batch, n_h]);
    let mut tanh_c = Tensor::zeros(&[batch, n_h]);
    for r in 0..batch {
        let g = gates.row_mut(r);
        for j in 0..n_h {
            g[j] = sigmoid_s(g[j]);
            g[n_h + j] = sigmoid_s(g[n_h + j]);
            g[2 * n_h + j] = g[2 * n_h + j].tanh();
            g[3 * n_h + j] = sigmoid_s(g[3 * n_h + j]);
        }
        let g = gates.row(r);
        let cp = c.row(r);
        for j in 0..n_h {
            let cn = g[n_h + j] * cp[j] + g[j] * g[2 * n_h + j];
            let tc = cn.tanh();
            c_next.row_mut(r)[j] = cn;
            tanh_c.row_mut(r)[j] = tc;
            h_next.row_mut(r)[j] = g[3 * n_h + j] * tc;
        }
    }
    let cache = LstmCellCache {
        xh,
        gates,
        c_prev: c.clone(),
        tanh_c,
    };
    Ok((h_next, c_next, cache))
}

/// Backward through one step. `dh`/`dc` are the total gradients arriving at
/// the step's outputs; returns `(dx, dh_prev, dc_prev)` and accumulates weight
/// gradients into `grads`.
pub fn lstm_cell_backward(
    params: LstmParams<'_>,
    cache: &LstmCellCache,
    dh: &Tensor,
    dc: &Tensor,
    grads: &mut LstmGrads,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n_in, n_h) = (params.input(), params.hidden());
    let batch = cache.xh.rows();
    if dh.shape() != [batch, n_h] || dc.shape() != [batch, n_h] {
        return Err(NumericError::ShapeMismatch {
            op: "lstm_cell_backward",
            left: dh.shape().to_vec(),
            right: vec![batch, n_h],
        });
    }
    let mut dz = Tensor::zeros(&[batch, 4 * n_h]);
    let mut dc_prev = Tensor::zeros(&[batch, n_h]);
    for r in 0..batch {
        let g = cache.gates.row(r);
        let tc = cache.tanh_c.row(r);
        let cp = cache.c_prev.row(r);
        let (dhr, dcr) = (dh.row(r), dc.row(r));
        let mut dcp = vec![0.0; n_h];
        let dzr = dz.row_mut(r);
        for j in 0..n_h {
            let (i, f, gg, o) = (g[j], g[n_h + j], g[2 * n_h + j], g[3 * n_h + j]);
            let d_o = dhr[j] * tc[j];
            let d_c = dcr[j] + dhr[j] * o * (1.0 - tc[j] * tc[j]);
            dzr[j] = d_c * gg * i * (1.0 - i);
            dzr[n_h + j] = d_c * cp[j] * f * (1.0 - f);
            dzr[2 * n_h + j] = d_c * i * (1.0 - gg * gg);
            dzr[3 * n_h + j] = d_o * o * (1.0 - o);
            dcp[j] = d_c * f;
        }
        dc_prev.row_mut(r).copy_from_slice(&dcp);
    }
    let width = n_in + n_h;
    let dzv = MatView::dense(dz.data(), batch, 4 * n_h);
    gemm(
        1.0,
        dzv.t(),
        MatView::dense(cache.xh.data(), batch, width),
        1.0,
        MatViewMut::dense(grads.dw.data_mut(), 4 * n_h, width),
    );
    for r in 0..batch {
        for (acc, v) in grads.db.data_mut().iter_mut().zip(dz.row(r)) {
            *acc += v;
        }
    }
    let mut dxh = Tensor::zeros(&[batch, width]);
    gemm(
        1.0,
        dzv,
        MatView::dense(params.w.data(), 4 * n_h, width),
        0.0,
        MatViewMut::dense(dxh.data_mut(), batch, width),
    );
    let mut dx = Tensor::zeros(&[batch, n_in]);
    let mut dh_prev = Tensor::zeros(&[batch, n_h]);
    for r in 0..batch {
        let row = dxh.row(r);
        dx.row_mut(r).copy_from_slice(&row[..n_in]);
        dh_prev.row_mut(r).copy_from_slice(&row[n_in..]);
    }
    Ok((dx, dh_prev, dc_prev))
}

#[derive(Debug, Clone)]
pub struct LstmSequenceCache {
    steps: Vec<LstmCellCache>,
    batch: usize,
    n_in: usize,
}

fn gather_step(xs: &Tensor, batch: usize, steps: usize, t: usize) -> Tensor {
    let n = xs.cols();
    let mut out = Tensor::zeros(&[batch, n]);
    for b in 0..batch {
        out.row_mut(b).copy_from_slice(xs.row(b * steps + t));
    }
    out
}

/// Runs an LSTM from zero state over `xs: [B, T, input]`, returning every
/// hidden output as `[B, T, hidden]`.
pub fn lstm_sequence(xs: &Tensor, params: LstmParams<'_>) -> Result<(Tensor, LstmSequenceCache)> {
    params.validate()?;
    if xs.shape().len() != 3 || xs.cols() != params.input() {
        return Err(NumericError::ShapeMismatch {
            op: "lstm_sequence",
            left: xs.shape().to_vec(),
            right: params.w.shape().to_vec(),
        });
    }
    let (batch, steps, n_h) = (xs.shape()[0], xs.shape()[1], params.hidden());
    let mut h = Tensor::zeros(&[batch, n_h]);
    let mut c = Tensor::zeros(&[batch, n_h]);
    let mut hs = Tensor::zeros(&[batch, steps, n_h]);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = gather_step(xs, batch, steps, t);
        let (hn, cn, cache) = lstm_cell(&x, &h, &c, params)?;
        for b in 0..batch {
            hs.row_mut(b * steps + t).copy_from_slice(hn.row(b));
        }
        caches.push(cache);
        h = hn;
        c = cn;
    }
    Ok((
        hs,
        LstmSequenceCache {
            steps: caches,
            batch,
            n_in: params.input(),
        },
    ))
}

/// Backpropagation through time. `dhs` is the gradient on every hidden
/// output, `[B, T, hidden]`; returns the input gradient `[B, T, input]`.
pub fn lstm_sequence_backward(
    params: LstmParams<'_>,
    cache: &LstmSequenceCache,
    dhs: &Tensor,
) -> Result<(Tensor, LstmGrads)> {
    let (batch, steps, n_h) = (cache.batch, cache.steps.len(), params.hidden());
    if dhs.shape() != [batch, steps, n_h] {
        return Err(NumericError::ShapeMismatch {
            op: "lstm_sequence_backward",
            left: dhs.shape().to_vec(),
            right: vec![batch, steps, n_h],
        });
    }
    let mut grads = LstmGrads::zeros_for(params);
    let mut dxs = Tensor::zeros(&[batch, steps, cache.n_in]);
    let mut dh_carry = Tensor::zeros(&[batch, n_h]);
    let mut dc_carry = Tensor::zeros(&[batch, n_h]);
    for t in (0..steps).rev() {
        let mut dh = gather_step(dhs, batch, steps, t);
        dh.add_assign(&dh_carry)?;
        let (dx, dhp, dcp) = lstm_cell_backward(params, &cache.steps[t], &dh, &dc_carry, &mut grads)?;
        for b in 0..batch {
            dxs.row_mut(b * steps + t).copy_from_slice(dx.row(b));
        }
        dh_carry = dhp;
        dc_carry = dcp;
    }
    Ok((dxs, grads))
}
