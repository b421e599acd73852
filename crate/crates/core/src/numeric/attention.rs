use super::activations::{softmax_backward_row, softmax_in_place};
use super::linear::{gemm, linear, linear_backward, MatView, MatViewMut};
use super::{NumericError, Result, Tensor};

/// Query/key/value/output projections, each `[d, d]` with a `[d]` bias.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a> {
    pub wq: &'a Tensor,
    pub bq: &'a Tensor,
    pub wk: &'a Tensor,
    pub bk: &'a Tensor,
    pub wv: &'a Tensor,
    pub bv: &'a Tensor,
    pub wo: &'a Tensor,
    pub bo: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights, `[B, heads, T, T]` flattened.
    weights: Vec<f64>,
    mixed: Tensor,
    seq_len: usize,
    heads: usize,
}

impl AttentionCache {
    /// Attention weight row `query` of head `head` in sequence `seq`.
    pub fn weight_row(&self, seq: usize, head: usize, query: usize) -> &[f64] {
        let t = self.seq_len;
        let base = ((seq * self.heads + head) * t + query) * t;
        &self.weights[base..base + t]
    }

    pub fn sequences(&self) -> usize {
        self.x.rows() / self.seq_len
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub dx: Tensor,
    pub dwq: Tensor,
    pub dbq: Tensor,
    pub dwk: Tensor,
    pub dbk: Tensor,
    pub dwv: Tensor,
    pub dbv: Tensor,
    pub dwo: Tensor,
    pub dbo: Tensor,
}

fn head_view(t: &Tensor, offset: usize, rows: usize, cols: usize, stride: usize) -> MatView<'_> {
    MatView {
        data: t.data(),
        offset,
        rows,
        cols,
        row_stride: stride,
        col_stride: 1,
    }
}

/// Multi-head scaled dot-product self-attention.
///
/// `x` holds `B` sequences of `seq_len` tokens as `[B*seq_len, d]` rows; each
/// sequence attends only within itself. Returns `[B*seq_len, d]`.
pub fn self_attention(
    x: &Tensor,
    seq_len: usize,
    n_heads: usize,
    params: AttentionParams<'_>,
) -> Result<(Tensor, AttentionCache)> {
    let d = x.cols();
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(NumericError::HeadsDoNotDivide {
            width: d,
            heads: n_heads,
        });
    }
    if seq_len == 0 || !x.rows().is_multiple_of(seq_len) || x.shape().len() != 2 {
        return Err(NumericError::ShapeMismatch {
            op: "self_attention",
            left: x.shape().to_vec(),
            right: vec![seq_len, d],
        });
    }
    let q = linear(x, params.wq, params.bq)?;
    let k = linear(x, params.wk, params.bk)?;
    let v = linear(x, params.wv, params.bv)?;
    let batch = x.rows() / seq_len;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let tt = seq_len * seq_len;
    let mut weights = vec![0.0; batch * n_heads * tt];
    let mut mixed = Tensor::zeros(&[x.rows(), d]);
    for b in 0..batch {
        for h in 0..n_heads {
            let off = b * seq_len * d + h * dh;
            let head = |t| head_view(t, off, seq_len, dh, d);
            let w = &mut weights[(b * n_heads + h) * tt..(b * n_heads + h + 1) * tt];
            gemm(
                scale,
                head(&q),
                head(&k).t(),
                0.0,
                MatViewMut::dense(w, seq_len, seq_len),
            );
            for row in w.chunks_mut(seq_len) {
                softmax_in_place(row);
            }
            gemm(
                1.0,
                MatView::dense(w, seq_len, seq_len),
                head(&v),
                0.0,
                MatViewMut {
                    data: mixed.data_mut(),
                    offset: off,
                    rows: seq_len,
                    cols: dh,
                    row_stride: d,
                },
            );
        }
    }
    let out = linear(&mixed, params.wo, params.bo)?;
    let cache = AttentionCache {
        x: x.clone(),
        q,
        k,
        v,
        weights,
        mixed,
        seq_len,
        heads: n_heads,
    };
    Ok((out, cache))
}

pub fn self_attention_backward(
    params: AttentionParams<'_>,
    cache: &AttentionCache,
    grad: &Tensor,
) -> Result<AttentionGrads> {
    cache.x.check_same("self_attention_backward", grad)?;
    let out_grads = linear_backward(&cache.mixed, params.wo, grad)?;
    let dmixed = out_grads.dx;
    let (rows, d) = (cache.x.rows(), cache.x.cols());
    let (seq_len, n_heads) = (cache.seq_len, cache.heads);
    let batch = rows / seq_len;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let tt = seq_len * seq_len;
    let mut dq = Tensor::zeros(&[rows, d]);
    let mut dk = Tensor::zeros(&[rows, d]);
    let mut dv = Tensor::zeros(&[rows, d]);
    let mut dw = vec![0.0; tt];
    let mut ds = vec![0.0; tt];
    for b in 0..batch {
        for h in 0..n_heads {
            let off = b * seq_len * d + h * dh;
            let head = |t| head_view(t, off, seq_len, dh, d);
            let w = &cache.weights[(b * n_heads + h) * tt..(b * n_heads + h + 1) * tt];
            let wv = MatView::dense(w, seq_len, seq_len);
            // dW = dO V^T, dV = W^T dO
            gemm(
                1.0,
                head(&dmixed),
                head(&cache.v).t(),
                0.0,
                MatViewMut::dense(&mut dw, seq_len, seq_len),
            );
            gemm(
                1.0,
                wv.t(),
                head(&dmixed),
                0.0,
                MatViewMut {
                    data: dv.data_mut(),
                    offset: off,
                    rows: seq_len,
                    cols: dh,
                    row_stride: d,
                },
            );
            for ((wr, gr), sr) in w.chunks(seq_len).zip(dw.chunks(seq_len)).zip(ds.chunks_mut(seq_len)) {
                softmax_backward_row(wr, gr, sr);
            }
            let sv = MatView::dense(&ds, seq_len, seq_len);
            gemm(
                scale,
                sv,
                head(&cache.k),
                0.0,
                MatViewMut {
                    data: dq.data_mut(),
                    offset: off,
                    rows: seq_len,
                    cols: dh,
                    row_stride: d,
                },
            );
            gemm(
                scale,
                sv.t(),
                head(&cache.q),
                0.0,
                MatViewMut {
                    data: dk.data_mut(),
                    offset: off,
                    rows: seq_len,
                    cols: dh,
                    row_stride: d,
                },
            );
        }
    }
    let gq = linear_backward(&cache.x, params.wq, &dq)?;
    let gk = linear_backward(&cache.x, params.wk, &dk)?;
    let gv = linear_backward(&cache.x, params.wv, &dv)?;
    let mut dx = gq.dx;
    dx.add_assign(&gk.dx)?;
    dx.add_assign(&gv.dx)?;
    Ok(AttentionGrads {
        dx,
        dwq: gq.dw,
        dbq: gq.db,
        dwk: gk.dw,
        dbk: gk.db,
        dwv: gv.dw,
        dbv: gv.db,
        dwo: out_grads.dw,
        dbo: out_grads.db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Owned {
        ts: Vec<Tensor>,
    }

    impl Owned {
        fn new(d: usize) -> Self {
            let ts = (0..8)
                .map(|k| {
                    let shape: &[usize] = if k % 2 == 0 { &[d, d] } else { &[d] };
                    let mut t = Tensor::zeros(shape);
                    for (i, v) in t.data_mut().iter_mut().enumerate() {
                        *v = ((i * 7 + k * 13) as f64 * 0.61).sin() * 0.4;
                    }
                    t
                })
                .collect();
            Self { ts }
        }

        fn params(&self) -> AttentionParams<'_> {
            let t = &self.ts;
            AttentionParams {
                wq: &t[0],
                bq: &t[1],
                wk: &t[2],
                bk: &t[3],
                wv: &t[4],
                bv: &t[5],
                wo: &t[6],
                bo: &t[7],
            }
        }
    }

    #[test]
    fn single_token_outputs_projected_value() {
        let w = Owned::new(4);
        let p = w.params();
        let x = Tensor::matrix(1, 4, vec![0.3, -0.2, 1.1, 0.5]).unwrap();
        let (out, cache) = self_attention(&x, 1, 2, p).unwrap();
        assert_eq!(cache.weight_row(0, 0, 0), &[1.0]);
        let v = linear(&x, p.wv, p.bv).unwrap();
        let expected = linear(&v, p.wo, p.bo).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let w = Owned::new(8);
        let token = [0.5, -1.0, 0.25, 0.0, 2.0, -0.3, 0.8, 0.1];
        let x = Tensor::matrix(5, 8, token.repeat(5)).unwrap();
        let (out, _) = self_attention(&x, 5, 2, w.params()).unwrap();
        for r in 1..5 {
            for (a, b) in out.row(0).iter().zip(out.row(r)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let w = Owned::new(8);
        let mut x = Tensor::zeros(&[12, 8]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 1.37).cos() * 3.0;
        }
        let (_, cache) = self_attention(&x, 6, 4, w.params()).unwrap();
        for b in 0..2 {
            for h in 0..4 {
                for q in 0..6 {
                    let s: f64 = cache.weight_row(b, h, q).iter().sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let w = Owned::new(6);
        let x = Tensor::zeros(&[3, 6]);
        assert!(matches!(
            self_attention(&x, 3, 4, w.params()),
            Err(NumericError::HeadsDoNotDivide { width: 6, heads: 4 })
        ));
    }
}
