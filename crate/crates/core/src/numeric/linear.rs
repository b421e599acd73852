use super::{NumericError, Result, Tensor};

/// Strided view of a row-major matrix inside a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatView<'a> {
    pub fn dense(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn last_index(&self) -> usize {
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// Mutable strided output view.
pub(crate) struct MatViewMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
}

impl<'a> MatViewMut<'a> {
    pub fn dense(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            row_stride: cols,
        }
    }
}

/// `c = alpha * a * b + beta * c`.
pub(crate) fn gemm(alpha: f64, a: MatView<'_>, b: MatView<'_>, beta: f64, c: MatViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    assert!(a.last_index() < a.data.len());
    assert!(b.last_index() < b.data.len());
    assert!(c.offset + (c.rows - 1) * c.row_stride + c.cols - 1 < c.data.len());
    // SAFETY: the asserts above keep every strided access inside the three
    // slices, and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.row_stride as isize,
            1,
        );
    }
}

fn as_matrix(t: &Tensor) -> MatView<'_> {
    MatView::dense(t.data(), t.rows(), t.cols())
}

fn two_d(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(NumericError::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![0, 0],
        });
    }
    Ok(())
}

/// `a * b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    two_d("matmul", a)?;
    two_d("matmul", b)?;
    if a.cols() != b.rows() {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
    gemm(
        1.0,
        as_matrix(a),
        as_matrix(b),
        0.0,
        MatViewMut::dense(out.data_mut(), a.rows(), b.cols()),
    );
    Ok(out)
}

/// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    two_d("matmul_nt", a)?;
    two_d("matmul_nt", b)?;
    if a.cols() != b.cols() {
        return Err(mismatch("matmul_nt", a, b));
    }
    let mut out = Tensor::zeros(&[a.rows(), b.rows()]);
    gemm(
        1.0,
        as_matrix(a),
        as_matrix(b).t(),
        0.0,
        MatViewMut::dense(out.data_mut(), a.rows(), b.rows()),
    );
    Ok(out)
}

/// `a^T * b` for `a: [k, m]`, `b: [k, n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    two_d("matmul_tn", a)?;
    two_d("matmul_tn", b)?;
    if a.rows() != b.rows() {
        return Err(mismatch("matmul_tn", a, b));
    }
    let mut out = Tensor::zeros(&[a.cols(), b.cols()]);
    gemm(
        1.0,
        as_matrix(a).t(),
        as_matrix(b),
        0.0,
        MatViewMut::dense(out.data_mut(), a.cols(), b.cols()),
    );
    Ok(out)
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Affine map `W x + b` applied to every row of `x`.
///
/// `x` is `[n_in]` or `[..., n_in]`; the output keeps the leading axes and
/// replaces the last one with `n_out`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.cols() != w.cols() {
        return Err(mismatch("linear", x, w));
    }
    if b.shape() != [w.rows()] {
        return Err(mismatch("linear bias", w, b));
    }
    let n_out = w.rows();
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        data.extend_from_slice(b.data());
    }
    gemm(
        1.0,
        as_matrix(x),
        as_matrix(w).t(),
        1.0,
        MatViewMut::dense(&mut data, rows, n_out),
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n_out;
    Tensor::new(shape, data)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

/// Gradients of [`linear`] given the upstream gradient `grad_out` (same shape as its output).
pub fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    if grad_out.cols() != w.rows() || grad_out.rows() != x.rows() || x.cols() != w.cols() {
        return Err(mismatch("linear_backward", grad_out, w));
    }
    let rows = x.rows();
    let (n_out, n_in) = (w.rows(), w.cols());
    let g = as_matrix(grad_out);

    let mut dw = Tensor::zeros(&[n_out, n_in]);
    gemm(
        1.0,
        g.t(),
        as_matrix(x),
        0.0,
        MatViewMut::dense(dw.data_mut(), n_out, n_in),
    );

    let mut db = Tensor::zeros(&[n_out]);
    for r in 0..rows {
        for (acc, v) in db.data_mut().iter_mut().zip(grad_out.row(r)) {
            *acc += v;
        }
    }

    let mut dx = Tensor::zeros_like(x);
    gemm(1.0, g, as_matrix(w), 0.0, MatViewMut::dense(dx.data_mut(), rows, n_in));
    Ok(LinearGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_vector_selects_weight_column() {
        let x = Tensor::vector(vec![1.0, 0.0]);
        let w = Tensor::matrix(2, 2, vec![2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn zero_input_passes_bias() {
        let x = Tensor::vector(vec![0.0, 0.0]);
        let w = Tensor::matrix(2, 2, vec![0.3, -1.2, 8.0, 2.5]).unwrap();
        let b = Tensor::vector(vec![7.0, -1.0]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[7.0, -1.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        let err = linear(&x, &w, &b).unwrap_err().to_string();
        assert!(err.contains("[3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(3, 2, vec![1.0, 0.5, -1.0, 2.0, 0.0, 1.0]).unwrap();
        let ab = matmul(&a, &b).unwrap();
        assert_eq!(ab.data(), &[-1.0, 7.5, -1.0, 18.0]);
        let bt = Tensor::matrix(2, 3, vec![1.0, -1.0, 0.0, 0.5, 2.0, 1.0]).unwrap();
        assert_eq!(matmul_nt(&a, &bt).unwrap(), ab);
        let at = Tensor::matrix(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(matmul_tn(&at, &b).unwrap(), ab);
    }
}
