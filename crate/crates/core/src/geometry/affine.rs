use nalgebra::{DMatrix, Matrix3x4, Vector4};

use super::{GeometryError, Point3, Result};

/// 3x4 affine map `q = A [p; 1]`.
pub type Affine3 = Matrix3x4<f64>;

pub fn apply_affine(a: &Affine3, p: &Point3) -> Point3 {
    a * Vector4::new(p.x, p.y, p.z, 1.0)
}

/// Least-squares affine map taking `src` onto `dst`.
pub fn fit_affine3d(src: &[Point3], dst: &[Point3]) -> Result<Affine3> {
    if src.len() != dst.len() {
        return Err(GeometryError::CountMismatch(src.len(), dst.len()));
    }
    if src.len() < 4 {
        return Err(GeometryError::TooFewPoints {
            needed: 4,
            got: src.len(),
        });
    }
    let n = src.len();
    // Centre both clouds to keep the design matrix well conditioned.
    let src_mean = src.iter().sum::<Point3>() / n as f64;
    let dst_mean = dst.iter().sum::<Point3>() / n as f64;
    let design = DMatrix::from_fn(n, 3, |r, c| src[r][c] - src_mean[c]);
    let target = DMatrix::from_fn(n, 3, |r, c| dst[r][c] - dst_mean[c]);
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    if sv.max() == 0.0 || sv.min() / sv.max() < 1e-10 {
        return Err(GeometryError::Degenerate);
    }
    let sol = svd.solve(&target, 0.0).map_err(|_| GeometryError::Degenerate)?;
    // sol is 3x3 with q_c = sol^T p_c
    let linear = sol.transpose();
    let mut a = Affine3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            a[(r, c)] = linear[(r, c)];
        }
    }
    let offset = dst_mean - a.fixed_view::<3, 3>(0, 0) * src_mean;
    for r in 0..3 {
        a[(r, 3)] = offset[r];
    }
    Ok(a)
}
