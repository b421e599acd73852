use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};

use super::{project, CameraIntrinsics, GeometryError, Point3, Pose, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub max_rejections: usize,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
            max_rejections: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    /// Mean squared reprojection error in pixels².
    pub residual: f64,
    pub iterations: usize,
}

/// Frontal starting pose: identity rotation, translation from the centroid and
/// spread of the observations.
pub fn initial_pose(model: &[Point3], observed: &[(f64, f64)], intr: &CameraIntrinsics) -> Result<Pose> {
    if model.len() != observed.len() {
        return Err(GeometryError::CountMismatch(model.len(), observed.len()));
    }
    if model.is_empty() {
        return Err(GeometryError::TooFewPoints { needed: 1, got: 0 });
    }
    let n = model.len() as f64;
    let pm = model.iter().sum::<Point3>() / n;
    let (su, sv) = observed.iter().fold((0.0, 0.0), |(a, b), &(u, v)| (a + u, b + v));
    let (mu, mv) = (su / n, sv / n);
    let model_spread = (model
        .iter()
        .map(|p| (p.x - pm.x).powi(2) + (p.y - pm.y).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let image_spread = (observed
        .iter()
        .map(|&(u, v)| ((u - mu) / intr.fx).powi(2) + ((v - mv) / intr.fy).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if model_spread == 0.0 || image_spread == 0.0 || !image_spread.is_finite() {
        return Err(GeometryError::Degenerate);
    }
    let z = model_spread / image_spread;
    let centre = Vector3::new((mu - intr.cx) / intr.fx * z, (mv - intr.cy) / intr.fy * z, z);
    Ok(Pose::identity_at(centre - pm))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * vt;
    }
    out
}

fn mean_sq_error(model: &[Point3], observed: &[(f64, f64)], pose: &Pose, intr: &CameraIntrinsics) -> Option<f64> {
    let uv = project(model, pose, intr).ok()?;
    let s: f64 = uv
        .iter()
        .zip(observed)
        .map(|(&(u, v), &(ou, ov))| (u - ou).powi(2) + (v - ov).powi(2))
        .sum();
    Some(s / model.len() as f64)
}

/// Levenberg–Marquardt pose refinement minimising mean squared reprojection
/// error. Rotation updates are applied on the left, `R <- exp([dw]x) R`.
pub fn solve_pnp(
    model: &[Point3],
    observed: &[(f64, f64)],
    intr: &CameraIntrinsics,
    init: &Pose,
    opts: &PnpOptions,
) -> Result<PnpSolution> {
    intr.validate()?;
    if model.len() != observed.len() {
        return Err(GeometryError::CountMismatch(model.len(), observed.len()));
    }
    if model.len() < 6 {
        return Err(GeometryError::TooFewPoints {
            needed: 6,
            got: model.len(),
        });
    }
    project(model, init, intr)?;

    let mut pose = *init;
    pose.rotation = orthonormalize(&pose.rotation);
    let mut cost = mean_sq_error(model, observed, &pose, intr).ok_or(GeometryError::Degenerate)?;
    let mut lambda = opts.initial_damping;
    let mut rejections = 0;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            break;
        }
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (p, &(ou, ov)) in model.iter().zip(observed) {
            let rp = pose.rotation * p;
            let x = rp + pose.translation;
            let iz = 1.0 / x.z;
            let du_dx = Vector3::new(intr.fx * iz, 0.0, -intr.fx * x.x * iz * iz);
            let dv_dx = Vector3::new(0.0, intr.fy * iz, -intr.fy * x.y * iz * iz);
            let dx_dw = -skew(&rp);
            let ru = intr.fx * x.x * iz + intr.cx - ou;
            let rv = intr.fy * x.y * iz + intr.cy - ov;
            for (d, r) in [(du_dx, ru), (dv_dx, rv)] {
                let jw = dx_dw.transpose() * d;
                let j = Vector6::new(jw.x, jw.y, jw.z, d.x, d.y, d.z);
                h += j * j.transpose();
                g += j * r;
            }
        }

        let step = loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|c| -c.solve(&g)) else {
                lambda *= 10.0;
                rejections += 1;
                if rejections >= opts.max_rejections {
                    return Err(non_convergence(pose, cost));
                }
                continue;
            };
            break delta;
        };

        if step.norm() < opts.step_tolerance {
            break;
        }
        let dw = Vector3::new(step[0], step[1], step[2]);
        let dt = Vector3::new(step[3], step[4], step[5]);
        let candidate = Pose {
            rotation: orthonormalize(&(Rotation3::new(dw).into_inner() * pose.rotation)),
            translation: pose.translation + dt,
        };
        match mean_sq_error(model, observed, &candidate, intr) {
            Some(c) if c < cost => {
                let rel = (cost - c) / cost;
                pose = candidate;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                rejections = 0;
                if rel <= 1e-14 {
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                rejections += 1;
                if rejections >= opts.max_rejections {
                    return Err(non_convergence(pose, cost));
                }
            }
        }
    }
    Ok(PnpSolution {
        pose,
        residual: cost,
        iterations,
    })
}

fn non_convergence(pose: Pose, residual: f64) -> GeometryError {
    GeometryError::NonConvergence {
        pose: Box::new(pose),
        residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ModelFace;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 640.0, 360.0).unwrap()
    }

    #[test]
    fn zero_residual_fixed_point() {
        let face = ModelFace::generic();
        let truth = Pose::identity_at(Vector3::new(0.0, 0.0, 5.0));
        let obs = project(face.points(), &truth, &camera()).unwrap();
        let sol = solve_pnp(face.points(), &obs, &camera(), &truth, &PnpOptions::default()).unwrap();
        assert!(sol.pose.rotation_distance(&truth) < 1e-6);
        assert!((sol.pose.translation - truth.translation).norm() < 1e-6);
    }

    #[test]
    fn recovers_yawed_pose_from_frontal_start() {
        let face = ModelFace::generic();
        let truth = Pose::from_axis_angle(Vector3::new(0.0, 0.3, 0.0), Vector3::new(0.1, -0.05, 4.0));
        let obs = project(face.points(), &truth, &camera()).unwrap();
        let init = Pose::identity_at(Vector3::new(0.0, 0.0, 5.0));
        let sol = solve_pnp(face.points(), &obs, &camera(), &init, &PnpOptions::default()).unwrap();
        assert!(sol.pose.rotation_distance(&truth) < 1e-4);
        assert!((sol.pose.translation - truth.translation).norm() < 1e-4);
        assert!(sol.residual < 1e-10);
        assert!(sol.pose.orthonormality_error() < 1e-9);
    }

    #[test]
    fn initial_pose_lands_near_depth() {
        let face = ModelFace::generic();
        let truth = Pose::identity_at(Vector3::new(0.2, 0.1, 6.0));
        let obs = project(face.points(), &truth, &camera()).unwrap();
        let init = initial_pose(face.points(), &obs, &camera()).unwrap();
        assert!((init.translation.z - 6.0).abs() < 0.5);
    }

    #[test]
    fn rejects_too_few_points() {
        let face = ModelFace::generic();
        let pts = &face.points()[..5];
        let pose = Pose::identity_at(Vector3::new(0.0, 0.0, 5.0));
        let obs = project(pts, &pose, &camera()).unwrap();
        let err = solve_pnp(pts, &obs, &camera(), &pose, &PnpOptions::default()).unwrap_err();
        assert_eq!(err, GeometryError::TooFewPoints { needed: 6, got: 5 });
    }

    #[test]
    fn init_behind_camera_rejected() {
        let face = ModelFace::generic();
        let obs = vec![(640.0, 360.0); face.len()];
        let init = Pose::identity_at(Vector3::new(0.0, 0.0, -5.0));
        let err = solve_pnp(face.points(), &obs, &camera(), &init, &PnpOptions::default()).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
    }
}
