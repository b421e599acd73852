//! Head pose and gaze recovery from facial landmarks.
//!
//! A pinhole camera maps a face-frame point `p` to pixels through
//! `s [u v 1]^T = K (R p + t)`. The pose `(R, t)` is fitted to observed 2D
//! landmarks ([`solve_pnp`]); pupils are brought into the face frame with a
//! least-squares affine map ([`fit_affine3d`]); head and eye rays are then
//! intersected with a virtual windshield plane ([`ray_plane`]).

mod affine;
mod face;
mod gaze;
mod pnp;
pub mod render;

pub use affine::{apply_affine, fit_affine3d, Affine3};
pub use face::ModelFace;
pub use gaze::{
    extract_gaze_sequence, extract_gaze_vector, read_landmark_file, try_extract_gaze, EyeObservations, GazeConfig,
    GazeRecord, GazeVector, LandmarkFile, LandmarkFrame, LandmarkHeader, LandmarkLineError,
};
pub use pnp::{initial_pose, solve_pnp, PnpOptions, PnpSolution};

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {index} projects from non-positive depth {depth}")]
    BehindCamera { index: usize, depth: f64 },
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("{0} and {1} correspondences do not pair up")]
    CountMismatch(usize, usize),
    #[error("pose solve did not converge (mean squared reprojection error {residual})")]
    NonConvergence { pose: Box<Pose>, residual: f64 },
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("ray is parallel to the plane")]
    ParallelRay,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("frame lacks {0}")]
    MissingInput(String),
    #[error("landmark {0} lies outside the image")]
    OutOfImage(String),
    #[error("face model: {0}")]
    FaceModel(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={} fy={} must be positive",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

/// Rigid transform from the face frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity_at(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation given as an axis-angle vector (direction = axis, norm = angle).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Angle of the relative rotation between two poses, in radians.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        let rel = self.rotation * other.rotation.transpose();
        Rotation3::from_matrix_unchecked(rel).angle()
    }

    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
        gram.max((r.determinant() - 1.0).abs())
    }
}

/// Pinhole projection of face-frame points under `pose`.
pub fn project(points: &[Point3], pose: &Pose, intrinsics: &CameraIntrinsics) -> Result<Vec<(f64, f64)>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let c = pose.transform(p);
            if c.z <= 0.0 {
                return Err(GeometryError::BehindCamera { index, depth: c.z });
            }
            Ok((
                intrinsics.fx * c.x / c.z + intrinsics.cx,
                intrinsics.fy * c.y / c.z + intrinsics.cy,
            ))
        })
        .collect()
}

/// Intersection of the line through `origin` and `through` with the plane `z = plane_z`.
pub fn ray_plane(origin: &Point3, through: &Point3, plane_z: f64) -> Result<(f64, f64)> {
    let dir = through - origin;
    if dir.z.abs() < 1e-12 {
        return Err(GeometryError::ParallelRay);
    }
    let s = (plane_z - origin.z) / dir.z;
    Ok((origin.x + s * dir.x, origin.y + s * dir.y))
}
