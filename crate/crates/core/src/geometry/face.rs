use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use serde::Deserialize;

use super::{GeometryError, Point3, Result};

const GENERIC_FACE: &str = include_str!("../../data/face_model.json");

#[derive(Deserialize)]
struct FaceFile {
    forward: [f64; 3],
    left_eye_center: [f64; 3],
    right_eye_center: [f64; 3],
    eye_radius: f64,
    landmarks: BTreeMap<String, [f64; 3]>,
}

/// Canonical 3D face used as the PnP model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFace {
    names: Vec<String>,
    points: Vec<Point3>,
    pub forward: Vector3<f64>,
    pub left_eye_center: Point3,
    pub right_eye_center: Point3,
    pub eye_radius: f64,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl ModelFace {
    /// The bundled 25-landmark face.
    pub fn generic() -> Self {
        Self::from_json_str(GENERIC_FACE).expect("bundled face model is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GeometryError::FaceModel(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: FaceFile = serde_json::from_str(text).map_err(|e| GeometryError::FaceModel(e.to_string()))?;
        let (names, points): (Vec<_>, Vec<_>) = file.landmarks.into_iter().map(|(k, v)| (k, v3(v))).unzip();
        let face = Self {
            names,
            points,
            forward: v3(file.forward).normalize(),
            left_eye_center: v3(file.left_eye_center),
            right_eye_center: v3(file.right_eye_center),
            eye_radius: file.eye_radius,
        };
        if face.points.len() < 6 {
            return Err(GeometryError::TooFewPoints {
                needed: 6,
                got: face.points.len(),
            });
        }
        if is_coplanar(&face.points) {
            return Err(GeometryError::Degenerate);
        }
        Ok(face)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, name: &str) -> Option<&Point3> {
        self.names.iter().position(|n| n == name).map(|i| &self.points[i])
    }

    /// Origin of the head-direction ray: midway between the eyeball centres.
    pub fn head_origin(&self) -> Point3 {
        (self.left_eye_center + self.right_eye_center) * 0.5
    }
}

pub(crate) fn is_coplanar(points: &[Point3]) -> bool {
    if points.len() < 4 {
        return true;
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Point3>() / n;
    let m = DMatrix::from_fn(points.len(), 3, |r, c| points[r][c] - mean[c]);
    let sv = m.singular_values();
    let max = sv.max();
    max == 0.0 || sv.min() / max < 1e-9
}
