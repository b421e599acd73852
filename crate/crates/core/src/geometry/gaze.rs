use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    apply_affine, fit_affine3d, initial_pose, ray_plane, solve_pnp, CameraIntrinsics, GeometryError, ModelFace,
    PnpOptions, Point3, Pose, Result,
};

/// First line of a landmark file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkHeader {
    pub image_width: f64,
    pub image_height: f64,
    pub intrinsics: CameraIntrinsics,
}

/// Camera-frame 3D estimates of the eyeball centres and pupils.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EyeObservations {
    #[serde(default)]
    pub left_center: Option<[f64; 3]>,
    #[serde(default)]
    pub left_pupil: Option<[f64; 3]>,
    #[serde(default)]
    pub right_center: Option<[f64; 3]>,
    #[serde(default)]
    pub right_pupil: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub frame: u64,
    /// Pixel coordinates `[u, v]` by landmark name.
    pub landmarks: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub eyes: EyeObservations,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct LandmarkLineError {
    /// 1-based line number in the file.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFile {
    pub header: LandmarkHeader,
    /// One entry per non-blank frame line, in file order.
    pub frames: Vec<std::result::Result<LandmarkFrame, LandmarkLineError>>,
}

/// Parses a JSON Lines landmark file. Only a bad header is fatal; bad frame
/// lines are kept as errors so callers can decide.
pub fn read_landmark_file(text: &str) -> std::result::Result<LandmarkFile, LandmarkLineError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (idx, first) = lines.next().ok_or(LandmarkLineError {
        line: 1,
        message: "missing header line".into(),
    })?;
    let header: LandmarkHeader = serde_json::from_str(first).map_err(|e| LandmarkLineError {
        line: idx + 1,
        message: format!("bad header: {e}"),
    })?;
    let header_ok = header.intrinsics.validate().is_ok() && header.image_width > 0.0 && header.image_height > 0.0;
    if !header_ok {
        return Err(LandmarkLineError {
            line: idx + 1,
            message: "header needs positive image size and focal lengths".into(),
        });
    }
    let frames = lines
        .map(|(i, l)| {
            serde_json::from_str::<LandmarkFrame>(l).map_err(|e| LandmarkLineError {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect();
    Ok(LandmarkFile { header, frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GazeConfig {
    /// Windshield plane `z = plane_z` in camera coordinates.
    pub plane_z: f64,
    /// Model units per plane unit.
    pub plane_scale: f64,
}

impl Default for GazeConfig {
    fn default() -> Self {
        Self {
            plane_z: 0.0,
            plane_scale: 5.0,
        }
    }
}

/// Head and gaze points on the windshield plane, seen from the driver's seat:
/// x grows to the driver's right, y grows upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeVector {
    pub head_x: f64,
    pub head_y: f64,
    pub gaze_x: f64,
    pub gaze_y: f64,
    pub valid: bool,
}

impl GazeVector {
    pub const SENTINEL: GazeVector = GazeVector {
        head_x: 0.0,
        head_y: 0.0,
        gaze_x: 0.0,
        gaze_y: 0.0,
        valid: false,
    };

    pub fn features(&self) -> [f64; 4] {
        [self.head_x, self.head_y, self.gaze_x, self.gaze_y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    pub frame: u64,
    #[serde(flatten)]
    pub gaze: GazeVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn camera_to_plane(p: (f64, f64), cfg: &GazeConfig) -> (f64, f64) {
    (-p.0 / cfg.plane_scale, -p.1 / cfg.plane_scale)
}

fn eye(v: Option<[f64; 3]>, what: &str) -> Result<Point3> {
    let [x, y, z] = v.ok_or_else(|| GeometryError::MissingInput(what.into()))?;
    let p = Point3::new(x, y, z);
    if p.iter().all(|c| c.is_finite()) {
        Ok(p)
    } else {
        Err(GeometryError::MissingInput(format!("finite {what}")))
    }
}

fn backproject(uv: (f64, f64), depth: f64, k: &CameraIntrinsics) -> Point3 {
    Point3::new((uv.0 - k.cx) / k.fx * depth, (uv.1 - k.cy) / k.fy * depth, depth)
}

/// Gaze for one frame; any failure is returned as an error.
pub fn try_extract_gaze(
    frame: &LandmarkFrame,
    model: &ModelFace,
    header: &LandmarkHeader,
    cfg: &GazeConfig,
) -> Result<GazeVector> {
    let k = &header.intrinsics;
    let mut observed = Vec::with_capacity(model.len());
    for name in model.names() {
        let uv = frame
            .landmarks
            .get(name)
            .ok_or_else(|| GeometryError::MissingInput(format!("landmark {name}")))?;
        if !(uv.len() == 2 || uv.len() == 3) {
            return Err(GeometryError::MissingInput(format!("[u, v] for {name}")));
        }
        let (u, v) = (uv[0], uv[1]);
        if !(0.0..=header.image_width).contains(&u) || !(0.0..=header.image_height).contains(&v) {
            return Err(GeometryError::OutOfImage(name.clone()));
        }
        observed.push((u, v));
    }
    let lc = eye(frame.eyes.left_center, "left eye centre")?;
    let lp = eye(frame.eyes.left_pupil, "left pupil")?;
    let rc = eye(frame.eyes.right_center, "right eye centre")?;
    let rp = eye(frame.eyes.right_pupil, "right pupil")?;

    let init = initial_pose(model.points(), &observed, k)?;
    let pose = solve_pnp(model.points(), &observed, k, &init, &PnpOptions::default())?.pose;

    // Landmarks lifted to 3D at the depths implied by the fitted pose give the
    // face as estimated in the camera frame; the affine carries it onto the model.
    let estimated: Vec<Point3> = model
        .points()
        .iter()
        .zip(&observed)
        .map(|(p, &uv)| backproject(uv, pose.transform(p).z, k))
        .collect();
    let to_model = fit_affine3d(&estimated, model.points())?;

    let eye_hit = |centre: &Point3, pupil: &Point3| -> Result<(f64, f64)> {
        let c = pose.transform(&apply_affine(&to_model, centre));
        let p = pose.transform(&apply_affine(&to_model, pupil));
        ray_plane(&c, &p, cfg.plane_z)
    };
    let l = eye_hit(&lc, &lp)?;
    let r = eye_hit(&rc, &rp)?;
    let gaze = camera_to_plane(((l.0 + r.0) / 2.0, (l.1 + r.1) / 2.0), cfg);

    let head = head_hit(&pose, model, cfg)?;
    let out = GazeVector {
        head_x: head.0,
        head_y: head.1,
        gaze_x: gaze.0,
        gaze_y: gaze.1,
        valid: true,
    };
    if out.features().iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(GeometryError::Degenerate)
    }
}

fn head_hit(pose: &Pose, model: &ModelFace, cfg: &GazeConfig) -> Result<(f64, f64)> {
    let origin = pose.transform(&model.head_origin());
    let through = origin + pose.rotation * model.forward;
    Ok(camera_to_plane(ray_plane(&origin, &through, cfg.plane_z)?, cfg))
}

/// Gaze for one frame, with the sentinel standing in for any failure.
pub fn extract_gaze_vector(
    frame: &LandmarkFrame,
    model: &ModelFace,
    header: &LandmarkHeader,
    cfg: &GazeConfig,
) -> GazeVector {
    try_extract_gaze(frame, model, header, cfg).unwrap_or(GazeVector::SENTINEL)
}

/// One record per frame line. Unparseable lines take the frame number that
/// follows the previous line's.
pub fn extract_gaze_sequence(file: &LandmarkFile, model: &ModelFace, cfg: &GazeConfig) -> Vec<GazeRecord> {
    let mut numbers = Vec::with_capacity(file.frames.len());
    let mut next = 0u64;
    for f in &file.frames {
        let n = match f {
            Ok(frame) => frame.frame,
            Err(_) => next,
        };
        numbers.push(n);
        next = n + 1;
    }
    file.frames
        .par_iter()
        .zip(numbers)
        .map(|(f, frame)| match f {
            Ok(lf) => match try_extract_gaze(lf, model, &file.header, cfg) {
                Ok(gaze) => GazeRecord {
                    frame,
                    gaze,
                    error: None,
                },
                Err(e) => GazeRecord {
                    frame,
                    gaze: GazeVector::SENTINEL,
                    error: Some(e.to_string()),
                },
            },
            Err(e) => GazeRecord {
                frame,
                gaze: GazeVector::SENTINEL,
                error: Some(e.to_string()),
            },
        })
        .collect()
}
