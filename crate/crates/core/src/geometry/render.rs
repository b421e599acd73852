//! Synthetic landmark frames rendered from a known head pose and eye direction.

use nalgebra::Vector3;

use super::{
    project, CameraIntrinsics, EyeObservations, LandmarkFrame, LandmarkHeader, ModelFace, Point3, Pose, Result,
};

pub fn default_header() -> LandmarkHeader {
    LandmarkHeader {
        image_width: 1280.0,
        image_height: 720.0,
        intrinsics: CameraIntrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 640.0,
            cy: 360.0,
        },
    }
}

/// Eye direction in the face frame. Positive `yaw_left` turns toward the
/// subject's left, positive `pitch_up` raises the gaze.
pub fn eye_direction(yaw_left: f64, pitch_up: f64) -> Vector3<f64> {
    Vector3::new(
        yaw_left.sin() * pitch_up.cos(),
        -pitch_up.sin(),
        -yaw_left.cos() * pitch_up.cos(),
    )
}

pub fn render_frame(
    model: &ModelFace,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    frame: u64,
    yaw_left: f64,
    pitch_up: f64,
) -> Result<LandmarkFrame> {
    let uv = project(model.points(), pose, intrinsics)?;
    let landmarks = model
        .names()
        .iter()
        .zip(uv)
        .map(|(n, (u, v))| (n.clone(), vec![u, v]))
        .collect();
    let d = eye_direction(yaw_left, pitch_up) * model.eye_radius;
    let cam = |p: Point3| {
        let c = pose.transform(&p);
        Some([c.x, c.y, c.z])
    };
    Ok(LandmarkFrame {
        frame,
        landmarks,
        eyes: EyeObservations {
            left_center: cam(model.left_eye_center),
            left_pupil: cam(model.left_eye_center + d),
            right_center: cam(model.right_eye_center),
            right_pupil: cam(model.right_eye_center + d),
        },
    })
}

/// Serialises a header and frames in the landmark file layout.
pub fn to_jsonl(header: &LandmarkHeader, frames: &[LandmarkFrame]) -> String {
    let mut out = serde_json::to_string(header).expect("header serialises");
    out.push('\n');
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame serialises"));
        out.push('\n');
    }
    out
}
