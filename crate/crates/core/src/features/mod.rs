//! Per-frame feature encoding and fixed-length sequence assembly.
//!
//! Each frame becomes 32 floats: 4 in-cabin gaze values, 25 for the five
//! largest detected objects and 3 for lane context.

mod sequence;

pub use sequence::{
    assemble_sequence, read_sequences, truncate_and_pad, write_sequences, LabeledSequence, KEEP_FRAMES, SEQ_LEN,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GAZE_WIDTH: usize = 4;
pub const OBJECT_SLOTS: usize = 5;
pub const SLOT_WIDTH: usize = 5;
pub const OBJECT_WIDTH: usize = OBJECT_SLOTS * SLOT_WIDTH;
pub const LANE_WIDTH: usize = 3;
pub const EXTERIOR_WIDTH: usize = OBJECT_WIDTH + LANE_WIDTH;
pub const FRAME_WIDTH: usize = GAZE_WIDTH + EXTERIOR_WIDTH;
pub const NUM_CLASSES: usize = 5;
pub const EMPTY_CLASS: f64 = -1.0;

/// Column ranges of the three modalities inside a frame.
pub const GAZE_COLS: std::ops::Range<usize> = 0..GAZE_WIDTH;
pub const OBJECT_COLS: std::ops::Range<usize> = GAZE_WIDTH..GAZE_WIDTH + OBJECT_WIDTH;
pub const LANE_COLS: std::ops::Range<usize> = GAZE_WIDTH + OBJECT_WIDTH..FRAME_WIDTH;

const _: () = assert!(FRAME_WIDTH == 32 && EXTERIOR_WIDTH == 28);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("lane position {position} exceeds {lanes} lanes")]
    InvalidLane { position: u32, lanes: u32 },
    #[error("{stream} stream has {got} frames, expected {expected}")]
    Length {
        stream: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("keep_frames must be one of 30, 60, 90, 120, 150, got {0}")]
    BadKeep(usize),
    #[error("label {0} is not a maneuver class")]
    BadLabel(i64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sequence {id}: {message}")]
    Invalid { id: String, message: String },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Maneuver {
    Straight = 0,
    LeftLaneChange = 1,
    LeftTurn = 2,
    RightLaneChange = 3,
    RightTurn = 4,
}

impl Maneuver {
    pub const ALL: [Maneuver; NUM_CLASSES] = [
        Maneuver::Straight,
        Maneuver::LeftLaneChange,
        Maneuver::LeftTurn,
        Maneuver::RightLaneChange,
        Maneuver::RightTurn,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(FeatureError::BadLabel(i as i64))
    }

    pub fn name(self) -> &'static str {
        match self {
            Maneuver::Straight => "straight",
            Maneuver::LeftLaneChange => "left-lane-change",
            Maneuver::LeftTurn => "left-turn",
            Maneuver::RightLaneChange => "right-lane-change",
            Maneuver::RightTurn => "right-turn",
        }
    }

    /// -1 for leftward maneuvers, +1 for rightward, 0 for straight.
    pub fn side(self) -> f64 {
        match self {
            Maneuver::Straight => 0.0,
            Maneuver::LeftLaneChange | Maneuver::LeftTurn => -1.0,
            Maneuver::RightLaneChange | Maneuver::RightTurn => 1.0,
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Maneuver::LeftTurn | Maneuver::RightTurn)
    }
}

impl TryFrom<u8> for Maneuver {
    type Error = FeatureError;
    fn try_from(v: u8) -> Result<Self> {
        Self::from_index(v as usize)
    }
}

impl From<Maneuver> for u8 {
    fn from(m: Maneuver) -> u8 {
        m as u8
    }
}

/// A detected object with box centre and size normalised by image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: i64,
}

impl Detection {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !(0..=4).contains(&self.class_id) {
            return Err(FeatureError::InvalidDetection(format!("class_id {}", self.class_id)));
        }
        if !unit.contains(&self.cx) || !unit.contains(&self.cy) {
            return Err(FeatureError::InvalidDetection(format!(
                "centre ({}, {})",
                self.cx, self.cy
            )));
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()) {
            return Err(FeatureError::InvalidDetection(format!("size {}x{}", self.w, self.h)));
        }
        Ok(())
    }
}

/// The five largest boxes as `(cx, cy, h, w, class_id)` slots.
pub fn encode_objects(detections: &[Detection]) -> Result<[f64; OBJECT_WIDTH]> {
    for d in detections {
        d.validate()?;
    }
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by(|a, b| {
        b.area()
            .total_cmp(&a.area())
            .then(a.cx.total_cmp(&b.cx))
            .then(a.cy.total_cmp(&b.cy))
    });
    let mut out = [0.0; OBJECT_WIDTH];
    for slot in 0..OBJECT_SLOTS {
        let s = &mut out[slot * SLOT_WIDTH..(slot + 1) * SLOT_WIDTH];
        match sorted.get(slot) {
            Some(d) => s.copy_from_slice(&[d.cx, d.cy, d.h, d.w, d.class_id as f64]),
            None => s[4] = EMPTY_CLASS,
        }
    }
    Ok(out)
}

/// Lane context. Positions count from the leftmost lane, which is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneInfo {
    pub lane_position: u32,
    pub num_lanes: u32,
    #[serde(deserialize_with = "flag")]
    pub near_intersection: bool,
}

/// Accepts `true`/`false` or `0`/`1`.
fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(u8),
    }
    match Flag::deserialize(d)? {
        Flag::Bool(b) => Ok(b),
        Flag::Int(0) => Ok(false),
        Flag::Int(1) => Ok(true),
        Flag::Int(v) => Err(serde::de::Error::custom(format!(
            "near_intersection must be 0 or 1, got {v}"
        ))),
    }
}

pub fn encode_lanes(info: &LaneInfo) -> Result<[f64; LANE_WIDTH]> {
    if info.lane_position < 1 || info.num_lanes < 1 || info.lane_position > info.num_lanes {
        return Err(FeatureError::InvalidLane {
            position: info.lane_position,
            lanes: info.num_lanes,
        });
    }
    Ok([
        info.lane_position as f64,
        info.num_lanes as f64,
        if info.near_intersection { 1.0 } else { 0.0 },
    ])
}

/// One 32-wide frame. Serialises as a flat array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct FrameFeatures {
    pub gaze: [f64; GAZE_WIDTH],
    pub objects: [f64; OBJECT_WIDTH],
    pub lanes: [f64; LANE_WIDTH],
}

impl FrameFeatures {
    pub const ZERO: FrameFeatures = FrameFeatures {
        gaze: [0.0; GAZE_WIDTH],
        objects: [0.0; OBJECT_WIDTH],
        lanes: [0.0; LANE_WIDTH],
    };

    pub fn to_array(&self) -> [f64; FRAME_WIDTH] {
        let mut out = [0.0; FRAME_WIDTH];
        out[GAZE_COLS].copy_from_slice(&self.gaze);
        out[OBJECT_COLS].copy_from_slice(&self.objects);
        out[LANE_COLS].copy_from_slice(&self.lanes);
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != FRAME_WIDTH {
            return Err(FeatureError::InvalidDetection(format!(
                "frame has {} values, expected {FRAME_WIDTH}",
                v.len()
            )));
        }
        let mut f = Self::ZERO;
        f.gaze.copy_from_slice(&v[GAZE_COLS]);
        f.objects.copy_from_slice(&v[OBJECT_COLS]);
        f.lanes.copy_from_slice(&v[LANE_COLS]);
        Ok(f)
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|&v| v == 0.0)
    }
}

impl From<FrameFeatures> for Vec<f64> {
    fn from(f: FrameFeatures) -> Vec<f64> {
        f.to_array().to_vec()
    }
}

impl TryFrom<Vec<f64>> for FrameFeatures {
    type Error = FeatureError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, w: f64, h: f64, class_id: i64) -> Detection {
        Detection { cx, cy, w, h, class_id }
    }

    #[test]
    fn empty_scene_is_five_sentinels() {
        let e = encode_objects(&[]).unwrap();
        for s in 0..5 {
            assert_eq!(&e[s * 5..s * 5 + 5], &[0.0, 0.0, 0.0, 0.0, -1.0]);
        }
    }

    #[test]
    fn larger_box_takes_first_slot() {
        let e = encode_objects(&[det(0.5, 0.5, 0.2, 0.1, 0), det(0.3, 0.4, 0.4, 0.3, 2)]).unwrap();
        assert_eq!(&e[0..5], &[0.3, 0.4, 0.3, 0.4, 2.0]);
        assert_eq!(&e[5..10], &[0.5, 0.5, 0.1, 0.2, 0.0]);
        assert_eq!(e[14], -1.0);
    }

    #[test]
    fn equal_areas_break_ties_by_centre() {
        let e = encode_objects(&[
            det(0.6, 0.1, 0.2, 0.2, 1),
            det(0.2, 0.9, 0.2, 0.2, 3),
            det(0.2, 0.1, 0.2, 0.2, 4),
        ])
        .unwrap();
        assert_eq!(e[4], 4.0);
        assert_eq!(e[9], 3.0);
        assert_eq!(e[14], 1.0);
    }

    #[test]
    fn class_five_rejected() {
        assert!(matches!(
            encode_objects(&[det(0.5, 0.5, 0.1, 0.1, 5)]),
            Err(FeatureError::InvalidDetection(_))
        ));
    }

    #[test]
    fn lanes_encode_directly() {
        let l = |p, n, i| LaneInfo {
            lane_position: p,
            num_lanes: n,
            near_intersection: i,
        };
        assert_eq!(encode_lanes(&l(1, 1, false)).unwrap(), [1.0, 1.0, 0.0]);
        assert_eq!(encode_lanes(&l(2, 3, true)).unwrap(), [2.0, 3.0, 1.0]);
        assert_eq!(
            encode_lanes(&l(4, 3, false)),
            Err(FeatureError::InvalidLane { position: 4, lanes: 3 })
        );
    }

    #[test]
    fn lane_flag_accepts_integers() {
        let l: LaneInfo = serde_json::from_str(r#"{"lane_position":1,"num_lanes":2,"near_intersection":1}"#).unwrap();
        assert!(l.near_intersection);
        assert!(
            serde_json::from_str::<LaneInfo>(r#"{"lane_position":1,"num_lanes":2,"near_intersection":2}"#).is_err()
        );
    }

    #[test]
    fn frame_serialises_flat() {
        let mut f = FrameFeatures::ZERO;
        f.gaze[0] = 0.5;
        f.lanes[2] = 1.0;
        let text = serde_json::to_string(&f).unwrap();
        let arr: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(arr.len(), 32);
        assert_eq!(arr[31], 1.0);
        assert_eq!(serde_json::from_str::<FrameFeatures>(&text).unwrap(), f);
        assert!(serde_json::from_str::<FrameFeatures>("[1.0, 2.0]").is_err());
    }

    #[test]
    fn maneuver_labels_round_trip() {
        for m in Maneuver::ALL {
            assert_eq!(Maneuver::from_index(m.index()).unwrap(), m);
        }
        assert!(Maneuver::try_from(5u8).is_err());
    }
}
