use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    encode_lanes, encode_objects, Detection, FeatureError, FrameFeatures, LaneInfo, Maneuver, Result, FRAME_WIDTH,
    GAZE_WIDTH,
};

/// Frames per sequence: five seconds at 30 fps.
pub const SEQ_LEN: usize = 150;
/// Allowed truncation lengths, one per second of observation.
pub const KEEP_FRAMES: [usize; 5] = [30, 60, 90, 120, 150];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub id: String,
    pub label: Maneuver,
    pub valid_frames: usize,
    pub frames: Vec<FrameFeatures>,
}

impl LabeledSequence {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| FeatureError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.frames.len() != SEQ_LEN {
            return Err(bad(format!("{} frames, expected {SEQ_LEN}", self.frames.len())));
        }
        if self.valid_frames > SEQ_LEN {
            return Err(bad(format!("valid_frames {} exceeds {SEQ_LEN}", self.valid_frames)));
        }
        if let Some(i) = self.frames[self.valid_frames..].iter().position(|f| !f.is_zero()) {
            return Err(bad(format!(
                "frame {} past valid_frames is not zero",
                self.valid_frames + i
            )));
        }
        if self.frames.iter().any(|f| f.to_array().iter().any(|v| !v.is_finite())) {
            return Err(bad("non-finite feature".into()));
        }
        Ok(())
    }

    /// Row-major `SEQ_LEN x FRAME_WIDTH` values.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(SEQ_LEN * FRAME_WIDTH);
        for f in &self.frames {
            out.extend_from_slice(&f.to_array());
        }
        out
    }
}

/// Builds a full-length sequence from aligned per-frame streams.
pub fn assemble_sequence(
    id: impl Into<String>,
    gaze: &[[f64; GAZE_WIDTH]],
    objects: &[Vec<Detection>],
    lanes: &[LaneInfo],
    label: Maneuver,
) -> Result<LabeledSequence> {
    for (stream, got) in [("gaze", gaze.len()), ("objects", objects.len()), ("lanes", lanes.len())] {
        if got != SEQ_LEN {
            return Err(FeatureError::Length {
                stream,
                expected: SEQ_LEN,
                got,
            });
        }
    }
    let frames = (0..SEQ_LEN)
        .map(|i| {
            Ok(FrameFeatures {
                gaze: gaze[i],
                objects: encode_objects(&objects[i])?,
                lanes: encode_lanes(&lanes[i])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledSequence {
        id: id.into(),
        label,
        valid_frames: SEQ_LEN,
        frames,
    })
}

/// Keeps the first `keep` frames and zeroes every value after them.
pub fn truncate_and_pad(seq: &LabeledSequence, keep: usize) -> Result<LabeledSequence> {
    if !KEEP_FRAMES.contains(&keep) {
        return Err(FeatureError::BadKeep(keep));
    }
    let mut out = seq.clone();
    for f in &mut out.frames[keep.min(seq.frames.len())..] {
        *f = FrameFeatures::ZERO;
    }
    out.valid_frames = seq.valid_frames.min(keep);
    Ok(out)
}

pub fn write_sequences<W: Write>(mut w: W, seqs: &[LabeledSequence]) -> std::io::Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a sequence file, validating every line.
pub fn read_sequences(text: &str) -> Result<Vec<LabeledSequence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let s: LabeledSequence = serde_json::from_str(l).map_err(|e| FeatureError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            s.validate().map_err(|e| FeatureError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok(s)
        })
        .collect()
}
