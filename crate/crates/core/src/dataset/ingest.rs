use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, DatasetError, DatasetManifest, Result, Source};
use crate::features::{assemble_sequence, Detection, LabeledSequence, LaneInfo, Maneuver, SEQ_LEN};

/// Maps maneuver folders to labels and names the per-video artifact files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutDescriptor {
    pub classes: BTreeMap<String, u8>,
    /// JSON Lines of gaze records (`head_x`, `head_y`, `gaze_x`, `gaze_y`), one per frame.
    pub gaze_file: String,
    /// JSON Lines of `{"frame": n, "detections": [...]}`, one per frame.
    pub detections_file: String,
    /// A single lane object for the whole video, or an array of one per frame.
    pub lanes_file: String,
    /// Detector classes removed before encoding.
    pub drop_classes: Vec<i64>,
}

impl Default for LayoutDescriptor {
    fn default() -> Self {
        let classes = [
            ("end_action", 0),
            ("lchange", 1),
            ("lturn", 2),
            ("rchange", 3),
            ("rturn", 4),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            classes,
            gaze_file: "gaze.jsonl".into(),
            detections_file: "detections.jsonl".into(),
            lanes_file: "lanes.json".into(),
            drop_classes: vec![5],
        }
    }
}

#[derive(Deserialize)]
struct GazeLine {
    head_x: f64,
    head_y: f64,
    gaze_x: f64,
    gaze_y: f64,
    #[serde(default = "yes")]
    valid: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
struct DetectionLine {
    #[serde(default)]
    detections: Vec<Detection>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LanesFile {
    One(LaneInfo),
    PerFrame(Vec<LaneInfo>),
}

fn json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> std::result::Result<Vec<T>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1)))
        .collect()
}

fn read_video(
    dir: &Path,
    id: &str,
    label: Maneuver,
    layout: &LayoutDescriptor,
) -> std::result::Result<LabeledSequence, String> {
    let gaze: Vec<GazeLine> = json_lines(&dir.join(&layout.gaze_file))?;
    let gaze: Vec<[f64; 4]> = gaze
        .iter()
        .map(|g| {
            if g.valid {
                [g.head_x, g.head_y, g.gaze_x, g.gaze_y]
            } else {
                [0.0; 4]
            }
        })
        .collect();
    let detections: Vec<DetectionLine> = json_lines(&dir.join(&layout.detections_file))?;
    let objects: Vec<Vec<Detection>> = detections
        .into_iter()
        .map(|d| {
            d.detections
                .into_iter()
                .filter(|o| !layout.drop_classes.contains(&o.class_id))
                .collect()
        })
        .collect();
    let lanes_path = dir.join(&layout.lanes_file);
    let lanes_text = std::fs::read_to_string(&lanes_path).map_err(|e| format!("{}: {e}", lanes_path.display()))?;
    let lanes =
        match serde_json::from_str::<LanesFile>(&lanes_text).map_err(|e| format!("{}: {e}", lanes_path.display()))? {
            LanesFile::One(l) => vec![l; SEQ_LEN],
            LanesFile::PerFrame(v) => v,
        };
    assemble_sequence(id, &gaze, &objects, &lanes, label).map_err(|e| e.to_string())
}

fn sorted_dirs(path: &Path) -> Result<Vec<(String, std::path::PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io_err(path))? {
        let entry = entry.map_err(io_err(path))?;
        if entry.file_type().map_err(io_err(path))?.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Reads `root/<maneuver folder>/<video>/` artifact directories. Videos that
/// fail validation are logged and listed in the manifest source.
pub fn ingest_real(root: &Path, layout: &LayoutDescriptor) -> Result<DatasetManifest> {
    for (folder, &label) in &layout.classes {
        if Maneuver::from_index(label as usize).is_err() {
            return Err(DatasetError::Config(format!(
                "folder {folder} maps to unknown label {label}"
            )));
        }
    }
    let mut sequences = Vec::new();
    let mut skipped = Vec::new();
    for (folder, path) in sorted_dirs(root)? {
        let Some(&label) = layout.classes.get(&folder) else {
            log::warn!("ignoring folder {folder}: not in layout");
            continue;
        };
        let label = Maneuver::from_index(label as usize)?;
        for (video, dir) in sorted_dirs(&path)? {
            let id = format!("{folder}/{video}");
            match read_video(&dir, &id, label, layout) {
                Ok(s) => sequences.push(s),
                Err(reason) => {
                    log::warn!("skipping {id}: {reason}");
                    skipped.push(format!("{id}: {reason}"));
                }
            }
        }
    }
    if sequences.is_empty() {
        return Err(DatasetError::Empty(root.to_path_buf()));
    }
    Ok(DatasetManifest::new(
        sequences,
        Source::RealAdapter {
            root: root.display().to_string(),
            skipped,
        },
    ))
}
