use serde::{Deserialize, Serialize};

use super::metrics::predict_sequences;
use super::{ModalityMask, Result, TrainEvalError};
use crate::features::{truncate_and_pad, LabeledSequence, KEEP_FRAMES, SEQ_LEN};
use crate::models::Checkpoint;

const CHECKPOINTS: usize = KEEP_FRAMES.len();
const FPS: usize = 30;

/// Seconds between the end of a `keep`-frame prefix and the maneuver, so
/// 30 frames is 5 s and the full window is 1 s.
pub fn seconds_before(keep: usize) -> f64 {
    ((SEQ_LEN - keep) / FPS + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TumRule {
    /// Earliest checkpoint from which every later prediction is correct.
    #[default]
    StableFromEarliest,
    /// Earliest correct checkpoint, regardless of what follows.
    FirstCorrect,
}

/// `correct[i]` refers to `KEEP_FRAMES[i]`, earliest first. Sequences never
/// credited score 0.
pub fn sequence_tum(correct: &[bool; CHECKPOINTS], rule: TumRule) -> f64 {
    let start = match rule {
        TumRule::StableFromEarliest => {
            let tail = correct.iter().rev().take_while(|&&c| c).count();
            (tail > 0).then(|| CHECKPOINTS - tail)
        }
        TumRule::FirstCorrect => correct.iter().position(|&c| c),
    };
    start.map_or(0.0, |i| seconds_before(KEEP_FRAMES[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAccuracy {
    pub keep_frames: Vec<usize>,
    pub seconds_before: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl CheckpointAccuracy {
    pub(crate) fn from_correct(rows: &[[bool; CHECKPOINTS]]) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            keep_frames: KEEP_FRAMES.to_vec(),
            seconds_before: KEEP_FRAMES.iter().map(|&k| seconds_before(k)).collect(),
            accuracy: (0..CHECKPOINTS)
                .map(|i| rows.iter().filter(|r| r[i]).count() as f64 / n)
                .collect(),
        }
    }

    /// `seconds_before,keep_frames,accuracy` rows, earliest first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seconds_before,keep_frames,accuracy\n");
        for i in 0..self.accuracy.len() {
            out += &format!(
                "{},{},{:.6}\n",
                self.seconds_before[i], self.keep_frames[i], self.accuracy[i]
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumReport {
    pub rule: TumRule,
    pub mean_tum: f64,
    pub checkpoints: CheckpointAccuracy,
}

impl TumReport {
    pub(crate) fn from_correct(rows: &[[bool; CHECKPOINTS]], rule: TumRule) -> Self {
        let mean_tum = rows.iter().map(|r| sequence_tum(r, rule)).sum::<f64>() / rows.len().max(1) as f64;
        Self {
            rule,
            mean_tum,
            checkpoints: CheckpointAccuracy::from_correct(rows),
        }
    }
}

/// Predictions for every sequence at each truncation, earliest first.
pub fn checkpoint_predictions(
    ckpt: &Checkpoint,
    mask: ModalityMask,
    seqs: &[&LabeledSequence],
) -> Result<Vec<[usize; CHECKPOINTS]>> {
    let mut out = vec![[0; CHECKPOINTS]; seqs.len()];
    for (i, keep) in KEEP_FRAMES.into_iter().enumerate() {
        let cut = seqs
            .iter()
            .map(|s| truncate_and_pad(s, keep))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let refs: Vec<&LabeledSequence> = cut.iter().collect();
        for (row, p) in out.iter_mut().zip(predict_sequences(ckpt, mask, &refs)?) {
            row[i] = p;
        }
    }
    Ok(out)
}

pub(crate) fn correctness(seqs: &[&LabeledSequence], preds: &[[usize; CHECKPOINTS]]) -> Vec<[bool; CHECKPOINTS]> {
    seqs.iter()
        .zip(preds)
        .map(|(s, p)| p.map(|c| c == s.label.index()))
        .collect()
}

pub fn compute_tum(
    ckpt: &Checkpoint,
    mask: ModalityMask,
    seqs: &[&LabeledSequence],
    rule: TumRule,
) -> Result<TumReport> {
    if seqs.is_empty() {
        return Err(TrainEvalError::Empty("test"));
    }
    let preds = checkpoint_predictions(ckpt, mask, seqs)?;
    Ok(TumReport::from_correct(&correctness(seqs, &preds), rule))
}
