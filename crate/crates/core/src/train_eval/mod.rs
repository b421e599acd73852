//! Training, metrics, time-to-maneuver and the cross-validated benchmark
//! protocols.

mod benchmark;
mod metrics;
mod report;
mod train;
mod tum;

pub use benchmark::{
    run_ablation, run_benchmark, AblationColumn, AblationTable, BenchmarkConfig, BenchmarkReport, FoldReport,
};
pub use metrics::{
    chance_baseline, evaluate, majority_baseline, predict_sequences, ChanceBaseline, ClassMetrics, Confusion, Metrics,
};
pub use report::checkpoint_svg;
pub use train::{train, EpochRecord, History, TrainConfig, TrainedModel};
pub use tum::{
    checkpoint_predictions, compute_tum, seconds_before, sequence_tum, CheckpointAccuracy, TumReport, TumRule,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::features::{FeatureError, GAZE_COLS, LANE_COLS, OBJECT_COLS};
use crate::models::ModelError;
use crate::numeric::{NumericError, Tensor};

#[derive(Debug, Error)]
pub enum TrainEvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainEvalError>;

/// Which feature groups reach the model; disabled groups are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub gaze: bool,
    pub objects: bool,
    pub lanes: bool,
}

impl ModalityMask {
    pub const ALL: ModalityMask = ModalityMask {
        gaze: true,
        objects: true,
        lanes: true,
    };
    /// Interior camera only: gaze and head pose.
    pub const INTERIOR: ModalityMask = ModalityMask {
        gaze: true,
        objects: false,
        lanes: false,
    };

    pub fn name(&self) -> String {
        match *self {
            Self::ALL => "all".into(),
            Self::INTERIOR => "interior".into(),
            m => format!("gaze={},objects={},lanes={}", m.gaze, m.objects, m.lanes),
        }
    }

    /// Zeroes masked columns of a `[.., 32]` tensor in place.
    pub fn apply(&self, x: &mut Tensor) {
        if *self == Self::ALL {
            return;
        }
        let off: Vec<std::ops::Range<usize>> = [
            (self.gaze, GAZE_COLS),
            (self.objects, OBJECT_COLS),
            (self.lanes, LANE_COLS),
        ]
        .into_iter()
        .filter(|(on, _)| !on)
        .map(|(_, r)| r)
        .collect();
        for r in 0..x.rows() {
            let row = x.row_mut(r);
            for cols in &off {
                row[cols.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self::ALL
    }
}

/// Zero-time trains and tests on full 150-frame windows; varying-time trains
/// on all five truncations and reports accuracy at each checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    ZeroTime,
    VaryingTime,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::ZeroTime => "zero-time",
            Protocol::VaryingTime => "varying-time",
        }
    }
}
