//! Dataset manifests: synthetic generation, real-data ingestion and
//! stratified folds.

mod folds;
mod ingest;
mod synth;

pub use folds::{stratified_kfold, FoldSplit};
pub use ingest::{ingest_real, LayoutDescriptor};
pub use synth::{generate_synthetic, SynthConfig, PAPER_CLASS_COUNTS};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{read_sequences, write_sequences, FeatureError, LabeledSequence, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no valid sequences found under {0}")]
    Empty(PathBuf),
    #[error("k = {k} is invalid: {reason}")]
    BadK { k: usize, reason: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    Synthetic { config: SynthConfig },
    RealAdapter { root: String, skipped: Vec<String> },
    File { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub sequences: Vec<LabeledSequence>,
    pub class_counts: [usize; NUM_CLASSES],
    pub source: Source,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    class_counts: [usize; NUM_CLASSES],
    num_sequences: usize,
    source: Source,
}

pub fn class_counts(seqs: &[LabeledSequence]) -> [usize; NUM_CLASSES] {
    let mut c = [0; NUM_CLASSES];
    for s in seqs {
        c[s.label.index()] += 1;
    }
    c
}

/// Path of the JSON sidecar stored next to a sequence file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

impl DatasetManifest {
    pub fn new(sequences: Vec<LabeledSequence>, source: Source) -> Self {
        let class_counts = class_counts(&sequences);
        Self {
            sequences,
            class_counts,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_sequences(&mut buf, &self.sequences).expect("writing to memory");
        buf
    }

    pub fn sidecar_json(&self) -> String {
        let s = Sidecar {
            class_counts: self.class_counts,
            num_sequences: self.sequences.len(),
            source: self.source.clone(),
        };
        serde_json::to_string_pretty(&s).expect("sidecar serialises") + "\n"
    }

    /// Reads a sequence file; the sidecar's provenance is used when present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let sequences = read_sequences(&text).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let side = sidecar_path(path);
        let source = match std::fs::read_to_string(&side) {
            Ok(t) => {
                serde_json::from_str::<Sidecar>(&t)
                    .map_err(|e| DatasetError::Parse {
                        path: side.clone(),
                        message: e.to_string(),
                    })?
                    .source
            }
            Err(_) => Source::File {
                path: path.display().to_string(),
            },
        };
        Ok(Self::new(sequences, source))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_next_to_file() {
        assert_eq!(
            sidecar_path(Path::new("/a/b.jsonl")),
            PathBuf::from("/a/b.jsonl.meta.json")
        );
    }
}
