//! The two fusion classifiers and their checkpoints.
//!
//! Both models take a batch `[B, T, 32]` of frames and return `[B, 5]` class
//! probabilities. Gradients are produced by explicit backward passes built
//! from the numeric primitives.

mod flstm;
mod ftf;

pub use flstm::{flstm_hidden, FLstmConfig};
pub use ftf::{ftf_encode, positional_encoding, FTfConfig};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{LabeledSequence, FRAME_WIDTH};
use crate::numeric::{cross_entropy, Grads, NumericError, ParamStore, Params, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("bad model input: {0}")]
    Input(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture tag plus its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", content = "config")]
pub enum ModelSpec {
    #[serde(rename = "f-lstm")]
    FLstm(FLstmConfig),
    #[serde(rename = "f-tf")]
    FTf(FTfConfig),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Uniform on `±1/sqrt(fan_in)`.
    Uniform(usize),
    Zeros,
    Ones,
}

pub(crate) struct Slot {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

pub(crate) fn weight(path: &str, rows: usize, cols: usize) -> [Slot; 2] {
    [
        Slot {
            path: format!("{path}.w"),
            shape: vec![rows, cols],
            init: Init::Uniform(cols),
        },
        Slot {
            path: format!("{path}.b"),
            shape: vec![rows],
            init: Init::Zeros,
        },
    ]
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::FLstm(_) => "f-lstm",
            ModelSpec::FTf(_) => "f-tf",
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            ModelSpec::FLstm(c) => c.seq_len,
            ModelSpec::FTf(c) => c.seq_len,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ModelSpec::FLstm(c) => c.n_classes,
            ModelSpec::FTf(c) => c.n_classes,
        }
    }

    /// Width of the flattened per-timestep representation fed to the head.
    pub fn flatten_width(&self) -> usize {
        match self {
            ModelSpec::FLstm(c) => c.flatten_width(),
            ModelSpec::FTf(c) => c.flatten_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::FLstm(c) => c.validate(),
            ModelSpec::FTf(c) => c.validate(),
        }
    }

    fn slots(&self) -> Vec<Slot> {
        match self {
            ModelSpec::FLstm(c) => c.slots(),
            ModelSpec::FTf(c) => c.slots(),
        }
    }

    /// Fresh parameters drawn in path order from `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut slots = self.slots();
        slots.sort_by(|a, b| a.path.cmp(&b.path));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in slots {
            let mut t = Tensor::zeros(&s.shape);
            match s.init {
                Init::Uniform(fan_in) => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-a..=a));
                }
                Init::Zeros => {}
                Init::Ones => t.data_mut().iter_mut().for_each(|v| *v = 1.0),
            }
            store.insert(s.path, t);
        }
        Ok(store)
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.seq_len() || s[2] != FRAME_WIDTH {
            return Err(ModelError::Input(format!(
                "expected [B, {}, {FRAME_WIDTH}], got {s:?}",
                self.seq_len()
            )));
        }
        Ok(s[0])
    }

    /// Class probabilities `[B, n_classes]`.
    pub fn forward(&self, params: &Params, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match self {
            ModelSpec::FLstm(c) => Ok(flstm::forward(c, params, x)?.0),
            ModelSpec::FTf(c) => Ok(ftf::forward(c, params, x)?.0),
        }
    }

    /// Summed cross-entropy over the batch and its parameter gradient.
    pub fn loss_grad(&self, params: &Params, x: &Tensor, labels: &[usize]) -> Result<(f64, Grads)> {
        let batch = self.check_input(x)?;
        if labels.len() != batch {
            return Err(ModelError::Input(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        match self {
            ModelSpec::FLstm(c) => {
                let (probs, cache) = flstm::forward(c, params, x)?;
                let (loss, dprobs) = ce_batch(&probs, labels)?;
                Ok((loss, flstm::backward(c, params, &cache, &dprobs)?))
            }
            ModelSpec::FTf(c) => {
                let (probs, cache) = ftf::forward(c, params, x)?;
                let (loss, dprobs) = ce_batch(&probs, labels)?;
                Ok((loss, ftf::backward(c, params, &cache, &dprobs)?))
            }
        }
    }
}

fn ce_batch(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let mut d = Tensor::zeros_like(probs);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let (l, g) = cross_entropy(probs.row(r), y)?;
        loss += l;
        d.row_mut(r).copy_from_slice(&g);
    }
    Ok((loss, d))
}

/// Argmax with ties going to the lowest class index.
pub fn predict(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Stacks sequences into a `[B, T, 32]` batch. Panics on an empty slice.
pub fn batch_input(seqs: &[&LabeledSequence]) -> Tensor {
    assert!(!seqs.is_empty(), "empty batch");
    let t = seqs[0].frames.len();
    let mut data = Vec::with_capacity(seqs.len() * t * FRAME_WIDTH);
    for s in seqs {
        data.extend(s.flat());
    }
    Tensor::new(vec![seqs.len(), t, FRAME_WIDTH], data).expect("sequences share a frame count")
}

/// Classes and probability rows for a batch.
pub fn predict_batch(spec: &ModelSpec, params: &Params, x: &Tensor) -> Result<Vec<(usize, Vec<f64>)>> {
    let probs = spec.forward(params, x)?;
    Ok((0..probs.rows())
        .map(|r| (predict(probs.row(r)), probs.row(r).to_vec()))
        .collect())
}

/// Writes `bytes` next to `path` and renames over it, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    #[serde(flatten)]
    spec: ModelSpec,
    seed: u64,
    num_params: usize,
}

/// Parameters plus the configuration needed to rebuild the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    pub fn meta_json(&self) -> String {
        let meta = CheckpointMeta {
            spec: self.spec.clone(),
            seed: self.seed,
            num_params: self.params.num_scalars(),
        };
        serde_json::to_string_pretty(&meta).expect("config serialises") + "\n"
    }

    /// Writes the blob and its sidecar, each through a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let err = |e: std::io::Error| ModelError::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        write_atomic(path, &self.params.to_bytes()).map_err(err)?;
        write_atomic(&Self::sidecar_path(path), self.meta_json().as_bytes()).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let err = |message: String| ModelError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let blob = std::fs::read(path).map_err(|e| err(e.to_string()))?;
        let side = Self::sidecar_path(path);
        let meta_text = std::fs::read_to_string(&side).map_err(|e| err(format!("{}: {e}", side.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text).map_err(|e| err(e.to_string()))?;
        let params = ParamStore::from_bytes(&blob).map_err(|e| err(e.to_string()))?;
        let expected = meta.spec.init_params(0)?;
        let matches = expected.params().len() == params.params().len()
            && expected
                .params()
                .iter()
                .all(|(k, t)| params.get(k).map(|p| p.shape() == t.shape()).unwrap_or(false));
        if !matches {
            return Err(err("parameter slots do not match the configured architecture".into()));
        }
        Ok(Self {
            spec: meta.spec,
            seed: meta.seed,
            params,
        })
    }
}
