//! Dense f64 tensor kernel with hand-derived reverse-mode gradients.
//!
//! Every forward primitive here has a matching `*_backward` that maps an
//! upstream gradient onto its inputs and parameters. Matrices are row-major;
//! a batch of sequences of length `T` is stored as `B*T` consecutive rows.

mod activations;
mod attention;
pub mod gradcheck;
mod linear;
mod loss;
mod lstm;
mod norm;
mod optim;
mod params;
mod tensor;

pub use activations::{
    normalize_sum, normalize_sum_backward, relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward,
    tanh, tanh_backward,
};
pub use attention::{self_attention, self_attention_backward, AttentionCache, AttentionGrads, AttentionParams};
pub use linear::{linear, linear_backward, matmul, matmul_nt, matmul_tn, LinearGrads};
pub use loss::{cross_entropy, PROB_CLAMP};
pub use lstm::{
    lstm_cell, lstm_cell_backward, lstm_sequence, lstm_sequence_backward, LstmCellCache, LstmGrads, LstmParams,
    LstmSequenceCache,
};
pub use norm::{layer_norm, layer_norm_backward, LayerNormCache, LAYER_NORM_EPS};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, ParamStore, Params, BLOB_MAGIC};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("model width {width} is not divisible by {heads} heads")]
    HeadsDoNotDivide { width: usize, heads: usize },
    #[error("no gradient slot for parameter `{0}`")]
    MissingGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("flat vector has {got} values, store holds {expected}")]
    FlatLength { expected: usize, got: usize },
    #[error("parameter blob: {0}")]
    Blob(String),
}

pub type Result<T> = std::result::Result<T, NumericError>;
