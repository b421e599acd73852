use serde::{Deserialize, Serialize};

use super::{weight, Init, ModelError, Result, Slot};
use crate::features::{GAZE_COLS, LANE_COLS, NUM_CLASSES, OBJECT_COLS, SEQ_LEN};
use crate::numeric::{
    linear, linear_backward, lstm_sequence, lstm_sequence_backward, normalize_sum, normalize_sum_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, Grads, LstmParams, LstmSequenceCache, Params, Tensor,
};

/// Three modality LSTMs (gaze, lanes, objects) whose per-step outputs are
/// flattened into an MLP head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FLstmConfig {
    pub gaze_hidden: usize,
    pub lane_hidden: usize,
    pub object_hidden: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub seq_len: usize,
}

impl Default for FLstmConfig {
    fn default() -> Self {
        Self {
            gaze_hidden: 10,
            lane_hidden: 5,
            object_hidden: 10,
            mlp_hidden: 100,
            n_classes: NUM_CLASSES,
            seq_len: SEQ_LEN,
        }
    }
}

impl FLstmConfig {
    pub fn step_width(&self) -> usize {
        self.gaze_hidden + self.lane_hidden + self.object_hidden
    }

    pub fn flatten_width(&self) -> usize {
        self.seq_len * self.step_width()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.gaze_hidden,
            self.lane_hidden,
            self.object_hidden,
            self.mlp_hidden,
            self.n_classes,
            self.seq_len,
        ];
        if dims.contains(&0) {
            return Err(ModelError::Config(format!(
                "f-lstm dimensions must be positive: {self:?}"
            )));
        }
        if self.n_classes != NUM_CLASSES {
            return Err(ModelError::Config(format!("n_classes must be {NUM_CLASSES}")));
        }
        Ok(())
    }

    fn streams(&self) -> [(&'static str, std::ops::Range<usize>, usize); 3] {
        [
            ("flstm.gaze_lstm", GAZE_COLS, self.gaze_hidden),
            ("flstm.lane_lstm", LANE_COLS, self.lane_hidden),
            ("flstm.object_lstm", OBJECT_COLS, self.object_hidden),
        ]
    }

    pub(crate) fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for (name, cols, h) in self.streams() {
            let fan_in = cols.len() + h;
            out.push(Slot {
                path: format!("{name}.w"),
                shape: vec![4 * h, fan_in],
                init: Init::Uniform(fan_in),
            });
            out.push(Slot {
                path: format!("{name}.b"),
                shape: vec![4 * h],
                init: Init::Zeros,
            });
        }
        out.extend(weight("flstm.fc1", self.mlp_hidden, self.flatten_width()));
        out.extend(weight("flstm.fc2", self.n_classes, self.mlp_hidden));
        out
    }
}

pub(crate) fn columns(x: &Tensor, cols: std::ops::Range<usize>) -> Tensor {
    let (rows, width) = (x.rows(), cols.len());
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        data.extend_from_slice(&x.row(r)[cols.clone()]);
    }
    Tensor::new(vec![rows, width], data).expect("non-empty column range")
}

fn lstm_params<'a>(params: &'a Params, name: &str) -> Result<LstmParams<'a>> {
    Ok(LstmParams {
        w: params.get(&format!("{name}.w"))?,
        b: params.get(&format!("{name}.b"))?,
    })
}

pub(crate) struct FLstmCache {
    lstm: Vec<LstmSequenceCache>,
    flat: Tensor,
    z1: Tensor,
    a1: Tensor,
    s: Tensor,
    p: Tensor,
}

fn run_lstms(cfg: &FLstmConfig, params: &Params, x: &Tensor) -> Result<(Tensor, Vec<LstmSequenceCache>)> {
    let (batch, steps) = (x.shape()[0], x.shape()[1]);
    let width = cfg.step_width();
    let mut hidden = Tensor::zeros(&[batch, steps, width]);
    let mut caches = Vec::with_capacity(3);
    let mut offset = 0;
    for (name, cols, h) in cfg.streams() {
        let n_in = cols.len();
        let xs = columns(x, cols).reshape(vec![batch, steps, n_in])?;
        let (hs, cache) = lstm_sequence(&xs, lstm_params(params, name)?)?;
        for r in 0..batch * steps {
            hidden.row_mut(r)[offset..offset + h].copy_from_slice(hs.row(r));
        }
        offset += h;
        caches.push(cache);
    }
    Ok((hidden, caches))
}

/// Concatenated per-step hidden outputs `[B, T, 25]` before flattening.
pub fn flstm_hidden(cfg: &FLstmConfig, params: &Params, x: &Tensor) -> Result<Tensor> {
    Ok(run_lstms(cfg, params, x)?.0)
}

pub(crate) fn forward(cfg: &FLstmConfig, params: &Params, x: &Tensor) -> Result<(Tensor, FLstmCache)> {
    let batch = x.shape()[0];
    let (hidden, lstm) = run_lstms(cfg, params, x)?;
    let flat = hidden.reshape(vec![batch, cfg.flatten_width()])?;
    let z1 = linear(&flat, params.get("flstm.fc1.w")?, params.get("flstm.fc1.b")?)?;
    let a1 = relu(&z1);
    let z2 = linear(&a1, params.get("flstm.fc2.w")?, params.get("flstm.fc2.b")?)?;
    let s = sigmoid(&z2);
    let p = normalize_sum(&s);
    Ok((
        p.clone(),
        FLstmCache {
            lstm,
            flat,
            z1,
            a1,
            s,
            p,
        },
    ))
}

pub(crate) fn backward(cfg: &FLstmConfig, params: &Params, cache: &FLstmCache, dp: &Tensor) -> Result<Grads> {
    let mut grads = Grads::zeros_like(params);
    let ds = normalize_sum_backward(&cache.s, &cache.p, dp)?;
    let dz2 = sigmoid_backward(&cache.s, &ds)?;
    let g2 = linear_backward(&cache.a1, params.get("flstm.fc2.w")?, &dz2)?;
    grads.accumulate("flstm.fc2.w", &g2.dw)?;
    grads.accumulate("flstm.fc2.b", &g2.db)?;
    let dz1 = relu_backward(&cache.z1, &g2.dx)?;
    let g1 = linear_backward(&cache.flat, params.get("flstm.fc1.w")?, &dz1)?;
    grads.accumulate("flstm.fc1.w", &g1.dw)?;
    grads.accumulate("flstm.fc1.b", &g1.db)?;

    let batch = cache.flat.rows();
    let (steps, width) = (cfg.seq_len, cfg.step_width());
    let dhidden = g1.dx.reshape(vec![batch * steps, width])?;
    let mut offset = 0;
    for ((name, _, h), lc) in cfg.streams().into_iter().zip(&cache.lstm) {
        let mut dhs = Tensor::zeros(&[batch, steps, h]);
        for r in 0..batch * steps {
            dhs.row_mut(r).copy_from_slice(&dhidden.row(r)[offset..offset + h]);
        }
        offset += h;
        let (_, lg) = lstm_sequence_backward(lstm_params(params, name)?, lc, &dhs)?;
        grads.accumulate(&format!("{name}.w"), &lg.dw)?;
        grads.accumulate(&format!("{name}.b"), &lg.db)?;
    }
    Ok(grads)
}
