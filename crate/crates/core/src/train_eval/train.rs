use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModalityMask, Protocol, Result, TrainEvalError};
use crate::features::{truncate_and_pad, LabeledSequence, KEEP_FRAMES, NUM_CLASSES};
use crate::models::{batch_input, Checkpoint, ModelError, ModelSpec};
use crate::numeric::{cross_entropy, Adam, AdamConfig, Grads, NumericError, ParamStore, Params, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without a validation-loss improvement before stopping.
    pub early_stop_patience: usize,
    /// Share of each class held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    pub modality_mask: ModalityMask,
    /// Examples per gradient work unit. Units are summed in a fixed order,
    /// so results do not depend on the thread count.
    pub grad_chunk: usize,
    /// Return the lowest validation-loss parameters instead of the last ones.
    pub restore_best: bool,
    /// Decoupled weight decay on weight matrices, applied after each Adam step.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 1,
            early_stop_patience: 20,
            validation_fraction: 0.1,
            modality_mask: ModalityMask::ALL,
            grad_chunk: 8,
            restore_best: false,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_chunk == 0 {
            return Err(TrainEvalError::Config(
                "batch_size and grad_chunk must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(TrainEvalError::Config("validation_fraction must be in [0, 1)".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainEvalError::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Lowest validation-loss epoch (the last epoch without validation).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub mask: ModalityMask,
    pub protocol: Protocol,
    pub history: History,
}

pub(crate) fn masked_batch(seqs: &[&LabeledSequence], mask: ModalityMask) -> Tensor {
    let mut x = batch_input(seqs);
    mask.apply(&mut x);
    x
}

fn expand(seqs: &[&LabeledSequence], protocol: Protocol) -> Result<Vec<LabeledSequence>> {
    match protocol {
        Protocol::ZeroTime => Ok(seqs.iter().map(|s| (*s).clone()).collect()),
        Protocol::VaryingTime => {
            let mut out = Vec::with_capacity(seqs.len() * KEEP_FRAMES.len());
            for s in seqs {
                for keep in KEEP_FRAMES {
                    out.push(truncate_and_pad(s, keep)?);
                }
            }
            Ok(out)
        }
    }
}

/// Per class, the first `round(fraction * count)` of a seeded shuffle go to
/// validation.
fn split_validation<'a>(
    seqs: &[&'a LabeledSequence],
    fraction: f64,
    seed: u64,
) -> (Vec<&'a LabeledSequence>, Vec<&'a LabeledSequence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a11);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..NUM_CLASSES {
        let mut members: Vec<&LabeledSequence> = seqs.iter().copied().filter(|s| s.label.index() == class).collect();
        members.shuffle(&mut rng);
        let n_val = (fraction * members.len() as f64).round() as usize;
        let n_val = n_val.min(members.len().saturating_sub(1));
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    (train, val)
}

fn chunk_loss_grad(
    spec: &ModelSpec,
    params: &Params,
    batch: &[&LabeledSequence],
    mask: ModalityMask,
    chunk: usize,
) -> Result<(f64, Grads)> {
    let parts: Vec<Result<(f64, Grads)>> = batch
        .par_chunks(chunk)
        .map(|c| {
            let x = masked_batch(c, mask);
            let labels: Vec<usize> = c.iter().map(|s| s.label.index()).collect();
            Ok(spec.loss_grad(params, &x, &labels)?)
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = Grads::zeros_like(params);
    for p in parts {
        let (l, g) = p?;
        loss += l;
        grads.add_all(&g)?;
    }
    Ok((loss, grads))
}

pub(crate) fn mean_loss(
    spec: &ModelSpec,
    params: &Params,
    seqs: &[&LabeledSequence],
    mask: ModalityMask,
    chunk: usize,
) -> Result<f64> {
    let parts: Vec<Result<f64>> = seqs
        .par_chunks(chunk)
        .map(|c| {
            let probs = spec.forward(params, &masked_batch(c, mask))?;
            let mut l = 0.0;
            for (r, s) in c.iter().enumerate() {
                l += cross_entropy(probs.row(r), s.label.index())?.0;
            }
            Ok(l)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / seqs.len() as f64)
}

/// Mini-batch Adam on mean cross-entropy, with early stopping on the
/// validation loss when a validation share is configured.
pub fn train(
    seqs: &[&LabeledSequence],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    protocol: Protocol,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(TrainEvalError::Empty("training"));
    }
    let (train_raw, val_raw) = if cfg.validation_fraction > 0.0 {
        split_validation(seqs, cfg.validation_fraction, cfg.seed)
    } else {
        (seqs.to_vec(), Vec::new())
    };
    let train_set = expand(&train_raw, protocol)?;
    let val_set = expand(&val_raw, protocol)?;
    let train_refs: Vec<&LabeledSequence> = train_set.iter().collect();
    let val_refs: Vec<&LabeledSequence> = val_set.iter().collect();

    let mut store = spec.init_params(cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_refs.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, Option<ParamStore>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&LabeledSequence> = idx.iter().map(|&i| train_refs[i]).collect();
            let non_finite = TrainEvalError::NonFinite { epoch, batch: b };
            let (loss, mut grads) =
                match chunk_loss_grad(spec, store.params(), &batch, cfg.modality_mask, cfg.grad_chunk) {
                    Err(TrainEvalError::Model(ModelError::Numeric(NumericError::NotNormalized { sum })))
                        if !sum.is_finite() =>
                    {
                        return Err(non_finite)
                    }
                    other => other?,
                };
            if !loss.is_finite() {
                return Err(non_finite);
            }
            epoch_loss += loss;
            grads.scale(1.0 / batch.len() as f64);
            store.zero_grads();
            store.accumulate_grads(&grads)?;
            adam.step(&mut store)?;
            if cfg.weight_decay > 0.0 {
                let keep = 1.0 - cfg.learning_rate * cfg.weight_decay;
                for (path, t) in store.params_mut().iter_mut() {
                    if path.ends_with(".w") || path.starts_with("ftf.attn.w") {
                        t.scale(keep);
                    }
                }
            }
        }
        let train_loss = epoch_loss / train_refs.len() as f64;
        let val_loss = if val_refs.is_empty() {
            None
        } else {
            Some(mean_loss(
                spec,
                store.params(),
                &val_refs,
                cfg.modality_mask,
                cfg.grad_chunk,
            )?)
        };
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match val_loss {
            None => history.best_epoch = epoch,
            Some(v) => {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, cfg.restore_best.then(|| store.clone())));
                    history.best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.early_stop_patience {
                        history.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, Some(params))) = best {
        store = params;
    }
    store.zero_grads();
    Ok(TrainedModel {
        checkpoint: Checkpoint {
            spec: spec.clone(),
            seed: cfg.seed,
            params: store,
        },
        mask: cfg.modality_mask,
        protocol,
        history,
    })
}
