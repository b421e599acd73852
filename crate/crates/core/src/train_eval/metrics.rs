use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::masked_batch;
use super::{ModalityMask, Result, TrainEvalError};
use crate::features::{LabeledSequence, NUM_CLASSES};
use crate::models::{predict, Checkpoint};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Confusion(pub [[usize; NUM_CLASSES]; NUM_CLASSES]);

impl Confusion {
    pub fn from_pairs(labels: &[usize], preds: &[usize]) -> Self {
        assert_eq!(labels.len(), preds.len());
        let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&y, &p) in labels.iter().zip(preds) {
            m[y][p] += 1;
        }
        Self(m)
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.0[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.0[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        self.0.iter().map(|row| row[class]).sum()
    }

    pub fn add(&mut self, other: &Confusion) {
        for (a, b) in self.0.iter_mut().flatten().zip(other.0.iter().flatten()) {
            *a += b;
        }
    }

    pub fn metrics(&self) -> Metrics {
        let per_class: Vec<ClassMetrics> = (0..NUM_CLASSES)
            .map(|c| {
                let tp = self.0[c][c] as f64;
                let support = self.support(c);
                let predicted = self.predicted(c);
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if support > 0 { tp / support as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                    accuracy: (support > 0).then_some(recall),
                }
            })
            .collect();
        let total = self.total();
        Metrics {
            n: total,
            accuracy: if total > 0 {
                self.trace() as f64 / total as f64
            } else {
                0.0
            },
            macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / NUM_CLASSES as f64,
            per_class,
            confusion: self.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Recall, or `None` when the class has no test items.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Unweighted mean of the five per-class F1 scores.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Confusion,
}

/// Predicted class for each sequence, computed in parallel batches.
pub fn predict_sequences(ckpt: &Checkpoint, mask: ModalityMask, seqs: &[&LabeledSequence]) -> Result<Vec<usize>> {
    let parts: Vec<Result<Vec<usize>>> = seqs
        .par_chunks(16)
        .map(|c| {
            let probs = ckpt.spec.forward(ckpt.params.params(), &masked_batch(c, mask))?;
            Ok((0..probs.rows()).map(|r| predict(probs.row(r))).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(seqs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate(ckpt: &Checkpoint, mask: ModalityMask, seqs: &[&LabeledSequence]) -> Result<Metrics> {
    if seqs.is_empty() {
        return Err(TrainEvalError::Empty("test"));
    }
    let preds = predict_sequences(ckpt, mask, seqs)?;
    let labels: Vec<usize> = seqs.iter().map(|s| s.label.index()).collect();
    Ok(Confusion::from_pairs(&labels, &preds).metrics())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceBaseline {
    pub draws: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Accuracy of a uniform random guesser, averaged over `draws` repetitions.
pub fn chance_baseline(labels: &[usize], draws: usize, seed: u64) -> ChanceBaseline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accs: Vec<f64> = (0..draws)
        .map(|_| {
            let hits = labels
                .iter()
                .filter(|&&y| rng.random_range(0..NUM_CLASSES) == y)
                .count();
            hits as f64 / labels.len().max(1) as f64
        })
        .collect();
    let (mean, std) = mean_std(&accs);
    ChanceBaseline {
        draws,
        mean_accuracy: mean,
        std_accuracy: std,
    }
}

/// Accuracy on `test` of always predicting the most frequent class of
/// `train`, ties going to the lowest index.
pub fn majority_baseline(train: &[usize], test: &[usize]) -> f64 {
    let mut counts = [0usize; NUM_CLASSES];
    for &y in train {
        counts[y] += 1;
    }
    let majority = (0..NUM_CLASSES).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
    test.iter().filter(|&&y| y == majority).count() as f64 / test.len().max(1) as f64
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (mean, var.sqrt())
}
