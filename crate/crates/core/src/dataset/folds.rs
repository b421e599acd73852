use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetManifest, Result};
use crate::features::NUM_CLASSES;

/// `k` disjoint test folds of manifest indices; each fold trains on the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn test_ids<'a>(&self, manifest: &'a DatasetManifest, fold: usize) -> Vec<&'a str> {
        self.folds[fold]
            .iter()
            .map(|&i| manifest.sequences[i].id.as_str())
            .collect()
    }
}

/// Shuffles each class with `seed`, lays the classes end to end and deals
/// them round-robin into `k` folds.
pub fn stratified_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldSplit> {
    let bad = |reason: String| Err(DatasetError::BadK { k, reason });
    if k < 2 {
        return bad("need at least 2 folds".into());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, s) in manifest.sequences.iter().enumerate() {
        by_class[s.label.index()].push(i);
    }
    let smallest = by_class.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
    if k > smallest {
        return bad(format!("smallest non-empty class has {smallest} sequences"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit { k, folds })
}
