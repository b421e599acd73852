use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use super::tum::{checkpoint_predictions, correctness};
use super::{
    chance_baseline, majority_baseline, train, ChanceBaseline, CheckpointAccuracy, Confusion, Metrics, ModalityMask,
    Protocol, Result, TrainConfig, TrainEvalError, TumReport, TumRule,
};
use crate::dataset::{stratified_kfold, DatasetManifest};
use crate::features::{LabeledSequence, Maneuver, NUM_CLASSES};
use crate::models::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub protocol: Protocol,
    pub k: usize,
    /// Seeds the fold split; each fold's training seed is derived from it.
    pub seed: u64,
    pub train: TrainConfig,
    /// Concurrent folds; `None` runs one per fold.
    pub jobs: Option<usize>,
    pub tum_rule: TumRule,
    /// Restricts the run to these fold indices; `None` runs all `k`.
    pub folds: Option<Vec<usize>>,
    pub chance_draws: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::ZeroTime,
            k: 10,
            seed: 1,
            train: TrainConfig::default(),
            jobs: None,
            tum_rule: TumRule::StableFromEarliest,
            folds: None,
            chance_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub metrics: Metrics,
    pub tum: Option<TumReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub protocol: Protocol,
    pub k: usize,
    pub seed: u64,
    pub mask: ModalityMask,
    pub folds: Vec<FoldReport>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    /// Metrics over the union of all evaluated test folds.
    pub pooled: Metrics,
    pub checkpoints: Option<CheckpointAccuracy>,
    pub mean_tum: Option<f64>,
    pub chance: ChanceBaseline,
    pub majority: f64,
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(fold as u64 + 1)
}

struct FoldOutcome {
    report: FoldReport,
    labels: Vec<usize>,
    confusion: Confusion,
    correct: Vec<[bool; 5]>,
}

fn run_fold(
    manifest: &DatasetManifest,
    spec: &ModelSpec,
    cfg: &BenchmarkConfig,
    mask: ModalityMask,
    train_idx: &[usize],
    test_idx: &[usize],
    fold: usize,
) -> Result<FoldOutcome> {
    let pick = |idx: &[usize]| {
        idx.iter()
            .map(|&i| &manifest.sequences[i])
            .collect::<Vec<&LabeledSequence>>()
    };
    let (train_set, test_set) = (pick(train_idx), pick(test_idx));
    let tcfg = TrainConfig {
        seed: fold_seed(cfg.seed, fold),
        modality_mask: mask,
        ..cfg.train.clone()
    };
    log::info!("fold {fold}: training {} on {} sequences", spec.name(), train_set.len());
    let model = train(&train_set, spec, &tcfg, cfg.protocol)?;
    let labels: Vec<usize> = test_set.iter().map(|s| s.label.index()).collect();
    let (preds, tum, correct) = match cfg.protocol {
        Protocol::ZeroTime => (
            super::predict_sequences(&model.checkpoint, mask, &test_set)?,
            None,
            Vec::new(),
        ),
        Protocol::VaryingTime => {
            let per = checkpoint_predictions(&model.checkpoint, mask, &test_set)?;
            let correct = correctness(&test_set, &per);
            let full = per.iter().map(|p| p[p.len() - 1]).collect();
            (full, Some(TumReport::from_correct(&correct, cfg.tum_rule)), correct)
        }
    };
    let confusion = Confusion::from_pairs(&labels, &preds);
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            n_train: train_set.len(),
            n_test: test_set.len(),
            epochs_run: model.history.epochs.len(),
            best_epoch: model.history.best_epoch,
            metrics: confusion.metrics(),
            tum,
        },
        labels,
        confusion,
        correct,
    })
}

/// Stratified k-fold train/test of one model under one protocol and mask.
pub fn run_benchmark(
    manifest: &DatasetManifest,
    spec: &ModelSpec,
    cfg: &BenchmarkConfig,
    mask: ModalityMask,
) -> Result<BenchmarkReport> {
    spec.validate()?;
    cfg.train.validate()?;
    let split = stratified_kfold(manifest, cfg.k, cfg.seed)?;
    let folds: Vec<usize> = match &cfg.folds {
        Some(f) => {
            if let Some(bad) = f.iter().find(|&&i| i >= cfg.k) {
                return Err(TrainEvalError::Config(format!(
                    "fold {bad} out of range for k = {}",
                    cfg.k
                )));
            }
            f.clone()
        }
        None => (0..cfg.k).collect(),
    };
    if folds.is_empty() {
        return Err(TrainEvalError::Config("no folds selected".into()));
    }
    let jobs = cfg.jobs.unwrap_or(folds.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| TrainEvalError::Config(e.to_string()))?;
    let outcomes: Vec<Result<FoldOutcome>> = pool.install(|| {
        folds
            .par_iter()
            .map(|&f| {
                run_fold(
                    manifest,
                    spec,
                    cfg,
                    mask,
                    &split.train_indices(f),
                    split.test_indices(f),
                    f,
                )
            })
            .collect()
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut pooled = Confusion::default();
    let mut labels = Vec::new();
    let mut correct = Vec::new();
    for o in &outcomes {
        pooled.add(&o.confusion);
        labels.extend_from_slice(&o.labels);
        correct.extend_from_slice(&o.correct);
    }
    let accs: Vec<f64> = outcomes.iter().map(|o| o.report.metrics.accuracy).collect();
    let f1s: Vec<f64> = outcomes.iter().map(|o| o.report.metrics.macro_f1).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&accs);
    let (macro_f1_mean, macro_f1_std) = mean_std(&f1s);
    let tum = (cfg.protocol == Protocol::VaryingTime).then(|| TumReport::from_correct(&correct, cfg.tum_rule));
    let all_labels: Vec<usize> = manifest.sequences.iter().map(|s| s.label.index()).collect();
    Ok(BenchmarkReport {
        model: spec.name().into(),
        protocol: cfg.protocol,
        k: cfg.k,
        seed: cfg.seed,
        mask,
        accuracy_mean,
        accuracy_std,
        macro_f1_mean,
        macro_f1_std,
        pooled: pooled.metrics(),
        checkpoints: tum.as_ref().map(|t| t.checkpoints.clone()),
        mean_tum: tum.map(|t| t.mean_tum),
        chance: chance_baseline(&labels, cfg.chance_draws, cfg.seed),
        majority: majority_baseline(&all_labels, &labels),
        folds: outcomes.into_iter().map(|o| o.report).collect(),
    })
}

impl BenchmarkReport {
    /// Per-fold lines followed by the aggregate, per-class and checkpoint tables.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} k={} seed={} mask={}\n",
            self.model,
            self.protocol.name(),
            self.k,
            self.seed,
            self.mask.name()
        );
        out += "fold  n_test  acc[%]  macroF1[%]  epochs\n";
        for f in &self.folds {
            out += &format!(
                "{:>4}  {:>6}  {:>6.1}  {:>10.1}  {:>6}\n",
                f.fold,
                f.n_test,
                100.0 * f.metrics.accuracy,
                100.0 * f.metrics.macro_f1,
                f.epochs_run
            );
        }
        out += &format!(
            "mean  acc {:.1} ± {:.1}  macroF1 {:.1} ± {:.1}  pooled acc {:.1}\n",
            100.0 * self.accuracy_mean,
            100.0 * self.accuracy_std,
            100.0 * self.macro_f1_mean,
            100.0 * self.macro_f1_std,
            100.0 * self.pooled.accuracy
        );
        out += &format!(
            "baselines  chance {:.1} ± {:.1}  majority {:.1}\n",
            100.0 * self.chance.mean_accuracy,
            100.0 * self.chance.std_accuracy,
            100.0 * self.majority
        );
        out += "class               support  acc[%]  F1[%]\n";
        for (m, c) in Maneuver::ALL.iter().zip(&self.pooled.per_class) {
            out += &format!(
                "{:<18}  {:>7}  {:>6}  {:>5.1}\n",
                m.name(),
                c.support,
                c.accuracy.map_or("-".into(), |a| format!("{:.1}", 100.0 * a)),
                100.0 * c.f1
            );
        }
        out += "confusion (rows true, columns predicted)\n";
        for row in &self.pooled.confusion.0 {
            out += &row.iter().map(|v| format!("{v:>5}")).collect::<String>();
            out += "\n";
        }
        if let (Some(cp), Some(tum)) = (&self.checkpoints, self.mean_tum) {
            out += "seconds before  acc[%]\n";
            for (s, a) in cp.seconds_before.iter().zip(&cp.accuracy) {
                out += &format!("{s:>14}  {:>6.1}\n", 100.0 * a);
            }
            out += &format!("mean TUM {tum:.2} s\n");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationColumn {
    pub label: String,
    pub model: String,
    pub mask: ModalityMask,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub overall: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub columns: Vec<AblationColumn>,
}

/// Zero-time benchmarks of each model with interior-only and full inputs.
/// Columns come out as `<model>-A`, `<model>` per model in the given order.
pub fn run_ablation(manifest: &DatasetManifest, specs: &[ModelSpec], cfg: &BenchmarkConfig) -> Result<AblationTable> {
    let cfg = BenchmarkConfig {
        protocol: Protocol::ZeroTime,
        ..cfg.clone()
    };
    let mut columns = Vec::new();
    for spec in specs {
        for (mask, suffix) in [(ModalityMask::INTERIOR, "-A"), (ModalityMask::ALL, "")] {
            let r = run_benchmark(manifest, spec, &cfg, mask)?;
            columns.push(AblationColumn {
                label: format!("{}{suffix}", spec.name().to_uppercase()),
                model: spec.name().into(),
                mask,
                per_class_accuracy: r.pooled.per_class.iter().map(|c| c.accuracy).collect(),
                overall: r.accuracy_mean,
                accuracy_std: r.accuracy_std,
            });
        }
    }
    Ok(AblationTable { columns })
}

impl AblationTable {
    pub fn column(&self, label: &str) -> Option<&AblationColumn> {
        self.columns.iter().find(|c| c.label == label)
    }

    /// One row per maneuver plus overall accuracy, in percent.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<18}", "maneuver");
        for c in &self.columns {
            out += &format!("  {:>8}", c.label);
        }
        out += "\n";
        for class in 0..NUM_CLASSES {
            out += &format!("{:<18}", Maneuver::ALL[class].name());
            for c in &self.columns {
                let cell = c.per_class_accuracy[class].map_or("-".into(), |a| format!("{:.1}", 100.0 * a));
                out += &format!("  {cell:>8}");
            }
            out += "\n";
        }
        out += &format!("{:<18}", "overall");
        for c in &self.columns {
            out += &format!("  {:>8.1}", 100.0 * c.overall);
        }
        out + "\n"
    }
}
