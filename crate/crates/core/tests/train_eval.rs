use mfusion::dataset::{generate_synthetic, DatasetManifest, SynthConfig};
use mfusion::features::{LabeledSequence, NUM_CLASSES};
use mfusion::models::{FLstmConfig, FTfConfig, ModelSpec};
use mfusion::numeric::Tensor;
use mfusion::train_eval::*;
use proptest::prelude::*;

fn synth(n: usize, seed: u64) -> DatasetManifest {
    generate_synthetic(&SynthConfig {
        n_sequences: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny_flstm() -> ModelSpec {
    ModelSpec::FLstm(FLstmConfig {
        mlp_hidden: 8,
        ..FLstmConfig::default()
    })
}

fn tiny_ftf() -> ModelSpec {
    ModelSpec::FTf(FTfConfig {
        gaze_latent: 4,
        object_latent: 2,
        lane_latent: 2,
        n_heads: 2,
        ff_hidden: 8,
        head_hidden: 8,
        ..FTfConfig::default()
    })
}

fn refs(m: &DatasetManifest) -> Vec<&LabeledSequence> {
    m.sequences.iter().collect()
}

#[test]
fn all_correct_gives_unit_scores() {
    let labels = [0, 1, 2, 3, 4, 0, 1, 2, 3, 4];
    let m = Confusion::from_pairs(&labels, &labels).metrics();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.macro_f1, 1.0);
}

#[test]
fn four_of_five_correct_per_class() {
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for c in 0..NUM_CLASSES {
        for i in 0..5 {
            labels.push(c);
            preds.push(if i == 4 { (c + 1) % NUM_CLASSES } else { c });
        }
    }
    let m = Confusion::from_pairs(&labels, &preds).metrics();
    assert_eq!(m.accuracy, 0.8);
    assert!(m.per_class.iter().all(|c| c.accuracy == Some(0.8)));
}

#[test]
fn macro_f1_matches_hand_table() {
    let fixture = Confusion([
        [8, 1, 1, 0, 0],
        [2, 6, 0, 2, 0],
        [0, 0, 5, 0, 0],
        [1, 1, 0, 7, 1],
        [0, 0, 2, 0, 3],
    ]);
    // Column sums 11, 8, 8, 9, 4; row sums 10, 10, 5, 10, 5.
    let precision = [8.0 / 11.0, 6.0 / 8.0, 5.0 / 8.0, 7.0 / 9.0, 3.0 / 4.0];
    let recall = [0.8, 0.6, 1.0, 0.7, 0.6];
    // F1 = 2TP / (support + predicted).
    let f1 = [16.0 / 21.0, 12.0 / 18.0, 10.0 / 13.0, 14.0 / 19.0, 6.0 / 9.0];
    let m = fixture.metrics();
    for c in 0..NUM_CLASSES {
        assert!((m.per_class[c].precision - precision[c]).abs() < 1e-15);
        assert!((m.per_class[c].recall - recall[c]).abs() < 1e-15);
        assert!((m.per_class[c].f1 - f1[c]).abs() < 1e-15);
    }
    assert!((m.macro_f1 - f1.iter().sum::<f64>() / 5.0).abs() < 1e-15);
    assert_eq!(m.accuracy, 29.0 / 40.0);
}

#[test]
fn class_without_items_or_predictions_scores_zero_f1() {
    let m = Confusion::from_pairs(&[0, 1, 2, 3], &[0, 1, 2, 3]).metrics();
    assert_eq!(m.per_class[4].f1, 0.0);
    assert_eq!(m.per_class[4].accuracy, None);
    assert!((m.macro_f1 - 0.8).abs() < 1e-15);
}

#[test]
fn tum_examples() {
    let r = TumRule::StableFromEarliest;
    assert_eq!(sequence_tum(&[true; 5], r), 5.0);
    assert_eq!(sequence_tum(&[false, false, false, false, true], r), 1.0);
    assert_eq!(sequence_tum(&[true, false, true, true, true], r), 3.0);
    assert_eq!(sequence_tum(&[false; 5], r), 0.0);
}

#[test]
fn chance_baseline_is_one_in_five() {
    let labels: Vec<usize> = (0..500).map(|i| i % NUM_CLASSES).collect();
    let c = chance_baseline(&labels, 1000, 3);
    assert_eq!(c.draws, 1000);
    assert!((c.mean_accuracy - 0.2).abs() < 0.03, "{}", c.mean_accuracy);
}

#[test]
fn majority_baseline_on_stated_counts() {
    let mut labels = Vec::new();
    for (c, n) in [234, 134, 68, 133, 65].into_iter().enumerate() {
        labels.extend(std::iter::repeat_n(c, n));
    }
    assert_eq!(labels.len(), 634);
    assert_eq!(majority_baseline(&labels, &labels), 234.0 / 634.0);
}

#[test]
fn mask_zeroes_exterior_columns() {
    let mut x = Tensor::filled(&[2, 3, 32], 1.0);
    ModalityMask::INTERIOR.apply(&mut x);
    for r in 0..x.rows() {
        assert!(x.row(r)[..4].iter().all(|&v| v == 1.0));
        assert!(x.row(r)[4..].iter().all(|&v| v == 0.0));
    }
    let mut y = Tensor::filled(&[1, 1, 32], 2.0);
    ModalityMask::ALL.apply(&mut y);
    assert!(y.data().iter().all(|&v| v == 2.0));
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let m = synth(20, 4);
    let spec = tiny_flstm();
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 0.0,
        batch_size: 8,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let out = train(&refs(&m), &spec, &cfg, Protocol::ZeroTime).unwrap();
    assert_eq!(out.checkpoint.params, spec.init_params(cfg.seed).unwrap());
    let l0 = out.history.epochs[0].train_loss;
    assert!(out.history.epochs.iter().all(|e| (e.train_loss - l0).abs() < 1e-12));
}

#[test]
fn training_is_deterministic() {
    let m = synth(24, 5);
    for spec in [tiny_flstm(), tiny_ftf()] {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            validation_fraction: 0.2,
            ..TrainConfig::default()
        };
        let a = train(&refs(&m), &spec, &cfg, Protocol::VaryingTime).unwrap();
        let b = train(&refs(&m), &spec, &cfg, Protocol::VaryingTime).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint.params.to_bytes(), b.checkpoint.params.to_bytes());
        assert!(a.history.epochs.iter().all(|e| e.val_loss.is_some()));
    }
}

#[test]
fn training_lowers_loss() {
    let m = synth(20, 6);
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 10,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let out = train(&refs(&m), &tiny_flstm(), &cfg, Protocol::ZeroTime).unwrap();
    let h = &out.history.epochs;
    assert!(h.last().unwrap().train_loss < 0.5 * h[0].train_loss, "{h:?}");
}

#[test]
fn early_stopping_respects_patience() {
    let m = synth(30, 7);
    let cfg = TrainConfig {
        epochs: 400,
        early_stop_patience: 3,
        validation_fraction: 0.3,
        restore_best: true,
        ..TrainConfig::default()
    };
    let out = train(&refs(&m), &tiny_flstm(), &cfg, Protocol::ZeroTime).unwrap();
    assert!(out.history.stopped_early);
    assert_eq!(out.history.epochs.len(), out.history.best_epoch + 3);
    let best = out
        .history
        .epochs
        .iter()
        .map(|e| e.val_loss.unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.history.epochs[out.history.best_epoch - 1].val_loss, Some(best));
}

#[test]
fn training_errors() {
    let spec = tiny_flstm();
    let cfg = TrainConfig::default();
    assert!(matches!(
        train(&[], &spec, &cfg, Protocol::ZeroTime),
        Err(TrainEvalError::Empty(_))
    ));
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    let m = synth(10, 1);
    assert!(matches!(
        train(&refs(&m), &spec, &bad, Protocol::ZeroTime),
        Err(TrainEvalError::Config(_))
    ));

    let mut poisoned = m.sequences[0].clone();
    poisoned.frames[3].gaze[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let r = train(&[&poisoned], &spec, &cfg, Protocol::ZeroTime);
    assert!(
        matches!(r, Err(TrainEvalError::NonFinite { epoch: 1, batch: 0 })),
        "{r:?}"
    );
    let ckpt = train(&refs(&m), &spec, &cfg, Protocol::ZeroTime).unwrap().checkpoint;
    assert!(matches!(
        evaluate(&ckpt, ModalityMask::ALL, &[]),
        Err(TrainEvalError::Empty(_))
    ));
}

fn small_benchmark(jobs: usize, protocol: Protocol) -> BenchmarkReport {
    let m = synth(30, 8);
    let cfg = BenchmarkConfig {
        protocol,
        k: 3,
        seed: 2,
        jobs: Some(jobs),
        chance_draws: 50,
        train: TrainConfig {
            epochs: 2,
            batch_size: 8,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        },
        ..BenchmarkConfig::default()
    };
    run_benchmark(&m, &tiny_flstm(), &cfg, ModalityMask::ALL).unwrap()
}

#[test]
fn benchmark_independent_of_scheduling() {
    let a = small_benchmark(1, Protocol::ZeroTime);
    let b = small_benchmark(3, Protocol::ZeroTime);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn benchmark_report_invariants() {
    let r = small_benchmark(2, Protocol::VaryingTime);
    assert_eq!(r.folds.len(), 3);
    let c = &r.pooled.confusion;
    assert_eq!(c.total(), 30);
    assert_eq!(r.pooled.accuracy, c.trace() as f64 / c.total() as f64);
    for f in &r.folds {
        let fc = &f.metrics.confusion;
        assert_eq!(fc.total(), f.n_test);
        assert_eq!(f.n_train + f.n_test, 30);
        // The full window is the 1-second checkpoint.
        let tum = f.tum.as_ref().unwrap();
        assert_eq!(tum.checkpoints.accuracy[4], f.metrics.accuracy);
    }
    let cp = r.checkpoints.as_ref().unwrap();
    assert_eq!(cp.seconds_before, [5.0, 4.0, 3.0, 2.0, 1.0]);
    assert_eq!(cp.accuracy[4], r.pooled.accuracy);
    assert!(r.mean_tum.unwrap() >= 0.0 && r.mean_tum.unwrap() <= 5.0);
    assert!(cp.to_csv().starts_with("seconds_before,keep_frames,accuracy\n5,30,"));
    let svg = checkpoint_svg(cp, "profile <test>");
    assert!(svg.starts_with("<svg") && svg.contains("&lt;test&gt;") && svg.trim_end().ends_with("</svg>"));
    let text = r.to_text();
    assert!(text.contains("mean TUM"));
}

#[test]
fn zero_time_at_full_window_matches_one_second_checkpoint() {
    let m = synth(30, 9);
    let cfg = TrainConfig {
        epochs: 2,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let (train_set, test_set) = m.sequences.split_at(20);
    let train_refs: Vec<_> = train_set.iter().collect();
    let test_refs: Vec<_> = test_set.iter().collect();
    let model = train(&train_refs, &tiny_ftf(), &cfg, Protocol::VaryingTime).unwrap();
    let zero = evaluate(&model.checkpoint, model.mask, &test_refs).unwrap();
    let tum = compute_tum(&model.checkpoint, model.mask, &test_refs, TumRule::StableFromEarliest).unwrap();
    assert_eq!(zero.accuracy, tum.checkpoints.accuracy[4]);
}

#[test]
fn benchmark_rejects_bad_folds() {
    let m = synth(30, 8);
    let cfg = BenchmarkConfig {
        k: 3,
        folds: Some(vec![3]),
        ..BenchmarkConfig::default()
    };
    assert!(run_benchmark(&m, &tiny_flstm(), &cfg, ModalityMask::ALL).is_err());
    let cfg = BenchmarkConfig {
        k: 40,
        ..BenchmarkConfig::default()
    };
    assert!(run_benchmark(&m, &tiny_flstm(), &cfg, ModalityMask::ALL).is_err());
}

#[test]
fn ablation_table_shape() {
    let m = synth(30, 10);
    let cfg = BenchmarkConfig {
        k: 3,
        chance_draws: 10,
        train: TrainConfig {
            epochs: 1,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        },
        ..BenchmarkConfig::default()
    };
    let t = run_ablation(&m, &[tiny_flstm(), tiny_ftf()], &cfg).unwrap();
    let labels: Vec<&str> = t.columns.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels, ["F-LSTM-A", "F-LSTM", "F-TF-A", "F-TF"]);
    assert_eq!(t.column("F-TF-A").unwrap().mask, ModalityMask::INTERIOR);
    let text = t.to_text();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().last().unwrap().starts_with("overall"));
}

fn arb_pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec((0..NUM_CLASSES, 0..NUM_CLASSES), 1..80).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total((labels, preds) in arb_pairs()) {
        let c = Confusion::from_pairs(&labels, &preds);
        let m = c.metrics();
        let correct = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
        prop_assert_eq!(m.accuracy, correct as f64 / labels.len() as f64);
        prop_assert_eq!(m.accuracy, c.trace() as f64 / c.total() as f64);
        for k in 0..NUM_CLASSES {
            prop_assert_eq!(c.support(k), labels.iter().filter(|&&y| y == k).count());
        }
        prop_assert!(m.macro_f1 <= 1.0 && m.macro_f1 >= 0.0);
    }

    #[test]
    fn macro_f1_is_one_iff_diagonal((mut labels, mut preds) in arb_pairs()) {
        for k in 0..NUM_CLASSES {
            labels.push(k);
            preds.push(k);
        }
        let c = Confusion::from_pairs(&labels, &preds);
        let diagonal = labels == preds;
        prop_assert_eq!(c.metrics().macro_f1 == 1.0, diagonal);
    }

    #[test]
    fn tum_is_monotone(bits in prop::array::uniform5(any::<bool>()), flip in 0usize..5) {
        let mut better = bits;
        better[flip] = true;
        for rule in [TumRule::StableFromEarliest, TumRule::FirstCorrect] {
            prop_assert!(sequence_tum(&better, rule) >= sequence_tum(&bits, rule));
        }
    }
}
