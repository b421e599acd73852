use std::io::Write;
use std::path::{Path, PathBuf};

use mfusion::dataset::{
    generate_synthetic, ingest_real, sidecar_path, DatasetManifest, LayoutDescriptor, Source, SynthConfig,
};
use mfusion::features::{LabeledSequence, Maneuver, NUM_CLASSES};
use mfusion::geometry::{extract_gaze_sequence, read_landmark_file, GazeConfig, LandmarkFile, ModelFace};
use mfusion::models::{Checkpoint, FLstmConfig, FTfConfig, ModelSpec};
use mfusion::train_eval::{
    checkpoint_svg, compute_tum, evaluate, run_ablation, run_benchmark, train, BenchmarkConfig, History, Metrics,
    ModalityMask, Protocol, TrainConfig, TumReport, TumRule,
};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::config::FileConfig;
use crate::{
    AblateArgs, BenchmarkArgs, ClassDistArg, Cli, CliError, Command, EncodeArgs, EvalArgs, ExtractGazeArgs, MaskArg,
    ModelArg, ProtocolArg, SynthArgs, TrainArgs, TrainFlags, TumRuleArg,
};

type Result<T> = std::result::Result<T, CliError>;

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let json = cli.json || file.pick(None, "json", false)?;
    match cli.command {
        Command::ExtractGaze(a) => extract_gaze(a, &file, json),
        Command::Synth(a) => synth(a, &file, json),
        Command::Encode(a) => encode(a, &file, json),
        Command::Train(a) => train_cmd(a, &file, json),
        Command::Eval(a) => eval_cmd(a, &file, json),
        Command::Benchmark(a) => benchmark(a, &file, json),
        Command::Ablate(a) => ablate(a, &file, json),
    }
}

/// Writes every file to a temporary sibling first and renames them only
/// once all have been written.
fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        tmp.write_all(bytes)
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path)
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn emit<T: Serialize>(json: bool, value: &T, text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let res = if json {
        writeln!(out, "{}", serde_json::to_string_pretty(value).map_err(runtime)?)
    } else {
        write!(out, "{text}")
    };
    res.map_err(runtime)
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    s.into_bytes()
}

fn required(file: &FileConfig, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    file.pick_opt(flag, key)?
        .ok_or_else(|| CliError::Invalid(format!("--{key} is required")))
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn model_spec(model: ModelArg, file: &FileConfig) -> Result<ModelSpec> {
    let spec = match model {
        ModelArg::Flstm => ModelSpec::FLstm(file.section("flstm", FLstmConfig::default())?),
        ModelArg::Ftf => ModelSpec::FTf(file.section("ftf", FTfConfig::default())?),
    };
    spec.validate().map_err(invalid)?;
    Ok(spec)
}

fn protocol(p: ProtocolArg) -> Protocol {
    match p {
        ProtocolArg::Zero => Protocol::ZeroTime,
        ProtocolArg::Varying => Protocol::VaryingTime,
    }
}

fn mask(m: MaskArg) -> ModalityMask {
    match m {
        MaskArg::All => ModalityMask::ALL,
        MaskArg::Interior => ModalityMask::INTERIOR,
    }
}

fn tum_rule(r: TumRuleArg) -> TumRule {
    match r {
        TumRuleArg::Stable => TumRule::StableFromEarliest,
        TumRuleArg::FirstCorrect => TumRule::FirstCorrect,
    }
}

fn train_config(flags: &TrainFlags, seed: u64, m: ModalityMask, file: &FileConfig) -> Result<TrainConfig> {
    let base = file.section("train", TrainConfig::default())?;
    let cfg = TrainConfig {
        epochs: file.pick(flags.epochs, "epochs", base.epochs)?,
        batch_size: file.pick(flags.batch_size, "batch-size", base.batch_size)?,
        learning_rate: file.pick(flags.lr, "lr", base.learning_rate)?,
        early_stop_patience: file.pick(flags.patience, "patience", base.early_stop_patience)?,
        validation_fraction: file.pick(flags.val_fraction, "val-fraction", base.validation_fraction)?,
        seed,
        modality_mask: m,
        ..base
    };
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn load_data(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path).map_err(invalid)?;
    if m.is_empty() {
        return Err(CliError::Invalid(format!("{}: no sequences", path.display())));
    }
    Ok(m)
}

#[derive(Serialize)]
struct GazeSummary {
    frames: usize,
    failed: usize,
    skipped_lines: Vec<usize>,
    out: PathBuf,
}

fn extract_gaze(a: ExtractGazeArgs, file: &FileConfig, json: bool) -> Result<()> {
    let path = required(file, a.landmarks, "landmarks")?;
    let out = required(file, a.out, "out")?;
    let strict = a.strict || file.pick(None, "strict", false)?;
    let model = match file.pick_opt(a.face_model, "face-model")? {
        Some(p) => ModelFace::load(&p).map_err(invalid)?,
        None => ModelFace::generic(),
    };
    let defaults = GazeConfig::default();
    let gaze_cfg = GazeConfig {
        plane_z: file.pick(a.plane_z, "plane-z", defaults.plane_z)?,
        plane_scale: file.pick(a.plane_scale, "plane-scale", defaults.plane_scale)?,
    };
    if !(gaze_cfg.plane_scale > 0.0 && gaze_cfg.plane_scale.is_finite() && gaze_cfg.plane_z.is_finite()) {
        return Err(invalid("--plane-scale must be positive and --plane-z finite"));
    }

    let text = std::fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(CliError::Invalid(format!("{}: no frames", path.display())));
    }
    let mut parsed = read_landmark_file(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let k = &mut parsed.header.intrinsics;
    k.fx = file.pick(a.fx, "fx", k.fx)?;
    k.fy = file.pick(a.fy, "fy", k.fy)?;
    k.cx = file.pick(a.cx, "cx", k.cx)?;
    k.cy = file.pick(a.cy, "cy", k.cy)?;
    k.validate().map_err(invalid)?;

    let mut frames = Vec::with_capacity(parsed.frames.len());
    let mut skipped = Vec::new();
    for f in parsed.frames {
        match f {
            Ok(frame) => frames.push(Ok(frame)),
            Err(e) if strict => return Err(invalid(format!("{}: {e}", path.display()))),
            Err(e) => {
                log::warn!("{}: skipping {e}", path.display());
                skipped.push(e.line);
            }
        }
    }
    if frames.is_empty() {
        return Err(CliError::Invalid(format!("{}: no frames", path.display())));
    }
    let lf = LandmarkFile {
        header: parsed.header,
        frames,
    };
    let records = extract_gaze_sequence(&lf, &model, &gaze_cfg);
    let mut body = String::new();
    for r in &records {
        body += &serde_json::to_string(r).map_err(runtime)?;
        body.push('\n');
    }
    write_all(&[(out.clone(), body.into_bytes())])?;

    let summary = GazeSummary {
        frames: records.len(),
        failed: records.iter().filter(|r| !r.gaze.valid).count(),
        skipped_lines: skipped,
        out,
    };
    if !summary.skipped_lines.is_empty() {
        eprintln!(
            "warning: skipped {} malformed line(s): {:?}",
            summary.skipped_lines.len(),
            summary.skipped_lines
        );
    }
    let text = format!(
        "{} frames, {} failed, {} skipped lines -> {}\n",
        summary.frames,
        summary.failed,
        summary.skipped_lines.len(),
        summary.out.display()
    );
    emit(json, &summary, &text)
}

#[derive(Serialize)]
struct DatasetSummary<'a> {
    out: &'a Path,
    sequences: usize,
    class_counts: [usize; NUM_CLASSES],
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<&'a [String]>,
}

fn counts_text(counts: &[usize; NUM_CLASSES]) -> String {
    (0..NUM_CLASSES)
        .map(|i| format!("{} {}", Maneuver::from_index(i).expect("class index").name(), counts[i]))
        .collect::<Vec<_>>()
        .join(", ")
}

fn write_dataset(m: &DatasetManifest, out: &Path, json: bool) -> Result<()> {
    write_all(&[
        (out.to_path_buf(), m.to_jsonl()),
        (sidecar_path(out), m.sidecar_json().into_bytes()),
    ])?;
    let skipped = match &m.source {
        Source::RealAdapter { skipped, .. } => Some(skipped.as_slice()),
        _ => None,
    };
    let summary = DatasetSummary {
        out,
        sequences: m.len(),
        class_counts: m.class_counts,
        skipped,
    };
    let mut text = format!(
        "{} sequences ({}) -> {}\n",
        m.len(),
        counts_text(&m.class_counts),
        out.display()
    );
    if let Some(s) = skipped.filter(|s| !s.is_empty()) {
        text += &format!("skipped {}: {}\n", s.len(), s.join(", "));
    }
    emit(json, &summary, &text)
}

fn synth(a: SynthArgs, file: &FileConfig, json: bool) -> Result<()> {
    let out = required(file, a.out, "out")?;
    let base = file.section("synth", SynthConfig::default())?;
    let dist = file.pick_enum_opt(a.class_dist, "class-dist")?;
    let cfg = SynthConfig {
        n_sequences: file.pick(a.n, "n", base.n_sequences)?,
        seed: file.pick(a.seed, "seed", base.seed)?,
        class_distribution: match dist {
            Some(ClassDistArg::Uniform) => [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
            Some(ClassDistArg::Paper) => SynthConfig::paper_distribution(),
            None => base.class_distribution,
        },
        gaze_signal_strength: file.pick(a.gaze_signal, "gaze-signal", base.gaze_signal_strength)?,
        exterior_signal_strength: file.pick(a.exterior_signal, "exterior-signal", base.exterior_signal_strength)?,
        noise_sigma: file.pick(a.noise, "noise", base.noise_sigma)?,
    };
    cfg.validate().map_err(invalid)?;
    let m = generate_synthetic(&cfg).map_err(runtime)?;
    write_dataset(&m, &out, json)
}

fn encode(a: EncodeArgs, file: &FileConfig, json: bool) -> Result<()> {
    let root = required(file, a.root, "root")?;
    let out = required(file, a.out, "out")?;
    let layout = match file.pick_opt(a.layout, "layout")? {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<LayoutDescriptor>(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => LayoutDescriptor::default(),
    };
    if !root.is_dir() {
        return Err(CliError::Invalid(format!("{}: not a directory", root.display())));
    }
    let m = ingest_real(&root, &layout).map_err(invalid)?;
    write_dataset(&m, &out, json)
}

/// Written next to a checkpoint so `eval` can default to the training mask
/// and protocol.
#[derive(Serialize, Deserialize)]
struct TrainRecord {
    model: String,
    mask: ModalityMask,
    protocol: Protocol,
    train: TrainConfig,
    history: History,
}

fn history_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.as_os_str().to_owned();
    name.push(".history.json");
    PathBuf::from(name)
}

fn train_cmd(a: TrainArgs, file: &FileConfig, json: bool) -> Result<()> {
    let data = required(file, a.data, "data")?;
    let out = required(file, a.out, "out")?;
    let spec = model_spec(file.pick_enum(a.model, "model", ModelArg::Ftf)?, file)?;
    let proto = protocol(file.pick_enum(a.protocol, "protocol", ProtocolArg::Zero)?);
    let m = mask(file.pick_enum(a.mask, "mask", MaskArg::All)?);
    let seed = file.pick(a.seed, "seed", 1)?;
    let cfg = train_config(&a.train, seed, m, file)?;
    let manifest = load_data(&data)?;

    let seqs: Vec<&LabeledSequence> = manifest.sequences.iter().collect();
    let trained = train(&seqs, &spec, &cfg, proto).map_err(runtime)?;
    let record = TrainRecord {
        model: spec.name().into(),
        mask: m,
        protocol: proto,
        train: cfg,
        history: trained.history,
    };
    let ckpt = &trained.checkpoint;
    write_all(&[
        (out.clone(), ckpt.params.to_bytes()),
        (Checkpoint::sidecar_path(&out), ckpt.meta_json().into_bytes()),
        (history_path(&out), pretty(&record)),
    ])?;

    let last = record.history.epochs.last();
    let text = format!(
        "{} trained on {} sequences ({} mask, {}): {} epochs, best epoch {}, final train loss {:.4}{} -> {}\n",
        record.model,
        manifest.len(),
        m.name(),
        proto.name(),
        record.history.epochs.len(),
        record.history.best_epoch,
        last.map(|e| e.train_loss).unwrap_or(f64::NAN),
        match last.and_then(|e| e.val_loss) {
            Some(v) => format!(", val loss {v:.4}"),
            None => String::new(),
        },
        out.display()
    );
    emit(json, &record, &text)
}

#[derive(Serialize)]
struct EvalReport {
    model: String,
    mask: ModalityMask,
    protocol: Protocol,
    metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    tum: Option<TumReport>,
}

fn metrics_text(m: &Metrics) -> String {
    let mut s = format!("n {}  accuracy {:.4}  macro F1 {:.4}\n", m.n, m.accuracy, m.macro_f1);
    s += &format!(
        "{:<18}{:>10}{:>10}{:>10}{:>9}\n",
        "class", "precision", "recall", "f1", "support"
    );
    for (i, c) in m.per_class.iter().enumerate() {
        s += &format!(
            "{:<18}{:>10.4}{:>10.4}{:>10.4}{:>9}\n",
            Maneuver::from_index(i).expect("class index").name(),
            c.precision,
            c.recall,
            c.f1,
            c.support
        );
    }
    s += "confusion (rows true, columns predicted)\n";
    for row in &m.confusion.0 {
        s += &row.iter().map(|v| format!("{v:>6}")).collect::<String>();
        s.push('\n');
    }
    s
}

fn tum_text(t: &TumReport) -> String {
    let mut s = String::from("seconds before  accuracy\n");
    for (sec, acc) in t.checkpoints.seconds_before.iter().zip(&t.checkpoints.accuracy) {
        s += &format!("{sec:>14}  {acc:.4}\n");
    }
    s + &format!("mean TUM {:.3} s\n", t.mean_tum)
}

fn eval_cmd(a: EvalArgs, file: &FileConfig, json: bool) -> Result<()> {
    let data = required(file, a.data, "data")?;
    let ckpt_path = required(file, a.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(&ckpt_path).map_err(invalid)?;
    let record: Option<TrainRecord> = match std::fs::read_to_string(history_path(&ckpt_path)) {
        Ok(t) => Some(
            serde_json::from_str(&t).map_err(|e| invalid(format!("{}: {e}", history_path(&ckpt_path).display())))?,
        ),
        Err(_) => None,
    };
    let m = match (file.pick_enum_opt(a.mask, "mask")?, &record) {
        (Some(arg), _) => mask(arg),
        (None, Some(r)) => r.mask,
        (None, None) => ModalityMask::ALL,
    };
    let proto = match (file.pick_enum_opt(a.protocol, "protocol")?, &record) {
        (Some(arg), _) => protocol(arg),
        (None, Some(r)) => r.protocol,
        (None, None) => Protocol::ZeroTime,
    };
    let rule = tum_rule(file.pick_enum(a.tum_rule, "tum-rule", TumRuleArg::Stable)?);
    let out = file.pick_opt(a.out, "out")?;
    let manifest = load_data(&data)?;
    if ckpt.spec.seq_len() != mfusion::features::SEQ_LEN {
        return Err(CliError::Invalid(format!(
            "checkpoint expects {} frames, data has {}",
            ckpt.spec.seq_len(),
            mfusion::features::SEQ_LEN
        )));
    }

    let seqs: Vec<&LabeledSequence> = manifest.sequences.iter().collect();
    let metrics = evaluate(&ckpt, m, &seqs).map_err(runtime)?;
    let tum = match proto {
        Protocol::VaryingTime => Some(compute_tum(&ckpt, m, &seqs, rule).map_err(runtime)?),
        Protocol::ZeroTime => None,
    };
    let report = EvalReport {
        model: ckpt.spec.name().into(),
        mask: m,
        protocol: proto,
        metrics,
        tum,
    };
    if let Some(out) = &out {
        write_all(&[(out.clone(), pretty(&report))])?;
    }
    let mut text = format!("{} ({} mask, {})\n", report.model, m.name(), proto.name());
    text += &metrics_text(&report.metrics);
    if let Some(t) = &report.tum {
        text += &tum_text(t);
    }
    emit(json, &report, &text)
}

fn benchmark_config(
    file: &FileConfig,
    k: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    folds: Option<Vec<usize>>,
    flags: &TrainFlags,
    m: ModalityMask,
) -> Result<BenchmarkConfig> {
    let k = file.pick(k, "k", 10)?;
    let seed = file.pick(seed, "seed", 1)?;
    let jobs = file.pick_opt(jobs, "jobs")?;
    if jobs == Some(0) {
        return Err(invalid("--jobs must be at least 1"));
    }
    let folds = file.pick_opt(folds, "folds")?;
    if let Some(bad) = folds.iter().flatten().find(|&&f| f >= k) {
        return Err(CliError::Invalid(format!("fold {bad} out of range for k = {k}")));
    }
    if k < 2 {
        return Err(invalid("--k must be at least 2"));
    }
    Ok(BenchmarkConfig {
        k,
        seed,
        jobs,
        folds,
        train: train_config(flags, seed, m, file)?,
        ..BenchmarkConfig::default()
    })
}

fn benchmark(a: BenchmarkArgs, file: &FileConfig, json: bool) -> Result<()> {
    let data = required(file, a.data, "data")?;
    let spec = model_spec(file.pick_enum(a.model, "model", ModelArg::Ftf)?, file)?;
    let m = mask(file.pick_enum(a.mask, "mask", MaskArg::All)?);
    let mut cfg = benchmark_config(file, a.k, a.seed, a.jobs, a.folds, &a.train, m)?;
    cfg.protocol = protocol(file.pick_enum(a.protocol, "protocol", ProtocolArg::Zero)?);
    cfg.tum_rule = tum_rule(file.pick_enum(a.tum_rule, "tum-rule", TumRuleArg::Stable)?);
    let out = file.pick_opt(a.out, "out")?;
    let manifest = load_data(&data)?;

    let report = run_benchmark(&manifest, &spec, &cfg, m).map_err(|e| match e {
        mfusion::train_eval::TrainEvalError::Dataset(d) => invalid(d),
        other => runtime(other),
    })?;
    let text = report.to_text();
    if let Some(dir) = out {
        out_dir(&dir)?;
        let mut files = vec![
            (dir.join("report.json"), pretty(&report)),
            (dir.join("report.txt"), text.clone().into_bytes()),
        ];
        if let Some(cp) = &report.checkpoints {
            files.push((dir.join("checkpoints.csv"), cp.to_csv().into_bytes()));
            let title = format!("{} accuracy before the maneuver", report.model);
            files.push((dir.join("checkpoints.svg"), checkpoint_svg(cp, &title).into_bytes()));
        }
        write_all(&files)?;
    }
    emit(json, &report, &text)
}

fn ablate(a: AblateArgs, file: &FileConfig, json: bool) -> Result<()> {
    let data = required(file, a.data, "data")?;
    let models: Vec<ModelArg> = match a.models {
        Some(m) => m,
        None => match file.raw("models") {
            Some(serde_json::Value::Array(items)) => items
                .iter()
                .map(
                    |v| match v.as_str().map(|s| <ModelArg as clap::ValueEnum>::from_str(s, true)) {
                        Some(Ok(m)) => Ok(m),
                        _ => Err(CliError::Invalid(format!("config key models: bad entry {v}"))),
                    },
                )
                .collect::<Result<_>>()?,
            Some(_) => return Err(invalid("config key models: expected an array")),
            None => vec![ModelArg::Flstm, ModelArg::Ftf],
        },
    };
    if models.is_empty() {
        return Err(invalid("--models needs at least one model"));
    }
    let specs = models
        .iter()
        .map(|&m| model_spec(m, file))
        .collect::<Result<Vec<_>>>()?;
    let cfg = benchmark_config(file, a.k, a.seed, a.jobs, a.folds, &a.train, ModalityMask::ALL)?;
    let out = file.pick_opt(a.out, "out")?;
    let manifest = load_data(&data)?;

    let table = run_ablation(&manifest, &specs, &cfg).map_err(|e| match e {
        mfusion::train_eval::TrainEvalError::Dataset(d) => invalid(d),
        other => runtime(other),
    })?;
    let text = table.to_text();
    if let Some(dir) = out {
        out_dir(&dir)?;
        write_all(&[
            (dir.join("ablation.json"), pretty(&table)),
            (dir.join("ablation.txt"), text.clone().into_bytes()),
        ])?;
    }
    emit(json, &table, &text)
}
