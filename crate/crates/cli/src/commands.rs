//! One function per subcommand. Each writes its artifacts under the output
//! directory and records them in `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use propnet_core::eval::{write_evaluation, write_file, MetricsReport, RocPoint};
use propnet_core::ingest::TweetRecord;
use propnet_core::pipeline::{self, IngestReport, Prepared, TrainedModel};
use propnet_core::fusion::TrainState;
use propnet_core::synthgen;
use propnet_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const RECORDS: &str = "records.jsonl";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const SPLIT_MANIFEST: &str = "split_manifest.json";
pub const MODEL_STEM: &str = "model";
pub const TRAIN_STATE: &str = "train_state.json";
pub const HISTORY: &str = "history.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const RANKING: &str = "user_ranking.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    Lr,
    Textcnn,
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
pub fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn io_err(path: &Path, e: std::io::Error) -> anyhow::Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn write(path: &Path, contents: &str) -> anyhow::Result<PathBuf> {
    write_file(path, contents)?;
    Ok(path.to_path_buf())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    commands: BTreeMap<String, CommandEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CommandEntry {
    seed: u64,
    config: serde_json::Value,
    /// Output-relative path → size in bytes.
    artifacts: BTreeMap<String, u64>,
}

/// Adds (or replaces) this command's entry in `manifest.json`.
fn record(cfg: &RunConfig, command: &str, artifacts: &[PathBuf]) -> anyhow::Result<()> {
    let path = cfg.output_dir.join(MANIFEST);
    let mut manifest: Manifest = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
            log::warn!("replacing unreadable manifest {}: {e}", path.display());
            Manifest::default()
        }),
        Err(_) => Manifest::default(),
    };
    let mut sizes = BTreeMap::new();
    for a in artifacts {
        let len = fs::metadata(a).map_err(|e| io_err(a, e))?.len();
        let rel = a.strip_prefix(&cfg.output_dir).unwrap_or(a);
        sizes.insert(rel.to_string_lossy().replace('\\', "/"), len);
    }
    manifest.commands.insert(
        command.to_string(),
        CommandEntry {
            seed: cfg.seed,
            config: serde_json::to_value(cfg).expect("config serializes"),
            artifacts: sizes,
        },
    );
    write(&path, &to_json(&manifest))?;
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> anyhow::Result<()> {
    let inputs = cfg.inputs()?;
    let settings = cfg.settings();
    let (records, report) = pipeline::ingest(&inputs.datasets, &inputs.schema, &inputs.lexicon, &settings.labels)?;
    let windows = pipeline::make_windows(&records, &settings)?;
    let out = &cfg.output_dir;
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    let artifacts = vec![
        write(&out.join(RECORDS), &lines)?,
        write(&out.join(INGEST_REPORT), &to_json(&report))?,
        write(&out.join(SPLIT_MANIFEST), &to_json(&pipeline::split_manifest(&windows)))?,
    ];
    log::info!(
        "ingested {} records ({} propagated, {} not)",
        report.records,
        report.propagated,
        report.not_propagated
    );
    record(cfg, "ingest", &artifacts)
}

fn load_ingested(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let out = &cfg.output_dir;
    let path = out.join(RECORDS);
    let file = fs::File::open(&path)
        .map_err(|e| io_err(&path, e))
        .context("run `propnet ingest` first")?;
    let mut records: Vec<TweetRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    let report_path = out.join(INGEST_REPORT);
    let text = fs::read_to_string(&report_path).map_err(|e| io_err(&report_path, e))?;
    let report: IngestReport =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", report_path.display())))?;
    Ok(Prepared::from_records(records, report, cfg.edges.as_deref(), &cfg.settings())?)
}

#[derive(Serialize)]
struct History<'a> {
    sentiment: &'a [propnet_core::sentiment::EpochRecord],
    fusion: &'a [propnet_core::fusion::EpochRecord],
}

#[derive(Deserialize)]
struct SavedHistory {
    sentiment: Vec<propnet_core::sentiment::EpochRecord>,
}

pub fn train(cfg: &RunConfig, resume: bool) -> anyhow::Result<()> {
    let settings = cfg.settings();
    let prepared = load_ingested(cfg)?;
    let out = &cfg.output_dir;
    let stem = out.join(MODEL_STEM);
    let outcome = if resume {
        let saved = TrainedModel::load(&stem, Some(&settings.model))?;
        let state_path = out.join(TRAIN_STATE);
        let text = fs::read_to_string(&state_path).map_err(|e| io_err(&state_path, e))?;
        let state: TrainState = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", state_path.display())))?;
        log::info!("resuming after epoch {}", state.history.len());
        let mut outcome = pipeline::resume(&prepared, &settings, saved, state)?;
        let hist_path = out.join(HISTORY);
        if let Ok(text) = fs::read_to_string(&hist_path) {
            if let Ok(h) = serde_json::from_str::<SavedHistory>(&text) {
                outcome.sentiment_history = h.sentiment;
            }
        }
        outcome
    } else {
        pipeline::train(&prepared, &settings)?
    };
    outcome.model.save(
        &stem,
        serde_json::json!({ "seed": cfg.seed, "epochs_run": outcome.state.history.len() }),
    )?;
    let history = History {
        sentiment: &outcome.sentiment_history,
        fusion: &outcome.state.history,
    };
    let artifacts = vec![
        stem.with_extension("ckpt"),
        stem.with_extension("json"),
        write(&out.join(TRAIN_STATE), &serde_json::to_string(&outcome.state).map_err(|e| Error::Checkpoint(e.to_string()))?)?,
        write(&out.join(HISTORY), &to_json(&history))?,
    ];
    record(cfg, "train", &artifacts)
}

fn evaluation_dir(cfg: &RunConfig, model: &str, topic: Option<&str>) -> PathBuf {
    let mut name = model.to_string();
    if let Some(t) = topic {
        let safe: String = t
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        name = format!("{name}__{safe}");
    }
    cfg.output_dir.join("evaluation").join(name)
}

fn write_metrics(dir: &Path, report: &MetricsReport, curve: &[RocPoint]) -> anyhow::Result<Vec<PathBuf>> {
    Ok(write_evaluation(dir, "", report, curve)?)
}

pub fn evaluate(cfg: &RunConfig, baseline: Option<Baseline>, topic: Option<&str>) -> anyhow::Result<()> {
    let settings = cfg.settings();
    let stem = cfg.output_dir.join(MODEL_STEM);
    let model = TrainedModel::load(&stem, Some(&settings.model))?;
    let prepared = load_ingested(cfg)?;
    let feat = prepared.featurize(&prepared.sentiments(&model.sentiment)?, Some(model.stats), settings.features)?;
    let dataset = cfg.dataset_name();
    let (name, mut artifacts, report) = match baseline {
        None => {
            let (report, curve, rows) = pipeline::evaluate_fusion(&model.fusion, &prepared, &feat, &dataset, topic)?;
            let dir = evaluation_dir(cfg, "mpt-propnet", topic);
            let mut files = write_metrics(&dir, &report, &curve)?;
            files.push(write(&dir.join("predictions.csv"), &pipeline::predictions_csv(&rows)?)?);
            ("mpt-propnet", files, report)
        }
        Some(Baseline::Lr) => {
            let (report, curve) = pipeline::lr_baseline(&prepared, &feat, &settings.baseline_lr, &dataset, topic)?;
            let files = write_metrics(&evaluation_dir(cfg, "lr", topic), &report, &curve)?;
            ("lr", files, report)
        }
        Some(Baseline::Textcnn) => {
            let (report, curve) = pipeline::textcnn_baseline(&prepared, &feat, &settings, &dataset, topic)?;
            let files = write_metrics(&evaluation_dir(cfg, "textcnn", topic), &report, &curve)?;
            ("textcnn", files, report)
        }
    };
    artifacts.sort();
    emit(&format!(
        "{name}: recall {:.4}  precision {:.4}  f1 {:.4}  auc {:.4}  (n = {})\n",
        report.recall, report.precision, report.f1, report.auc, report.samples
    ));
    let key = match topic {
        Some(t) => format!("evaluate:{name}:{t}"),
        None => format!("evaluate:{name}"),
    };
    record(cfg, &key, &artifacts)
}

pub fn ablate(cfg: &RunConfig) -> anyhow::Result<()> {
    let settings = cfg.settings();
    let prepared = load_ingested(cfg)?;
    let (textcnn, _) = prepared.train_sentiment(&settings)?;
    let feat = prepared.featurize(&prepared.sentiments(&textcnn)?, None, settings.features)?;
    let report = pipeline::ablation(&prepared, &feat, &settings);
    for row in &report.rows {
        if let Some(why) = &row.failed {
            log::warn!("ablation row {} failed: {why}", row.variant.label());
        }
    }
    let out = &cfg.output_dir;
    let csv = report.to_csv();
    emit(&csv);
    let artifacts = vec![write(&out.join(ABLATION_CSV), &csv)?, write(&out.join(ABLATION_JSON), &to_json(&report))?];
    record(cfg, "ablate", &artifacts)
}

pub fn rank_users(cfg: &RunConfig, top_k: Option<usize>) -> anyhow::Result<()> {
    let prepared = load_ingested(cfg)?;
    let path = cfg.output_dir.join(RANKING);
    let mut buf = Vec::new();
    prepared.influence.write_csv(&mut buf, top_k)?;
    let text = String::from_utf8(buf).expect("csv is UTF-8");
    write(&path, &text)?;
    emit(&text);
    record(cfg, "rank-users", &[path])
}

pub fn generate(cfg: &RunConfig) -> anyhow::Result<()> {
    let spec = cfg
        .synth
        .ok_or_else(|| Error::Config("generate needs a `synth` section in the config".into()))?;
    let target = cfg
        .datasets
        .first()
        .ok_or_else(|| Error::Config("generate writes to the first entry of `datasets`; none given".into()))?;
    let lexicon = cfg.lexicon()?;
    let data = synthgen::generate(&spec, &lexicon)?;
    let truth = target.with_extension("truth.json");
    write(target, &data.to_csv()?)?;
    write(&truth, &data.sidecar_json())?;
    log::info!("wrote {} tweets to {}", data.rows.len(), target.display());
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    record(cfg, "generate", &[target.clone(), truth])
}
