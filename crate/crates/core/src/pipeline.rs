//! End-to-end orchestration: ingest, label, rank, window, featurize, train,
//! evaluate. Every step is deterministic given the settings' seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, LogisticRegression, LrConfig, MetricsReport, RocPoint};
use crate::features::{build_feature_bundle, BundleReport, FeatureBundle, FeatureOptions, StandardizationStats};
use crate::fusion::{self, Ablation, FusionConfig, FusionModel, Sequence, TrainState};
use crate::influence::{self, GraphOrigin, InfluenceParams, InfluenceTable};
use crate::ingest::{
    assign_sentiment_label, bucket_all, label_propagation, parse_dataset, split_indices, LabelWeights, Lexicon,
    ParseReport, Propagation, SchemaConfig, Sentiment, Split, SplitRatios, TopicSeries, TweetRecord,
    DEFAULT_BUCKET_SECS,
};
use crate::nn::{checkpoint, Params};
use crate::sentiment::{self, TextCnn, TextCnnConfig, Vocabulary};

const SENTIMENT_SEED: u64 = 0x7e47_c0de;
const FUSION_SEED: u64 = 0xf05e_0001;
const BASELINE_SEED: u64 = 0xba5e_0002;

/// Everything that shapes a run except file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub labels: LabelWeights,
    pub bucket_secs: i64,
    /// Longest window of consecutive buckets used as one training sequence.
    pub segment_len: usize,
    /// Shorter windows are dropped.
    pub min_segment_len: usize,
    pub split: SplitRatios,
    pub influence: InfluenceParams,
    pub features: FeatureOptions,
    pub sentiment: TextCnnConfig,
    pub model: FusionConfig,
    pub baseline_lr: LrConfig,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            labels: LabelWeights::default(),
            bucket_secs: DEFAULT_BUCKET_SECS,
            segment_len: 128,
            min_segment_len: 2,
            split: SplitRatios::default(),
            influence: InfluenceParams::default(),
            features: FeatureOptions::default(),
            sentiment: TextCnnConfig::default(),
            model: FusionConfig::default(),
            baseline_lr: LrConfig::default(),
            seed: 0,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        self.labels.validate()?;
        self.split.validate()?;
        self.influence.validate()?;
        self.sentiment.validate()?;
        self.model.validate()?;
        if self.bucket_secs <= 0 {
            return Err(Error::Config(format!("bucket_secs must be positive, got {}", self.bucket_secs)));
        }
        if self.segment_len == 0 || self.segment_len > self.model.max_len {
            return Err(Error::Config(format!(
                "segment_len {} must be in 1..={} (model max_len)",
                self.segment_len, self.model.max_len
            )));
        }
        if self.min_segment_len == 0 || self.min_segment_len > self.segment_len {
            return Err(Error::Config("min_segment_len must be in 1..=segment_len".into()));
        }
        if !(self.baseline_lr.lr > 0.0) || self.baseline_lr.l2 < 0.0 {
            return Err(Error::Config("baseline_lr needs lr > 0 and l2 >= 0".into()));
        }
        Ok(())
    }
}

/// Input files and swappable resources.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub datasets: Vec<PathBuf>,
    pub schema: SchemaConfig,
    pub lexicon: Lexicon,
    pub edges: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Labels came with the data.
    Provided,
    /// Engagement heuristic for propagation, lexicon for sentiment.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: BTreeMap<String, ParseReport>,
    pub records: usize,
    /// Rows dropped because an earlier file had the same tweet id.
    pub cross_file_duplicates: usize,
    pub propagation_labels: LabelSource,
    pub propagation_threshold: Option<f64>,
    pub sentiment_labels: LabelSource,
    pub propagated: usize,
    pub not_propagated: usize,
    /// `[positive, neutral, negative]` counts.
    pub sentiment_counts: [usize; 3],
}

/// Parses every dataset and fills in any missing labels. Propagation labels
/// are kept only if every record has one; otherwise all are recomputed.
pub fn ingest(
    paths: &[PathBuf],
    schema: &SchemaConfig,
    lexicon: &Lexicon,
    weights: &LabelWeights,
) -> Result<(Vec<TweetRecord>, IngestReport)> {
    if paths.is_empty() {
        return Err(Error::Config("no dataset files configured".into()));
    }
    let mut records: Vec<TweetRecord> = Vec::new();
    let mut files = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut dups = 0;
    for p in paths {
        let (recs, report) = parse_dataset(p, schema)?;
        for r in recs {
            if seen.insert(r.tweet_id.clone()) {
                records.push(r);
            } else {
                dups += 1;
            }
        }
        files.insert(p.display().to_string(), report);
    }
    if records.is_empty() {
        return Err(Error::Domain("no usable records in the configured datasets".into()));
    }
    let (propagation_labels, propagation_threshold) = if records.iter().all(|r| r.propagation_label.is_some()) {
        (LabelSource::Provided, None)
    } else {
        (LabelSource::Derived, Some(label_propagation(&mut records, weights)?))
    };
    let mut sentiment_labels = LabelSource::Provided;
    for r in &mut records {
        if r.sentiment_label.is_none() {
            r.sentiment_label = Some(assign_sentiment_label(&r.clean_text, lexicon));
            sentiment_labels = LabelSource::Derived;
        }
    }
    let propagated = records
        .iter()
        .filter(|r| r.propagation_label.is_some_and(Propagation::is_propagated))
        .count();
    let mut sentiment_counts = [0; 3];
    for r in &records {
        if let Some(s) = r.sentiment_label {
            sentiment_counts[s.index()] += 1;
        }
    }
    let report = IngestReport {
        files,
        records: records.len(),
        cross_file_duplicates: dups,
        propagation_labels,
        propagation_threshold,
        sentiment_labels,
        propagated,
        not_propagated: records.len() - propagated,
        sentiment_counts,
    };
    Ok((records, report))
}

/// Builds the social graph (edge file if given, otherwise mentions) and
/// runs the influence ranking.
pub fn rank(records: &[TweetRecord], edges: Option<&Path>, params: &InfluenceParams) -> Result<(GraphOrigin, InfluenceTable)> {
    let graph = match edges {
        Some(p) => influence::load_edge_file(p, records)?,
        None => influence::derive_graph_from_mentions(records),
    };
    let table = influence::uir_pagerank(&graph, params)?;
    Ok((graph.origin, table))
}

/// A training window: consecutive buckets of one topic and its split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub series: TopicSeries,
    pub split: Split,
}

/// Cuts each topic's bucket series into windows of at most `segment_len`,
/// drops short or tweetless ones, and assigns windows to splits.
pub fn make_windows(records: &[TweetRecord], settings: &Settings) -> Result<Vec<Window>> {
    let mut series = Vec::new();
    for s in bucket_all(records, settings.bucket_secs)? {
        for seg in s.segments(settings.segment_len) {
            if seg.len() >= settings.min_segment_len && seg.buckets.iter().any(|b| !b.is_empty()) {
                series.push(seg);
            }
        }
    }
    let assignment = split_indices(series.len(), &settings.split, settings.seed)?.assignment(series.len());
    Ok(series
        .into_iter()
        .zip(assignment)
        .map(|(series, split)| Window { series, split })
        .collect())
}

/// `tweet_id → split` induced by the windows.
pub fn split_manifest(windows: &[Window]) -> BTreeMap<String, Split> {
    let mut m = BTreeMap::new();
    for w in windows {
        for b in &w.series.buckets {
            for id in &b.tweet_ids {
                m.insert(id.clone(), w.split);
            }
        }
    }
    m
}

/// Parsed, labeled, ranked and windowed corpus.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub records: Vec<TweetRecord>,
    pub ingest: IngestReport,
    pub graph_origin: GraphOrigin,
    pub influence: InfluenceTable,
    pub windows: Vec<Window>,
}

pub fn prepare(inputs: &Inputs, settings: &Settings) -> Result<Prepared> {
    settings.validate()?;
    let (records, report) = ingest(&inputs.datasets, &inputs.schema, &inputs.lexicon, &settings.labels)?;
    Prepared::from_records(records, report, inputs.edges.as_deref(), settings)
}

impl Prepared {
    /// Ranks and windows already ingested records.
    pub fn from_records(
        records: Vec<TweetRecord>,
        ingest: IngestReport,
        edges: Option<&Path>,
        settings: &Settings,
    ) -> Result<Self> {
        settings.validate()?;
        if let Some(r) = records.iter().find(|r| r.propagation_label.is_none() || r.sentiment_label.is_none()) {
            return Err(Error::Domain(format!("record {:?} is missing a label; ingest first", r.tweet_id)));
        }
        let (graph_origin, influence) = rank(&records, edges, &settings.influence)?;
        let windows = make_windows(&records, settings)?;
        Ok(Self {
            records,
            ingest,
            graph_origin,
            influence,
            windows,
        })
    }

    pub fn by_id(&self) -> HashMap<&str, &TweetRecord> {
        self.records.iter().map(|r| (r.tweet_id.as_str(), r)).collect()
    }

    fn tweets_in(&self, split: Split) -> Vec<&TweetRecord> {
        let by_id = self.by_id();
        self.windows
            .iter()
            .filter(|w| w.split == split)
            .flat_map(|w| w.series.buckets.iter().flat_map(|b| b.tweet_ids.iter()))
            .filter_map(|id| by_id.get(id.as_str()).copied())
            .collect()
    }

    /// Text CNN on the sentiment labels of training-window tweets.
    pub fn train_sentiment(&self, settings: &Settings) -> Result<(TextCnn, Vec<sentiment::EpochRecord>)> {
        let pairs = |split| -> Vec<(&str, usize)> {
            self.tweets_in(split)
                .into_iter()
                .filter_map(|r| r.sentiment_label.map(|s| (r.clean_text.as_str(), s.index())))
                .collect()
        };
        sentiment::train_textcnn(
            &pairs(Split::Train),
            &pairs(Split::Validation),
            &["positive", "neutral", "negative"],
            &settings.sentiment,
            settings.seed ^ SENTIMENT_SEED,
        )
    }

    /// Text CNN on per-tweet propagation labels; the second baseline.
    pub fn train_text_baseline(&self, settings: &Settings) -> Result<TextCnn> {
        let pairs = |split| -> Vec<(&str, usize)> {
            self.tweets_in(split)
                .into_iter()
                .filter_map(|r| r.propagation_label.map(|p| (r.clean_text.as_str(), p.index())))
                .collect()
        };
        Ok(sentiment::train_textcnn(
            &pairs(Split::Train),
            &pairs(Split::Validation),
            &["not_propagated", "propagated"],
            &settings.sentiment,
            settings.seed ^ BASELINE_SEED,
        )?
        .0)
    }

    /// Sentiment probabilities for every record.
    pub fn sentiments(&self, model: &TextCnn) -> Result<HashMap<String, [f64; 3]>> {
        self.records
            .iter()
            .map(|r| Ok((r.tweet_id.clone(), model.sentiment(&r.clean_text)?.probs)))
            .collect()
    }

    /// Per-window feature bundles. Standardization is fitted on training
    /// windows unless `stats` is given.
    pub fn featurize(
        &self,
        sentiments: &HashMap<String, [f64; 3]>,
        stats: Option<StandardizationStats>,
        options: FeatureOptions,
    ) -> Result<Featurized> {
        let stats = match stats {
            Some(s) => s,
            None => StandardizationStats::fit(
                self.windows.iter().filter(|w| w.split == Split::Train).map(|w| &w.series),
                options,
            )?,
        };
        let by_id = self.by_id();
        let mut report = BundleReport::default();
        let mut bundles = Vec::with_capacity(self.windows.len());
        for w in &self.windows {
            let (b, r) = build_feature_bundle(&w.series, &by_id, &self.influence, sentiments, &stats)?;
            report.missing_authors += r.missing_authors;
            bundles.push(b);
        }
        Ok(Featurized { stats, bundles, report })
    }
}

/// Feature bundles aligned with [`Prepared::windows`].
#[derive(Debug, Clone)]
pub struct Featurized {
    pub stats: StandardizationStats,
    pub bundles: Vec<FeatureBundle>,
    pub report: BundleReport,
}

pub fn to_sequence(b: &FeatureBundle) -> Sequence {
    Sequence {
        topic: b.topic.clone(),
        inputs: b.input_rows(),
        labels: b.labels(),
    }
}

impl Featurized {
    /// Indices of windows in `split`, optionally restricted to one topic.
    pub fn window_indices(&self, windows: &[Window], split: Split, topic: Option<&str>) -> Vec<usize> {
        windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.split == split && topic.is_none_or(|t| w.series.topic == t))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sequences(&self, windows: &[Window], split: Split, topic: Option<&str>) -> Vec<Sequence> {
        self.window_indices(windows, split, topic)
            .into_iter()
            .map(|i| to_sequence(&self.bundles[i]))
            .collect()
    }
}

/// The sentiment encoder, sequence model and standardization parameters
/// that together turn raw records into predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub fusion: FusionModel,
    pub sentiment: TextCnn,
    pub stats: StandardizationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    fusion: FusionConfig,
    ablation: Ablation,
    sentiment: TextCnnConfig,
    sentiment_classes: usize,
    vocabulary: Vocabulary,
    standardization: StandardizationStats,
    #[serde(default)]
    extra: serde_json::Value,
}

impl TrainedModel {
    /// Writes `<stem>.ckpt` and `<stem>.json`.
    pub fn save(&self, stem: &Path, extra: serde_json::Value) -> Result<()> {
        let mut params = Params::new();
        params.merge_prefixed("fusion.", self.fusion.params.clone());
        params.merge_prefixed("sentiment.", self.sentiment.params.clone());
        let meta = ModelMeta {
            fusion: self.fusion.config,
            ablation: self.fusion.ablation,
            sentiment: self.sentiment.config,
            sentiment_classes: self.sentiment.classes,
            vocabulary: self.sentiment.vocab.clone(),
            standardization: self.stats,
            extra,
        };
        let hyper = serde_json::to_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        checkpoint::save(stem, &params, hyper)
    }

    /// Loads a checkpoint and checks it against `expected` model dimensions
    /// when given.
    pub fn load(stem: &Path, expected: Option<&FusionConfig>) -> Result<Self> {
        let (params, manifest) = checkpoint::load(stem)?;
        let meta: ModelMeta = serde_json::from_value(manifest.hyperparameters)
            .map_err(|e| Error::Checkpoint(format!("checkpoint metadata: {e}")))?;
        if let Some(cfg) = expected {
            let dims = |c: &FusionConfig| (c.d_model, c.heads, c.d_ff, c.hidden, c.max_len);
            if dims(cfg) != dims(&meta.fusion) {
                return Err(Error::Checkpoint(format!(
                    "checkpoint dims (d_model, heads, d_ff, hidden, max_len) = {:?}, configuration has {:?}",
                    dims(&meta.fusion),
                    dims(cfg)
                )));
            }
        }
        let fusion_params = params.extract_prefixed("fusion.");
        fusion::check_params(&meta.fusion, &fusion_params)?;
        let sentiment_params = params.extract_prefixed("sentiment.");
        let want = sentiment::init_params(&meta.sentiment, meta.vocabulary.size(), meta.sentiment_classes, 0)?;
        for (name, arr) in want.iter() {
            match sentiment_params.get(name) {
                Some(a) if a.shape() == arr.shape() => {}
                _ => return Err(Error::Checkpoint(format!("sentiment parameter `{name}` missing or misshapen"))),
            }
        }
        Ok(Self {
            fusion: FusionModel {
                config: meta.fusion,
                ablation: meta.ablation,
                params: fusion_params,
            },
            sentiment: TextCnn {
                vocab: meta.vocabulary,
                config: meta.sentiment,
                params: sentiment_params,
                classes: meta.sentiment_classes,
            },
            stats: meta.standardization,
        })
    }
}

/// Per-bucket prediction on an evaluated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub topic: String,
    pub bucket_start: String,
    pub p_propagated: f64,
    pub predicted: Propagation,
    pub actual: Option<Propagation>,
    /// Set on the last bucket of each window: the window-level call.
    pub window_label: Option<Propagation>,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["topic", "bucket_start", "p_propagated", "predicted", "actual", "window_label"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    let name = |p: Option<Propagation>| p.map_or("", Propagation::as_str).to_string();
    for r in rows {
        w.write_record([
            r.topic.clone(),
            r.bucket_start.clone(),
            r.p_propagated.to_string(),
            r.predicted.as_str().to_string(),
            name(r.actual),
            name(r.window_label),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn require_windows(idx: &[usize], split: Split, topic: Option<&str>) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Domain(match topic {
            Some(t) => format!("topic {t:?} has no {split:?} windows"),
            None => format!("no {split:?} windows"),
        }));
    }
    Ok(())
}

fn metrics_from(model: &str, dataset: &str, scored: &[(f64, bool)]) -> Result<(MetricsReport, Vec<RocPoint>)> {
    let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.1).collect();
    MetricsReport::compute(model, dataset, &scores, &labels)
}

/// Test-split metrics and per-bucket predictions of the sequence model.
pub fn evaluate_fusion(
    model: &FusionModel,
    prepared: &Prepared,
    feat: &Featurized,
    dataset: &str,
    topic: Option<&str>,
) -> Result<(MetricsReport, Vec<RocPoint>, Vec<PredictionRow>)> {
    let idx = feat.window_indices(&prepared.windows, Split::Test, topic);
    require_windows(&idx, Split::Test, topic)?;
    let mut scored = Vec::new();
    let mut rows = Vec::new();
    for i in idx {
        let b = &feat.bundles[i];
        let preds = model.predict(&b.input_rows())?;
        let last = preds.len() - 1;
        for (k, (p, bucket)) in preds.iter().zip(&b.buckets).enumerate() {
            if let Some(l) = bucket.label {
                scored.push((p.p_prop, l.is_propagated()));
            }
            rows.push(PredictionRow {
                topic: b.topic.clone(),
                bucket_start: bucket.start.to_rfc3339(),
                p_propagated: p.p_prop,
                predicted: p.label(),
                actual: bucket.label,
                window_label: (k == last).then(|| p.label()),
            });
        }
    }
    let (m, c) = metrics_from("mpt-propnet", dataset, &scored)?;
    Ok((m, c, rows))
}

fn labeled_rows(feat: &Featurized, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &i in idx {
        for b in &feat.bundles[i].buckets {
            if let Some(l) = b.label {
                xs.push(b.input_row().to_vec());
                ys.push(l.is_propagated());
            }
        }
    }
    (xs, ys)
}

/// Logistic regression on the per-bucket input rows.
pub fn lr_baseline(
    prepared: &Prepared,
    feat: &Featurized,
    cfg: &LrConfig,
    dataset: &str,
    topic: Option<&str>,
) -> Result<(MetricsReport, Vec<RocPoint>)> {
    let train_idx = feat.window_indices(&prepared.windows, Split::Train, None);
    let (xs, ys) = labeled_rows(feat, &train_idx);
    let model = LogisticRegression::fit(&xs, &ys, cfg)?;
    let test_idx = feat.window_indices(&prepared.windows, Split::Test, topic);
    require_windows(&test_idx, Split::Test, topic)?;
    let (tx, ty) = labeled_rows(feat, &test_idx);
    let scored: Vec<(f64, bool)> = tx.iter().zip(ty).map(|(x, y)| (model.predict(x), y)).collect();
    metrics_from("logistic-regression", dataset, &scored)
}

/// Per-tweet text classifier; a bucket's score is the mean over its tweets.
pub fn textcnn_baseline(
    prepared: &Prepared,
    feat: &Featurized,
    settings: &Settings,
    dataset: &str,
    topic: Option<&str>,
) -> Result<(MetricsReport, Vec<RocPoint>)> {
    let model = prepared.train_text_baseline(settings)?;
    let by_id = prepared.by_id();
    let test_idx = feat.window_indices(&prepared.windows, Split::Test, topic);
    require_windows(&test_idx, Split::Test, topic)?;
    let mut scored = Vec::new();
    for i in test_idx {
        for (bucket, bf) in prepared.windows[i].series.buckets.iter().zip(&feat.bundles[i].buckets) {
            let Some(label) = bf.label else { continue };
            let mut s = 0.0;
            for id in &bucket.tweet_ids {
                let r = by_id[id.as_str()];
                s += model.predict(&r.clean_text)?[Propagation::Propagated.index()];
            }
            scored.push((s / bucket.tweet_ids.len() as f64, label.is_propagated()));
        }
    }
    metrics_from("text-cnn", dataset, &scored)
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Empty when the sentiment encoder came from an earlier run.
    pub sentiment_history: Vec<sentiment::EpochRecord>,
    pub state: TrainState,
    pub featurized: Featurized,
}

fn run_fusion(
    prepared: &Prepared,
    sentiment: TextCnn,
    sentiment_history: Vec<sentiment::EpochRecord>,
    feat: Featurized,
    mut state: TrainState,
) -> Result<TrainOutcome> {
    let train = feat.sequences(&prepared.windows, Split::Train, None);
    let val = feat.sequences(&prepared.windows, Split::Validation, None);
    fusion::train_continue(&mut state, &train, &val)?;
    Ok(TrainOutcome {
        model: TrainedModel {
            fusion: state.best_model(),
            sentiment,
            stats: feat.stats,
        },
        sentiment_history,
        state,
        featurized: feat,
    })
}

/// Trains the sentiment encoder, then the sequence model, from scratch.
pub fn train(prepared: &Prepared, settings: &Settings) -> Result<TrainOutcome> {
    let (textcnn, sentiment_history) = prepared.train_sentiment(settings)?;
    let feat = prepared.featurize(&prepared.sentiments(&textcnn)?, None, settings.features)?;
    let state = TrainState::new(settings.model, Ablation::Full, fusion_seed(settings))?;
    run_fusion(prepared, textcnn, sentiment_history, feat, state)
}

/// Continues an interrupted run. The sentiment encoder and standardization
/// come from `saved`; the epoch budget and patience from `settings`.
pub fn resume(prepared: &Prepared, settings: &Settings, saved: TrainedModel, mut state: TrainState) -> Result<TrainOutcome> {
    let dims = |c: &FusionConfig| (c.d_model, c.heads, c.d_ff, c.hidden, c.max_len, c.batch_size);
    if dims(&state.model.config) != dims(&settings.model) {
        return Err(Error::Checkpoint(format!(
            "saved training state has dims {:?}, configuration has {:?}",
            dims(&state.model.config),
            dims(&settings.model)
        )));
    }
    state.model.config.epochs = settings.model.epochs;
    state.model.config.patience = settings.model.patience;
    state.finished = state.stale >= settings.model.patience;
    let feat = prepared.featurize(&prepared.sentiments(&saved.sentiment)?, Some(saved.stats), settings.features)?;
    run_fusion(prepared, saved.sentiment, Vec::new(), feat, state)
}

/// Seed used for the sequence model under `settings`.
pub fn fusion_seed(settings: &Settings) -> u64 {
    settings.seed ^ FUSION_SEED
}

/// Ablation study on the featurized windows.
pub fn ablation(prepared: &Prepared, feat: &Featurized, settings: &Settings) -> eval::AblationReport {
    let train = feat.sequences(&prepared.windows, Split::Train, None);
    let val = feat.sequences(&prepared.windows, Split::Validation, None);
    let test = feat.sequences(&prepared.windows, Split::Test, None);
    eval::ablate(&train, &val, &test, settings.model, fusion_seed(settings))
}

/// Sentiment counts by tendency over all records, for reporting.
pub fn tendency_counts(model: &TextCnn, records: &[TweetRecord]) -> Result<[usize; 3]> {
    let mut counts = [0; 3];
    for r in records {
        let s: Sentiment = model.sentiment(&r.clean_text)?.tendency;
        counts[s.index()] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, SignalSpec};

    fn fast_settings(seed: u64) -> Settings {
        Settings {
            segment_len: 16,
            sentiment: TextCnnConfig {
                max_len: 16,
                epochs: 3,
                ..TextCnnConfig::default()
            },
            model: FusionConfig {
                d_model: 8,
                heads: 2,
                d_ff: 8,
                hidden: 4,
                max_len: 16,
                epochs: 2,
                lr: 0.01,
                ..FusionConfig::default()
            },
            seed,
            ..Settings::default()
        }
    }

    fn synth_inputs(dir: &Path, spec: &SignalSpec) -> Inputs {
        let d = generate(spec, &Lexicon::builtin()).unwrap();
        let paths = d.write(dir, crate::ingest::DEFAULT_LEXICON).unwrap();
        Inputs {
            datasets: vec![paths[0].clone()],
            schema: SchemaConfig::default(),
            lexicon: Lexicon::builtin(),
            edges: None,
        }
    }

    fn small_spec() -> SignalSpec {
        SignalSpec {
            topics: 8,
            tweets_per_topic: 60,
            s_temp: 0.0,
            seed: 1,
            ..SignalSpec::default()
        }
    }

    #[test]
    fn windows_partition_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = synth_inputs(dir.path(), &small_spec());
        let p = prepare(&inputs, &fast_settings(3)).unwrap();
        assert_eq!(p.ingest.propagation_labels, LabelSource::Provided);
        assert_eq!(p.ingest.sentiment_labels, LabelSource::Derived);
        assert!(p.windows.len() >= 10);
        assert!(p.windows.iter().all(|w| w.series.len() <= 16));
        let m = split_manifest(&p.windows);
        // Only tweets in dropped short tail windows go missing.
        assert!(m.len() <= p.records.len() && m.len() * 10 >= p.records.len() * 9);
        for split in [Split::Train, Split::Validation, Split::Test] {
            assert!(p.windows.iter().any(|w| w.split == split));
        }
        let again = prepare(&inputs, &fast_settings(3)).unwrap();
        assert_eq!(again.windows, p.windows);
    }

    #[test]
    fn train_save_load_evaluate() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = synth_inputs(dir.path(), &small_spec());
        let s = fast_settings(2);
        let p = prepare(&inputs, &s).unwrap();
        let out = train(&p, &s).unwrap();
        assert_eq!(out.state.history.len(), 2);
        let stem = dir.path().join("model");
        out.model.save(&stem, serde_json::json!({"note": 1})).unwrap();
        let back = TrainedModel::load(&stem, Some(&s.model)).unwrap();
        assert_eq!(back, out.model);
        let other = FusionConfig { d_ff: 9, ..s.model };
        assert!(matches!(TrainedModel::load(&stem, Some(&other)), Err(Error::Checkpoint(_))));

        let feat = p.featurize(&p.sentiments(&back.sentiment).unwrap(), Some(back.stats), s.features).unwrap();
        let (m1, _, rows) = evaluate_fusion(&back.fusion, &p, &feat, "synth", None).unwrap();
        let (m2, _, _) = evaluate_fusion(&out.model.fusion, &p, &out.featurized, "synth", None).unwrap();
        assert_eq!(m1, m2);
        assert!(rows.iter().any(|r| r.window_label.is_some()));
        let csv = predictions_csv(&rows).unwrap();
        assert_eq!(csv.lines().count(), rows.len() + 1);

        let (lr, _) = lr_baseline(&p, &feat, &s.baseline_lr, "synth", None).unwrap();
        assert_eq!(lr.model, "logistic-regression");
        let topic = p.windows.iter().find(|w| w.split == Split::Test).unwrap().series.topic.clone();
        let (t, _, _) = evaluate_fusion(&back.fusion, &p, &feat, "synth", Some(&topic)).unwrap();
        assert!(t.samples <= m1.samples);
        assert!(evaluate_fusion(&back.fusion, &p, &feat, "synth", Some("nope")).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = synth_inputs(dir.path(), &small_spec());
        let mut s = fast_settings(6);
        s.model.epochs = 4;
        s.model.patience = 10;
        let p = prepare(&inputs, &s).unwrap();
        let straight = train(&p, &s).unwrap();

        let mut short = s.clone();
        short.model.epochs = 2;
        let first = train(&p, &short).unwrap();
        assert_eq!(first.state.history.len(), 2);
        let json = serde_json::to_string(&first.state).unwrap();
        let state: TrainState = serde_json::from_str(&json).unwrap();
        let resumed = resume(&p, &s, first.model.clone(), state).unwrap();
        assert_eq!(resumed.state.history, straight.state.history);
        assert_eq!(resumed.model, straight.model);

        let mut wider = s.clone();
        wider.model.d_model = 12;
        wider.model.heads = 3;
        assert!(matches!(resume(&p, &wider, first.model, first.state), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn standardization_uses_training_windows_only() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = synth_inputs(dir.path(), &small_spec());
        let s = fast_settings(4);
        let p = prepare(&inputs, &s).unwrap();
        let uniform: HashMap<String, [f64; 3]> = p.records.iter().map(|r| (r.tweet_id.clone(), [1.0 / 3.0; 3])).collect();
        let f = p.featurize(&uniform, None, s.features).unwrap();
        let want = StandardizationStats::fit(
            p.windows.iter().filter(|w| w.split == Split::Train).map(|w| &w.series),
            s.features,
        )
        .unwrap();
        assert_eq!(f.stats, want);
        let train_rows: Vec<[f64; 7]> = f
            .window_indices(&p.windows, Split::Train, None)
            .into_iter()
            .flat_map(|i| f.bundles[i].input_rows())
            .collect();
        let n = train_rows.len() as f64;
        for k in 4..7 {
            let mean = train_rows.iter().map(|r| r[k]).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn settings_validation() {
        let bad = Settings {
            segment_len: 500,
            ..Settings::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        Settings::default().validate().unwrap();
        let json = serde_json::to_string(&Settings::default()).unwrap();
        let back: Settings = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Settings::default());
        assert!(serde_json::from_str::<Settings>(r#"{"unknown": 1}"#).is_err());
    }
}
