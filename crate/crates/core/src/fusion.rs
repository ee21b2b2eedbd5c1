//! Causal multi-head fusion of temporal embeddings (queries) with projected
//! per-bucket modality inputs (keys and values), followed by a two-layer
//! propagation head.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::features::{INPUT_DIM, PROPAGATION_COLS, SENTIMENT_COLS, USER_COLS};
use crate::ingest::Propagation;
use crate::nn::{self, ops, Adam, NumArray, Params, Tape, Var};
use crate::temporal;

pub const MASK_VALUE: f64 = -1e9;
pub const PE_BASE: f64 = 10000.0;

/// Sinusoidal encoding: even columns `sin(pos / base^(2i/d))`, odd columns
/// the matching cosine.
pub fn positional_encoding(len: usize, d_model: usize) -> NumArray {
    let mut out = NumArray::zeros(&[len.max(1), d_model.max(1)]);
    for pos in 0..len {
        for col in 0..d_model {
            let pair = (col / 2) as f64;
            let angle = pos as f64 / PE_BASE.powf(2.0 * pair / d_model as f64);
            out.set(pos, col, if col % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

/// Adds the positional encoding to an `[L × d]` sequence.
pub fn positional_encode(seq: &NumArray) -> Result<NumArray> {
    if seq.is_empty() {
        return Err(Error::Domain("positional encoding of an empty sequence".into()));
    }
    let mut out = seq.clone();
    out.add_assign(&positional_encoding(seq.rows(), seq.cols()));
    Ok(out)
}

/// Additive mask: 0 on and below the diagonal, a large negative above.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalMask {
    values: NumArray,
}

impl CausalMask {
    pub fn new(len: usize) -> Self {
        let mut values = NumArray::zeros(&[len.max(1), len.max(1)]);
        for r in 0..len {
            for c in r + 1..len {
                values.set(r, c, MASK_VALUE);
            }
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &NumArray {
        &self.values
    }
}

/// `softmax(Q Kᵀ / √d_k + C) V`; returns the output and the weight matrix.
pub fn attention(q: &NumArray, k: &NumArray, v: &NumArray, mask: &CausalMask, d_k: usize) -> Result<(NumArray, NumArray)> {
    let l = q.rows();
    if k.rows() != l || v.rows() != l || q.cols() != k.cols() || mask.len() != l {
        return Err(Error::Dimension(format!(
            "attention shapes Q{:?} K{:?} V{:?} mask {}",
            q.shape(),
            k.shape(),
            v.shape(),
            mask.len()
        )));
    }
    let mut scores = ops::matmul(q, &k.transpose())?;
    let scale = 1.0 / (d_k as f64).sqrt();
    for (s, &m) in scores.data_mut().iter_mut().zip(mask.values().data()) {
        *s = *s * scale + m;
    }
    let weights = ops::softmax_rows(&scores);
    Ok((ops::matmul(&weights, v)?, weights))
}

/// Input family removed by an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    User,
    Sentiment,
    Temporal,
    Propagation,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::User,
        Ablation::Sentiment,
        Ablation::Temporal,
        Ablation::Propagation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::User => "-user",
            Ablation::Sentiment => "-sentiment",
            Ablation::Temporal => "-temporal",
            Ablation::Propagation => "-propagation",
        }
    }

    fn zeroed_cols(self) -> Option<std::ops::Range<usize>> {
        match self {
            Ablation::User => Some(USER_COLS),
            Ablation::Sentiment => Some(SENTIMENT_COLS),
            Ablation::Propagation => Some(PROPAGATION_COLS),
            Ablation::Full | Ablation::Temporal => None,
        }
    }

    /// Inputs with this family's columns set to zero.
    pub fn apply(self, rows: &[[f64; INPUT_DIM]]) -> Vec<[f64; INPUT_DIM]> {
        let mut out = rows.to_vec();
        if let Some(cols) = self.zeroed_cols() {
            for r in &mut out {
                r[cols.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Hidden size of each recurrent direction.
    pub hidden: usize,
    /// Longest sequence the model accepts.
    pub max_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            d_ff: 64,
            hidden: 16,
            max_len: 128,
            lr: 1e-3,
            epochs: 50,
            patience: 5,
            batch_size: 4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.d_ff == 0 || self.hidden == 0 || self.max_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("d_ff, hidden, max_len and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }
}

fn head_name(k: usize, which: &str) -> String {
    format!("head{k}.w_{which}")
}

/// Fresh parameters for the recurrent encoder, the fusion block and the head.
pub fn init_params(cfg: &FusionConfig, seed: u64) -> Result<Params> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, dk) = (cfg.d_model, cfg.d_k());
    let mut p = temporal::init_bilstm(INPUT_DIM, cfg.hidden, seed.wrapping_add(1));
    p.insert("proj_h.w", nn::glorot(&mut rng, INPUT_DIM, d));
    p.insert("proj_h.b", NumArray::zeros(&[1, d]));
    p.insert("proj_t.w", nn::glorot(&mut rng, 2 * cfg.hidden, d));
    p.insert("proj_t.b", NumArray::zeros(&[1, d]));
    for k in 0..cfg.heads {
        for which in ["q", "k", "v"] {
            p.insert(head_name(k, which), nn::glorot(&mut rng, d, dk));
        }
    }
    p.insert("mix.w", nn::glorot(&mut rng, cfg.heads * dk, d));
    p.insert("cls.w3", nn::glorot(&mut rng, d, cfg.d_ff));
    p.insert("cls.b3", NumArray::zeros(&[1, cfg.d_ff]));
    p.insert("cls.w4", nn::glorot(&mut rng, cfg.d_ff, 2));
    p.insert("cls.b4", NumArray::zeros(&[1, 2]));
    Ok(p)
}

/// Checks that `params` has every array `cfg` implies, with matching shapes.
pub fn check_params(cfg: &FusionConfig, params: &Params) -> Result<()> {
    let want = init_params(cfg, 0)?;
    for (name, arr) in want.iter() {
        let got = params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` missing")))?;
        if got.shape() != arr.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, configuration implies {:?}",
                got.shape(),
                arr.shape()
            )));
        }
    }
    Ok(())
}

fn bound_var(bound: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    bound
        .get(name)
        .copied()
        .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` missing")))
}

/// Heads, concatenation, output mix and residual on the tape.
pub fn tape_multi_head(
    tape: &mut Tape,
    bound: &BTreeMap<String, Var>,
    heads: usize,
    t_prime: Var,
    h_prime: Var,
) -> Result<Var> {
    let l = tape.value(t_prime).rows();
    let d = tape.value(t_prime).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("d_model ({d}) must be a positive multiple of heads ({heads})")));
    }
    if tape.value(h_prime).shape() != tape.value(t_prime).shape() {
        return Err(Error::dims("fusion inputs", tape.value(t_prime).shape(), tape.value(h_prime).shape()));
    }
    let dk = d / heads;
    let mask = CausalMask::new(l);
    let mut outs = Vec::with_capacity(heads);
    for k in 0..heads {
        let q = tape.matmul(t_prime, bound_var(bound, &head_name(k, "q"))?)?;
        let kk = tape.matmul(h_prime, bound_var(bound, &head_name(k, "k"))?)?;
        let v = tape.matmul(h_prime, bound_var(bound, &head_name(k, "v"))?)?;
        let kt = tape.transpose(kk);
        let raw = tape.matmul(q, kt)?;
        let scaled = tape.scale(raw, 1.0 / (dk as f64).sqrt());
        let masked = tape.add_const(scaled, mask.values())?;
        let w = tape.softmax_rows(masked);
        outs.push(tape.matmul(w, v)?);
    }
    let cat = tape.concat_cols(&outs)?;
    let mixed = tape.matmul(cat, bound_var(bound, "mix.w")?)?;
    tape.add(mixed, t_prime)
}

/// `softmax(relu(A W3 + b3) W4 + b4)` on the tape; `[L × 2]`.
pub fn tape_classify(tape: &mut Tape, bound: &BTreeMap<String, Var>, a: Var) -> Result<Var> {
    let hidden = tape.linear(a, bound_var(bound, "cls.w3")?, bound_var(bound, "cls.b3")?)?;
    let act = tape.relu(hidden);
    let logits = tape.linear(act, bound_var(bound, "cls.w4")?, bound_var(bound, "cls.b4")?)?;
    Ok(tape.softmax_rows(logits))
}

/// Full forward on the tape; returns `[L × 2]` probabilities.
pub fn tape_forward(
    tape: &mut Tape,
    bound: &BTreeMap<String, Var>,
    cfg: &FusionConfig,
    ablation: Ablation,
    inputs: &[[f64; INPUT_DIM]],
) -> Result<Var> {
    let l = inputs.len();
    if l == 0 {
        return Err(Error::Domain("empty sequence".into()));
    }
    if l > cfg.max_len {
        return Err(Error::Config(format!("sequence of {l} buckets exceeds max_len {}", cfg.max_len)));
    }
    let rows: Vec<Vec<f64>> = ablation.apply(inputs).iter().map(|r| r.to_vec()).collect();
    let x = tape.leaf(NumArray::from_rows(&rows)?);
    let temporal_emb = if ablation == Ablation::Temporal {
        tape.leaf(NumArray::zeros(&[l, 2 * cfg.hidden]))
    } else {
        temporal::tape_bilstm(tape, bound, cfg.hidden, x, true)?
    };
    let t_proj = tape.linear(temporal_emb, bound_var(bound, "proj_t.w")?, bound_var(bound, "proj_t.b")?)?;
    let t_prime = tape.add_const(t_proj, &positional_encoding(l, cfg.d_model))?;
    let h_prime = tape.linear(x, bound_var(bound, "proj_h.w")?, bound_var(bound, "proj_h.b")?)?;
    let a = tape_multi_head(tape, bound, cfg.heads, t_prime, h_prime)?;
    tape_classify(tape, bound, a)
}

/// Forward-only multi-head fusion.
pub fn multi_head_fuse(t_prime: &NumArray, h_prime: &NumArray, params: &Params, heads: usize) -> Result<NumArray> {
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let t = tape.leaf(t_prime.clone());
    let h = tape.leaf(h_prime.clone());
    let a = tape_multi_head(&mut tape, &bound, heads, t, h)?;
    Ok(tape.value(a).clone())
}

/// Per-position `(p_not, p_prop)` from a fused sequence.
pub fn classify(a: &NumArray, params: &Params) -> Result<Vec<[f64; 2]>> {
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let av = tape.leaf(a.clone());
    let probs = tape_classify(&mut tape, &bound, av)?;
    Ok(pairs(tape.value(probs)))
}

fn pairs(probs: &NumArray) -> Vec<[f64; 2]> {
    (0..probs.rows()).map(|r| [probs.get(r, 0), probs.get(r, 1)]).collect()
}

/// One topic window: per-bucket inputs and optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub topic: String,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub labels: Vec<Option<Propagation>>,
}

impl Sequence {
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// Per-position prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_not: f64,
    pub p_prop: f64,
}

impl Prediction {
    /// Propagated only when strictly above one half.
    pub fn label(&self) -> Propagation {
        Propagation::from_bool(self.p_prop > 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub ablation: Ablation,
    pub params: Params,
}

impl FusionModel {
    pub fn new(config: FusionConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        Ok(Self {
            params: init_params(&config, seed)?,
            config,
            ablation,
        })
    }

    /// Per-bucket probabilities for one window of at most `max_len` buckets.
    pub fn predict(&self, inputs: &[[f64; INPUT_DIM]]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let probs = tape_forward(&mut tape, &bound, &self.config, self.ablation, inputs)?;
        Ok(pairs(tape.value(probs))
            .into_iter()
            .map(|[p_not, p_prop]| Prediction { p_not, p_prop })
            .collect())
    }

    /// Predictions for an arbitrarily long series, processed in consecutive
    /// windows of `max_len`, and the topic-level label from the last bucket.
    pub fn predict_series(&self, inputs: &[[f64; INPUT_DIM]]) -> Result<(Vec<Prediction>, Propagation)> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.config.max_len) {
            out.extend(self.predict(chunk)?);
        }
        let last = out
            .last()
            .ok_or_else(|| Error::Domain("empty sequence".into()))?
            .label();
        Ok((out, last))
    }
}

/// Mean cross-entropy over labeled positions of `batch`, with gradients.
pub fn loss_and_grad(
    cfg: &FusionConfig,
    ablation: Ablation,
    params: &Params,
    batch: &[&Sequence],
) -> Result<(f64, Params, usize)> {
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let mut losses = Vec::new();
    let mut count = 0usize;
    for s in batch {
        let targets: Vec<(usize, usize)> = s
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l.index())))
            .collect();
        if targets.is_empty() {
            continue;
        }
        let probs = tape_forward(&mut tape, &bound, cfg, ablation, &s.inputs)?;
        losses.push(tape.cross_entropy(probs, &targets)?);
        count += targets.len();
    }
    if count == 0 {
        return Ok((0.0, params.zeros_like(), 0));
    }
    let stacked = tape.concat_rows(&losses)?;
    let total = tape.sum(stacked);
    let loss = tape.scale(total, 1.0 / count as f64);
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], grads.collect(&tape, &bound), count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

/// Labeled positions of `seqs` scored by `model`: `(p_prop, is_propagated)`.
pub fn scored_positions(model: &FusionModel, seqs: &[Sequence]) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::new();
    for s in seqs {
        let preds = model.predict(&s.inputs)?;
        for (p, l) in preds.iter().zip(&s.labels) {
            if let Some(l) = l {
                out.push((p.p_prop, l.is_propagated()));
            }
        }
    }
    Ok(out)
}

fn evaluate(model: &FusionModel, seqs: &[Sequence]) -> Result<(f64, f64)> {
    let scored = scored_positions(model, seqs)?;
    if scored.is_empty() {
        return Ok((f64::NAN, 0.0));
    }
    let loss = scored
        .iter()
        .map(|&(p, y)| -(if y { p } else { 1.0 - p }).max(ops::LOG_FLOOR).ln())
        .sum::<f64>()
        / scored.len() as f64;
    let preds: Vec<bool> = scored.iter().map(|&(p, _)| p > 0.5).collect();
    let labels: Vec<bool> = scored.iter().map(|&(_, y)| y).collect();
    let cm = ConfusionMatrix::from_labels(&preds, &labels)?;
    Ok((loss, cm.f1().value))
}

/// Optimizer and early-stopping state, enough to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: FusionModel,
    pub best: Option<(f64, Params)>,
    pub stale: usize,
    pub adam: Adam,
    pub history: Vec<EpochRecord>,
    pub seed: u64,
    pub finished: bool,
}

impl TrainState {
    pub fn new(config: FusionConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        let model = FusionModel::new(config, ablation, seed)?;
        let adam = Adam::new(&model.params, config.lr);
        Ok(Self {
            model,
            best: None,
            stale: 0,
            adam,
            history: Vec::new(),
            seed,
            finished: false,
        })
    }

    /// Best-validation model seen so far, or the current one.
    pub fn best_model(&self) -> FusionModel {
        let mut m = self.model.clone();
        if let Some((_, p)) = &self.best {
            m.params = p.clone();
        }
        m
    }
}

/// Runs epochs until `config.epochs` in total have run or validation F1 has
/// not improved for `config.patience` epochs.
pub fn train_continue(state: &mut TrainState, train: &[Sequence], val: &[Sequence]) -> Result<()> {
    let cfg = state.model.config;
    if train.iter().all(|s| s.labeled_count() == 0) {
        return Err(Error::Training("no labeled training positions".into()));
    }
    for s in train.iter().chain(val) {
        if s.inputs.len() != s.labels.len() {
            return Err(Error::Training(format!("sequence {:?} has mismatched labels", s.topic)));
        }
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    while !state.finished && state.history.len() < cfg.epochs {
        let epoch = state.history.len() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sequence> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads, n) = loss_and_grad(&cfg, state.model.ablation, &state.model.params, &batch)?;
            if n == 0 {
                continue;
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            total += loss * n as f64;
            count += n;
            state.adam.step(&mut state.model.params, &grads)?;
        }
        let train_loss = total / count.max(1) as f64;
        let (val_loss, val_f1) = if val.is_empty() {
            (f64::NAN, 0.0)
        } else {
            evaluate(&state.model, val)?
        };
        log::info!("epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}, val F1 {val_f1:.4}");
        state.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_f1,
        });
        if state.best.as_ref().is_none_or(|(b, _)| val_f1 > *b) {
            state.best = Some((val_f1, state.model.params.clone()));
            state.stale = 0;
        } else {
            state.stale += 1;
            if state.stale >= cfg.patience {
                state.finished = true;
            }
        }
    }
    Ok(())
}

/// Trains from scratch and returns the best-validation model.
pub fn train_mptpropnet(
    train: &[Sequence],
    val: &[Sequence],
    config: FusionConfig,
    ablation: Ablation,
    seed: u64,
) -> Result<(FusionModel, Vec<EpochRecord>)> {
    let mut state = TrainState::new(config, ablation, seed)?;
    train_continue(&mut state, train, val)?;
    Ok((state.best_model(), state.history))
}
