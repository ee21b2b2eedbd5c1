//! Text CNN over the (token × embedding) grid with literal 3×3 kernels, and
//! the reduction of class probabilities to a sentiment tendency.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{tokens, Sentiment};
use crate::nn::{self, ops, Adam, NumArray, Params, Tape};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Token index map; 0 is padding and 1 is the unknown token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub min_frequency: usize,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_frequency` times, most frequent first
    /// and ties in lexicographic order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_frequency: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in texts {
            for tok in tokens(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_frequency.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let index = kept
            .into_iter()
            .enumerate()
            .map(|(i, (t, _))| (t.to_string(), i + 2))
            .collect();
        Self { min_frequency, index }
    }

    /// Builds from an explicit map; indices must be exactly `2..2+n`.
    pub fn from_map(index: BTreeMap<String, usize>) -> Result<Self> {
        let mut seen: Vec<usize> = index.values().copied().collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(i, &v)| v != i + 2) {
            return Err(Error::Config("vocabulary indices must be dense from 2".into()));
        }
        Ok(Self {
            min_frequency: 1,
            index,
        })
    }

    /// Number of rows in the embedding table, including padding and unknown.
    pub fn size(&self) -> usize {
        self.index.len() + 2
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn tokens(&self) -> impl Iterator<Item = (&str, usize)> {
        self.index.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(format!("vocabulary json: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Vocabulary =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("vocabulary json: {e}")))?;
        Self::from_map(v.index.clone())?;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Token indices padded or truncated to `max_len`.
pub fn encode(clean_text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens(clean_text).take(max_len).map(|t| vocab.get(t)).collect();
    out.resize(max_len, PAD);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextCnnConfig {
    pub embed_dim: usize,
    pub filters: usize,
    pub max_len: usize,
    pub min_frequency: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for TextCnnConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            filters: 8,
            max_len: 64,
            min_frequency: 2,
            lr: 1e-3,
            epochs: 20,
            patience: 5,
            batch_size: 32,
        }
    }
}

impl TextCnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 3 || self.embed_dim < 3 {
            return Err(Error::Config(format!(
                "3x3 kernels need max_len >= 3 and embed_dim >= 3 (got {} and {})",
                self.max_len, self.embed_dim
            )));
        }
        if self.filters == 0 || self.batch_size == 0 {
            return Err(Error::Config("filters and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

fn kernel_name(i: usize) -> String {
    format!("conv_k{i}")
}

fn kernel_bias_name(i: usize) -> String {
    format!("conv_b{i}")
}

/// Randomly initialized parameters for `vocab_size` rows and `classes` outputs.
pub fn init_params(cfg: &TextCnnConfig, vocab_size: usize, classes: usize, seed: u64) -> Result<Params> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    let mut emb = nn::uniform(&mut rng, &[vocab_size, cfg.embed_dim], 0.5);
    for v in &mut emb.data_mut()[..cfg.embed_dim] {
        *v = 0.0;
    }
    p.insert("embedding", emb);
    for i in 0..cfg.filters {
        p.insert(kernel_name(i), nn::uniform(&mut rng, &[3, 3], (6.0f64 / 10.0).sqrt()));
        p.insert(kernel_bias_name(i), NumArray::zeros(&[1, 1]));
    }
    p.insert("fc_w", nn::glorot(&mut rng, cfg.filters, classes));
    p.insert("fc_b", NumArray::zeros(&[1, classes]));
    Ok(p)
}

fn filter_count(params: &Params) -> usize {
    (0..).take_while(|&i| params.get(&kernel_name(i)).is_some()).count()
}

fn check_params(params: &Params, max_len: usize) -> Result<(usize, usize)> {
    let emb = params.require("embedding")?;
    let fc = params.require("fc_w")?;
    let f = filter_count(params);
    if f == 0 || fc.rows() != f {
        return Err(Error::Checkpoint(format!(
            "text CNN has {f} kernels but fc_w is {:?}",
            fc.shape()
        )));
    }
    if max_len < 3 || emb.cols() < 3 {
        return Err(Error::Config(format!(
            "3x3 kernels need max_len >= 3 and embed_dim >= 3 (got {max_len} and {})",
            emb.cols()
        )));
    }
    Ok((f, fc.cols()))
}

/// Class probabilities for one encoded text.
pub fn textcnn_forward(indices: &[usize], params: &Params) -> Result<Vec<f64>> {
    let (f, _) = check_params(params, indices.len())?;
    let emb = params.require("embedding")?;
    let e = emb.cols();
    let mut grid = Vec::with_capacity(indices.len() * e);
    for &i in indices {
        if i >= emb.rows() {
            return Err(Error::Domain(format!("token index {i} outside embedding table")));
        }
        grid.extend_from_slice(emb.row_slice(i));
    }
    let grid = NumArray::matrix(indices.len(), e, grid)?;
    let mut h = Vec::with_capacity(f);
    for k in 0..f {
        let fmap = ops::conv2d_forward(&grid, params.require(&kernel_name(k))?, params.require(&kernel_bias_name(k))?.data()[0])?;
        h.push(ops::global_max_pool(fmap.data())?.0);
    }
    let logits = ops::linear_forward(&NumArray::row(h)?, params.require("fc_w")?, params.require("fc_b")?)?;
    ops::softmax(logits.data())
}

/// Mean cross-entropy over `examples` and its gradient.
pub fn textcnn_loss_and_grad(params: &Params, examples: &[(&[usize], usize)]) -> Result<(f64, Params)> {
    if examples.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let (f, classes) = check_params(params, examples[0].0.len())?;
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let mut rows = Vec::with_capacity(examples.len());
    let mut targets = Vec::with_capacity(examples.len());
    for (r, &(idx, class)) in examples.iter().enumerate() {
        if class >= classes {
            return Err(Error::Domain(format!("class {class} out of range for {classes} classes")));
        }
        let grid = tape.gather(bound["embedding"], idx)?;
        let mut pooled = Vec::with_capacity(f);
        for k in 0..f {
            let c = tape.conv2d(grid, bound[&kernel_name(k)], bound[&kernel_bias_name(k)])?;
            let a = tape.relu(c);
            pooled.push(tape.max_pool(a)?);
        }
        rows.push(tape.concat_cols(&pooled)?);
        targets.push((r, class));
    }
    let h = tape.concat_rows(&rows)?;
    let logits = tape.linear(h, bound["fc_w"], bound["fc_b"])?;
    let probs = tape.softmax_rows(logits);
    let ce = tape.cross_entropy(probs, &targets)?;
    let loss = tape.scale(ce, 1.0 / examples.len() as f64);
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], grads.collect(&tape, &bound)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentOutput {
    pub probs: [f64; 3],
    pub y_pos: f64,
    pub y_neg: f64,
    pub delta: f64,
    pub tendency: Sentiment,
}

pub const TENDENCY_EPSILON: f64 = 1e-6;

/// Sign of `y_pos − y_neg` with a neutral band of half-width `epsilon`.
pub fn sentiment_tendency(probs: &[f64; 3], epsilon: f64) -> Sentiment {
    let delta = probs[Sentiment::Positive.index()] - probs[Sentiment::Negative.index()];
    if delta > epsilon {
        Sentiment::Positive
    } else if delta < -epsilon {
        Sentiment::Negative
    } else {
        Sentiment::Neutral
    }
}

pub fn sentiment_output(probs: [f64; 3]) -> SentimentOutput {
    let y_pos = probs[Sentiment::Positive.index()];
    let y_neg = probs[Sentiment::Negative.index()];
    SentimentOutput {
        probs,
        y_pos,
        y_neg,
        delta: y_pos - y_neg,
        tendency: sentiment_tendency(&probs, TENDENCY_EPSILON),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// A trained classifier: vocabulary, configuration, weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCnn {
    pub vocab: Vocabulary,
    pub config: TextCnnConfig,
    pub params: Params,
    pub classes: usize,
}

impl TextCnn {
    pub fn encode(&self, clean_text: &str) -> Vec<usize> {
        encode(clean_text, &self.vocab, self.config.max_len)
    }

    pub fn predict(&self, clean_text: &str) -> Result<Vec<f64>> {
        textcnn_forward(&self.encode(clean_text), &self.params)
    }

    /// Three-class probabilities plus the tendency reduction.
    pub fn sentiment(&self, clean_text: &str) -> Result<SentimentOutput> {
        let p = self.predict(clean_text)?;
        let probs: [f64; 3] = p
            .try_into()
            .map_err(|p: Vec<f64>| Error::Config(format!("sentiment model has {} classes, expected 3", p.len())))?;
        Ok(sentiment_output(probs))
    }
}

fn mean_loss_and_accuracy(params: &Params, data: &[(Vec<usize>, usize)]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (idx, class) in data {
        let p = textcnn_forward(idx, params)?;
        loss += ops::cross_entropy_loss(&p, *class)?;
        let argmax = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        correct += usize::from(argmax == *class);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Fits a text CNN on `(clean_text, class)` pairs. The vocabulary comes
/// from the training texts only. Early stopping keeps the parameters with
/// the lowest validation loss.
pub fn train_textcnn(
    train: &[(&str, usize)],
    val: &[(&str, usize)],
    class_names: &[&str],
    cfg: &TextCnnConfig,
    seed: u64,
) -> Result<(TextCnn, Vec<EpochRecord>)> {
    cfg.validate()?;
    let classes = class_names.len();
    for (c, name) in class_names.iter().enumerate() {
        if !train.iter().any(|&(_, y)| y == c) {
            return Err(Error::Training(format!("class `{name}` has no training examples")));
        }
    }
    if let Some(&(_, y)) = train.iter().chain(val).find(|&&(_, y)| y >= classes) {
        return Err(Error::Training(format!("label {y} outside {classes} classes")));
    }
    let vocab = Vocabulary::build(train.iter().map(|&(t, _)| t), cfg.min_frequency);
    let enc = |set: &[(&str, usize)]| -> Vec<(Vec<usize>, usize)> {
        set.iter().map(|&(t, y)| (encode(t, &vocab, cfg.max_len), y)).collect()
    };
    let (train_enc, val_enc) = (enc(train), enc(val));

    let mut params = init_params(cfg, vocab.size(), classes, seed)?;
    let mut adam = Adam::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e47);
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, Params)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[usize], usize)> = chunk
                .iter()
                .map(|&i| (train_enc[i].0.as_slice(), train_enc[i].1))
                .collect();
            let (loss, grads) = textcnn_loss_and_grad(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            adam.step(&mut params, &grads)?;
        }
        let train_loss = total / train_enc.len() as f64;
        let (val_loss, val_accuracy) = if val_enc.is_empty() {
            (train_loss, f64::NAN)
        } else {
            mean_loss_and_accuracy(&params, &val_enc)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        log::debug!("textcnn epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {val_accuracy:.3}");
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((
        TextCnn {
            vocab,
            config: *cfg,
            params,
            classes,
        },
        history,
    ))
}

/// Validation accuracy of a trained model on `(text, class)` pairs.
pub fn accuracy(model: &TextCnn, data: &[(&str, usize)]) -> Result<f64> {
    let enc: Vec<(Vec<usize>, usize)> = data.iter().map(|&(t, y)| (model.encode(t), y)).collect();
    Ok(mean_loss_and_accuracy(&model.params, &enc)?.1)
}
