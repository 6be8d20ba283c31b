//! HSAT-lite: a per-token binary tagger over `[CLS] seed title, seed abstract
//! [SEP] similar title`, with a logistic model on word-level match features
//! in place of a transformer encoder.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{IdfTable, PairExample};
use crate::error::{Error, Result};
use crate::eval::{aggregate, set_counts, Averaging};
use crate::explain::{EmbeddingTable, Prediction, Stopwords};
use crate::tokenize::{
    align_words, project_down, project_labels, SubwordAlignment, SubwordVocab, WordToken, SEP_MARKER,
    START_MARKER,
};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_MAX_LEN: usize = 512;

/// Segment 0 is the seed side, segment 1 the similar title.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedInput {
    pub tokens: Vec<String>,
    pub segment_ids: Vec<u8>,
    pub labels: Vec<u8>,
    /// Index of the first similar-title subword.
    pub similar_start: usize,
    pub similar: SubwordAlignment,
    /// Seed words with at least one subword left after truncation.
    pub seed_title_words: usize,
    pub seed_abstract_words: usize,
}

fn lower_words(tokens: &[WordToken]) -> Vec<String> {
    tokens.iter().map(WordToken::lower).collect()
}

/// Number of words in `alignment` that keep a subword when it is cut to
/// `keep` subwords.
fn words_kept(alignment: &SubwordAlignment, keep: usize) -> usize {
    match keep {
        0 => 0,
        k => alignment.word_of_subword[k - 1] + 1,
    }
}

/// Truncates the abstract from the right, then the seed title, so that the
/// similar title always fits.
pub fn build_tagged_input(example: &PairExample, vocab: &SubwordVocab, max_len: usize) -> Result<TaggedInput> {
    let similar = align_words(&example.similar_lower(), vocab);
    if similar.len() + 2 > max_len {
        return Err(Error::Invalid(format!(
            "pair ({}, {}): similar title needs {} subwords, max_len is {max_len}",
            example.seed_id,
            example.similar_id,
            similar.len() + 2
        )));
    }
    let title = align_words(&lower_words(&example.seed_title_tokens), vocab);
    let abs = align_words(&lower_words(&example.seed_abstract_tokens), vocab);
    let budget = max_len - 2 - similar.len();
    let keep_title = title.len().min(budget);
    let keep_abs = abs.len().min(budget - keep_title);

    let gold: Vec<u8> = example
        .similar_lower()
        .iter()
        .map(|t| u8::from(example.gold_tokens.contains(t)))
        .collect();
    let gold_words: BTreeSet<usize> = gold.iter().enumerate().filter(|(_, &g)| g == 1).map(|(i, _)| i).collect();
    let similar_labels = project_down(&similar, &gold_words);

    let seed_len = 1 + keep_title + keep_abs;
    let mut tokens = Vec::with_capacity(seed_len + 1 + similar.len());
    tokens.push(START_MARKER.to_string());
    tokens.extend_from_slice(&title.subwords[..keep_title]);
    tokens.extend_from_slice(&abs.subwords[..keep_abs]);
    tokens.push(SEP_MARKER.to_string());
    let similar_start = tokens.len();
    tokens.extend_from_slice(&similar.subwords);

    let mut segment_ids = vec![0u8; similar_start];
    segment_ids.resize(tokens.len(), 1);
    let mut labels = vec![0u8; similar_start];
    labels.extend(similar_labels);

    Ok(TaggedInput {
        tokens,
        segment_ids,
        labels,
        similar_start,
        seed_title_words: words_kept(&title, keep_title),
        seed_abstract_words: words_kept(&abs, keep_abs),
        similar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Separate seed-title and seed-abstract match indicators.
    #[default]
    Split,
    /// One indicator for a match anywhere on the seed side.
    Merged,
}

impl FeatureSet {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            FeatureSet::Split => &[
                "in_seed_title",
                "in_seed_abstract",
                "idf",
                "max_cos",
                "sum_cos",
                "rel_position",
                "token_length",
                "is_stopword",
                "bias",
            ],
            FeatureSet::Merged => &[
                "in_seed_any",
                "idf",
                "max_cos",
                "sum_cos",
                "rel_position",
                "token_length",
                "is_stopword",
                "bias",
            ],
        }
    }

    pub fn dim(self) -> usize {
        self.names().len()
    }
}

/// Read-only resources for feature extraction.
#[derive(Clone, Copy)]
pub struct FeatureContext<'a> {
    pub idf: &'a IdfTable,
    pub stopwords: &'a Stopwords,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub vocab: &'a SubwordVocab,
    pub feature_set: FeatureSet,
    pub max_len: usize,
}

/// An example reduced to one feature row and one label per similar-title
/// subword.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub alignment: SubwordAlignment,
    pub gold: BTreeSet<String>,
    pub title: Vec<WordToken>,
}

/// Word-level features for every similar-title word.
pub fn word_features(example: &PairExample, input: &TaggedInput, ctx: &FeatureContext) -> Vec<Vec<f64>> {
    let seed_title: Vec<String> = lower_words(&example.seed_title_tokens[..input.seed_title_words]);
    let in_title: HashSet<&str> = seed_title.iter().map(String::as_str).collect();
    let abs: Vec<String> = lower_words(&example.seed_abstract_tokens[..input.seed_abstract_words]);
    let in_abs: HashSet<&str> = abs.iter().map(String::as_str).collect();
    let max_idf = ctx.idf.max_idf().max(f64::MIN_POSITIVE);
    let words = example.similar_lower();
    let n = words.len();
    words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = f64::from(u8::from(in_title.contains(w.as_str())));
            let a = f64::from(u8::from(in_abs.contains(w.as_str())));
            let (max_cos, sum_cos) = match ctx.embeddings {
                Some(table) => seed_title.iter().fold((0.0f64, 0.0f64), |(m, s), st| {
                    let c = table.cosine(w, st);
                    (m.max(c), s + c)
                }),
                None => (0.0, 0.0),
            };
            let rest = [
                ctx.idf.idf(w) / max_idf,
                max_cos,
                sum_cos,
                if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 },
                w.chars().count().min(20) as f64 / 20.0,
                f64::from(u8::from(ctx.stopwords.contains(w))),
                1.0,
            ];
            let mut row = match ctx.feature_set {
                FeatureSet::Split => vec![t, a],
                FeatureSet::Merged => vec![t.max(a)],
            };
            row.extend_from_slice(&rest);
            row
        })
        .collect()
}

pub fn encode(example: &PairExample, ctx: &FeatureContext) -> Result<Encoded> {
    let input = build_tagged_input(example, ctx.vocab, ctx.max_len)?;
    let per_word = word_features(example, &input, ctx);
    let features = input
        .similar
        .word_of_subword
        .iter()
        .map(|&w| per_word[w].clone())
        .collect();
    let labels = input.labels[input.similar_start..].iter().map(|&l| f64::from(l)).collect();
    Ok(Encoded {
        features,
        labels,
        alignment: input.similar,
        gold: example.gold_tokens.clone(),
        title: example.similar_title_tokens.clone(),
    })
}

pub fn encode_all(examples: &[PairExample], ctx: &FeatureContext) -> Result<Vec<Encoded>> {
    examples.par_iter().map(|e| encode(e, ctx)).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Per-subword probabilities `σ(w·x)`.
pub fn forward(weights: &[f64], features: &[Vec<f64>]) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|x| {
            if x.len() != weights.len() {
                return Err(Error::LengthMismatch {
                    what: "feature row",
                    expected: weights.len(),
                    got: x.len(),
                });
            }
            Ok(sigmoid(dot(weights, x)))
        })
        .collect()
}

/// Binary cross-entropy of one row from its logit, stable for large |z|.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Loss sum, gradient sum and row count for one instance.
fn instance_loss_grad(weights: &[f64], enc: &Encoded) -> (f64, Vec<f64>, usize) {
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    for (x, &y) in enc.features.iter().zip(&enc.labels) {
        let z = dot(weights, x);
        loss += bce_from_logit(z, y);
        let d = sigmoid(z) - y;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += d * xi;
        }
    }
    (loss, grad, enc.labels.len())
}

/// Mean binary cross-entropy over the similar-title subwords of `batch` and
/// its gradient. Per-instance terms are summed in batch order.
pub fn loss_and_grad(weights: &[f64], batch: &[&Encoded]) -> Result<(f64, Vec<f64>)> {
    if let Some(bad) = batch
        .iter()
        .flat_map(|e| &e.features)
        .find(|x| x.len() != weights.len())
    {
        return Err(Error::LengthMismatch {
            what: "feature row",
            expected: weights.len(),
            got: bad.len(),
        });
    }
    let parts: Vec<(f64, Vec<f64>, usize)> =
        batch.par_iter().map(|e| instance_loss_grad(weights, e)).collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut rows = 0usize;
    for (l, g, n) in parts {
        loss += l;
        rows += n;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if rows == 0 {
        return Err(Error::Invalid("batch has no similar-title tokens".into()));
    }
    let n = rows as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier on `lr`; a linear model needs far larger steps than a
    /// pretrained encoder.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// `None` resolves to `max(100, total_steps / 10)`.
    pub warmup_steps: Option<u64>,
    pub total_steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    pub threshold: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            lr_scale: 1000.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: None,
            total_steps: 2000,
            batch_size: 64,
            eval_every: 100,
            threshold: 0.5,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn warmup(&self) -> u64 {
        self.warmup_steps.unwrap_or((self.total_steps / 10).max(100))
    }

    pub fn peak_lr(&self) -> f64 {
        self.lr * self.lr_scale
    }

    /// Linear warmup to the peak, then cosine decay to 0 at `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let peak = self.peak_lr();
        let warm = self.warmup().min(self.total_steps);
        if step >= self.total_steps {
            return 0.0;
        }
        if step < warm {
            return peak * step as f64 / warm as f64;
        }
        let span = (self.total_steps - warm).max(1) as f64;
        let t = (step - warm) as f64 / span;
        peak * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerParams {
    pub weights: Vec<f64>,
    pub feature_set: FeatureSet,
    pub step: u64,
    pub config: TrainConfig,
}

impl TaggerParams {
    pub fn zeros(feature_set: FeatureSet, config: TrainConfig) -> Self {
        Self {
            weights: vec![0.0; feature_set.dim()],
            feature_set,
            step: 0,
            config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(rename = "dev_F1")]
    pub dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// The checkpoint with the best dev F1 (earliest on ties).
    pub best: TaggerParams,
    pub best_dev_f1: f64,
    pub log: Vec<LogRow>,
}

/// Word indices predicted for an encoded instance: a word is selected when
/// any of its subwords reaches `threshold`.
pub fn predict_words(weights: &[f64], enc: &Encoded, threshold: f64) -> Result<BTreeSet<usize>> {
    let labels: Vec<u8> = forward(weights, &enc.features)?
        .into_iter()
        .map(|p| u8::from(p >= threshold))
        .collect();
    project_labels(&enc.alignment, &labels)
}

pub fn predict_encoded(weights: &[f64], enc: &Encoded, threshold: f64) -> Result<Prediction> {
    Ok(Prediction::from_indices(&enc.title, &predict_words(weights, enc, threshold)?))
}

/// Macro token-level F1 over `set`.
pub fn token_f1(weights: &[f64], set: &[Encoded], threshold: f64) -> Result<f64> {
    let counts = set
        .par_iter()
        .map(|e| Ok(set_counts(&e.gold, &predict_encoded(weights, e, threshold)?.tokens)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&counts, Averaging::Macro)?.f1)
}

/// Adam with warmup and cosine decay. Batches are drawn from per-epoch
/// shuffles seeded by `config.rng_seed`.
pub fn train(
    train_set: &[Encoded],
    dev_set: &[Encoded],
    feature_set: FeatureSet,
    config: TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Invalid("training needs non-empty train and dev sets".into()));
    }
    if config.batch_size == 0 || config.total_steps == 0 {
        return Err(Error::Config("batch_size and total_steps must be positive".into()));
    }
    let dim = feature_set.dim();
    let mut params = TaggerParams::zeros(feature_set, config);
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut best: Option<(f64, TaggerParams)> = None;
    let mut log = Vec::new();
    let eval_every = config.eval_every.max(1);

    for step in 1..=config.total_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let (loss, grad) = loss_and_grad(&params.weights, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss}, weights {:?}", params.weights),
            });
        }
        let lr = config.lr_at(step);
        let bc1 = 1.0 - config.beta1.powi(step as i32);
        let bc2 = 1.0 - config.beta2.powi(step as i32);
        for i in 0..dim {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            params.weights[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + config.eps);
        }
        params.step = step;

        if step % eval_every == 0 || step == config.total_steps {
            let dev_f1 = token_f1(&params.weights, dev_set, config.threshold)?;
            log.push(LogRow {
                step,
                lr,
                train_loss: loss,
                dev_f1,
            });
            if best.as_ref().is_none_or(|(f, _)| dev_f1 > *f) {
                best = Some((dev_f1, params.clone()));
            }
        }
    }
    let (best_dev_f1, best) = best.expect("the final step is always evaluated");
    Ok(TrainOutcome { best, best_dev_f1, log })
}

pub fn write_train_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A trained model plus the subword vocabulary it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub feature_set: FeatureSet,
    pub weights: Vec<f64>,
    pub config: TrainConfig,
    pub step: u64,
    pub max_len: usize,
    /// Dimension of the embedding table the cosine features were computed
    /// with, if any.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    pub vocab: Vec<String>,
}

impl Checkpoint {
    pub fn new(params: &TaggerParams, vocab: &SubwordVocab, max_len: usize, embedding_dim: Option<usize>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            feature_names: params.feature_set.names().iter().map(|s| s.to_string()).collect(),
            feature_set: params.feature_set,
            weights: params.weights.clone(),
            config: params.config,
            step: params.step,
            max_len,
            embedding_dim,
            vocab: vocab.tokens().to_vec(),
        }
    }

    pub fn params(&self) -> TaggerParams {
        TaggerParams {
            weights: self.weights.clone(),
            feature_set: self.feature_set,
            step: self.step,
            config: self.config,
        }
    }

    pub fn vocab(&self) -> Result<SubwordVocab> {
        SubwordVocab::parse(&self.vocab.join("\n"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: path.display().to_string(),
            line: 0,
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            line: 0,
            source,
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        let names: Vec<&str> = ck.feature_names.iter().map(String::as_str).collect();
        if names != ck.feature_set.names() || ck.weights.len() != names.len() {
            return Err(Error::Invalid(format!(
                "{}: feature names or weight count do not match the feature set",
                path.display()
            )));
        }
        if ck.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid(format!("{}: non-finite weights", path.display())));
        }
        Ok(ck)
    }
}
