//! End-to-end wiring shared by the CLI stages and the benchmark.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dataset::{build_examples, split_dataset, title_idf, BuildConfig, BuildReport, IdfTable, PairExample, Splits};
use crate::error::Result;
use crate::eval::{evaluate_model, stratify_by_clicks, Averaging, MetricsRow, Stratum};
use crate::explain::{Backend, EmbeddingTable, ExplainConfig, Explainer, Prediction, Stopwords};
use crate::log_ingest::aggregate_events;
use crate::synth::{generate_corpus, generate_sessions, SynthConfig, SynthCorpus};
use crate::tagger::{encode_all, predict_encoded, train, FeatureContext, FeatureSet, TrainConfig, TrainOutcome};
use crate::tokenize::{build_subword_vocab, SubwordVocab, WordToken};

pub const DEFAULT_VOCAB_SIZE: usize = 8000;

/// Lowercase words from every text field of `examples`.
pub fn vocab_corpus(examples: &[PairExample]) -> Vec<String> {
    examples
        .iter()
        .flat_map(|e| {
            e.seed_title_tokens
                .iter()
                .chain(&e.seed_abstract_tokens)
                .chain(&e.similar_title_tokens)
                .map(WordToken::lower)
        })
        .collect()
}

pub fn build_vocab(examples: &[PairExample], size: usize) -> Result<SubwordVocab> {
    build_subword_vocab(vocab_corpus(examples), size)
}

pub fn predict_backend(
    backend: Backend,
    examples: &[PairExample],
    explainer: &Explainer,
) -> Result<Vec<Option<Prediction>>> {
    examples.par_iter().map(|e| explainer.explain(backend, e)).collect()
}

pub fn predict_tagger(
    weights: &[f64],
    examples: &[PairExample],
    ctx: &FeatureContext,
    threshold: f64,
) -> Result<Vec<Option<Prediction>>> {
    let encoded = encode_all(examples, ctx)?;
    encoded
        .par_iter()
        .map(|e| predict_encoded(weights, e, threshold).map(Some))
        .collect()
}

pub fn click_strata(examples: &[PairExample]) -> Vec<Stratum> {
    let items: Vec<_> = examples.iter().map(|e| (e.key(), e.combined_clicks)).collect();
    stratify_by_clicks(&items)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub build: BuildConfig,
    pub split: [f64; 3],
    pub vocab_size: usize,
    pub max_len: usize,
    pub train: TrainConfig,
    pub feature_set: FeatureSet,
    pub explain: ExplainConfig,
    pub use_embeddings: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            build: BuildConfig::default(),
            split: [0.8, 0.1, 0.1],
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_len: crate::tagger::DEFAULT_MAX_LEN,
            train: TrainConfig::default(),
            feature_set: FeatureSet::Split,
            explain: ExplainConfig::default(),
            use_embeddings: true,
        }
    }
}

impl BenchmarkConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.synth.rng_seed = seed;
        cfg.train.rng_seed = seed;
        cfg
    }
}

pub struct Prepared {
    pub corpus: SynthCorpus,
    pub report: BuildReport,
    pub splits: Splits,
    pub idf: IdfTable,
    pub embeddings: Option<EmbeddingTable>,
    pub n_events: usize,
}

/// Generates the corpus and log, then ingests, labels and splits it.
pub fn prepare(cfg: &BenchmarkConfig) -> Result<Prepared> {
    let corpus = generate_corpus(&cfg.synth)?;
    let events = generate_sessions(&corpus, &cfg.synth)?;
    let aggs = aggregate_events(&events, rayon::current_num_threads());
    let report = build_examples(&aggs, &corpus.articles, &cfg.build);
    let splits = split_dataset(report.examples.clone(), cfg.split, cfg.synth.rng_seed)?;
    let idf = title_idf(&corpus.articles);
    let embeddings = if cfg.use_embeddings {
        let mut table = EmbeddingTable::new(cfg.synth.embedding_dim);
        for (tok, v) in corpus.embeddings(cfg.synth.embedding_dim, cfg.synth.rng_seed) {
            table.insert(&tok, v)?;
        }
        Some(table)
    } else {
        None
    };
    Ok(Prepared {
        corpus,
        report,
        splits,
        idf,
        embeddings,
        n_events: events.len(),
    })
}

pub struct BenchmarkOutcome {
    pub rows: Vec<MetricsRow>,
    pub training: TrainOutcome,
    pub n_pairs: usize,
    pub n_test: usize,
    pub elapsed: Duration,
}

impl BenchmarkOutcome {
    /// Token-level F1 over the full test split.
    pub fn f1(&self, model: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.granularity == "token" && r.stratum == "all")
            .map(|r| r.f1 / 100.0)
    }
}

/// Trains the tagger and scores it with the non-learned baselines on the
/// held-out split.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let start = Instant::now();
    let prep = prepare(cfg)?;
    let stopwords = Stopwords::default();
    let vocab = build_vocab(&prep.splits.train, cfg.vocab_size)?;
    let ctx = FeatureContext {
        idf: &prep.idf,
        stopwords: &stopwords,
        embeddings: prep.embeddings.as_ref(),
        vocab: &vocab,
        feature_set: cfg.feature_set,
        max_len: cfg.max_len,
    };
    let train_enc = encode_all(&prep.splits.train, &ctx)?;
    let dev_enc = encode_all(&prep.splits.dev, &ctx)?;
    let training = train(&train_enc, &dev_enc, cfg.feature_set, cfg.train)?;

    let test = &prep.splits.test;
    let strata = click_strata(test);
    let explainer = Explainer {
        idf: &prep.idf,
        stopwords: &stopwords,
        embeddings: prep.embeddings.as_ref(),
        external: None,
        config: cfg.explain,
    };
    let mut rows = evaluate_model(
        Backend::Tagger.name(),
        test,
        &predict_tagger(&training.best.weights, test, &ctx, cfg.train.threshold)?,
        &strata,
        Averaging::Macro,
    )?;
    let mut baselines = vec![Backend::Bm25, Backend::Overlap, Backend::All];
    if prep.embeddings.is_some() {
        baselines.push(Backend::Embed);
    }
    for b in baselines {
        let preds = predict_backend(b, test, &explainer)?;
        rows.extend(evaluate_model(b.name(), test, &preds, &strata, Averaging::Macro)?);
    }
    Ok(BenchmarkOutcome {
        rows,
        training,
        n_pairs: prep.report.examples.len(),
        n_test: test.len(),
        elapsed: start.elapsed(),
    })
}
