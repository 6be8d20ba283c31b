//! Command-line front end: synth, ingest, build, train, explain, eval, report.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::dataset::{build_examples, read_dataset, split_dataset, title_idf, write_dataset, BuildConfig, FilterConfig, PairExample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, read_pair_scores, stratify_by_similarity, write_metrics_csv, Averaging};
use crate::explain::{
    load_external_scores, Backend, Bm25Params, EmbeddingTable, ExplainConfig, Explainer, Prediction, PredictionRecord,
    SeedDoc, Selection, Stopwords,
};
use crate::log_ingest::{aggregate_events, read_aggregates, read_articles, read_log, write_aggregates, write_articles, write_log};
use crate::pipeline::{build_vocab, click_strata, predict_backend, predict_tagger, DEFAULT_VOCAB_SIZE};
use crate::report::{corpus_stats, emit_ab_study, read_csv, render_case, tally, write_csv, Format, KeyRow, MarkedRow, TokenSets};
use crate::synth::{generate_corpus, generate_sessions, planted_rows, write_embeddings, SynthConfig};
use crate::tagger::{encode_all, train, write_train_log, Checkpoint, FeatureContext, FeatureSet, TrainConfig, DEFAULT_MAX_LEN};
use crate::util::{read_jsonl, write_jsonl};

#[derive(Debug, Parser)]
#[command(name = "coclick", version, about = "Explain similar-article recommendations from coclick logs")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file applied before command-line flags; `stage.key=value`
    /// applies to one subcommand only
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (defaults to the number of cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, session log and embeddings
    Synth(SynthArgs),
    /// Parse a session log and aggregate coclick pairs
    Ingest(IngestArgs),
    /// Label, filter and split the aggregated pairs
    Build(BuildArgs),
    /// Train the tagger
    Train(TrainArgs),
    /// Predict explanation tokens with one backend
    Explain(ExplainArgs),
    /// Score predictions against gold labels
    Eval(EvalArgs),
    /// Case studies, A/B sheets and corpus statistics
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_articles: Option<usize>,
    #[arg(long)]
    pub cluster_size: Option<usize>,
    #[arg(long)]
    pub topics_per_cluster: Option<usize>,
    #[arg(long)]
    pub filler_vocab: Option<usize>,
    #[arg(long)]
    pub title_len_min: Option<usize>,
    #[arg(long)]
    pub title_len_max: Option<usize>,
    #[arg(long)]
    pub title_len_mean: Option<f64>,
    #[arg(long)]
    pub title_len_sd: Option<f64>,
    #[arg(long)]
    pub abstract_len: Option<usize>,
    #[arg(long)]
    pub context_words: Option<usize>,
    #[arg(long)]
    pub context_prob: Option<f64>,
    #[arg(long)]
    pub zipf_exponent: Option<f64>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub max_clicks: Option<usize>,
    #[arg(long)]
    pub same_cluster_prob: Option<f64>,
    #[arg(long)]
    pub popularity_rank_prob: Option<f64>,
    #[arg(long)]
    pub results_per_page: Option<u32>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
}

impl SynthArgs {
    fn config(&self, seed: u64) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            n_articles: self.n_articles.unwrap_or(d.n_articles),
            cluster_size: self.cluster_size.unwrap_or(d.cluster_size),
            topics_per_cluster: self.topics_per_cluster.unwrap_or(d.topics_per_cluster),
            filler_vocab: self.filler_vocab.unwrap_or(d.filler_vocab),
            title_len_min: self.title_len_min.unwrap_or(d.title_len_min),
            title_len_max: self.title_len_max.unwrap_or(d.title_len_max),
            title_len_mean: self.title_len_mean.unwrap_or(d.title_len_mean),
            title_len_sd: self.title_len_sd.unwrap_or(d.title_len_sd),
            abstract_len: self.abstract_len.unwrap_or(d.abstract_len),
            context_words: self.context_words.unwrap_or(d.context_words),
            context_prob: self.context_prob.unwrap_or(d.context_prob),
            zipf_exponent: self.zipf_exponent.unwrap_or(d.zipf_exponent),
            sessions: self.sessions.unwrap_or(d.sessions),
            max_clicks: self.max_clicks.unwrap_or(d.max_clicks),
            same_cluster_prob: self.same_cluster_prob.unwrap_or(d.same_cluster_prob),
            popularity_rank_prob: self.popularity_rank_prob.unwrap_or(d.popularity_rank_prob),
            results_per_page: self.results_per_page.unwrap_or(d.results_per_page),
            embedding_dim: self.embedding_dim.unwrap_or(d.embedding_dim),
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Aggregation shards (defaults to the thread count)
    #[arg(long)]
    pub shards: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub aggregates: PathBuf,
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Softmax threshold for gold tokens
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    #[arg(long, default_value_t = 0.4)]
    pub cap_fraction: f64,
    #[arg(long, default_value_t = 20)]
    pub min_clicks: u64,
    #[arg(long, default_value_t = 7)]
    pub min_title_len: usize,
    #[arg(long, default_value_t = 3)]
    pub min_nonzero: usize,
    /// train,dev,test ratios
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureSetArg {
    Split,
    Merged,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Article metadata; every title is an idf document
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log CSV (step, lr, train_loss, dev_F1)
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub steps: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub lr_scale: f64,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub eval_every: u64,
    #[arg(long, value_enum, default_value_t = FeatureSetArg::Split)]
    pub feature_set: FeatureSetArg,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    All,
    Overlap,
    Bm25,
    Embed,
    External,
    Tagger,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::All => Backend::All,
            BackendArg::Overlap => Backend::Overlap,
            BackendArg::Bm25 => Backend::Bm25,
            BackendArg::Embed => Backend::Embed,
            BackendArg::External => Backend::External,
            BackendArg::Tagger => Backend::Tagger,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeedDocArg {
    Title,
    TitleAbstract,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub backend: BackendArg,
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// JSONL token scores for the external backend
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// The external scores come from a generative model (default K becomes 4)
    #[arg(long)]
    pub generative: bool,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Select with the softmax threshold instead of top-K
    #[arg(long)]
    pub softmax_p: Option<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub cap_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    pub idf_floor: f64,
    #[arg(long, default_value_t = 0.5)]
    pub bm25_k1: f64,
    #[arg(long, default_value_t = 0.3)]
    pub bm25_b: f64,
    #[arg(long, value_enum, default_value_t = SeedDocArg::Title)]
    pub seed_doc: SeedDocArg,
    /// Tagger decision threshold
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// name=path of a predictions file; repeatable
    #[arg(long = "predictions", required = true)]
    pub predictions: Vec<String>,
    /// JSONL pair similarity scores for quintile strata
    #[arg(long)]
    pub pair_scores: Option<PathBuf>,
    /// Pool counts instead of averaging per instance
    #[arg(long)]
    pub micro: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Plain,
    Markdown,
    Html,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Highlighted titles per model
    Case {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "predictions", required = true)]
        predictions: Vec<String>,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
        #[arg(long, default_value_t = 10)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blinded two-model preference sheet and answer key
    Ab {
        #[arg(long)]
        dataset: PathBuf,
        /// name=path
        #[arg(long)]
        a: String,
        /// name=path
        #[arg(long)]
        b: String,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        sheet: PathBuf,
        #[arg(long)]
        key: PathBuf,
    },
    /// Count preferences from a marked sheet
    Tally {
        #[arg(long)]
        marked: PathBuf,
        #[arg(long)]
        key: PathBuf,
    },
    /// Click and title-length statistics
    Stats {
        #[arg(long = "dataset", required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
        thresholds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Expands `--config` into flags placed right after the subcommand so that
/// later command-line flags override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let mut root = Cli::command();
    root.build();
    let sub_names: Vec<String> = root.get_subcommands().map(|c| c.get_name().to_string()).collect();
    let Some(sub_at) = strs.iter().position(|a| sub_names.contains(a)) else {
        return Ok(args);
    };
    let mut cmd = root.find_subcommand(&strs[sub_at]).expect("listed").clone();
    let mut insert_at = sub_at + 1;
    let mut stage = strs[sub_at].clone();
    if let Some(inner) = strs.get(sub_at + 1).and_then(|n| cmd.find_subcommand(n).cloned()) {
        stage = format!("{stage}.{}", inner.get_name());
        cmd = inner;
        insert_at += 1;
    }
    let longs: BTreeMap<String, bool> = cmd
        .get_arguments()
        .chain(root.get_arguments())
        .filter_map(|a| a.get_long().map(|l| (l.to_string(), a.get_action().takes_values())))
        .collect();

    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{path}:{}: expected key=value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let (scoped, name) = match key.rsplit_once('.') {
            Some((scope, name)) if scope == stage || stage.starts_with(&format!("{scope}.")) => (true, name.to_string()),
            Some(_) => continue,
            None => (false, key.clone()),
        };
        if name == "config" {
            continue;
        }
        match longs.get(&name) {
            Some(true) => extra.push(format!("--{name}={value}")),
            Some(false) => match value {
                "true" => extra.push(format!("--{name}")),
                "false" => {}
                _ => return Err(Error::Config(format!("{path}:{}: {name} takes true or false", n + 1))),
            },
            None if scoped => {
                return Err(Error::Config(format!("{path}:{}: {stage} has no option {name}", n + 1)));
            }
            None => {}
        }
    }
    let mut out: Vec<OsString> = args[..insert_at].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&args[insert_at..]);
    Ok(out)
}

/// Parses and runs; returns the process exit code.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Ingest(a) => ingest(a),
        Command::Build(a) => build(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Explain(a) => explain(a),
        Command::Eval(a) => eval(a),
        Command::Report(r) => report(r, cli.seed),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let cfg = a.config(seed);
    create_dir(&a.out_dir)?;
    let corpus = generate_corpus(&cfg)?;
    let events = generate_sessions(&corpus, &cfg)?;
    write_log(&a.out_dir.join("log.tsv"), &events)?;
    write_articles(&a.out_dir.join("articles.tsv"), &corpus.articles)?;
    write_embeddings(
        &a.out_dir.join("embeddings.txt"),
        &corpus.embeddings(cfg.embedding_dim, seed),
        cfg.embedding_dim,
    )?;
    write_jsonl(&a.out_dir.join("planted.jsonl"), planted_rows(&corpus))?;
    eprintln!("synth: {} articles, {} events", corpus.articles.len(), events.len());
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let parsed = read_log(&a.log)?;
    let shards = a.shards.unwrap_or_else(rayon::current_num_threads).max(1);
    let aggs = aggregate_events(&parsed.events, shards);
    write_aggregates(&a.out, &aggs)?;
    eprintln!(
        "ingest: {} events, {} malformed lines, {} pairs",
        parsed.events.len(),
        parsed.malformed,
        aggs.len()
    );
    Ok(())
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad split ratios {s:?}")))?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("split needs three ratios, got {s:?}")))
}

fn build(a: &BuildArgs, seed: u64) -> Result<()> {
    let cfg = BuildConfig {
        p: a.p,
        cap_fraction: a.cap_fraction,
        filter: FilterConfig {
            min_clicks: a.min_clicks,
            min_title_len: a.min_title_len,
            min_nonzero: a.min_nonzero,
        },
    };
    let aggs = read_aggregates(&a.aggregates)?;
    let articles = read_articles(&a.articles)?;
    let report = build_examples(&aggs, &articles, &cfg);
    let kept = report.examples.len();
    let splits = split_dataset(report.examples, parse_ratios(&a.split)?, seed)?;
    create_dir(&a.out_dir)?;
    write_dataset(&a.out_dir.join("train.jsonl"), &splits.train)?;
    write_dataset(&a.out_dir.join("dev.jsonl"), &splits.dev)?;
    write_dataset(&a.out_dir.join("test.jsonl"), &splits.test)?;
    let dropped: BTreeMap<&str, u64> = report.dropped.iter().map(|(r, n)| (r.as_str(), *n)).collect();
    let summary = serde_json::json!({
        "pairs_in": aggs.len(),
        "kept": kept,
        "dropped": dropped,
        "train": splits.train.len(),
        "dev": splits.dev.len(),
        "test": splits.test.len(),
    });
    let path = a.out_dir.join("build_report.json");
    std::fs::write(&path, format!("{summary:#}\n")).map_err(|e| Error::io(&path, e))?;
    eprintln!(
        "build: kept {kept} of {} pairs (train {}, dev {}, test {})",
        aggs.len(),
        splits.train.len(),
        splits.dev.len(),
        splits.test.len()
    );
    Ok(())
}

fn load_embeddings(path: Option<&PathBuf>) -> Result<Option<EmbeddingTable>> {
    path.map(|p| EmbeddingTable::load(p)).transpose()
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<()> {
    let train_set = read_dataset(&a.train)?;
    let dev_set = read_dataset(&a.dev)?;
    let idf = title_idf(&read_articles(&a.articles)?);
    let embeddings = load_embeddings(a.embeddings.as_ref())?;
    let stopwords = Stopwords::default();
    let vocab = build_vocab(&train_set, a.vocab_size)?;
    let feature_set = match a.feature_set {
        FeatureSetArg::Split => FeatureSet::Split,
        FeatureSetArg::Merged => FeatureSet::Merged,
    };
    let ctx = FeatureContext {
        idf: &idf,
        stopwords: &stopwords,
        embeddings: embeddings.as_ref(),
        vocab: &vocab,
        feature_set,
        max_len: a.max_len,
    };
    let config = TrainConfig {
        lr: a.lr,
        lr_scale: a.lr_scale,
        warmup_steps: a.warmup_steps,
        total_steps: a.steps,
        batch_size: a.batch_size,
        eval_every: a.eval_every,
        threshold: a.threshold,
        rng_seed: seed,
        ..TrainConfig::default()
    };
    let outcome = train(&encode_all(&train_set, &ctx)?, &encode_all(&dev_set, &ctx)?, feature_set, config)?;
    Checkpoint::new(&outcome.best, &vocab, a.max_len, embeddings.as_ref().map(EmbeddingTable::dim)).save(&a.out)?;
    if let Some(log) = &a.log {
        write_train_log(log, &outcome.log)?;
    }
    eprintln!(
        "train: best dev F1 {:.4} at step {}",
        outcome.best_dev_f1, outcome.best.step
    );
    Ok(())
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let examples = read_dataset(&a.dataset)?;
    let idf = title_idf(&read_articles(&a.articles)?);
    let stopwords = match &a.stopwords {
        Some(p) => Stopwords::load(p)?,
        None => Stopwords::default(),
    };
    let embeddings = load_embeddings(a.embeddings.as_ref())?;
    let backend = Backend::from(a.backend);
    let preds = if backend == Backend::Tagger {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("--checkpoint is required for the tagger backend".into()))?;
        let ck = Checkpoint::load(path)?;
        if ck.embedding_dim != embeddings.as_ref().map(EmbeddingTable::dim) {
            return Err(Error::Config(format!(
                "checkpoint was trained with embedding dim {:?}; pass matching --embeddings",
                ck.embedding_dim
            )));
        }
        let vocab = ck.vocab()?;
        let ctx = FeatureContext {
            idf: &idf,
            stopwords: &stopwords,
            embeddings: embeddings.as_ref(),
            vocab: &vocab,
            feature_set: ck.feature_set,
            max_len: ck.max_len,
        };
        predict_tagger(&ck.weights, &examples, &ctx, a.threshold)?
    } else {
        let external = a.scores.as_ref().map(|p| load_external_scores(p)).transpose()?;
        if let Some(ext) = &external {
            if ext.duplicates > 0 {
                eprintln!("warning: {} duplicate pairs in score file; last line kept", ext.duplicates);
            }
        }
        let selection = match a.softmax_p {
            Some(p) => Selection::Softmax {
                p,
                cap_fraction: a.cap_fraction,
            },
            None => Selection::TopK(a.top_k.unwrap_or(if a.generative { 4 } else { 3 })),
        };
        let explainer = Explainer {
            idf: &idf,
            stopwords: &stopwords,
            embeddings: embeddings.as_ref(),
            external: external.as_ref(),
            config: ExplainConfig {
                selection,
                idf_floor: a.idf_floor,
                bm25: Bm25Params {
                    k1: a.bm25_k1,
                    b: a.bm25_b,
                },
                seed_doc: match a.seed_doc {
                    SeedDocArg::Title => SeedDoc::Title,
                    SeedDocArg::TitleAbstract => SeedDoc::TitleAbstract,
                },
            },
        };
        predict_backend(backend, &examples, &explainer)?
    };
    let skipped = preds.iter().filter(|p| p.is_none()).count();
    if skipped > 0 {
        eprintln!("warning: {skipped} pairs had no scores and were skipped");
    }
    write_jsonl(
        &a.out,
        examples.iter().zip(&preds).filter_map(|(e, p)| {
            p.as_ref().map(|p| PredictionRecord {
                seed_id: e.seed_id.clone(),
                similar_id: e.similar_id.clone(),
                tokens: p.tokens.iter().cloned().collect(),
            })
        }),
    )?;
    eprintln!("explain: {} predictions from {}", preds.len() - skipped, backend.name());
    Ok(())
}

fn parse_named(spec: &str) -> Result<(String, PathBuf)> {
    spec.split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
        .ok_or_else(|| Error::Config(format!("expected name=path, got {spec:?}")))
}

fn read_token_sets(path: &Path) -> Result<TokenSets> {
    let rows: Vec<PredictionRecord> = read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|r| ((r.seed_id, r.similar_id), r.tokens.into_iter().map(|t| t.to_lowercase()).collect()))
        .collect())
}

fn align_predictions(examples: &[PairExample], sets: &TokenSets) -> Vec<Option<Prediction>> {
    examples
        .iter()
        .map(|e| {
            sets.get(&e.key())
                .map(|tokens| Prediction::from_tokens(&e.similar_title_tokens, tokens.clone()))
        })
        .collect()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let examples = read_dataset(&a.dataset)?;
    let averaging = if a.micro { Averaging::Micro } else { Averaging::Macro };
    let mut strata = click_strata(&examples);
    if let Some(path) = &a.pair_scores {
        let scores = read_pair_scores(path)?;
        let keys: Vec<_> = examples.iter().map(PairExample::key).collect();
        let (quintiles, missing) = stratify_by_similarity(&keys, &scores);
        if missing > 0 {
            eprintln!("warning: {missing} pairs have no similarity score");
        }
        strata.extend(quintiles);
    }
    let mut rows = Vec::new();
    for spec in &a.predictions {
        let (name, path) = parse_named(spec)?;
        let preds = align_predictions(&examples, &read_token_sets(&path)?);
        let missing = preds.iter().filter(|p| p.is_none()).count();
        if missing > 0 {
            eprintln!("warning: {name} has no prediction for {missing} pairs");
        }
        rows.extend(evaluate_model(&name, &examples, &preds, &strata, averaging)?);
    }
    let f = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_metrics_csv(BufWriter::new(f), &rows)?;
    for r in rows.iter().filter(|r| r.stratum == "all" && r.granularity == "token") {
        eprintln!("eval: {} R {} P {} F1 {} L {}", r.model, r.recall, r.precision, r.f1, r.avg_pred_len);
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn report(r: &ReportCommand, seed: u64) -> Result<()> {
    match r {
        ReportCommand::Case {
            dataset,
            predictions,
            format,
            limit,
            out,
        } => {
            let examples = read_dataset(dataset)?;
            let models = predictions
                .iter()
                .map(|s| {
                    let (n, p) = parse_named(s)?;
                    Ok((n, read_token_sets(&p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let format = match format {
                FormatArg::Plain => Format::Plain,
                FormatArg::Markdown => Format::Markdown,
                FormatArg::Html => Format::Html,
            };
            let mut text = String::new();
            for ex in examples.iter().take(*limit) {
                let key = ex.key();
                let preds: Vec<(&str, &std::collections::BTreeSet<String>)> = models
                    .iter()
                    .filter_map(|(n, sets)| sets.get(&key).map(|s| (n.as_str(), s)))
                    .collect();
                text.push_str(&render_case(ex, &preds, format)?);
                text.push('\n');
            }
            write_text(out, &text)
        }
        ReportCommand::Ab {
            dataset,
            a,
            b,
            limit,
            sheet,
            key,
        } => {
            let mut examples = read_dataset(dataset)?;
            if let Some(n) = limit {
                examples.truncate(*n);
            }
            let (an, ap) = parse_named(a)?;
            let (bn, bp) = parse_named(b)?;
            let keep = |sets: TokenSets| -> TokenSets {
                examples
                    .iter()
                    .filter_map(|e| sets.get(&e.key()).map(|s| (e.key(), s.clone())))
                    .collect()
            };
            let (sa, sb) = (keep(read_token_sets(&ap)?), keep(read_token_sets(&bp)?));
            let (rows, answers) = emit_ab_study(&examples, (&an, &sa), (&bn, &sb), seed)?;
            write_csv(create(sheet)?, &rows)?;
            write_csv(create(key)?, &answers)
        }
        ReportCommand::Tally { marked, key } => {
            let open = |p: &PathBuf| File::open(p).map_err(|e| Error::io(p, e));
            let marked: Vec<MarkedRow> = read_csv(open(marked)?)?;
            let key: Vec<KeyRow> = read_csv(open(key)?)?;
            let t = tally(&marked, &key)?;
            let mut out = std::io::stdout().lock();
            for (model, n) in &t.preferred {
                writeln!(out, "{model},{n}")?;
            }
            writeln!(out, "neutral,{}", t.neutral)?;
            Ok(())
        }
        ReportCommand::Stats {
            datasets,
            thresholds,
            out,
        } => {
            let mut examples = Vec::new();
            for d in datasets {
                examples.extend(read_dataset(d)?);
            }
            let text = corpus_stats(&examples, thresholds)?.to_markdown();
            match out {
                Some(p) => write_text(p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}
