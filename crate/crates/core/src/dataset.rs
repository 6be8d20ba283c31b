//! Pair aggregates plus article metadata to labeled, filtered, split examples.
//!
//! Each similar-title token collects the coclick counts of every query that
//! contains it. Tokens whose max-scaled softmax score reaches `p` become the
//! gold set, capped at `cap_fraction` of the title's unique tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log_ingest::{AggregateMap, ArticleMap, PairAggregate, PairKey};
use crate::selection::{max_scaled_softmax, threshold_with_cap, Candidate};
use crate::tokenize::{word_tokenize, WordToken};
use crate::util::{read_jsonl, stable_hash, write_jsonl};

/// Per-token click totals for one similar title, in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenClickCounts {
    entries: Vec<(String, u64, usize)>,
    total: u64,
}

impl TokenClickCounts {
    /// `tokens` must be unique lowercase strings; `first_pos` their first title index.
    fn from_entries(entries: Vec<(String, u64, usize)>) -> Self {
        let total = entries.iter().map(|e| e.1).sum();
        Self { entries, total }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u64> {
        self.entries.iter().find(|e| e.0 == token).map(|e| e.1)
    }

    pub fn nonzero(&self) -> usize {
        self.entries.iter().filter(|e| e.1 > 0).count()
    }

    /// `(token, count)` in title order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|e| (e.0.as_str(), e.1))
    }

    pub fn to_map(&self) -> BTreeMap<String, u64> {
        self.iter().map(|(t, c)| (t.to_string(), c)).collect()
    }

    /// Softmax scores aligned with `iter()`.
    pub fn scores(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.entries.iter().map(|e| e.1 as f64).collect();
        max_scaled_softmax(&raw)
    }
}

/// Unique lowercase tokens of `tokens` with their first index.
pub fn unique_lower(tokens: &[WordToken]) -> Vec<(String, usize)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in tokens {
        let low = t.lower();
        if seen.insert(low.clone()) {
            out.push((low, t.word_index));
        }
    }
    out
}

/// Unique lowercase word tokens of a query.
pub fn query_tokens(query: &str) -> BTreeSet<String> {
    word_tokenize(query).iter().map(WordToken::lower).collect()
}

pub fn count_title_token_clicks(
    agg: &PairAggregate,
    similar_title_tokens: &[WordToken],
) -> TokenClickCounts {
    let mut per_token: HashMap<String, u64> = HashMap::new();
    for (q, &c) in &agg.query_counts {
        for t in query_tokens(q) {
            *per_token.entry(t).or_default() += c;
        }
    }
    let entries = unique_lower(similar_title_tokens)
        .into_iter()
        .map(|(t, pos)| {
            let c = per_token.get(&t).copied().unwrap_or(0);
            (t, c, pos)
        })
        .collect();
    TokenClickCounts::from_entries(entries)
}

/// Gold tokens in title order. Tokens never seen in a query are not eligible,
/// though they still count in the softmax denominator.
pub fn select_gold_tokens(
    counts: &TokenClickCounts,
    p: f64,
    cap_fraction: f64,
) -> Result<Vec<String>, DropReason> {
    if counts.total() == 0 {
        return Err(DropReason::NoClickedTokens);
    }
    let candidates: Vec<Candidate> = counts
        .entries
        .iter()
        .map(|(_, c, pos)| Candidate {
            raw: *c as f64,
            position: *pos,
            eligible: *c > 0,
        })
        .collect();
    Ok(threshold_with_cap(&candidates, p, cap_fraction)
        .into_iter()
        .map(|i| counts.entries[i].0.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    MissingArticle,
    MinClicks,
    MinTitleLen,
    MinNonzero,
    NoClickedTokens,
    EmptyGold,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::MissingArticle => "missing_article",
            DropReason::MinClicks => "min_clicks",
            DropReason::MinTitleLen => "min_title_len",
            DropReason::MinNonzero => "min_nonzero",
            DropReason::NoClickedTokens => "no_clicked_tokens",
            DropReason::EmptyGold => "empty_gold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_clicks: u64,
    pub min_title_len: usize,
    pub min_nonzero: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_clicks: 20,
            min_title_len: 7,
            min_nonzero: 3,
        }
    }
}

/// Keep iff clicks, title length and nonzero-token count all reach their minimums.
pub fn filter_pair(
    combined_clicks: u64,
    title_len: usize,
    nonzero_tokens: usize,
    cfg: &FilterConfig,
) -> Result<(), DropReason> {
    if combined_clicks < cfg.min_clicks {
        return Err(DropReason::MinClicks);
    }
    if title_len < cfg.min_title_len {
        return Err(DropReason::MinTitleLen);
    }
    if nonzero_tokens < cfg.min_nonzero {
        return Err(DropReason::MinNonzero);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub p: f64,
    pub cap_fraction: f64,
    pub filter: FilterConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            p: 0.05,
            cap_fraction: 0.4,
            filter: FilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub seed_id: String,
    pub similar_id: String,
    pub seed_title: String,
    pub seed_abstract: String,
    pub similar_title: String,
    pub seed_title_tokens: Vec<WordToken>,
    pub seed_abstract_tokens: Vec<WordToken>,
    pub similar_title_tokens: Vec<WordToken>,
    pub gold_tokens: BTreeSet<String>,
    pub token_counts: TokenClickCounts,
    pub combined_clicks: u64,
}

impl PairExample {
    pub fn key(&self) -> PairKey {
        (self.seed_id.clone(), self.similar_id.clone())
    }

    pub fn similar_lower(&self) -> Vec<String> {
        self.similar_title_tokens.iter().map(WordToken::lower).collect()
    }

    pub fn unique_title_tokens(&self) -> BTreeSet<String> {
        self.similar_title_tokens.iter().map(WordToken::lower).collect()
    }

    pub fn to_record(&self) -> PairRecord {
        PairRecord {
            seed_id: self.seed_id.clone(),
            similar_id: self.similar_id.clone(),
            seed_title: self.seed_title.clone(),
            seed_abstract: self.seed_abstract.clone(),
            similar_title: self.similar_title.clone(),
            token_counts: self.token_counts.to_map(),
            combined_clicks: self.combined_clicks,
            gold_tokens: self.gold_tokens.iter().cloned().collect(),
        }
    }

    /// Re-tokenizes the stored strings. Gold tokens must come from the title.
    pub fn from_record(rec: PairRecord) -> Result<Self> {
        let similar_title_tokens = word_tokenize(&rec.similar_title);
        let entries: Vec<(String, u64, usize)> = unique_lower(&similar_title_tokens)
            .into_iter()
            .map(|(t, pos)| {
                let c = rec.token_counts.get(&t).copied().unwrap_or(0);
                (t, c, pos)
            })
            .collect();
        let gold_tokens: BTreeSet<String> = rec.gold_tokens.into_iter().collect();
        if let Some(bad) = gold_tokens
            .iter()
            .find(|g| !entries.iter().any(|e| &e.0 == *g))
        {
            return Err(Error::Invalid(format!(
                "pair ({}, {}): gold token {bad:?} is not in the similar title",
                rec.seed_id, rec.similar_id
            )));
        }
        Ok(Self {
            seed_title_tokens: word_tokenize(&rec.seed_title),
            seed_abstract_tokens: word_tokenize(&rec.seed_abstract),
            similar_title_tokens,
            token_counts: TokenClickCounts::from_entries(entries),
            gold_tokens,
            seed_id: rec.seed_id,
            similar_id: rec.similar_id,
            seed_title: rec.seed_title,
            seed_abstract: rec.seed_abstract,
            similar_title: rec.similar_title,
            combined_clicks: rec.combined_clicks,
        })
    }
}

/// On-disk dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub seed_id: String,
    pub similar_id: String,
    pub seed_title: String,
    pub seed_abstract: String,
    pub similar_title: String,
    pub token_counts: BTreeMap<String, u64>,
    pub combined_clicks: u64,
    pub gold_tokens: Vec<String>,
}

/// Labels one aggregate, or says why it was dropped.
pub fn label_pair(
    agg: &PairAggregate,
    articles: &ArticleMap,
    cfg: &BuildConfig,
) -> Result<PairExample, DropReason> {
    let (Some(seed), Some(similar)) = (articles.get(&agg.seed_id), articles.get(&agg.similar_id))
    else {
        return Err(DropReason::MissingArticle);
    };
    let similar_title_tokens = word_tokenize(&similar.title);
    let counts = count_title_token_clicks(agg, &similar_title_tokens);
    filter_pair(
        agg.combined_clicks,
        similar_title_tokens.len(),
        counts.nonzero(),
        &cfg.filter,
    )?;
    let gold = select_gold_tokens(&counts, cfg.p, cfg.cap_fraction)?;
    if gold.is_empty() {
        return Err(DropReason::EmptyGold);
    }
    Ok(PairExample {
        seed_id: agg.seed_id.clone(),
        similar_id: agg.similar_id.clone(),
        seed_title: seed.title.clone(),
        seed_abstract: seed.abstract_text.clone(),
        similar_title: similar.title.clone(),
        seed_title_tokens: word_tokenize(&seed.title),
        seed_abstract_tokens: word_tokenize(&seed.abstract_text),
        similar_title_tokens,
        gold_tokens: gold.into_iter().collect(),
        token_counts: counts,
        combined_clicks: agg.combined_clicks,
    })
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    /// Kept examples ordered by (seed_id, similar_id).
    pub examples: Vec<PairExample>,
    pub dropped: BTreeMap<DropReason, u64>,
}

pub fn build_examples(aggs: &AggregateMap, articles: &ArticleMap, cfg: &BuildConfig) -> BuildReport {
    let labeled: Vec<Result<PairExample, DropReason>> = aggs
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|agg| label_pair(agg, articles, cfg))
        .collect();
    let mut report = BuildReport::default();
    for r in labeled {
        match r {
            Ok(ex) => report.examples.push(ex),
            Err(reason) => *report.dropped.entry(reason).or_default() += 1,
        }
    }
    report
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<PairExample>,
    pub dev: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

/// Seed-grouped split. Groups are ordered by a seeded hash of their seed_id
/// and poured into train, dev and test in turn, so all examples sharing a
/// seed land together and sizes track the ratios up to one group.
pub fn split_dataset(examples: Vec<PairExample>, ratios: [f64; 3], rng_seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let n = examples.len();
    let mut groups: BTreeMap<String, Vec<PairExample>> = BTreeMap::new();
    for ex in examples {
        groups.entry(ex.seed_id.clone()).or_default().push(ex);
    }
    let mut ordered: Vec<(u64, String, Vec<PairExample>)> = groups
        .into_iter()
        .map(|(seed, exs)| (stable_hash(seed.as_bytes(), rng_seed), seed, exs))
        .collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let train_end = (ratios[0] * n as f64).round() as usize;
    let dev_end = ((ratios[0] + ratios[1]) * n as f64).round() as usize;
    let mut splits = Splits::default();
    let mut offset = 0;
    for (_, _, exs) in ordered {
        let len = exs.len();
        let bucket = if offset < train_end {
            &mut splits.train
        } else if offset < dev_end {
            &mut splits.dev
        } else {
            &mut splits.test
        };
        bucket.extend(exs);
        offset += len;
    }
    for part in [&mut splits.train, &mut splits.dev, &mut splits.test] {
        part.sort_by(|a, b| (&a.seed_id, &a.similar_id).cmp(&(&b.seed_id, &b.similar_id)));
    }
    Ok(splits)
}

/// Document frequencies with the 0.5-smoothed idf shared by the overlap
/// filter and BM25.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfTable {
    doc_count: u64,
    doc_freq: HashMap<String, u64>,
    total_len: u64,
}

impl IdfTable {
    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn doc_freq(&self, token: &str) -> u64 {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, token: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq(token) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// The idf of a token no document contains; an upper bound for this table.
    pub fn max_idf(&self) -> f64 {
        let n = self.doc_count as f64;
        (1.0 + (n + 0.5) / 0.5).ln()
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_count == 0 {
            0.0
        } else {
            self.total_len as f64 / self.doc_count as f64
        }
    }
}

/// Documents are lowercase token lists; a token counts once per document.
pub fn compute_idf<D, S>(documents: &[D]) -> IdfTable
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut table = IdfTable::default();
    let mut seen = BTreeSet::new();
    for doc in documents {
        let doc = doc.as_ref();
        table.doc_count += 1;
        table.total_len += doc.len() as u64;
        seen.clear();
        for t in doc {
            seen.insert(t.as_ref());
        }
        for t in &seen {
            *table.doc_freq.entry(t.to_string()).or_default() += 1;
        }
    }
    table
}

/// Idf over every article title in the metadata.
pub fn title_idf(articles: &ArticleMap) -> IdfTable {
    let docs: Vec<Vec<String>> = articles
        .values()
        .map(|a| word_tokenize(&a.title).iter().map(WordToken::lower).collect())
        .collect();
    compute_idf(&docs)
}

pub fn write_dataset(path: &Path, examples: &[PairExample]) -> Result<()> {
    write_jsonl(path, examples.iter().map(PairExample::to_record))
}

pub fn read_dataset(path: &Path) -> Result<Vec<PairExample>> {
    read_jsonl::<PairRecord>(path)?
        .into_iter()
        .map(PairExample::from_record)
        .collect()
}
