//! Non-learned explainers: highlight-all, seed-title overlap, BM25 against the
//! seed title, summed embedding cosine, and externally produced token scores.
//!
//! Score-producing backends feed one of two cutoffs: top-K over unique tokens,
//! or the max-scaled softmax threshold with a length cap.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{IdfTable, PairExample};
use crate::error::{Error, Result};
use crate::log_ingest::PairKey;
use crate::selection::{threshold_with_cap, Candidate};
use crate::tokenize::{is_punctuation_token, WordToken};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl Stopwords {
    pub fn parse(contents: &str) -> Self {
        Self(
            contents
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&s))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Listed words and punctuation-only tokens.
    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token) || is_punctuation_token(token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenScore {
    pub token: String,
    pub word_index: usize,
    pub score: f64,
}

/// A backend's output for one pair: unique lowercase tokens, and every title
/// position holding one of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub tokens: BTreeSet<String>,
    pub positions: BTreeSet<usize>,
}

impl Prediction {
    pub fn from_indices(title: &[WordToken], indices: &BTreeSet<usize>) -> Self {
        let tokens: BTreeSet<String> = indices
            .iter()
            .filter_map(|&i| title.get(i))
            .map(WordToken::lower)
            .collect();
        Self::from_tokens(title, tokens)
    }

    pub fn from_tokens(title: &[WordToken], tokens: BTreeSet<String>) -> Self {
        let positions = title
            .iter()
            .filter(|t| tokens.contains(&t.lower()))
            .map(|t| t.word_index)
            .collect();
        Self { tokens, positions }
    }
}

pub fn highlight_all(title: &[WordToken]) -> BTreeSet<usize> {
    (0..title.len()).collect()
}

/// Title positions whose lowercase token also occurs in the seed title,
/// excluding stopwords and tokens with idf below `idf_floor`.
pub fn overlapper(
    seed_title: &[WordToken],
    title: &[WordToken],
    stopwords: &Stopwords,
    idf: &IdfTable,
    idf_floor: f64,
) -> BTreeSet<usize> {
    let seed: HashSet<String> = seed_title.iter().map(WordToken::lower).collect();
    title
        .iter()
        .filter(|t| {
            let low = t.lower();
            seed.contains(&low) && !stopwords.contains(&low) && idf.idf(&low) >= idf_floor
        })
        .map(|t| t.word_index)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.5, b: 0.3 }
    }
}

/// Okapi BM25 contribution of one token against one document:
/// `idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl))`.
pub fn bm25_token_score(
    token: &str,
    doc: &[String],
    idf: &IdfTable,
    params: Bm25Params,
    avgdl: f64,
) -> f64 {
    let tf = doc.iter().filter(|t| t.as_str() == token).count() as f64;
    if tf == 0.0 {
        return 0.0;
    }
    let norm = 1.0 - params.b + params.b * doc.len() as f64 / avgdl;
    idf.idf(token) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::LengthMismatch {
                what: "embedding vector",
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite embedding for {token:?}")));
        }
        self.vectors.entry(token.to_lowercase()).or_insert(vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Cosine of two tokens; 0 when either is out of vocabulary or zero.
    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        match (self.get(a), self.get(b)) {
            (Some(x), Some(y)) => cosine(x, y),
            _ => 0.0,
        }
    }

    /// Word-vector text format: a `count dim` header, then `token v1 .. v_dim`.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty embedding file".into()))??;
        let mut parts = header.split_whitespace();
        let (Some(count), Some(dim), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Invalid(format!("bad embedding header {header:?}")));
        };
        let count: usize = count
            .parse()
            .map_err(|_| Error::Invalid(format!("bad embedding count {count:?}")))?;
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::Invalid(format!("bad embedding dim {dim:?}")))?;
        let mut table = Self::new(dim);
        let mut rows = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default();
            let vector = parts
                .map(|v| {
                    v.parse::<f32>()
                        .map_err(|_| Error::Invalid(format!("bad component {v:?} for {token:?}")))
                })
                .collect::<Result<Vec<f32>>>()?;
            table.insert(token, vector)?;
            rows += 1;
        }
        if rows != count {
            return Err(Error::LengthMismatch {
                what: "embedding rows",
                expected: count,
                got: rows,
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(f))
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Sum of cosines between `token` and each seed-title token.
pub fn embedding_token_relevance(token: &str, seed_title: &[String], table: &EmbeddingTable) -> f64 {
    seed_title.iter().map(|s| table.cosine(token, s)).sum()
}

/// Collapses scores to one entry per lowercase token (best score, earliest index).
fn unique_scores(scores: &[TokenScore]) -> Vec<TokenScore> {
    let mut out: Vec<TokenScore> = Vec::new();
    let mut at: HashMap<&str, usize> = HashMap::new();
    for s in scores {
        match at.get(s.token.as_str()) {
            Some(&i) => {
                let cur = &mut out[i];
                if s.score > cur.score {
                    cur.score = s.score;
                }
                cur.word_index = cur.word_index.min(s.word_index);
            }
            None => {
                at.insert(&s.token, out.len());
                out.push(s.clone());
            }
        }
    }
    out
}

/// The `k` best unique tokens. Ties go to higher idf, then earlier position.
pub fn select_top_k(scores: &[TokenScore], k: usize, idf: &IdfTable) -> BTreeSet<usize> {
    let mut uniq = unique_scores(scores);
    uniq.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| idf.idf(&b.token).total_cmp(&idf.idf(&a.token)))
            .then(a.word_index.cmp(&b.word_index))
    });
    uniq.into_iter().take(k).map(|s| s.word_index).collect()
}

/// Max-scaled softmax over unique-token scores, threshold `p`, capped at
/// `cap_fraction` of the unique tokens.
pub fn select_softmax_threshold(scores: &[TokenScore], p: f64, cap_fraction: f64) -> BTreeSet<usize> {
    let uniq = unique_scores(scores);
    let candidates: Vec<Candidate> = uniq
        .iter()
        .map(|s| Candidate {
            raw: s.score,
            position: s.word_index,
            eligible: true,
        })
        .collect();
    threshold_with_cap(&candidates, p, cap_fraction)
        .into_iter()
        .map(|i| uniq[i].word_index)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalTokenScore {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScoreRecord {
    pub seed_id: String,
    pub similar_id: String,
    pub scores: Vec<ExternalTokenScore>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores {
    pub scores: BTreeMap<PairKey, Vec<ExternalTokenScore>>,
    /// Pairs that appeared more than once; the last line won.
    pub duplicates: u64,
}

pub fn parse_external_scores<R: BufRead>(reader: R, context: &str) -> Result<ExternalScores> {
    let mut out = ExternalScores::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalScoreRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
            context: context.to_string(),
            line: i + 1,
            source,
        })?;
        if let Some(bad) = rec.scores.iter().find(|s| !s.score.is_finite()) {
            return Err(Error::Invalid(format!(
                "{context}:{}: non-finite score for {:?}",
                i + 1,
                bad.token
            )));
        }
        if out
            .scores
            .insert((rec.seed_id, rec.similar_id), rec.scores)
            .is_some()
        {
            out.duplicates += 1;
        }
    }
    Ok(out)
}

pub fn load_external_scores(path: &Path) -> Result<ExternalScores> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_external_scores(BufReader::new(f), &path.display().to_string())
}

/// Maps external token scores onto title positions (first occurrence).
/// A scored token missing from the title is an error naming the pair.
pub fn external_token_scores(
    example: &PairExample,
    scores: &[ExternalTokenScore],
) -> Result<Vec<TokenScore>> {
    let lower = example.similar_lower();
    scores
        .iter()
        .map(|s| {
            let token = s.token.to_lowercase();
            let idx = lower.iter().position(|t| *t == token).ok_or_else(|| {
                Error::Invalid(format!(
                    "pair ({}, {}): scored token {:?} is not in the similar title",
                    example.seed_id, example.similar_id, s.token
                ))
            })?;
            Ok(TokenScore {
                token,
                word_index: idx,
                score: s.score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    All,
    Overlap,
    Bm25,
    Embed,
    External,
    Tagger,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::All => "HighlightAll",
            Backend::Overlap => "Overlapper",
            Backend::Bm25 => "BM25",
            Backend::Embed => "Embedding",
            Backend::External => "External",
            Backend::Tagger => "HSAT-lite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Selection {
    TopK(usize),
    Softmax { p: f64, cap_fraction: f64 },
}

impl Selection {
    pub fn apply(&self, scores: &[TokenScore], idf: &IdfTable) -> BTreeSet<usize> {
        match *self {
            Selection::TopK(k) => select_top_k(scores, k, idf),
            Selection::Softmax { p, cap_fraction } => select_softmax_threshold(scores, p, cap_fraction),
        }
    }
}

/// Which seed text BM25 scores against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SeedDoc {
    #[default]
    Title,
    TitleAbstract,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainConfig {
    pub selection: Selection,
    pub idf_floor: f64,
    pub bm25: Bm25Params,
    pub seed_doc: SeedDoc,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            selection: Selection::TopK(3),
            idf_floor: 1.0,
            bm25: Bm25Params::default(),
            seed_doc: SeedDoc::Title,
        }
    }
}

/// Shared read-only resources for the non-learned backends.
pub struct Explainer<'a> {
    pub idf: &'a IdfTable,
    pub stopwords: &'a Stopwords,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub external: Option<&'a ExternalScores>,
    pub config: ExplainConfig,
}

impl Explainer<'_> {
    /// Per-position scores for the score-based backends.
    pub fn token_scores(&self, backend: Backend, ex: &PairExample) -> Result<Option<Vec<TokenScore>>> {
        let lower = ex.similar_lower();
        let scores = match backend {
            Backend::Bm25 => {
                let mut doc: Vec<String> = ex.seed_title_tokens.iter().map(WordToken::lower).collect();
                if self.config.seed_doc == SeedDoc::TitleAbstract {
                    doc.extend(ex.seed_abstract_tokens.iter().map(WordToken::lower));
                }
                let avgdl = match self.idf.avg_doc_len() {
                    a if a > 0.0 => a,
                    _ => 1.0,
                };
                lower
                    .iter()
                    .enumerate()
                    .map(|(i, t)| TokenScore {
                        token: t.clone(),
                        word_index: i,
                        score: bm25_token_score(t, &doc, self.idf, self.config.bm25, avgdl),
                    })
                    .collect()
            }
            Backend::Embed => {
                let table = self
                    .embeddings
                    .ok_or_else(|| Error::Config("embedding backend needs an embedding table".into()))?;
                let seed: Vec<String> = ex.seed_title_tokens.iter().map(WordToken::lower).collect();
                lower
                    .iter()
                    .enumerate()
                    .map(|(i, t)| TokenScore {
                        token: t.clone(),
                        word_index: i,
                        score: embedding_token_relevance(t, &seed, table),
                    })
                    .collect()
            }
            Backend::External => {
                let ext = self
                    .external
                    .ok_or_else(|| Error::Config("external backend needs a score file".into()))?;
                match ext.scores.get(&ex.key()) {
                    Some(s) => external_token_scores(ex, s)?,
                    None => return Ok(None),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "{} does not produce token scores",
                    other.name()
                )))
            }
        };
        Ok(Some(scores))
    }

    /// `Ok(None)` means the pair has no external scores and should be skipped.
    pub fn explain(&self, backend: Backend, ex: &PairExample) -> Result<Option<Prediction>> {
        let title = &ex.similar_title_tokens;
        let indices = match backend {
            Backend::All => highlight_all(title),
            Backend::Overlap => overlapper(
                &ex.seed_title_tokens,
                title,
                self.stopwords,
                self.idf,
                self.config.idf_floor,
            ),
            Backend::Tagger => {
                return Err(Error::Config(
                    "the tagger backend predicts through a trained checkpoint".into(),
                ))
            }
            _ => match self.token_scores(backend, ex)? {
                Some(scores) => self.config.selection.apply(&scores, self.idf),
                None => return Ok(None),
            },
        };
        Ok(Some(Prediction::from_indices(title, &indices)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub seed_id: String,
    pub similar_id: String,
    pub tokens: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::compute_idf;
    use crate::tokenize::word_tokenize;

    fn lower(s: &str) -> Vec<String> {
        word_tokenize(s).iter().map(WordToken::lower).collect()
    }

    fn words_at(title: &str, idx: &BTreeSet<usize>) -> Vec<String> {
        let toks = lower(title);
        idx.iter().map(|&i| toks[i].clone()).collect()
    }

    #[test]
    fn stopword_list_has_120_entries() {
        let s = Stopwords::default();
        assert_eq!(s.len(), 120);
        assert!(s.contains("the") && s.contains("of") && s.contains("."));
        assert!(!s.contains("x"));
    }

    #[test]
    fn highlight_all_selects_everything() {
        let t = word_tokenize("one two three four five six seven eight");
        assert_eq!(highlight_all(&t).len(), 8);
        assert!(highlight_all(&[]).is_empty());
    }

    #[test]
    fn overlapper_drops_stopwords() {
        let idf = compute_idf::<Vec<String>, String>(&[]);
        let seed = word_tokenize("Safety of X Vaccine");
        let sim = word_tokenize("Efficacy of X Vaccine");
        let got = overlapper(&seed, &sim, &Stopwords::default(), &idf, f64::NEG_INFINITY);
        assert_eq!(words_at("Efficacy of X Vaccine", &got), ["x", "vaccine"]);
        let none = overlapper(&seed, &word_tokenize("Totally different words"), &Stopwords::default(), &idf, 0.0);
        assert!(none.is_empty());
    }

    #[test]
    fn overlapper_case_study_row() {
        let seed_title = "Safety, efficacy, and the BNT162b2 mRNA COVID-19 vaccine.";
        let sim = "Safety and Efficacy of the BNT162b2 mRNA Covid-19 Vaccine.";
        let idf = compute_idf(&[lower(seed_title), lower(sim), lower("Unrelated title here.")]);
        let got = overlapper(
            &word_tokenize(seed_title),
            &word_tokenize(sim),
            &Stopwords::default(),
            &idf,
            0.0,
        );
        assert_eq!(
            words_at(sim, &got),
            ["safety", "efficacy", "bnt162b2", "mrna", "covid-19", "vaccine"]
        );
    }

    #[test]
    fn idf_floor_filters_common_tokens() {
        let docs = vec![lower("study of zeta"), lower("study of b"), lower("study of c"), lower("d")];
        let idf = compute_idf(&docs);
        let seed = word_tokenize("study zeta");
        let sim = word_tokenize("study zeta");
        let floor = idf.idf("study") + 1e-9;
        assert_eq!(
            overlapper(&seed, &sim, &Stopwords::default(), &idf, floor),
            BTreeSet::from([1])
        );
    }

    fn micro_corpus() -> (Vec<Vec<String>>, IdfTable) {
        let docs = vec![
            lower("covid vaccine dose response"),
            lower("vaccine trial in older adults"),
            lower("a dose finding trial for older adults in practice"),
        ];
        let idf = compute_idf(&docs);
        (docs, idf)
    }

    #[test]
    fn bm25_matches_closed_form() {
        let (docs, idf) = micro_corpus();
        assert_eq!(idf.avg_doc_len(), 6.0);
        let got = bm25_token_score("covid", &docs[0], &idf, Bm25Params::default(), 6.0);
        let expected = (1.0f64 + 2.5 / 1.5).ln() * 1.5 / (1.0 + 0.5 * (1.0 - 0.3 + 0.3 * 4.0 / 6.0));
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 1.0146).abs() < 1e-4);
        assert_eq!(bm25_token_score("absent", &docs[0], &idf, Bm25Params::default(), 6.0), 0.0);
    }

    #[test]
    fn bm25_increases_with_tf() {
        let (_, idf) = micro_corpus();
        let mut prev = 0.0;
        for tf in 1..30 {
            let mut doc = vec!["filler".to_string(); 10];
            doc.extend(std::iter::repeat_n("dose".to_string(), tf));
            let s = bm25_token_score("dose", &doc[..10 + tf], &idf, Bm25Params::default(), 6.0);
            let fixed_len: Vec<String> = std::iter::repeat_n("dose".to_string(), tf)
                .chain(std::iter::repeat_n("filler".to_string(), 40 - tf))
                .collect();
            let s_fixed = bm25_token_score("dose", &fixed_len, &idf, Bm25Params::default(), 6.0);
            assert!(s > 0.0);
            assert!(s_fixed > prev);
            prev = s_fixed;
        }
    }

    fn table(rows: &[(&str, &[f32])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(rows[0].1.len());
        for (tok, v) in rows {
            t.insert(tok, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn embedding_relevance_sums_cosines() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 0.0])]);
        let seed = vec!["c".to_string(), "b".to_string()];
        assert!((embedding_token_relevance("a", &seed, &t) - 1.0).abs() < 1e-12);
        assert_eq!(embedding_token_relevance("zzz", &seed, &t), 0.0);

        // cosines 0.8 and -0.2 against unit seed vectors
        let t = table(&[
            ("tok", &[1.0, 0.0]),
            ("s1", &[0.8, 0.6]),
            ("s2", &[-0.2, (1.0f32 - 0.04).sqrt()]),
        ]);
        let seed = vec!["s1".to_string(), "s2".to_string()];
        assert!((embedding_token_relevance("tok", &seed, &t) - 0.6).abs() < 1e-6);
    }

    #[test]
    fn embedding_file_format() {
        let ok = "2 3\nfoo 1 0 0\nBar 0 1 0.5\n";
        let t = EmbeddingTable::parse(ok.as_bytes()).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert!(t.get("bar").is_some());
        assert!(matches!(
            EmbeddingTable::parse("1 3\nfoo 1 0\n".as_bytes()),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(EmbeddingTable::parse("2 3\nfoo 1 0 0\n".as_bytes()).is_err());
        assert!(EmbeddingTable::parse("1 2\nfoo 1 NaN\n".as_bytes()).is_err());
    }

    fn ts(items: &[(&str, f64)]) -> Vec<TokenScore> {
        items
            .iter()
            .enumerate()
            .map(|(i, (t, s))| TokenScore {
                token: t.to_string(),
                word_index: i,
                score: *s,
            })
            .collect()
    }

    #[test]
    fn top_k_basics() {
        let idf = compute_idf::<Vec<String>, String>(&[]);
        let scores = ts(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]);
        assert_eq!(select_top_k(&scores, 2, &idf), BTreeSet::from([0, 1]));
        assert_eq!(select_top_k(&scores, 10, &idf), BTreeSet::from([0, 1, 2]));
        assert!(select_top_k(&scores, 0, &idf).is_empty());
    }

    #[test]
    fn top_k_tie_breaks_on_idf_then_position() {
        // "rare" is in one document, "common" in all three
        let idf = compute_idf(&[vec!["common", "rare"], vec!["common"], vec!["common"]]);
        let scores = ts(&[("common", 1.0), ("rare", 1.0), ("other", 0.5)]);
        assert_eq!(select_top_k(&scores, 1, &idf), BTreeSet::from([1]));
        // equal idf: earlier position wins
        let scores = ts(&[("x1", 1.0), ("x2", 1.0)]);
        assert_eq!(select_top_k(&scores, 1, &idf), BTreeSet::from([0]));
    }

    #[test]
    fn top_k_counts_unique_tokens() {
        let idf = compute_idf::<Vec<String>, String>(&[]);
        let scores = ts(&[("dose", 2.0), ("curve", 1.0), ("dose", 2.0), ("x", 0.5)]);
        assert_eq!(select_top_k(&scores, 2, &idf), BTreeSet::from([0, 1]));
    }

    #[test]
    fn softmax_selection_cases() {
        let uniform = ts(&[("a", 1.0), ("b", 1.0), ("c", 1.0), ("d", 1.0)]);
        assert!(select_softmax_threshold(&uniform, 0.26, 1.0).is_empty());
        // one dominant score: exp(1) / (exp(1) + 3 exp(0.01)) ~ 0.47
        let dominant = ts(&[("a", 0.01), ("b", 1.0), ("c", 0.01), ("d", 0.01)]);
        assert_eq!(select_softmax_threshold(&dominant, 0.3, 1.0), BTreeSet::from([1]));
        let many = ts(&[
            ("t0", 9.0), ("t1", 8.0), ("t2", 1.0), ("t3", 7.0), ("t4", 6.0),
            ("t5", 5.0), ("t6", 0.0), ("t7", 4.0), ("t8", 3.0), ("t9", 1.0),
        ]);
        assert_eq!(select_softmax_threshold(&many, 0.08, 1.0).len(), 7);
        assert_eq!(select_softmax_threshold(&many, 0.08, 0.4), BTreeSet::from([0, 1, 3, 4]));
    }

    fn example(similar: &str) -> PairExample {
        PairExample::from_record(crate::dataset::PairRecord {
            seed_id: "S".into(),
            similar_id: "T".into(),
            seed_title: "seed".into(),
            seed_abstract: String::new(),
            similar_title: similar.into(),
            token_counts: BTreeMap::new(),
            combined_clicks: 20,
            gold_tokens: vec![],
        })
        .unwrap()
    }

    #[test]
    fn external_scores_parse_and_validate() {
        let lines = concat!(
            r#"{"seed_id":"S","similar_id":"T","scores":[{"token":"Dose","score":0.9}]}"#,
            "\n",
            r#"{"seed_id":"S","similar_id":"U","scores":[]}"#,
            "\n",
            r#"{"seed_id":"S","similar_id":"T","scores":[{"token":"curve","score":0.4}]}"#,
            "\n"
        );
        let ext = parse_external_scores(lines.as_bytes(), "mem").unwrap();
        assert_eq!(ext.scores.len(), 2);
        assert_eq!(ext.duplicates, 1);
        let key = ("S".to_string(), "T".to_string());
        assert_eq!(ext.scores[&key][0].token, "curve");

        let ex = example("dose response curve");
        let mapped = external_token_scores(&ex, &ext.scores[&key]).unwrap();
        assert_eq!(mapped[0].word_index, 2);
        let bad = vec![ExternalTokenScore {
            token: "absent".into(),
            score: 1.0,
        }];
        let err = external_token_scores(&ex, &bad).unwrap_err().to_string();
        assert!(err.contains("(S, T)"), "{err}");

        assert!(matches!(
            parse_external_scores("{not json}\n".as_bytes(), "mem"),
            Err(Error::Json { line: 1, .. })
        ));
    }

    #[test]
    fn external_backend_skips_unknown_pairs() {
        let idf = compute_idf::<Vec<String>, String>(&[]);
        let stop = Stopwords::default();
        let ext = ExternalScores::default();
        let explainer = Explainer {
            idf: &idf,
            stopwords: &stop,
            embeddings: None,
            external: Some(&ext),
            config: ExplainConfig::default(),
        };
        assert_eq!(explainer.explain(Backend::External, &example("a b c")).unwrap(), None);
    }

    #[test]
    fn prediction_expands_duplicates() {
        let title = word_tokenize("dose response dose");
        let p = Prediction::from_indices(&title, &BTreeSet::from([0]));
        assert_eq!(p.tokens, BTreeSet::from(["dose".to_string()]));
        assert_eq!(p.positions, BTreeSet::from([0, 2]));
    }
}
