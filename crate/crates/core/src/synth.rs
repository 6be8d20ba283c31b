//! Synthetic articles and search sessions with planted topic structure.
//!
//! Articles come in clusters that share a pool of topic tokens. Queries are
//! drawn from the target article's title topics, and co-clicks mostly stay
//! within the target's cluster, so the click-derived gold for a pair should be
//! the cluster topics present in the similar title.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log_ingest::{Article, ArticleMap, SessionEvent};
use crate::tokenize::word_tokenize;

const GENERIC_WORDS: &[&str] = &[
    "study", "patients", "trial", "analysis", "effects", "clinical", "treatment", "risk",
    "outcomes", "cohort", "review", "associated", "disease", "therapy", "evaluation", "role",
    "model", "factors", "children", "adults", "cells", "expression", "novel", "systematic",
];

const TITLE_STOPWORDS: &[&str] = &["of", "the", "in", "and", "with", "for", "a", "on", "by", "to", "from", "among"];

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_articles: usize,
    pub cluster_size: usize,
    /// Size of each cluster's topic pool.
    pub topics_per_cluster: usize,
    pub filler_vocab: usize,
    pub title_len_min: usize,
    pub title_len_max: usize,
    pub title_len_mean: f64,
    pub title_len_sd: f64,
    pub abstract_len: usize,
    /// Generic words attached to each cluster, and the chance each one
    /// appears in a member title.
    pub context_words: usize,
    pub context_prob: f64,
    pub zipf_exponent: f64,
    pub sessions: usize,
    pub max_clicks: usize,
    pub same_cluster_prob: f64,
    /// Probability that results are ranked in popularity order.
    pub popularity_rank_prob: f64,
    pub results_per_page: u32,
    pub embedding_dim: usize,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_articles: 6000,
            cluster_size: 8,
            topics_per_cluster: 4,
            filler_vocab: 3000,
            title_len_min: 7,
            title_len_max: 25,
            title_len_mean: 17.0,
            title_len_sd: 4.0,
            abstract_len: 80,
            context_words: 2,
            context_prob: 0.7,
            zipf_exponent: 1.1,
            sessions: 1_100_000,
            max_clicks: 3,
            same_cluster_prob: 0.9,
            popularity_rank_prob: 0.8,
            results_per_page: 20,
            embedding_dim: 16,
            rng_seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_articles < 2 || self.cluster_size < 2 {
            return fail("need at least 2 articles and a cluster size of at least 2");
        }
        if self.title_len_min < 7 || self.title_len_max < self.title_len_min {
            return fail("title length bounds must satisfy 7 <= min <= max");
        }
        if self.context_words > GENERIC_WORDS.len() {
            return fail("context_words exceeds the generic vocabulary");
        }
        if self.topics_per_cluster < 3 {
            return fail("topics_per_cluster must be at least 3");
        }
        if self.zipf_exponent <= 1.0 {
            return fail("zipf_exponent must be greater than 1");
        }
        if !(1..=self.results_per_page as usize).contains(&self.max_clicks) {
            return fail("max_clicks must be between 1 and results_per_page");
        }
        if !(0.0..=1.0).contains(&self.same_cluster_prob) || !(0.0..=1.0).contains(&self.popularity_rank_prob)
            || !(0.0..=1.0).contains(&self.context_prob)
        {
            return fail("probabilities must lie in [0, 1]");
        }
        if self.filler_vocab == 0 || self.embedding_dim == 0 || self.title_len_sd < 0.0 {
            return fail("filler_vocab and embedding_dim must be positive");
        }
        Ok(())
    }

    pub fn n_clusters(&self) -> usize {
        self.n_articles.div_ceil(self.cluster_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub articles: ArticleMap,
    /// Article ids in popularity order (index 0 is the most popular).
    pub ids: Vec<String>,
    pub cluster_of: Vec<usize>,
    pub cluster_topics: Vec<Vec<String>>,
    /// Topic tokens placed in each article's title, by popularity index.
    pub title_topics: Vec<Vec<String>>,
    pub generic: Vec<String>,
    pub fillers: Vec<String>,
}

pub fn article_id(index: usize) -> String {
    format!("{:08}", 10_000_000 + index)
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(char::from(*CONSONANTS.choose(rng).expect("non-empty")));
        w.push(char::from(*VOWELS.choose(rng).expect("non-empty")));
    }
    w
}

fn unique_words(rng: &mut ChaCha8Rng, n: usize, syllables: (usize, usize), taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(syllables.0..=syllables.1);
        let w = pseudo_word(rng, len);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut cs = w.chars();
    match cs.next() {
        Some(c) => c.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut taken: HashSet<String> = GENERIC_WORDS
        .iter()
        .chain(TITLE_STOPWORDS)
        .map(|s| s.to_string())
        .collect();
    let n_clusters = cfg.n_clusters();
    let cluster_topics: Vec<Vec<String>> = (0..n_clusters)
        .map(|_| {
            let mut words = unique_words(&mut rng, cfg.topics_per_cluster, (3, 4), &mut taken);
            for w in &mut words {
                if rng.random_bool(0.1) {
                    w.push_str(&format!("-{}", rng.random_range(1..100)));
                }
            }
            words
        })
        .collect();
    let fillers = unique_words(&mut rng, cfg.filler_vocab, (2, 3), &mut taken);
    let generic: Vec<String> = GENERIC_WORDS.iter().map(|s| s.to_string()).collect();
    // generic words a cluster's titles tend to share without users querying them
    let context: Vec<Vec<String>> = (0..n_clusters)
        .map(|_| generic.choose_multiple(&mut rng, cfg.context_words).cloned().collect())
        .collect();
    let len_dist = Normal::new(cfg.title_len_mean, cfg.title_len_sd)
        .map_err(|e| Error::Config(format!("title length distribution: {e}")))?;

    let mut articles = ArticleMap::new();
    let mut ids = Vec::with_capacity(cfg.n_articles);
    let mut cluster_of = Vec::with_capacity(cfg.n_articles);
    let mut title_topics = Vec::with_capacity(cfg.n_articles);
    for i in 0..cfg.n_articles {
        let cluster = i / cfg.cluster_size;
        let pool = &cluster_topics[cluster];
        let len = (len_dist.sample(&mut rng).round() as i64)
            .clamp(cfg.title_len_min as i64, cfg.title_len_max as i64) as usize;
        let n_words = len - 1;
        // at most one pool token is left out of each title
        let n_topics = rng.random_range(pool.len() - 1..=pool.len()).min(n_words);
        let mut topics: Vec<String> = pool.choose_multiple(&mut rng, n_topics).cloned().collect();
        topics.sort_by_key(|t| pool.iter().position(|p| p == t));
        let n_generic = rng.random_range(2..=4).min(n_words - n_topics);
        let n_stop = rng.random_range(2..=4).min(n_words - n_topics - n_generic);
        let mut words: Vec<String> = topics.clone();
        let mut picked: Vec<&String> = context[cluster]
            .iter()
            .filter(|_| rng.random_bool(cfg.context_prob))
            .take(n_generic)
            .collect();
        let others: Vec<&String> = generic.iter().filter(|g| !picked.contains(g)).collect();
        picked.extend(others.choose_multiple(&mut rng, n_generic - picked.len()).copied());
        words.extend(picked.into_iter().cloned());
        words.extend((0..n_stop).map(|_| TITLE_STOPWORDS.choose(&mut rng).expect("non-empty").to_string()));
        while words.len() < n_words {
            words.push(fillers.choose(&mut rng).expect("non-empty").clone());
        }
        words.shuffle(&mut rng);
        let mut title = words
            .iter()
            .enumerate()
            .map(|(j, w)| if j == 0 { capitalize(w) } else { w.clone() })
            .collect::<Vec<_>>()
            .join(" ");
        title.push('.');

        let mut abs_words: Vec<String> = pool.iter().chain(pool.iter().take(2)).cloned().collect();
        abs_words.extend(generic.choose_multiple(&mut rng, 6).cloned());
        while abs_words.len() < cfg.abstract_len {
            if rng.random_bool(0.2) {
                abs_words.push(TITLE_STOPWORDS.choose(&mut rng).expect("non-empty").to_string());
            } else {
                abs_words.push(fillers.choose(&mut rng).expect("non-empty").clone());
            }
        }
        abs_words.shuffle(&mut rng);
        let abstract_text = abs_words
            .chunks(12)
            .map(|s| format!("{}.", capitalize(&s.join(" "))))
            .collect::<Vec<_>>()
            .join(" ");

        let id = article_id(i);
        articles.insert(
            id.clone(),
            Article {
                id: id.clone(),
                title,
                abstract_text,
            },
        );
        ids.push(id);
        cluster_of.push(cluster);
        title_topics.push(topics);
    }
    Ok(SynthCorpus {
        articles,
        ids,
        cluster_of,
        cluster_topics,
        title_topics,
        generic,
        fillers,
    })
}

impl SynthCorpus {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        id.parse::<usize>().ok()?.checked_sub(10_000_000).filter(|&i| i < self.ids.len())
    }

    /// Seed-cluster topic tokens present in the similar title.
    pub fn planted_gold(&self, seed_id: &str, similar_id: &str) -> BTreeSet<String> {
        let (Some(s), Some(t)) = (self.index_of(seed_id), self.index_of(similar_id)) else {
            return BTreeSet::new();
        };
        let pool: HashSet<&String> = self.cluster_topics[self.cluster_of[s]].iter().collect();
        self.title_topics[t]
            .iter()
            .filter(|w| pool.contains(w))
            .cloned()
            .collect()
    }

    /// Embeddings with cluster structure: topic tokens sit near their
    /// cluster's centroid, every other token is an independent direction.
    pub fn embeddings(&self, dim: usize, seed: u64) -> Vec<(String, Vec<f32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3be_dd00);
        let normal = Normal::new(0.0f64, 1.0).expect("valid");
        let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| normal.sample(rng)).collect() };
        let to_f32 = |v: &[f64]| -> Vec<f32> { v.iter().map(|x| *x as f32).collect() };
        let mut out = Vec::new();
        for pool in &self.cluster_topics {
            let centroid = gauss(&mut rng);
            for w in pool {
                let noise = gauss(&mut rng);
                let v: Vec<f64> = centroid.iter().zip(&noise).map(|(c, n)| c + 0.35 * n).collect();
                out.push((w.clone(), to_f32(&v)));
            }
        }
        for w in self.generic.iter().chain(&self.fillers) {
            out.push((w.clone(), to_f32(&gauss(&mut rng))));
        }
        for w in TITLE_STOPWORDS {
            out.push((w.to_string(), to_f32(&gauss(&mut rng))));
        }
        out
    }
}

fn vary_case(rng: &mut ChaCha8Rng, w: &str) -> String {
    match rng.random_range(0..10) {
        0 => w.to_uppercase(),
        1 => capitalize(w),
        _ => w.to_string(),
    }
}

pub fn generate_sessions(corpus: &SynthCorpus, cfg: &SynthConfig) -> Result<Vec<SessionEvent>> {
    cfg.validate()?;
    let n = corpus.ids.len();
    if n == 0 {
        return Err(Error::Invalid("empty corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(1));
    let zipf = Zipf::new(n as f64, cfg.zipf_exponent).map_err(|e| Error::Config(format!("zipf: {e}")))?;
    let mut events = Vec::new();
    let base_ts: i64 = 1_600_000_000;
    for s in 0..cfg.sessions {
        let target = zipf.sample(&mut rng) as usize - 1;
        let topics = &corpus.title_topics[target];
        if topics.is_empty() {
            continue;
        }
        let q_len = rng.random_range(1..=topics.len().min(4));
        let mut q: Vec<String> = topics.choose_multiple(&mut rng, q_len).map(|w| vary_case(&mut rng, w)).collect();
        q.sort();
        let query = q.join(" ");

        let k = rng.random_range(1..=cfg.max_clicks);
        let cluster = corpus.cluster_of[target];
        let lo = cluster * cfg.cluster_size;
        let hi = ((cluster + 1) * cfg.cluster_size).min(n);
        let mut clicked = vec![target];
        let mut attempts = 0;
        while clicked.len() < k && attempts < 20 {
            attempts += 1;
            let pick = if rng.random_bool(cfg.same_cluster_prob) {
                rng.random_range(lo..hi)
            } else {
                // off-topic clicks spread evenly so no article becomes a hub
                rng.random_range(0..n)
            };
            if !clicked.contains(&pick) {
                clicked.push(pick);
            }
        }
        if rng.random_bool(cfg.popularity_rank_prob) {
            clicked.sort_unstable();
        } else {
            clicked.shuffle(&mut rng);
        }
        let mut ranks: Vec<u32> = (1..=cfg.results_per_page)
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, clicked.len())
            .copied()
            .collect();
        ranks.sort_unstable();
        let session_id = format!("s{s:08}");
        for (j, (&a, &r)) in clicked.iter().zip(&ranks).enumerate() {
            events.push(SessionEvent {
                session_id: session_id.clone(),
                query: query.clone(),
                rank: r,
                article_id: corpus.ids[a].clone(),
                timestamp: base_ts + s as i64 * 60 + j as i64 * 7,
            });
        }
    }
    Ok(events)
}

pub fn write_embeddings(path: &Path, rows: &[(String, Vec<f32>)], dim: usize) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {dim}", rows.len()).map_err(io)?;
    for (tok, v) in rows {
        write!(w, "{tok}").map_err(io)?;
        for x in v {
            write!(w, " {x}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTopics {
    pub article_id: String,
    pub cluster: usize,
    pub title_topics: Vec<String>,
    pub cluster_topics: Vec<String>,
}

pub fn planted_rows(corpus: &SynthCorpus) -> Vec<PlantedTopics> {
    corpus
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| PlantedTopics {
            article_id: id.clone(),
            cluster: corpus.cluster_of[i],
            title_topics: corpus.title_topics[i].clone(),
            cluster_topics: corpus.cluster_topics[corpus.cluster_of[i]].clone(),
        })
        .collect()
}

/// Clicks per article, by popularity index.
pub fn clicks_by_article(corpus: &SynthCorpus, events: &[SessionEvent]) -> Vec<u64> {
    let mut counts = vec![0u64; corpus.ids.len()];
    for e in events {
        if let Some(i) = corpus.index_of(&e.article_id) {
            counts[i] += 1;
        }
    }
    counts
}

pub fn title_lengths(articles: &ArticleMap) -> BTreeMap<usize, u64> {
    let mut out = BTreeMap::new();
    for a in articles.values() {
        *out.entry(word_tokenize(&a.title).len()).or_default() += 1;
    }
    out
}
