//! Raw session click logs to per-pair query coclick counts.
//!
//! A coclick is two distinct articles clicked under the same query in the same
//! session. The article shown higher on the results page becomes the seed,
//! the other the similar article. Aggregates merge associatively so shards
//! can be reduced in any grouping.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEvent {
    pub session_id: String,
    pub query: String,
    pub rank: u32,
    pub article_id: String,
    pub timestamp: i64,
}

impl SessionEvent {
    /// Raw-log line without the trailing newline.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.session_id, self.timestamp, self.query, self.rank, self.article_id
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineError {
    ColumnCount,
    Timestamp,
    Rank,
    EmptyField,
}

/// Parses one raw-log line: `session_id, timestamp_ms, query, rank, article_id`.
pub fn parse_line(line: &str) -> Result<SessionEvent, LineError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let cols: Vec<&str> = line.split('\t').collect();
    let [session_id, ts, query, rank, article_id] = cols[..] else {
        return Err(LineError::ColumnCount);
    };
    let timestamp = ts.trim().parse().map_err(|_| LineError::Timestamp)?;
    let rank: u32 = rank.trim().parse().map_err(|_| LineError::Rank)?;
    if rank == 0 {
        return Err(LineError::Rank);
    }
    let (session_id, query, article_id) = (session_id.trim(), query.trim(), article_id.trim());
    if session_id.is_empty() || query.is_empty() || article_id.is_empty() {
        return Err(LineError::EmptyField);
    }
    Ok(SessionEvent {
        session_id: session_id.to_string(),
        query: query.to_string(),
        rank,
        article_id: article_id.to_string(),
        timestamp,
    })
}

/// Streams events out of a raw log, skipping and tallying malformed lines.
/// An unreadable stream ends iteration with an error.
pub struct LogParser<R> {
    lines: std::io::Lines<R>,
    malformed: u64,
    line_no: u64,
}

impl<R: BufRead> LogParser<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            malformed: 0,
            line_no: 0,
        }
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    pub fn lines_read(&self) -> u64 {
        self.line_no
    }
}

impl<R: BufRead> Iterator for LogParser<R> {
    type Item = Result<SessionEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::Stream(e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            match parse_line(&line) {
                Ok(ev) => return Some(Ok(ev)),
                Err(_) => self.malformed += 1,
            }
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ParsedLog {
    pub events: Vec<SessionEvent>,
    pub malformed: u64,
}

pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let mut parser = LogParser::new(reader);
    let mut events = Vec::new();
    for ev in parser.by_ref() {
        events.push(ev?);
    }
    Ok(ParsedLog {
        events,
        malformed: parser.malformed(),
    })
}

pub fn read_log(path: &Path) -> Result<ParsedLog> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_log(BufReader::new(f))
}

pub fn write_log(path: &Path, events: &[SessionEvent]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for ev in events {
        writeln!(w, "{}", ev.to_tsv()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lowercase and collapse whitespace runs to single spaces.
pub fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CoclickInstance {
    pub seed_id: String,
    pub similar_id: String,
    pub query: String,
}

/// Rank-ordered pairs from one (session, query) group. `clicks` holds
/// `(article_id, rank)`; a repeated article keeps its best-ranked click.
pub fn coclicks_in_group(query: &str, clicks: &[(&str, u32)]) -> Vec<CoclickInstance> {
    let mut sorted: Vec<(&str, u32)> = clicks.to_vec();
    sorted.sort_by_key(|&(_, rank)| rank);
    let mut distinct: Vec<(&str, u32)> = Vec::with_capacity(sorted.len());
    for (a, r) in sorted {
        if !distinct.iter().any(|(b, _)| *b == a) {
            distinct.push((a, r));
        }
    }
    let mut out = Vec::new();
    for i in 0..distinct.len() {
        for j in i + 1..distinct.len() {
            let (seed, rs) = distinct[i];
            let (similar, rj) = distinct[j];
            // equal ranks give no ordering
            if rs < rj {
                out.push(CoclickInstance {
                    seed_id: seed.to_string(),
                    similar_id: similar.to_string(),
                    query: query.to_string(),
                });
            }
        }
    }
    out
}

/// Groups events by (session_id, query) and emits every rank-ordered pair.
/// Output order follows the sorted group keys.
pub fn extract_coclicks(events: &[SessionEvent]) -> Vec<CoclickInstance> {
    let mut groups: HashMap<(&str, &str), Vec<(&str, u32)>> = HashMap::new();
    for ev in events {
        groups
            .entry((ev.session_id.as_str(), ev.query.as_str()))
            .or_default()
            .push((ev.article_id.as_str(), ev.rank));
    }
    let mut keys: Vec<_> = groups.keys().copied().collect();
    keys.sort_unstable();
    keys.into_iter()
        .flat_map(|k| coclicks_in_group(k.1, &groups[&k]))
        .collect()
}

pub type PairKey = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAggregate {
    pub seed_id: String,
    pub similar_id: String,
    pub query_counts: BTreeMap<String, u64>,
    pub combined_clicks: u64,
}

impl PairAggregate {
    pub fn new(seed_id: impl Into<String>, similar_id: impl Into<String>) -> Self {
        Self {
            seed_id: seed_id.into(),
            similar_id: similar_id.into(),
            query_counts: BTreeMap::new(),
            combined_clicks: 0,
        }
    }

    pub fn add(&mut self, normalized_query: String, count: u64) {
        *self.query_counts.entry(normalized_query).or_default() += count;
        self.combined_clicks += count;
    }

    pub fn key(&self) -> PairKey {
        (self.seed_id.clone(), self.similar_id.clone())
    }

    pub fn is_consistent(&self) -> bool {
        self.seed_id != self.similar_id
            && self.query_counts.values().all(|&c| c >= 1)
            && self.query_counts.values().sum::<u64>() == self.combined_clicks
    }
}

pub type AggregateMap = BTreeMap<PairKey, PairAggregate>;

pub fn aggregate_pairs(instances: &[CoclickInstance]) -> AggregateMap {
    let mut map = AggregateMap::new();
    for inst in instances {
        map.entry((inst.seed_id.clone(), inst.similar_id.clone()))
            .or_insert_with(|| PairAggregate::new(&inst.seed_id, &inst.similar_id))
            .add(normalize_query(&inst.query), 1);
    }
    map
}

/// Pointwise sum of query counts.
pub fn merge_aggregates(mut a: AggregateMap, b: AggregateMap) -> AggregateMap {
    if a.len() < b.len() {
        return merge_aggregates(b, a);
    }
    for (key, agg) in b {
        match a.get_mut(&key) {
            Some(existing) => {
                for (q, c) in agg.query_counts {
                    existing.add(q, c);
                }
            }
            None => {
                a.insert(key, agg);
            }
        }
    }
    a
}

/// Aggregates a full event stream in `shards` parallel pieces. Shards are cut
/// on (session, query) group boundaries so no coclick straddles two shards.
pub fn aggregate_events(events: &[SessionEvent], shards: usize) -> AggregateMap {
    let shards = shards.max(1);
    let mut by_group: BTreeMap<(&str, &str), Vec<&SessionEvent>> = BTreeMap::new();
    for ev in events {
        by_group
            .entry((ev.session_id.as_str(), ev.query.as_str()))
            .or_default()
            .push(ev);
    }
    let groups: Vec<_> = by_group.into_iter().collect();
    let chunk = groups.len().div_ceil(shards).max(1);
    groups
        .par_chunks(chunk)
        .map(|part| {
            let mut instances = Vec::new();
            for ((_, query), evs) in part {
                let clicks: Vec<(&str, u32)> =
                    evs.iter().map(|e| (e.article_id.as_str(), e.rank)).collect();
                instances.extend(coclicks_in_group(query, &clicks));
            }
            aggregate_pairs(&instances)
        })
        .reduce(AggregateMap::new, merge_aggregates)
}

pub fn write_aggregates(path: &Path, aggs: &AggregateMap) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for agg in aggs.values() {
        let line = serde_json::to_string(agg).expect("aggregate serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aggregates(path: &Path) -> Result<AggregateMap> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = AggregateMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let agg: PairAggregate = serde_json::from_str(&line).map_err(|source| Error::Json {
            context: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        if !agg.is_consistent() {
            return Err(Error::Invalid(format!(
                "{}:{}: inconsistent aggregate for ({}, {})",
                path.display(),
                i + 1,
                agg.seed_id,
                agg.similar_id
            )));
        }
        map = merge_aggregates(map, AggregateMap::from([(agg.key(), agg)]));
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
}

pub type ArticleMap = BTreeMap<String, Article>;

/// Metadata TSV: `article_id, title, abstract` (abstract may be empty or absent).
pub fn parse_articles<R: BufRead>(reader: R) -> Result<(ArticleMap, u64)> {
    let mut map = ArticleMap::new();
    let mut malformed = 0;
    for line in reader.lines() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().unwrap_or("").trim();
        let title = cols.next().unwrap_or("").trim();
        let abstract_text = cols.next().unwrap_or("").trim();
        if id.is_empty() || title.is_empty() {
            malformed += 1;
            continue;
        }
        map.insert(
            id.to_string(),
            Article {
                id: id.to_string(),
                title: title.to_string(),
                abstract_text: abstract_text.to_string(),
            },
        );
    }
    Ok((map, malformed))
}

pub fn read_articles(path: &Path) -> Result<ArticleMap> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_articles(BufReader::new(f))?.0)
}

pub fn write_articles(path: &Path, articles: &ArticleMap) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for a in articles.values() {
        writeln!(w, "{}\t{}\t{}", a.id, a.title, a.abstract_text).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
