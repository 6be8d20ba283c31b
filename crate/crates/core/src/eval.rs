//! Recall, precision and F1 at token and title level, macro or micro
//! aggregation, and the click-count and similarity stratifications.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::PairExample;
use crate::error::{Error, Result};
use crate::explain::Prediction;
use crate::log_ingest::PairKey;
use crate::util::read_jsonl;

/// Overlap counts for one instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InstanceCounts {
    pub tp: usize,
    pub gold: usize,
    pub pred: usize,
}

impl InstanceCounts {
    /// `(recall, precision)`. An empty gold set with an empty prediction scores
    /// `(1, 1)`; an empty gold set with a non-empty prediction is undefined.
    pub fn rp(&self) -> Option<(f64, f64)> {
        if self.gold == 0 {
            return (self.pred == 0).then_some((1.0, 1.0));
        }
        let r = self.tp as f64 / self.gold as f64;
        let p = if self.pred == 0 {
            0.0
        } else {
            self.tp as f64 / self.pred as f64
        };
        Some((r, p))
    }
}

pub fn f1(r: f64, p: f64) -> f64 {
    if r + p == 0.0 {
        0.0
    } else {
        2.0 * r * p / (r + p)
    }
}

pub fn set_counts<T: Ord>(gold: &BTreeSet<T>, pred: &BTreeSet<T>) -> InstanceCounts {
    InstanceCounts {
        tp: gold.intersection(pred).count(),
        gold: gold.len(),
        pred: pred.len(),
    }
}

pub fn token_metrics(gold: &BTreeSet<String>, pred: &BTreeSet<String>) -> Option<(f64, f64)> {
    set_counts(gold, pred).rp()
}

/// Expands a token set to every title position holding one of its tokens.
pub fn positions<S: AsRef<str>>(title: &[S], tokens: &BTreeSet<String>) -> BTreeSet<usize> {
    title
        .iter()
        .enumerate()
        .filter(|(_, t)| tokens.contains(t.as_ref()))
        .map(|(i, _)| i)
        .collect()
}

pub fn title_counts<S: AsRef<str>>(
    title: &[S],
    gold: &BTreeSet<String>,
    pred: &BTreeSet<String>,
) -> InstanceCounts {
    set_counts(&positions(title, gold), &positions(title, pred))
}

pub fn title_metrics<S: AsRef<str>>(
    title: &[S],
    gold: &BTreeSet<String>,
    pred: &BTreeSet<String>,
) -> Option<(f64, f64)> {
    title_counts(title, gold, pred).rp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Token,
    Title,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Token => "token",
            Granularity::Title => "title",
        }
    }
}

pub fn instance_counts(ex: &PairExample, pred: &Prediction, granularity: Granularity) -> InstanceCounts {
    match granularity {
        Granularity::Token => set_counts(&ex.gold_tokens, &pred.tokens),
        Granularity::Title => title_counts(&ex.similar_lower(), &ex.gold_tokens, &pred.tokens),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub avg_pred_len: f64,
    pub n_instances: usize,
    /// Instances with an empty gold set and a non-empty prediction.
    pub excluded: usize,
}

/// Macro: mean per-instance recall and precision, F1 of the means.
/// Micro: pooled counts.
pub fn aggregate(counts: &[InstanceCounts], averaging: Averaging) -> Result<EvalMetrics> {
    let scored: Vec<(&InstanceCounts, (f64, f64))> =
        counts.iter().filter_map(|c| c.rp().map(|rp| (c, rp))).collect();
    if scored.is_empty() {
        return Err(Error::Invalid("no scorable instances to aggregate".into()));
    }
    let n = scored.len() as f64;
    let (recall, precision) = match averaging {
        Averaging::Macro => {
            // sorted sums keep the mean independent of instance order
            let mut rs: Vec<f64> = scored.iter().map(|(_, (r, _))| *r).collect();
            let mut ps: Vec<f64> = scored.iter().map(|(_, (_, p))| *p).collect();
            rs.sort_by(f64::total_cmp);
            ps.sort_by(f64::total_cmp);
            (rs.iter().sum::<f64>() / n, ps.iter().sum::<f64>() / n)
        }
        Averaging::Micro => {
            let (tp, gold, pred) = scored.iter().fold((0usize, 0usize, 0usize), |acc, (c, _)| {
                (acc.0 + c.tp, acc.1 + c.gold, acc.2 + c.pred)
            });
            let r = if gold == 0 { 1.0 } else { tp as f64 / gold as f64 };
            let p = match (pred, gold) {
                (0, 0) => 1.0,
                (0, _) => 0.0,
                _ => tp as f64 / pred as f64,
            };
            (r, p)
        }
    };
    let pred_total: usize = scored.iter().map(|(c, _)| c.pred).sum();
    Ok(EvalMetrics {
        recall,
        precision,
        f1: f1(recall, precision),
        avg_pred_len: pred_total as f64 / n,
        n_instances: scored.len(),
        excluded: counts.len() - scored.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub name: String,
    /// Indices into the stratified input.
    pub members: Vec<usize>,
}

/// Sorts by combined clicks descending (ties by pair id), then returns the
/// top 0.1% (at least one instance) followed by three thirds that partition
/// the whole list.
pub fn stratify_by_clicks(items: &[(PairKey, u64)]) -> Vec<Stratum> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].1.cmp(&items[a].1).then_with(|| items[a].0.cmp(&items[b].0)));
    let n = order.len();
    let top = if n == 0 { 0 } else { (n / 1000).max(1) };
    let mut strata = vec![Stratum {
        name: "top 0.1%".into(),
        members: order[..top].to_vec(),
    }];
    for (i, name) in ["top third", "middle third", "bottom third"].into_iter().enumerate() {
        strata.push(Stratum {
            name: name.into(),
            members: order[i * n / 3..(i + 1) * n / 3].to_vec(),
        });
    }
    strata
}

/// Five quintiles by ascending similarity (ties by pair id). Returns the
/// strata and how many items had no score.
pub fn stratify_by_similarity(keys: &[PairKey], scores: &BTreeMap<PairKey, f64>) -> (Vec<Stratum>, u64) {
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(keys.len());
    let mut missing = 0;
    for (i, k) in keys.iter().enumerate() {
        match scores.get(k) {
            Some(&s) => scored.push((i, s)),
            None => missing += 1,
        }
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| keys[a.0].cmp(&keys[b.0])));
    let n = scored.len();
    let strata = (0..5)
        .map(|q| Stratum {
            name: format!("similarity Q{}", q + 1),
            members: scored[q * n / 5..(q + 1) * n / 5].iter().map(|(i, _)| *i).collect(),
        })
        .collect();
    (strata, missing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub seed_id: String,
    pub similar_id: String,
    pub score: f64,
}

pub fn read_pair_scores(path: &Path) -> Result<BTreeMap<PairKey, f64>> {
    let rows: Vec<PairScore> = read_jsonl(path)?;
    let mut out = BTreeMap::new();
    for r in rows {
        if !r.score.is_finite() {
            return Err(Error::Invalid(format!(
                "{}: non-finite score for pair ({}, {})",
                path.display(),
                r.seed_id,
                r.similar_id
            )));
        }
        out.insert((r.seed_id, r.similar_id), r.score);
    }
    Ok(out)
}

/// One row of the metrics report. Rates are percentages rounded to 2 places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub granularity: String,
    pub stratum: String,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "L")]
    pub avg_pred_len: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl MetricsRow {
    pub fn new(model: &str, granularity: Granularity, stratum: &str, m: &EvalMetrics) -> Self {
        Self {
            model: model.to_string(),
            granularity: granularity.as_str().to_string(),
            stratum: stratum.to_string(),
            recall: round2(m.recall * 100.0),
            precision: round2(m.precision * 100.0),
            f1: round2(m.f1 * 100.0),
            avg_pred_len: round2(m.avg_pred_len),
            n: m.n_instances,
        }
    }
}

pub fn write_metrics_csv<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores one model over `examples` (predictions aligned by index; `None`
/// skips the instance) for every granularity and stratum.
pub fn evaluate_model(
    model: &str,
    examples: &[PairExample],
    predictions: &[Option<Prediction>],
    strata: &[Stratum],
    averaging: Averaging,
) -> Result<Vec<MetricsRow>> {
    if examples.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: examples.len(),
            got: predictions.len(),
        });
    }
    let mut rows = Vec::new();
    for g in [Granularity::Token, Granularity::Title] {
        let counts: Vec<Option<InstanceCounts>> = examples
            .iter()
            .zip(predictions)
            .map(|(ex, p)| p.as_ref().map(|p| instance_counts(ex, p, g)))
            .collect();
        let all: Vec<InstanceCounts> = counts.iter().flatten().copied().collect();
        rows.push(MetricsRow::new(model, g, "all", &aggregate(&all, averaging)?));
        for s in strata {
            let members: Vec<InstanceCounts> = s.members.iter().filter_map(|&i| counts[i]).collect();
            if let Ok(m) = aggregate(&members, averaging) {
                rows.push(MetricsRow::new(model, g, &s.name, &m));
            }
        }
    }
    Ok(rows)
}
