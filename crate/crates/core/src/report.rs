//! Highlighted case studies, blinded A/B preference sheets and corpus
//! statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PairExample;
use crate::error::{Error, Result};
use crate::log_ingest::PairKey;
use crate::tokenize::WordToken;

/// Mean title length of the reference corpus, in tokens.
pub const REFERENCE_TITLE_LEN: f64 = 17.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Plain,
    #[default]
    Markdown,
    Html,
}

impl Format {
    fn wrap(self, text: &str) -> String {
        match self {
            Format::Plain => format!("[{text}]"),
            Format::Markdown => format!("**{text}**"),
            Format::Html => format!("<mark>{}</mark>", escape_html(text)),
        }
    }

    fn text(self, text: &str) -> String {
        match self {
            Format::Html => escape_html(text),
            _ => text.to_string(),
        }
    }
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Wraps the tokens at `positions` in the format's emphasis, leaving the rest
/// of `text` untouched.
pub fn render_title(text: &str, tokens: &[WordToken], positions: &BTreeSet<usize>, format: Format) -> Result<String> {
    if let Some(&bad) = positions.iter().find(|&&p| p >= tokens.len()) {
        return Err(Error::Invalid(format!(
            "position {bad} is out of range for a title of {} tokens",
            tokens.len()
        )));
    }
    let mut out = String::with_capacity(text.len() + positions.len() * 8);
    let mut at = 0;
    for &p in positions {
        let t = &tokens[p];
        out.push_str(&format.text(&text[at..t.start]));
        out.push_str(&format.wrap(&text[t.start..t.end]));
        at = t.end;
    }
    out.push_str(&format.text(&text[at..]));
    Ok(out)
}

fn token_positions(tokens: &[WordToken], set: &BTreeSet<String>) -> BTreeSet<usize> {
    tokens
        .iter()
        .filter(|t| set.contains(&t.lower()))
        .map(|t| t.word_index)
        .collect()
}

/// One case: the seed title, then the similar title highlighted once for the
/// gold labels and once per model.
pub fn render_case(
    example: &PairExample,
    predictions: &[(&str, &BTreeSet<String>)],
    format: Format,
) -> Result<String> {
    let title = &example.similar_title;
    let tokens = &example.similar_title_tokens;
    let mut rows: Vec<(String, String)> = Vec::with_capacity(predictions.len() + 1);
    if !example.gold_tokens.is_empty() {
        let gold = token_positions(tokens, &example.gold_tokens);
        rows.push(("Gold".into(), render_title(title, tokens, &gold, format)?));
    }
    for (name, set) in predictions {
        let pos = token_positions(tokens, set);
        rows.push((name.to_string(), render_title(title, tokens, &pos, format)?));
    }
    let mut out = String::new();
    let (seed, similar) = (&example.seed_id, &example.similar_id);
    match format {
        Format::Plain => {
            let _ = writeln!(out, "pair {seed} -> {similar}");
            let _ = writeln!(out, "seed: {}", example.seed_title);
            for (name, r) in rows {
                let _ = writeln!(out, "{name}: {r}");
            }
        }
        Format::Markdown => {
            let _ = writeln!(out, "### {seed} -> {similar}\n");
            let _ = writeln!(out, "Seed: {}\n", example.seed_title);
            for (name, r) in rows {
                let _ = writeln!(out, "- {name}: {r}");
            }
        }
        Format::Html => {
            let _ = writeln!(out, "<section>");
            let _ = writeln!(out, "<h3>{} -&gt; {}</h3>", escape_html(seed), escape_html(similar));
            let _ = writeln!(out, "<p>Seed: {}</p>", escape_html(&example.seed_title));
            let _ = writeln!(out, "<table>");
            for (name, r) in rows {
                let _ = writeln!(out, "<tr><th>{}</th><td>{r}</td></tr>", escape_html(&name));
            }
            let _ = writeln!(out, "</table>\n</section>");
        }
    }
    Ok(out)
}

pub type TokenSets = BTreeMap<PairKey, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetRow {
    pub instance_id: String,
    pub seed_title: String,
    pub title_left_highlighted: String,
    pub title_right_highlighted: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRow {
    pub instance_id: String,
    pub left_model: String,
    pub right_model: String,
}

pub fn instance_id(key: &PairKey) -> String {
    format!("{}_{}", key.0, key.1)
}

/// Blinded side-by-side sheet for two models plus the answer key. Sides are
/// swapped per instance by a coin seeded with `rng_seed`.
pub fn emit_ab_study(
    examples: &[PairExample],
    a: (&str, &TokenSets),
    b: (&str, &TokenSets),
    rng_seed: u64,
) -> Result<(Vec<SheetRow>, Vec<KeyRow>)> {
    if a.0 == b.0 {
        return Err(Error::Invalid("the two models need distinct names".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut sheet = Vec::with_capacity(examples.len());
    let mut key = Vec::with_capacity(examples.len());
    for ex in examples {
        let k = ex.key();
        let missing = |name: &str| Error::Invalid(format!("model {name} has no output for pair ({}, {})", k.0, k.1));
        let pa = a.1.get(&k).ok_or_else(|| missing(a.0))?;
        let pb = b.1.get(&k).ok_or_else(|| missing(b.0))?;
        let (left, right, ln, rn) = if rng.random_bool(0.5) {
            (pb, pa, b.0, a.0)
        } else {
            (pa, pb, a.0, b.0)
        };
        let tokens = &ex.similar_title_tokens;
        let id = instance_id(&k);
        sheet.push(SheetRow {
            instance_id: id.clone(),
            seed_title: ex.seed_title.clone(),
            title_left_highlighted: render_title(&ex.similar_title, tokens, &token_positions(tokens, left), Format::Plain)?,
            title_right_highlighted: render_title(&ex.similar_title, tokens, &token_positions(tokens, right), Format::Plain)?,
        });
        key.push(KeyRow {
            instance_id: id,
            left_model: ln.to_string(),
            right_model: rn.to_string(),
        });
    }
    for (name, sets) in [a, b] {
        if sets.len() != examples.len() {
            return Err(Error::Invalid(format!(
                "model {name} covers {} pairs, the study has {}",
                sets.len(),
                examples.len()
            )));
        }
    }
    Ok((sheet, key))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Right,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedRow {
    pub instance_id: String,
    pub choice: Choice,
}

/// Preference counts per model plus neutral answers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tally {
    pub preferred: BTreeMap<String, u64>,
    pub neutral: u64,
}

pub fn tally(marked: &[MarkedRow], key: &[KeyRow]) -> Result<Tally> {
    let by_id: BTreeMap<&str, &KeyRow> = key.iter().map(|k| (k.instance_id.as_str(), k)).collect();
    let mut out = Tally::default();
    for k in key {
        for m in [&k.left_model, &k.right_model] {
            out.preferred.entry(m.clone()).or_insert(0);
        }
    }
    for row in marked {
        let k = by_id
            .get(row.instance_id.as_str())
            .ok_or_else(|| Error::Invalid(format!("instance {} is not in the key", row.instance_id)))?;
        match row.choice {
            Choice::Left => *out.preferred.entry(k.left_model.clone()).or_default() += 1,
            Choice::Right => *out.preferred.entry(k.right_model.clone()).or_default() += 1,
            Choice::Neutral => out.neutral += 1,
        }
    }
    Ok(out)
}

pub fn write_csv<T: Serialize, W: Write>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSize {
    pub min_clicks: u64,
    pub pairs: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub pairs: usize,
    /// Pairs per power-of-two click bucket, keyed by the bucket's lower bound.
    pub click_buckets: BTreeMap<u64, usize>,
    pub title_lengths: BTreeMap<usize, usize>,
    pub mean_title_len: f64,
    pub sizes: Vec<ThresholdSize>,
}

pub fn click_bucket(clicks: u64) -> u64 {
    if clicks == 0 {
        0
    } else {
        1 << (63 - clicks.leading_zeros())
    }
}

/// Statistics over the similar titles and click counts of `examples`, with
/// dataset sizes at each click threshold.
pub fn corpus_stats(examples: &[PairExample], thresholds: &[u64]) -> Result<CorpusStats> {
    let mut click_buckets = BTreeMap::new();
    let mut title_lengths = BTreeMap::new();
    let mut len_sum = 0usize;
    let mut bytes = Vec::with_capacity(examples.len());
    for ex in examples {
        *click_buckets.entry(click_bucket(ex.combined_clicks)).or_default() += 1;
        let n = ex.similar_title_tokens.len();
        *title_lengths.entry(n).or_default() += 1;
        len_sum += n;
        let line = serde_json::to_string(&ex.to_record()).map_err(|source| Error::Json {
            context: "dataset record".into(),
            line: 0,
            source,
        })?;
        bytes.push(line.len() + 1);
    }
    let sizes = thresholds
        .iter()
        .map(|&t| {
            let kept = examples.iter().zip(&bytes).filter(|(e, _)| e.combined_clicks >= t);
            let (pairs, bytes) = kept.fold((0, 0), |(p, b), (_, n)| (p + 1, b + n));
            ThresholdSize {
                min_clicks: t,
                pairs,
                bytes,
            }
        })
        .collect();
    Ok(CorpusStats {
        pairs: examples.len(),
        click_buckets,
        title_lengths,
        mean_title_len: if examples.is_empty() {
            0.0
        } else {
            len_sum as f64 / examples.len() as f64
        },
        sizes,
    })
}

impl CorpusStats {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pairs: {}", self.pairs);
        let _ = writeln!(
            out,
            "mean similar-title length: {:.2} tokens (reference {REFERENCE_TITLE_LEN})\n",
            self.mean_title_len
        );
        let _ = writeln!(out, "| min clicks | pairs | bytes |\n|---|---|---|");
        for s in &self.sizes {
            let _ = writeln!(out, "| {} | {} | {} |", s.min_clicks, s.pairs, s.bytes);
        }
        let _ = writeln!(out, "\n| clicks | pairs |\n|---|---|");
        for (lo, n) in &self.click_buckets {
            let _ = writeln!(out, "| {lo}-{} | {n} |", lo.saturating_mul(2).max(1) - 1);
        }
        let _ = writeln!(out, "\n| title tokens | pairs |\n|---|---|");
        for (len, n) in &self.title_lengths {
            let _ = writeln!(out, "| {len} | {n} |");
        }
        out
    }
}
