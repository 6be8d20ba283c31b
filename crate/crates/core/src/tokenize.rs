//! Word tokenization, a frequency-selected wordpiece vocabulary, and the
//! subword/word label projections used by the tagger.
//!
//! Word tokens are the unit of datasets, explainers and metrics. Subwords only
//! exist inside the tagger; predictions are projected back to words before
//! anything else sees them.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Sequence-start marker; always the first line of a vocabulary file.
pub const START_MARKER: &str = "[CLS]";
/// Segment separator marker; always the second line of a vocabulary file.
pub const SEP_MARKER: &str = "[SEP]";
/// Prefix carried by pieces that continue a word.
pub const CONTINUATION: &str = "##";

const PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']'];

/// Longest substring (in chars) considered as a vocabulary candidate.
const MAX_PIECE_CHARS: usize = 16;
/// A substring must occur in at least this many distinct corpus words (weighted
/// by frequency) to earn a vocabulary slot.
const MIN_PIECE_FREQ: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordToken {
    pub text: String,
    /// Byte offsets `[start, end)` into the source string.
    pub start: usize,
    pub end: usize,
    pub word_index: usize,
}

impl WordToken {
    pub fn lower(&self) -> String {
        self.text.to_lowercase()
    }
}

fn is_punct(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

/// Splits on whitespace, then peels leading and trailing punctuation off each
/// chunk as single-character tokens. Inner punctuation and hyphens are kept,
/// so `Covid-19` and `low-fat` stay whole.
pub fn word_tokenize(text: &str) -> Vec<WordToken> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<WordToken>, start: usize, end: usize| {
        let word_index = out.len();
        out.push(WordToken {
            text: text[start..end].to_string(),
            start,
            end,
            word_index,
        });
    };

    let mut chunk_start = None;
    let bytes_end = text.len();
    let mut chunks = Vec::new();
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                chunks.push((s, i));
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(s) = chunk_start {
        chunks.push((s, bytes_end));
    }

    for (mut s, mut e) in chunks {
        // leading punctuation
        while s < e {
            let c = text[s..e].chars().next().unwrap();
            if !is_punct(c) {
                break;
            }
            push(&mut out, s, s + c.len_utf8());
            s += c.len_utf8();
        }
        let mut trailing = Vec::new();
        while s < e {
            let c = text[s..e].chars().next_back().unwrap();
            if !is_punct(c) {
                break;
            }
            trailing.push((e - c.len_utf8(), e));
            e -= c.len_utf8();
        }
        if s < e {
            push(&mut out, s, e);
        }
        for (ts, te) in trailing.into_iter().rev() {
            push(&mut out, ts, te);
        }
    }
    out
}

/// Lowercased token texts, in order.
pub fn lower_tokens(tokens: &[WordToken]) -> Vec<String> {
    tokens.iter().map(WordToken::lower).collect()
}

/// True for tokens made only of non-alphanumeric characters.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl SubwordVocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != START_MARKER || tokens[1] != SEP_MARKER {
            return Err(Error::Config(format!(
                "vocabulary must start with {START_MARKER} and {SEP_MARKER}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_piece_chars = 1;
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
            let chars = t.strip_prefix(CONTINUATION).unwrap_or(t).chars().count();
            max_piece_chars = max_piece_chars.max(chars);
        }
        Ok(Self {
            tokens,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.index.contains_key(piece)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(contents: &str) -> Result<Self> {
        let tokens = contents
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&contents)
    }
}

/// Builds a wordpiece-style vocabulary from a word corpus (repetitions count).
///
/// Every character of the corpus is present both as a word-initial piece and
/// as a `##` continuation, so any in-corpus word tokenizes. The remaining
/// budget goes to substrings shared by at least two corpus words, most
/// frequent first (ties: longer, then lexicographic).
pub fn build_subword_vocab<I, S>(corpus: I, max_size: usize) -> Result<SubwordVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_freq: HashMap<String, u64> = HashMap::new();
    for w in corpus {
        let w = w.as_ref();
        if !w.is_empty() {
            *word_freq.entry(w.to_string()).or_default() += 1;
        }
    }

    let mut chars: BTreeSet<char> = BTreeSet::new();
    for w in word_freq.keys() {
        chars.extend(w.chars());
    }
    let mut tokens = vec![START_MARKER.to_string(), SEP_MARKER.to_string()];
    tokens.extend(chars.iter().map(|c| c.to_string()));
    tokens.extend(chars.iter().map(|c| format!("{CONTINUATION}{c}")));
    if max_size < tokens.len() {
        return Err(Error::Config(format!(
            "vocabulary size {max_size} cannot hold the {} character pieces and markers",
            tokens.len()
        )));
    }

    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut seen = BTreeSet::new();
    for (w, &f) in &word_freq {
        let cs: Vec<char> = w.chars().collect();
        seen.clear();
        for start in 0..cs.len() {
            let longest = MAX_PIECE_CHARS.min(cs.len() - start);
            for len in 2..=longest {
                let body: String = cs[start..start + len].iter().collect();
                let piece = if start == 0 {
                    body
                } else {
                    format!("{CONTINUATION}{body}")
                };
                seen.insert(piece);
            }
        }
        for piece in &seen {
            *counts.entry(piece.clone()).or_default() += f;
        }
    }

    let mut candidates: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= MIN_PIECE_FREQ)
        .collect();
    candidates.sort_by(|(a, ca), (b, cb)| {
        cb.cmp(ca)
            .then_with(|| b.chars().count().cmp(&a.chars().count()))
            .then_with(|| a.cmp(b))
    });
    let budget = max_size - tokens.len();
    tokens.extend(candidates.into_iter().take(budget).map(|(p, _)| p));
    SubwordVocab::from_tokens(tokens)
}

/// Greedy longest-match segmentation. Characters missing from the vocabulary
/// fall back to single-character pieces, so segmentation never fails and the
/// pieces always concatenate back to `word`.
pub fn subword_tokenize(word: &str, vocab: &SubwordVocab) -> Vec<String> {
    let cs: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut pos = 0;
    let mut buf = String::new();
    while pos < cs.len() {
        let longest = vocab.max_piece_chars.min(cs.len() - pos);
        let mut matched = None;
        for len in (1..=longest).rev() {
            buf.clear();
            if pos > 0 {
                buf.push_str(CONTINUATION);
            }
            buf.extend(&cs[pos..pos + len]);
            if vocab.contains(&buf) {
                matched = Some(len);
                break;
            }
        }
        let len = matched.unwrap_or(1);
        let body: String = cs[pos..pos + len].iter().collect();
        pieces.push(if pos > 0 {
            format!("{CONTINUATION}{body}")
        } else {
            body
        });
        pos += len;
    }
    pieces
}

/// Joins pieces back into a word, dropping continuation markers.
pub fn detokenize(pieces: &[String]) -> String {
    pieces
        .iter()
        .map(|p| p.strip_prefix(CONTINUATION).unwrap_or(p))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubwordAlignment {
    pub subwords: Vec<String>,
    pub word_of_subword: Vec<usize>,
}

impl SubwordAlignment {
    pub fn len(&self) -> usize {
        self.subwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subwords.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.word_of_subword.last().map_or(0, |w| w + 1)
    }
}

/// Segments each word (lowercased) and records which word every piece came from.
pub fn align_words<S: AsRef<str>>(words: &[S], vocab: &SubwordVocab) -> SubwordAlignment {
    let mut al = SubwordAlignment::default();
    for (i, w) in words.iter().enumerate() {
        let lower = w.as_ref().to_lowercase();
        for piece in subword_tokenize(&lower, vocab) {
            al.subwords.push(piece);
            al.word_of_subword.push(i);
        }
    }
    al
}

/// A word is selected when any of its pieces is labeled 1.
pub fn project_labels(alignment: &SubwordAlignment, labels: &[u8]) -> Result<BTreeSet<usize>> {
    if labels.len() != alignment.len() {
        return Err(Error::LengthMismatch {
            what: "subword labels",
            expected: alignment.len(),
            got: labels.len(),
        });
    }
    Ok(alignment
        .word_of_subword
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l != 0)
        .map(|(&w, _)| w)
        .collect())
}

/// Training-side projection: every piece of a selected word is labeled 1.
pub fn project_down(alignment: &SubwordAlignment, words: &BTreeSet<usize>) -> Vec<u8> {
    alignment
        .word_of_subword
        .iter()
        .map(|w| u8::from(words.contains(w)))
        .collect()
}
