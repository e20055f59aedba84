//! Additive-smoothed word bigram language model.
//!
//! The model is small enough that contextual entropy is computed by exact
//! summation over the whole outcome vocabulary (word types, end-of-sentence
//! and the unknown-word symbol). All logarithms are base 2.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Texts;
use crate::pooling::{word_spans, TokenScore, TokenScoreTable};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const DUMP_MAGIC: &str = "#predpower-bigram\tv1";

/// Outcome vocabulary: observed word types in sorted order, then EOS, then UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn new(types: BTreeSet<String>) -> Result<Self> {
        for reserved in [BOS, EOS, UNK] {
            if types.contains(reserved) {
                return Err(Error::InvalidParameter(format!(
                    "corpus contains the reserved symbol `{reserved}`"
                )));
            }
        }
        let mut symbols: Vec<String> = types.into_iter().collect();
        symbols.push(EOS.to_string());
        symbols.push(UNK.to_string());
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Ok(Self { symbols, index })
    }

    /// Number of outcomes, including EOS and UNK.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eos(&self) -> u32 {
        (self.symbols.len() - 2) as u32
    }

    pub fn unk(&self) -> u32 {
        (self.symbols.len() - 1) as u32
    }

    /// Index of a word, mapping unseen words to UNK.
    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or_else(|| self.unk())
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.symbols[id as usize]
    }

    /// Observed word types, without EOS and UNK.
    pub fn word_types(&self) -> &[String] {
        &self.symbols[..self.symbols.len() - 2]
    }
}

/// A conditioning context: begin-of-sentence or a previous word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Context {
    Bos,
    Word(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    vocab: Vocabulary,
    alpha: f64,
    counts: BTreeMap<Context, BTreeMap<u32, u64>>,
    totals: HashMap<Context, u64>,
}

/// Surprisal and contextual entropy of one token, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenBits {
    pub surprisal: f64,
    pub entropy: f64,
}

/// Trains on whitespace-tokenized sentences. Each nonempty sentence starts in
/// the begin-of-sentence context and ends with an EOS transition.
pub fn train_bigram<S: AsRef<str>>(sentences: &[Vec<S>], alpha: f64) -> Result<BigramLm> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("smoothing alpha must be positive, got {alpha}")));
    }
    let types: BTreeSet<String> = sentences
        .iter()
        .flatten()
        .map(|w| w.as_ref().to_string())
        .collect();
    if types.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = Vocabulary::new(types)?;
    let mut counts: BTreeMap<Context, BTreeMap<u32, u64>> = BTreeMap::new();
    for sentence in sentences.iter().filter(|s| !s.is_empty()) {
        let mut ctx = Context::Bos;
        for w in sentence {
            let id = vocab.id(w.as_ref());
            *counts.entry(ctx).or_default().entry(id).or_default() += 1;
            ctx = Context::Word(id);
        }
        *counts.entry(ctx).or_default().entry(vocab.eos()).or_default() += 1;
    }
    Ok(BigramLm::from_counts(vocab, alpha, counts))
}

impl BigramLm {
    fn from_counts(vocab: Vocabulary, alpha: f64, counts: BTreeMap<Context, BTreeMap<u32, u64>>) -> Self {
        let totals = counts.iter().map(|(c, row)| (*c, row.values().sum())).collect();
        Self {
            vocab,
            alpha,
            counts,
            totals,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, ctx: Context, word: u32) -> u64 {
        self.counts
            .get(&ctx)
            .and_then(|row| row.get(&word))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_total(&self, ctx: Context) -> u64 {
        self.totals.get(&ctx).copied().unwrap_or(0)
    }

    /// Context for a previous word given as a string (unseen → UNK).
    pub fn context_of(&self, prev: Option<&str>) -> Context {
        match prev {
            None => Context::Bos,
            Some(w) => Context::Word(self.vocab.id(w)),
        }
    }

    /// Smoothed p(word | ctx).
    pub fn prob(&self, ctx: Context, word: u32) -> f64 {
        let v = self.vocab.len() as f64;
        (self.count(ctx, word) as f64 + self.alpha) / (self.context_total(ctx) as f64 + self.alpha * v)
    }

    /// Entropy of p(· | ctx) in bits, summed over every outcome.
    pub fn context_entropy(&self, ctx: Context) -> f64 {
        (0..self.vocab.len() as u32)
            .map(|w| {
                let p = self.prob(ctx, w);
                -p * p.log2()
            })
            .sum()
    }

    /// Adds one observation of the bigram `(ctx, word)`.
    pub fn increment(&mut self, ctx: Context, word: u32) {
        *self.counts.entry(ctx).or_default().entry(word).or_default() += 1;
        *self.totals.entry(ctx).or_default() += 1;
    }

    /// Per-token surprisal `−log2 p(w_n | w_{n−1})` and the entropy of the
    /// distribution the token was drawn from.
    pub fn score_tokens<S: AsRef<str>>(&self, sentence: &[S]) -> Result<Vec<TokenBits>> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut cache: HashMap<Context, f64> = HashMap::new();
        let mut ctx = Context::Bos;
        let mut out = Vec::with_capacity(sentence.len());
        for w in sentence {
            let id = self.vocab.id(w.as_ref());
            let entropy = *cache.entry(ctx).or_insert_with(|| self.context_entropy(ctx));
            out.push(TokenBits {
                surprisal: -self.prob(ctx, id).log2(),
                entropy,
            });
            ctx = Context::Word(id);
        }
        Ok(out)
    }

    /// Writes a TSV count dump: magic line, alpha, word types, then counts.
    pub fn write_counts<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{DUMP_MAGIC}")?;
        writeln!(w, "alpha\t{}", self.alpha)?;
        for t in self.vocab.word_types() {
            writeln!(w, "type\t{t}")?;
        }
        for (ctx, row) in &self.counts {
            let c = match ctx {
                Context::Bos => BOS,
                Context::Word(id) => self.vocab.symbol(*id),
            };
            for (word, n) in row {
                writeln!(w, "count\t{c}\t{}\t{n}", self.vocab.symbol(*word))?;
            }
        }
        Ok(())
    }

    pub fn read_counts<R: Read>(reader: R) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::ModelFormat(format!("line {}: {msg}", line + 1));
        let lines: Vec<String> = BufReader::new(reader)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        if lines.first().map(String::as_str) != Some(DUMP_MAGIC) {
            return Err(bad(0, "missing format header"));
        }
        let mut alpha = None;
        let mut types = BTreeSet::new();
        let mut raw_counts = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            match f.as_slice() {
                ["alpha", a] => alpha = Some(a.parse::<f64>().map_err(|_| bad(i, "bad alpha"))?),
                ["type", t] => {
                    types.insert(t.to_string());
                }
                ["count", c, w, n] => {
                    let n: u64 = n.parse().map_err(|_| bad(i, "bad count"))?;
                    raw_counts.push((i, c.to_string(), w.to_string(), n));
                }
                [""] => {}
                _ => return Err(bad(i, "unrecognized record")),
            }
        }
        let alpha = alpha.ok_or_else(|| bad(0, "missing alpha"))?;
        let vocab = Vocabulary::new(types)?;
        let mut counts: BTreeMap<Context, BTreeMap<u32, u64>> = BTreeMap::new();
        for (i, c, w, n) in raw_counts {
            let ctx = if c == BOS {
                Context::Bos
            } else {
                Context::Word(*vocab.index.get(&c).ok_or_else(|| bad(i, "unknown context"))?)
            };
            let word = *vocab.index.get(&w).ok_or_else(|| bad(i, "unknown word"))?;
            counts.entry(ctx).or_default().insert(word, n);
        }
        Ok(Self::from_counts(vocab, alpha, counts))
    }
}

/// Splits whitespace words into sentences at words ending in `.`, `!` or `?`
/// (optionally followed by closing quotes or brackets).
pub fn split_sentences<'a>(words: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for w in words {
        cur.push(*w);
        let core = w.trim_end_matches(['"', '\'', '»', '«', '“', '”', '‘', '’', ')', ']']);
        if core.ends_with(['.', '!', '?']) {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Sentences of a plain-text training corpus: one sentence per line.
pub fn corpus_sentences(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Sentences of stimulus texts, for training on the stimuli themselves.
pub fn text_sentences(texts: &Texts) -> Vec<Vec<String>> {
    texts
        .values()
        .flat_map(|t| {
            let words: Vec<&str> = t.split_whitespace().collect();
            split_sentences(&words)
                .into_iter()
                .map(|s| s.into_iter().map(str::to_string).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Scores every word of every text, emitting one token per word with its
/// character span, in the `tokens.tsv` exchange format.
pub fn score_texts(lm: &BigramLm, texts: &Texts, lm_tag: &str) -> Result<TokenScoreTable> {
    let mut rows = Vec::new();
    for (text_id, text) in texts {
        let spans = word_spans(text);
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut idx = 0usize;
        for sentence in split_sentences(&words) {
            for bits in lm.score_tokens(&sentence)? {
                let (start, end) = spans[idx];
                rows.push(TokenScore {
                    text_id: text_id.clone(),
                    token_index: idx as u32,
                    token: words[idx].to_string(),
                    char_start: start,
                    char_end: end,
                    surprisal_bits: bits.surprisal,
                    entropy_bits: bits.entropy,
                });
                idx += 1;
            }
        }
    }
    Ok(TokenScoreTable {
        lm_tag: lm_tag.to_string(),
        rows,
    })
}
