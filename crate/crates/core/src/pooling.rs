//! Token-level LM scores (the `tokens.tsv` exchange format), alignment of
//! tokens to whitespace words by character offsets, and pooling to word level.
//!
//! Word surprisal is the sum of its tokens' surprisals, which equals the
//! surprisal of the tokens' joint probability by the chain rule. Word entropy
//! is the sum of token entropies, an upper bound on the joint entropy that is
//! tight only when the tokens are independent.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ItemKey, Texts};
use crate::tsv;

pub const TOKENS_HEADER: [&str; 7] = [
    "text_id",
    "token_index",
    "token",
    "char_start",
    "char_end",
    "surprisal_bits",
    "entropy_bits",
];

pub const WORDS_HEADER: [&str; 6] = [
    "text_id",
    "word_index",
    "word",
    "surprisal_bits",
    "entropy_bits",
    "token_count",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub text_id: String,
    pub token_index: u32,
    pub token: String,
    /// Character (Unicode scalar) offsets into the text, half-open.
    pub char_start: u32,
    pub char_end: u32,
    pub surprisal_bits: f64,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreTable {
    pub lm_tag: String,
    pub rows: Vec<TokenScore>,
}

impl TokenScoreTable {
    /// Checks ordering, span and value invariants within each text.
    pub fn validate(&self) -> Result<()> {
        let mut last: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
        for t in &self.rows {
            let bad = |message: String| Error::Alignment {
                text_id: t.text_id.clone(),
                message,
            };
            if t.char_start >= t.char_end {
                return Err(bad(format!("token {} has empty span", t.token_index)));
            }
            if !(t.surprisal_bits.is_finite() && t.surprisal_bits >= 0.0) {
                return Err(bad(format!("token {} surprisal {}", t.token_index, t.surprisal_bits)));
            }
            if !(t.entropy_bits.is_finite() && t.entropy_bits >= 0.0) {
                return Err(bad(format!("token {} entropy {}", t.token_index, t.entropy_bits)));
            }
            if let Some(&(idx, end)) = last.get(t.text_id.as_str()) {
                if t.token_index <= idx {
                    return Err(bad(format!("token_index {} not increasing", t.token_index)));
                }
                if t.char_start < end {
                    return Err(bad(format!("token {} overlaps its predecessor", t.token_index)));
                }
            }
            last.insert(&t.text_id, (t.token_index, t.char_end));
        }
        Ok(())
    }

    pub fn write_tsv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        tsv::write_row(w, &TOKENS_HEADER)?;
        for t in &self.rows {
            tsv::write_row(
                w,
                &[
                    &t.text_id,
                    &t.token_index.to_string(),
                    &t.token,
                    &t.char_start.to_string(),
                    &t.char_end.to_string(),
                    &t.surprisal_bits.to_string(),
                    &t.entropy_bits.to_string(),
                ],
            )?;
        }
        Ok(())
    }
}

pub fn load_token_scores(path: &Path, lm_tag: &str) -> Result<TokenScoreTable> {
    parse_token_scores(tsv::open(path)?, &path.display().to_string(), lm_tag)
}

pub fn parse_token_scores<R: Read>(
    reader: R,
    source_name: &str,
    lm_tag: &str,
) -> Result<TokenScoreTable> {
    let records = tsv::read_records(reader, source_name, &TOKENS_HEADER)?;
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let f = &rec.fields;
        rows.push(TokenScore {
            text_id: f[0].clone(),
            token_index: tsv::parse_u32(source_name, rec.line, "token_index", &f[1])?,
            token: f[2].clone(),
            char_start: tsv::parse_u32(source_name, rec.line, "char_start", &f[3])?,
            char_end: tsv::parse_u32(source_name, rec.line, "char_end", &f[4])?,
            surprisal_bits: tsv::parse_f64(source_name, rec.line, "surprisal_bits", &f[5])?,
            entropy_bits: tsv::parse_f64(source_name, rec.line, "entropy_bits", &f[6])?,
        });
    }
    let table = TokenScoreTable {
        lm_tag: lm_tag.to_string(),
        rows,
    };
    table.validate()?;
    Ok(table)
}

/// Word-level scores pooled from one or more tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub text_id: String,
    pub word_index: u32,
    pub surprisal_bits: f64,
    /// Sum of token entropies: an upper bound on the word's joint entropy.
    pub entropy_upper_bits: f64,
    pub token_count: u32,
}

pub type WordScores = BTreeMap<ItemKey, WordScore>;

/// Character spans `[start, end)` of the whitespace-separated words.
pub fn word_spans(text: &str) -> Vec<(u32, u32)> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut n = 0u32;
    for (i, c) in text.chars().enumerate() {
        let i = i as u32;
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
        n = i + 1;
    }
    if let Some(s) = start {
        spans.push((s, n));
    }
    spans
}

/// Maps each word index to the token indices (positions in `tokens`' own
/// `token_index` numbering) whose first non-whitespace character it contains.
///
/// Whitespace-only tokens are attached to the following word. Tokens whose
/// non-whitespace characters straddle two words are rejected, as are
/// uncovered characters and words without tokens.
pub fn align_tokens_to_words(
    text_id: &str,
    text: &str,
    tokens: &[TokenScore],
) -> Result<BTreeMap<u32, Vec<u32>>> {
    let err = |message: String| Error::Alignment {
        text_id: text_id.to_string(),
        message,
    };
    let chars: Vec<char> = text.chars().collect();
    let spans = word_spans(text);
    // word index for every non-whitespace character
    let mut owner = vec![None; chars.len()];
    for (w, &(s, e)) in spans.iter().enumerate() {
        for slot in &mut owner[s as usize..e as usize] {
            *slot = Some(w as u32);
        }
    }
    let mut covered = vec![false; chars.len()];
    let mut alignment: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut pending_ws = Vec::new();
    let mut prev_end = 0u32;

    for t in tokens {
        if t.char_start >= t.char_end || (t.char_end as usize) > chars.len() {
            return Err(err(format!(
                "token {} span [{}, {}) outside text of {} characters",
                t.token_index,
                t.char_start,
                t.char_end,
                chars.len()
            )));
        }
        if t.char_start < prev_end {
            return Err(err(format!("token {} overlaps its predecessor", t.token_index)));
        }
        prev_end = t.char_end;

        let range = t.char_start as usize..t.char_end as usize;
        let mut words = range.clone().filter_map(|i| owner[i]);
        let Some(first) = words.next() else {
            pending_ws.push(t.token_index);
            continue;
        };
        if let Some(other) = words.find(|w| *w != first) {
            return Err(err(format!(
                "token {} spans words {first} and {other}",
                t.token_index
            )));
        }
        for i in range {
            covered[i] = true;
        }
        let entry = alignment.entry(first).or_default();
        entry.append(&mut pending_ws);
        entry.push(t.token_index);
    }
    if !pending_ws.is_empty() {
        return Err(err(format!(
            "trailing whitespace-only tokens {pending_ws:?} belong to no word"
        )));
    }
    if let Some(i) = (0..chars.len()).find(|&i| owner[i].is_some() && !covered[i]) {
        return Err(err(format!("character {i} (`{}`) is not covered by any token", chars[i])));
    }
    if let Some(w) = (0..spans.len() as u32).find(|w| !alignment.contains_key(w)) {
        return Err(err(format!("word {w} received no tokens")));
    }
    Ok(alignment)
}

/// Sums token surprisals and entropies within each aligned word.
pub fn pool_word_scores(
    text_id: &str,
    alignment: &BTreeMap<u32, Vec<u32>>,
    tokens: &[TokenScore],
) -> Result<Vec<WordScore>> {
    let by_index: BTreeMap<u32, &TokenScore> = tokens.iter().map(|t| (t.token_index, t)).collect();
    alignment
        .iter()
        .map(|(&word_index, idx)| {
            let mut surprisal = 0.0;
            let mut entropy = 0.0;
            for i in idx {
                let t = by_index.get(i).ok_or_else(|| Error::Alignment {
                    text_id: text_id.to_string(),
                    message: format!("alignment references unknown token {i}"),
                })?;
                surprisal += t.surprisal_bits;
                entropy += t.entropy_bits;
            }
            Ok(WordScore {
                text_id: text_id.to_string(),
                word_index,
                surprisal_bits: surprisal,
                entropy_upper_bits: entropy,
                token_count: idx.len() as u32,
            })
        })
        .collect()
}

/// Aligns and pools every text of a token table.
pub fn pool_table(texts: &Texts, table: &TokenScoreTable) -> Result<WordScores> {
    table.validate()?;
    let mut by_text: BTreeMap<&str, Vec<TokenScore>> = BTreeMap::new();
    for t in &table.rows {
        by_text.entry(t.text_id.as_str()).or_default().push(t.clone());
    }
    if let Some(unknown) = by_text.keys().find(|id| !texts.contains_key(**id)) {
        return Err(Error::Alignment {
            text_id: unknown.to_string(),
            message: format!("tokens for `{}` refer to an unknown text", table.lm_tag),
        });
    }
    let mut out = WordScores::new();
    for (text_id, text) in texts {
        let tokens = by_text.get(text_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let alignment = align_tokens_to_words(text_id, text, tokens)?;
        for ws in pool_word_scores(text_id, &alignment, tokens)? {
            out.insert(ItemKey::new(text_id.clone(), ws.word_index), ws);
        }
    }
    Ok(out)
}

pub fn write_word_scores<W: Write>(w: &mut W, texts: &Texts, scores: &WordScores) -> std::io::Result<()> {
    tsv::write_row(w, &WORDS_HEADER)?;
    for (key, ws) in scores {
        let word = texts
            .get(&key.text_id)
            .and_then(|t| t.split_whitespace().nth(key.word_index as usize))
            .unwrap_or("");
        tsv::write_row(
            w,
            &[
                &key.text_id,
                &key.word_index.to_string(),
                word,
                &ws.surprisal_bits.to_string(),
                &ws.entropy_upper_bits.to_string(),
                &ws.token_count.to_string(),
            ],
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(i: u32, s: u32, e: u32, surprisal: f64, entropy: f64) -> TokenScore {
        TokenScore {
            text_id: "t".into(),
            token_index: i,
            token: String::new(),
            char_start: s,
            char_end: e,
            surprisal_bits: surprisal,
            entropy_bits: entropy,
        }
    }

    #[test]
    fn one_token_per_word() {
        let a = align_tokens_to_words("t", "ab cd", &[tok(0, 0, 2, 1.0, 1.0), tok(1, 3, 5, 1.0, 1.0)]).unwrap();
        assert_eq!(a, BTreeMap::from([(0, vec![0]), (1, vec![1])]));
    }

    #[test]
    fn two_tokens_in_first_word() {
        let toks = [tok(0, 0, 1, 1.0, 1.0), tok(1, 1, 3, 1.0, 1.0), tok(2, 4, 5, 1.0, 1.0)];
        let a = align_tokens_to_words("t", "abc d", &toks).unwrap();
        assert_eq!(a, BTreeMap::from([(0, vec![0, 1]), (1, vec![2])]));
    }

    #[test]
    fn uncovered_character_is_rejected() {
        assert!(matches!(
            align_tokens_to_words("t", "ab", &[tok(0, 0, 1, 1.0, 1.0)]),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn leading_whitespace_markers_attach_to_their_word() {
        // GPT-2 style: " cd" carries the space.
        let toks = [tok(0, 0, 2, 1.0, 1.0), tok(1, 2, 5, 1.0, 1.0)];
        let a = align_tokens_to_words("t", "ab cd", &toks).unwrap();
        assert_eq!(a, BTreeMap::from([(0, vec![0]), (1, vec![1])]));
        // a lone whitespace token joins the next word
        let toks = [tok(0, 0, 2, 1.0, 1.0), tok(1, 2, 3, 1.0, 1.0), tok(2, 3, 5, 1.0, 1.0)];
        let a = align_tokens_to_words("t", "ab cd", &toks).unwrap();
        assert_eq!(a[&1], vec![1, 2]);
    }

    #[test]
    fn straddling_token_is_rejected() {
        let toks = [tok(0, 0, 4, 1.0, 1.0), tok(1, 4, 5, 1.0, 1.0)];
        assert!(align_tokens_to_words("t", "ab cd", &toks).is_err());
    }

    #[test]
    fn out_of_range_span_is_rejected() {
        assert!(align_tokens_to_words("t", "ab", &[tok(0, 0, 3, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn surprisal_sums() {
        let toks = [tok(0, 0, 1, 2.0, 0.5), tok(1, 1, 2, 3.0, 0.5), tok(2, 2, 3, 1.5, 0.25)];
        let a = align_tokens_to_words("t", "abc", &toks).unwrap();
        let w = pool_word_scores("t", &a, &toks).unwrap();
        assert_eq!(w.len(), 1);
        assert!((w[0].surprisal_bits - 6.5).abs() < 1e-15);
        assert!((w[0].entropy_upper_bits - 1.25).abs() < 1e-15);
        assert_eq!(w[0].token_count, 3);
    }

    #[test]
    fn single_token_entropy_is_identity() {
        let toks = [tok(0, 0, 3, 4.0, 1.25)];
        let a = align_tokens_to_words("t", "abc", &toks).unwrap();
        let w = pool_word_scores("t", &a, &toks).unwrap();
        assert_eq!(w[0].entropy_upper_bits, 1.25);
    }

    #[test]
    fn token_order_within_word_does_not_matter() {
        let toks = [tok(0, 0, 1, 0.7, 1.1), tok(1, 1, 2, 2.9, 0.3)];
        let a = align_tokens_to_words("t", "ab", &toks).unwrap();
        let fwd = pool_word_scores("t", &a, &toks).unwrap();
        let rev_align = BTreeMap::from([(0u32, vec![1u32, 0])]);
        let rev = pool_word_scores("t", &rev_align, &toks).unwrap();
        assert_eq!(fwd[0].surprisal_bits, rev[0].surprisal_bits);
        assert_eq!(fwd[0].entropy_upper_bits, rev[0].entropy_upper_bits);
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let table = |rows| TokenScoreTable { lm_tag: "x".into(), rows };
        assert!(table(vec![tok(0, 0, 1, -1.0, 0.0)]).validate().is_err());
        assert!(table(vec![tok(0, 0, 1, 1.0, f64::NAN)]).validate().is_err());
        assert!(table(vec![tok(1, 0, 1, 1.0, 1.0), tok(1, 1, 2, 1.0, 1.0)]).validate().is_err());
        assert!(table(vec![tok(0, 0, 2, 1.0, 1.0), tok(1, 1, 3, 1.0, 1.0)]).validate().is_err());
        assert!(table(vec![tok(0, 0, 1, 0.0, 0.0), tok(3, 2, 3, 1.0, 1.0)]).validate().is_ok());
    }

    #[test]
    fn tsv_round_trip() {
        let t = TokenScoreTable {
            lm_tag: "x".into(),
            rows: vec![tok(0, 0, 2, 1.5, 0.1), tok(1, 3, 5, 0.1 + 0.2, 7.0)],
        };
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        let back = parse_token_scores(buf.as_slice(), "mem", "x").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn unicode_offsets_are_characters() {
        let text = "Größe ist";
        assert_eq!(word_spans(text), vec![(0, 5), (6, 9)]);
    }
}
