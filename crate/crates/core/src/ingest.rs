//! Reading events, psychometric profiles, lexicon and stimulus texts, and the
//! joined, standardized [`AnalysisTable`] that every regression runs on.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::WordScores;
use crate::tsv;

pub const READINGS_HEADER: [&str; 5] = ["subject_id", "text_id", "word_index", "word", "fprt_ms"];
pub const SCORES_HEADER: [&str; 3] = ["subject_id", "test_name", "raw_score"];
pub const LEXICON_HEADER: [&str; 2] = ["word", "log_lemma_freq"];
pub const TEXTS_HEADER: [&str; 2] = ["text_id", "text"];

/// The psychometric battery: working memory, cognitive control,
/// intelligence and reading fluency tests.
pub const PSYCHOMETRIC_TESTS: [&str; 13] = [
    "Stroop",
    "Simon",
    "FAIR",
    "Sentence span",
    "Operation span",
    "Memory updating",
    "Spatial short-term memory",
    "MWT",
    "RIAS verbal",
    "RIAS non-verbal",
    "RIAS total",
    "SLRT words",
    "SLRT pseudo-words",
];

/// Tests where lower raw values mean better performance (reaction-time
/// costs); they are negated before standardization.
pub const NEGATED_TESTS: [&str; 2] = ["Stroop", "Simon"];

/// Names of the predictor columns in an [`AnalysisTable`].
pub mod columns {
    pub const LENGTH: &str = "length";
    pub const LOGFREQ: &str = "logfreq";

    pub fn surprisal(lm_tag: &str) -> String {
        format!("surprisal[{lm_tag}]")
    }

    pub fn entropy(lm_tag: &str) -> String {
        format!("entropy[{lm_tag}]")
    }

    pub fn score(test: &str) -> String {
        format!("score[{test}]")
    }

    /// Elementwise product of two columns; resolved on demand by
    /// [`AnalysisTable::column`](super::AnalysisTable::column).
    pub fn product(a: &str, b: &str) -> String {
        format!("{a}*{b}")
    }
}

/// A word position in the stimulus corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemKey {
    pub text_id: String,
    pub word_index: u32,
}

impl ItemKey {
    pub fn new(text_id: impl Into<String>, word_index: u32) -> Self {
        Self {
            text_id: text_id.into(),
            word_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingEvent {
    pub subject_id: String,
    pub text_id: String,
    pub word_index: u32,
    pub word: String,
    /// First-pass reading time; `None` when the word was skipped.
    pub fprt_ms: Option<f64>,
}

/// One subject's standardized psychometric scores, keyed by test name.
///
/// Tests in the negation set (Stroop, Simon) are stored sign-flipped so
/// that higher always means better performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub scores: BTreeMap<String, f64>,
}

pub fn load_reading_events(path: &Path) -> Result<Vec<ReadingEvent>> {
    parse_reading_events(tsv::open(path)?, &path.display().to_string())
}

pub fn parse_reading_events<R: Read>(reader: R, source_name: &str) -> Result<Vec<ReadingEvent>> {
    let records = tsv::read_records(reader, source_name, &READINGS_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut events = Vec::with_capacity(records.len());
    for rec in records {
        let f = &rec.fields;
        let word_index = tsv::parse_u32(source_name, rec.line, "word_index", &f[2])?;
        let fprt_ms = if f[4].trim().is_empty() {
            None
        } else {
            let v = tsv::parse_f64(source_name, rec.line, "fprt_ms", &f[4])?;
            if v <= 0.0 {
                return Err(Error::parse(
                    source_name,
                    rec.line,
                    format!("fprt_ms must be positive, found {v}"),
                ));
            }
            Some(v)
        };
        if !seen.insert((f[0].clone(), f[1].clone(), word_index)) {
            return Err(Error::Duplicate(format!(
                "reading event (subject {}, text {}, word {}) at {}:{}",
                f[0], f[1], word_index, source_name, rec.line
            )));
        }
        events.push(ReadingEvent {
            subject_id: f[0].clone(),
            text_id: f[1].clone(),
            word_index,
            word: f[3].clone(),
            fprt_ms,
        });
    }
    Ok(events)
}

pub fn load_psychometric_scores(
    path: &Path,
    negate_set: &BTreeSet<String>,
) -> Result<Vec<SubjectProfile>> {
    parse_psychometric_scores(tsv::open(path)?, &path.display().to_string(), negate_set)
}

/// Parses long-format raw scores, negates the tests in `negate_set`, then
/// z-scores every test across subjects.
pub fn parse_psychometric_scores<R: Read>(
    reader: R,
    source_name: &str,
    negate_set: &BTreeSet<String>,
) -> Result<Vec<SubjectProfile>> {
    let records = tsv::read_records(reader, source_name, &SCORES_HEADER)?;
    let mut raw: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut tests = BTreeSet::new();
    for rec in records {
        let f = &rec.fields;
        let v = tsv::parse_f64(source_name, rec.line, "raw_score", &f[2])?;
        tests.insert(f[1].clone());
        if raw.entry(f[0].clone()).or_default().insert(f[1].clone(), v).is_some() {
            return Err(Error::Duplicate(format!(
                "score for subject {} on test `{}` at {}:{}",
                f[0], f[1], source_name, rec.line
            )));
        }
    }
    standardize_profiles(raw, &tests, negate_set)
}

/// Negation and z-scoring over an in-memory raw score table
/// (subject → test → raw score).
pub fn standardize_profiles(
    raw: BTreeMap<String, BTreeMap<String, f64>>,
    tests: &BTreeSet<String>,
    negate_set: &BTreeSet<String>,
) -> Result<Vec<SubjectProfile>> {
    if raw.is_empty() {
        return Err(Error::IncompleteScores("no subjects".into()));
    }
    let mut missing = Vec::new();
    for (subject, scores) in &raw {
        for t in tests {
            if !scores.contains_key(t) {
                missing.push(format!("({subject}, {t})"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteScores(format!("missing {}", missing.join(", "))));
    }

    let subjects: Vec<&String> = raw.keys().collect();
    let mut standardized: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
    for t in tests {
        let sign = if negate_set.contains(t) { -1.0 } else { 1.0 };
        let values: Vec<f64> = subjects.iter().map(|s| sign * raw[*s][t]).collect();
        let z = zscore(&values).ok_or_else(|| Error::DegenerateScore(t.clone()))?;
        standardized.insert(t, z);
    }

    Ok(subjects
        .iter()
        .enumerate()
        .map(|(j, s)| SubjectProfile {
            subject_id: (*s).clone(),
            scores: standardized.iter().map(|(t, z)| ((*t).clone(), z[j])).collect(),
        })
        .collect())
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Z-scores with the sample standard deviation; `None` when fewer than two
/// values are given or all values are equal.
pub fn zscore(values: &[f64]) -> Option<Vec<f64>> {
    if values.len() < 2 {
        return None;
    }
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return None;
    }
    let (mean, sd) = mean_sd(values);
    if !(sd > 0.0) || !sd.is_finite() {
        return None;
    }
    Some(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Surface form → log-lemma frequency (natural log, per million tokens).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: BTreeMap<String, f64>,
}

impl Lexicon {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact surface-form match first, then the form with leading and
    /// trailing punctuation removed.
    pub fn lookup(&self, word: &str) -> Option<f64> {
        if let Some(v) = self.entries.get(word) {
            return Some(*v);
        }
        let trimmed = word.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() || trimmed == word {
            return None;
        }
        self.entries.get(trimmed).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    parse_lexicon(tsv::open(path)?, &path.display().to_string())
}

pub fn parse_lexicon<R: Read>(reader: R, source_name: &str) -> Result<Lexicon> {
    let records = tsv::read_records(reader, source_name, &LEXICON_HEADER)?;
    let mut entries = BTreeMap::new();
    for rec in records {
        let v = tsv::parse_f64(source_name, rec.line, "log_lemma_freq", &rec.fields[1])?;
        if entries.insert(rec.fields[0].clone(), v).is_some() {
            return Err(Error::Duplicate(format!(
                "lexicon entry `{}` at {}:{}",
                rec.fields[0], source_name, rec.line
            )));
        }
    }
    Ok(Lexicon { entries })
}

/// Stimulus texts keyed by text id.
pub type Texts = BTreeMap<String, String>;

pub fn load_texts(path: &Path) -> Result<Texts> {
    parse_texts(tsv::open(path)?, &path.display().to_string())
}

pub fn parse_texts<R: Read>(reader: R, source_name: &str) -> Result<Texts> {
    let records = tsv::read_records(reader, source_name, &TEXTS_HEADER)?;
    let mut texts = BTreeMap::new();
    for rec in records {
        if texts.insert(rec.fields[0].clone(), rec.fields[1].clone()).is_some() {
            return Err(Error::Duplicate(format!(
                "text `{}` at {}:{}",
                rec.fields[0], source_name, rec.line
            )));
        }
    }
    Ok(texts)
}

pub fn write_texts<W: Write>(w: &mut W, texts: &Texts) -> std::io::Result<()> {
    tsv::write_row(w, &TEXTS_HEADER)?;
    for (id, text) in texts {
        tsv::write_row(w, &[id, text])?;
    }
    Ok(())
}

pub fn write_reading_events<W: Write>(w: &mut W, events: &[ReadingEvent]) -> std::io::Result<()> {
    tsv::write_row(w, &READINGS_HEADER)?;
    for e in events {
        let rt = e.fprt_ms.map(|v| v.to_string()).unwrap_or_default();
        tsv::write_row(w, &[&e.subject_id, &e.text_id, &e.word_index.to_string(), &e.word, &rt])?;
    }
    Ok(())
}

/// Long-format raw scores: subject → test → value.
pub fn write_raw_scores<W: Write>(w: &mut W, raw: &BTreeMap<String, BTreeMap<String, f64>>) -> std::io::Result<()> {
    tsv::write_row(w, &SCORES_HEADER)?;
    for (subject, tests) in raw {
        for (test, v) in tests {
            tsv::write_row(w, &[subject, test, &v.to_string()])?;
        }
    }
    Ok(())
}

pub fn write_lexicon<W: Write>(w: &mut W, lexicon: &Lexicon) -> std::io::Result<()> {
    tsv::write_row(w, &LEXICON_HEADER)?;
    for (word, v) in lexicon.iter() {
        tsv::write_row(w, &[word, &v.to_string()])?;
    }
    Ok(())
}

/// Checks that every event's word matches the whitespace-tokenized stimulus.
pub fn check_events_against_texts(events: &[ReadingEvent], texts: &Texts) -> Result<()> {
    let words: HashMap<&str, Vec<&str>> = texts
        .iter()
        .map(|(id, t)| (id.as_str(), t.split_whitespace().collect()))
        .collect();
    for e in events {
        let text = words
            .get(e.text_id.as_str())
            .ok_or_else(|| Error::TextMismatch(format!("unknown text `{}`", e.text_id)))?;
        match text.get(e.word_index as usize) {
            Some(w) if *w == e.word => {}
            Some(w) => {
                return Err(Error::TextMismatch(format!(
                    "text {} word {} is `{}` but subject {} read `{}`",
                    e.text_id, e.word_index, w, e.subject_id, e.word
                )))
            }
            None => {
                return Err(Error::TextMismatch(format!(
                    "text {} has no word {}",
                    e.text_id, e.word_index
                )))
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingLexiconPolicy {
    /// Drop the row and log a warning.
    #[default]
    Drop,
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub lm_tags: Vec<String>,
    /// Psychometric tests to carry as columns; `None` keeps every test.
    pub tests: Option<Vec<String>>,
    pub missing_lexicon: MissingLexiconPolicy,
    /// Optional reading-time filters; off unless set.
    pub min_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub skipped: usize,
    pub lexicon_dropped: usize,
    pub rt_filtered: usize,
}

/// One row per retained (subject, word) reading event.
///
/// `y` holds log first-pass reading time. Every predictor column is
/// z-scored over the rows of the table it was built for; tables derived with
/// [`AnalysisTable::subset_subjects`] keep the parent's standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisTable {
    subject_ids: Vec<String>,
    items: Vec<ItemKey>,
    subject: Vec<u32>,
    item: Vec<u32>,
    y: Vec<f64>,
    columns: BTreeMap<String, Vec<f64>>,
    exclusions: ExclusionCounts,
}

/// Identifies one row when constructing a table directly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowKey {
    pub subject_id: String,
    pub item: ItemKey,
}

impl AnalysisTable {
    /// Assembles a table from already-prepared rows. Columns are taken as
    /// given; call [`AnalysisTable::standardize`] to z-score them.
    pub fn from_rows(
        rows: Vec<RowKey>,
        y: Vec<f64>,
        columns: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyTable("no rows".into()));
        }
        if y.len() != rows.len() {
            return Err(Error::InvalidParameter(format!(
                "{} responses for {} rows",
                y.len(),
                rows.len()
            )));
        }
        for (name, col) in &columns {
            if col.len() != rows.len() {
                return Err(Error::InvalidParameter(format!(
                    "column `{name}` has {} values for {} rows",
                    col.len(),
                    rows.len()
                )));
            }
            if name.contains('*') {
                return Err(Error::InvalidParameter(format!(
                    "column name `{name}` may not contain `*`"
                )));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite response in row {i}")));
        }

        let subject_ids: Vec<String> = rows
            .iter()
            .map(|r| r.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<ItemKey> = rows
            .iter()
            .map(|r| r.item.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let subject_pos: HashMap<&str, u32> = subject_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let item_pos: HashMap<&ItemKey, u32> =
            items.iter().enumerate().map(|(i, k)| (k, i as u32)).collect();

        let mut seen = BTreeSet::new();
        let mut subject = Vec::with_capacity(rows.len());
        let mut item = Vec::with_capacity(rows.len());
        for r in &rows {
            let s = subject_pos[r.subject_id.as_str()];
            let i = item_pos[&r.item];
            if !seen.insert((s, i)) {
                return Err(Error::Duplicate(format!(
                    "row (subject {}, text {}, word {})",
                    r.subject_id, r.item.text_id, r.item.word_index
                )));
            }
            subject.push(s);
            item.push(i);
        }

        Ok(Self {
            subject_ids,
            items,
            subject,
            item,
            y,
            columns,
            exclusions: ExclusionCounts::default(),
        })
    }

    /// Z-scores every predictor column over the table's rows.
    pub fn standardize(&mut self) -> Result<()> {
        for (name, col) in self.columns.iter_mut() {
            *col = zscore(col).ok_or_else(|| {
                Error::InsufficientData(format!("column `{name}` has zero variance over rows"))
            })?;
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// J: number of distinct subjects.
    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    /// I: number of distinct words (items).
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn items(&self) -> &[ItemKey] {
        &self.items
    }

    /// Subject index (into [`subject_ids`](Self::subject_ids)) per row.
    pub fn subject_index(&self) -> &[u32] {
        &self.subject
    }

    /// Item index (into [`items`](Self::items)) per row.
    pub fn item_index(&self) -> &[u32] {
        &self.item
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn exclusions(&self) -> ExclusionCounts {
        self.exclusions
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_ok()
    }

    /// Looks up a stored column, or builds `a*b` as the elementwise product
    /// of two stored columns. Products are not re-standardized.
    pub fn column(&self, name: &str) -> Result<Cow<'_, [f64]>> {
        if let Some(c) = self.columns.get(name) {
            return Ok(Cow::Borrowed(c));
        }
        if let Some((a, b)) = name.split_once('*') {
            let a = self.column(a)?;
            let b = self.column(b)?;
            return Ok(Cow::Owned(a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()));
        }
        Err(Error::Spec(format!("no column `{name}` in analysis table")))
    }

    /// Replaces (or adds) a stored column.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::InvalidParameter(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn set_y(&mut self, y: Vec<f64>) -> Result<()> {
        if y.len() != self.n_rows() {
            return Err(Error::InvalidParameter("response length mismatch".into()));
        }
        self.y = y;
        Ok(())
    }

    /// Per-subject value of a subject-level column; errors if the column
    /// varies within a subject.
    pub fn subject_values(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        let mut out = vec![f64::NAN; self.n_subjects()];
        for (row, &s) in self.subject.iter().enumerate() {
            let v = col[row];
            let slot = &mut out[s as usize];
            if slot.is_nan() {
                *slot = v;
            } else if *slot != v {
                return Err(Error::Spec(format!(
                    "column `{name}` is not constant within subject {}",
                    self.subject_ids[s as usize]
                )));
            }
        }
        Ok(out)
    }

    /// Restricts the table to the subjects with `keep[j]`; standardization of
    /// the parent table is retained.
    pub fn subset_subjects(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.n_subjects() {
            return Err(Error::InvalidParameter("subject mask length mismatch".into()));
        }
        let rows: Vec<usize> = (0..self.n_rows())
            .filter(|&r| keep[self.subject[r] as usize])
            .collect();
        let keys = rows
            .iter()
            .map(|&r| RowKey {
                subject_id: self.subject_ids[self.subject[r] as usize].clone(),
                item: self.items[self.item[r] as usize].clone(),
            })
            .collect();
        let y = rows.iter().map(|&r| self.y[r]).collect();
        let columns = self
            .columns
            .iter()
            .map(|(k, c)| (k.clone(), rows.iter().map(|&r| c[r]).collect()))
            .collect();
        Self::from_rows(keys, y, columns)
    }

    /// Writes the table as TSV: keys, `y`, then predictor columns in name order.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = vec!["subject_id", "text_id", "word_index", "y"];
        header.extend(self.columns.keys().map(String::as_str));
        tsv::write_row(w, &header)?;
        for r in 0..self.n_rows() {
            let item = &self.items[self.item[r] as usize];
            let mut fields = vec![
                self.subject_ids[self.subject[r] as usize].clone(),
                item.text_id.clone(),
                item.word_index.to_string(),
                self.y[r].to_string(),
            ];
            fields.extend(self.columns.values().map(|c| c[r].to_string()));
            let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
            tsv::write_row(w, &refs)?;
        }
        Ok(())
    }
}

/// Joins events with profiles, lexicon and word-level LM scores.
///
/// Skipped words are excluded, `y = ln(fprt_ms)`, word length counts
/// characters including punctuation, and every predictor column is z-scored
/// over the retained rows.
pub fn build_analysis_table(
    events: &[ReadingEvent],
    profiles: &[SubjectProfile],
    lexicon: &Lexicon,
    word_scores: &BTreeMap<String, WordScores>,
    config: &TableConfig,
) -> Result<AnalysisTable> {
    let profiles: HashMap<&str, &SubjectProfile> =
        profiles.iter().map(|p| (p.subject_id.as_str(), p)).collect();
    let tests: Vec<String> = match &config.tests {
        Some(t) => t.clone(),
        None => profiles
            .values()
            .next()
            .map(|p| p.scores.keys().cloned().collect())
            .unwrap_or_default(),
    };
    for tag in &config.lm_tags {
        if !word_scores.contains_key(tag) {
            return Err(Error::Spec(format!("no word scores supplied for LM `{tag}`")));
        }
    }

    let mut order: Vec<&ReadingEvent> = events.iter().collect();
    order.sort_by(|a, b| {
        (&a.subject_id, &a.text_id, a.word_index).cmp(&(&b.subject_id, &b.text_id, b.word_index))
    });

    let mut exclusions = ExclusionCounts::default();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for e in order {
        let Some(ms) = e.fprt_ms else {
            exclusions.skipped += 1;
            continue;
        };
        if !(ms > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "non-positive fprt_ms for subject {} text {} word {}",
                e.subject_id, e.text_id, e.word_index
            )));
        }
        if config.min_ms.is_some_and(|m| ms < m) || config.max_ms.is_some_and(|m| ms > m) {
            exclusions.rt_filtered += 1;
            continue;
        }
        let profile = profiles.get(e.subject_id.as_str()).ok_or_else(|| {
            Error::IncompleteScores(format!("subject {} has no psychometric scores", e.subject_id))
        })?;
        let Some(freq) = lexicon.lookup(&e.word) else {
            match config.missing_lexicon {
                MissingLexiconPolicy::Drop => {
                    log::warn!(
                        "dropping subject {} text {} word {} (`{}`): not in lexicon",
                        e.subject_id,
                        e.text_id,
                        e.word_index,
                        e.word
                    );
                    exclusions.lexicon_dropped += 1;
                    continue;
                }
                MissingLexiconPolicy::Error => {
                    return Err(Error::MissingLexicon {
                        word: e.word.clone(),
                        text_id: e.text_id.clone(),
                        word_index: e.word_index,
                    })
                }
            }
        };

        let key = ItemKey::new(e.text_id.clone(), e.word_index);
        for tag in &config.lm_tags {
            let ws = word_scores[tag].get(&key).ok_or_else(|| Error::MissingWordScore {
                lm_tag: tag.clone(),
                text_id: e.text_id.clone(),
                word_index: e.word_index,
            })?;
            raw.entry(columns::surprisal(tag)).or_default().push(ws.surprisal_bits);
            raw.entry(columns::entropy(tag)).or_default().push(ws.entropy_upper_bits);
        }
        for t in &tests {
            let v = profile.scores.get(t).ok_or_else(|| {
                Error::IncompleteScores(format!("subject {} lacks test `{t}`", e.subject_id))
            })?;
            raw.entry(columns::score(t)).or_default().push(*v);
        }
        raw.entry(columns::LENGTH.to_string())
            .or_default()
            .push(e.word.chars().count() as f64);
        raw.entry(columns::LOGFREQ.to_string()).or_default().push(freq);

        rows.push(RowKey {
            subject_id: e.subject_id.clone(),
            item: key,
        });
        y.push(ms.ln());
    }

    if rows.is_empty() {
        return Err(Error::EmptyTable("no reading events remain after exclusions".into()));
    }
    let mut table = AnalysisTable::from_rows(rows, y, raw)?;
    table.standardize()?;
    table.exclusions = exclusions;
    Ok(table)
}
