//! Synthetic reading-time data with a known generative model.
//!
//! Log reading times follow the interaction model
//!
//! ```text
//! y_ij = β0 + b_j + β1·l_i + β2·f_i + β3·s_i + β4·h_i + β5·c_j + β6·c_j·x_i + ε_ij
//! ```
//!
//! on standardized predictors, with `b_j ~ N(0, σ_b²)`, `ε_ij ~ N(0, σ²)` and
//! `x_i` either surprisal or entropy. Responses are generated after the
//! predictor columns are z-scored, so fitted coefficients estimate the
//! generator's coefficients without rescaling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    columns, write_lexicon, write_raw_scores, write_reading_events, write_texts, zscore, AnalysisTable, ItemKey,
    Lexicon, ReadingEvent, RowKey, Texts, NEGATED_TESTS, PSYCHOMETRIC_TESTS,
};
use crate::ngram::{score_texts, train_bigram};
use crate::pooling::pool_table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMeasure {
    Surprisal,
    Entropy,
}

/// Fixed effects of the generator, on the standardized predictor scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Coefficients {
    pub intercept: f64,
    pub length: f64,
    pub logfreq: f64,
    pub surprisal: f64,
    pub entropy: f64,
    pub score: f64,
    pub interaction: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        Self {
            intercept: 5.3,
            length: 0.03,
            logfreq: -0.03,
            surprisal: 0.06,
            entropy: 0.02,
            score: -0.02,
            interaction: -0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_subjects: usize,
    pub n_words: usize,
    pub words_per_text: usize,
    pub beta: Coefficients,
    pub sigma2_resid: f64,
    pub sigma2_subj: f64,
    pub lm_tag: String,
    pub test: String,
    pub interaction_measure: InteractionMeasure,
    /// When set, the surprisal slope applies only to subjects whose score is
    /// at or below the median; other subjects' times ignore surprisal.
    pub low_group_only: bool,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_subjects: 61,
            n_words: 800,
            words_per_text: 100,
            beta: Coefficients::default(),
            sigma2_resid: 0.09,
            sigma2_subj: 0.03,
            lm_tag: "sim".into(),
            test: "T".into(),
            interaction_measure: InteractionMeasure::Surprisal,
            low_group_only: false,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_subjects < 2 {
            problems.push("n_subjects must be at least 2".to_string());
        }
        if self.n_words < 2 {
            problems.push("n_words must be at least 2".to_string());
        }
        if self.words_per_text == 0 {
            problems.push("words_per_text must be positive".to_string());
        }
        if !(self.sigma2_resid > 0.0) {
            problems.push("sigma2_resid must be positive".to_string());
        }
        if !(self.sigma2_subj >= 0.0) {
            problems.push("sigma2_subj must be non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    pub fn interaction_column(&self) -> String {
        let measure = match self.interaction_measure {
            InteractionMeasure::Surprisal => columns::surprisal(&self.lm_tag),
            InteractionMeasure::Entropy => columns::entropy(&self.lm_tag),
        };
        columns::product(&measure, &columns::score(&self.test))
    }
}

/// Raw word-level predictors with realistic mutual correlations.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct WordPredictors {
    pub length: Vec<f64>,
    pub logfreq: Vec<f64>,
    pub surprisal: Vec<f64>,
    pub entropy: Vec<f64>,
}

pub(crate) fn word_predictors(n: usize, rng: &mut ChaCha8Rng) -> WordPredictors {
    let mut z = || std_normal(rng);
    let mut out = WordPredictors {
        length: Vec::with_capacity(n),
        logfreq: Vec::with_capacity(n),
        surprisal: Vec::with_capacity(n),
        entropy: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let (z1, z2, z3, z4) = (z(), z(), z(), z());
        let length = (5.0 + 2.5 * z1).round().max(1.0);
        let logfreq = 3.0 - 0.3 * length + 1.2 * z2;
        let surprisal = (9.0 - 0.8 * logfreq + 2.0 * z3).max(0.05);
        let entropy = (4.0 + 0.2 * surprisal + 0.8 * z4).max(0.05);
        out.length.push(length);
        out.logfreq.push(logfreq);
        out.surprisal.push(surprisal);
        out.entropy.push(entropy);
    }
    out
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Median of a sample (mean of the two central values for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub(crate) fn item_key(i: usize, words_per_text: usize) -> ItemKey {
    ItemKey::new(format!("text{:03}", i / words_per_text), (i % words_per_text) as u32)
}

/// Draws a standardized analysis table (every subject reads every word) and
/// generates log reading times from it.
pub fn simulate_table(cfg: &SimulationConfig) -> Result<AnalysisTable> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = word_predictors(cfg.n_words, &mut rng);
    let scores: Vec<f64> = (0..cfg.n_subjects)
        .map(|_| 100.0 + 15.0 * std_normal(&mut rng))
        .collect();

    let n = cfg.n_subjects * cfg.n_words;
    let mut rows = Vec::with_capacity(n);
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let names = [
        columns::LENGTH.to_string(),
        columns::LOGFREQ.to_string(),
        columns::surprisal(&cfg.lm_tag),
        columns::entropy(&cfg.lm_tag),
        columns::score(&cfg.test),
    ];
    for name in &names {
        cols.insert(name.clone(), Vec::with_capacity(n));
    }
    for (j, &score) in scores.iter().enumerate() {
        for i in 0..cfg.n_words {
            rows.push(RowKey {
                subject_id: format!("sub{j:03}"),
                item: item_key(i, cfg.words_per_text),
            });
            let values = [words.length[i], words.logfreq[i], words.surprisal[i], words.entropy[i], score];
            for (name, v) in names.iter().zip(values) {
                cols.get_mut(name).unwrap().push(v);
            }
        }
    }
    // Rows are generated in (subject, item) order, which the table keeps.
    let mut table = AnalysisTable::from_rows(rows, vec![0.0; n], cols)?;
    table.standardize()?;

    let l = table.column(&names[0])?.into_owned();
    let f = table.column(&names[1])?.into_owned();
    let s = table.column(&names[2])?.into_owned();
    let h = table.column(&names[3])?.into_owned();
    let c = table.column(&names[4])?.into_owned();
    let x = match cfg.interaction_measure {
        InteractionMeasure::Surprisal => &s,
        InteractionMeasure::Entropy => &h,
    };
    let cut = median(&scores);
    let noise = Normal::new(0.0, cfg.sigma2_resid.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let intercepts: Vec<f64> = (0..cfg.n_subjects)
        .map(|_| cfg.sigma2_subj.sqrt() * std_normal(&mut rng))
        .collect();
    let b = &cfg.beta;
    let subj = table.subject_index().to_vec();
    let y = (0..n)
        .map(|r| {
            let j = subj[r] as usize;
            let surprisal_slope = if cfg.low_group_only && scores[j] > cut { 0.0 } else { b.surprisal };
            b.intercept
                + intercepts[j]
                + b.length * l[r]
                + b.logfreq * f[r]
                + surprisal_slope * s[r]
                + b.entropy * h[r]
                + b.score * c[r]
                + b.interaction * c[r] * x[r]
                + noise.sample(&mut rng)
        })
        .collect();
    table.set_y(y)?;
    Ok(table)
}

/// File names written by [`simulate_corpus`].
pub mod files {
    pub const TEXTS: &str = "texts.tsv";
    pub const TRAIN: &str = "train.txt";
    pub const LEXICON: &str = "lexicon.tsv";
    pub const SCORES: &str = "scores.tsv";
    pub const READINGS: &str = "readings.tsv";
    pub const TRUTH: &str = "truth.json";

    pub fn tokens(lm_tag: &str) -> String {
        format!("tokens_{lm_tag}.tsv")
    }
}

/// A complete synthetic study on disk: pseudo-word texts from a Markov
/// chain, an LM training corpus from the same chain, a frequency lexicon,
/// the psychometric battery, bigram token scores and eye-tracking readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_subjects: usize,
    /// Stimulus words; texts are filled with whole sentences until reached.
    pub n_words: usize,
    pub words_per_text: usize,
    pub vocab_size: usize,
    pub train_sentences: usize,
    pub alpha: f64,
    pub lm_tag: String,
    pub beta: Coefficients,
    pub sigma2_resid: f64,
    pub sigma2_subj: f64,
    /// Test whose score modulates the LM measure.
    pub test: String,
    pub interaction_measure: InteractionMeasure,
    pub low_group_only: bool,
    /// Skip probability for words of at most three characters, and for all
    /// other words.
    pub skip_short: f64,
    pub skip_other: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_subjects: 61,
            n_words: 800,
            words_per_text: 100,
            vocab_size: 250,
            train_sentences: 3000,
            alpha: 0.1,
            lm_tag: "bigram".into(),
            beta: Coefficients::default(),
            sigma2_resid: 0.09,
            sigma2_subj: 0.03,
            test: "SLRT words".into(),
            interaction_measure: InteractionMeasure::Surprisal,
            low_group_only: false,
            skip_short: 0.25,
            skip_other: 0.05,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_subjects < 3 {
            problems.push("n_subjects must be at least 3".to_string());
        }
        if self.n_words < 10 {
            problems.push("n_words must be at least 10".to_string());
        }
        if self.words_per_text == 0 {
            problems.push("words_per_text must be positive".to_string());
        }
        if self.vocab_size < 10 {
            problems.push("vocab_size must be at least 10".to_string());
        }
        if self.train_sentences == 0 {
            problems.push("train_sentences must be positive".to_string());
        }
        if !(self.alpha > 0.0) {
            problems.push("alpha must be positive".to_string());
        }
        if !(self.sigma2_resid > 0.0) {
            problems.push("sigma2_resid must be positive".to_string());
        }
        if !(self.sigma2_subj >= 0.0) {
            problems.push("sigma2_subj must be non-negative".to_string());
        }
        for (name, p) in [("skip_short", self.skip_short), ("skip_other", self.skip_other)] {
            if !(0.0..1.0).contains(&p) {
                problems.push(format!("{name} must lie in [0, 1)"));
            }
        }
        if !PSYCHOMETRIC_TESTS.contains(&self.test.as_str()) {
            problems.push(format!("unknown test `{}`", self.test));
        }
        if self.lm_tag.is_empty() || self.lm_tag.contains(['[', ']', '*', '/', '\\']) {
            problems.push(format!("lm_tag `{}` is not a plain name", self.lm_tag));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTruth {
    pub config: CorpusConfig,
    pub subject_intercepts: BTreeMap<String, f64>,
    /// Standardized score of the modulating test per subject.
    pub scores: BTreeMap<String, f64>,
    pub n_texts: usize,
    pub n_stimulus_words: usize,
    pub n_events: usize,
    pub n_skipped: usize,
}

fn pseudo_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = 1 + (out.len() % 3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if rng.random_bool(0.3) {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// First-order chain over word ids: half the mass on a Zipfian unigram, half
/// on a few preferred successors per word.
struct MarkovChain {
    unigram: WeightedIndex<f64>,
    successors: Vec<[usize; 4]>,
}

impl MarkovChain {
    fn new(v: usize, rng: &mut ChaCha8Rng) -> Self {
        let weights: Vec<f64> = (0..v).map(|k| 1.0 / (k as f64 + 2.0)).collect();
        let successors = (0..v)
            .map(|_| std::array::from_fn(|_| rng.random_range(0..v)))
            .collect();
        Self {
            unigram: WeightedIndex::new(weights).expect("positive weights"),
            successors,
        }
    }

    fn next(&self, prev: Option<usize>, rng: &mut ChaCha8Rng) -> usize {
        match prev {
            Some(p) if rng.random_bool(0.5) => self.successors[p][rng.random_range(0..4)],
            _ => self.unigram.sample(rng),
        }
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = rng.random_range(5..=14);
        let mut out: Vec<usize> = Vec::with_capacity(len);
        for _ in 0..len {
            let w = self.next(out.last().copied(), rng);
            out.push(w);
        }
        out
    }
}

fn render(sentence: &[usize], vocab: &[String]) -> Vec<String> {
    let last = sentence.len() - 1;
    sentence
        .iter()
        .enumerate()
        .map(|(i, &w)| if i == last { format!("{}.", vocab[w]) } else { vocab[w].clone() })
        .collect()
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
}

/// Raw score distribution (mean, sd) of each test; negated tests are
/// reaction-time costs where higher is worse.
fn score_scale(test: &str) -> (f64, f64) {
    match test {
        "Stroop" => (110.0, 35.0),
        "Simon" => (45.0, 15.0),
        _ => (100.0, 15.0),
    }
}

pub fn simulate_corpus(cfg: &CorpusConfig, dir: &Path) -> Result<CorpusTruth> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = pseudo_words(cfg.vocab_size, &mut rng);
    let chain = MarkovChain::new(cfg.vocab_size, &mut rng);

    let train: Vec<Vec<usize>> = (0..cfg.train_sentences).map(|_| chain.sentence(&mut rng)).collect();
    let train_words: Vec<Vec<String>> = train.iter().map(|s| render(s, &vocab)).collect();

    let mut texts = Texts::new();
    let mut total = 0;
    while total < cfg.n_words {
        let mut words: Vec<String> = Vec::new();
        while words.len() < cfg.words_per_text && total + words.len() < cfg.n_words {
            words.extend(render(&chain.sentence(&mut rng), &vocab));
        }
        total += words.len();
        texts.insert(format!("text{:03}", texts.len()), words.join(" "));
    }

    let mut counts = vec![0u64; cfg.vocab_size];
    for s in &train {
        for &w in s {
            counts[w] += 1;
        }
    }
    let n_train: u64 = counts.iter().sum();
    let lexicon = Lexicon::from_entries(vocab.iter().zip(&counts).map(|(w, &c)| {
        (w.clone(), ((c as f64 + 0.5) / n_train as f64 * 1e6).ln())
    }));

    let lm = train_bigram(&train_words, cfg.alpha)?;
    let tokens = score_texts(&lm, &texts, &cfg.lm_tag)?;
    let pooled = pool_table(&texts, &tokens)?;

    // Word-level predictors in corpus order, standardized over words.
    let mut items: Vec<(ItemKey, String)> = Vec::new();
    for (id, text) in &texts {
        for (i, w) in text.split_whitespace().enumerate() {
            items.push((ItemKey::new(id.clone(), i as u32), w.to_string()));
        }
    }
    let raw_len: Vec<f64> = items.iter().map(|(_, w)| w.chars().count() as f64).collect();
    let raw_freq = items
        .iter()
        .map(|(_, w)| lexicon.lookup(w).ok_or_else(|| Error::Numeric(format!("generated word `{w}` missing"))))
        .collect::<Result<Vec<f64>>>()?;
    let raw_s: Vec<f64> = items.iter().map(|(k, _)| pooled[k].surprisal_bits).collect();
    let raw_h: Vec<f64> = items.iter().map(|(k, _)| pooled[k].entropy_upper_bits).collect();
    let z = |v: &[f64], name: &str| zscore(v).ok_or_else(|| Error::Numeric(format!("generated {name} has no variance")));
    let (l, f, s, h) = (z(&raw_len, "length")?, z(&raw_freq, "frequency")?, z(&raw_s, "surprisal")?, z(&raw_h, "entropy")?);

    let width = cfg.n_subjects.to_string().len().max(2);
    let subjects: Vec<String> = (1..=cfg.n_subjects).map(|j| format!("sub{j:0width$}")).collect();
    let ability: Vec<f64> = (0..cfg.n_subjects).map(|_| std_normal(&mut rng)).collect();
    let mut raw_scores: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (j, sid) in subjects.iter().enumerate() {
        let entry = raw_scores.entry(sid.clone()).or_default();
        for test in PSYCHOMETRIC_TESTS {
            let (mean, sd) = score_scale(test);
            let sign = if NEGATED_TESTS.contains(&test) { -1.0 } else { 1.0 };
            let latent = 0.6 * ability[j] + 0.8 * std_normal(&mut rng);
            let v = mean + sign * sd * latent;
            entry.insert(test.to_string(), (v * 10.0).round() / 10.0);
        }
    }
    let sign = if NEGATED_TESTS.contains(&cfg.test.as_str()) { -1.0 } else { 1.0 };
    let modulator: Vec<f64> = subjects.iter().map(|sid| sign * raw_scores[sid][&cfg.test]).collect();
    let c = z(&modulator, "score")?;
    let cut = median(&c);
    let intercepts: Vec<f64> = (0..cfg.n_subjects)
        .map(|_| cfg.sigma2_subj.sqrt() * std_normal(&mut rng))
        .collect();
    let noise_sd = cfg.sigma2_resid.sqrt();
    let x = match cfg.interaction_measure {
        InteractionMeasure::Surprisal => &s,
        InteractionMeasure::Entropy => &h,
    };

    let b = &cfg.beta;
    let mut events = Vec::with_capacity(cfg.n_subjects * items.len());
    let mut n_skipped = 0;
    for (j, sid) in subjects.iter().enumerate() {
        let slope = if cfg.low_group_only && c[j] > cut { 0.0 } else { b.surprisal };
        for (i, (key, word)) in items.iter().enumerate() {
            let p_skip = if word.chars().count() <= 3 { cfg.skip_short } else { cfg.skip_other };
            let skipped = rng.random_bool(p_skip);
            let y = b.intercept
                + intercepts[j]
                + b.length * l[i]
                + b.logfreq * f[i]
                + slope * s[i]
                + b.entropy * h[i]
                + b.score * c[j]
                + b.interaction * c[j] * x[i]
                + noise_sd * std_normal(&mut rng);
            let fprt = if skipped {
                n_skipped += 1;
                None
            } else {
                Some(((y.exp() * 10.0).round() / 10.0).max(0.1))
            };
            events.push(ReadingEvent {
                subject_id: sid.clone(),
                text_id: key.text_id.clone(),
                word_index: key.word_index,
                word: word.clone(),
                fprt_ms: fprt,
            });
        }
    }

    write_file(dir, files::TEXTS, |w| write_texts(w, &texts))?;
    write_file(dir, files::TRAIN, |w| {
        for sentence in &train_words {
            writeln!(w, "{}", sentence.join(" "))?;
        }
        Ok(())
    })?;
    write_file(dir, files::LEXICON, |w| write_lexicon(w, &lexicon))?;
    write_file(dir, files::SCORES, |w| write_raw_scores(w, &raw_scores))?;
    write_file(dir, files::READINGS, |w| write_reading_events(w, &events))?;
    write_file(dir, &files::tokens(&cfg.lm_tag), |w| tokens.write_tsv(w))?;

    let truth = CorpusTruth {
        config: cfg.clone(),
        subject_intercepts: subjects.iter().cloned().zip(intercepts).collect(),
        scores: subjects.iter().cloned().zip(c).collect(),
        n_texts: texts.len(),
        n_stimulus_words: items.len(),
        n_events: events.len(),
        n_skipped,
    };
    write_file(dir, files::TRUTH, |w| {
        serde_json::to_writer_pretty(&mut *w, &truth).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::mean_sd;
    use crate::lmm::{fit_random_intercept_lmm, ModelSpec};

    fn small(seed: u64) -> SimulationConfig {
        SimulationConfig {
            n_subjects: 12,
            n_words: 150,
            seed,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn table_shape_and_standardization() {
        let cfg = small(1);
        let t = simulate_table(&cfg).unwrap();
        assert_eq!(t.n_rows(), 12 * 150);
        assert_eq!(t.n_subjects(), 12);
        assert_eq!(t.n_items(), 150);
        for name in t.column_names().map(String::from).collect::<Vec<_>>() {
            let (m, sd) = mean_sd(&t.column(&name).unwrap());
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9, "{name}");
        }
        assert!(t.has_column("surprisal[sim]") && t.has_column("score[T]"));
        assert_eq!(t.subject_values("score[T]").unwrap().len(), 12);
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(simulate_table(&small(4)).unwrap(), simulate_table(&small(4)).unwrap());
        assert_ne!(simulate_table(&small(4)).unwrap().y(), simulate_table(&small(5)).unwrap().y());
    }

    #[test]
    fn recovers_coefficients_roughly() {
        let cfg = SimulationConfig {
            n_subjects: 30,
            n_words: 400,
            seed: 9,
            ..SimulationConfig::default()
        };
        let t = simulate_table(&cfg).unwrap();
        let spec = ModelSpec::new([
            "length",
            "logfreq",
            "surprisal[sim]",
            "entropy[sim]",
            "score[T]",
            "surprisal[sim]*score[T]",
        ]);
        let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
        assert!((fit.beta[3] - 0.06).abs() < 0.01);
        assert!((fit.beta[6] + 0.015).abs() < 0.01);
        assert!((fit.sigma2_resid - 0.09).abs() < 0.005);
        assert_eq!(cfg.interaction_column(), "surprisal[sim]*score[T]");
    }

    #[test]
    fn corpus_files_load_and_are_deterministic() {
        use crate::ingest::*;
        let cfg = CorpusConfig {
            n_subjects: 6,
            n_words: 150,
            train_sentences: 300,
            seed: 3,
            ..CorpusConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let truth = simulate_corpus(&cfg, a.path()).unwrap();
        simulate_corpus(&cfg, b.path()).unwrap();
        for name in [files::TEXTS, files::TRAIN, files::LEXICON, files::SCORES, files::READINGS, files::TRUTH, "tokens_bigram.tsv"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        let texts = load_texts(&a.path().join(files::TEXTS)).unwrap();
        let events = load_reading_events(&a.path().join(files::READINGS)).unwrap();
        check_events_against_texts(&events, &texts).unwrap();
        assert_eq!(events.len(), truth.n_events);
        assert_eq!(events.iter().filter(|e| e.fprt_ms.is_none()).count(), truth.n_skipped);
        assert!(truth.n_stimulus_words >= 150);
        let negate: std::collections::BTreeSet<String> = NEGATED_TESTS.iter().map(|s| s.to_string()).collect();
        let profiles = load_psychometric_scores(&a.path().join(files::SCORES), &negate).unwrap();
        assert_eq!(profiles.len(), 6);
        assert_eq!(profiles[0].scores.len(), 13);
        let lexicon = load_lexicon(&a.path().join(files::LEXICON)).unwrap();
        assert_eq!(lexicon.len(), 250);
        let tokens = crate::pooling::load_token_scores(&a.path().join("tokens_bigram.tsv"), "bigram").unwrap();
        assert_eq!(crate::pooling::pool_table(&texts, &tokens).unwrap().len(), truth.n_stimulus_words);
    }

    #[test]
    fn median_rule() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn invalid_configs_list_every_problem() {
        let cfg = SimulationConfig {
            n_subjects: 1,
            sigma2_resid: 0.0,
            ..SimulationConfig::default()
        };
        let msg = simulate_table(&cfg).unwrap_err().to_string();
        assert!(msg.contains("n_subjects") && msg.contains("sigma2_resid"));
    }
}
