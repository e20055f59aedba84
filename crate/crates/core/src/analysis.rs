//! Hypothesis pipelines over an [`AnalysisTable`]: baseline predictive power,
//! score interactions, effect sizes, median-split group differences and the
//! score correlation matrix.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ingest::{columns, AnalysisTable, ExclusionCounts, SubjectProfile};
use crate::lmm::{fit_random_intercept_lmm, fixed_effect_summary, ModelSpec};
use crate::simulate::median;
use crate::stats::{
    bootstrap_group_difference_ci, cross_validated_delta_ll, group_label_permutation_test, make_item_folds,
    masked_delta_ll, subject_delta_sums, CvCache, DeltaLLResult, FoldAssignment, TestConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    #[serde(rename = "HB")]
    Hb,
    H1,
    H2,
    H3,
    #[serde(rename = "CORR")]
    Corr,
}

impl Hypothesis {
    pub fn tag(self) -> &'static str {
        match self {
            Hypothesis::Hb => "hb",
            Hypothesis::H1 => "h1",
            Hypothesis::H2 => "h2",
            Hypothesis::H3 => "h3",
            Hypothesis::Corr => "corr",
        }
    }

    /// File name of the per-figure CSV for this hypothesis.
    pub fn csv_name(self) -> &'static str {
        match self {
            Hypothesis::Hb => "fig1_baseline.csv",
            Hypothesis::H1 => "fig2_interaction.csv",
            Hypothesis::H2 => "table1_effects.csv",
            Hypothesis::H3 => "fig3_group_split.csv",
            Hypothesis::Corr => "fig4_correlations.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Surprisal,
    Entropy,
    Combined,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Surprisal => "surprisal",
            Measure::Entropy => "entropy",
            Measure::Combined => "combined",
        }
    }

    fn column(self, lm_tag: &str) -> String {
        match self {
            Measure::Surprisal => columns::surprisal(lm_tag),
            Measure::Entropy => columns::entropy(lm_tag),
            Measure::Combined => unreachable!("combined is not a single column"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub k: usize,
    pub fold_seed: u64,
    pub tests: TestConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: 10,
            fold_seed: 0,
            tests: TestConfig::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn folds(&self, table: &AnalysisTable) -> Result<FoldAssignment> {
        make_item_folds(table.items(), self.k, self.fold_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub coefficient: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub h1_p_value: f64,
    pub h1_significant: bool,
    /// Set when the interaction did not significantly change held-out fit.
    pub dagger: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub median: f64,
    pub tie_rule: String,
    pub high_subjects: Vec<String>,
    pub low_subjects: Vec<String>,
    pub delta_ll_high: f64,
    pub delta_ll_low: f64,
    /// `delta_ll_high − delta_ll_low`.
    pub delta_pp: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    pub n_perm: usize,
    pub seed: u64,
    pub n_boot: usize,
    pub boot_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub tests: Vec<String>,
    pub n_subjects: usize,
    pub alpha: f64,
    pub r: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    /// The coefficient if it is significant at `alpha` (always shown on the
    /// diagonal), otherwise blank.
    pub fn shown(&self, i: usize, j: usize) -> Option<f64> {
        (i == j || self.p[i][j] < self.alpha).then_some(self.r[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    DeltaLl(DeltaLLResult),
    EffectSize(EffectSize),
    GroupSplit(GroupSplit),
    Correlation(CorrelationMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub hypothesis: Hypothesis,
    pub lm_tag: Option<String>,
    pub test: Option<String>,
    pub measure: Option<Measure>,
    pub significant: bool,
    pub payload: Payload,
}

impl HypothesisReport {
    pub fn delta_ll(&self) -> Option<&DeltaLLResult> {
        match &self.payload {
            Payload::DeltaLl(d) => Some(d),
            _ => None,
        }
    }

    pub fn effect_size(&self) -> Option<&EffectSize> {
        match &self.payload {
            Payload::EffectSize(e) => Some(e),
            _ => None,
        }
    }

    pub fn group_split(&self) -> Option<&GroupSplit> {
        match &self.payload {
            Payload::GroupSplit(g) => Some(g),
            _ => None,
        }
    }

    fn matches(&self, lm_tag: &str, test: &str, measure: Measure) -> bool {
        self.lm_tag.as_deref() == Some(lm_tag) && self.test.as_deref() == Some(test) && self.measure == Some(measure)
    }
}

/// Conventions the numbers depend on, echoed into every report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub n_rows: usize,
    pub n_subjects: usize,
    pub n_items: usize,
    pub exclusions: ExclusionCounts,
    pub lm_tags: Vec<String>,
    pub tests: Vec<String>,
    pub k: usize,
    pub fold_seed: u64,
    pub test_config: TestConfig,
    pub standardization: String,
    pub interaction: String,
    pub median_tie_rule: String,
    pub heldout_density: String,
    pub log_base: String,
}

impl ReportMetadata {
    pub fn new(table: &AnalysisTable, lm_tags: &[String], tests: &[String], cfg: &AnalysisConfig) -> Self {
        Self {
            n_rows: table.n_rows(),
            n_subjects: table.n_subjects(),
            n_items: table.n_items(),
            exclusions: table.exclusions(),
            ..Self::conventions(lm_tags, tests, cfg)
        }
    }

    /// Metadata without table counts, for runs that use no reading data.
    pub fn conventions(lm_tags: &[String], tests: &[String], cfg: &AnalysisConfig) -> Self {
        Self {
            n_rows: 0,
            n_subjects: 0,
            n_items: 0,
            exclusions: ExclusionCounts::default(),
            lm_tags: lm_tags.to_vec(),
            tests: tests.to_vec(),
            k: cfg.k,
            fold_seed: cfg.fold_seed,
            test_config: cfg.tests,
            standardization: "predictors z-scored once over all retained rows".into(),
            interaction: "product of standardized columns, not re-standardized".into(),
            median_tie_rule: "scores equal to the median join the low group".into(),
            heldout_density: "seen subjects: conditional on BLUP; unseen subjects: marginal".into(),
            log_base: "surprisal and entropy in bits".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub hypothesis: Hypothesis,
    pub metadata: ReportMetadata,
    pub reports: Vec<HypothesisReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn require_columns(table: &AnalysisTable, names: &[String]) -> Result<()> {
    let missing: Vec<&str> = names
        .iter()
        .filter(|n| !table.has_column(n))
        .map(String::as_str)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Spec(format!("table lacks column(s): {}", missing.join(", "))))
    }
}

fn lm_columns(lm_tags: &[String]) -> Vec<String> {
    lm_tags
        .iter()
        .flat_map(|t| [columns::surprisal(t), columns::entropy(t)])
        .collect()
}

fn baseline_spec() -> ModelSpec {
    ModelSpec::new([columns::LENGTH, columns::LOGFREQ])
}

/// Baseline for interactions: length, frequency, both LM measures and the score.
fn score_baseline(lm_tag: &str, test: &str) -> ModelSpec {
    ModelSpec::new([
        columns::LENGTH.to_string(),
        columns::LOGFREQ.to_string(),
        columns::surprisal(lm_tag),
        columns::entropy(lm_tag),
        columns::score(test),
    ])
}

fn interaction_column(lm_tag: &str, test: &str, measure: Measure) -> String {
    columns::product(&measure.column(lm_tag), &columns::score(test))
}

fn delta_report(
    hypothesis: Hypothesis,
    lm_tag: &str,
    test: Option<&str>,
    measure: Measure,
    result: DeltaLLResult,
    alpha: f64,
) -> HypothesisReport {
    HypothesisReport {
        hypothesis,
        lm_tag: Some(lm_tag.to_string()),
        test: test.map(String::from),
        measure: Some(measure),
        significant: result.significant(alpha),
        payload: Payload::DeltaLl(result),
    }
}

/// ΔLL of surprisal, entropy and both over a length + frequency baseline,
/// per LM.
pub fn run_baseline_pp(table: &AnalysisTable, lm_tags: &[String], cfg: &AnalysisConfig) -> Result<Vec<HypothesisReport>> {
    let mut needed = vec![columns::LENGTH.to_string(), columns::LOGFREQ.to_string()];
    needed.extend(lm_columns(lm_tags));
    require_columns(table, &needed)?;
    let folds = cfg.folds(table)?;
    let base = baseline_spec();
    let cells: Vec<(&String, Measure)> = lm_tags
        .iter()
        .flat_map(|t| [Measure::Surprisal, Measure::Entropy, Measure::Combined].map(|m| (t, m)))
        .collect();
    cells
        .par_iter()
        .map(|&(tag, measure)| {
            let target = match measure {
                Measure::Combined => base.with(columns::surprisal(tag)).with(columns::entropy(tag)),
                m => base.with(m.column(tag)),
            };
            let r = cross_validated_delta_ll(table, &base, &target, &folds, &cfg.tests)?;
            Ok(delta_report(Hypothesis::Hb, tag, None, measure, r, cfg.tests.alpha))
        })
        .collect()
}

/// ΔLL of adding a score × surprisal (or × entropy) interaction over a
/// baseline that already contains both measures and the score.
pub fn run_interaction_pp(
    table: &AnalysisTable,
    lm_tags: &[String],
    tests: &[String],
    cfg: &AnalysisConfig,
) -> Result<Vec<HypothesisReport>> {
    check_grid(table, lm_tags, tests)?;
    let folds = cfg.folds(table)?;
    grid_cells(lm_tags, tests)
        .par_iter()
        .map(|&(tag, test, measure)| {
            let base = score_baseline(tag, test);
            let target = base.with(interaction_column(tag, test, measure));
            let r = cross_validated_delta_ll(table, &base, &target, &folds, &cfg.tests)?;
            Ok(delta_report(Hypothesis::H1, tag, Some(test), measure, r, cfg.tests.alpha))
        })
        .collect()
}

fn check_grid(table: &AnalysisTable, lm_tags: &[String], tests: &[String]) -> Result<()> {
    let mut needed = vec![columns::LENGTH.to_string(), columns::LOGFREQ.to_string()];
    needed.extend(lm_columns(lm_tags));
    needed.extend(tests.iter().map(|t| columns::score(t)));
    require_columns(table, &needed)
}

fn grid_cells<'a>(lm_tags: &'a [String], tests: &'a [String]) -> Vec<(&'a str, &'a str, Measure)> {
    let mut cells = Vec::new();
    for tag in lm_tags {
        for test in tests {
            for m in [Measure::Surprisal, Measure::Entropy] {
                cells.push((tag.as_str(), test.as_str(), m));
            }
        }
    }
    cells
}

/// Full-data interaction coefficients with standard errors; daggers mark
/// cells whose interaction was not significant in `h1`.
pub fn run_effect_size_table(
    table: &AnalysisTable,
    lm_tags: &[String],
    tests: &[String],
    h1: &[HypothesisReport],
) -> Result<Vec<HypothesisReport>> {
    check_grid(table, lm_tags, tests)?;
    grid_cells(lm_tags, tests)
        .par_iter()
        .map(|&(tag, test, measure)| {
            let h1_cell = h1
                .iter()
                .find(|r| r.hypothesis == Hypothesis::H1 && r.matches(tag, test, measure))
                .and_then(|r| r.delta_ll().map(|d| (d.p_value, r.significant)))
                .ok_or_else(|| {
                    Error::Spec(format!("no H1 result for ({tag}, {test}, {})", measure.name()))
                })?;
            let coefficient = interaction_column(tag, test, measure);
            let spec = score_baseline(tag, test).with(coefficient.clone());
            let fit = fit_random_intercept_lmm(table, &spec)?;
            let summary = fixed_effect_summary(&fit, table, &spec)?;
            let row = summary.last().expect("interaction coefficient present");
            Ok(HypothesisReport {
                hypothesis: Hypothesis::H2,
                lm_tag: Some(tag.to_string()),
                test: Some(test.to_string()),
                measure: Some(measure),
                significant: h1_cell.1,
                payload: Payload::EffectSize(EffectSize {
                    coefficient,
                    estimate: row.estimate,
                    std_error: row.std_error,
                    h1_p_value: h1_cell.0,
                    h1_significant: h1_cell.1,
                    dagger: !h1_cell.1,
                }),
            })
        })
        .collect()
}

/// Subjects strictly above the median are "high"; ties go low.
pub fn median_split(scores: &[f64]) -> (f64, Vec<bool>) {
    let m = median(scores);
    (m, scores.iter().map(|&s| s > m).collect())
}

/// Median split per test, then ΔPP = ΔLL(high) − ΔLL(low) for adding each
/// LM measure over the length + frequency baseline, with a label-permutation
/// p-value and a within-group subject bootstrap CI.
pub fn run_group_split_pp(
    table: &AnalysisTable,
    lm_tags: &[String],
    tests: &[String],
    cfg: &AnalysisConfig,
) -> Result<Vec<HypothesisReport>> {
    check_grid(table, lm_tags, tests)?;
    cfg.tests.validate()?;
    let folds = cfg.folds(table)?;
    let mut splits = Vec::with_capacity(tests.len());
    for test in tests {
        let scores = table.subject_values(&columns::score(test))?;
        let (m, high) = median_split(&scores);
        let n_high = high.iter().filter(|&&h| h).count();
        let n_low = high.len() - n_high;
        if n_high < 2 || n_low < 2 {
            return Err(Error::DegenerateSplit(format!(
                "test `{test}` splits into {n_high} high and {n_low} low subjects at median {m}; each group needs at least 2"
            )));
        }
        splits.push((m, high));
    }
    let base_spec = baseline_spec();
    let caches = lm_tags
        .iter()
        .flat_map(|t| [Measure::Surprisal, Measure::Entropy].map(|m| (t, m)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(tag, m)| {
            Ok((
                (tag.as_str(), m),
                (
                    CvCache::new(table, &base_spec, &folds, "baseline")?,
                    CvCache::new(table, &base_spec.with(m.column(tag)), &folds, "target")?,
                ),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    grid_cells(lm_tags, tests)
        .par_iter()
        .map(|&(tag, test, measure)| {
            let (base, target) = &caches.iter().find(|(key, _)| *key == (tag, measure)).unwrap().1;
            let (m, high) = &splits[tests.iter().position(|t| t == test).unwrap()];
            let low: Vec<bool> = high.iter().map(|h| !h).collect();
            let (sh, ch) = subject_delta_sums(base, target, high)?;
            let (sl, cl) = subject_delta_sums(base, target, &low)?;
            let dh = sh.iter().sum::<f64>() / ch.iter().sum::<f64>();
            let dl = sl.iter().sum::<f64>() / cl.iter().sum::<f64>();
            let delta_pp = dh - dl;
            let statistic = |mask: &[bool]| -> Result<f64> {
                let other: Vec<bool> = mask.iter().map(|h| !h).collect();
                Ok(masked_delta_ll(base, target, mask)? - masked_delta_ll(base, target, &other)?)
            };
            let perm = group_label_permutation_test(high, cfg.tests.n_perm, cfg.tests.perm_seed, statistic)?;
            let sums: Vec<f64> = sh.iter().zip(&sl).map(|(a, b)| a + b).collect();
            let counts: Vec<f64> = ch.iter().zip(&cl).map(|(a, b)| a + b).collect();
            let ci95 = bootstrap_group_difference_ci(&sums, &counts, high, delta_pp, cfg.tests.n_boot, cfg.tests.boot_seed)?;
            let ids = |want: bool| -> Vec<String> {
                table
                    .subject_ids()
                    .iter()
                    .zip(high)
                    .filter(|(_, &h)| h == want)
                    .map(|(s, _)| s.clone())
                    .collect()
            };
            Ok(HypothesisReport {
                hypothesis: Hypothesis::H3,
                lm_tag: Some(tag.to_string()),
                test: Some(test.to_string()),
                measure: Some(measure),
                significant: perm.p_value < cfg.tests.alpha,
                payload: Payload::GroupSplit(GroupSplit {
                    median: *m,
                    tie_rule: "ties_low".into(),
                    high_subjects: ids(true),
                    low_subjects: ids(false),
                    delta_ll_high: dh,
                    delta_ll_low: dl,
                    delta_pp,
                    ci95,
                    p_value: perm.p_value,
                    n_perm: perm.n_perm,
                    seed: perm.seed,
                    n_boot: cfg.tests.n_boot,
                    boot_seed: cfg.tests.boot_seed,
                }),
            })
        })
        .collect()
}

/// Pearson correlation of two equal-length samples; `None` if either has
/// zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a Pearson coefficient under the t distribution with
/// `n − 2` degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df positive");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Pairwise Pearson correlations of standardized test scores across subjects.
pub fn score_correlation_matrix(profiles: &[SubjectProfile], tests: &[String], alpha: f64) -> Result<CorrelationMatrix> {
    let n = profiles.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("correlations need at least 3 subjects, got {n}")));
    }
    let series = tests
        .iter()
        .map(|t| {
            profiles
                .iter()
                .map(|p| {
                    p.scores.get(t).copied().ok_or_else(|| {
                        Error::IncompleteScores(format!("subject {} has no `{t}` score", p.subject_id))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let k = tests.len();
    let mut r = vec![vec![1.0; k]; k];
    let mut p = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..i {
            let v = pearson(&series[i], &series[j]).ok_or_else(|| {
                let which = if pearson(&series[i], &series[i]).is_none() { i } else { j };
                Error::DegenerateScore(tests[which].clone())
            })?;
            let pv = pearson_p_value(v, n);
            r[i][j] = v;
            r[j][i] = v;
            p[i][j] = pv;
            p[j][i] = pv;
        }
        if pearson(&series[i], &series[i]).is_none() {
            return Err(Error::DegenerateScore(tests[i].clone()));
        }
    }
    Ok(CorrelationMatrix {
        tests: tests.to_vec(),
        n_subjects: n,
        alpha,
        r,
        p,
    })
}

pub fn run_correlations(profiles: &[SubjectProfile], tests: &[String], alpha: f64) -> Result<Vec<HypothesisReport>> {
    let m = score_correlation_matrix(profiles, tests, alpha)?;
    let significant = (0..tests.len()).any(|i| (0..i).any(|j| m.p[i][j] < alpha));
    Ok(vec![HypothesisReport {
        hypothesis: Hypothesis::Corr,
        lm_tag: None,
        test: None,
        measure: None,
        significant,
        payload: Payload::Correlation(m),
    }])
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Writes the flat per-figure CSV for a set of reports of one hypothesis.
pub fn write_figure_csv<W: Write>(hypothesis: Hypothesis, reports: &[HypothesisReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io {
        path: hypothesis.csv_name().into(),
        source: std::io::Error::other(e.to_string()),
    };
    let header: &[&str] = match hypothesis {
        Hypothesis::Hb => &["lm_tag", "measure", "mean_delta_ll", "ci_lo", "ci_hi", "p_value", "significant"],
        Hypothesis::H1 => &["lm_tag", "test", "measure", "mean_delta_ll", "ci_lo", "ci_hi", "p_value", "significant"],
        Hypothesis::H2 => &["lm_tag", "test", "measure", "beta", "se", "h1_p_value", "dagger"],
        Hypothesis::H3 => &[
            "lm_tag", "test", "measure", "delta_ll_high", "delta_ll_low", "delta_pp", "ci_lo", "ci_hi", "p_value",
            "significant",
        ],
        Hypothesis::Corr => &["test_a", "test_b", "r", "p_value", "shown_r"],
    };
    out.write_record(header).map_err(err)?;
    for rep in reports.iter().filter(|r| r.hypothesis == hypothesis) {
        let tag = rep.lm_tag.clone().unwrap_or_default();
        let test = rep.test.clone().unwrap_or_default();
        let measure = rep.measure.map(|m| m.name().to_string()).unwrap_or_default();
        let sig = rep.significant.to_string();
        let rows: Vec<Vec<String>> = match &rep.payload {
            Payload::DeltaLl(d) => {
                let mut row = vec![tag];
                if hypothesis == Hypothesis::H1 {
                    row.push(test);
                }
                row.extend([measure, fmt(d.mean_delta_ll), fmt(d.ci95.0), fmt(d.ci95.1), fmt(d.p_value), sig]);
                vec![row]
            }
            Payload::EffectSize(e) => vec![vec![
                tag,
                test,
                measure,
                fmt(e.estimate),
                fmt_opt(e.std_error),
                fmt(e.h1_p_value),
                e.dagger.to_string(),
            ]],
            Payload::GroupSplit(g) => vec![vec![
                tag,
                test,
                measure,
                fmt(g.delta_ll_high),
                fmt(g.delta_ll_low),
                fmt(g.delta_pp),
                fmt(g.ci95.0),
                fmt(g.ci95.1),
                fmt(g.p_value),
                sig,
            ]],
            Payload::Correlation(m) => {
                let mut rows = Vec::new();
                for i in 0..m.tests.len() {
                    for j in 0..m.tests.len() {
                        rows.push(vec![
                            m.tests[i].clone(),
                            m.tests[j].clone(),
                            fmt(m.r[i][j]),
                            fmt(m.p[i][j]),
                            fmt_opt(m.shown(i, j)),
                        ]);
                    }
                }
                rows
            }
        };
        for row in rows {
            out.write_record(&row).map_err(err)?;
        }
    }
    out.flush().map_err(|e| Error::Io {
        path: hypothesis.csv_name().into(),
        source: e,
    })?;
    Ok(())
}
