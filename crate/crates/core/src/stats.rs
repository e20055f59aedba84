//! Cross-validated model comparison and the resampling tests built on it.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnalysisTable, ItemKey};
use crate::lmm::{fit_stats, Design, FitOptions, GroupStats, ModelSpec, StatsFit, SufficientStats};

pub const MIN_PERMUTATIONS: usize = 100;
pub const MIN_BOOTSTRAP: usize = 1000;
const EXACT_LIMIT: usize = 20;

/// RNG for replicate `index` of a resampling procedure seeded with `seed`.
/// Independent of scheduling, so serial and parallel runs agree.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Partition of corpus items (words) into `k` cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<ItemKey, u32>,
}

impl FoldAssignment {
    pub fn fold_of(&self, item: &ItemKey) -> Option<u32> {
        self.folds.get(item).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f as usize] += 1;
        }
        sizes
    }

    /// Fold of every table row.
    pub fn row_folds(&self, table: &AnalysisTable) -> Result<Vec<u32>> {
        let item_folds = table
            .items()
            .iter()
            .map(|item| {
                self.fold_of(item).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "item (text {}, word {}) has no fold",
                        item.text_id, item.word_index
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(table.item_index().iter().map(|&i| item_folds[i as usize]).collect())
    }
}

/// Sorts and deduplicates `items`, shuffles them with `seed`, then deals them
/// round-robin into `k` folds.
pub fn make_item_folds(items: &[ItemKey], k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut items: Vec<ItemKey> = items.to_vec();
    items.sort();
    items.dedup();
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if items.len() < k {
        return Err(Error::InvalidParameter(format!(
            "{} items cannot fill {k} folds",
            items.len()
        )));
    }
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = items
        .into_iter()
        .enumerate()
        .map(|(i, item)| (item, (i % k) as u32))
        .collect();
    Ok(FoldAssignment { k, seed, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub n_perm: usize,
    pub n_boot: usize,
    pub perm_seed: u64,
    pub boot_seed: u64,
    pub alpha: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            n_perm: 2000,
            n_boot: 2000,
            perm_seed: 1,
            boot_seed: 2,
            alpha: 0.05,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_perm < MIN_PERMUTATIONS {
            return Err(Error::InvalidParameter(format!(
                "n_perm must be at least {MIN_PERMUTATIONS}, got {}",
                self.n_perm
            )));
        }
        if self.n_boot < MIN_BOOTSTRAP {
            return Err(Error::InvalidParameter(format!(
                "n_boot must be at least {MIN_BOOTSTRAP}, got {}",
                self.n_boot
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Held-out comparison of a target model against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaLLResult {
    /// Target minus baseline held-out log-density per table row.
    #[serde(skip)]
    pub diffs: Vec<f64>,
    pub mean_delta_ll: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    pub n_perm: usize,
    pub seed: u64,
    pub n_boot: usize,
    pub boot_seed: u64,
    pub k: usize,
    pub fold_seed: u64,
    pub n_obs: usize,
    /// Whether the baseline's predictors are a subset of the target's.
    pub nested: bool,
}

impl DeltaLLResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    /// Writes `subject_id,text_id,word_index,delta_ll` rows.
    pub fn write_diffs_csv<W: Write>(&self, w: W, table: &AnalysisTable) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Numeric(format!("writing diffs: {e}"));
        out.write_record(["subject_id", "text_id", "word_index", "delta_ll"]).map_err(io)?;
        for (r, d) in self.diffs.iter().enumerate() {
            let item = &table.items()[table.item_index()[r] as usize];
            out.write_record([
                table.subject_ids()[table.subject_index()[r] as usize].as_str(),
                item.text_id.as_str(),
                &item.word_index.to_string(),
                &format!("{d:.17e}"),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::Numeric(format!("writing diffs: {e}")))?;
        Ok(())
    }
}

/// Per-(subject, fold) sufficient statistics for one model spec.
pub(crate) struct CvCache {
    design: Design,
    k: usize,
    row_fold: Vec<u32>,
    /// `cells[j][f]`
    cells: Vec<Vec<GroupStats>>,
    name: &'static str,
}

impl CvCache {
    pub fn new(table: &AnalysisTable, spec: &ModelSpec, folds: &FoldAssignment, name: &'static str) -> Result<Self> {
        let design = Design::from_table(table, spec)?;
        let row_fold = folds.row_folds(table)?;
        let mut cells = vec![vec![GroupStats::zero(design.p); folds.k]; design.n_groups];
        for r in 0..design.n {
            cells[design.group[r] as usize][row_fold[r] as usize].push(design.row(r), design.y[r]);
        }
        Ok(Self {
            design,
            k: folds.k,
            row_fold,
            cells,
            name,
        })
    }

    /// Fit on every fold except `fold`, restricted to subjects in `mask`.
    fn fit_without(&self, fold: usize, mask: &[bool]) -> Result<StatsFit> {
        let groups = self
            .cells
            .iter()
            .zip(mask)
            .map(|(cells, &keep)| {
                let mut g = GroupStats::zero(self.design.p);
                if keep {
                    for (f, c) in cells.iter().enumerate() {
                        if f != fold {
                            g.add(c);
                        }
                    }
                }
                g
            })
            .collect();
        let stats = SufficientStats {
            p: self.design.p,
            groups,
        };
        fit_stats(&stats, &self.design.names, &FitOptions::default()).map_err(|e| Error::Fold {
            fold,
            model: self.name.into(),
            source: Box::new(e),
        })
    }

    fn heldout_row(&self, fit: &StatsFit, r: usize) -> f64 {
        let x = self.design.row(r);
        let mu: f64 = x.iter().zip(&fit.beta).map(|(a, b)| a * b).sum();
        let y = self.design.y[r];
        let var;
        let mean;
        match fit.blups[self.design.group[r] as usize] {
            Some(b) => {
                mean = mu + b;
                var = fit.sigma2;
            }
            None => {
                mean = mu;
                var = fit.sigma2 + fit.sigma2_subj;
            }
        }
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (y - mean).powi(2) / var
    }
}

fn check_pair(base: &CvCache, target: &CvCache) -> Result<()> {
    if base.design.n != target.design.n || base.k != target.k {
        return Err(Error::InvalidParameter("baseline and target caches differ in shape".into()));
    }
    Ok(())
}

/// Per-subject sums of held-out log-density differences and row counts when
/// both models are fitted only on the subjects in `mask`.
pub(crate) fn subject_delta_sums(base: &CvCache, target: &CvCache, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(base, target)?;
    let per_fold = (0..base.k)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let fb = base.fit_without(f, mask)?;
            let ft = target.fit_without(f, mask)?;
            Ok((0..mask.len())
                .map(|j| {
                    if mask[j] {
                        ft.heldout_loglik(j, &target.cells[j][f]) - fb.heldout_loglik(j, &base.cells[j][f])
                    } else {
                        0.0
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let sums = (0..mask.len())
        .map(|j| per_fold.iter().map(|v| v[j]).sum())
        .collect();
    let counts = (0..mask.len())
        .map(|j| if mask[j] { base.cells[j].iter().map(|c| c.n).sum() } else { 0.0 })
        .collect();
    Ok((sums, counts))
}

/// Mean held-out ΔLL over the subjects in `mask`.
pub(crate) fn masked_delta_ll(base: &CvCache, target: &CvCache, mask: &[bool]) -> Result<f64> {
    let (sums, counts) = subject_delta_sums(base, target, mask)?;
    Ok(sums.iter().sum::<f64>() / counts.iter().sum::<f64>())
}

/// Per-row held-out differences, every row evaluated exactly once in its own
/// fold.
pub(crate) fn heldout_diffs(base: &CvCache, target: &CvCache) -> Result<Vec<f64>> {
    check_pair(base, target)?;
    let mask = vec![true; base.design.n_groups];
    let fits = (0..base.k)
        .into_par_iter()
        .map(|f| Ok((base.fit_without(f, &mask)?, target.fit_without(f, &mask)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..base.design.n)
        .map(|r| {
            let (fb, ft) = &fits[base.row_fold[r] as usize];
            target.heldout_row(ft, r) - base.heldout_row(fb, r)
        })
        .collect())
}

fn subject_sums(table: &AnalysisTable, diffs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sums = vec![0.0; table.n_subjects()];
    let mut counts = vec![0.0; table.n_subjects()];
    for (&s, d) in table.subject_index().iter().zip(diffs) {
        sums[s as usize] += d;
        counts[s as usize] += 1.0;
    }
    (sums, counts)
}

/// Fits both models on each set of k−1 folds and compares their held-out
/// log-densities on the remaining fold.
pub fn cross_validated_delta_ll(
    table: &AnalysisTable,
    baseline: &ModelSpec,
    target: &ModelSpec,
    folds: &FoldAssignment,
    config: &TestConfig,
) -> Result<DeltaLLResult> {
    config.validate()?;
    let nested = baseline.is_nested_in(target);
    if !nested {
        log::warn!(
            "baseline {:?} is not nested in target {:?}",
            baseline.predictors,
            target.predictors
        );
    }
    let base = CvCache::new(table, baseline, folds, "baseline")?;
    let tgt = CvCache::new(table, target, folds, "target")?;
    let diffs = heldout_diffs(&base, &tgt)?;
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let p_value = paired_sign_flip_test(&diffs, config.n_perm, config.perm_seed)?;
    let (sums, counts) = subject_sums(table, &diffs);
    let ci95 = if table.n_subjects() >= 2 {
        bootstrap_ratio_ci(&sums, &counts, mean, config.n_boot, config.boot_seed)?
    } else {
        (mean, mean)
    };
    Ok(DeltaLLResult {
        diffs,
        mean_delta_ll: mean,
        ci95,
        p_value,
        n_perm: config.n_perm,
        seed: config.perm_seed,
        n_boot: config.n_boot,
        boot_seed: config.boot_seed,
        k: folds.k,
        fold_seed: folds.seed,
        n_obs: table.n_rows(),
        nested,
    })
}

/// Two-sided paired sign-flip test of H0: mean(diffs) = 0. Exact over all
/// 2ⁿ sign patterns when `n ≤ 20`, otherwise Monte Carlo with add-one
/// smoothing.
pub fn paired_sign_flip_test(diffs: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    if diffs.is_empty() {
        return Err(Error::InvalidParameter("sign-flip test needs at least one difference".into()));
    }
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "n_perm must be at least {MIN_PERMUTATIONS}, got {n_perm}"
        )));
    }
    if let Some(i) = diffs.iter().position(|d| !d.is_finite()) {
        return Err(Error::Numeric(format!("non-finite difference at position {i}")));
    }
    let observed: f64 = diffs.iter().sum::<f64>().abs();
    let scale: f64 = diffs.iter().map(|d| d.abs()).sum();
    let threshold = observed - 1e-12 * scale;

    if diffs.len() <= EXACT_LIMIT {
        let n = diffs.len();
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| {
                let s: f64 = diffs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                    .sum();
                s.abs() >= threshold
            })
            .count();
        return Ok(hits as f64 / total as f64);
    }

    // Each chunk of 8 differences gets a table of its 256 signed sums.
    let tables: Vec<[f64; 256]> = diffs
        .chunks(8)
        .map(|chunk| {
            let mut t = [0.0; 256];
            for (byte, slot) in t.iter_mut().enumerate() {
                *slot = chunk
                    .iter()
                    .enumerate()
                    .map(|(i, d)| if byte >> i & 1 == 1 { -d } else { *d })
                    .sum();
            }
            t
        })
        .collect();
    let hits: usize = (0..n_perm)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep as u64);
            let mut s = 0.0;
            let mut bits = 0u64;
            for (i, t) in tables.iter().enumerate() {
                if i % 8 == 0 {
                    bits = rng.random();
                }
                s += t[(bits >> (8 * (i % 8))) as usize & 0xff];
            }
            usize::from(s.abs() >= threshold)
        })
        .sum();
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}

/// Type-7 sample quantile of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile CI of `Σ sums / Σ counts` under resampling subjects.
fn bootstrap_ratio_ci(sums: &[f64], counts: &[f64], point: f64, n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    let j = sums.len();
    if j < 2 {
        return Err(Error::InsufficientData(format!("bootstrap needs at least 2 subjects, got {j}")));
    }
    if n_boot < MIN_BOOTSTRAP {
        return Err(Error::InvalidParameter(format!(
            "n_boot must be at least {MIN_BOOTSTRAP}, got {n_boot}"
        )));
    }
    let mut reps: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b as u64);
            let (mut s, mut c) = (0.0, 0.0);
            for _ in 0..j {
                let k = rng.random_range(0..j);
                s += sums[k];
                c += counts[k];
            }
            if c > 0.0 {
                s / c
            } else {
                point
            }
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&reps, 0.025).min(point);
    let hi = quantile_sorted(&reps, 0.975).max(point);
    Ok((lo, hi))
}

/// Percentile 95% CI of the pooled mean difference, resampling whole
/// subjects with replacement.
pub fn bootstrap_subject_ci(diffs_by_subject: &[Vec<f64>], n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    let sums: Vec<f64> = diffs_by_subject.iter().map(|d| d.iter().sum()).collect();
    let counts: Vec<f64> = diffs_by_subject.iter().map(|d| d.len() as f64).collect();
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::InsufficientData("no differences to resample".into()));
    }
    let point = sums.iter().sum::<f64>() / total;
    bootstrap_ratio_ci(&sums, &counts, point, n_boot, seed)
}

/// Percentile CI of `ratio(group true) − ratio(group false)` where each
/// group's subjects are resampled with replacement independently.
pub(crate) fn bootstrap_group_difference_ci(
    sums: &[f64],
    counts: &[f64],
    labels: &[bool],
    point: f64,
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_boot < MIN_BOOTSTRAP {
        return Err(Error::InvalidParameter(format!(
            "n_boot must be at least {MIN_BOOTSTRAP}, got {n_boot}"
        )));
    }
    let high: Vec<usize> = (0..labels.len()).filter(|&j| labels[j]).collect();
    let low: Vec<usize> = (0..labels.len()).filter(|&j| !labels[j]).collect();
    if high.is_empty() || low.is_empty() {
        return Err(Error::InvalidParameter("both groups must be nonempty".into()));
    }
    let resample = |rng: &mut ChaCha8Rng, members: &[usize]| {
        let (mut s, mut c) = (0.0, 0.0);
        for _ in 0..members.len() {
            let j = members[rng.random_range(0..members.len())];
            s += sums[j];
            c += counts[j];
        }
        s / c
    };
    let mut reps: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b as u64);
            resample(&mut rng, &high) - resample(&mut rng, &low)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&reps, 0.025).min(point),
        quantile_sorted(&reps, 0.975).max(point),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed: f64,
    pub p_value: f64,
    pub n_perm: usize,
    pub seed: u64,
}

/// Two-sided permutation test for a two-group statistic: subject labels are
/// shuffled (group sizes preserved) and `statistic` recomputed.
pub fn group_label_permutation_test<F>(labels: &[bool], n_perm: usize, seed: u64, statistic: F) -> Result<PermutationResult>
where
    F: Fn(&[bool]) -> Result<f64> + Sync,
{
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "n_perm must be at least {MIN_PERMUTATIONS}, got {n_perm}"
        )));
    }
    let n_true = labels.iter().filter(|&&l| l).count();
    if n_true == 0 || n_true == labels.len() {
        return Err(Error::InvalidParameter("both groups must be nonempty".into()));
    }
    let observed = statistic(labels)?;
    let threshold = observed.abs() * (1.0 - 1e-12);
    let hits = (0..n_perm)
        .into_par_iter()
        .map(|rep| -> Result<usize> {
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(&mut replicate_rng(seed, rep as u64));
            let permuted: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
            Ok(usize::from(statistic(&permuted)?.abs() >= threshold))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(PermutationResult {
        observed,
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        n_perm,
        seed,
    })
}
