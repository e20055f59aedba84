//! Gaussian linear mixed model with a single random intercept per subject,
//! fitted by maximum likelihood.
//!
//! For subject `j` with `n_j` rows the marginal covariance is
//! `V_j = σ²(I + θ·11ᵀ)` with `θ = σ_b²/σ²`. By the rank-one Woodbury identity
//! `V_j⁻¹ = σ⁻²(I − w_j·11ᵀ)` with `w_j = θ/(1 + n_jθ)` and
//! `|V_j| = σ^{2n_j}(1 + n_jθ)`, so every quantity the likelihood needs can be
//! assembled from per-subject sufficient statistics (`XᵀX`, `Xᵀy`, `yᵀy`,
//! column sums). Given θ the fixed effects and σ² have closed forms, leaving a
//! one-dimensional search over θ for the profiled deviance.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AnalysisTable;

pub const INTERCEPT: &str = "(Intercept)";
pub const DEFAULT_THETA_MAX: f64 = 1e6;
const MAX_DENSE_N: usize = 2000;
const GRID_POINTS: usize = 40;
const MAX_ITERATIONS: usize = 200;
const COLLINEARITY_TOL: f64 = 1e-10;

/// Fixed-effect structure of a model; the global intercept is implicit and
/// always first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub predictors: Vec<String>,
    pub group: String,
}

impl ModelSpec {
    pub fn new<S: Into<String>>(predictors: impl IntoIterator<Item = S>) -> Self {
        Self {
            response: "y".into(),
            predictors: predictors.into_iter().map(Into::into).collect(),
            group: "subject_id".into(),
        }
    }

    /// This spec with one more predictor appended.
    pub fn with(&self, predictor: impl Into<String>) -> Self {
        let mut s = self.clone();
        s.predictors.push(predictor.into());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.response != "y" {
            return Err(Error::Spec(format!("unsupported response `{}`", self.response)));
        }
        if self.group != "subject_id" {
            return Err(Error::Spec(format!("unsupported grouping `{}`", self.group)));
        }
        for (i, p) in self.predictors.iter().enumerate() {
            if p == &self.response || p == INTERCEPT {
                return Err(Error::Spec(format!("`{p}` cannot be a predictor")));
            }
            if self.predictors[..i].contains(p) {
                return Err(Error::Spec(format!("duplicate predictor `{p}`")));
            }
        }
        Ok(())
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.predictors.iter().cloned())
            .collect()
    }

    /// Whether every predictor of `self` also appears in `other`.
    pub fn is_nested_in(&self, other: &ModelSpec) -> bool {
        self.predictors.iter().all(|p| other.predictors.contains(p))
    }
}

/// Dense design extracted from a table: intercept column first, response
/// centred by `y_offset` for numerical stability.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub n: usize,
    pub p: usize,
    /// row-major n × p
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_offset: f64,
    pub group: Vec<u32>,
    pub n_groups: usize,
    pub names: Vec<String>,
}

impl Design {
    pub fn from_table(table: &AnalysisTable, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n = table.n_rows();
        let p = spec.predictors.len() + 1;
        let cols = spec
            .predictors
            .iter()
            .map(|name| table.column(name))
            .collect::<Result<Vec<_>>>()?;
        let mut x = Vec::with_capacity(n * p);
        for r in 0..n {
            x.push(1.0);
            for c in &cols {
                x.push(c[r]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite predictor value".into()));
        }
        let y_offset = table.y().iter().sum::<f64>() / n as f64;
        Ok(Self {
            n,
            p,
            x,
            y: table.y().iter().map(|v| v - y_offset).collect(),
            y_offset,
            group: table.subject_index().to_vec(),
            n_groups: table.n_subjects(),
            names: spec.coefficient_names(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.p..(r + 1) * self.p]
    }
}

/// Sufficient statistics of one subject (or one subject × fold cell).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GroupStats {
    pub n: f64,
    /// p × p, row-major
    pub xtx: Vec<f64>,
    pub xty: Vec<f64>,
    pub yty: f64,
    pub xs: Vec<f64>,
    pub ys: f64,
}

impl GroupStats {
    pub fn zero(p: usize) -> Self {
        Self {
            n: 0.0,
            xtx: vec![0.0; p * p],
            xty: vec![0.0; p],
            yty: 0.0,
            xs: vec![0.0; p],
            ys: 0.0,
        }
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        let p = x.len();
        self.n += 1.0;
        for a in 0..p {
            let xa = x[a];
            self.xty[a] += xa * y;
            self.xs[a] += xa;
            let row = &mut self.xtx[a * p..(a + 1) * p];
            for b in 0..p {
                row[b] += xa * x[b];
            }
        }
        self.yty += y * y;
        self.ys += y;
    }

    pub fn add(&mut self, o: &GroupStats) {
        self.n += o.n;
        self.yty += o.yty;
        self.ys += o.ys;
        self.xtx.iter_mut().zip(&o.xtx).for_each(|(a, b)| *a += b);
        self.xty.iter_mut().zip(&o.xty).for_each(|(a, b)| *a += b);
        self.xs.iter_mut().zip(&o.xs).for_each(|(a, b)| *a += b);
    }

    /// Σ log N(y; xᵀβ + b, var) over the rows summarized here.
    pub fn gaussian_loglik(&self, beta: &[f64], b: f64, var: f64) -> f64 {
        let p = beta.len();
        let mut quad = self.yty;
        let mut bx = 0.0;
        for a in 0..p {
            quad -= 2.0 * beta[a] * self.xty[a];
            let mut row = 0.0;
            for c in 0..p {
                row += self.xtx[a * p + c] * beta[c];
            }
            quad += beta[a] * row;
            bx += self.xs[a] * beta[a];
        }
        quad += -2.0 * b * (self.ys - bx) + self.n * b * b;
        -0.5 * self.n * (2.0 * PI * var).ln() - 0.5 * quad.max(0.0) / var
    }
}

/// Per-subject sufficient statistics for a design (subjects with no rows
/// carry `n = 0`).
#[derive(Debug, Clone)]
pub(crate) struct SufficientStats {
    pub p: usize,
    pub groups: Vec<GroupStats>,
}

impl SufficientStats {
    pub fn from_design(d: &Design) -> Self {
        Self::from_rows(d, 0..d.n)
    }

    pub fn from_rows(d: &Design, rows: impl IntoIterator<Item = usize>) -> Self {
        let mut groups = vec![GroupStats::zero(d.p); d.n_groups];
        for r in rows {
            groups[d.group[r] as usize].push(d.row(r), d.y[r]);
        }
        Self { p: d.p, groups }
    }
}

/// Result of fitting on sufficient statistics; subjects indexed as in the
/// design.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StatsFit {
    /// Coefficients in design order (centred response), zeros for dropped
    /// columns.
    pub beta: Vec<f64>,
    pub active: Vec<bool>,
    pub sigma2: f64,
    pub sigma2_subj: f64,
    pub theta: f64,
    pub blups: Vec<Option<f64>>,
    pub loglik: f64,
    pub n_obs: f64,
    pub evaluations: usize,
}

impl StatsFit {
    /// Held-out log-density contribution of `cell` for subject `j`.
    pub fn heldout_loglik(&self, j: usize, cell: &GroupStats) -> f64 {
        match self.blups[j] {
            Some(b) => cell.gaussian_loglik(&self.beta, b, self.sigma2),
            None => cell.gaussian_loglik(&self.beta, 0.0, self.sigma2 + self.sigma2_subj),
        }
    }
}

/// θ-independent pieces reused across deviance evaluations.
struct Profile {
    idx: Vec<usize>,
    /// `(n_j, Σy)` of every nonempty subject.
    groups: Vec<(f64, f64)>,
    /// Active column sums of those subjects, `idx.len()` values each.
    sums: Vec<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: f64,
}

struct Solved {
    deviance: f64,
    beta: DVector<f64>,
    sigma2: f64,
}

impl Profile {
    fn new(stats: &SufficientStats, active: &[bool]) -> Self {
        let idx: Vec<usize> = (0..stats.p).filter(|&i| active[i]).collect();
        let q = idx.len();
        let p = stats.p;
        let mut xtx = DMatrix::zeros(q, q);
        let mut xty = DVector::zeros(q);
        let mut yty = 0.0;
        let mut n = 0.0;
        for g in &stats.groups {
            for (a, &ia) in idx.iter().enumerate() {
                xty[a] += g.xty[ia];
                for (b, &ib) in idx.iter().enumerate() {
                    xtx[(a, b)] += g.xtx[ia * p + ib];
                }
            }
            yty += g.yty;
            n += g.n;
        }
        let nonempty = stats.groups.iter().filter(|g| g.n > 0.0);
        let groups = nonempty.clone().map(|g| (g.n, g.ys)).collect();
        let sums = nonempty.flat_map(|g| idx.iter().map(|&i| g.xs[i])).collect();
        Self {
            idx,
            groups,
            sums,
            xtx,
            xty,
            yty,
            n,
        }
    }

    /// `A(θ) = Σ XᵀX − Σ w_j s_j s_jᵀ`, `b(θ)` and `c(θ)` likewise.
    fn assemble(&self, theta: f64) -> (DMatrix<f64>, DVector<f64>, f64, f64) {
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        let mut c = self.yty;
        let mut logdet = 0.0;
        let q = self.idx.len();
        let (a_cols, b_vals) = (a.as_mut_slice(), b.as_mut_slice());
        for (&(n, ys), s) in self.groups.iter().zip(self.sums.chunks_exact(q)) {
            let denom = 1.0 + n * theta;
            let w = theta / denom;
            logdet += denom.ln();
            if w == 0.0 {
                continue;
            }
            for ((col, bk), &sk) in a_cols.chunks_exact_mut(q).zip(b_vals.iter_mut()).zip(s) {
                let ws = w * sk;
                *bk -= ws * ys;
                for (x, &sl) in col.iter_mut().zip(s) {
                    *x -= ws * sl;
                }
            }
            c -= w * ys * ys;
        }
        (a, b, c, logdet)
    }

    fn solve(&self, theta: f64) -> Result<Solved> {
        let (a, b, c, logdet) = self.assemble(theta);
        let chol = Cholesky::new(a)
            .ok_or_else(|| Error::Numeric(format!("XᵀV⁻¹X not positive definite at θ = {theta}")))?;
        let beta = chol.solve(&b);
        let q = (c - b.dot(&beta)).max(f64::MIN_POSITIVE);
        let sigma2 = q / self.n;
        let deviance = self.n * ((2.0 * PI * sigma2).ln() + 1.0) + logdet;
        if !deviance.is_finite() {
            return Err(Error::Numeric(format!("non-finite deviance at θ = {theta}")));
        }
        Ok(Solved {
            deviance,
            beta,
            sigma2,
        })
    }

    fn deviance(&self, theta: f64) -> Result<f64> {
        self.solve(theta).map(|s| s.deviance)
    }

    /// d(deviance)/dθ. By the envelope theorem only the explicit θ
    /// dependence matters: `dQ/dθ = −Σ r_j²/(1 + n_jθ)²` with
    /// `r_j = t_j − s_jᵀβ̂`.
    fn derivative(&self, theta: f64) -> Result<f64> {
        let solved = self.solve(theta)?;
        let q = solved.sigma2 * self.n;
        let mut dq = 0.0;
        let mut dlog = 0.0;
        for (&(n, ys), s) in self.groups.iter().zip(self.sums.chunks_exact(self.idx.len())) {
            let denom = 1.0 + n * theta;
            let fitted: f64 = s.iter().zip(solved.beta.iter()).map(|(a, b)| a * b).sum();
            let r = ys - fitted;
            dq -= r * r / (denom * denom);
            dlog += n / denom;
        }
        Ok(self.n * dq / q + dlog)
    }
}

/// Flags structurally zero columns (dropped, coefficient fixed at 0) and
/// rejects columns that are linear combinations of earlier ones.
fn screen_columns(stats: &SufficientStats, names: &[String]) -> Result<Vec<bool>> {
    let p = stats.p;
    let mut xtx = DMatrix::zeros(p, p);
    for g in &stats.groups {
        for a in 0..p {
            for b in 0..p {
                xtx[(a, b)] += g.xtx[a * p + b];
            }
        }
    }
    if xtx[(0, 0)] <= 0.0 {
        return Err(Error::EmptyTable("no observations to fit".into()));
    }
    let mut active = vec![false; p];
    let mut kept: Vec<usize> = Vec::new();
    for k in 0..p {
        if xtx[(k, k)] == 0.0 {
            continue;
        }
        if !kept.is_empty() {
            let sub = xtx.select_rows(&kept).select_columns(&kept);
            let rhs = DVector::from_iterator(kept.len(), kept.iter().map(|&i| xtx[(i, k)]));
            let chol = Cholesky::new(sub).ok_or_else(|| Error::Numeric("Gram matrix not positive definite".into()))?;
            let coef = chol.solve(&rhs);
            let residual = xtx[(k, k)] - rhs.dot(&coef);
            if residual <= COLLINEARITY_TOL * xtx[(k, k)] {
                let scale: f64 = coef.amax();
                let dependent_on = kept
                    .iter()
                    .zip(coef.iter())
                    .filter(|(_, c)| c.abs() > 1e-6 * scale)
                    .map(|(&i, _)| names[i].clone())
                    .collect();
                return Err(Error::Collinearity {
                    column: names[k].clone(),
                    dependent_on,
                });
            }
        }
        active[k] = true;
        kept.push(k);
    }
    if !active[0] {
        return Err(Error::EmptyTable("intercept column is empty".into()));
    }
    Ok(active)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub theta_max: f64,
    /// Convergence threshold on the width of the θ search bracket, measured
    /// on the `θ/(1+θ)` scale.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            theta_max: DEFAULT_THETA_MAX,
            tolerance: 1e-8,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// Grid scan and golden-section search over `t = θ/(1+θ)`, then a root
/// search on the deviance derivative inside the winning grid cell.
fn optimize_theta(profile: &Profile, opts: &FitOptions) -> Result<(f64, usize)> {
    let to_theta = |t: f64| t / (1.0 - t);
    let t_max = opts.theta_max / (1.0 + opts.theta_max);
    let mut trace: Vec<(f64, f64)> = Vec::new();
    let eval = |t: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let theta = to_theta(t);
        let d = profile.deviance(theta)?;
        trace.push((theta, d));
        Ok(d)
    };

    let grid: Vec<f64> = (0..=GRID_POINTS).map(|i| t_max * i as f64 / GRID_POINTS as f64).collect();
    let mut values = Vec::with_capacity(grid.len());
    for &t in &grid {
        values.push(eval(t, &mut trace)?);
    }
    let best_i = (0..grid.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let (best_t, best_d) = (grid[best_i], values[best_i]);
    let lo = grid[best_i.saturating_sub(1)];
    let hi = grid[(best_i + 1).min(GRID_POINTS)];
    let accept = |d: f64, best: f64| d <= best + 1e-9 * (1.0 + best.abs());

    // The deviance is flat at its minimum, so comparing deviances alone pins
    // θ only to about the square root of machine precision; a root search on
    // the analytic derivative is both faster and sharper when the grid cell
    // brackets a sign change.
    let slope = |t: f64| profile.derivative(to_theta(t));
    let (ga, gb) = (slope(lo)?, slope(hi)?);
    if ga < 0.0 && gb > 0.0 {
        let t = illinois(slope, lo, ga, hi, gb)?;
        let d = eval(t, &mut trace)?;
        if accept(d, best_d) {
            return Ok((to_theta(t), trace.len()));
        }
    } else if ga >= 0.0 && lo == 0.0 && accept(values[0], best_d) {
        return Ok((0.0, trace.len()));
    }

    let (t, d) = golden_section(lo, hi, opts, &mut trace, eval)?;
    Ok(if d < best_d { (to_theta(t), trace.len()) } else { (to_theta(best_t), trace.len()) })
}

fn golden_section(
    mut lo: f64,
    mut hi: f64,
    opts: &FitOptions,
    trace: &mut Vec<(f64, f64)>,
    eval: impl Fn(f64, &mut Vec<(f64, f64)>) -> Result<f64>,
) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1, trace)?;
    let mut f2 = eval(x2, trace)?;
    let mut iterations = 0;
    while hi - lo > opts.tolerance {
        iterations += 1;
        if iterations > opts.max_iterations {
            let keep = trace.len().saturating_sub(20);
            return Err(Error::Optimization {
                message: format!("θ bracket still {:e} wide after {} iterations", hi - lo, opts.max_iterations),
                trace: trace.split_off(keep),
            });
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1, trace)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2, trace)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Regula falsi with the Illinois modification on a sign-changing bracket.
fn illinois(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> Result<f64> {
    let mut side = 0;
    for _ in 0..MAX_ITERATIONS {
        let c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) || b - a <= 4.0 * f64::EPSILON * b.abs().max(1e-300) {
            break;
        }
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if (fc < 0.0) == (fa < 0.0) {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

pub(crate) fn fit_stats(stats: &SufficientStats, names: &[String], opts: &FitOptions) -> Result<StatsFit> {
    let active = screen_columns(stats, names)?;
    let profile = Profile::new(stats, &active);
    let n_groups = stats.groups.iter().filter(|g| g.n > 0.0).count();
    if n_groups < 2 {
        return Err(Error::InsufficientData(format!(
            "random-intercept model needs at least 2 subjects, found {n_groups}"
        )));
    }
    let (theta, evaluations) = optimize_theta(&profile, opts)?;
    let solved = profile.solve(theta)?;

    let mut beta = vec![0.0; stats.p];
    for (k, &i) in profile.idx.iter().enumerate() {
        beta[i] = solved.beta[k];
    }
    let blups = stats
        .groups
        .iter()
        .map(|g| {
            (g.n > 0.0).then(|| {
                let fitted: f64 = g.xs.iter().zip(&beta).map(|(s, b)| s * b).sum();
                theta / (1.0 + g.n * theta) * (g.ys - fitted)
            })
        })
        .collect();
    Ok(StatsFit {
        beta,
        active,
        sigma2: solved.sigma2,
        sigma2_subj: theta * solved.sigma2,
        theta,
        blups,
        loglik: -0.5 * solved.deviance,
        n_obs: profile.n,
        evaluations,
    })
}

/// A fitted random-intercept model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub spec: ModelSpec,
    pub coefficient_names: Vec<String>,
    /// Fixed effects in `coefficient_names` order (intercept first).
    pub beta: Vec<f64>,
    /// Predictors that were identically zero and therefore held at 0.
    pub dropped: Vec<String>,
    pub sigma2_resid: f64,
    pub sigma2_subj: f64,
    pub theta: f64,
    /// Estimated intercept offset per training subject.
    pub blups: BTreeMap<String, f64>,
    /// Maximized marginal log-likelihood (natural log).
    pub loglik: f64,
    pub n_obs: usize,
    pub evaluations: usize,
}

impl LmmFit {
    pub(crate) fn from_stats(fit: StatsFit, design: &Design, spec: &ModelSpec, subject_ids: &[String]) -> Self {
        let mut beta = fit.beta.clone();
        beta[0] += design.y_offset;
        Self {
            spec: spec.clone(),
            coefficient_names: design.names.clone(),
            dropped: design
                .names
                .iter()
                .zip(&fit.active)
                .filter(|(_, a)| !**a)
                .map(|(n, _)| n.clone())
                .collect(),
            beta,
            sigma2_resid: fit.sigma2,
            sigma2_subj: fit.sigma2_subj,
            theta: fit.theta,
            blups: fit
                .blups
                .iter()
                .zip(subject_ids)
                .filter_map(|(b, s)| b.map(|b| (s.clone(), b)))
                .collect(),
            loglik: fit.loglik,
            n_obs: fit.n_obs as usize,
            evaluations: fit.evaluations,
        }
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.beta[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

pub fn fit_random_intercept_lmm(table: &AnalysisTable, spec: &ModelSpec) -> Result<LmmFit> {
    fit_random_intercept_lmm_with(table, spec, &FitOptions::default())
}

pub fn fit_random_intercept_lmm_with(
    table: &AnalysisTable,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<LmmFit> {
    let design = Design::from_table(table, spec)?;
    let stats = SufficientStats::from_design(&design);
    let fit = fit_stats(&stats, &design.names, opts)?;
    Ok(LmmFit::from_stats(fit, &design, spec, table.subject_ids()))
}

/// Profiled ML deviance (−2 log-likelihood maximized over β and σ²) at a
/// fixed θ.
pub fn profiled_deviance(table: &AnalysisTable, spec: &ModelSpec, theta: f64) -> Result<f64> {
    let design = Design::from_table(table, spec)?;
    let stats = SufficientStats::from_design(&design);
    let active = screen_columns(&stats, &design.names)?;
    Profile::new(&stats, &active).deviance(theta)
}

fn check_params(beta: &[f64], p: usize, sigma2_resid: f64, sigma2_subj: f64) -> Result<()> {
    if beta.len() != p {
        return Err(Error::Spec(format!("{} coefficients for {p} design columns", beta.len())));
    }
    if !(sigma2_resid > 0.0) || !(sigma2_subj >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variances must satisfy σ² > 0, σ_b² ≥ 0 (got {sigma2_resid}, {sigma2_subj})"
        )));
    }
    Ok(())
}

/// Exact marginal log-likelihood by building the dense `n × n` covariance
/// `σ²I + σ_b²ZZᵀ` and factorizing it. Test oracle; `n ≤ 2000`.
pub fn marginal_loglik_dense_oracle(
    table: &AnalysisTable,
    spec: &ModelSpec,
    beta: &[f64],
    sigma2_resid: f64,
    sigma2_subj: f64,
) -> Result<f64> {
    let n = table.n_rows();
    if n > MAX_DENSE_N {
        return Err(Error::Size(format!("dense oracle limited to {MAX_DENSE_N} rows, got {n}")));
    }
    spec.validate()?;
    check_params(beta, spec.predictors.len() + 1, sigma2_resid, sigma2_subj)?;
    let cols = spec
        .predictors
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<Vec<_>>>()?;
    let subj = table.subject_index();
    let mut v = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            if subj[i] == subj[k] {
                v[(i, k)] = sigma2_subj;
            }
        }
        v[(i, i)] += sigma2_resid;
    }
    let resid = DVector::from_iterator(
        n,
        (0..n).map(|r| {
            let mut mu = beta[0];
            for (c, b) in cols.iter().zip(&beta[1..]) {
                mu += c[r] * b;
            }
            table.y()[r] - mu
        }),
    );
    let chol = Cholesky::new(v).ok_or_else(|| Error::Numeric("covariance not positive definite".into()))?;
    let l = chol.l();
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let z = l
        .solve_lower_triangular(&resid)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok(-0.5 * (n as f64 * (2.0 * PI).ln() + logdet + z.norm_squared()))
}

/// Marginal log-likelihood evaluated subject by subject with the rank-one
/// Woodbury inverse and determinant.
pub fn marginal_loglik_blockwise(
    table: &AnalysisTable,
    spec: &ModelSpec,
    beta: &[f64],
    sigma2_resid: f64,
    sigma2_subj: f64,
) -> Result<f64> {
    let design = Design::from_table(table, spec)?;
    check_params(beta, design.p, sigma2_resid, sigma2_subj)?;
    let theta = sigma2_subj / sigma2_resid;
    let mut sum_r = vec![0.0; design.n_groups];
    let mut sum_r2 = vec![0.0; design.n_groups];
    let mut count = vec![0.0; design.n_groups];
    for r in 0..design.n {
        let mu: f64 = design.row(r).iter().zip(beta).map(|(x, b)| x * b).sum();
        let e = design.y[r] + design.y_offset - mu;
        let g = design.group[r] as usize;
        sum_r[g] += e;
        sum_r2[g] += e * e;
        count[g] += 1.0;
    }
    let mut ll = -0.5 * design.n as f64 * (2.0 * PI * sigma2_resid).ln();
    for g in 0..design.n_groups {
        let nj = count[g];
        if nj == 0.0 {
            continue;
        }
        let w = theta / (1.0 + nj * theta);
        ll -= 0.5 * (1.0 + nj * theta).ln();
        ll -= 0.5 * (sum_r2[g] - w * sum_r[g] * sum_r[g]) / sigma2_resid;
    }
    Ok(ll)
}

fn normal_logpdf(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (y - mean).powi(2) / var
}

/// Held-out log-density of each requested row: conditional on the subject's
/// BLUP when the subject was seen in training, otherwise the plug-in
/// marginal `N(xᵀβ, σ² + σ_b²)`.
pub fn predict_heldout_logdensity(fit: &LmmFit, table: &AnalysisTable, rows: &[usize]) -> Result<Vec<f64>> {
    let cols = fit
        .spec
        .predictors
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<Vec<_>>>()?;
    let blups: Vec<Option<f64>> = table
        .subject_ids()
        .iter()
        .map(|s| fit.blups.get(s).copied())
        .collect();
    let subj = table.subject_index();
    rows.iter()
        .map(|&r| {
            if r >= table.n_rows() {
                return Err(Error::InvalidParameter(format!("row {r} out of range")));
            }
            let mut mu = fit.beta[0];
            for (c, b) in cols.iter().zip(&fit.beta[1..]) {
                mu += c[r] * b;
            }
            Ok(match blups[subj[r] as usize] {
                Some(b) => normal_logpdf(table.y()[r], mu + b, fit.sigma2_resid),
                None => normal_logpdf(table.y()[r], mu, fit.sigma2_resid + fit.sigma2_subj),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub estimate: f64,
    /// `None` for predictors dropped as identically zero.
    pub std_error: Option<f64>,
}

/// Estimates with standard errors from `(XᵀV⁻¹X)⁻¹` at the fitted
/// variance components.
pub fn fixed_effect_summary(fit: &LmmFit, table: &AnalysisTable, spec: &ModelSpec) -> Result<Vec<CoefficientSummary>> {
    if &fit.spec != spec {
        return Err(Error::Spec("fit was produced for a different model spec".into()));
    }
    let design = Design::from_table(table, spec)?;
    let stats = SufficientStats::from_design(&design);
    let active: Vec<bool> = design.names.iter().map(|n| !fit.dropped.contains(n)).collect();
    if !(fit.sigma2_resid > 0.0) {
        return Err(Error::InvalidParameter("σ² must be positive".into()));
    }
    let profile = Profile::new(&stats, &active);
    let (a, _, _, _) = profile.assemble(fit.sigma2_subj / fit.sigma2_resid);
    let inv = Cholesky::new(a)
        .ok_or_else(|| Error::Numeric("XᵀV⁻¹X not positive definite".into()))?
        .inverse();
    let mut se = vec![None; design.p];
    for (k, &i) in profile.idx.iter().enumerate() {
        se[i] = Some((fit.sigma2_resid * inv[(k, k)]).sqrt());
    }
    Ok(design
        .names
        .iter()
        .zip(&fit.beta)
        .zip(se)
        .map(|((name, &estimate), std_error)| CoefficientSummary {
            name: name.clone(),
            estimate,
            std_error,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ItemKey, RowKey};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn table_from(
        subjects: &[&str],
        y: &[f64],
        cols: &[(&str, Vec<f64>)],
    ) -> AnalysisTable {
        let rows = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| RowKey {
                subject_id: s.to_string(),
                item: ItemKey::new("t", i as u32),
            })
            .collect();
        AnalysisTable::from_rows(
            rows,
            y.to_vec(),
            cols.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
        )
        .unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (AnalysisTable, ModelSpec) {
        let j = rng.random_range(2..=8);
        let n = rng.random_range(j.max(6)..=40);
        let names: Vec<String> = (0..j).map(|i| format!("s{i}")).collect();
        let subjects: Vec<&str> = (0..n).map(|r| names[r % j].as_str()).collect();
        let offsets: Vec<f64> = (0..j).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|r| 1.0 + 0.3 * x1[r] - 0.2 * x2[r] + offsets[r % j] + noise.sample(rng))
            .collect();
        let t = table_from(&subjects, &y, &[("x1", x1), ("x2", x2)]);
        (t, ModelSpec::new(["x1", "x2"]))
    }

    #[test]
    fn intercept_only_matches_dense_oracle_optimum() {
        // Optimum pinned by brute-force dense grid search over θ with profiled
        // β and σ²: θ = 1.5, β0 = 2.5, σ² = 0.5, σ_b² = 0.75.
        let t = table_from(&["A", "A", "B", "B"], &[1.0, 2.0, 3.0, 4.0], &[]);
        let spec = ModelSpec::new(Vec::<String>::new());
        let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
        assert!((fit.loglik - (-5.675754132818691)).abs() < 1e-8, "{}", fit.loglik);
        let dense = marginal_loglik_dense_oracle(&t, &spec, &fit.beta, fit.sigma2_resid, fit.sigma2_subj).unwrap();
        assert!((fit.loglik - dense).abs() < 1e-8);
        assert!((fit.beta[0] - 2.5).abs() < 1e-6);
        assert!((fit.sigma2_resid - 0.5).abs() < 1e-6);
        assert!((fit.sigma2_subj - 0.75).abs() < 1e-6);
    }

    #[test]
    fn dense_oracle_bivariate_hand_case() {
        // y = (0.3, −0.2), μ = 0.1, σ² = 0.5, σ_b² = 0.25: closed-form 2×2
        // Gaussian log-density.
        let t = table_from(&["A", "A"], &[0.3, -0.2], &[]);
        let spec = ModelSpec::new(Vec::<String>::new());
        let v = marginal_loglik_dense_oracle(&t, &spec, &[0.1], 0.5, 0.25).unwrap();
        let (s2, sb2): (f64, f64) = (0.5, 0.25);
        let det = s2 * (s2 + 2.0 * sb2);
        let (r1, r2) = (0.2, -0.3);
        let quad = ((s2 + sb2) * (r1 * r1 + r2 * r2) - 2.0 * sb2 * r1 * r2) / det;
        let hand = -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * quad;
        assert!((v - hand).abs() < 1e-12);
        assert!((v - (-1.6188034761293726)).abs() < 1e-12);
    }

    #[test]
    fn dense_oracle_without_subject_variance_is_independent_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, spec) = random_instance(&mut rng);
        let beta = [0.7, 0.2, -0.1];
        let dense = marginal_loglik_dense_oracle(&t, &spec, &beta, 0.4, 0.0).unwrap();
        let x1 = t.column("x1").unwrap();
        let x2 = t.column("x2").unwrap();
        let indep: f64 = (0..t.n_rows())
            .map(|r| normal_logpdf(t.y()[r], beta[0] + beta[1] * x1[r] + beta[2] * x2[r], 0.4))
            .sum();
        assert!((dense - indep).abs() < 1e-10);
    }

    #[test]
    fn blockwise_equals_dense_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (t, spec) = random_instance(&mut rng);
            let beta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s2 = rng.random_range(0.05..2.0);
            let sb2 = rng.random_range(0.0..2.0);
            let dense = marginal_loglik_dense_oracle(&t, &spec, &beta, s2, sb2).unwrap();
            let block = marginal_loglik_blockwise(&t, &spec, &beta, s2, sb2).unwrap();
            assert!((dense - block).abs() < 1e-8, "{dense} vs {block}");
        }
    }

    #[test]
    fn dense_oracle_errors() {
        let t = table_from(&["A", "A"], &[0.3, -0.2], &[]);
        let spec = ModelSpec::new(Vec::<String>::new());
        assert!(marginal_loglik_dense_oracle(&t, &spec, &[0.0], 0.0, 0.0).is_err());
        assert!(marginal_loglik_dense_oracle(&t, &spec, &[0.0, 1.0], 1.0, 0.0).is_err());
        let big: Vec<&str> = vec!["A"; 2001];
        let t = table_from(&big, &vec![0.0; 2001], &[]);
        assert!(matches!(
            marginal_loglik_dense_oracle(&t, &spec, &[0.0], 1.0, 0.0),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn fitted_loglik_matches_dense_and_beats_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (t, spec) = random_instance(&mut rng);
            let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
            let dense = marginal_loglik_dense_oracle(&t, &spec, &fit.beta, fit.sigma2_resid, fit.sigma2_subj).unwrap();
            assert!((fit.loglik - dense).abs() < 1e-6);
            let best_grid = (0..1000)
                .map(|i| -0.5 * profiled_deviance(&t, &spec, 5.0 * i as f64 / 999.0).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(fit.loglik >= best_grid - 1e-6);
        }
    }

    #[test]
    fn deviance_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (t, spec) = random_instance(&mut rng);
        let design = Design::from_table(&t, &spec).unwrap();
        let stats = SufficientStats::from_design(&design);
        let active = vec![true; design.p];
        let prof = Profile::new(&stats, &active);
        for theta in [0.0, 0.05, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (prof.deviance(theta + h).unwrap() - prof.deviance((theta - h).max(0.0)).unwrap())
                / (theta + h - (theta - h).max(0.0));
            let g = prof.derivative(theta).unwrap();
            assert!((fd - g).abs() < 1e-4 * (1.0 + g.abs()), "{theta}: {fd} vs {g}");
        }
    }

    #[test]
    fn duplicated_column_is_collinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, _) = random_instance(&mut rng);
        let mut t = t;
        let x1 = t.column("x1").unwrap().into_owned();
        t.set_column("x1_copy", x1).unwrap();
        match fit_random_intercept_lmm(&t, &ModelSpec::new(["x1", "x2", "x1_copy"])) {
            Err(Error::Collinearity { column, dependent_on }) => {
                assert_eq!(column, "x1_copy");
                assert_eq!(dependent_on, vec!["x1".to_string()]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            fit_random_intercept_lmm(&t, &ModelSpec::new(["x1", "x1"])),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn zero_column_is_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut t, spec) = random_instance(&mut rng);
        t.set_column("zero", vec![0.0; t.n_rows()]).unwrap();
        let base = fit_random_intercept_lmm(&t, &spec).unwrap();
        let with = fit_random_intercept_lmm(&t, &spec.with("zero")).unwrap();
        assert_eq!(with.dropped, vec!["zero".to_string()]);
        assert_eq!(with.coefficient("zero"), Some(0.0));
        assert!((with.loglik - base.loglik).abs() < 1e-12);
    }

    #[test]
    fn single_subject_is_rejected() {
        let t = table_from(&["A", "A", "A"], &[1.0, 2.0, 4.0], &[]);
        assert!(matches!(
            fit_random_intercept_lmm(&t, &ModelSpec::new(Vec::<String>::new())),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn zero_residual_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut t, spec) = random_instance(&mut rng);
        let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
        let x1 = t.column("x1").unwrap().into_owned();
        let x2 = t.column("x2").unwrap().into_owned();
        let s0 = &t.subject_ids()[t.subject_index()[0] as usize];
        let mut y = t.y().to_vec();
        y[0] = fit.beta[0] + fit.beta[1] * x1[0] + fit.beta[2] * x2[0] + fit.blups[s0];
        t.set_y(y).unwrap();
        let d = predict_heldout_logdensity(&fit, &t, &[0]).unwrap()[0];
        assert!((d - (-0.5 * (2.0 * PI * fit.sigma2_resid).ln())).abs() < 1e-12);
    }

    #[test]
    fn unseen_subject_gets_wider_density() {
        let t = table_from(
            &["A", "A", "B", "B", "C"],
            &[1.0, 2.0, 3.0, 4.5, 2.5],
            &[],
        );
        let spec = ModelSpec::new(Vec::<String>::new());
        let mut fit = fit_random_intercept_lmm(&t.subset_subjects(&[true, true, false]).unwrap(), &spec).unwrap();
        assert!(fit.sigma2_subj > 0.0);
        // Row 4 (subject C) is unseen; pretend A had b = 0 for comparison.
        fit.blups.insert("A".into(), 0.0);
        let unseen = predict_heldout_logdensity(&fit, &t, &[4]).unwrap()[0];
        let var = fit.sigma2_resid + fit.sigma2_subj;
        let expect = -0.5 * (2.0 * PI * var).ln() - 0.5 * (2.5 - fit.beta[0]).powi(2) / var;
        assert!((unseen - expect).abs() < 1e-12);
        // Same mean, smaller variance, at the mean itself: the seen density is higher.
        let mut t2 = t.clone();
        let mut y = t2.y().to_vec();
        y[0] = fit.beta[0];
        y[4] = fit.beta[0];
        t2.set_y(y).unwrap();
        let d = predict_heldout_logdensity(&fit, &t2, &[0, 4]).unwrap();
        assert!(d[0] > d[1]);
    }

    #[test]
    fn heldout_density_matches_scalar_normal() {
        let t = table_from(&["A", "A", "B", "B"], &[1.0, 2.0, 3.0, 4.0], &[]);
        let spec = ModelSpec::new(Vec::<String>::new());
        let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
        // BLUPs: θ/(1 + 2θ)·Σ residuals = 1.5/4 · (∓2) = ∓0.75
        assert!((fit.blups["A"] + 0.75).abs() < 1e-6);
        let d = predict_heldout_logdensity(&fit, &t, &[0, 1, 2, 3]).unwrap();
        let by_hand = |y: f64, m: f64| -0.5 * (2.0 * PI * 0.5f64).ln() - (y - m).powi(2) / (2.0 * 0.5);
        let expect = [by_hand(1.0, 1.75), by_hand(2.0, 1.75), by_hand(3.0, 3.25), by_hand(4.0, 3.25)];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        let bad = ModelSpec::new(["missing"]);
        let mut bad_fit = fit.clone();
        bad_fit.spec = bad;
        assert!(predict_heldout_logdensity(&bad_fit, &t, &[0]).is_err());
    }

    #[test]
    fn standard_errors_scale_with_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (t, spec) = random_instance(&mut rng);
        let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
        let a = fixed_effect_summary(&fit, &t, &spec).unwrap();
        let mut doubled = fit.clone();
        doubled.sigma2_resid *= 2.0;
        doubled.sigma2_subj *= 2.0;
        let b = fixed_effect_summary(&doubled, &t, &spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let ratio = y.std_error.unwrap() / x.std_error.unwrap();
            assert!((ratio - 2f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn negating_a_predictor_flips_its_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let (mut t, spec) = random_instance(&mut rng);
            let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
            let neg: Vec<f64> = t.column("x2").unwrap().iter().map(|v| -v).collect();
            t.set_column("x2", neg).unwrap();
            let flipped = fit_random_intercept_lmm(&t, &spec).unwrap();
            assert!((fit.beta[2] + flipped.beta[2]).abs() < 1e-9);
            assert!((fit.loglik - flipped.loglik).abs() < 1e-9);
        }
    }

    #[test]
    fn nested_models_do_not_lose_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (t, _) = random_instance(&mut rng);
            let small = fit_random_intercept_lmm(&t, &ModelSpec::new(["x1"])).unwrap();
            let big = fit_random_intercept_lmm(&t, &ModelSpec::new(["x1", "x2"])).unwrap();
            assert!(big.loglik >= small.loglik - 1e-6);
        }
    }

    #[test]
    fn blups_shrink_towards_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let (t, spec) = random_instance(&mut rng);
            let fit = fit_random_intercept_lmm(&t, &spec).unwrap();
            if fit.sigma2_subj <= 0.0 {
                continue;
            }
            let x1 = t.column("x1").unwrap();
            let x2 = t.column("x2").unwrap();
            let mut sum = vec![0.0; t.n_subjects()];
            let mut cnt = vec![0.0; t.n_subjects()];
            for r in 0..t.n_rows() {
                let s = t.subject_index()[r] as usize;
                sum[s] += t.y()[r] - fit.beta[0] - fit.beta[1] * x1[r] - fit.beta[2] * x2[r];
                cnt[s] += 1.0;
            }
            for (j, id) in t.subject_ids().iter().enumerate() {
                let ols = sum[j] / cnt[j];
                let b = fit.blups[id];
                assert!(b * ols >= 0.0 && b.abs() < ols.abs(), "{b} vs {ols}");
            }
        }
    }

    #[test]
    fn fit_serializes() {
        let t = table_from(&["A", "A", "B", "B"], &[1.0, 2.0, 3.0, 4.0], &[]);
        let fit = fit_random_intercept_lmm(&t, &ModelSpec::new(Vec::<String>::new())).unwrap();
        let back: LmmFit = serde_json::from_str(&fit.to_json()).unwrap();
        assert_eq!(back, fit);
    }
}
