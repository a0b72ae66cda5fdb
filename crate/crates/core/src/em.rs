//! Maximum-likelihood estimation by expectation-maximization.
//!
//! The E-step runs the filter and smoother. The M-step maximizes the expected
//! complete-data log-likelihood by alternating a generalized least-squares
//! solve for the mean parameters (given the covariances) with the weighted
//! residual covariance (given the mean parameters), starting from the current
//! covariances, so every iteration is non-decreasing in likelihood. When all
//! equations share regressors and no block is shared across regimes with
//! switching covariances the first pass is already exact.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::ObservationSeries;
use crate::error::{Error, Result};
use crate::inference::{classify, filter_densities, smooth, RegimeProbabilities};
use crate::linalg::{solve_spd, sub_matrix, symmetrize, CovFactor};
use crate::model::{design_matrix, LogDensityTable, MeanParam, Model, ModelDocument, ModelMetadata, ModelParams, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// k-means on the residuals of a single-regime VAR.
    KmeansOnResiduals,
    /// Dirichlet(1) responsibilities per row.
    RandomResponsibilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Convergence threshold on `|Δ log L| / max(|log L|, 1)`.
    pub rel_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// Relative ridge added to every covariance estimate.
    pub ridge: f64,
    pub init_strategy: InitStrategy,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-8,
            n_restarts: 5,
            seed: 0,
            ridge: 1e-8,
            init_strategy: InitStrategy::KmeansOnResiduals,
        }
    }
}

impl EmConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.rel_tol > 0.0) || self.n_restarts == 0 || !(self.ridge >= 0.0) {
            return Err(Error::Config("EM needs max_iters >= 1, rel_tol > 0, n_restarts >= 1, ridge >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Log-likelihood of every evaluated parameter iterate of the best restart.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    /// Final log-likelihood per restart (`None` when the restart failed).
    pub restart_log_likelihoods: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Em,
    Gibbs,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Em => "em",
            FitMethod::Gibbs => "gibbs",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: FitMethod,
    pub model: Model,
    pub probabilities: RegimeProbabilities,
    /// 0-based regime per modeled row (`T - p` entries).
    pub classification: Vec<usize>,
    pub converged: bool,
    pub em_trace: Option<EmTrace>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn log_likelihood(&self) -> f64 {
        self.probabilities.log_likelihood
    }

    pub fn document(&self, series: &ObservationSeries) -> ModelDocument {
        let mut doc = ModelDocument::from_model(
            &self.model,
            ModelMetadata {
                fit_method: self.method.as_str().into(),
                log_likelihood: Some(self.log_likelihood()),
                data_fingerprint: Some(series.fingerprint()),
                channels: series.channels().to_vec(),
                converged: Some(self.converged),
            },
        );
        doc.em_trace = self.em_trace.clone();
        doc
    }
}

/// Design and response matrices shared by every iteration.
pub(crate) struct Regression {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub modeled: Vec<usize>,
}

impl Regression {
    pub fn new(series: &ObservationSeries, spec: &ModelSpec) -> Self {
        let p = spec.lags;
        let x = design_matrix(series.data(), p);
        let y = series.data().rows(p, series.len() - p).into_owned();
        Self { x, y, modeled: spec.modeled_channels() }
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }
}

/// Weighted cross products for one regime.
#[derive(Clone)]
pub(crate) struct Stats {
    pub weight: f64,
    pub xx: DMatrix<f64>,
    pub xy: DMatrix<f64>,
    pub w: DVector<f64>,
}

pub(crate) fn weighted_stats(reg: &Regression, w: DVector<f64>) -> Stats {
    let mut xw = reg.x.clone();
    for (r, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[r];
    }
    Stats { weight: w.sum(), xx: xw.tr_mul(&reg.x), xy: xw.tr_mul(&reg.y), w }
}

pub(crate) struct MStepOutput {
    pub params: ModelParams,
    /// Regimes whose weight fell below the per-regime minimum.
    pub degenerate: Vec<usize>,
}

/// One independent block of the mean-parameter normal equations
/// `h β = g`, over the layout entries in `params`.
pub(crate) struct MeanBlock {
    pub params: Vec<usize>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
}

/// Assembles the normal equations of the mean parameters given per-regime
/// precision matrices on the modeled channels. Without shared parameters
/// every regime forms its own block.
pub(crate) fn mean_blocks(
    spec: &ModelSpec,
    layout: &[MeanParam],
    stats: &[Stats],
    prec: &[DMatrix<f64>],
    modeled: &[usize],
) -> Vec<MeanBlock> {
    let m_count = spec.n_regimes;
    let pos = |eq: usize| modeled.iter().position(|&k| k == eq).expect("modeled equation");
    let tied = layout.iter().any(|p| p.regime.is_none());
    let groups: Vec<Vec<usize>> = if tied {
        vec![(0..layout.len()).collect()]
    } else {
        (0..m_count)
            .map(|m| (0..layout.len()).filter(|&a| layout[a].regime == Some(m)).collect())
            .collect()
    };
    let mut out = Vec::new();
    for group in groups {
        let k = group.len();
        if k == 0 {
            continue;
        }
        let mut h = DMatrix::zeros(k, k);
        let mut g = DVector::zeros(k);
        for (ia, &a) in group.iter().enumerate() {
            let pa = layout[a];
            for m in regimes_of(&pa, m_count) {
                let lam = &prec[m];
                let s = &stats[m];
                for (l, &ch) in modeled.iter().enumerate() {
                    g[ia] += lam[(pos(pa.eq), l)] * s.xy[(pa.col, ch)];
                }
            }
            for (ib, &bi) in group.iter().enumerate().skip(ia) {
                let pb = layout[bi];
                let mut acc = 0.0;
                for m in regimes_of(&pa, m_count) {
                    if pb.regime.is_some_and(|r| r != m) {
                        continue;
                    }
                    acc += prec[m][(pos(pa.eq), pos(pb.eq))] * stats[m].xx[(pa.col, pb.col)];
                }
                h[(ia, ib)] = acc;
                h[(ib, ia)] = acc;
            }
        }
        out.push(MeanBlock { params: group, h, g });
    }
    out
}

fn regimes_of(p: &MeanParam, m_count: usize) -> std::ops::Range<usize> {
    match p.regime {
        Some(m) => m..m + 1,
        None => 0..m_count,
    }
}

/// Writes block solutions into one `N x J` coefficient matrix per regime.
pub(crate) fn scatter_means(spec: &ModelSpec, layout: &[MeanParam], block: &MeanBlock, beta: &DVector<f64>, b: &mut [DMatrix<f64>]) {
    for (ia, &a) in block.params.iter().enumerate() {
        let pa = layout[a];
        for m in regimes_of(&pa, spec.n_regimes) {
            b[m][(pa.eq, pa.col)] = beta[ia];
        }
    }
}

/// Solves every block; regimes with a `fixed` matrix keep it (only used
/// when no parameter is shared, so each block belongs to one regime).
fn solve_means(
    spec: &ModelSpec,
    stats: &[Stats],
    prec: &[DMatrix<f64>],
    modeled: &[usize],
    fixed: &[Option<DMatrix<f64>>],
) -> Result<Vec<DMatrix<f64>>> {
    let layout = spec.mean_layout();
    let mut b = vec![DMatrix::zeros(spec.n_channels, spec.n_regressors()); spec.n_regimes];
    for block in mean_blocks(spec, &layout, stats, prec, modeled) {
        if let Some(m) = layout[block.params[0]].regime {
            if let Some(f) = &fixed[m] {
                b[m] = f.clone();
                continue;
            }
        }
        let beta = solve_spd(&block.h, &block.g)?;
        scatter_means(spec, &layout, &block, &beta, &mut b);
    }
    Ok(b)
}

/// Weighted residual cross-product on the modeled channels.
pub(crate) fn residual_scatter(reg: &Regression, b: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let fitted = &reg.x * b.transpose();
    let d = reg.modeled.len();
    let mut e = DMatrix::zeros(reg.n_rows(), d);
    for r in 0..reg.n_rows() {
        for (k, &c) in reg.modeled.iter().enumerate() {
            e[(r, k)] = reg.y[(r, c)] - fitted[(r, c)];
        }
    }
    let mut ew = e.clone();
    for (r, mut row) in ew.row_iter_mut().enumerate() {
        row *= w[r];
    }
    symmetrize(&ew.tr_mul(&e))
}

fn add_ridge(s: &mut DMatrix<f64>, ridge: f64) {
    let d = s.nrows().max(1) as f64;
    let bump = ridge * (s.trace() / d).abs().max(f64::MIN_POSITIVE);
    for i in 0..s.nrows() {
        s[(i, i)] += bump;
    }
}

/// M-step starting the conditional updates from `prev` (identity
/// covariances when absent).
///
/// A regime whose weight falls below the per-regime minimum keeps its
/// previous mean parameters and covariance when nothing is shared across
/// regimes, which keeps the update non-decreasing; otherwise, or without a
/// previous iterate, it borrows the pooled statistics.
pub(crate) fn m_step_from(
    reg: &Regression,
    smoothed: &DMatrix<f64>,
    pairwise: &[DMatrix<f64>],
    spec: &ModelSpec,
    prev: Option<&ModelParams>,
    ridge: f64,
) -> Result<MStepOutput> {
    let (n, m_count) = (spec.n_channels, spec.n_regimes);
    let d = reg.modeled.len();
    let min_rows = spec.min_rows_per_regime() as f64;
    let keep_prev = prev.is_some() && spec.mean_layout().iter().all(|p| p.regime.is_some());

    let pooled = weighted_stats(reg, DVector::from_element(reg.n_rows(), 1.0));
    let mut degenerate = Vec::new();
    let mut fixed: Vec<Option<DMatrix<f64>>> = vec![None; m_count];
    let stats: Vec<Stats> = (0..m_count)
        .map(|m| {
            let s = weighted_stats(reg, smoothed.column(m).into_owned());
            if m_count > 1 && s.weight < min_rows {
                degenerate.push(m);
                match prev {
                    Some(p) if keep_prev => {
                        fixed[m] = Some(p.coef_matrix(m));
                        s
                    }
                    _ => pooled.clone(),
                }
            } else {
                s
            }
        })
        .collect();
    if !degenerate.is_empty() {
        log::warn!(
            "regimes {:?} carry less than {} effective observations; {}",
            degenerate.iter().map(|m| m + 1).collect::<Vec<_>>(),
            min_rows,
            if keep_prev { "keeping their previous estimates" } else { "using pooled estimates" }
        );
    }

    let mut prec: Vec<DMatrix<f64>> = match prev {
        Some(p) => p
            .covariances
            .iter()
            .enumerate()
            .map(|(m, s)| CovFactor::new(&sub_matrix(s, &reg.modeled), m).map(|f| f.inverse()))
            .collect::<Result<_>>()?,
        None => vec![DMatrix::identity(d, d); m_count],
    };

    let mut prev_q = f64::NEG_INFINITY;
    let mut b = Vec::new();
    let mut cov_mod = Vec::new();
    for _ in 0..100 {
        b = solve_means(spec, &stats, &prec, &reg.modeled, &fixed)?;
        let scatter: Vec<DMatrix<f64>> = (0..m_count).map(|m| residual_scatter(reg, &b[m], &stats[m].w)).collect();
        cov_mod = if spec.switch_cov || m_count == 1 {
            (0..m_count).map(|m| &scatter[m] / stats[m].weight).collect::<Vec<_>>()
        } else {
            let total_w: f64 = stats.iter().map(|s| s.weight).sum();
            let mut s = DMatrix::zeros(d, d);
            for sc in &scatter {
                s += sc;
            }
            vec![s / total_w; m_count]
        };
        for (m, s) in cov_mod.iter_mut().enumerate() {
            match (prev, &fixed[m]) {
                (Some(p), Some(_)) if spec.switch_cov => *s = sub_matrix(&p.covariances[m], &reg.modeled),
                _ => add_ridge(s, ridge),
            }
        }
        let mut q = 0.0;
        prec.clear();
        for m in 0..m_count {
            let f = CovFactor::new(&cov_mod[m], m)?;
            let inv = f.inverse();
            q -= 0.5 * (stats[m].weight * f.log_det() + (&inv * &scatter[m]).trace());
            prec.push(inv);
        }
        if (q - prev_q).abs() <= 1e-12 * q.abs().max(1.0) {
            break;
        }
        prev_q = q;
    }

    let mut params = ModelParams {
        intercepts: vec![DVector::zeros(n); m_count],
        coeffs: vec![vec![DMatrix::zeros(n, n); spec.lags]; m_count],
        covariances: Vec::with_capacity(m_count),
        transition: DMatrix::zeros(m_count, m_count),
        initial_dist: DVector::zeros(m_count),
    };
    for m in 0..m_count {
        params.set_coef_matrix(m, &b[m]);
        let mut full = DMatrix::identity(n, n);
        for (i, &ci) in reg.modeled.iter().enumerate() {
            for (j, &cj) in reg.modeled.iter().enumerate() {
                full[(ci, cj)] = cov_mod[m][(i, j)];
            }
        }
        params.covariances.push(full);
    }
    params.transition = transition_update(pairwise, m_count);
    let first = smoothed.row(0);
    let s: f64 = first.sum();
    params.initial_dist = DVector::from_fn(m_count, |j, _| first[j] / s);
    Ok(MStepOutput { params, degenerate })
}

/// `P[i][j] = Σ_t Pr(s_{t-1}=i, s_t=j | Y) / Σ_t Pr(s_{t-1}=i | Y)`; rows
/// without mass become uniform.
fn transition_update(pairwise: &[DMatrix<f64>], m: usize) -> DMatrix<f64> {
    let mut counts = DMatrix::zeros(m, m);
    for q in pairwise {
        counts += q;
    }
    let mut p = DMatrix::zeros(m, m);
    for i in 0..m {
        let total: f64 = counts.row(i).sum();
        for j in 0..m {
            p[(i, j)] = if total > 0.0 { counts[(i, j)] / total } else { 1.0 / m as f64 };
        }
    }
    p
}

/// One M-step from smoothed and pairwise probabilities.
pub fn m_step(
    series: &ObservationSeries,
    smoothed: &DMatrix<f64>,
    pairwise: &[DMatrix<f64>],
    spec: &ModelSpec,
) -> Result<ModelParams> {
    spec.check()?;
    let reg = Regression::new(series, spec);
    if smoothed.shape() != (reg.n_rows(), spec.n_regimes) || pairwise.len() + 1 != reg.n_rows() {
        return Err(Error::Dimension("probability tables do not match the series".into()));
    }
    Ok(m_step_from(&reg, smoothed, pairwise, spec, None, EmConfig::default().ridge)?.params)
}

pub(crate) fn e_step(series: &ObservationSeries, model: &Model) -> Result<RegimeProbabilities> {
    let table = LogDensityTable::compute(series, model)?;
    let f = filter_densities(&table, &model.params.transition, &model.params.initial_dist)?;
    Ok(smooth(f, &model.params.transition))
}

/// A single EM update of `model`; returns the new model and its log-likelihood.
pub fn em_iteration(series: &ObservationSeries, model: &Model, ridge: f64) -> Result<(Model, f64)> {
    let reg = Regression::new(series, &model.spec);
    let probs = e_step(series, model)?;
    let out = m_step_from(&reg, &probs.smoothed, &probs.pairwise, &model.spec, Some(&model.params), ridge)?;
    let next = Model { spec: model.spec.clone(), params: out.params };
    let ll = e_step(series, &next)?.log_likelihood;
    Ok((next, ll))
}

/// Outer-product pairwise tables of independent per-row responsibilities.
fn pairwise_from(resp: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    (1..resp.nrows())
        .map(|r| resp.row(r - 1).transpose() * resp.row(r))
        .collect()
}

fn kmeans(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.nrows();
    let dist2 = |r: usize, c: &DVector<f64>| -> f64 { (0..points.ncols()).map(|j| (points[(r, j)] - c[j]).powi(2)).sum() };
    let mut centers: Vec<DVector<f64>> = vec![points.row(rng.random_range(0..n)).transpose()];
    while centers.len() < k {
        let d: Vec<f64> = (0..n).map(|r| centers.iter().map(|c| dist2(r, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (r, x) in d.iter().enumerate() {
                if u < *x {
                    idx = r;
                    break;
                }
                u -= x;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points.row(pick).transpose());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for r in 0..n {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let dd = dist2(r, c);
                if dd < bd {
                    bd = dd;
                    best = j;
                }
            }
            if assign[r] != best {
                assign[r] = best;
                changed = true;
            }
        }
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&r| assign[r] == j).collect();
            if members.is_empty() {
                continue;
            }
            *c = members.iter().map(|&r| points.row(r).transpose()).fold(DVector::zeros(points.ncols()), |a, b| a + b)
                / members.len() as f64;
        }
        if !changed {
            break;
        }
    }
    assign
}

pub(crate) fn initial_params(reg: &Regression, spec: &ModelSpec, cfg: &EmConfig, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    let n_rows = reg.n_rows();
    let m = spec.n_regimes;
    let resp = if m == 1 {
        DMatrix::from_element(n_rows, 1, 1.0)
    } else {
        match cfg.init_strategy {
            InitStrategy::KmeansOnResiduals => {
                let single = spec.with_shape(1, spec.lags);
                let ones = DMatrix::from_element(n_rows, 1, 1.0);
                let pooled = m_step_from(reg, &ones, &pairwise_from(&ones), &single, None, cfg.ridge)?.params;
                let fitted = &reg.x * pooled.coef_matrix(0).transpose();
                let d = reg.modeled.len();
                let mut e = DMatrix::from_fn(n_rows, d, |r, k| reg.y[(r, reg.modeled[k])] - fitted[(r, reg.modeled[k])]);
                for k in 0..d {
                    let sd = (e.column(k).norm_squared() / n_rows as f64).sqrt();
                    if sd > 0.0 {
                        e.column_mut(k).scale_mut(1.0 / sd);
                    }
                }
                let assign = kmeans(&e, m, rng);
                DMatrix::from_fn(n_rows, m, |r, j| if assign[r] == j { 0.85 + 0.15 / m as f64 } else { 0.15 / m as f64 })
            }
            InitStrategy::RandomResponsibilities => {
                let g = Gamma::new(1.0, 1.0).expect("valid gamma");
                let mut resp = DMatrix::from_fn(n_rows, m, |_, _| g.sample(rng) + 1e-3);
                for mut row in resp.row_iter_mut() {
                    let s = row.sum();
                    row /= s;
                }
                resp
            }
        }
    };
    Ok(m_step_from(reg, &resp, &pairwise_from(&resp), spec, None, cfg.ridge)?.params)
}

struct Run {
    model: Model,
    probs: RegimeProbabilities,
    trace: Vec<f64>,
    converged: bool,
    degenerate: Vec<usize>,
}

fn run_restart(series: &ObservationSeries, reg: &Regression, spec: &ModelSpec, cfg: &EmConfig, restart: usize) -> Result<Run> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut model = Model { spec: spec.clone(), params: initial_params(reg, spec, cfg, &mut rng)? };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut degenerate = Vec::new();
    loop {
        let probs = e_step(series, &model)?;
        let ll = probs.log_likelihood;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= cfg.rel_tol * prev.abs().max(1.0) {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || trace.len() >= cfg.max_iters {
            return Ok(Run { model, probs, trace, converged, degenerate });
        }
        let out = m_step_from(reg, &probs.smoothed, &probs.pairwise, spec, Some(&model.params), cfg.ridge)?;
        degenerate = out.degenerate;
        model = Model { spec: spec.clone(), params: out.params };
    }
}

pub(crate) fn check_data(series: &ObservationSeries, spec: &ModelSpec) -> Result<()> {
    spec.check()?;
    if series.n_channels() != spec.n_channels {
        return Err(Error::Dimension(format!(
            "series has {} channels, spec expects {}",
            series.n_channels(),
            spec.n_channels
        )));
    }
    let needed = spec.lags + spec.n_regimes * spec.min_rows_per_regime();
    if series.len() < needed {
        return Err(Error::InsufficientData { needed, got: series.len() });
    }
    for &c in &spec.modeled_channels() {
        let col = series.data().column(c);
        let tail = col.rows(spec.lags, series.len() - spec.lags);
        if tail.max() - tail.min() == 0.0 {
            return Err(Error::Degenerate(format!("channel `{}` is constant", series.channels()[c])));
        }
    }
    Ok(())
}

/// Fits by EM with `n_restarts` independent starts; the restart with the
/// highest final log-likelihood wins (ties to the lower index). Regimes
/// are relabeled by ascending covariance trace.
pub fn fit_em(series: &ObservationSeries, spec: &ModelSpec, cfg: &EmConfig) -> Result<FitResult> {
    cfg.check()?;
    check_data(series, spec)?;
    let reg = Regression::new(series, spec);
    let restarts = if spec.n_regimes == 1 { 1 } else { cfg.n_restarts };
    let runs: Vec<Result<Run>> = (0..restarts).into_par_iter().map(|r| run_restart(series, &reg, spec, cfg, r)).collect();

    let restart_lls: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().ok().map(|x| x.probs.log_likelihood)).collect();
    let mut best: Option<usize> = None;
    for (i, ll) in restart_lls.iter().enumerate() {
        if let Some(ll) = ll {
            if best.is_none_or(|b| *ll > restart_lls[b].expect("best restart succeeded")) {
                best = Some(i);
            }
        }
    }
    let Some(best) = best else {
        return Err(runs.into_iter().find_map(|r| r.err()).expect("at least one restart"));
    };
    let run = runs.into_iter().nth(best).expect("index in range").expect("successful restart");

    let perm = run.model.variance_order();
    let model = run.model.permute_regimes(&perm);
    let probs = run.probs.permute_regimes(&perm);
    let classification = classify(&probs.smoothed);
    let mut warnings = Vec::new();
    if !run.converged {
        warnings.push(format!("EM did not converge within {} iterations", cfg.max_iters));
    }
    if !run.degenerate.is_empty() {
        warnings.push(format!(
            "{} regime(s) fell back to pooled estimates for lack of data",
            run.degenerate.len()
        ));
    }
    let trace = EmTrace {
        iterations: run.trace.len(),
        log_likelihood: run.trace,
        converged: run.converged,
        best_restart: best,
        restart_log_likelihoods: restart_lls,
    };
    Ok(FitResult {
        method: FitMethod::Em,
        model,
        probabilities: probs,
        classification,
        converged: run.converged,
        em_trace: Some(trace),
        warnings,
    })
}
