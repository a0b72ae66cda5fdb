//! The Markov-switching VAR model family.
//!
//! Regime `m` generates
//!
//! ```text
//! y_t = c_m + A_m^(1) y_{t-1} + ... + A_m^(p) y_{t-p} + u_t,   u_t ~ N(0, Σ_m)
//! ```
//!
//! and the regime follows a first-order Markov chain with row-stochastic
//! transition matrix `P[i][j] = Pr(s_t = j | s_{t-1} = i)`. Matrices printed
//! in the column-stochastic convention (`Pr(s_t = i | s_{t-1} = j)` in entry
//! `(i, j)`) must go through [`transition_from_column_stochastic`].
//!
//! All indices in this API are 0-based: regimes are `0..M` and time `t` is a
//! row index of the series. The first `p` rows only serve as lagged inputs.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::ObservationSeries;
use crate::em::EmTrace;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, sub_matrix, CovFactor};

/// Switching regression of one channel on lagged values of other channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionMode {
    pub target: usize,
    pub regressors: Vec<usize>,
    #[serde(default)]
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_channels: usize,
    pub n_regimes: usize,
    pub lags: usize,
    pub switch_intercept: bool,
    pub switch_coeffs: bool,
    pub switch_cov: bool,
    /// Each equation only uses lags of its own channel.
    #[serde(default)]
    pub diagonal_var: bool,
    #[serde(default)]
    pub regression: Option<RegressionMode>,
}

impl ModelSpec {
    /// Intercepts, coefficients and covariances all switch.
    pub fn new(n_channels: usize, n_regimes: usize, lags: usize) -> Self {
        Self {
            n_channels,
            n_regimes,
            lags,
            switch_intercept: true,
            switch_coeffs: true,
            switch_cov: true,
            diagonal_var: false,
            regression: None,
        }
    }

    /// The car-following switching regression: `v_{t+1}` on `(a_t, dv_t, h_t)`,
    /// no intercept, per-regime variance.
    pub fn car_following_regression(n_regimes: usize) -> Self {
        Self {
            regression: Some(RegressionMode { target: 0, regressors: vec![1, 2, 3], intercept: false }),
            ..Self::new(4, n_regimes, 1)
        }
    }

    pub fn with_shape(&self, n_regimes: usize, lags: usize) -> Self {
        Self { n_regimes, lags, ..self.clone() }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_regimes == 0 {
            return Err(Error::Config("need at least one channel and one regime".into()));
        }
        if self.n_regimes > 1 && !(self.switch_intercept || self.switch_coeffs || self.switch_cov) {
            return Err(Error::Config("a multi-regime model needs at least one switching block".into()));
        }
        if let Some(r) = &self.regression {
            if r.target >= self.n_channels {
                return Err(Error::Config(format!("regression target {} out of range", r.target)));
            }
            if r.regressors.is_empty() {
                return Err(Error::Config("regression mode needs at least one regressor".into()));
            }
            if r.regressors.contains(&r.target) {
                return Err(Error::Config("regression target cannot also be a regressor".into()));
            }
            let mut seen = r.regressors.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != r.regressors.len() || seen.iter().any(|&c| c >= self.n_channels) {
                return Err(Error::Config("regressors must be distinct valid channels".into()));
            }
            if self.lags == 0 {
                return Err(Error::Config("regression mode needs lags >= 1".into()));
            }
            if self.diagonal_var {
                return Err(Error::Config("regression mode and diagonal_var are exclusive".into()));
            }
        }
        Ok(())
    }

    /// Channels whose density enters the likelihood.
    pub fn modeled_channels(&self) -> Vec<usize> {
        match &self.regression {
            Some(r) => vec![r.target],
            None => (0..self.n_channels).collect(),
        }
    }

    pub fn is_modeled(&self, channel: usize) -> bool {
        match &self.regression {
            Some(r) => r.target == channel,
            None => channel < self.n_channels,
        }
    }

    /// Length of the regressor vector `[1, y_{t-1}, ..., y_{t-p}]`.
    pub fn n_regressors(&self) -> usize {
        1 + self.n_channels * self.lags
    }

    /// Whether equation `eq` may load on regressor column `col`.
    pub fn allows(&self, eq: usize, col: usize) -> bool {
        if !self.is_modeled(eq) {
            return false;
        }
        if col == 0 {
            return self.regression.as_ref().is_none_or(|r| r.intercept);
        }
        let c = (col - 1) % self.n_channels;
        match &self.regression {
            Some(r) => r.regressors.contains(&c),
            None => !self.diagonal_var || c == eq,
        }
    }

    /// Whether regressor column `col` is shared by all regimes.
    pub fn is_tied(&self, col: usize) -> bool {
        self.n_regimes > 1 && if col == 0 { !self.switch_intercept } else { !self.switch_coeffs }
    }

    /// Free mean parameters in a fixed order.
    pub(crate) fn mean_layout(&self) -> Vec<MeanParam> {
        let mut out = Vec::new();
        for eq in 0..self.n_channels {
            for col in 0..self.n_regressors() {
                if !self.allows(eq, col) {
                    continue;
                }
                if self.is_tied(col) {
                    out.push(MeanParam { eq, col, regime: None });
                } else {
                    out.extend((0..self.n_regimes).map(|m| MeanParam { eq, col, regime: Some(m) }));
                }
            }
        }
        out
    }

    /// Number of free parameters: mean terms, covariance terms, and `M(M-1)`
    /// transition probabilities. The initial distribution is not counted.
    pub fn parameter_count(&self) -> usize {
        let d = self.modeled_channels().len();
        let cov_blocks = if self.switch_cov { self.n_regimes } else { 1 };
        self.mean_layout().len() + cov_blocks * d * (d + 1) / 2 + self.n_regimes * (self.n_regimes - 1)
    }

    /// Observations needed per regime for a non-singular weighted regression.
    pub fn min_rows_per_regime(&self) -> usize {
        self.n_channels * self.lags + self.n_channels + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct MeanParam {
    pub eq: usize,
    pub col: usize,
    /// `None` when the parameter is shared across regimes.
    pub regime: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `M` vectors of length `N`.
    pub intercepts: Vec<DVector<f64>>,
    /// `coeffs[m][i]` is the `N x N` matrix on lag `i + 1` in regime `m`.
    pub coeffs: Vec<Vec<DMatrix<f64>>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Row-stochastic, `P[i][j] = Pr(s_t = j | s_{t-1} = i)`.
    pub transition: DMatrix<f64>,
    pub initial_dist: DVector<f64>,
}

impl ModelParams {
    /// Zero coefficients, identity covariances, the given transition matrix
    /// and its stationary distribution.
    pub fn baseline(spec: &ModelSpec, transition: DMatrix<f64>) -> Self {
        let (n, m, p) = (spec.n_channels, spec.n_regimes, spec.lags);
        let initial_dist = stationary_distribution(&transition);
        Self {
            intercepts: vec![DVector::zeros(n); m],
            coeffs: vec![vec![DMatrix::zeros(n, n); p]; m],
            covariances: vec![DMatrix::identity(n, n); m],
            transition,
            initial_dist,
        }
    }

    pub fn n_regimes(&self) -> usize {
        self.intercepts.len()
    }

    pub fn n_channels(&self) -> usize {
        self.intercepts.first().map_or(0, |v| v.len())
    }

    pub fn lags(&self) -> usize {
        self.coeffs.first().map_or(0, |c| c.len())
    }

    /// `[c_m | A_m^(1) | ... | A_m^(p)]`, an `N x (1 + N p)` matrix.
    pub fn coef_matrix(&self, m: usize) -> DMatrix<f64> {
        let (n, p) = (self.n_channels(), self.lags());
        let mut b = DMatrix::zeros(n, 1 + n * p);
        b.set_column(0, &self.intercepts[m]);
        for (i, a) in self.coeffs[m].iter().enumerate() {
            b.view_mut((0, 1 + i * n), (n, n)).copy_from(a);
        }
        b
    }

    pub fn set_coef_matrix(&mut self, m: usize, b: &DMatrix<f64>) {
        let n = self.n_channels();
        self.intercepts[m] = b.column(0).into_owned();
        for i in 0..self.lags() {
            self.coeffs[m][i] = b.view((0, 1 + i * n), (n, n)).into_owned();
        }
    }

    /// Relabels regimes so that new regime `k` is old regime `perm[k]`.
    pub fn permute_regimes(&self, perm: &[usize]) -> Self {
        let m = perm.len();
        Self {
            intercepts: perm.iter().map(|&k| self.intercepts[k].clone()).collect(),
            coeffs: perm.iter().map(|&k| self.coeffs[k].clone()).collect(),
            covariances: perm.iter().map(|&k| self.covariances[k].clone()).collect(),
            transition: DMatrix::from_fn(m, m, |i, j| self.transition[(perm[i], perm[j])]),
            initial_dist: DVector::from_fn(m, |i, _| self.initial_dist[perm[i]]),
        }
    }
}

/// A spec together with parameters of matching shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Result<Self> {
        spec.check()?;
        if let Err(v) = validate(&params, &spec) {
            let msg = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ");
            return Err(Error::Config(format!("invalid parameters: {msg}")));
        }
        Ok(Self { spec, params })
    }

    pub fn n_regimes(&self) -> usize {
        self.spec.n_regimes
    }

    pub fn lags(&self) -> usize {
        self.spec.lags
    }

    /// Cholesky factors of the modeled covariance block of each regime.
    pub fn density_factors(&self) -> Result<Vec<CovFactor>> {
        let idx = self.spec.modeled_channels();
        self.params
            .covariances
            .iter()
            .enumerate()
            .map(|(m, s)| CovFactor::new(&sub_matrix(s, &idx), m))
            .collect()
    }

    /// Regime ordering by ascending trace of the modeled covariance; ties
    /// are broken by the first modeled intercept, then by index.
    pub fn variance_order(&self) -> Vec<usize> {
        let idx = self.spec.modeled_channels();
        let key = |m: usize| {
            let tr: f64 = idx.iter().map(|&k| self.params.covariances[m][(k, k)]).sum();
            (tr, self.params.intercepts[m][idx[0]])
        };
        let mut order: Vec<usize> = (0..self.n_regimes()).collect();
        order.sort_by(|&a, &b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        });
        order
    }

    pub fn permute_regimes(&self, perm: &[usize]) -> Self {
        Self { spec: self.spec.clone(), params: self.params.permute_regimes(perm) }
    }

    /// Per-regime dynamics used for simulation and forecasting: intercept,
    /// one matrix per lag (at least one), and noise covariance. Channels
    /// outside the model are carried forward unchanged with no noise.
    pub fn dynamics(&self, m: usize) -> (DVector<f64>, Vec<DMatrix<f64>>, DMatrix<f64>) {
        let n = self.spec.n_channels;
        let p = self.spec.lags.max(1);
        let mut c = self.params.intercepts[m].clone();
        let mut a: Vec<DMatrix<f64>> = (0..p)
            .map(|i| self.params.coeffs[m].get(i).cloned().unwrap_or_else(|| DMatrix::zeros(n, n)))
            .collect();
        let mut noise = self.params.covariances[m].clone();
        for k in (0..n).filter(|&k| !self.spec.is_modeled(k)) {
            c[k] = 0.0;
            for (i, ai) in a.iter_mut().enumerate() {
                ai.row_mut(k).fill(0.0);
                if i == 0 {
                    ai[(k, k)] = 1.0;
                }
            }
            noise.row_mut(k).fill(0.0);
            noise.column_mut(k).fill(0.0);
        }
        (c, a, noise)
    }
}

/// Rows `[1, y_{t-1}', ..., y_{t-p}']` for `t = p..T`.
pub fn design_matrix(data: &DMatrix<f64>, lags: usize) -> DMatrix<f64> {
    let (t_len, n) = data.shape();
    let n_eff = t_len.saturating_sub(lags);
    DMatrix::from_fn(n_eff, 1 + n * lags, |r, j| {
        if j == 0 {
            1.0
        } else {
            let (i, c) = ((j - 1) / n, (j - 1) % n);
            data[(r + lags - 1 - i, c)]
        }
    })
}

/// Log conditional densities `log f(y_t | Y_{t-1}, regime m)` for every
/// `t > p`. Row `r` corresponds to series row `offset + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityTable {
    pub offset: usize,
    pub values: DMatrix<f64>,
}

impl LogDensityTable {
    pub fn compute(series: &ObservationSeries, model: &Model) -> Result<Self> {
        check_series(series, model)?;
        let p = model.lags();
        let x = design_matrix(series.data(), p);
        let idx = model.spec.modeled_channels();
        let factors = model.density_factors()?;
        let n_eff = x.nrows();
        let mut values = DMatrix::zeros(n_eff, model.n_regimes());
        for (m, factor) in factors.iter().enumerate() {
            let means = &x * model.params.coef_matrix(m).transpose();
            let mut resid = DVector::zeros(idx.len());
            for r in 0..n_eff {
                for (k, &c) in idx.iter().enumerate() {
                    resid[k] = series.data()[(r + p, c)] - means[(r, c)];
                }
                let v = factor.log_density(&resid);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("log density at t = {}, regime {}", r + p, m + 1)));
                }
                values[(r, m)] = v;
            }
        }
        Ok(Self { offset: p, values })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }
}

pub(crate) fn check_series(series: &ObservationSeries, model: &Model) -> Result<()> {
    if series.n_channels() != model.spec.n_channels {
        return Err(Error::Dimension(format!(
            "series has {} channels, model expects {}",
            series.n_channels(),
            model.spec.n_channels
        )));
    }
    if series.len() <= model.lags() {
        return Err(Error::InsufficientData { needed: model.lags() + 1, got: series.len() });
    }
    Ok(())
}

/// Log density of row `t` under regime `regime`.
pub fn conditional_log_density(series: &ObservationSeries, model: &Model, t: usize, regime: usize) -> Result<f64> {
    check_series(series, model)?;
    let p = model.lags();
    if t < p || t >= series.len() {
        return Err(Error::Index { t, lags: p });
    }
    if regime >= model.n_regimes() {
        return Err(Error::Config(format!("regime {regime} out of range")));
    }
    let idx = model.spec.modeled_channels();
    let cov = sub_matrix(&model.params.covariances[regime], &idx);
    let factor = CovFactor::new(&cov, regime)?;
    let mean = regime_mean(model, series.data(), t, regime);
    let resid = DVector::from_fn(idx.len(), |k, _| series.data()[(t, idx[k])] - mean[idx[k]]);
    Ok(factor.log_density(&resid))
}

/// `c_m + Σ_i A_m^(i) y_{t-i}` for row `t >= p`.
pub fn regime_mean(model: &Model, data: &DMatrix<f64>, t: usize, m: usize) -> DVector<f64> {
    let mut mean = model.params.intercepts[m].clone();
    for (i, a) in model.params.coeffs[m].iter().enumerate() {
        let lagged = data.row(t - 1 - i).transpose();
        mean += a * lagged;
    }
    mean
}

/// Observed-data log-likelihood via the Hamilton filter.
pub fn log_likelihood(series: &ObservationSeries, model: &Model) -> Result<f64> {
    crate::inference::hamilton_filter(series, model).map(|f| f.log_likelihood)
}

/// One broken invariant of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    NonFinite(String),
    TransitionEntry { row: usize, col: usize, value: f64 },
    TransitionRowSum { row: usize, sum: f64 },
    InitialDist { sum: f64 },
    NotSymmetric { regime: usize },
    NotPositiveDefinite { regime: usize, min_eigenvalue: f64 },
    StructuralZero { regime: usize, lag: usize, row: usize, col: usize },
    InterceptMustBeZero { regime: usize, row: usize },
    SharedBlockDiffers { block: &'static str, regime: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(s) => write!(f, "shape: {s}"),
            Violation::NonFinite(s) => write!(f, "non-finite entry in {s}"),
            Violation::TransitionEntry { row, col, value } => {
                write!(f, "transition[{}][{}] = {value} outside [0, 1]", row + 1, col + 1)
            }
            Violation::TransitionRowSum { row, sum } => write!(f, "transition row {} sums to {sum}", row + 1),
            Violation::InitialDist { sum } => write!(f, "initial distribution sums to {sum} or has negative entries"),
            Violation::NotSymmetric { regime } => write!(f, "covariance of regime {} is not symmetric", regime + 1),
            Violation::NotPositiveDefinite { regime, min_eigenvalue } => write!(
                f,
                "covariance of regime {} has smallest eigenvalue {min_eigenvalue}",
                regime + 1
            ),
            Violation::StructuralZero { regime, lag, row, col } => write!(
                f,
                "regime {} lag {} coefficient ({}, {}) must be zero",
                regime + 1,
                lag + 1,
                row + 1,
                col + 1
            ),
            Violation::InterceptMustBeZero { regime, row } => {
                write!(f, "regime {} intercept of equation {} must be zero", regime + 1, row + 1)
            }
            Violation::SharedBlockDiffers { block, regime } => {
                write!(f, "non-switching {block} differs in regime {}", regime + 1)
            }
        }
    }
}

/// Checks every parameter invariant, collecting all violations.
pub fn validate(params: &ModelParams, spec: &ModelSpec) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let (n, m, p) = (spec.n_channels, spec.n_regimes, spec.lags);
    let shapes_ok = params.intercepts.len() == m
        && params.intercepts.iter().all(|c| c.len() == n)
        && params.coeffs.len() == m
        && params.coeffs.iter().all(|c| c.len() == p && c.iter().all(|a| a.shape() == (n, n)))
        && params.covariances.len() == m
        && params.covariances.iter().all(|s| s.shape() == (n, n))
        && params.transition.shape() == (m, m)
        && params.initial_dist.len() == m;
    if !shapes_ok {
        v.push(Violation::Shape(format!("expected N = {n}, M = {m}, p = {p}")));
        return Err(v);
    }

    if !params.intercepts.iter().flat_map(|c| c.iter()).all(|x| x.is_finite()) {
        v.push(Violation::NonFinite("intercepts".into()));
    }
    if !params.coeffs.iter().flatten().flat_map(|a| a.iter()).all(|x| x.is_finite()) {
        v.push(Violation::NonFinite("coefficients".into()));
    }

    for i in 0..m {
        let mut sum = 0.0;
        for j in 0..m {
            let x = params.transition[(i, j)];
            if !(0.0..=1.0).contains(&x) {
                v.push(Violation::TransitionEntry { row: i, col: j, value: x });
            }
            sum += x;
        }
        if !((sum - 1.0).abs() <= 1e-12) {
            v.push(Violation::TransitionRowSum { row: i, sum });
        }
    }
    let pi_sum: f64 = params.initial_dist.iter().sum();
    if !((pi_sum - 1.0).abs() <= 1e-12) || params.initial_dist.iter().any(|x| !(*x >= 0.0)) {
        v.push(Violation::InitialDist { sum: pi_sum });
    }

    for (r, s) in params.covariances.iter().enumerate() {
        if !s.iter().all(|x| x.is_finite()) {
            v.push(Violation::NonFinite(format!("covariance of regime {}", r + 1)));
            continue;
        }
        let scale = s.amax().max(1.0);
        if (s - s.transpose()).amax() > 1e-12 * scale {
            v.push(Violation::NotSymmetric { regime: r });
        }
        let ev = min_eigenvalue(s);
        if !(ev > 0.0) {
            v.push(Violation::NotPositiveDefinite { regime: r, min_eigenvalue: ev });
        }
    }

    for r in 0..m {
        for (row, x) in params.intercepts[r].iter().enumerate() {
            if *x != 0.0 && !spec.allows(row, 0) {
                v.push(Violation::InterceptMustBeZero { regime: r, row });
            }
        }
        for (lag, a) in params.coeffs[r].iter().enumerate() {
            for row in 0..n {
                for col in 0..n {
                    if a[(row, col)] != 0.0 && !spec.allows(row, 1 + lag * n + col) {
                        v.push(Violation::StructuralZero { regime: r, lag, row, col });
                    }
                }
            }
        }
    }

    if m > 1 {
        for r in 1..m {
            if !spec.switch_intercept && params.intercepts[r] != params.intercepts[0] {
                v.push(Violation::SharedBlockDiffers { block: "intercept", regime: r });
            }
            if !spec.switch_coeffs && params.coeffs[r] != params.coeffs[0] {
                v.push(Violation::SharedBlockDiffers { block: "coefficients", regime: r });
            }
            if !spec.switch_cov && params.covariances[r] != params.covariances[0] {
                v.push(Violation::SharedBlockDiffers { block: "covariance", regime: r });
            }
        }
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Stationary distribution of a row-stochastic matrix; uniform when the
/// chain is reducible.
pub fn stationary_distribution(p: &DMatrix<f64>) -> DVector<f64> {
    let m = p.nrows();
    if m == 0 {
        return DVector::zeros(0);
    }
    let uniform = DVector::from_element(m, 1.0 / m as f64);
    if !is_irreducible(p) {
        return uniform;
    }
    // (P' - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let mut a = p.transpose() - DMatrix::identity(m, m);
    a.row_mut(m - 1).fill(1.0);
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    match a.lu().solve(&b) {
        Some(pi) if pi.iter().all(|x| x.is_finite() && *x >= -1e-12) => {
            let pi = pi.map(|x| x.max(0.0));
            let s = pi.sum();
            pi / s
        }
        _ => uniform,
    }
}

fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let m = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Converts a matrix whose `(i, j)` entry is `Pr(s_t = i | s_{t-1} = j)`
/// into the row-stochastic convention used throughout this crate.
pub fn transition_from_column_stochastic(p: &DMatrix<f64>) -> DMatrix<f64> {
    p.transpose()
}

pub fn transition_to_column_stochastic(p: &DMatrix<f64>) -> DMatrix<f64> {
    p.transpose()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub fit_method: String,
    pub log_likelihood: Option<f64>,
    pub data_fingerprint: Option<String>,
    #[serde(default)]
    pub channels: Vec<String>,
    #[serde(default)]
    pub converged: Option<bool>,
}

/// JSON persistence form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub spec: ModelSpec,
    pub intercepts: Vec<Vec<f64>>,
    /// `[regime][lag][row][col]`.
    pub coeffs: Vec<Vec<Vec<Vec<f64>>>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    /// Row-stochastic.
    pub transition: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
    pub metadata: ModelMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_trace: Option<EmTrace>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Dimension(format!("ragged {what}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ModelDocument {
    pub fn from_model(model: &Model, metadata: ModelMetadata) -> Self {
        let p = &model.params;
        Self {
            spec: model.spec.clone(),
            intercepts: p.intercepts.iter().map(|c| c.iter().copied().collect()).collect(),
            coeffs: p.coeffs.iter().map(|lags| lags.iter().map(rows_of).collect()).collect(),
            covariances: p.covariances.iter().map(rows_of).collect(),
            transition: rows_of(&p.transition),
            initial_dist: p.initial_dist.iter().copied().collect(),
            metadata,
            em_trace: None,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let params = ModelParams {
            intercepts: self.intercepts.iter().map(|c| DVector::from_vec(c.clone())).collect(),
            coeffs: self
                .coeffs
                .iter()
                .map(|lags| lags.iter().map(|a| from_rows(a, "coefficient matrix")).collect())
                .collect::<Result<_>>()?,
            covariances: self.covariances.iter().map(|s| from_rows(s, "covariance")).collect::<Result<_>>()?,
            transition: from_rows(&self.transition, "transition")?,
            initial_dist: DVector::from_vec(self.initial_dist.clone()),
        };
        Model::new(self.spec.clone(), params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
