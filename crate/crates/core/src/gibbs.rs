//! Bayesian estimation by Gibbs sampling.
//!
//! Each sweep draws the regime path by forward filtering and backward
//! sampling, then the parameters from their conjugate full conditionals:
//! mean parameters from a Gaussian, regime precisions from a Wishart (a
//! gamma for a single modeled channel), transition rows and the initial
//! distribution from Dirichlets. Draws are relabeled by ascending
//! covariance trace before they are summarized.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::ObservationSeries;
use crate::em::{
    check_data, initial_params, mean_blocks, residual_scatter, scatter_means, weighted_stats, EmConfig, FitMethod,
    FitResult, Regression,
};
use crate::error::{Error, Result};
use crate::export::{csv_text, fmt_g17};
use crate::inference::{hamilton_filter, infer};
use crate::linalg::{sub_matrix, symmetrize, CovFactor};
use crate::model::{Model, ModelParams, ModelSpec};
use crate::simulate::sample_index;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Gaussian prior on every free intercept and lag coefficient.
    pub coeff_mean: f64,
    pub coeff_sd: f64,
    /// Gamma prior on precisions; generalized to a Wishart with
    /// `2 * shape + d - 1` degrees of freedom and scale `I / (2 * rate)`.
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Symmetric Dirichlet concentration for transition rows and the
    /// initial distribution.
    pub dirichlet: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self { coeff_mean: 0.0, coeff_sd: 10.0, gamma_shape: 2.0, gamma_rate: 1.0, dirichlet: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    /// Total sweeps per chain, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub priors: Priors,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { n_samples: 5000, burn_in: 1000, thin: 2, seed: 0, n_chains: 1, priors: Priors::default() }
    }
}

impl GibbsConfig {
    pub fn check(&self) -> Result<()> {
        let p = &self.priors;
        if self.burn_in >= self.n_samples || self.thin == 0 || self.n_chains == 0 {
            return Err(Error::Config("Gibbs needs burn_in < n_samples, thin >= 1 and n_chains >= 1".into()));
        }
        if !p.coeff_mean.is_finite() || [p.coeff_sd, p.gamma_shape, p.gamma_rate, p.dirichlet].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Config("prior hyperparameters must be positive and finite".into()));
        }
        Ok(())
    }

    /// Kept draws per chain.
    pub fn kept_per_chain(&self) -> usize {
        (self.n_samples - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub q975: f64,
    pub ess: f64,
    pub rhat: f64,
}

#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    /// Flattened scalar parameter names, matching the columns of `values`.
    pub names: Vec<String>,
    pub draws: Vec<ModelParams>,
    /// One row per kept draw.
    pub values: Vec<Vec<f64>>,
    pub log_likelihoods: Vec<f64>,
    /// Chain index of each kept draw.
    pub chain: Vec<usize>,
    /// Every proposal of a Gibbs sweep is accepted.
    pub acceptance_rate: f64,
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
    /// Per modeled row, how many kept draws visited each regime.
    pub state_counts: DMatrix<f64>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        (0..self.names.len())
            .map(|j| {
                let col = self.column(j);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let mut sorted = col;
                sorted.sort_by(f64::total_cmp);
                ParamSummary {
                    name: self.names[j].clone(),
                    mean,
                    sd: var.sqrt(),
                    q025: quantile(&sorted, 0.025),
                    q05: quantile(&sorted, 0.05),
                    q50: quantile(&sorted, 0.5),
                    q95: quantile(&sorted, 0.95),
                    q975: quantile(&sorted, 0.975),
                    ess: self.ess[j],
                    rhat: self.rhat[j],
                }
            })
            .collect()
    }

    /// One row per kept draw: chain, draw index, log-likelihood, parameters.
    pub fn chain_csv(&self) -> String {
        let mut header = vec!["chain", "draw", "loglik"];
        header.extend(self.names.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = vec![self.chain[i].to_string(), i.to_string(), fmt_g17(self.log_likelihoods[i])];
                r.extend(row.iter().map(|x| fmt_g17(*x)));
                r
            })
            .collect();
        csv_text(&header, &rows)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Effective sample size of one chain by Geyer's initial monotone
/// sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum::<f64>() / n as f64 / c0
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 1;
    }
    (n as f64 / tau.max(1e-12)).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Split potential scale reduction factor over one or more chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h >= 2 {
            halves.push(&c[..h]);
            halves.push(&c[c.len() - h..]);
        }
    }
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / halves.len() as f64;
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let b = n * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0);
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Symmetric-or-not Dirichlet draw via normalized gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        // every gamma variate underflowed; the largest concentration wins
        let k = sample_index(alpha.iter().copied(), rng);
        x.iter_mut().enumerate().for_each(|(i, v)| *v = if i == k { 1.0 } else { 0.0 });
        return x;
    }
    let last = x.len() - 1;
    for v in x.iter_mut() {
        *v /= total;
    }
    x[last] = (1.0 - x[..last].iter().sum::<f64>()).max(0.0);
    x
}

/// Transition counts `n[i][j]` of a regime path.
pub fn transition_counts(path: &[usize], n_regimes: usize) -> DMatrix<f64> {
    let mut n = DMatrix::zeros(n_regimes, n_regimes);
    for w in path.windows(2) {
        n[(w[0], w[1])] += 1.0;
    }
    n
}

/// Draws every row `i` of the transition matrix from
/// `Dir(n_i1 + alpha, ..., n_iM + alpha)`.
pub fn sample_transition_rows<R: Rng + ?Sized>(path: &[usize], n_regimes: usize, alpha: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if path.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: path.len() });
    }
    let counts = transition_counts(path, n_regimes);
    let mut p = DMatrix::zeros(n_regimes, n_regimes);
    for i in 0..n_regimes {
        let a: Vec<f64> = (0..n_regimes).map(|j| counts[(i, j)] + alpha).collect();
        for (j, v) in sample_dirichlet(&a, rng).into_iter().enumerate() {
            p[(i, j)] = v;
        }
    }
    Ok(p)
}

/// Draws a regime path for rows `p..T` from its joint posterior by forward
/// filtering and backward sampling.
pub fn sample_states<R: Rng + ?Sized>(series: &ObservationSeries, model: &Model, rng: &mut R) -> Result<Vec<usize>> {
    let f = hamilton_filter(series, model)?;
    Ok(backward_sample(&f.filtered, &model.params.transition, rng))
}

fn backward_sample<R: Rng + ?Sized>(filtered: &DMatrix<f64>, transition: &DMatrix<f64>, rng: &mut R) -> Vec<usize> {
    let (n, m) = filtered.shape();
    let mut path = vec![0; n];
    path[n - 1] = sample_index(filtered.row(n - 1).iter().copied(), rng);
    for r in (0..n - 1).rev() {
        let next = path[r + 1];
        path[r] = sample_index((0..m).map(|i| filtered[(r, i)] * transition[(i, next)]), rng);
    }
    path
}

fn standard_normal_vec<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// Wishart(`dof`, `scale`) draw by the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(dof: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    let l = CovFactor::new(scale, 0)?.lower();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi2 = Gamma::new((dof - i as f64) / 2.0, 2.0)
            .map_err(|_| Error::Config(format!("Wishart degrees of freedom {dof} too small for dimension {d}")))?
            .sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    Ok(symmetrize(&(&la * la.transpose())))
}

fn prior_wishart(priors: &Priors, d: usize) -> (f64, DMatrix<f64>) {
    (2.0 * priors.gamma_shape + d as f64 - 1.0, DMatrix::identity(d, d) / (2.0 * priors.gamma_rate))
}

fn embed_covariance(n: usize, modeled: &[usize], block: &DMatrix<f64>) -> DMatrix<f64> {
    let mut full = DMatrix::identity(n, n);
    for (i, &ci) in modeled.iter().enumerate() {
        for (j, &cj) in modeled.iter().enumerate() {
            full[(ci, cj)] = block[(i, j)];
        }
    }
    full
}

/// Draws a full parameter set from the prior.
pub fn sample_prior<R: Rng + ?Sized>(spec: &ModelSpec, priors: &Priors, rng: &mut R) -> Result<ModelParams> {
    spec.check()?;
    let (n, m_count) = (spec.n_channels, spec.n_regimes);
    let modeled = spec.modeled_channels();
    let d = modeled.len();
    let layout = spec.mean_layout();
    let mut b = vec![DMatrix::zeros(n, spec.n_regressors()); m_count];
    let shared: Vec<f64> = (0..layout.len()).map(|_| priors.coeff_mean + priors.coeff_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    for (a, p) in layout.iter().enumerate() {
        let ms = match p.regime {
            Some(m) => m..m + 1,
            None => 0..m_count,
        };
        for m in ms {
            b[m][(p.eq, p.col)] = shared[a];
        }
    }
    let (dof, scale) = prior_wishart(priors, d);
    let blocks = if spec.switch_cov { m_count } else { 1 };
    let mut covs = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let w = sample_wishart(dof, &scale, rng)?;
        let sigma = w.try_inverse().ok_or_else(|| Error::NonFinite("singular prior precision draw".into()))?;
        covs.push(embed_covariance(n, &modeled, &symmetrize(&sigma)));
    }
    let mut params = ModelParams::baseline(spec, DMatrix::identity(m_count, m_count));
    for m in 0..m_count {
        params.set_coef_matrix(m, &b[m]);
        params.covariances[m] = covs[if spec.switch_cov { m } else { 0 }].clone();
    }
    let alpha = vec![priors.dirichlet; m_count];
    for i in 0..m_count {
        for (j, v) in sample_dirichlet(&alpha, rng).into_iter().enumerate() {
            params.transition[(i, j)] = v;
        }
    }
    params.initial_dist = DVector::from_vec(sample_dirichlet(&alpha, rng));
    Ok(params)
}

/// Draws all parameters given a regime path over rows `p..T`. The mean
/// parameters are drawn conditional on `prev`'s covariances, then the
/// covariances conditional on the new means.
pub fn draw_parameters<R: Rng + ?Sized>(
    series: &ObservationSeries,
    spec: &ModelSpec,
    states: &[usize],
    priors: &Priors,
    prev: &ModelParams,
    rng: &mut R,
) -> Result<ModelParams> {
    let reg = Regression::new(series, spec);
    if states.len() != reg.n_rows() {
        return Err(Error::Dimension(format!("{} states for {} modeled rows", states.len(), reg.n_rows())));
    }
    draw_given_states(&reg, spec, states, priors, prev, rng)
}

fn draw_given_states<R: Rng + ?Sized>(
    reg: &Regression,
    spec: &ModelSpec,
    states: &[usize],
    priors: &Priors,
    prev: &ModelParams,
    rng: &mut R,
) -> Result<ModelParams> {
    let (n, m_count) = (spec.n_channels, spec.n_regimes);
    let modeled = &reg.modeled;
    let d = modeled.len();
    let stats: Vec<_> = (0..m_count)
        .map(|m| weighted_stats(reg, DVector::from_fn(reg.n_rows(), |r, _| if states[r] == m { 1.0 } else { 0.0 })))
        .collect();
    let prec: Vec<DMatrix<f64>> = prev
        .covariances
        .iter()
        .enumerate()
        .map(|(m, s)| CovFactor::new(&sub_matrix(s, modeled), m).map(|f| f.inverse()))
        .collect::<Result<_>>()?;

    let layout = spec.mean_layout();
    let mut b = vec![DMatrix::zeros(n, spec.n_regressors()); m_count];
    let prior_prec = 1.0 / (priors.coeff_sd * priors.coeff_sd);
    for mut block in mean_blocks(spec, &layout, &stats, &prec, modeled) {
        let k = block.params.len();
        for i in 0..k {
            block.h[(i, i)] += prior_prec;
            block.g[i] += prior_prec * priors.coeff_mean;
        }
        let chol = block.h.clone().cholesky().ok_or(Error::NotPositiveDefinite { regime: 0 })?;
        let mean = chol.solve(&block.g);
        let z = standard_normal_vec(k, rng);
        let lt = chol.l().transpose();
        let noise = lt.solve_upper_triangular(&z).ok_or_else(|| Error::NonFinite("coefficient draw".into()))?;
        scatter_means(spec, &layout, &block, &(mean + noise), &mut b);
    }

    let (dof0, scale0) = prior_wishart(priors, d);
    let scale0_inv = scale0.try_inverse().expect("diagonal prior scale");
    let scatter: Vec<DMatrix<f64>> = (0..m_count).map(|m| residual_scatter(reg, &b[m], &stats[m].w)).collect();
    let groups: Vec<Vec<usize>> = if spec.switch_cov || m_count == 1 {
        (0..m_count).map(|m| vec![m]).collect()
    } else {
        vec![(0..m_count).collect()]
    };
    let mut covs = vec![DMatrix::zeros(n, n); m_count];
    for g in groups {
        let mut inv_scale = scale0_inv.clone();
        let mut dof = dof0;
        for &m in &g {
            inv_scale += &scatter[m];
            dof += stats[m].weight;
        }
        let scale = symmetrize(&inv_scale.try_inverse().ok_or(Error::NotPositiveDefinite { regime: g[0] })?);
        let w = sample_wishart(dof, &scale, rng)?;
        let sigma = symmetrize(&w.try_inverse().ok_or(Error::NotPositiveDefinite { regime: g[0] })?);
        for &m in &g {
            covs[m] = embed_covariance(n, modeled, &sigma);
        }
    }

    let mut params = ModelParams::baseline(spec, DMatrix::identity(m_count, m_count));
    for m in 0..m_count {
        params.set_coef_matrix(m, &b[m]);
    }
    params.covariances = covs;
    params.transition = if states.len() >= 2 {
        sample_transition_rows(states, m_count, priors.dirichlet, rng)?
    } else {
        let alpha = vec![priors.dirichlet; m_count];
        let mut p = DMatrix::zeros(m_count, m_count);
        for i in 0..m_count {
            for (j, v) in sample_dirichlet(&alpha, rng).into_iter().enumerate() {
                p[(i, j)] = v;
            }
        }
        p
    };
    let mut alpha = vec![priors.dirichlet; m_count];
    alpha[states[0]] += 1.0;
    params.initial_dist = DVector::from_vec(sample_dirichlet(&alpha, rng));
    Ok(params)
}

/// Scalar parameter names in the order used by [`flatten_params`].
pub fn parameter_names(spec: &ModelSpec, channels: &[String]) -> Vec<String> {
    let n = spec.n_channels;
    let mut names = Vec::new();
    for m in 0..spec.n_regimes {
        let r = m + 1;
        for eq in 0..n {
            for col in 0..spec.n_regressors() {
                if !spec.allows(eq, col) {
                    continue;
                }
                if col == 0 {
                    names.push(format!("c_r{r}_{}", channels[eq]));
                } else {
                    let (lag, c) = ((col - 1) / n + 1, (col - 1) % n);
                    names.push(format!("A{lag}_r{r}_{}_{}", channels[eq], channels[c]));
                }
            }
        }
        let modeled = spec.modeled_channels();
        for (i, &a) in modeled.iter().enumerate() {
            for &b in &modeled[i..] {
                names.push(format!("Sigma_r{r}_{}_{}", channels[a], channels[b]));
            }
        }
    }
    for i in 0..spec.n_regimes {
        for j in 0..spec.n_regimes {
            names.push(format!("P_{}_{}", i + 1, j + 1));
        }
    }
    names
}

/// Free scalar parameters (structural zeros skipped) in a fixed order.
pub fn flatten_params(spec: &ModelSpec, params: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    for m in 0..spec.n_regimes {
        let b = params.coef_matrix(m);
        for eq in 0..spec.n_channels {
            for col in 0..spec.n_regressors() {
                if spec.allows(eq, col) {
                    out.push(b[(eq, col)]);
                }
            }
        }
        let modeled = spec.modeled_channels();
        for (i, &a) in modeled.iter().enumerate() {
            for &c in &modeled[i..] {
                out.push(params.covariances[m][(a, c)]);
            }
        }
    }
    out.extend(params.transition.transpose().iter().copied());
    out
}

struct Chain {
    draws: Vec<ModelParams>,
    lls: Vec<f64>,
    state_counts: DMatrix<f64>,
}

fn run_chain(series: &ObservationSeries, reg: &Regression, spec: &ModelSpec, cfg: &GibbsConfig, chain: usize) -> Result<Chain> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let init_cfg = EmConfig { seed: cfg.seed, ..EmConfig::default() };
    let mut params = initial_params(reg, spec, &init_cfg, &mut rng)?;
    let mut draws = Vec::with_capacity(cfg.kept_per_chain());
    let mut lls = Vec::with_capacity(cfg.kept_per_chain());
    let mut state_counts = DMatrix::zeros(reg.n_rows(), spec.n_regimes);
    for it in 0..cfg.n_samples {
        let model = Model { spec: spec.clone(), params };
        let states = sample_states(series, &model, &mut rng)?;
        params = draw_given_states(reg, spec, &states, &cfg.priors, &model.params, &mut rng)?;
        if flatten_params(spec, &params).iter().chain(params.initial_dist.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("Gibbs draw at iteration {it}")));
        }
        if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
            let drawn = Model { spec: spec.clone(), params: params.clone() };
            let perm = drawn.variance_order();
            let mut inverse = vec![0; perm.len()];
            for (new, &old) in perm.iter().enumerate() {
                inverse[old] = new;
            }
            for (r, &s) in states.iter().enumerate() {
                state_counts[(r, inverse[s])] += 1.0;
            }
            let relabeled = drawn.permute_regimes(&perm);
            lls.push(hamilton_filter(series, &relabeled)?.log_likelihood);
            draws.push(relabeled.params);
        }
    }
    Ok(Chain { draws, lls, state_counts })
}

fn posterior_mean(draws: &[ModelParams]) -> ModelParams {
    let k = draws.len() as f64;
    let mut mean = draws[0].clone();
    for d in &draws[1..] {
        for m in 0..mean.n_regimes() {
            mean.intercepts[m] += &d.intercepts[m];
            for (a, b) in mean.coeffs[m].iter_mut().zip(&d.coeffs[m]) {
                *a += b;
            }
            mean.covariances[m] += &d.covariances[m];
        }
        mean.transition += &d.transition;
        mean.initial_dist += &d.initial_dist;
    }
    for m in 0..mean.n_regimes() {
        mean.intercepts[m] /= k;
        for a in mean.coeffs[m].iter_mut() {
            *a /= k;
        }
        mean.covariances[m] = symmetrize(&(&mean.covariances[m] / k));
    }
    mean.transition /= k;
    for mut row in mean.transition.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    mean.initial_dist /= k;
    let s = mean.initial_dist.sum();
    mean.initial_dist /= s;
    mean
}

/// Runs `n_chains` chains and summarizes them. The point estimate is the
/// posterior mean; the classification is the per-row posterior mode.
pub fn fit_gibbs(series: &ObservationSeries, spec: &ModelSpec, cfg: &GibbsConfig) -> Result<(PosteriorSamples, FitResult)> {
    cfg.check()?;
    check_data(series, spec)?;
    let reg = Regression::new(series, spec);
    let chains: Vec<Chain> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(series, &reg, spec, cfg, c))
        .collect::<Result<_>>()?;
    if chains[0].draws.is_empty() {
        return Err(Error::Config("no draws kept; increase n_samples or reduce thin".into()));
    }

    let names = parameter_names(spec, series.channels());
    let mut draws = Vec::new();
    let mut lls = Vec::new();
    let mut chain_idx = Vec::new();
    let mut state_counts = DMatrix::zeros(reg.n_rows(), spec.n_regimes);
    for (c, ch) in chains.into_iter().enumerate() {
        chain_idx.extend(std::iter::repeat_n(c, ch.draws.len()));
        draws.extend(ch.draws);
        lls.extend(ch.lls);
        state_counts += ch.state_counts;
    }
    let values: Vec<Vec<f64>> = draws.iter().map(|p| flatten_params(spec, p)).collect();
    let mut ess = Vec::with_capacity(names.len());
    let mut rhat = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        let per_chain: Vec<Vec<f64>> = (0..cfg.n_chains)
            .map(|c| values.iter().zip(&chain_idx).filter(|(_, &k)| k == c).map(|(r, _)| r[j]).collect())
            .collect();
        ess.push(per_chain.iter().map(|x| effective_sample_size(x)).sum());
        rhat.push(split_rhat(&per_chain));
    }

    let model = Model { spec: spec.clone(), params: posterior_mean(&draws) };
    let probabilities = infer(series, &model)?;
    let classification: Vec<usize> = state_counts
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let max_rhat = rhat.iter().copied().filter(|r| r.is_finite()).fold(1.0, f64::max);
    let converged = max_rhat < 1.1;
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("largest split R-hat is {max_rhat:.3}; chains may not have mixed"));
    }
    let samples = PosteriorSamples {
        names,
        draws,
        values,
        log_likelihoods: lls,
        chain: chain_idx,
        acceptance_rate: 1.0,
        ess,
        rhat,
        state_counts,
    };
    let fit = FitResult { method: FitMethod::Gibbs, model, probabilities, classification, converged, em_trace: None, warnings };
    Ok((samples, fit))
}
