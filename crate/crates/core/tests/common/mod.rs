#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regime_switch::dataio::ObservationSeries;
use regime_switch::model::{design_matrix, Model, ModelParams, ModelSpec};

/// Gaussian log density from an explicit inverse and determinant.
pub fn dense_log_pdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = y.len() as f64;
    let inv = cov.clone().try_inverse().expect("invertible covariance");
    let det = cov.determinant();
    let r = y - mean;
    let quad = (r.transpose() * inv * &r)[(0, 0)];
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// Log density of series row `t` under regime `m`, modeled channels only.
pub fn oracle_row_density(series: &ObservationSeries, model: &Model, t: usize, m: usize) -> f64 {
    let idx = model.spec.modeled_channels();
    let y = series.row(t);
    let mut mean = model.params.intercepts[m].clone();
    for (i, a) in model.params.coeffs[m].iter().enumerate() {
        mean += a * series.row(t - 1 - i);
    }
    let ys = DVector::from_fn(idx.len(), |k, _| y[idx[k]]);
    let ms = DVector::from_fn(idx.len(), |k, _| mean[idx[k]]);
    let cov = DMatrix::from_fn(idx.len(), idx.len(), |a, b| model.params.covariances[m][(idx[a], idx[b])]);
    dense_log_pdf(&ys, &ms, &cov)
}

/// Log-likelihood and smoothed marginals by summing over every regime path
/// of rows `p..T`.
pub fn enumerate_paths(series: &ObservationSeries, model: &Model) -> (f64, DMatrix<f64>) {
    let p = model.lags();
    let m = model.n_regimes();
    let n = series.len() - p;
    let dens = DMatrix::from_fn(n, m, |r, j| oracle_row_density(series, model, r + p, j));
    let total_paths = m.pow(n as u32);
    let mut log_w = Vec::with_capacity(total_paths);
    let mut paths = Vec::with_capacity(total_paths);
    for code in 0..total_paths {
        let mut path = vec![0; n];
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % m;
            c /= m;
        }
        let mut lw = model.params.initial_dist[path[0]].ln() + dens[(0, path[0])];
        for r in 1..n {
            lw += model.params.transition[(path[r - 1], path[r])].ln() + dens[(r, path[r])];
        }
        log_w.push(lw);
        paths.push(path);
    }
    let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|l| (l - peak).exp()).sum();
    let ll = peak + total.ln();
    let mut smoothed = DMatrix::zeros(n, m);
    for (path, lw) in paths.iter().zip(&log_w) {
        let w = (lw - ll).exp();
        for (r, &s) in path.iter().enumerate() {
            smoothed[(r, s)] += w;
        }
    }
    (ll, smoothed)
}

/// Probability of every regime path (in enumeration order) given the data.
pub fn path_posterior(series: &ObservationSeries, model: &Model) -> Vec<(Vec<usize>, f64)> {
    let p = model.lags();
    let m = model.n_regimes();
    let n = series.len() - p;
    let dens = DMatrix::from_fn(n, m, |r, j| oracle_row_density(series, model, r + p, j));
    let mut out = Vec::new();
    for code in 0..m.pow(n as u32) {
        let mut path = vec![0; n];
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % m;
            c /= m;
        }
        let mut lw = model.params.initial_dist[path[0]].ln() + dens[(0, path[0])];
        for r in 1..n {
            lw += model.params.transition[(path[r - 1], path[r])].ln() + dens[(r, path[r])];
        }
        out.push((path, lw));
    }
    let peak = out.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = out.iter().map(|x| (x.1 - peak).exp()).sum();
    out.into_iter().map(|(p, lw)| (p, (lw - peak).exp() / total)).collect()
}

/// Ordinary least squares of rows `p..T` on `[1, y_{t-1}, ..., y_{t-p}]`
/// via the explicit normal-equation inverse; returns `N x (1 + Np)`.
pub fn ols(series: &ObservationSeries, p: usize) -> DMatrix<f64> {
    let x = design_matrix(series.data(), p);
    let y = series.data().rows(p, series.len() - p).into_owned();
    ((x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y).transpose()
}

fn random_stochastic(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let mut p = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.05..1.0));
    for mut row in p.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    p
}

/// A random stable full MS-VAR.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> Model {
    let spec = ModelSpec::new(n, m, p);
    let mut params = ModelParams::baseline(&spec, random_stochastic(rng, m));
    let scale = 0.8 / (n * p.max(1)) as f64;
    for j in 0..m {
        params.intercepts[j] = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        for a in params.coeffs[j].iter_mut() {
            *a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale));
        }
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.6..0.6));
        params.covariances[j] = &b * b.transpose() + DMatrix::identity(n, n) * rng.random_range(0.1..0.6);
    }
    let pi = DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0));
    params.initial_dist = &pi / pi.sum();
    Model::new(spec, params).unwrap()
}

pub fn random_series(rng: &mut ChaCha8Rng, t_len: usize, n: usize) -> ObservationSeries {
    ObservationSeries::from_matrix(DMatrix::from_fn(t_len, n, |_, _| rng.random_range(-2.0..2.0)), 1.0).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two well-separated regimes for `p = 1`, `N = 2`: a calm regime with a
/// positive intercept and a noisier one with a negative intercept.
pub fn recovery_model() -> Model {
    let spec = ModelSpec::new(2, 2, 1);
    let p = DMatrix::from_row_slice(2, 2, &[0.95, 0.05, 0.10, 0.90]);
    let mut params = ModelParams::baseline(&spec, p);
    params.intercepts[0] = DVector::from_row_slice(&[1.0, 0.5]);
    params.intercepts[1] = DVector::from_row_slice(&[-1.0, -0.5]);
    params.coeffs[0][0] = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
    params.coeffs[1][0] = DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.1, 0.4]);
    params.covariances[0] = DMatrix::from_row_slice(2, 2, &[0.10, 0.02, 0.02, 0.10]);
    params.covariances[1] = DMatrix::from_row_slice(2, 2, &[0.40, -0.10, -0.10, 0.40]);
    Model::new(spec, params).unwrap()
}

/// Best-permutation accuracy for two regimes.
pub fn accuracy_two(truth: &[usize], estimate: &[usize]) -> f64 {
    assert_eq!(truth.len(), estimate.len());
    let same = truth.iter().zip(estimate).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
    same.max(1.0 - same)
}
