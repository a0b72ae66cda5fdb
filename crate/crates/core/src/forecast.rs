//! Multi-step prediction as a mixture of regime-conditional Gaussians, and
//! mean-squared-error evaluation on held-out rows.
//!
//! Regime weights follow `w_h = P' w_{h-1}` from the last filtered
//! probabilities. By default the per-regime means feed the point forecast
//! back as lagged input and covariances are propagated to first order
//! (`Σ_j + Σ_i A_j^(i) V_{h-i} A_j^(i)'`). With `exact_paths` every regime
//! path is enumerated and collapsed per final regime instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataio::{ObservationSeries, CAR_FOLLOWING_CHANNELS};
use crate::em::{fit_em, EmConfig};
use crate::error::{Error, Result};
use crate::export::{csv_text, fmt_g17};
use crate::inference::hamilton_filter;
use crate::linalg::symmetrize;
use crate::model::{Model, ModelSpec};

/// Longest horizon for which regime paths are enumerated.
pub const MAX_EXACT_HORIZON: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastOptions {
    pub exact_paths: bool,
    /// Central interval coverage; `None` skips intervals.
    pub coverage: Option<f64>,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self { exact_paths: false, coverage: Some(0.95) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonForecast {
    pub h: usize,
    /// `Pr(s_{T+h} = j | Y_T)`.
    pub weights: DVector<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub point: DVector<f64>,
    pub lower: Option<DVector<f64>>,
    pub upper: Option<DVector<f64>>,
}

impl HorizonForecast {
    /// Covariance of the full mixture.
    pub fn mixture_covariance(&self) -> DMatrix<f64> {
        let n = self.point.len();
        let mut v = DMatrix::zeros(n, n);
        for (j, w) in self.weights.iter().enumerate() {
            let d = &self.means[j] - &self.point;
            v += (&self.covariances[j] + &d * d.transpose()) * *w;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub channels: Vec<String>,
    /// Row index of the forecast origin `T` in the conditioning series.
    pub origin: usize,
    pub exact: bool,
    pub coverage: Option<f64>,
    pub steps: Vec<HorizonForecast>,
}

impl Forecast {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `h x N` matrix of point forecasts.
    pub fn points(&self) -> DMatrix<f64> {
        let n = self.channels.len();
        DMatrix::from_fn(self.horizon(), n, |h, k| self.steps[h].point[k])
    }

    /// `h,channel,point,lo,hi`; interval cells are empty when not computed.
    pub fn to_csv(&self) -> String {
        let mut rows = Vec::new();
        for s in &self.steps {
            for (k, ch) in self.channels.iter().enumerate() {
                let cell = |v: &Option<DVector<f64>>| v.as_ref().map(|x| fmt_g17(x[k])).unwrap_or_default();
                rows.push(vec![s.h.to_string(), ch.clone(), fmt_g17(s.point[k]), cell(&s.lower), cell(&s.upper)]);
            }
        }
        csv_text(&["h", "channel", "point", "lo", "hi"], &rows)
    }

    /// Full mixture description per horizon.
    pub fn to_json(&self) -> Result<String> {
        let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
        let mat = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>();
        let steps: Vec<serde_json::Value> = self
            .steps
            .iter()
            .map(|s| {
                serde_json::json!({
                    "h": s.h,
                    "weights": vec(&s.weights),
                    "means": s.means.iter().map(vec).collect::<Vec<_>>(),
                    "covariances": s.covariances.iter().map(mat).collect::<Vec<_>>(),
                    "point": vec(&s.point),
                    "lower": s.lower.as_ref().map(vec),
                    "upper": s.upper.as_ref().map(vec),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "channels": self.channels,
            "origin": self.origin,
            "exact": self.exact,
            "coverage": self.coverage,
            "steps": steps,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Tidy observed-versus-predicted rows, one per horizon and channel.
    pub fn plot_data_csv(&self, actual: Option<&ObservationSeries>, sample_interval: f64) -> String {
        let mut rows = Vec::new();
        for s in &self.steps {
            for (k, ch) in self.channels.iter().enumerate() {
                let observed = actual
                    .filter(|a| s.h <= a.len())
                    .map(|a| fmt_g17(a.data()[(s.h - 1, k)]))
                    .unwrap_or_default();
                let cell = |v: &Option<DVector<f64>>| v.as_ref().map(|x| fmt_g17(x[k])).unwrap_or_default();
                rows.push(vec![
                    s.h.to_string(),
                    fmt_g17(s.h as f64 * sample_interval),
                    ch.clone(),
                    observed,
                    fmt_g17(s.point[k]),
                    cell(&s.lower),
                    cell(&s.upper),
                ]);
            }
        }
        csv_text(&["h", "lead_time", "channel", "observed", "predicted", "lo", "hi"], &rows)
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Quantile of a univariate Gaussian mixture by bisection.
pub fn mixture_quantile(weights: &[f64], means: &[f64], sds: &[f64], q: f64) -> f64 {
    let cdf = |x: f64| -> f64 {
        weights
            .iter()
            .zip(means.iter().zip(sds))
            .map(|(w, (m, s))| {
                w * if *s > 0.0 {
                    normal_cdf((x - m) / s)
                } else if x >= *m {
                    1.0
                } else {
                    0.0
                }
            })
            .sum()
    };
    let spread = sds.iter().copied().fold(0.0, f64::max);
    if spread == 0.0 {
        let mut atoms: Vec<(f64, f64)> = means.iter().copied().zip(weights.iter().copied()).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        for (m, w) in &atoms {
            acc += w;
            if acc >= q {
                return *m;
            }
        }
        return atoms.last().map_or(f64::NAN, |a| a.0);
    }
    let mut lo = means.iter().copied().fold(f64::INFINITY, f64::min) - 40.0 * spread - 1.0;
    let mut hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 40.0 * spread + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * mid.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn intervals(step: &mut HorizonForecast, coverage: f64) {
    let n = step.point.len();
    let w: Vec<f64> = step.weights.iter().copied().collect();
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for k in 0..n {
        let means: Vec<f64> = step.means.iter().map(|m| m[k]).collect();
        let sds: Vec<f64> = step.covariances.iter().map(|c| c[(k, k)].max(0.0).sqrt()).collect();
        lower[k] = mixture_quantile(&w, &means, &sds, 0.5 * (1.0 - coverage));
        upper[k] = mixture_quantile(&w, &means, &sds, 0.5 * (1.0 + coverage));
    }
    step.lower = Some(lower);
    step.upper = Some(upper);
}

pub fn forecast(series: &ObservationSeries, model: &Model, horizon: usize) -> Result<Forecast> {
    forecast_with(series, model, horizon, &ForecastOptions::default())
}

pub fn forecast_with(series: &ObservationSeries, model: &Model, horizon: usize, opts: &ForecastOptions) -> Result<Forecast> {
    if horizon == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    if let Some(c) = opts.coverage {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Config(format!("interval coverage {c} must lie in (0, 1)")));
        }
    }
    if opts.exact_paths && horizon > MAX_EXACT_HORIZON {
        return Err(Error::Config(format!("exact path enumeration supports horizons up to {MAX_EXACT_HORIZON}")));
    }
    let filter = hamilton_filter(series, model)?;
    let xi = filter.filtered.row(filter.filtered.nrows() - 1).transpose();
    let mut steps = if opts.exact_paths {
        exact_steps(series, model, &xi, horizon)
    } else {
        plug_in_steps(series, model, &xi, horizon)
    };
    for s in steps.iter_mut() {
        if s.point.iter().chain(s.covariances.iter().flat_map(|c| c.iter())).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("forecast at horizon {}", s.h)));
        }
        if let Some(c) = opts.coverage {
            intervals(s, c);
        }
    }
    Ok(Forecast {
        channels: series.channels().to_vec(),
        origin: series.len() - 1,
        exact: opts.exact_paths,
        coverage: opts.coverage,
        steps,
    })
}

/// Companion form of each regime: transition `F`, drift `d` and noise `Q`
/// on the stacked state `(y_t, ..., y_{t-q+1})`.
fn companions(model: &Model, n: usize) -> Vec<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let q = model.lags().max(1);
    let dim = n * q;
    (0..model.n_regimes())
        .map(|m| {
            let (c, a, noise) = model.dynamics(m);
            let mut f = DMatrix::zeros(dim, dim);
            for (i, ai) in a.iter().enumerate() {
                f.view_mut((0, i * n), (n, n)).copy_from(ai);
            }
            for k in n..dim {
                f[(k, k - n)] = 1.0;
            }
            let mut d = DVector::zeros(dim);
            d.rows_mut(0, n).copy_from(&c);
            let mut qm = DMatrix::zeros(dim, dim);
            qm.view_mut((0, 0), (n, n)).copy_from(&noise);
            (f, d, qm)
        })
        .collect()
}

fn stacked_origin(series: &ObservationSeries, q: usize) -> DVector<f64> {
    let n = series.n_channels();
    let t_len = series.len();
    let mut z = DVector::zeros(n * q);
    for i in 0..q.min(t_len) {
        z.rows_mut(i * n, n).copy_from(&series.row(t_len - 1 - i));
    }
    z
}

/// Plug-in mean path: each step collapses the regime mixture to its mean
/// and covariance on the stacked state, which is exact for one regime.
fn plug_in_steps(series: &ObservationSeries, model: &Model, xi: &DVector<f64>, horizon: usize) -> Vec<HorizonForecast> {
    let n = series.n_channels();
    let comps = companions(model, n);
    let dim = comps[0].0.nrows();
    let mut z = stacked_origin(series, dim / n);
    let mut v = DMatrix::zeros(dim, dim);
    let mut w = xi.clone();
    let mut out = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        w = model.params.transition.tr_mul(&w);
        let states: Vec<(DVector<f64>, DMatrix<f64>)> =
            comps.iter().map(|(f, d, qm)| (f * &z + d, f * &v * f.transpose() + qm)).collect();
        let mut z_bar = DVector::zeros(dim);
        for (j, (zj, _)) in states.iter().enumerate() {
            z_bar += zj * w[j];
        }
        let mut v_bar = DMatrix::zeros(dim, dim);
        for (j, (zj, vj)) in states.iter().enumerate() {
            let d = zj - &z_bar;
            v_bar += (vj + &d * d.transpose()) * w[j];
        }
        let means = states.iter().map(|(zj, _)| zj.rows(0, n).into_owned()).collect();
        let covs = states.iter().map(|(_, vj)| vj.view((0, 0), (n, n)).into_owned()).collect();
        out.push(HorizonForecast {
            h,
            weights: w.clone(),
            means,
            covariances: covs,
            point: z_bar.rows(0, n).into_owned(),
            lower: None,
            upper: None,
        });
        z = z_bar;
        v = symmetrize(&v_bar);
    }
    out
}

struct Branch {
    prob: f64,
    last: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn exact_steps(series: &ObservationSeries, model: &Model, xi: &DVector<f64>, horizon: usize) -> Vec<HorizonForecast> {
    let n = series.n_channels();
    let m_count = model.n_regimes();
    let dyns: Vec<_> = (0..m_count).map(|m| model.dynamics(m)).collect();
    let companions = companions(model, n);
    let dim = companions[0].0.nrows();
    let z0 = stacked_origin(series, dim / n);

    let mut branches: Vec<Branch> = (0..m_count)
        .filter(|&i| xi[i] > 0.0)
        .map(|i| Branch { prob: xi[i], last: i, mean: z0.clone(), cov: DMatrix::zeros(dim, dim) })
        .collect();
    let mut out = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        let mut next = Vec::with_capacity(branches.len() * m_count);
        for b in &branches {
            for (k, (f, d, qm)) in companions.iter().enumerate() {
                let pr = b.prob * model.params.transition[(b.last, k)];
                if pr <= 0.0 {
                    continue;
                }
                next.push(Branch { prob: pr, last: k, mean: f * &b.mean + d, cov: f * &b.cov * f.transpose() + qm });
            }
        }
        branches = next;

        let mut weights = DVector::zeros(m_count);
        let mut means = vec![DVector::zeros(n); m_count];
        let mut covs = vec![DMatrix::zeros(n, n); m_count];
        for b in &branches {
            weights[b.last] += b.prob;
            means[b.last] += b.mean.rows(0, n) * b.prob;
        }
        for j in 0..m_count {
            if weights[j] > 0.0 {
                means[j] /= weights[j];
            } else {
                means[j] = dyns[j].0.clone();
            }
        }
        for b in &branches {
            let d = b.mean.rows(0, n) - &means[b.last];
            covs[b.last] += (b.cov.view((0, 0), (n, n)) + &d * d.transpose()) * b.prob;
        }
        for j in 0..m_count {
            if weights[j] > 0.0 {
                covs[j] /= weights[j];
            } else {
                covs[j] = dyns[j].2.clone();
            }
        }
        let mut point = DVector::zeros(n);
        for j in 0..m_count {
            point += &means[j] * weights[j];
        }
        out.push(HorizonForecast { h, weights, means, covariances: covs, point, lower: None, upper: None });
    }
    out
}

/// Channel order of the MSE report: `a, dv, h, v` for car-following
/// series, otherwise the series order.
pub fn report_channel_order(channels: &[String]) -> Vec<usize> {
    let is_cf = channels.len() == 4 && CAR_FOLLOWING_CHANNELS.iter().all(|c| channels.iter().any(|x| x == c));
    if is_cf {
        ["a", "dv", "h", "v"].iter().map(|c| channels.iter().position(|x| x == c).expect("car-following channel")).collect()
    } else {
        (0..channels.len()).collect()
    }
}

/// Per-channel mean squared error of point forecasts averaged over the
/// horizon, in report channel order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMse {
    pub channels: Vec<String>,
    pub mse: Vec<f64>,
}

impl ChannelMse {
    pub fn total(&self) -> f64 {
        self.mse.iter().sum()
    }
}

pub fn evaluate_mse(forecast: &Forecast, actual_tail: &ObservationSeries) -> Result<ChannelMse> {
    if actual_tail.channels() != forecast.channels.as_slice() {
        return Err(Error::Dimension(format!(
            "held-out channels {:?} differ from forecast channels {:?}",
            actual_tail.channels(),
            forecast.channels
        )));
    }
    evaluate_mse_matrix(forecast, actual_tail.data())
}

/// As [`evaluate_mse`] for a bare `horizon x N` matrix in forecast channel order.
pub fn evaluate_mse_matrix(forecast: &Forecast, actual: &DMatrix<f64>) -> Result<ChannelMse> {
    let n = forecast.channels.len();
    if actual.shape() != (forecast.horizon(), n) {
        return Err(Error::Dimension(format!(
            "held-out block is {}x{}, forecast is {}x{}",
            actual.nrows(),
            actual.ncols(),
            forecast.horizon(),
            n
        )));
    }
    let err = forecast.points() - actual;
    let order = report_channel_order(&forecast.channels);
    let mse = order
        .iter()
        .map(|&k| err.column(k).iter().map(|e| e * e).sum::<f64>() / forecast.horizon() as f64)
        .collect();
    Ok(ChannelMse { channels: order.iter().map(|&k| forecast.channels[k].clone()).collect(), mse })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub model: String,
    pub mse: Vec<f64>,
}

/// Per-channel MSE per model on a common hold-out block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseTable {
    pub horizon: usize,
    pub channels: Vec<String>,
    pub rows: Vec<MseRow>,
}

impl MseTable {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["model"];
        header.extend(self.channels.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| std::iter::once(r.model.clone()).chain(r.mse.iter().map(|x| fmt_g17(*x))).collect())
            .collect();
        csv_text(&header, &rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Row indices sorted by total MSE, ties by input order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        let total = |i: usize| self.rows[i].mse.iter().sum::<f64>();
        idx.sort_by(|&a, &b| total(a).total_cmp(&total(b)).then(a.cmp(&b)));
        idx
    }
}

/// Splits off the last `horizon` rows as a `horizon x N` block.
fn holdout_split(series: &ObservationSeries, horizon: usize, max_lags: usize) -> Result<(ObservationSeries, DMatrix<f64>)> {
    let t_len = series.len();
    if horizon == 0 || horizon + max_lags >= t_len {
        return Err(Error::Config(format!(
            "horizon {horizon} leaves no estimation rows (T = {t_len}, p = {max_lags}); need horizon < T - p"
        )));
    }
    let cut = t_len - horizon;
    Ok((series.slice(0, cut)?, series.data().rows(cut, horizon).into_owned()))
}

/// Forecasts the last `horizon` rows from the preceding rows with every
/// model and tabulates per-channel MSE.
pub fn compare_models(series: &ObservationSeries, models: &[(String, Model)], horizon: usize) -> Result<MseTable> {
    if models.len() < 2 {
        return Err(Error::Config("comparison needs at least two models".into()));
    }
    let max_lags = models.iter().map(|(_, m)| m.lags()).max().unwrap_or(0);
    let (prefix, actual) = holdout_split(series, horizon, max_lags)?;
    let opts = ForecastOptions { exact_paths: false, coverage: None };
    let mut rows = Vec::with_capacity(models.len());
    let mut channels = Vec::new();
    for (name, model) in models {
        let f = forecast_with(&prefix, model, horizon, &opts)?;
        let mse = evaluate_mse_matrix(&f, &actual)?;
        channels = mse.channels;
        rows.push(MseRow { model: name.clone(), mse: mse.mse });
    }
    Ok(MseTable { horizon, channels, rows })
}

/// Fits every spec by EM on all but the last `horizon` rows, then compares.
pub fn fit_and_compare(
    series: &ObservationSeries,
    specs: &[(String, ModelSpec)],
    horizon: usize,
    em: &EmConfig,
) -> Result<MseTable> {
    let max_lags = specs.iter().map(|(_, s)| s.lags).max().unwrap_or(0);
    let (prefix, _) = holdout_split(series, horizon, max_lags)?;
    let models = specs
        .iter()
        .map(|(name, spec)| fit_em(&prefix, spec, em).map(|f| (name.clone(), f.model)))
        .collect::<Result<Vec<_>>>()?;
    compare_models(series, &models, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn two_regime() -> (ObservationSeries, Model) {
        let spec = ModelSpec::new(1, 2, 1);
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let mut params = ModelParams::baseline(&spec, p);
        params.intercepts[0][0] = 1.0;
        params.intercepts[1][0] = -1.0;
        params.coeffs[0][0][(0, 0)] = 0.5;
        params.coeffs[1][0][(0, 0)] = -0.2;
        params.covariances[1][(0, 0)] = 2.0;
        let model = Model::new(spec, params).unwrap();
        let s = ObservationSeries::from_matrix(DMatrix::from_column_slice(5, 1, &[0.1, 1.2, 0.3, -0.8, 0.4]), 0.1).unwrap();
        (s, model)
    }

    #[test]
    fn weights_follow_transition_powers() {
        let (s, m) = two_regime();
        let f = forecast(&s, &m, 3).unwrap();
        let filt = hamilton_filter(&s, &m).unwrap();
        let xi = filt.filtered.row(3).transpose();
        let p2 = &m.params.transition * &m.params.transition;
        let w2 = p2.tr_mul(&xi);
        assert!((&f.steps[1].weights - w2).amax() < 1e-14);
        for st in &f.steps {
            assert!((st.weights.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_and_plug_in_agree_at_one_step() {
        let (s, m) = two_regime();
        let a = forecast(&s, &m, 1).unwrap();
        let b = forecast_with(&s, &m, 1, &ForecastOptions { exact_paths: true, coverage: Some(0.9) }).unwrap();
        assert!((&a.steps[0].point - &b.steps[0].point).amax() < 1e-12);
        for j in 0..2 {
            assert!((&a.steps[0].covariances[j] - &b.steps[0].covariances[j]).amax() < 1e-12);
        }
    }

    #[test]
    fn mixture_quantile_of_single_normal() {
        let q = mixture_quantile(&[1.0], &[2.0], &[3.0], 0.975);
        assert!((q - (2.0 + 3.0 * 1.959963984540054)).abs() < 1e-9);
        assert_eq!(mixture_quantile(&[1.0], &[2.0], &[0.0], 0.3), 2.0);
    }

    #[test]
    fn report_order_for_car_following() {
        let ch: Vec<String> = ["v", "a", "dv", "h"].iter().map(|s| s.to_string()).collect();
        assert_eq!(report_channel_order(&ch), vec![1, 2, 3, 0]);
    }

    #[test]
    fn offset_gives_squared_mse() {
        let (s, m) = two_regime();
        let f = forecast(&s, &m, 2).unwrap();
        let actual = f.points().add_scalar(0.5);
        let mse = evaluate_mse_matrix(&f, &actual).unwrap();
        assert!((mse.mse[0] - 0.25).abs() < 1e-15);
    }
}
