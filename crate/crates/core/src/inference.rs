//! Regime inference for fixed parameters: filtering, smoothing,
//! classification and dwell-time analytics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::ObservationSeries;
use crate::error::{Error, Result};
use crate::export::{csv_text, fmt_g17, fmt_g4};
use crate::model::{LogDensityTable, Model};

/// Denominator floor in the backward recursion.
pub const PROB_FLOOR: f64 = 1e-300;

/// Forward pass output. Row `r` of each table is series row `offset + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub offset: usize,
    /// `Pr(s_t | y_1..y_t)`.
    pub filtered: DMatrix<f64>,
    /// `Pr(s_t | y_1..y_{t-1})`; the first row is the initial distribution.
    pub predicted: DMatrix<f64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeProbabilities {
    pub offset: usize,
    pub filtered: DMatrix<f64>,
    pub predicted: DMatrix<f64>,
    /// `Pr(s_t | y_1..y_T)`.
    pub smoothed: DMatrix<f64>,
    /// `pairwise[r][(i, j)] = Pr(s_{t-1} = i, s_t = j | y_1..y_T)` for
    /// `t = offset + r + 1`.
    pub pairwise: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

impl RegimeProbabilities {
    pub fn n_rows(&self) -> usize {
        self.smoothed.nrows()
    }

    pub fn n_regimes(&self) -> usize {
        self.smoothed.ncols()
    }

    /// Relabels so that new regime `k` is old regime `perm[k]`.
    pub fn permute_regimes(&self, perm: &[usize]) -> Self {
        let cols = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), perm.len(), |r, k| m[(r, perm[k])]);
        Self {
            offset: self.offset,
            filtered: cols(&self.filtered),
            predicted: cols(&self.predicted),
            smoothed: cols(&self.smoothed),
            pairwise: self
                .pairwise
                .iter()
                .map(|q| DMatrix::from_fn(perm.len(), perm.len(), |i, j| q[(perm[i], perm[j])]))
                .collect(),
            log_likelihood: self.log_likelihood,
        }
    }
}

pub fn hamilton_filter(series: &ObservationSeries, model: &Model) -> Result<FilterOutput> {
    let table = LogDensityTable::compute(series, model)?;
    filter_densities(&table, &model.params.transition, &model.params.initial_dist)
}

/// Scaled forward recursion over a precomputed density table.
pub fn filter_densities(table: &LogDensityTable, transition: &DMatrix<f64>, initial: &DVector<f64>) -> Result<FilterOutput> {
    let (n_rows, m) = table.values.shape();
    let mut filtered = DMatrix::zeros(n_rows, m);
    let mut predicted = DMatrix::zeros(n_rows, m);
    let mut log_lik = 0.0;
    let mut pred = initial.clone();
    let mut eta = DVector::zeros(m);
    for r in 0..n_rows {
        if r > 0 {
            pred = transition.tr_mul(&filtered.row(r - 1).transpose());
        }
        let row = table.values.row(r);
        let peak = row.max();
        for j in 0..m {
            eta[j] = (row[j] - peak).exp();
        }
        let joint = pred.component_mul(&eta);
        let norm = joint.sum();
        if !(norm > PROB_FLOOR) || !norm.is_finite() {
            return Err(Error::Underflow { t: table.offset + r });
        }
        log_lik += norm.ln() + peak;
        predicted.set_row(r, &pred.transpose());
        filtered.set_row(r, &(joint / norm).transpose());
    }
    if !log_lik.is_finite() {
        return Err(Error::NonFinite("log-likelihood".into()));
    }
    Ok(FilterOutput { offset: table.offset, filtered, predicted, log_likelihood: log_lik })
}

/// Backward recursion
/// `Pr(s_t = i | Y_T) = Σ_j Pr(s_t = i | Y_t) P[i][j] Pr(s_{t+1} = j | Y_T) / Pr(s_{t+1} = j | Y_t)`,
/// started from the last filtered row.
pub fn smooth(filter: FilterOutput, transition: &DMatrix<f64>) -> RegimeProbabilities {
    let (n_rows, m) = filter.filtered.shape();
    let mut smoothed = DMatrix::zeros(n_rows, m);
    let mut pairwise = vec![DMatrix::zeros(m, m); n_rows.saturating_sub(1)];
    if n_rows > 0 {
        smoothed.set_row(n_rows - 1, &filter.filtered.row(n_rows - 1));
    }
    let mut floored = false;
    for r in (0..n_rows.saturating_sub(1)).rev() {
        let mut ratio = DVector::zeros(m);
        for j in 0..m {
            let den = filter.predicted[(r + 1, j)];
            if den < PROB_FLOOR {
                floored = true;
            }
            ratio[j] = smoothed[(r + 1, j)] / den.max(PROB_FLOOR);
        }
        let q = &mut pairwise[r];
        for i in 0..m {
            let f = filter.filtered[(r, i)];
            let mut acc = 0.0;
            for j in 0..m {
                let v = f * transition[(i, j)] * ratio[j];
                q[(i, j)] = v;
                acc += v;
            }
            smoothed[(r, i)] = acc;
        }
    }
    if floored {
        log::warn!("predicted probability below {PROB_FLOOR:e} in the smoother denominator; floored");
    }
    RegimeProbabilities {
        offset: filter.offset,
        filtered: filter.filtered,
        predicted: filter.predicted,
        smoothed,
        pairwise,
        log_likelihood: filter.log_likelihood,
    }
}

/// Filter and smoother in one call.
pub fn infer(series: &ObservationSeries, model: &Model) -> Result<RegimeProbabilities> {
    let f = hamilton_filter(series, model)?;
    Ok(smooth(f, &model.params.transition))
}

/// Most probable regime per row; ties go to the lowest index.
pub fn classify(smoothed: &DMatrix<f64>) -> Vec<usize> {
    (0..smoothed.nrows())
        .map(|r| {
            let row = smoothed.row(r);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean dwell time of a regime with self-transition probability `p_ii`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpectedDuration {
    Steps(f64),
    /// Absorbing regime (`p_ii = 1`).
    Infinite,
}

impl ExpectedDuration {
    pub fn steps(self) -> f64 {
        match self {
            ExpectedDuration::Steps(s) => s,
            ExpectedDuration::Infinite => f64::INFINITY,
        }
    }
}

pub fn expected_duration(transition: &DMatrix<f64>, regime: usize) -> ExpectedDuration {
    let stay = transition[(regime, regime)];
    if stay >= 1.0 {
        ExpectedDuration::Infinite
    } else {
        ExpectedDuration::Steps(1.0 / (1.0 - stay))
    }
}

/// Geometric dwell-time law `Pr(D = k) = p_ii^(k-1) (1 - p_ii)` for `k >= 1`.
pub fn duration_pmf(stay: f64, k: u32) -> f64 {
    if k == 0 {
        return 0.0;
    }
    stay.powi(k as i32 - 1) * (1.0 - stay)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    /// 1-based regime label.
    pub regime: usize,
    /// `None` for an absorbing regime.
    pub expected_duration_steps: Option<f64>,
    pub expected_duration_seconds: Option<f64>,
    /// Number of maximal runs.
    pub occurrence: usize,
    pub observations: usize,
    pub percentage: f64,
}

/// Per-regime characteristics of a classified sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub n_observations: usize,
    pub sample_interval: f64,
    pub regimes: Vec<RegimeSummary>,
}

impl RegimeReport {
    pub const CSV_HEADER: [&'static str; 6] =
        ["regime", "expected_duration_steps", "expected_duration_seconds", "occurrence", "observations", "percentage"];

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(fmt_g17).unwrap_or_else(|| "inf".into());
        let rows: Vec<Vec<String>> = self
            .regimes
            .iter()
            .map(|r| {
                vec![
                    r.regime.to_string(),
                    opt(r.expected_duration_steps),
                    opt(r.expected_duration_seconds),
                    r.occurrence.to_string(),
                    r.observations.to_string(),
                    fmt_g17(r.percentage),
                ]
            })
            .collect();
        csv_text(&Self::CSV_HEADER, &rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table with 4 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8}{:>14}{:>14}{:>12}{:>14}{:>12}\n",
            "regime", "duration", "duration (s)", "occurrence", "observations", "percent"
        );
        let opt = |x: Option<f64>| x.map(fmt_g4).unwrap_or_else(|| "inf".into());
        for r in &self.regimes {
            out.push_str(&format!(
                "{:<8}{:>14}{:>14}{:>12}{:>14}{:>12}\n",
                r.regime,
                opt(r.expected_duration_steps),
                opt(r.expected_duration_seconds),
                r.occurrence,
                r.observations,
                fmt_g4(r.percentage)
            ));
        }
        out
    }
}

/// Per-row export: 1-based series row index, timestamp, 1-based regime,
/// smoothed and filtered probabilities.
pub fn probabilities_csv(probs: &RegimeProbabilities, classification: &[usize], timestamps: &[f64]) -> String {
    let m = probs.n_regimes();
    let mut header = vec!["t".to_string(), "time".to_string(), "regime".to_string()];
    header.extend((1..=m).map(|j| format!("smoothed_{j}")));
    header.extend((1..=m).map(|j| format!("filtered_{j}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..probs.n_rows())
        .map(|r| {
            let t = r + probs.offset;
            let mut row = vec![(t + 1).to_string(), fmt_g17(timestamps[t]), (classification[r] + 1).to_string()];
            row.extend((0..m).map(|j| fmt_g17(probs.smoothed[(r, j)])));
            row.extend((0..m).map(|j| fmt_g17(probs.filtered[(r, j)])));
            row
        })
        .collect();
    csv_text(&header_refs, &rows)
}

/// Builds the report from a 0-based classification over the `T - p`
/// modeled rows.
pub fn regime_report(classification: &[usize], transition: &DMatrix<f64>, sample_interval: f64) -> RegimeReport {
    let m = transition.nrows();
    let mut occurrence = vec![0usize; m];
    let mut observations = vec![0usize; m];
    for (i, &s) in classification.iter().enumerate() {
        observations[s] += 1;
        if i == 0 || classification[i - 1] != s {
            occurrence[s] += 1;
        }
    }
    let total = classification.len();
    let regimes = (0..m)
        .map(|j| {
            let d = match expected_duration(transition, j) {
                ExpectedDuration::Steps(s) => Some(s),
                ExpectedDuration::Infinite => None,
            };
            RegimeSummary {
                regime: j + 1,
                expected_duration_steps: d,
                expected_duration_seconds: d.map(|s| s * sample_interval),
                occurrence: occurrence[j],
                observations: observations[j],
                percentage: if total == 0 { 0.0 } else { 100.0 * observations[j] as f64 / total as f64 },
            }
        })
        .collect();
    RegimeReport { n_observations: total, sample_interval, regimes }
}

/// `Σ_j Pr(s_{T+1} = j | Y_T) μ_j(T+1)`, the filter's one-step-ahead mean.
pub fn one_step_predictive_mean(series: &ObservationSeries, model: &Model, filter: &FilterOutput) -> DVector<f64> {
    let last = filter.filtered.row(filter.filtered.nrows() - 1).transpose();
    let weights = model.params.transition.tr_mul(&last);
    let t_len = series.len();
    let p = model.lags();
    let mut out = DVector::zeros(series.n_channels());
    for j in 0..model.n_regimes() {
        let mut mu = model.params.intercepts[j].clone();
        for i in 0..p {
            mu += &model.params.coeffs[j][i] * series.row(t_len - 1 - i);
        }
        for k in (0..series.n_channels()).filter(|&k| !model.spec.is_modeled(k)) {
            mu[k] = series.data()[(t_len - 1, k)];
        }
        out += mu * weights[j];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, ModelSpec};

    fn model(p: DMatrix<f64>, pi: &[f64]) -> Model {
        let spec = ModelSpec::new(1, 2, 1);
        let mut params = ModelParams::baseline(&spec, p);
        params.intercepts[1][0] = 2.0;
        params.coeffs[0][0][(0, 0)] = 0.4;
        params.covariances[1][(0, 0)] = 0.5;
        params.initial_dist = DVector::from_row_slice(pi);
        Model::new(spec, params).unwrap()
    }

    fn series() -> ObservationSeries {
        let v = [0.1, 0.3, 2.2, 1.9, 2.4, -0.2, 0.0, 0.5, 2.1, 1.7];
        ObservationSeries::from_matrix(DMatrix::from_column_slice(10, 1, &v), 1.0).unwrap()
    }

    #[test]
    fn absorbing_start_stays_put() {
        let m = model(DMatrix::identity(2, 2), &[1.0, 0.0]);
        let probs = infer(&series(), &m).unwrap();
        for r in 0..probs.n_rows() {
            assert_eq!(probs.filtered.row(r).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        }
    }

    #[test]
    fn identity_transition_smoothed_equals_filtered() {
        let m = model(DMatrix::identity(2, 2), &[0.5, 0.5]);
        let probs = infer(&series(), &m).unwrap();
        // with P = I the filtered row at T already conditions on every observation
        let last = probs.filtered.row(probs.n_rows() - 1).into_owned();
        for r in 0..probs.n_rows() {
            for j in 0..2 {
                assert!((probs.smoothed[(r, j)] - last[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_pairwise_marginalizes() {
        let m = model(DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.3, 0.7]), &[0.6, 0.4]);
        let probs = infer(&series(), &m).unwrap();
        for r in 0..probs.n_rows() {
            for t in [&probs.filtered, &probs.predicted, &probs.smoothed] {
                assert!((t.row(r).sum() - 1.0).abs() < 1e-10);
            }
        }
        let last = probs.n_rows() - 1;
        assert_eq!(probs.smoothed.row(last), probs.filtered.row(last));
        for (r, q) in probs.pairwise.iter().enumerate() {
            for j in 0..2 {
                let col: f64 = q.column(j).sum();
                assert!((col - probs.smoothed[(r + 1, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn underflow_names_the_row() {
        let m = model(DMatrix::identity(2, 2), &[1.0, 0.0]);
        let mut v = vec![0.0; 6];
        v[3] = 1e6;
        let s = ObservationSeries::from_matrix(DMatrix::from_column_slice(6, 1, &v), 1.0).unwrap();
        // regime 1 has all the prior mass but regime 2 is far likelier at t = 3
        let mut m2 = m.clone();
        m2.params.covariances[1][(0, 0)] = 1e12;
        assert!(matches!(hamilton_filter(&s, &m2), Err(Error::Underflow { t: 3 })));
    }

    #[test]
    fn classification_and_ties() {
        let s = DMatrix::from_row_slice(3, 2, &[0.1, 0.9, 0.5, 0.5, 0.7, 0.3]);
        assert_eq!(classify(&s), vec![1, 0, 0]);
        assert_eq!(classify(&(s * 3.0)), vec![1, 0, 0]);
    }

    #[test]
    fn durations() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.06, 0.94, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(expected_duration(&p, 0), ExpectedDuration::Steps(2.0));
        assert!((expected_duration(&p, 1).steps() - 16.666_666_666_666_67).abs() < 1e-12);
        assert_eq!(expected_duration(&p, 2), ExpectedDuration::Infinite);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(expected_duration(&z, 0), ExpectedDuration::Steps(1.0));
        let mean: f64 = (1..2000).map(|k| k as f64 * duration_pmf(0.94, k)).sum();
        assert!((mean - 1.0 / 0.06).abs() < 1e-9);
    }

    #[test]
    fn report_counts_runs() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let rep = regime_report(&[0, 0, 1, 0], &p, 0.1);
        assert_eq!(rep.regimes[0].occurrence, 2);
        assert_eq!(rep.regimes[0].observations, 3);
        assert_eq!(rep.regimes[0].percentage, 75.0);
        assert_eq!(rep.regimes[0].expected_duration_seconds, Some(0.2));
        let single = regime_report(&[1, 1, 1], &p, 1.0);
        assert_eq!(single.regimes[1].occurrence, 1);
        assert_eq!(single.regimes[1].percentage, 100.0);
    }
}
