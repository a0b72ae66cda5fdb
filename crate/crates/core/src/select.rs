//! Model-order search over lag order and number of regimes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::ObservationSeries;
use crate::em::{fit_em, EmConfig};
use crate::error::{Error, Result};
use crate::export::{csv_text, fmt_g17};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub aic: f64,
    pub bic: f64,
    pub hqc: f64,
}

/// `AIC = 2k - 2 ln L`, `BIC = k ln T - 2 ln L`, `HQC = 2k ln ln T - 2 ln L`.
pub fn criteria(log_lik: f64, k: usize, t_eff: f64) -> Result<Criteria> {
    if k == 0 {
        return Err(Error::Config("parameter count must be positive".into()));
    }
    let t = t_eff;
    if !(t > std::f64::consts::E) {
        return Err(Error::Config(format!("effective sample size {t_eff} must exceed e")));
    }
    let k = k as f64;
    Ok(Criteria {
        aic: 2.0 * k - 2.0 * log_lik,
        bic: k * t.ln() - 2.0 * log_lik,
        hqc: 2.0 * k * t.ln().ln() - 2.0 * log_lik,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
    Hqc,
}

impl Criterion {
    pub fn of(self, c: &Criteria) -> f64 {
        match self {
            Criterion::Aic => c.aic,
            Criterion::Bic => c.bic,
            Criterion::Hqc => c.hqc,
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            "hqc" | "hq" => Ok(Criterion::Hqc),
            other => Err(Error::Config(format!("unknown criterion `{other}` (expected aic, bic or hqc)"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::Hqc => "hqc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", content = "message", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    NotConverged,
    Failed(String),
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellStatus::Ok => f.write_str("ok"),
            CellStatus::NotConverged => f.write_str("not_converged"),
            CellStatus::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub lags: usize,
    pub regimes: usize,
    pub k: usize,
    pub log_likelihood: Option<f64>,
    pub criteria: Option<Criteria>,
    pub status: CellStatus,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionGrid {
    pub lags: Vec<usize>,
    pub regimes: Vec<usize>,
    /// Rows shared by every cell after trimming to the largest lag order.
    pub t_eff: usize,
    pub sample_interval: f64,
    /// Lag-major order: all regime counts for the first lag, then the next.
    pub cells: Vec<GridCell>,
}

impl SelectionGrid {
    pub fn cell(&self, lags: usize, regimes: usize) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.lags == lags && c.regimes == regimes)
    }

    /// Minimizing cell among those with a likelihood; ties keep grid order.
    pub fn best(&self, by: Criterion) -> Option<&GridCell> {
        let mut best: Option<&GridCell> = None;
        for c in &self.cells {
            if let Some(cr) = &c.criteria {
                if best.is_none_or(|b| by.of(cr) < by.of(b.criteria.as_ref().expect("scored cell"))) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Cell with the largest log-likelihood.
    pub fn best_log_likelihood(&self) -> Option<&GridCell> {
        let mut best: Option<&GridCell> = None;
        for c in &self.cells {
            if let Some(ll) = c.log_likelihood {
                if best.is_none_or(|b| ll > b.log_likelihood.expect("scored cell")) {
                    best = Some(c);
                }
            }
        }
        best
    }

    pub fn failed(&self) -> Vec<&GridCell> {
        self.cells.iter().filter(|c| matches!(c.status, CellStatus::Failed(_))).collect()
    }

    /// `p,M,loglik,aic,bic,hqc,k,status`; numeric cells of failed fits are empty.
    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self.cells.iter().map(|c| cell_row(c, None)).collect();
        csv_text(&["p", "M", "loglik", "aic", "bic", "hqc", "k", "status"], &rows)
    }

    /// Per-lag criteria for one regime count, with the lag in seconds.
    pub fn lag_curve_csv(&self, regimes: usize) -> String {
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .filter(|c| c.regimes == regimes)
            .map(|c| cell_row(c, Some(c.lags as f64 * self.sample_interval)))
            .collect();
        csv_text(&["p", "lag_seconds", "M", "loglik", "aic", "bic", "hqc", "k", "status"], &rows)
    }

    /// Log-likelihood table with one row per regime count and one column
    /// per lag order.
    pub fn likelihood_table_csv(&self) -> String {
        let mut header = vec!["M".to_string()];
        header.extend(self.lags.iter().map(|p| format!("p{p}")));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = self
            .regimes
            .iter()
            .map(|&m| {
                std::iter::once(m.to_string())
                    .chain(self.lags.iter().map(|&p| {
                        self.cell(p, m).and_then(|c| c.log_likelihood).map(fmt_g17).unwrap_or_default()
                    }))
                    .collect()
            })
            .collect();
        csv_text(&header_refs, &rows)
    }

    pub fn best_json(&self, by: Criterion) -> Result<String> {
        let doc = serde_json::json!({
            "criterion": by.to_string(),
            "t_eff": self.t_eff,
            "best": self.best(by),
            "failed_cells": self.failed().iter().map(|c| [c.lags, c.regimes]).collect::<Vec<_>>(),
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

fn cell_row(c: &GridCell, lag_seconds: Option<f64>) -> Vec<String> {
    let num = |x: Option<f64>| x.map(fmt_g17).unwrap_or_default();
    let mut row = vec![c.lags.to_string()];
    if let Some(s) = lag_seconds {
        row.push(fmt_g17(s));
    }
    row.push(c.regimes.to_string());
    row.extend([
        num(c.log_likelihood),
        num(c.criteria.map(|x| x.aic)),
        num(c.criteria.map(|x| x.bic)),
        num(c.criteria.map(|x| x.hqc)),
        c.k.to_string(),
        c.status.to_string(),
    ]);
    row
}

fn fit_cell(series: &ObservationSeries, max_p: usize, p: usize, m: usize, template: &ModelSpec, em: &EmConfig) -> GridCell {
    let spec = template.with_shape(m, p);
    let k = spec.parameter_count();
    let t_eff = series.len() - max_p;
    let outcome = series
        .slice(max_p - p, series.len())
        .and_then(|s| fit_em(&s, &spec, em))
        .and_then(|fit| criteria(fit.log_likelihood(), k, t_eff as f64).map(|c| (fit, c)));
    match outcome {
        Ok((fit, c)) => GridCell {
            lags: p,
            regimes: m,
            k,
            log_likelihood: Some(fit.log_likelihood()),
            criteria: Some(c),
            status: if fit.converged { CellStatus::Ok } else { CellStatus::NotConverged },
            warnings: fit.warnings,
        },
        Err(e) => GridCell {
            lags: p,
            regimes: m,
            k,
            log_likelihood: None,
            criteria: None,
            status: CellStatus::Failed(e.to_string()),
            warnings: Vec::new(),
        },
    }
}

/// Fits every `(p, M)` cell by EM on the same rows: the first
/// `max(lags) - p` rows are dropped for each cell so that all likelihoods
/// cover rows `max(lags)..T`.
pub fn grid_search(
    series: &ObservationSeries,
    lags: &[usize],
    regimes: &[usize],
    template: &ModelSpec,
    em: &EmConfig,
) -> Result<SelectionGrid> {
    if lags.is_empty() || regimes.is_empty() {
        return Err(Error::Config("lag and regime ranges must be non-empty".into()));
    }
    if regimes.contains(&0) {
        return Err(Error::Config("regime counts must be at least 1".into()));
    }
    let max_p = *lags.iter().max().expect("non-empty");
    let max_m = *regimes.iter().max().expect("non-empty");
    let largest = template.with_shape(max_m, max_p);
    largest.check()?;
    let needed = max_p + max_m * largest.min_rows_per_regime();
    if series.len() < needed {
        return Err(Error::InsufficientData { needed, got: series.len() });
    }
    let pairs: Vec<(usize, usize)> = lags.iter().flat_map(|&p| regimes.iter().map(move |&m| (p, m))).collect();
    let mut cells: Vec<GridCell> =
        pairs.par_iter().map(|&(p, m)| fit_cell(series, max_p, p, m, template, em)).collect();

    for i in 0..cells.len() {
        let (p, m) = (cells[i].lags, cells[i].regimes);
        let smaller = cells
            .iter()
            .filter(|c| c.lags == p && c.regimes < m)
            .filter_map(|c| c.log_likelihood.map(|ll| (c.regimes, ll)))
            .max_by_key(|(r, _)| *r);
        if let (Some((r, ll_small)), Some(ll)) = (smaller, cells[i].log_likelihood) {
            if ll < ll_small - 1e-6 {
                cells[i].warnings.push(format!(
                    "log-likelihood {ll:.6} is below the {r}-regime fit ({ll_small:.6}); EM likely stopped at a local optimum"
                ));
            }
        }
    }
    Ok(SelectionGrid {
        lags: lags.to_vec(),
        regimes: regimes.to_vec(),
        t_eff: series.len() - max_p,
        sample_interval: series.sample_interval(),
        cells,
    })
}

/// Criteria over a lag range at a fixed number of regimes.
pub fn lag_curve(
    series: &ObservationSeries,
    lags: &[usize],
    regimes: usize,
    template: &ModelSpec,
    em: &EmConfig,
) -> Result<SelectionGrid> {
    grid_search(series, lags, &[regimes], template, em)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_arithmetic() {
        let t = std::f64::consts::E.powi(2);
        let c = criteria(0.0, 1, t).unwrap();
        assert!((c.aic - 2.0).abs() < 1e-15);
        assert!((c.bic - 2.0).abs() < 1e-15);
        assert!((c.hqc - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(criteria(0.0, 1, 2.0).is_err());
        assert!(criteria(0.0, 0, 100.0).is_err());
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("BIC".parse::<Criterion>().unwrap(), Criterion::Bic);
        assert!("foo".parse::<Criterion>().is_err());
    }
}
