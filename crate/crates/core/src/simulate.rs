//! Synthetic data from a known parameter set, with the true regime path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataio::ObservationSeries;
use crate::error::{Error, Result};
use crate::export::csv_text;
use crate::linalg::CovFactor;
use crate::model::Model;

pub const DEFAULT_BURN_IN: usize = 100;

const OVERFLOW: f64 = 1e150;

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: ObservationSeries,
    /// 0-based regime of every row of `series`.
    pub true_states: Vec<usize>,
    pub model: Model,
}

impl SimOutput {
    /// `t,regime` with 1-based rows and regimes, matching the probability export.
    pub fn true_states_csv(&self) -> String {
        let rows: Vec<Vec<String>> =
            self.true_states.iter().enumerate().map(|(t, s)| vec![(t + 1).to_string(), (s + 1).to_string()]).collect();
        csv_text(&["t", "regime"], &rows)
    }
}

/// Draws an index from unnormalized non-negative weights.
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: impl IntoIterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().into_iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.into_iter().enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// Simulates `t_len` rows after discarding `burn_in` rows. The lag history
/// before the first burn-in row is zero and the first regime is drawn from
/// the initial distribution.
pub fn simulate(model: &Model, t_len: usize, seed: u64, burn_in: usize) -> Result<SimOutput> {
    if t_len < 2 {
        return Err(Error::InsufficientData { needed: 2, got: t_len });
    }
    if model.spec.regression.is_some() {
        return Err(Error::Config("simulation needs a full VAR spec, not a regression spec".into()));
    }
    let n = model.spec.n_channels;
    let p = model.lags();
    let factors: Vec<DMatrix<f64>> = model
        .params
        .covariances
        .iter()
        .enumerate()
        .map(|(m, s)| CovFactor::new(s, m).map(|f| f.lower()))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = burn_in + t_len;
    let mut y = DMatrix::zeros(total, n);
    let mut states = Vec::with_capacity(total);
    let mut z = DVector::zeros(n);
    for t in 0..total {
        let s = match states.last() {
            None => sample_index(model.params.initial_dist.iter().copied(), &mut rng),
            Some(&prev) => sample_index(model.params.transition.row(prev).iter().copied(), &mut rng),
        };
        states.push(s);
        let mut mean = model.params.intercepts[s].clone();
        for (i, a) in model.params.coeffs[s].iter().enumerate().take(p) {
            if t > i {
                mean += a * y.row(t - 1 - i).transpose();
            }
        }
        for k in 0..n {
            z[k] = rng.sample(StandardNormal);
        }
        let row = mean + &factors[s] * &z;
        if row.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW) {
            return Err(Error::Unstable { step: t });
        }
        y.set_row(t, &row.transpose());
    }
    let data = y.rows(burn_in, t_len).into_owned();
    let series = ObservationSeries::from_matrix(data, 1.0)?.with_source(format!("simulated (seed {seed})"));
    Ok(SimOutput { series, true_states: states.split_off(burn_in), model: model.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeStability {
    pub regime: usize,
    pub spectral_radius: f64,
    pub stable: bool,
}

/// `Np x Np` companion matrix of regime `m`.
pub fn companion_matrix(model: &Model, m: usize) -> DMatrix<f64> {
    let n = model.spec.n_channels;
    let p = model.lags();
    let mut c = DMatrix::zeros(n * p, n * p);
    for (i, a) in model.params.coeffs[m].iter().enumerate() {
        c.view_mut((0, i * n), (n, n)).copy_from(a);
    }
    for k in n..n * p {
        c[(k, k - n)] = 1.0;
    }
    c
}

/// Spectral radius of each regime's companion matrix; below 1 is stable.
pub fn spectral_check(model: &Model) -> Vec<RegimeStability> {
    (0..model.n_regimes())
        .map(|m| {
            let radius = if model.lags() == 0 {
                0.0
            } else {
                companion_matrix(model, m).complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
            };
            RegimeStability { regime: m + 1, spectral_radius: radius, stable: radius < 1.0 }
        })
        .collect()
}
