use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::export::fmt_g17;

/// Canonical car-following channel order: follower speed, follower
/// acceleration, speed difference (leader minus follower), gap.
pub const CAR_FOLLOWING_CHANNELS: [&str; 4] = ["v", "a", "dv", "h"];
pub const CAR_FOLLOWING_UNITS: [&str; 4] = ["m/s", "m/s^2", "m/s", "m"];

/// A regularly sampled multivariate time series, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    channels: Vec<String>,
    units: Vec<String>,
    data: DMatrix<f64>,
    timestamps: Vec<f64>,
    sample_interval: f64,
    source: String,
    warnings: Vec<String>,
}

/// Sidecar metadata stored next to the canonical CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub sample_interval: f64,
    pub t0: f64,
    pub channels: Vec<String>,
    pub units: Vec<String>,
    pub source: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ObservationSeries {
    pub fn new(
        channels: Vec<String>,
        units: Vec<String>,
        data: DMatrix<f64>,
        timestamps: Vec<f64>,
        sample_interval: f64,
    ) -> Result<Self> {
        let (t_len, n) = data.shape();
        if n == 0 || channels.len() != n {
            return Err(Error::Dimension(format!(
                "{} channel names for {} data columns",
                channels.len(),
                n
            )));
        }
        if units.len() != n {
            return Err(Error::Dimension(format!("{} units for {} channels", units.len(), n)));
        }
        if t_len < 2 {
            return Err(Error::InsufficientData { needed: 2, got: t_len });
        }
        if timestamps.len() != t_len {
            return Err(Error::Dimension(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                t_len
            )));
        }
        if !(sample_interval > 0.0 && sample_interval.is_finite()) {
            return Err(Error::Config(format!("sample interval {sample_interval} must be positive")));
        }
        for (row, w) in timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::IngestRow {
                    row: row + 2,
                    message: "timestamps are not strictly increasing".into(),
                });
            }
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::IngestRow {
                row: pos % t_len + 1,
                message: format!("non-finite value in channel `{}`", channels[pos / t_len]),
            });
        }
        Ok(Self {
            channels,
            units,
            data,
            timestamps,
            sample_interval,
            source: String::new(),
            warnings: Vec::new(),
        })
    }

    /// Series with generic channel names `y1..yN` and unit timestamps.
    pub fn from_matrix(data: DMatrix<f64>, sample_interval: f64) -> Result<Self> {
        let n = data.ncols();
        let channels = default_channel_names(n);
        let units = vec![String::new(); n];
        let timestamps = (0..data.nrows()).map(|i| i as f64 * sample_interval).collect();
        Self::new(channels, units, data, timestamps, sample_interval)
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn push_warning(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn t0(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn is_car_following(&self) -> bool {
        self.channels.len() == 4 && self.channels.iter().zip(CAR_FOLLOWING_CHANNELS).all(|(a, b)| a == b)
    }

    /// Enforces the car-following invariant `h > 0` on every row.
    pub fn check_car_following(&self) -> Result<()> {
        if !self.is_car_following() {
            return Err(Error::Config(format!(
                "expected channels v,a,dv,h, found {}",
                self.channels.join(",")
            )));
        }
        for t in 0..self.len() {
            if self.data[(t, 3)] <= 0.0 {
                return Err(Error::IngestRow { row: t + 1, message: "gap distance must be positive".into() });
            }
        }
        Ok(())
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Config(format!("invalid row range {start}..{end} of {}", self.len())));
        }
        let data = self.data.rows(start, end - start).into_owned();
        let mut out = Self::new(
            self.channels.clone(),
            self.units.clone(),
            data,
            self.timestamps[start..end].to_vec(),
            self.sample_interval,
        )?;
        out.source = self.source.clone();
        out.warnings = self.warnings.clone();
        Ok(out)
    }

    pub fn metadata(&self) -> SeriesMetadata {
        SeriesMetadata {
            sample_interval: self.sample_interval,
            t0: self.t0(),
            channels: self.channels.clone(),
            units: self.units.clone(),
            source: self.source.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// SHA-256 over the sample interval, timestamps and data (row-major, little endian).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.sample_interval.to_le_bytes());
        for t in 0..self.len() {
            h.update(self.timestamps[t].to_le_bytes());
            for c in 0..self.n_channels() {
                h.update(self.data[(t, c)].to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Canonical CSV text: header `t,<channels>` then one row per sample.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("t");
        for c in &self.channels {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for t in 0..self.len() {
            s.push_str(&fmt_g17(self.timestamps[t]));
            for c in 0..self.n_channels() {
                s.push(',');
                s.push_str(&fmt_g17(self.data[(t, c)]));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `<path>` (CSV) and the sidecar `<path>.json`.
    pub fn write_canonical(&self, csv_path: &Path) -> Result<PathBuf> {
        fs::write(csv_path, self.to_csv_string())?;
        let meta_path = sidecar_path(csv_path);
        fs::write(&meta_path, serde_json::to_string_pretty(&self.metadata())? + "\n")?;
        Ok(meta_path)
    }

    /// Reads a canonical CSV, using the sidecar metadata when present.
    pub fn read_canonical(csv_path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header.first().map(String::as_str) != Some("t") || header.len() < 2 {
            return Err(Error::MissingColumn("t".into()));
        }
        let channels = header[1..].to_vec();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::IngestRow { row: i + 1, message: "wrong number of fields".into() });
            }
            let parse = |k: usize| -> Result<f64> {
                rec[k].trim().parse::<f64>().map_err(|_| Error::IngestRow {
                    row: i + 1,
                    message: format!("cannot parse `{}` in column `{}`", &rec[k], header[k]),
                })
            };
            times.push(parse(0)?);
            for k in 1..header.len() {
                values.push(parse(k)?);
            }
        }
        let n = channels.len();
        let data = DMatrix::from_row_slice(times.len(), n, &values);
        let meta_path = sidecar_path(csv_path);
        let meta: Option<SeriesMetadata> = if meta_path.exists() {
            Some(serde_json::from_str(&fs::read_to_string(&meta_path)?)?)
        } else {
            None
        };
        let interval = match &meta {
            Some(m) => m.sample_interval,
            None => median_step(&times).ok_or(Error::InsufficientData { needed: 2, got: times.len() })?,
        };
        let units = match &meta {
            Some(m) if m.units.len() == n => m.units.clone(),
            _ => default_units(&channels),
        };
        let mut series = Self::new(channels, units, data, times, interval)?;
        if let Some(m) = meta {
            series.source = m.source;
            series.warnings = m.warnings;
        }
        Ok(series)
    }

    /// Decimates by an integer stride so that the new interval is `new_interval`.
    pub fn resample(&self, new_interval: f64) -> Result<Self> {
        let ratio = new_interval / self.sample_interval;
        let stride = ratio.round();
        if !(stride >= 1.0) || (ratio - stride).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "new interval {new_interval} is not an integer multiple of {}",
                self.sample_interval
            )));
        }
        let stride = stride as usize;
        let rows: Vec<usize> = (0..self.len()).step_by(stride).collect();
        let data = DMatrix::from_fn(rows.len(), self.n_channels(), |i, c| self.data[(rows[i], c)]);
        let times = rows.iter().map(|&r| self.timestamps[r]).collect();
        let mut out = Self::new(self.channels.clone(), self.units.clone(), data, times, new_interval)?;
        out.source = self.source.clone();
        out.warnings = self.warnings.clone();
        Ok(out)
    }
}

pub fn default_channel_names(n: usize) -> Vec<String> {
    if n == 4 {
        CAR_FOLLOWING_CHANNELS.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("y{i}")).collect()
    }
}

fn default_units(channels: &[String]) -> Vec<String> {
    channels
        .iter()
        .map(|c| match CAR_FOLLOWING_CHANNELS.iter().position(|k| k == c) {
            Some(i) => CAR_FOLLOWING_UNITS[i].to_string(),
            None => String::new(),
        })
        .collect()
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Median of consecutive differences.
pub fn median_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let mut d: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

/// First difference of `v` divided by `dt`; the first sample copies the second.
pub fn derive_acceleration(v: &[f64], dt: f64) -> Vec<f64> {
    let mut a = vec![0.0; v.len()];
    for t in 1..v.len() {
        a[t] = (v[t] - v[t - 1]) / dt;
    }
    if v.len() > 1 {
        a[0] = a[1];
    }
    a
}
