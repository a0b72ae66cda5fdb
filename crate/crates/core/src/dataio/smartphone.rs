//! Paired phone GPS logs (one per vehicle) aligned into a car-following series.

use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::geo::{haversine_distance, GeoPoint, SensorLogRecord};
use super::series::{derive_acceleration, ObservationSeries, CAR_FOLLOWING_CHANNELS, CAR_FOLLOWING_UNITS};
use crate::error::{Error, Result};

/// Column names of a sensor log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorLogSchema {
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub speed: String,
    pub heading: Option<String>,
}

impl Default for SensorLogSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            speed: "speed".into(),
            heading: Some("heading".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Maximum distance in seconds between a grid time and a matched fix.
    pub tolerance: f64,
    /// Output sampling rate in Hz.
    pub rate_hz: f64,
    /// Centered moving-average window applied to v, dv and h (1 = off).
    pub smoothing_window: usize,
    pub min_rows: usize,
    pub schema: SensorLogSchema,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { tolerance: 0.5, rate_hz: 1.0, smoothing_window: 1, min_rows: 10, schema: SensorLogSchema::default() }
    }
}

/// Parses epoch seconds, RFC 3339, or `YYYY-MM-DD HH:MM:SS[.f][ ±zzzz]` (UTC when no offset).
pub fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(x) = raw.parse::<f64>() {
        return x.is_finite().then_some(x);
    }
    let to_secs = |secs: i64, nanos: u32| secs as f64 + nanos as f64 * 1e-9;
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(to_secs(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f %z", "%Y-%m-%dT%H:%M:%S%.f%z"] {
        if let Ok(dt) = DateTime::parse_from_str(raw, fmt) {
            return Some(to_secs(dt.timestamp(), dt.timestamp_subsec_nanos()));
        }
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            let utc = dt.and_utc();
            return Some(to_secs(utc.timestamp(), utc.timestamp_subsec_nanos()));
        }
    }
    None
}

pub fn read_sensor_log(path: &Path, schema: &SensorLogSchema) -> Result<Vec<SensorLogRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_sensor_log(&text, schema)
}

pub fn parse_sensor_log(text: &str, schema: &SensorLogSchema) -> Result<Vec<SensorLogRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ct, clat, clon, cspeed) = (col(&schema.timestamp)?, col(&schema.lat)?, col(&schema.lon)?, col(&schema.speed)?);
    let chead = schema.heading.as_deref().and_then(|h| header.iter().position(|x| x == h));

    let mut out: Vec<SensorLogRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let num = |c: usize| -> Result<f64> {
            field(c).parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::IngestRow {
                row,
                message: format!("cannot parse `{}` in column `{}`", field(c), &header[c]),
            })
        };
        let ts = parse_timestamp(field(ct)).ok_or_else(|| Error::IngestRow {
            row,
            message: format!("unrecognized timestamp `{}`", field(ct)),
        })?;
        let point = GeoPoint::new(num(clat)?, num(clon)?, ts).map_err(|e| Error::IngestRow { row, message: e.to_string() })?;
        if let Some(prev) = out.last() {
            if ts <= prev.point.timestamp {
                return Err(Error::IngestRow { row, message: "timestamps are not strictly increasing".into() });
            }
        }
        // loggers write -1 (or leave blank) when speed is invalid
        let speed = field(cspeed).parse::<f64>().ok().filter(|s| s.is_finite() && *s >= 0.0);
        let heading = chead.and_then(|c| field(c).parse::<f64>().ok()).filter(|h| h.is_finite() && *h >= 0.0);
        out.push(SensorLogRecord { point, speed, heading });
    }
    Ok(out)
}

/// Speed per record, filling missing values from consecutive fixes.
fn speeds(log: &[SensorLogRecord]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(log.len());
    for i in 0..log.len() {
        let s = match log[i].speed {
            Some(s) => s,
            None if log.len() < 2 => 0.0,
            None => {
                let (a, b) = if i == 0 { (&log[0], &log[1]) } else { (&log[i - 1], &log[i]) };
                haversine_distance(&a.point, &b.point)? / (b.point.timestamp - a.point.timestamp)
            }
        };
        out.push(s);
    }
    Ok(out)
}

fn nearest(log: &[SensorLogRecord], t: f64, tol: f64) -> Option<usize> {
    let idx = log.partition_point(|r| r.point.timestamp < t);
    let mut best: Option<(usize, f64)> = None;
    for k in [idx.wrapping_sub(1), idx] {
        if let Some(r) = log.get(k) {
            let d = (r.point.timestamp - t).abs();
            if d <= tol && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
    }
    best.map(|(k, _)| k)
}

fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return x.to_vec();
    }
    let half = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn ingest_smartphone_pair(leader: &Path, follower: &Path, cfg: &AlignConfig) -> Result<ObservationSeries> {
    let l = read_sensor_log(leader, &cfg.schema)?;
    let f = read_sensor_log(follower, &cfg.schema)?;
    align_pair(&l, &f, cfg).map(|s| s.with_source(format!("smartphone:{}|{}", leader.display(), follower.display())))
}

/// Aligns two logs on a regular grid spanning the follower log.
pub fn align_pair(leader: &[SensorLogRecord], follower: &[SensorLogRecord], cfg: &AlignConfig) -> Result<ObservationSeries> {
    if leader.is_empty() {
        return Err(Error::Ingest("leader log is empty".into()));
    }
    if follower.is_empty() {
        return Err(Error::Ingest("follower log is empty".into()));
    }
    if !(cfg.rate_hz > 0.0) || !(cfg.tolerance >= 0.0) {
        return Err(Error::Config("rate must be positive and tolerance non-negative".into()));
    }
    let dt = 1.0 / cfg.rate_hz;
    let lspeed = speeds(leader)?;
    let fspeed = speeds(follower)?;
    let start = follower[0].point.timestamp;
    let end = follower[follower.len() - 1].point.timestamp;
    let n_grid = ((end - start) / dt + 1e-9).floor() as usize + 1;

    let (mut times, mut v, mut dv, mut h) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..n_grid {
        let t = start + k as f64 * dt;
        let (Some(fi), Some(li)) = (nearest(follower, t, cfg.tolerance), nearest(leader, t, cfg.tolerance)) else {
            continue;
        };
        times.push(t);
        v.push(fspeed[fi]);
        dv.push(lspeed[li] - fspeed[fi]);
        h.push(haversine_distance(&leader[li].point, &follower[fi].point)?);
    }
    if times.len() < cfg.min_rows.max(2) {
        return Err(Error::InsufficientOverlap { rows: times.len(), needed: cfg.min_rows.max(2) });
    }
    let v = moving_average(&v, cfg.smoothing_window);
    let dv = moving_average(&dv, cfg.smoothing_window);
    let h = moving_average(&h, cfg.smoothing_window);
    let a = derive_acceleration(&v, dt);
    let data = DMatrix::from_fn(times.len(), 4, |t, c| [v[t], a[t], dv[t], h[t]][c]);
    let zero_gaps = h.iter().filter(|x| **x <= 0.0).count();
    let mut series = ObservationSeries::new(
        CAR_FOLLOWING_CHANNELS.iter().map(|s| s.to_string()).collect(),
        CAR_FOLLOWING_UNITS.iter().map(|s| s.to_string()).collect(),
        data,
        times,
        dt,
    )?;
    if zero_gaps > 0 {
        series.push_warning(format!(
            "gap distance is zero on {zero_gaps} rows; the series violates h > 0 and will be rejected for car-following fits"
        ));
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(n: usize, lon0: f64, speed: f64) -> Vec<SensorLogRecord> {
        (0..n)
            .map(|i| SensorLogRecord {
                point: GeoPoint::new(0.0, lon0 + i as f64 * 1e-4, 1000.0 + i as f64).unwrap(),
                speed: Some(speed),
                heading: None,
            })
            .collect()
    }

    #[test]
    fn timestamps_in_several_formats() {
        assert_eq!(parse_timestamp("12.5"), Some(12.5));
        assert_eq!(parse_timestamp("1970-01-01T00:00:10Z"), Some(10.0));
        assert_eq!(parse_timestamp("1970-01-01 00:00:10.5"), Some(10.5));
        assert_eq!(parse_timestamp("1970-01-01 01:00:10 +0100"), Some(10.0));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn identical_logs_flag_zero_gap() {
        let f = log(30, 0.0, 10.0);
        let s = align_pair(&f, &f, &AlignConfig::default()).unwrap();
        assert!((0..s.len()).all(|t| s.data()[(t, 3)] == 0.0 && s.data()[(t, 2)] == 0.0));
        assert_eq!(s.warnings().len(), 1);
        assert!(s.check_car_following().is_err());
    }

    #[test]
    fn gap_from_haversine() {
        let mut f = log(20, 0.0, 10.0);
        let mut l = log(20, 0.0, 12.0);
        for (a, b) in f.iter_mut().zip(l.iter_mut()) {
            a.point.lon = 0.0;
            b.point.lon = 0.00018;
        }
        let s = align_pair(&l, &f, &AlignConfig::default()).unwrap();
        assert_eq!(s.len(), 20);
        assert!((s.data()[(5, 3)] - 20.015).abs() < 0.01);
        assert!((s.data()[(5, 2)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn follower_length_sets_row_count() {
        let f = log(412, 0.0, 10.0);
        let l = log(450, 0.001, 10.0);
        let s = align_pair(&l, &f, &AlignConfig::default()).unwrap();
        assert_eq!(s.len(), 412);
        assert_eq!(s.sample_interval(), 1.0);
    }

    #[test]
    fn unmatched_rows_are_dropped_and_short_overlap_fails() {
        let f = log(40, 0.0, 10.0);
        let mut l = log(40, 0.001, 10.0);
        l.truncate(12);
        let s = align_pair(&l, &f, &AlignConfig::default()).unwrap();
        assert_eq!(s.len(), 12);
        l.truncate(5);
        assert!(matches!(
            align_pair(&l, &f, &AlignConfig::default()),
            Err(Error::InsufficientOverlap { rows: 5, .. })
        ));
        assert!(matches!(align_pair(&[], &f, &AlignConfig::default()), Err(Error::Ingest(_))));
    }

    #[test]
    fn missing_speed_is_derived() {
        let text = "timestamp,lat,lon,speed\n0,0,0,-1\n1,0,0.0001,-1\n2,0,0.0002,\n";
        let recs = parse_sensor_log(text, &SensorLogSchema::default()).unwrap();
        assert!(recs.iter().all(|r| r.speed.is_none()));
        let s = speeds(&recs).unwrap();
        assert!((s[1] - 11.1195).abs() < 1e-3);
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn alignment_is_deterministic() {
        let f = log(60, 0.0, 9.0);
        let l = log(60, 0.0003, 11.0);
        let a = align_pair(&l, &f, &AlignConfig::default()).unwrap();
        let b = align_pair(&l, &f, &AlignConfig::default()).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }
}
