//! Floating-car-data (radar-equipped follower) CSV ingestion.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::series::{derive_acceleration, median_step, ObservationSeries, CAR_FOLLOWING_CHANNELS, CAR_FOLLOWING_UNITS};
use crate::error::{Error, Result};

/// Column mapping for an FCD file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcdSchema {
    pub time: String,
    pub v: String,
    pub dv: String,
    pub h: String,
    /// Acceleration column; derived from `v` when absent.
    pub a: Option<String>,
    /// Multiplier converting the time column to seconds.
    pub time_scale: f64,
    /// Multiplier converting both speed columns to m/s.
    pub speed_scale: f64,
}

impl Default for FcdSchema {
    fn default() -> Self {
        Self {
            time: "time".into(),
            v: "v".into(),
            dv: "dv".into(),
            h: "h".into(),
            a: None,
            time_scale: 1.0,
            speed_scale: 1.0,
        }
    }
}

pub fn ingest_fcd_csv(path: &Path, schema: &FcdSchema) -> Result<ObservationSeries> {
    let rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    ingest_fcd_reader(rdr, schema).map(|s| s.with_source(format!("fcd:{}", path.display())))
}

pub fn ingest_fcd_str(text: &str, schema: &FcdSchema) -> Result<ObservationSeries> {
    let rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    ingest_fcd_reader(rdr, schema)
}

fn ingest_fcd_reader<R: std::io::Read>(mut rdr: csv::Reader<R>, schema: &FcdSchema) -> Result<ObservationSeries> {
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ct, cv, cdv, ch) = (col(&schema.time)?, col(&schema.v)?, col(&schema.dv)?, col(&schema.h)?);
    let ca = schema.a.as_deref().map(col).transpose()?;

    let mut time = Vec::new();
    let (mut v, mut dv, mut h, mut a) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let get = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            let x: f64 = raw.parse().map_err(|_| Error::IngestRow {
                row,
                message: format!("cannot parse `{raw}` in column `{}`", &header[c]),
            })?;
            if !x.is_finite() {
                return Err(Error::IngestRow { row, message: format!("missing value in column `{}`", &header[c]) });
            }
            Ok(x)
        };
        let t = get(ct)? * schema.time_scale;
        if let Some(&prev) = time.last() {
            if t <= prev {
                return Err(Error::IngestRow { row, message: format!("time {t} does not increase") });
            }
        }
        let gap = get(ch)?;
        if gap <= 0.0 {
            return Err(Error::IngestRow { row, message: format!("non-positive gap {gap}") });
        }
        time.push(t);
        v.push(get(cv)? * schema.speed_scale);
        dv.push(get(cdv)? * schema.speed_scale);
        h.push(gap);
        if let Some(c) = ca {
            a.push(get(c)?);
        }
    }
    let dt = median_step(&time).ok_or(Error::InsufficientData { needed: 2, got: time.len() })?;
    if ca.is_none() {
        a = derive_acceleration(&v, dt);
    }
    let t_len = time.len();
    let data = DMatrix::from_fn(t_len, 4, |t, c| match c {
        0 => v[t],
        1 => a[t],
        2 => dv[t],
        _ => h[t],
    });
    ObservationSeries::new(
        CAR_FOLLOWING_CHANNELS.iter().map(|s| s.to_string()).collect(),
        CAR_FOLLOWING_UNITS.iter().map(|s| s.to_string()).collect(),
        data,
        time,
        dt,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FcdSchema {
        FcdSchema::default()
    }

    #[test]
    fn three_rows_derive_acceleration() {
        let s = ingest_fcd_str("time,v,dv,h\n0,10,0,20\n1,11,0,20\n2,11,0,20\n", &schema()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.sample_interval(), 1.0);
        let a: Vec<f64> = (0..3).map(|t| s.data()[(t, 1)]).collect();
        assert_eq!(a, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_speed_has_zero_acceleration() {
        let mut text = String::from("time,v,dv,h\n");
        for i in 0..50 {
            text.push_str(&format!("{},{},0.5,15\n", i as f64 * 0.1, 8.0));
        }
        let s = ingest_fcd_str(&text, &schema()).unwrap();
        assert!((0..s.len()).all(|t| s.data()[(t, 1)] == 0.0));
        assert!((s.sample_interval() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn errors_name_the_row() {
        let e = ingest_fcd_str("time,v,dv,h\n0,1,0,5\n1,1,0,-2\n", &schema()).unwrap_err();
        assert!(matches!(e, Error::IngestRow { row: 2, .. }), "{e}");
        let e = ingest_fcd_str("time,v,dv,h\n0,1,0,5\n0,1,0,5\n", &schema()).unwrap_err();
        assert!(matches!(e, Error::IngestRow { row: 2, .. }), "{e}");
        let e = ingest_fcd_str("time,v,dv\n0,1,0\n", &schema()).unwrap_err();
        assert!(matches!(e, Error::MissingColumn(ref c) if c == "h"));
        let e = ingest_fcd_str("time,v,dv,h\n0,1,,5\n1,1,0,5\n", &schema()).unwrap_err();
        assert!(matches!(e, Error::IngestRow { row: 1, .. }));
    }

    #[test]
    fn custom_mapping_and_given_acceleration() {
        let schema = FcdSchema {
            time: "ms".into(),
            v: "speed".into(),
            dv: "rel".into(),
            h: "dist".into(),
            a: Some("acc".into()),
            time_scale: 1e-3,
            speed_scale: 1.0,
        };
        let s = ingest_fcd_str("ms,speed,rel,dist,acc\n0,1,0,5,0.3\n100,2,0,5,0.4\n", &schema).unwrap();
        assert!((s.sample_interval() - 0.1).abs() < 1e-12);
        assert_eq!(s.data()[(0, 1)], 0.3);
    }
}
