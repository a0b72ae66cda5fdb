use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A GPS fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, timestamp: f64) -> Result<Self> {
        let p = Self { lat, lon, timestamp };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Domain(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Domain(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if !self.timestamp.is_finite() {
            return Err(Error::Domain("timestamp is not finite".into()));
        }
        Ok(())
    }
}

/// Great-circle distance in meters between two fixes.
pub fn haversine_distance(a: &GeoPoint, b: &GeoPoint) -> Result<f64> {
    a.check()?;
    b.check()?;
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // rounding can push h a hair past 1 for antipodal points
    let c = 2.0 * h.sqrt().min(1.0).asin();
    Ok(EARTH_RADIUS_M * c)
}

/// A single row of a phone sensor log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorLogRecord {
    pub point: GeoPoint,
    /// m/s; `None` when the logger had no valid speed.
    pub speed: Option<f64>,
    /// Degrees.
    pub heading: Option<f64>,
}
