//! Ingestion of car-following recordings into canonical observation series.

mod fcd;
mod geo;
mod series;
mod smartphone;

pub use fcd::{ingest_fcd_csv, ingest_fcd_str, FcdSchema};
pub use geo::{haversine_distance, GeoPoint, SensorLogRecord, EARTH_RADIUS_M};
pub use series::{
    default_channel_names, derive_acceleration, median_step, sidecar_path, ObservationSeries, SeriesMetadata,
    CAR_FOLLOWING_CHANNELS, CAR_FOLLOWING_UNITS,
};
pub use smartphone::{
    align_pair, ingest_smartphone_pair, parse_sensor_log, parse_timestamp, read_sensor_log, AlignConfig,
    SensorLogSchema,
};
