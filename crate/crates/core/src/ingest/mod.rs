//! Parsing and cleaning of the raw weather, station, outage and tract inputs.

mod geo;
mod outage;
pub mod time;
mod tracts;
mod weather;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub use geo::{haversine_km, station_distances, EARTH_RADIUS_KM};
pub use outage::{
    consolidate_events, parse_allocations, parse_snapshots, write_allocations, write_snapshots,
    Allocation, OutageEvent, OutageSnapshot,
};
pub use tracts::{
    parse_stations, parse_tracts, write_stations, write_tracts, Estimate, StationLocation,
    TractProfile, INFRA_TYPES, N_INFRA,
};
pub use weather::{
    compute_stats, fill_missing, normalize, parse_weather, read_stats, write_stats, write_weather,
    ChannelStats, HourRange, WeatherGrid, WeatherObservation, WeatherSchema, DEFAULT_CHANNELS,
    N_CHANNELS,
};
pub use weather::{
    DEW_POINT, HUMIDITY, PRECIPITATION, PRESSURE, SKY_COVER, TEMPERATURE, VISIBILITY,
    WIND_DIRECTION, WIND_GUST, WIND_SPEED,
};

use crate::error::{Error, Result};

pub const WEATHER_FILE: &str = "weather.csv";
pub const STATIONS_FILE: &str = "stations.csv";
pub const SNAPSHOTS_FILE: &str = "outage_snapshots.csv";
pub const ALLOCATIONS_FILE: &str = "event_allocations.csv";
pub const TRACTS_FILE: &str = "tracts.csv";

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// The five raw inputs of a data directory, parsed but not yet cleaned.
#[derive(Debug, Clone)]
pub struct RawData {
    pub weather: Vec<WeatherObservation>,
    pub stations: Vec<StationLocation>,
    pub snapshots: Vec<OutageSnapshot>,
    pub allocations: Vec<Allocation>,
    pub tracts: Vec<TractProfile>,
}

impl RawData {
    pub fn load(dir: &Path, schema: &WeatherSchema) -> Result<Self> {
        Ok(Self {
            weather: parse_weather(open(&dir.join(WEATHER_FILE))?, schema)?,
            stations: parse_stations(open(&dir.join(STATIONS_FILE))?)?,
            snapshots: parse_snapshots(open(&dir.join(SNAPSHOTS_FILE))?)?,
            allocations: parse_allocations(open(&dir.join(ALLOCATIONS_FILE))?)?,
            tracts: parse_tracts(open(&dir.join(TRACTS_FILE))?)?,
        })
    }
}

pub(crate) use outage::read_rows;
pub(crate) use weather::write_record as write_csv_record;
