//! Great-circle distances between tract centroids and weather stations.

use super::tracts::{check_coordinates, StationLocation};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Haversine distance in kilometres between two (lat, lon) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Distance from `centroid` to every station, in station order.
pub fn station_distances(centroid: (f64, f64), stations: &[StationLocation]) -> Result<Vec<f64>> {
    check_coordinates(centroid.0, centroid.1).map_err(Error::Data)?;
    stations
        .iter()
        .map(|s| {
            check_coordinates(s.lat, s.lon).map_err(Error::Data)?;
            Ok(haversine_km(centroid, (s.lat, s.lon)))
        })
        .collect()
}
