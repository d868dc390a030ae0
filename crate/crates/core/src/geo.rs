//! Great-circle geometry helpers.

use crate::num::{real, Real};

/// Mean Earth radius in kilometers (IUGG value).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Length of one degree of latitude in kilometers (~111.195 km).
pub const KM_PER_DEGREE_LAT: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Haversine distance in kilometers between two (lat, lon) points in degrees.
pub fn haversine_km<T: Real>(a: (T, T), b: (T, T)) -> T {
    let rad = real::<T>(std::f64::consts::PI / 180.0);
    let (lat1, lon1) = (a.0 * rad, a.1 * rad);
    let (lat2, lon2) = (b.0 * rad, b.1 * rad);
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let half = real::<T>(0.5);
    let s = (dlat * half).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * half).sin().powi(2);
    let c = real::<T>(2.0) * s.sqrt().min(T::one()).asin();
    real::<T>(EARTH_RADIUS_KM) * c
}
