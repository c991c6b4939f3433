//! Great-circle geometry on a spherical Earth.

use crate::domain::{GeoPoint, JobRecord};

/// Mean Earth radius in kilometres (spherical approximation).
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two points in kilometres, by the haversine
/// formula: `2R asin sqrt(sin^2(dlat/2) + cos(lat1) cos(lat2) sin^2(dlng/2))`.
///
/// Symmetric, zero for identical points, and within 0.5% of the WGS84
/// ellipsoidal distance for terrestrial routes.
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlng = (b.lng - a.lng).to_radians();

    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng / 2.0).sin().powi(2);
    // h can exceed 1 by rounding for near-antipodal points; clamp before asin.
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Collection-to-delivery distance of a job, in kilometres.
pub fn crow_distance_km(job: &JobRecord) -> f64 {
    haversine_km(&job.collection, &job.delivery)
}
