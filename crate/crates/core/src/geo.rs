//! Local-plane geodesy: equirectangular projection around a fixed reference.
//!
//! Scenarios span well under 2 km, so a flat-earth local tangent plane is
//! accurate to better than 0.01% here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default scenario reference point (Barcelona area).
pub const REFERENCE: GeoPoint = GeoPoint {
    lat: 41.4,
    lon: 2.15,
};

/// A WGS-style latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    /// Latitude in degrees, [-90, 90].
    pub lat: f64,
    /// Longitude in degrees, [-180, 180].
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(Error::InvalidCoordinate(format!("latitude {lat}")));
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(Error::InvalidCoordinate(format!("longitude {lon}")));
        }
        Ok(Self { lat, lon })
    }
}

/// Project `p` into the local east/north metric plane anchored at `ref_point`.
///
/// Returns (x meters east, y meters north). Valid for points within about a
/// degree of the reference.
pub fn project(p: GeoPoint, ref_point: GeoPoint) -> Result<(f64, f64)> {
    if (p.lat - ref_point.lat).abs() >= 1.0 || (p.lon - ref_point.lon).abs() >= 1.0 {
        return Err(Error::InvalidCoordinate(format!(
            "point ({}, {}) too far from reference ({}, {})",
            p.lat, p.lon, ref_point.lat, ref_point.lon
        )));
    }
    let x = (p.lon - ref_point.lon).to_radians() * EARTH_RADIUS_M * ref_point.lat.to_radians().cos();
    let y = (p.lat - ref_point.lat).to_radians() * EARTH_RADIUS_M;
    Ok((x, y))
}

/// Inverse of [`project`]: local east/north meters back to lat/lon degrees.
pub fn unproject(x: f64, y: f64, ref_point: GeoPoint) -> GeoPoint {
    let lat = ref_point.lat + (y / EARTH_RADIUS_M).to_degrees();
    let lon =
        ref_point.lon + (x / (EARTH_RADIUS_M * ref_point.lat.to_radians().cos())).to_degrees();
    GeoPoint { lat, lon }
}
