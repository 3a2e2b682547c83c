//! Spherical-earth geometry used for route corridors.
//!
//! Everything here is generic over [`num_traits::Float`] so the same code
//! serves `f64` (the engine default) and `f32` callers. Distances are in
//! kilometres, angles in decimal degrees at the API boundary.

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Mean earth radius in kilometres (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

fn lit<T: Float>(v: f64) -> T {
    T::from(v).expect("float literal representable in T")
}

/// A latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geocode<T> {
    pub lat: T,
    pub lon: T,
}

impl<T: Float> Geocode<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Self { lat, lon }
    }

    /// True when the coordinates lie in `[-90, 90] x [-180, 180]`.
    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && self.lat.abs() <= lit(90.0)
            && self.lon.abs() <= lit(180.0)
    }

    fn radians(&self) -> (T, T) {
        (self.lat.to_radians(), self.lon.to_radians())
    }
}

/// Great-circle distance between two points (haversine).
pub fn haversine_km<T: Float>(a: Geocode<T>, b: Geocode<T>) -> T {
    let (lat1, lon1) = a.radians();
    let (lat2, lon2) = b.radians();
    let half = lit::<T>(0.5);
    let dlat = (lat2 - lat1) * half;
    let dlon = (lon2 - lon1) * half;
    let h = dlat.sin().powi(2) + lat1.cos() * lat2.cos() * dlon.sin().powi(2);
    let h = h.min(T::one()).max(T::zero());
    lit::<T>(2.0) * lit::<T>(EARTH_RADIUS_KM) * h.sqrt().asin()
}

/// Initial bearing from `a` towards `b`, radians.
fn initial_bearing<T: Float>(a: Geocode<T>, b: Geocode<T>) -> T {
    let (lat1, lon1) = a.radians();
    let (lat2, lon2) = b.radians();
    let dlon = lon2 - lon1;
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x)
}

/// Distance from `p` to the great-circle arc `a`-`b`.
///
/// Uses the cross-track / along-track decomposition; when the foot of the
/// perpendicular falls outside the arc the nearer endpoint wins.
pub fn distance_to_segment_km<T: Float>(p: Geocode<T>, a: Geocode<T>, b: Geocode<T>) -> T {
    let r = lit::<T>(EARTH_RADIUS_KM);
    let d_ap = haversine_km(a, p);
    let d_ab = haversine_km(a, b);
    if d_ab <= T::epsilon() {
        return d_ap;
    }
    let d_bp = haversine_km(b, p);
    let ang_ap = d_ap / r;
    let theta_ap = initial_bearing(a, p);
    let theta_ab = initial_bearing(a, b);
    let cross = (ang_ap.sin() * (theta_ap - theta_ab).sin())
        .min(T::one())
        .max(-T::one())
        .asin();
    // Signed along-track angle; negative means p projects behind a.
    let along = {
        let c = (ang_ap.cos() / cross.cos()).min(T::one()).max(-T::one());
        let mag = c.acos();
        if (theta_ap - theta_ab).cos() < T::zero() {
            -mag
        } else {
            mag
        }
    };
    if along < T::zero() || along * r > d_ab {
        d_ap.min(d_bp)
    } else {
        (cross.abs() * r).min(d_ap).min(d_bp)
    }
}

/// Minimum distance from `p` to any segment of `polyline`.
///
/// A single-point polyline degenerates to point distance; an empty one
/// returns infinity.
pub fn distance_to_polyline_km<T: Float>(p: Geocode<T>, polyline: &[Geocode<T>]) -> T {
    match polyline {
        [] => T::infinity(),
        [only] => haversine_km(p, *only),
        _ => polyline
            .windows(2)
            .map(|w| distance_to_segment_km(p, w[0], w[1]))
            .fold(T::infinity(), T::min),
    }
}

/// Point at fraction `f` along the great circle from `a` to `b`.
pub fn interpolate<T: Float>(a: Geocode<T>, b: Geocode<T>, f: T) -> Geocode<T> {
    let (lat1, lon1) = a.radians();
    let (lat2, lon2) = b.radians();
    let delta = haversine_km(a, b) / lit(EARTH_RADIUS_KM);
    if delta <= T::epsilon() {
        return a;
    }
    let sa = ((T::one() - f) * delta).sin() / delta.sin();
    let sb = (f * delta).sin() / delta.sin();
    let x = sa * lat1.cos() * lon1.cos() + sb * lat2.cos() * lon2.cos();
    let y = sa * lat1.cos() * lon1.sin() + sb * lat2.cos() * lon2.sin();
    let z = sa * lat1.sin() + sb * lat2.sin();
    let lat = z.atan2((x * x + y * y).sqrt());
    let lon = y.atan2(x);
    Geocode::new(lat.to_degrees(), lon.to_degrees())
}

/// Great-circle midpoint.
pub fn midpoint<T: Float>(a: Geocode<T>, b: Geocode<T>) -> Geocode<T> {
    interpolate(a, b, lit(0.5))
}
