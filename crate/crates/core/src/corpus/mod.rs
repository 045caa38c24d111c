//! Storm-track ingestion: HURDAT2 parsing, length-stratified splits,
//! input/target pair sampling and a synthetic corpus generator.

mod hurdat2;
mod pairs;
mod split;
mod synthetic;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

pub use hurdat2::{parse_hurdat2, write_hurdat2, ParsedCorpus};
pub use pairs::{pair_at, sample_pairs, ExamplePair, PairSource, MAX_INPUT_STEPS};
pub use split::{length_strata, stratified_split, SplitManifest, SplitRatios, SplitSet, Strata};
pub use synthetic::{generate_synthetic, LatentGraph, SyntheticCorpus};

/// Number of numeric weather features per observation.
pub const WEATHER_DIM: usize = 14;

/// Feature order of [`Observation::features`].
pub const WEATHER_FEATURES: [&str; WEATHER_DIM] = [
    "max_wind",
    "min_pressure",
    "r34_ne",
    "r34_se",
    "r34_sw",
    "r34_nw",
    "r50_ne",
    "r50_se",
    "r50_sw",
    "r50_nw",
    "r64_ne",
    "r64_se",
    "r64_sw",
    "r64_nw",
];

/// A geographic position in decimal degrees (south and west negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// Euclidean distance in raw degree space.
    pub fn degree_distance(&self, other: &LatLon) -> f64 {
        (self.lat - other.lat).hypot(self.lon - other.lon)
    }
}

/// One best-track fix. Missing numeric fields are `None` and are never
/// read as numbers downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: NaiveDateTime,
    /// Single-character record identifier (`L` for landfall, etc.), often blank.
    pub record_id: String,
    pub status: String,
    pub lat: f64,
    pub lon: f64,
    /// Knots.
    pub max_wind: Option<f64>,
    /// Millibars.
    pub min_pressure: Option<f64>,
    /// Nautical miles: 34/50/64-kt radii, each in NE/SE/SW/NW order.
    pub wind_radii: [Option<f64>; 12],
}

impl Observation {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }

    /// Weather vector in [`WEATHER_FEATURES`] order.
    pub fn features(&self) -> [Option<f64>; WEATHER_DIM] {
        let mut out = [None; WEATHER_DIM];
        out[0] = self.max_wind;
        out[1] = self.min_pressure;
        out[2..].copy_from_slice(&self.wind_radii);
        out
    }

    pub fn missing_mask(&self) -> [bool; WEATHER_DIM] {
        self.features().map(|f| f.is_none())
    }
}

/// One storm track, strictly increasing in time, at least two fixes long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub storm_id: String,
    pub name: String,
    pub observations: Vec<Observation>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = LatLon> + '_ {
        self.observations.iter().map(Observation::position)
    }
}
