//! Shared test fixtures.

use chrono::{Duration, NaiveDate};

use crate::corpus::{Observation, Trajectory};

pub(crate) fn observation(i: usize, lat: f64, lon: f64) -> Observation {
    let t0 = NaiveDate::from_ymd_opt(2000, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    Observation {
        timestamp: t0 + Duration::hours(6 * i as i64),
        record_id: String::new(),
        status: "TS".into(),
        lat,
        lon,
        max_wind: Some(40.0 + i as f64),
        min_pressure: Some(1000.0 - i as f64),
        wind_radii: [None; 12],
    }
}

/// A diagonal track of `len` fixes.
pub(crate) fn track(id: usize, len: usize) -> Trajectory {
    from_points(
        &format!("AL{id:04}"),
        &(0..len)
            .map(|i| (10.0 + i as f64 * 0.5, -50.0 - i as f64 * 0.5))
            .collect::<Vec<_>>(),
    )
}

pub(crate) fn from_points(id: &str, points: &[(f64, f64)]) -> Trajectory {
    Trajectory {
        storm_id: id.to_string(),
        name: "TEST".into(),
        observations: points
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| observation(i, lat, lon))
            .collect(),
    }
}

/// Cell coordinates of u0..u5 in the two-trajectory toy corpus.
pub(crate) const TOY_NODES: [(f64, f64); 6] = [
    (10.0, -50.0),
    (10.5, -50.5),
    (11.0, -49.0),
    (11.0, -51.0),
    (11.5, -51.5),
    (12.0, -52.0),
];

/// u0→u1→u3→u4→u5 and u2→u3→u4→u5.
pub(crate) fn toy_corpus() -> Vec<Trajectory> {
    let n = TOY_NODES;
    vec![
        from_points("TOY1", &[n[0], n[1], n[3], n[4], n[5]]),
        from_points("TOY2", &[n[2], n[3], n[4], n[5]]),
    ]
}
