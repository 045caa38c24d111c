use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDateTime;
use geotrack::Observation;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: String,
    lat: f64,
    lon: f64,
    max_wind: Option<f64>,
    min_pressure: Option<f64>,
    #[serde(rename = "r34NE")]
    r34_ne: Option<f64>,
    #[serde(rename = "r34SE")]
    r34_se: Option<f64>,
    #[serde(rename = "r34SW")]
    r34_sw: Option<f64>,
    #[serde(rename = "r34NW")]
    r34_nw: Option<f64>,
    #[serde(rename = "r50NE")]
    r50_ne: Option<f64>,
    #[serde(rename = "r50SE")]
    r50_se: Option<f64>,
    #[serde(rename = "r50SW")]
    r50_sw: Option<f64>,
    #[serde(rename = "r50NW")]
    r50_nw: Option<f64>,
    #[serde(rename = "r64NE")]
    r64_ne: Option<f64>,
    #[serde(rename = "r64SE")]
    r64_se: Option<f64>,
    #[serde(rename = "r64SW")]
    r64_sw: Option<f64>,
    #[serde(rename = "r64NW")]
    r64_nw: Option<f64>,
}

const TIME_FORMATS: [&str; 3] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];

fn parse_time(s: &str) -> Result<NaiveDateTime> {
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
        .with_context(|| format!("unrecognised timestamp `{s}`"))
}

/// Reads a trajectory prefix. Blank cells are missing values.
pub fn read_prefix(path: &Path) -> Result<Vec<Observation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening prefix {}", path.display()))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let r = row.with_context(|| format!("prefix row {}", i + 1))?;
        if !(-90.0..=90.0).contains(&r.lat) || !(-180.0..=180.0).contains(&r.lon) {
            bail!("prefix row {}: coordinate out of range", i + 1);
        }
        out.push(Observation {
            timestamp: parse_time(&r.timestamp)?,
            record_id: String::new(),
            status: String::new(),
            lat: r.lat,
            lon: r.lon,
            max_wind: r.max_wind,
            min_pressure: r.min_pressure,
            wind_radii: [
                r.r34_ne, r.r34_se, r.r34_sw, r.r34_nw, r.r50_ne, r.r50_se, r.r50_sw, r.r50_nw,
                r.r64_ne, r.r64_se, r.r64_sw, r.r64_nw,
            ],
        });
    }
    Ok(out)
}
