use std::fmt::Write as _;

use chrono::{NaiveDate, NaiveDateTime};
use log::warn;

use super::{Observation, Trajectory};
use crate::error::{Error, Result};

/// Trajectories parsed from a HURDAT2 file, plus how many storms were
/// dropped for having fewer than two fixes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCorpus {
    pub trajectories: Vec<Trajectory>,
    pub dropped_short: usize,
}

const MISSING: f64 = -999.0;
const MISSING_WIND: f64 = -99.0;

/// Parses HURDAT2 best-track text.
///
/// Each storm is a header `BASINNNYYYY, NAME, ROWS,` followed by `ROWS`
/// data lines. Blank lines are ignored. Rows may carry trailing columns
/// beyond the twelve wind radii (e.g. radius of maximum wind); those are
/// accepted and discarded.
pub fn parse_hurdat2(text: &str) -> Result<ParsedCorpus> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let mut trajectories = Vec::new();
    let mut dropped_short = 0;

    while let Some((header_line, header)) = lines.next() {
        let fields = split_fields(header);
        if fields.len() < 3 || !is_header(&fields) {
            return Err(Error::Parse {
                line: header_line,
                message: format!("expected storm header, found `{}`", header.trim()),
            });
        }
        let storm_id = fields[0].to_string();
        let name = fields[1].to_string();
        let rows: usize = fields[2].parse().map_err(|_| Error::Header {
            storm_id: storm_id.clone(),
            line: header_line,
            message: format!("row count `{}` is not an integer", fields[2]),
        })?;

        let mut observations = Vec::with_capacity(rows);
        for read in 0..rows {
            let mismatch = || Error::Header {
                storm_id: storm_id.clone(),
                line: header_line,
                message: format!("row count mismatch: header declares {rows}, found {read}"),
            };
            let (line_no, line) = match lines.peek() {
                Some(&(n, l)) if !is_header(&split_fields(l)) => (n, l),
                _ => return Err(mismatch()),
            };
            lines.next();
            observations.push(parse_row(line_no, line)?);
        }

        for pair in observations.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::Header {
                    storm_id,
                    line: header_line,
                    message: format!("timestamps not increasing at {}", pair[1].timestamp),
                });
            }
        }

        if observations.len() < 2 {
            dropped_short += 1;
            continue;
        }
        trajectories.push(Trajectory {
            storm_id,
            name,
            observations,
        });
    }

    if dropped_short > 0 {
        warn!("dropped {dropped_short} storm(s) with fewer than two fixes");
    }
    Ok(ParsedCorpus {
        trajectories,
        dropped_short,
    })
}

fn split_fields(line: &str) -> Vec<&str> {
    let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
    // Lines end with a trailing comma.
    while fields.last().is_some_and(|f| f.is_empty()) {
        fields.pop();
    }
    fields
}

fn is_header(fields: &[&str]) -> bool {
    fields
        .first()
        .and_then(|f| f.chars().next())
        .is_some_and(|c| c.is_ascii_alphabetic())
}

fn parse_row(line_no: usize, line: &str) -> Result<Observation> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    // Row fields keep empty record identifiers, so only the trailing comma is stripped.
    let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.last().is_some_and(|f| f.is_empty()) {
        fields.pop();
    }
    if fields.len() < 8 {
        return Err(err(format!(
            "expected at least 8 columns, found {}",
            fields.len()
        )));
    }

    let date = NaiveDate::parse_from_str(fields[0], "%Y%m%d")
        .map_err(|_| err(format!("invalid date `{}`", fields[0])))?;
    let hhmm: u32 = fields[1]
        .parse()
        .map_err(|_| err(format!("invalid time `{}`", fields[1])))?;
    let timestamp: NaiveDateTime = date
        .and_hms_opt(hhmm / 100, hhmm % 100, 0)
        .ok_or_else(|| err(format!("invalid time `{}`", fields[1])))?;

    let lat = parse_coordinate(fields[4], 'N', 'S').map_err(&err)?;
    let lon = parse_coordinate(fields[5], 'E', 'W').map_err(&err)?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(err(format!("latitude {lat} out of range")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(err(format!("longitude {lon} out of range")));
    }

    let number = |idx: usize, name: &str| -> Result<Option<f64>> {
        match fields.get(idx) {
            None | Some(&"") => Ok(None),
            Some(raw) => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| err(format!("non-numeric {name} `{raw}`")))?;
                Ok(if v == MISSING || v == MISSING_WIND {
                    None
                } else {
                    Some(v)
                })
            }
        }
    };

    let max_wind = number(6, "max wind")?;
    let min_pressure = number(7, "min pressure")?;
    let mut wind_radii = [None; 12];
    for (i, slot) in wind_radii.iter_mut().enumerate() {
        *slot = number(8 + i, "wind radius")?;
    }

    Ok(Observation {
        timestamp,
        record_id: fields[2].to_string(),
        status: fields[3].to_string(),
        lat,
        lon,
        max_wind,
        min_pressure,
        wind_radii,
    })
}

fn parse_coordinate(raw: &str, positive: char, negative: char) -> std::result::Result<f64, String> {
    let bad = || format!("non-numeric coordinate `{raw}`");
    let hemi = raw.chars().last().ok_or_else(bad)?;
    let magnitude: f64 = raw[..raw.len() - hemi.len_utf8()]
        .parse()
        .map_err(|_| bad())?;
    if !magnitude.is_finite() || magnitude < 0.0 {
        return Err(bad());
    }
    match hemi.to_ascii_uppercase() {
        c if c == positive => Ok(magnitude),
        c if c == negative => Ok(-magnitude),
        _ => Err(bad()),
    }
}

/// Writes trajectories back out as HURDAT2 text. Every retained numeric
/// field survives a parse round trip exactly.
pub fn write_hurdat2(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        let _ = writeln!(out, "{:>8},{:>19},{:>7},", t.storm_id, t.name, t.len());
        for o in &t.observations {
            let _ = write!(
                out,
                "{}, {}, {:>1}, {:>2}, {:>5}, {:>6}, {:>3}, {:>4},",
                o.timestamp.format("%Y%m%d"),
                o.timestamp.format("%H%M"),
                o.record_id,
                o.status,
                format_coordinate(o.lat, 'N', 'S'),
                format_coordinate(o.lon, 'E', 'W'),
                format_value(o.max_wind, MISSING_WIND),
                format_value(o.min_pressure, MISSING),
            );
            for r in &o.wind_radii {
                let _ = write!(out, " {:>4},", format_value(*r, MISSING));
            }
            out.push('\n');
        }
    }
    out
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

fn format_value(v: Option<f64>, sentinel: f64) -> String {
    format_number(v.unwrap_or(sentinel))
}

fn format_coordinate(v: f64, positive: char, negative: char) -> String {
    let hemi = if v < 0.0 { negative } else { positive };
    let magnitude = v.abs();
    if magnitude.fract() == 0.0 {
        format!("{magnitude:.1}{hemi}")
    } else {
        format!("{magnitude}{hemi}")
    }
}
