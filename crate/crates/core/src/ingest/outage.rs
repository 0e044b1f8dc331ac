//! Outage snapshots, event allocation tables, and event consolidation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::time::{format_timestamp, hour_of, parse_timestamp};
use super::weather::write_record;
use crate::error::{Diagnostics, Error, Result};

/// One 15-minute reading of an event's affected-customer count.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageSnapshot {
    pub event_id: String,
    /// Seconds since the epoch, UTC.
    pub observed_at: i64,
    pub customers: u64,
}

/// One row of the offline event-to-tract allocation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub event_id: String,
    pub tract_id: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutageEvent {
    pub event_id: String,
    pub start_hour: i64,
    pub end_hour: i64,
    pub max_customers: u64,
    /// (tract id, fraction); fractions sum to one.
    pub allocations: Vec<(String, f64)>,
}

const SNAPSHOT_SOURCE: &str = "outage_snapshots.csv";
const ALLOCATION_SOURCE: &str = "event_allocations.csv";

fn column_index(headers: &csv::StringRecord, source: &str, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::format(source, format!("missing column {name:?}")))
}

pub(crate) fn read_rows<R: Read>(
    input: R,
    source: &str,
    columns: &[&str],
) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(source, format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::format(source, "missing header"));
    }
    let idx = columns
        .iter()
        .map(|c| column_index(&headers, source, c))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::row(source, e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((
            line,
            idx.iter().map(|&i| record.get(i).unwrap_or("").to_string()).collect(),
        ));
    }
    Ok(rows)
}

pub fn parse_snapshots<R: Read>(input: R) -> Result<Vec<OutageSnapshot>> {
    read_rows(input, SNAPSHOT_SOURCE, &["event_id", "observed_at", "customers"])?
        .into_iter()
        .map(|(line, cells)| {
            let observed_at = parse_timestamp(&cells[1]).ok_or_else(|| {
                Error::row(SNAPSHOT_SOURCE, line, format!("bad timestamp {:?}", cells[1]))
            })?;
            let customers = cells[2].parse().map_err(|_| {
                Error::row(
                    SNAPSHOT_SOURCE,
                    line,
                    format!("customers must be a nonnegative integer, got {:?}", cells[2]),
                )
            })?;
            if cells[0].is_empty() {
                return Err(Error::row(SNAPSHOT_SOURCE, line, "empty event id"));
            }
            Ok(OutageSnapshot {
                event_id: cells[0].clone(),
                observed_at,
                customers,
            })
        })
        .collect()
}

pub fn write_snapshots<W: Write>(out: W, snapshots: &[OutageSnapshot]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    write_record(&mut writer, &["event_id", "observed_at", "customers"])?;
    for s in snapshots {
        write_record(
            &mut writer,
            &[
                s.event_id.clone(),
                format_timestamp(s.observed_at),
                s.customers.to_string(),
            ],
        )?;
    }
    writer.flush().map_err(|e| Error::io(SNAPSHOT_SOURCE, e))
}

pub fn parse_allocations<R: Read>(input: R) -> Result<Vec<Allocation>> {
    read_rows(input, ALLOCATION_SOURCE, &["event_id", "tract_id", "fraction"])?
        .into_iter()
        .map(|(line, cells)| {
            let fraction: f64 = cells[2].parse().map_err(|_| {
                Error::row(ALLOCATION_SOURCE, line, format!("malformed fraction {:?}", cells[2]))
            })?;
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::row(
                    ALLOCATION_SOURCE,
                    line,
                    format!("fraction {fraction} outside (0, 1]"),
                ));
            }
            Ok(Allocation {
                event_id: cells[0].clone(),
                tract_id: cells[1].clone(),
                fraction,
            })
        })
        .collect()
}

pub fn write_allocations<W: Write>(out: W, allocations: &[Allocation]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    write_record(&mut writer, &["event_id", "tract_id", "fraction"])?;
    for a in allocations {
        write_record(
            &mut writer,
            &[a.event_id.clone(), a.tract_id.clone(), a.fraction.to_string()],
        )?;
    }
    writer.flush().map_err(|e| Error::io(ALLOCATION_SOURCE, e))
}

/// Collapses snapshots into one event per id.
///
/// The event spans the floor-to-hour of its first and last snapshot and
/// carries the peak customer count. Events peaking at one customer or fewer
/// are dropped. Events absent from the allocation table are skipped with a
/// warning; allocation fractions that do not sum to one are renormalized
/// (with a warning when they are off by more than 1e-6). Output is ordered by
/// event id.
pub fn consolidate_events(
    snapshots: &[OutageSnapshot],
    allocations: &[Allocation],
    diag: &mut Diagnostics,
) -> Vec<OutageEvent> {
    let mut table: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
    for a in allocations {
        table
            .entry(a.event_id.as_str())
            .or_default()
            .push((a.tract_id.clone(), a.fraction));
    }

    // (first, last, max) per event.
    let mut spans: BTreeMap<&str, (i64, i64, u64)> = BTreeMap::new();
    for s in snapshots {
        spans
            .entry(s.event_id.as_str())
            .and_modify(|(lo, hi, max)| {
                *lo = (*lo).min(s.observed_at);
                *hi = (*hi).max(s.observed_at);
                *max = (*max).max(s.customers);
            })
            .or_insert((s.observed_at, s.observed_at, s.customers));
    }

    let mut events = Vec::new();
    for (id, (first, last, max_customers)) in spans {
        if max_customers <= 1 {
            continue;
        }
        let Some(rows) = table.get(id) else {
            diag.warn(format!("event {id} has no tract allocation; skipped"));
            continue;
        };
        let total: f64 = rows.iter().map(|(_, f)| f).sum();
        let deviation = (total - 1.0).abs();
        let allocations = if deviation > 1e-9 {
            if deviation > 1e-6 {
                diag.warn(format!(
                    "event {id} allocation fractions sum to {total}; renormalized"
                ));
            }
            rows.iter().map(|(t, f)| (t.clone(), f / total)).collect()
        } else {
            rows.clone()
        };
        events.push(OutageEvent {
            event_id: id.to_string(),
            start_hour: hour_of(first),
            end_hour: hour_of(last),
            max_customers,
            allocations,
        });
    }
    events
}
