//! Timestamp helpers. All times are UTC; hours are counted from the Unix epoch.

use chrono::{DateTime, NaiveDateTime};

const FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d %H:%M:%S",
];

/// Parses an ISO-8601 timestamp into seconds since the epoch.
///
/// A trailing `Z` or an explicit UTC offset is accepted; naive timestamps are
/// taken as UTC.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    let naive = text.strip_suffix('Z').unwrap_or(text);
    FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(naive, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Floor-to-hour bucketing.
pub fn hour_of(seconds: i64) -> i64 {
    seconds.div_euclid(3600)
}

pub fn format_hour(hour: i64) -> String {
    format_timestamp(hour * 3600)
}

/// Formats seconds since the epoch as `YYYY-MM-DDTHH:MM`, with seconds
/// appended only when non-zero.
pub fn format_timestamp(seconds: i64) -> String {
    let dt = DateTime::from_timestamp(seconds, 0).expect("timestamp in chrono range");
    if seconds.rem_euclid(60) == 0 {
        dt.format("%Y-%m-%dT%H:%M").to_string()
    } else {
        dt.format("%Y-%m-%dT%H:%M:%S").to_string()
    }
}
