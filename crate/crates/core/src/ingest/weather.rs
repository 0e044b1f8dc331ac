//! Hourly station weather: parsing, gap filling and z-score normalization.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use super::time::{format_hour, hour_of, parse_timestamp};
use crate::error::{Diagnostics, Error, Result};

pub const N_CHANNELS: usize = 10;

pub const TEMPERATURE: usize = 0;
pub const HUMIDITY: usize = 1;
pub const PRESSURE: usize = 2;
pub const WIND_SPEED: usize = 3;
pub const WIND_DIRECTION: usize = 4;
pub const WIND_GUST: usize = 5;
pub const VISIBILITY: usize = 6;
pub const PRECIPITATION: usize = 7;
pub const DEW_POINT: usize = 8;
pub const SKY_COVER: usize = 9;

/// Column names and units of the default schema, in channel order.
pub const DEFAULT_CHANNELS: [(&str, &str); N_CHANNELS] = [
    ("tmpc", "air temperature, degC"),
    ("relh", "relative humidity, %"),
    ("alti", "pressure altimeter, inHg"),
    ("sknt", "wind speed, kt"),
    ("drct", "wind direction, deg"),
    ("gust", "wind gust, kt"),
    ("vsby", "visibility, mi"),
    ("p01i", "1-hour precipitation, in"),
    ("dwpc", "dew point, degC"),
    ("skyc", "sky cover fraction"),
];

/// Ordered weather channels and which of them are interpolated in time.
///
/// Channels outside the interpolation group are zero-filled when missing.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSchema {
    names: Vec<String>,
    interpolated: [bool; N_CHANNELS],
}

impl Default for WeatherSchema {
    fn default() -> Self {
        let names = DEFAULT_CHANNELS.iter().map(|(n, _)| n.to_string()).collect();
        let mut interpolated = [false; N_CHANNELS];
        for c in [TEMPERATURE, HUMIDITY, PRESSURE, DEW_POINT] {
            interpolated[c] = true;
        }
        Self {
            names,
            interpolated,
        }
    }
}

impl WeatherSchema {
    /// Builds a schema from exactly ten distinct names and the channel
    /// indices to interpolate.
    pub fn new(names: Vec<String>, interpolation_group: &[usize]) -> Result<Self> {
        if names.len() != N_CHANNELS {
            return Err(Error::Config(format!(
                "weather schema needs {N_CHANNELS} channels, got {}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate weather channel {n:?}")));
            }
            if n == "station" || n == "valid" {
                return Err(Error::Config(format!("reserved channel name {n:?}")));
            }
        }
        let mut interpolated = [false; N_CHANNELS];
        for &c in interpolation_group {
            if c >= N_CHANNELS {
                return Err(Error::Config(format!("interpolation channel {c} out of range")));
            }
            interpolated[c] = true;
        }
        Ok(Self {
            names,
            interpolated,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_interpolated(&self, channel: usize) -> bool {
        self.interpolated[channel]
    }
}

/// One station-hour of weather. Missing channels hold 0.0 and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherObservation {
    pub station_id: String,
    pub hour: i64,
    pub channels: [f64; N_CHANNELS],
    pub missing_mask: [bool; N_CHANNELS],
}

const WEATHER_SOURCE: &str = "weather.csv";

/// Parses `weather.csv`. Duplicate (station, hour) rows keep the later row.
///
/// Records come back sorted by station, then hour.
pub fn parse_weather<R: Read>(input: R, schema: &WeatherSchema) -> Result<Vec<WeatherObservation>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(WEATHER_SOURCE, format!("unreadable header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(WEATHER_SOURCE, format!("missing column {name:?}")))
    };
    let station_col = find("station")?;
    let valid_col = find("valid")?;
    let channel_cols = schema
        .names()
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let mut by_key: BTreeMap<(String, i64), WeatherObservation> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::row(WEATHER_SOURCE, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let station = record.get(station_col).unwrap_or("").to_string();
        if station.is_empty() {
            return Err(Error::row(WEATHER_SOURCE, line, "empty station id"));
        }
        let valid = record.get(valid_col).unwrap_or("");
        let seconds = parse_timestamp(valid)
            .ok_or_else(|| Error::row(WEATHER_SOURCE, line, format!("bad timestamp {valid:?}")))?;
        let mut channels = [0.0; N_CHANNELS];
        let mut missing_mask = [false; N_CHANNELS];
        for (c, &col) in channel_cols.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                missing_mask[c] = true;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::row(
                    WEATHER_SOURCE,
                    line,
                    format!("malformed value {cell:?} in column {:?}", schema.names()[c]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::row(WEATHER_SOURCE, line, format!("non-finite value {cell:?}")));
            }
            channels[c] = v;
        }
        let hour = hour_of(seconds);
        by_key.insert(
            (station.clone(), hour),
            WeatherObservation {
                station_id: station,
                hour,
                channels,
                missing_mask,
            },
        );
    }
    Ok(by_key.into_values().collect())
}

pub fn write_weather<W: Write>(
    out: W,
    schema: &WeatherSchema,
    observations: &[WeatherObservation],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["station".to_string(), "valid".to_string()];
    header.extend(schema.names().iter().cloned());
    write_record(&mut writer, &header)?;
    for obs in observations {
        let mut row = vec![obs.station_id.clone(), format_hour(obs.hour)];
        for c in 0..N_CHANNELS {
            row.push(if obs.missing_mask[c] {
                String::new()
            } else {
                obs.channels[c].to_string()
            });
        }
        write_record(&mut writer, &row)?;
    }
    writer.flush().map_err(|e| Error::io(WEATHER_SOURCE, e))
}

pub(crate) fn write_record<W: Write, S: AsRef<[u8]>>(
    writer: &mut csv::Writer<W>,
    row: &[S],
) -> Result<()> {
    writer
        .write_record(row)
        .map_err(|e| Error::Data(format!("csv write failed: {e}")))
}

/// A contiguous span of hours `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HourRange {
    pub start: i64,
    pub len: usize,
}

impl HourRange {
    pub fn new(start: i64, len: usize) -> Self {
        Self { start, len }
    }

    /// The smallest range covering every observation.
    pub fn covering(observations: &[WeatherObservation]) -> Option<Self> {
        let lo = observations.iter().map(|o| o.hour).min()?;
        let hi = observations.iter().map(|o| o.hour).max()?;
        Some(Self::new(lo, (hi - lo + 1) as usize))
    }

    pub fn end(&self) -> i64 {
        self.start + self.len as i64
    }

    pub fn contains(&self, hour: i64) -> bool {
        hour >= self.start && hour < self.end()
    }

    pub fn index(&self, hour: i64) -> Option<usize> {
        self.contains(hour).then(|| (hour - self.start) as usize)
    }

    pub fn hours(&self) -> impl Iterator<Item = i64> {
        self.start..self.end()
    }
}

/// Gap-free weather for a fixed station order over an hour range.
///
/// Values are laid out hour-major: `[hour][station][channel]`, so one hour's
/// slice is exactly the per-station channel block of a base feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherGrid {
    pub hours: HourRange,
    pub stations: Vec<String>,
    values: Vec<f64>,
}

impl WeatherGrid {
    pub fn from_values(hours: HourRange, stations: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != hours.len * stations.len() * N_CHANNELS {
            return Err(Error::Config(format!(
                "weather grid needs {} values, got {}",
                hours.len * stations.len() * N_CHANNELS,
                values.len()
            )));
        }
        Ok(Self {
            hours,
            stations,
            values,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn value(&self, hour_index: usize, station: usize, channel: usize) -> f64 {
        self.values[(hour_index * self.stations.len() + station) * N_CHANNELS + channel]
    }

    /// All stations' channels at one hour, concatenated in station order.
    pub fn hour_slice(&self, hour_index: usize) -> &[f64] {
        let width = self.stations.len() * N_CHANNELS;
        &self.values[hour_index * width..(hour_index + 1) * width]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Expands the grid back into complete observations.
    pub fn to_observations(&self) -> Vec<WeatherObservation> {
        let mut out = Vec::with_capacity(self.hours.len * self.stations.len());
        for (s, station) in self.stations.iter().enumerate() {
            for (h, hour) in self.hours.hours().enumerate() {
                let mut channels = [0.0; N_CHANNELS];
                for (c, v) in channels.iter_mut().enumerate() {
                    *v = self.value(h, s, c);
                }
                out.push(WeatherObservation {
                    station_id: station.clone(),
                    hour,
                    channels,
                    missing_mask: [false; N_CHANNELS],
                });
            }
        }
        out
    }
}

/// Fills every gap in the station series over `hours`.
///
/// Interpolation-group channels are linearly interpolated in time between the
/// nearest reported values of the same station, extended flat past the ends.
/// Other channels are zero-filled where a present station left them empty.
/// Hours at which a station did not report at all take the mean of the
/// stations that did. Observations for stations outside `stations` or hours
/// outside `hours` are ignored.
pub fn fill_missing(
    observations: &[WeatherObservation],
    stations: &[String],
    hours: HourRange,
    schema: &WeatherSchema,
) -> Result<WeatherGrid> {
    let n_st = stations.len();
    let n_h = hours.len;
    if n_st == 0 || n_h == 0 {
        return Err(Error::Data("no stations or no hours to fill".into()));
    }
    let station_index: HashMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    // cells[(s, c)][h]: Some(v) once resolved.
    let mut cells = vec![vec![None::<f64>; n_h]; n_st * N_CHANNELS];
    let mut present = vec![vec![false; n_h]; n_st];
    let mut reported = [false; N_CHANNELS];
    for obs in observations {
        let (Some(&s), Some(h)) = (station_index.get(obs.station_id.as_str()), hours.index(obs.hour))
        else {
            continue;
        };
        present[s][h] = true;
        for c in 0..N_CHANNELS {
            if !obs.missing_mask[c] {
                cells[s * N_CHANNELS + c][h] = Some(obs.channels[c]);
                reported[c] = true;
            }
        }
    }
    if let Some(c) = reported.iter().position(|r| !r) {
        return Err(Error::Data(format!(
            "weather channel {:?} is missing at every station for every hour",
            schema.names()[c]
        )));
    }

    // Within-station pass over the hours the station reported.
    for s in 0..n_st {
        for c in 0..N_CHANNELS {
            let series = &mut cells[s * N_CHANNELS + c];
            if schema.is_interpolated(c) {
                let known: Vec<(usize, f64)> = series
                    .iter()
                    .enumerate()
                    .filter_map(|(h, v)| v.map(|v| (h, v)))
                    .collect();
                if known.is_empty() {
                    continue;
                }
                for h in 0..n_h {
                    if present[s][h] && series[h].is_none() {
                        series[h] = Some(interpolate_at(&known, h));
                    }
                }
            } else {
                for h in 0..n_h {
                    if present[s][h] && series[h].is_none() {
                        series[h] = Some(0.0);
                    }
                }
            }
        }
    }

    // Cross-station pass: absent or unresolved cells take the hour's mean.
    let mut filled = cells.clone();
    for c in 0..N_CHANNELS {
        for h in 0..n_h {
            let (sum, count) = (0..n_st)
                .filter_map(|s| cells[s * N_CHANNELS + c][h])
                .fold((0.0, 0usize), |(a, n), v| (a + v, n + 1));
            if count == 0 {
                continue;
            }
            let mean = sum / count as f64;
            for s in 0..n_st {
                let cell = &mut filled[s * N_CHANNELS + c][h];
                if cell.is_none() {
                    *cell = Some(mean);
                }
            }
        }
    }

    // Hours where no station had a value: fall back to the station's own
    // series (interpolated channels) or zero.
    for c in 0..N_CHANNELS {
        let network: Vec<(usize, f64)> = (0..n_h)
            .filter_map(|h| {
                let vals: Vec<f64> = (0..n_st).filter_map(|s| filled[s * N_CHANNELS + c][h]).collect();
                (!vals.is_empty()).then(|| (h, vals.iter().sum::<f64>() / vals.len() as f64))
            })
            .collect();
        for s in 0..n_st {
            let series = &mut filled[s * N_CHANNELS + c];
            if series.iter().all(Option::is_some) {
                continue;
            }
            let known: Vec<(usize, f64)> = series
                .iter()
                .enumerate()
                .filter_map(|(h, v)| v.map(|v| (h, v)))
                .collect();
            for h in 0..n_h {
                if series[h].is_some() {
                    continue;
                }
                series[h] = Some(if !schema.is_interpolated(c) {
                    0.0
                } else if !known.is_empty() {
                    interpolate_at(&known, h)
                } else {
                    interpolate_at(&network, h)
                });
            }
        }
    }

    let mut values = vec![0.0; n_h * n_st * N_CHANNELS];
    for s in 0..n_st {
        for c in 0..N_CHANNELS {
            for (h, v) in filled[s * N_CHANNELS + c].iter().enumerate() {
                values[(h * n_st + s) * N_CHANNELS + c] = v.expect("every cell resolved");
            }
        }
    }
    WeatherGrid::from_values(hours, stations.to_vec(), values)
}

/// Linear interpolation over sorted `(index, value)` knots with flat ends.
fn interpolate_at(known: &[(usize, f64)], at: usize) -> f64 {
    let pos = known.partition_point(|&(h, _)| h < at);
    if pos < known.len() && known[pos].0 == at {
        return known[pos].1;
    }
    match (pos.checked_sub(1).map(|i| known[i]), known.get(pos)) {
        (Some((h0, v0)), Some(&(h1, v1))) => {
            let t = (at - h0) as f64 / (h1 - h0) as f64;
            v0 + t * (v1 - v0)
        }
        (Some((_, v0)), None) => v0,
        (None, Some(&(_, v1))) => v1,
        (None, None) => unreachable!("interpolate_at needs at least one knot"),
    }
}

/// Per-channel mean and standard deviation used for z-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; N_CHANNELS],
    pub std: [f64; N_CHANNELS],
}

/// Two-pass population mean/std over every station-hour of `grid`.
///
/// A zero-variance channel gets std = 1 and a warning.
pub fn compute_stats(grid: &WeatherGrid, schema: &WeatherSchema, diag: &mut Diagnostics) -> ChannelStats {
    let n = (grid.hours.len * grid.n_stations()) as f64;
    let mut mean = [0.0; N_CHANNELS];
    let mut std = [0.0; N_CHANNELS];
    for row in grid.values().chunks_exact(N_CHANNELS) {
        for c in 0..N_CHANNELS {
            mean[c] += row[c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for row in grid.values().chunks_exact(N_CHANNELS) {
        for c in 0..N_CHANNELS {
            let d = row[c] - mean[c];
            std[c] += d * d;
        }
    }
    for c in 0..N_CHANNELS {
        std[c] = (std[c] / n).sqrt();
        if !(std[c] > 0.0) {
            diag.warn(format!(
                "weather channel {:?} has zero variance; using std = 1",
                schema.names()[c]
            ));
            std[c] = 1.0;
        }
    }
    ChannelStats { mean, std }
}

pub fn normalize(grid: &WeatherGrid, stats: &ChannelStats) -> WeatherGrid {
    let values = grid
        .values()
        .chunks_exact(N_CHANNELS)
        .flat_map(|row| (0..N_CHANNELS).map(move |c| (row[c] - stats.mean[c]) / stats.std[c]))
        .collect();
    WeatherGrid {
        hours: grid.hours,
        stations: grid.stations.clone(),
        values,
    }
}

/// Writes stats as `channel,mean,std` rows.
pub fn write_stats<W: Write>(out: W, schema: &WeatherSchema, stats: &ChannelStats) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    write_record(&mut writer, &["channel", "mean", "std"])?;
    for c in 0..N_CHANNELS {
        write_record(
            &mut writer,
            &[
                schema.names()[c].clone(),
                stats.mean[c].to_string(),
                stats.std[c].to_string(),
            ],
        )?;
    }
    writer.flush().map_err(|e| Error::io("stats", e))
}

pub fn read_stats<R: Read>(input: R, schema: &WeatherSchema) -> Result<ChannelStats> {
    const SRC: &str = "stats";
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut mean = [f64::NAN; N_CHANNELS];
    let mut std = [f64::NAN; N_CHANNELS];
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(SRC, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let name = record.get(0).unwrap_or("");
        let c = schema
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::row(SRC, line, format!("unknown channel {name:?}")))?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::row(SRC, line, "malformed number"))
        };
        mean[c] = parse(1)?;
        std[c] = parse(2)?;
    }
    if mean.iter().chain(std.iter()).any(|v| !v.is_finite()) || std.iter().any(|&s| s <= 0.0) {
        return Err(Error::format(SRC, "stats file must list every channel with std > 0"));
    }
    Ok(ChannelStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let schema = WeatherSchema::default();
        format!("station,valid,{}\n", schema.names().join(","))
    }

    fn obs(station: &str, hour: i64, channels: [Option<f64>; N_CHANNELS]) -> WeatherObservation {
        WeatherObservation {
            station_id: station.into(),
            hour,
            channels: channels.map(|v| v.unwrap_or(0.0)),
            missing_mask: channels.map(|v| v.is_none()),
        }
    }

    fn full(v: f64) -> [Option<f64>; N_CHANNELS] {
        [Some(v); N_CHANNELS]
    }

    #[test]
    fn parses_row_and_hour_index() {
        let text = format!("{}DTW,2023-03-01T05:00,4.0,80,30.1,10,180,15,10,0,1,0.5\n", header());
        let rows = parse_weather(text.as_bytes(), &WeatherSchema::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].hour, parse_timestamp("2023-03-01T05:00").unwrap() / 3600);
        assert_eq!(rows[0].channels[TEMPERATURE], 4.0);
        assert!(rows[0].missing_mask.iter().all(|m| !m));
    }

    #[test]
    fn empty_cell_is_missing() {
        let text = format!("{}DTW,2023-03-01T05:00,4.0,,30.1,10,180,15,10,0,1,0.5\n", header());
        let rows = parse_weather(text.as_bytes(), &WeatherSchema::default()).unwrap();
        assert!(rows[0].missing_mask[HUMIDITY]);
        assert_eq!(rows[0].missing_mask.iter().filter(|m| **m).count(), 1);
    }

    #[test]
    fn duplicate_keeps_later_row() {
        let text = format!(
            "{h}DTW,2023-03-01T05:00,1,1,1,1,1,1,1,1,1,1\nDTW,2023-03-01T05:40,2,2,2,2,2,2,2,2,2,2\n",
            h = header()
        );
        let rows = parse_weather(text.as_bytes(), &WeatherSchema::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].channels[0], 2.0);
    }

    #[test]
    fn malformed_cell_reports_line() {
        let text = format!(
            "{}DTW,2023-03-01T05:00,1,1,1,1,1,1,1,1,1,1\nDTW,2023-03-01T06:00,x,1,1,1,1,1,1,1,1,1\n",
            header()
        );
        match parse_weather(text.as_bytes(), &WeatherSchema::default()) {
            Err(Error::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_column_is_fatal() {
        let text = "station,valid,tmpc\nDTW,2023-03-01T05:00,1\n";
        assert!(matches!(
            parse_weather(text.as_bytes(), &WeatherSchema::default()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_weather("".as_bytes(), &WeatherSchema::default()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn schema_rejects_bad_names() {
        let mut names: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        assert!(WeatherSchema::new(names.clone(), &[0]).is_ok());
        names[3] = "c0".into();
        assert!(WeatherSchema::new(names, &[0]).is_err());
        assert!(WeatherSchema::new(vec!["a".into()], &[]).is_err());
    }

    #[test]
    fn temperature_interpolates_midpoint() {
        let schema = WeatherSchema::default();
        let mut mid = full(1.0);
        mid[TEMPERATURE] = None;
        let observations = vec![obs("A", 0, full(2.0)), obs("A", 1, mid), obs("A", 2, full(6.0))];
        let grid = fill_missing(&observations, &["A".into()], HourRange::new(0, 3), &schema).unwrap();
        let temps: Vec<f64> = (0..3).map(|h| grid.value(h, 0, TEMPERATURE)).collect();
        assert_eq!(temps, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn interpolation_extends_flat_at_ends() {
        let schema = WeatherSchema::default();
        let mut gap = full(1.0);
        gap[PRESSURE] = None;
        let observations = vec![obs("A", 0, gap), obs("A", 1, full(3.0)), obs("A", 2, gap)];
        let grid = fill_missing(&observations, &["A".into()], HourRange::new(0, 3), &schema).unwrap();
        assert_eq!(grid.value(0, 0, PRESSURE), 3.0);
        assert_eq!(grid.value(2, 0, PRESSURE), 3.0);
    }

    #[test]
    fn gust_gap_is_zero_filled() {
        let schema = WeatherSchema::default();
        let mut gap = full(7.0);
        gap[WIND_GUST] = None;
        let observations = vec![obs("A", 0, full(7.0)), obs("A", 1, gap), obs("A", 2, full(7.0))];
        let grid = fill_missing(&observations, &["A".into()], HourRange::new(0, 3), &schema).unwrap();
        assert_eq!(grid.value(1, 0, WIND_GUST), 0.0);
    }

    #[test]
    fn absent_station_takes_network_mean() {
        let schema = WeatherSchema::default();
        let stations: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        let observations = vec![
            obs("A", 0, full(1.0)),
            obs("B", 0, full(1.0)),
            obs("C", 0, full(1.0)),
            obs("A", 1, full(3.0)),
            obs("B", 1, full(5.0)),
        ];
        let grid = fill_missing(&observations, &stations, HourRange::new(0, 2), &schema).unwrap();
        let oracle = [3.0, 5.0].iter().sum::<f64>() / 2.0;
        assert_eq!(grid.value(1, 2, TEMPERATURE), oracle);
        assert_eq!(grid.value(1, 2, WIND_GUST), oracle);
    }

    #[test]
    fn hour_without_any_station_falls_back_per_station() {
        let schema = WeatherSchema::default();
        let observations = vec![obs("A", 0, full(2.0)), obs("A", 2, full(6.0))];
        let grid = fill_missing(&observations, &["A".into()], HourRange::new(0, 3), &schema).unwrap();
        assert_eq!(grid.value(1, 0, TEMPERATURE), 4.0);
        assert_eq!(grid.value(1, 0, WIND_SPEED), 0.0);
    }

    #[test]
    fn channel_missing_everywhere_is_fatal() {
        let schema = WeatherSchema::default();
        let mut gap = full(1.0);
        gap[VISIBILITY] = None;
        let observations = vec![obs("A", 0, gap), obs("B", 0, gap)];
        let stations: Vec<String> = vec!["A".into(), "B".into()];
        assert!(matches!(
            fill_missing(&observations, &stations, HourRange::new(0, 1), &schema),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn stats_of_two_values() {
        let schema = WeatherSchema::default();
        let grid = WeatherGrid::from_values(
            HourRange::new(0, 2),
            vec!["A".into()],
            [vec![1.0; N_CHANNELS], vec![3.0; N_CHANNELS]].concat(),
        )
        .unwrap();
        let mut diag = Diagnostics::new();
        let stats = compute_stats(&grid, &schema, &mut diag);
        // Two-pass oracle.
        let xs = [1.0f64, 3.0];
        let m = xs.iter().sum::<f64>() / 2.0;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert_eq!((stats.mean[0], stats.std[0]), (m, sd));
        let z = normalize(&grid, &stats);
        assert_eq!((z.value(0, 0, 0), z.value(1, 0, 0)), (-1.0, 1.0));
        assert!(diag.is_empty());
    }

    #[test]
    fn constant_channel_uses_unit_std() {
        let schema = WeatherSchema::default();
        let grid =
            WeatherGrid::from_values(HourRange::new(0, 3), vec!["A".into()], vec![5.0; 3 * N_CHANNELS])
                .unwrap();
        let mut diag = Diagnostics::new();
        let stats = compute_stats(&grid, &schema, &mut diag);
        assert_eq!(stats.std, [1.0; N_CHANNELS]);
        assert_eq!(diag.warnings.len(), N_CHANNELS);
        assert!(normalize(&grid, &stats).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_input_is_unchanged() {
        let schema = WeatherSchema::default();
        let values: Vec<f64> = [-1.0, 1.0, -1.0, 1.0]
            .iter()
            .flat_map(|&v| [v; N_CHANNELS])
            .collect();
        let grid = WeatherGrid::from_values(HourRange::new(0, 4), vec!["A".into()], values).unwrap();
        let stats = compute_stats(&grid, &schema, &mut Diagnostics::new());
        let z = normalize(&grid, &stats);
        for (a, b) in grid.values().iter().zip(z.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_file_round_trip() {
        let schema = WeatherSchema::default();
        let stats = ChannelStats {
            mean: std::array::from_fn(|i| i as f64 * 0.1 - 0.3),
            std: std::array::from_fn(|i| 1.0 + i as f64 / 3.0),
        };
        let mut buf = Vec::new();
        write_stats(&mut buf, &schema, &stats).unwrap();
        assert_eq!(read_stats(buf.as_slice(), &schema).unwrap(), stats);
    }
}
