//! Census tract profiles and station locations.

use std::io::{Read, Write};

use super::outage::read_rows;
use super::weather::write_record;
use crate::error::{Error, Result};

pub const N_INFRA: usize = 11;

/// Power-infrastructure node types, in column order `infra_1..infra_11`.
pub const INFRA_TYPES: [&str; N_INFRA] = [
    "compensator",
    "generator",
    "insulator",
    "line",
    "pole",
    "portal",
    "substation",
    "switch",
    "terminal",
    "tower",
    "transformer",
];

/// A census estimate with its margin of error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub estimate: f64,
    pub moe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TractProfile {
    pub tract_id: String,
    pub centroid: (f64, f64),
    pub population: u64,
    pub households: u64,
    pub houses: u64,
    pub income_bins: Vec<Estimate>,
    pub year_built_bins: Vec<Estimate>,
    pub infra_counts: [u64; N_INFRA],
    pub infra_total: u64,
}

impl TractProfile {
    /// Sets `infra_total` from the per-type counts.
    pub fn with_infra(mut self, counts: [u64; N_INFRA]) -> Self {
        self.infra_counts = counts;
        self.infra_total = counts.iter().sum();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationLocation {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
}

pub(crate) fn check_coordinates(lat: f64, lon: f64) -> std::result::Result<(), String> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("latitude {lat} outside [-90, 90]"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("longitude {lon} outside [-180, 180]"));
    }
    Ok(())
}

const STATION_SOURCE: &str = "stations.csv";
const TRACT_SOURCE: &str = "tracts.csv";

fn parse_f64(source: &str, line: u64, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::row(source, line, format!("malformed {column} {cell:?}")))
}

fn parse_u64(source: &str, line: u64, column: &str, cell: &str) -> Result<u64> {
    cell.parse()
        .map_err(|_| Error::row(source, line, format!("{column} must be a nonnegative integer, got {cell:?}")))
}

pub fn parse_stations<R: Read>(input: R) -> Result<Vec<StationLocation>> {
    let rows = read_rows(input, STATION_SOURCE, &["station", "lat", "lon"])?;
    let mut out: Vec<StationLocation> = Vec::with_capacity(rows.len());
    for (line, cells) in rows {
        let lat = parse_f64(STATION_SOURCE, line, "lat", &cells[1])?;
        let lon = parse_f64(STATION_SOURCE, line, "lon", &cells[2])?;
        check_coordinates(lat, lon).map_err(|m| Error::row(STATION_SOURCE, line, m))?;
        if out.iter().any(|s| s.station_id == cells[0]) {
            return Err(Error::row(STATION_SOURCE, line, format!("duplicate station {}", cells[0])));
        }
        out.push(StationLocation {
            station_id: cells[0].clone(),
            lat,
            lon,
        });
    }
    Ok(out)
}

pub fn write_stations<W: Write>(out: W, stations: &[StationLocation]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    write_record(&mut writer, &["station", "lat", "lon"])?;
    for s in stations {
        write_record(&mut writer, &[s.station_id.clone(), s.lat.to_string(), s.lon.to_string()])?;
    }
    writer.flush().map_err(|e| Error::io(STATION_SOURCE, e))
}

fn count_prefixed(headers: &[String], prefix: &str) -> usize {
    (1..)
        .take_while(|i| headers.iter().any(|h| *h == format!("{prefix}{i}")))
        .count()
}

/// Parses `tracts.csv`; bin counts are inferred from the header.
pub fn parse_tracts<R: Read>(input: R) -> Result<Vec<TractProfile>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(TRACT_SOURCE, format!("unreadable header: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let k_income = count_prefixed(&headers, "inc_est_");
    let k_year = count_prefixed(&headers, "yb_est_");
    if k_income == 0 || k_year == 0 {
        return Err(Error::format(TRACT_SOURCE, "no income or year-built bins in header"));
    }
    if count_prefixed(&headers, "inc_moe_") != k_income || count_prefixed(&headers, "yb_moe_") != k_year {
        return Err(Error::format(TRACT_SOURCE, "estimate and margin-of-error columns differ in count"));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(TRACT_SOURCE, format!("missing column {name:?}")))
    };
    let fixed = ["tract_id", "lat", "lon", "population", "households", "houses"]
        .map(find);
    let fixed = fixed.into_iter().collect::<Result<Vec<_>>>()?;
    let cols = |prefix: &str, k: usize| -> Result<Vec<usize>> {
        (1..=k).map(|i| find(&format!("{prefix}{i}"))).collect()
    };
    let inc_est = cols("inc_est_", k_income)?;
    let inc_moe = cols("inc_moe_", k_income)?;
    let yb_est = cols("yb_est_", k_year)?;
    let yb_moe = cols("yb_moe_", k_year)?;
    let infra = cols("infra_", N_INFRA)?;

    let mut out: Vec<TractProfile> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::row(TRACT_SOURCE, e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");
        let tract_id = cell(fixed[0]).to_string();
        if tract_id.is_empty() {
            return Err(Error::row(TRACT_SOURCE, line, "empty tract id"));
        }
        if out.iter().any(|t| t.tract_id == tract_id) {
            return Err(Error::row(TRACT_SOURCE, line, format!("duplicate tract {tract_id}")));
        }
        let lat = parse_f64(TRACT_SOURCE, line, "lat", cell(fixed[1]))?;
        let lon = parse_f64(TRACT_SOURCE, line, "lon", cell(fixed[2]))?;
        check_coordinates(lat, lon).map_err(|m| Error::row(TRACT_SOURCE, line, m))?;
        let bins = |est: &[usize], moe: &[usize]| -> Result<Vec<Estimate>> {
            est.iter()
                .zip(moe)
                .map(|(&e, &m)| {
                    let estimate = parse_f64(TRACT_SOURCE, line, &headers[e], cell(e))?;
                    let moe = parse_f64(TRACT_SOURCE, line, &headers[m], cell(m))?;
                    if estimate < 0.0 || moe < 0.0 {
                        return Err(Error::row(TRACT_SOURCE, line, "negative estimate or margin"));
                    }
                    Ok(Estimate { estimate, moe })
                })
                .collect()
        };
        let mut counts = [0u64; N_INFRA];
        for (k, &col) in infra.iter().enumerate() {
            counts[k] = parse_u64(TRACT_SOURCE, line, &headers[col], cell(col))?;
        }
        let profile = TractProfile {
            tract_id,
            centroid: (lat, lon),
            population: parse_u64(TRACT_SOURCE, line, "population", cell(fixed[3]))?,
            households: parse_u64(TRACT_SOURCE, line, "households", cell(fixed[4]))?,
            houses: parse_u64(TRACT_SOURCE, line, "houses", cell(fixed[5]))?,
            income_bins: bins(&inc_est, &inc_moe)?,
            year_built_bins: bins(&yb_est, &yb_moe)?,
            infra_counts: [0; N_INFRA],
            infra_total: 0,
        }
        .with_infra(counts);
        out.push(profile);
    }
    Ok(out)
}

pub fn write_tracts<W: Write>(out: W, tracts: &[TractProfile]) -> Result<()> {
    let k_income = tracts.first().map_or(0, |t| t.income_bins.len());
    let k_year = tracts.first().map_or(0, |t| t.year_built_bins.len());
    if tracts
        .iter()
        .any(|t| t.income_bins.len() != k_income || t.year_built_bins.len() != k_year)
    {
        return Err(Error::Data("tracts disagree on bin counts".into()));
    }
    let mut header: Vec<String> = ["tract_id", "lat", "lon", "population", "households", "houses"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=k_income).map(|i| format!("inc_est_{i}")));
    header.extend((1..=k_income).map(|i| format!("inc_moe_{i}")));
    header.extend((1..=k_year).map(|i| format!("yb_est_{i}")));
    header.extend((1..=k_year).map(|i| format!("yb_moe_{i}")));
    header.extend((1..=N_INFRA).map(|i| format!("infra_{i}")));
    let mut writer = csv::Writer::from_writer(out);
    write_record(&mut writer, &header)?;
    for t in tracts {
        let mut row = vec![
            t.tract_id.clone(),
            t.centroid.0.to_string(),
            t.centroid.1.to_string(),
            t.population.to_string(),
            t.households.to_string(),
            t.houses.to_string(),
        ];
        row.extend(t.income_bins.iter().map(|b| b.estimate.to_string()));
        row.extend(t.income_bins.iter().map(|b| b.moe.to_string()));
        row.extend(t.year_built_bins.iter().map(|b| b.estimate.to_string()));
        row.extend(t.year_built_bins.iter().map(|b| b.moe.to_string()));
        row.extend(t.infra_counts.iter().map(|c| c.to_string()));
        write_record(&mut writer, &row)?;
    }
    writer.flush().map_err(|e| Error::io(TRACT_SOURCE, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACTS: &str = "tract_id,lat,lon,population,households,houses,\
inc_est_1,inc_est_2,inc_moe_1,inc_moe_2,yb_est_1,yb_moe_1,\
infra_1,infra_2,infra_3,infra_4,infra_5,infra_6,infra_7,infra_8,infra_9,infra_10,infra_11
T1,42.3,-83.1,1200,500,540,300,200,20,15,540,30,0,0,1,2,30,0,1,2,0,0,12
";

    #[test]
    fn parses_tract_and_totals() {
        let tracts = parse_tracts(TRACTS.as_bytes()).unwrap();
        assert_eq!(tracts.len(), 1);
        let t = &tracts[0];
        assert_eq!(t.income_bins.len(), 2);
        assert_eq!(t.year_built_bins, vec![Estimate { estimate: 540.0, moe: 30.0 }]);
        assert_eq!(t.infra_total, t.infra_counts.iter().sum::<u64>());
        assert_eq!(t.infra_total, 48);
    }

    #[test]
    fn tract_round_trip() {
        let tracts = parse_tracts(TRACTS.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_tracts(&mut buf, &tracts).unwrap();
        assert_eq!(parse_tracts(buf.as_slice()).unwrap(), tracts);
    }

    #[test]
    fn rejects_negative_margin_and_bad_coordinates() {
        let bad = TRACTS.replace(",20,15,", ",-20,15,");
        assert!(matches!(parse_tracts(bad.as_bytes()), Err(Error::Row { .. })));
        let bad = TRACTS.replace("42.3", "142.3");
        assert!(matches!(parse_tracts(bad.as_bytes()), Err(Error::Row { .. })));
        let bad = TRACTS.replace("inc_moe_2", "inc_xx_2");
        assert!(matches!(parse_tracts(bad.as_bytes()), Err(Error::Format { .. })));
    }

    #[test]
    fn station_validation() {
        let ok = "station,lat,lon\nDTW,42.2,-83.35\n";
        assert_eq!(parse_stations(ok.as_bytes()).unwrap()[0].station_id, "DTW");
        let bad = "station,lat,lon\nDTW,42.2,-183.35\n";
        assert!(parse_stations(bad.as_bytes()).is_err());
        let dup = "station,lat,lon\nDTW,42.2,-83.35\nDTW,42.2,-83.35\n";
        assert!(parse_stations(dup.as_bytes()).is_err());
    }
}
