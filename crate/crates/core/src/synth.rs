//! Synthetic worlds with a known outage process.
//!
//! A latent storm intensity `S(h)` drives the station weather. Each tract has
//! a fragility score, a fixed linear functional of its year-built and
//! infrastructure simplices standardized across tracts. The true outage
//! probability is `sigmoid(a * S(h) + b * fragility - c)`, and hourly customer
//! counts are binomial draws on the tract population. The intercept `c` is
//! calibrated so the expected share of outage hours matches
//! `outage_fraction`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::config::{parse_kv, parse_value};
use crate::error::{Error, Result};
use crate::eval::{pairwise_sum, threshold_one, THRESHOLD};
use crate::features::Dataset;
use crate::ingest::time::{format_hour, parse_timestamp, hour_of};
use crate::ingest::{
    self, write_allocations, write_snapshots, write_stations, write_tracts, write_weather, Allocation,
    Estimate, HourRange, OutageSnapshot, StationLocation, TractProfile, WeatherObservation, WeatherSchema,
    DEW_POINT, HUMIDITY, N_CHANNELS, N_INFRA, PRECIPITATION, PRESSURE, SKY_COVER, TEMPERATURE, VISIBILITY,
    WIND_DIRECTION, WIND_GUST, WIND_SPEED,
};
use crate::nn::sigmoid;

pub const TRUTH_FILE: &str = "truth.csv";

const K_INCOME: usize = 10;
const K_YEAR_BUILT: usize = 9;
/// 2021-01-01T00:00Z in hours.
const START_HOUR: i64 = 447_072;
const MISSING_RATE: f64 = 0.01;
/// Typical count of each infrastructure type in a tract.
const INFRA_BASE: [f64; N_INFRA] = [2.0, 3.0, 40.0, 30.0, 60.0, 2.0, 1.0, 8.0, 4.0, 6.0, 25.0];

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub n_tracts: usize,
    pub n_stations: usize,
    pub n_hours: usize,
    /// Expected storms per 1000 hours.
    pub storm_rate: f64,
    /// `a`: log-odds per unit of storm intensity.
    pub storm_coef: f64,
    /// `b`: log-odds per standard deviation of fragility.
    pub fragility_coef: f64,
    /// Expected share of outage tract-hours: at least two customers out and
    /// a target of at least 0.05.
    pub outage_fraction: f64,
    /// Weights on the year-built simplex, oldest bin first.
    pub year_built_weights: Vec<f64>,
    /// Weights on the infrastructure simplex.
    pub infra_weights: Vec<f64>,
    pub population_min: u64,
    pub population_max: u64,
    /// Margins of error as a share of each bin estimate.
    pub moe_fraction: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        let mut infra = vec![0.0; N_INFRA];
        // Lines, poles and transformers fail, substations are hardened.
        infra[3] = 1.0;
        infra[4] = 1.0;
        infra[10] = 0.5;
        infra[6] = -1.0;
        Self {
            seed: 0,
            n_tracts: 60,
            n_stations: 4,
            n_hours: 2000,
            storm_rate: 3.0,
            storm_coef: 4.0,
            fragility_coef: 0.5,
            outage_fraction: 0.01,
            year_built_weights: (0..K_YEAR_BUILT)
                .map(|k| 1.0 - 2.0 * k as f64 / (K_YEAR_BUILT - 1) as f64)
                .collect(),
            infra_weights: infra,
            population_min: 100,
            population_max: 400,
            moe_fraction: 0.1,
        }
    }
}

fn parse_reals(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl WorldSpec {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (k, v) in parse_kv(text)? {
            let v = v.as_str();
            match k.as_str() {
                "seed" => spec.seed = parse_value(&k, v)?,
                "n_tracts" => spec.n_tracts = parse_value(&k, v)?,
                "n_stations" => spec.n_stations = parse_value(&k, v)?,
                "n_hours" => spec.n_hours = parse_value(&k, v)?,
                "storm_rate" => spec.storm_rate = parse_value(&k, v)?,
                "storm_coef" => spec.storm_coef = parse_value(&k, v)?,
                "fragility_coef" => spec.fragility_coef = parse_value(&k, v)?,
                "outage_fraction" => spec.outage_fraction = parse_value(&k, v)?,
                "year_built_weights" => spec.year_built_weights = parse_reals(&k, v)?,
                "infra_weights" => spec.infra_weights = parse_reals(&k, v)?,
                "population_min" => spec.population_min = parse_value(&k, v)?,
                "population_max" => spec.population_max = parse_value(&k, v)?,
                "moe_fraction" => spec.moe_fraction = parse_value(&k, v)?,
                other => return Err(Error::Config(format!("unknown world key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        format!(
            "seed = {}\nn_tracts = {}\nn_stations = {}\nn_hours = {}\nstorm_rate = {}\nstorm_coef = {}\n\
fragility_coef = {}\noutage_fraction = {}\nyear_built_weights = {}\ninfra_weights = {}\n\
population_min = {}\npopulation_max = {}\nmoe_fraction = {}\n",
            self.seed,
            self.n_tracts,
            self.n_stations,
            self.n_hours,
            self.storm_rate,
            self.storm_coef,
            self.fragility_coef,
            self.outage_fraction,
            list(&self.year_built_weights),
            list(&self.infra_weights),
            self.population_min,
            self.population_max,
            self.moe_fraction,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_tracts == 0 || self.n_stations == 0 || self.n_hours == 0 {
            return bad("world counts must be positive".into());
        }
        if !(self.storm_rate >= 0.0 && self.storm_rate < 1000.0) {
            return bad(format!("storm_rate must lie in [0, 1000), got {}", self.storm_rate));
        }
        if !(self.outage_fraction > 0.0 && self.outage_fraction < 1.0) {
            return bad(format!("outage_fraction must lie in (0, 1), got {}", self.outage_fraction));
        }
        if self.year_built_weights.len() != K_YEAR_BUILT || self.infra_weights.len() != N_INFRA {
            return bad(format!(
                "fragility weights need {K_YEAR_BUILT} year-built and {N_INFRA} infrastructure entries"
            ));
        }
        if self.population_min < 2 || self.population_max < self.population_min {
            return bad("population range must satisfy 2 <= min <= max".into());
        }
        if !(0.0..1.0).contains(&self.moe_fraction) {
            return bad(format!("moe_fraction must lie in [0, 1), got {}", self.moe_fraction));
        }
        for x in [self.storm_coef, self.fragility_coef] {
            if !x.is_finite() {
                return bad("coefficients must be finite".into());
            }
        }
        Ok(())
    }
}

/// True outage probabilities, `[tract][hour]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub tract_ids: Vec<String>,
    pub hours: HourRange,
    pub p: Vec<f64>,
}

impl TruthTable {
    pub fn get(&self, tract: usize, hour: usize) -> f64 {
        self.p[tract * self.hours.len + hour]
    }

    pub fn tract_row(&self, tract: usize) -> &[f64] {
        &self.p[tract * self.hours.len..(tract + 1) * self.hours.len]
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        let io = |e| Error::Data(format!("truth write failed: {e}"));
        writeln!(w, "tract_id,hour,p_true").map_err(io)?;
        for (t, id) in self.tract_ids.iter().enumerate() {
            for h in 0..self.hours.len {
                writeln!(w, "{id},{},{}", format_hour(self.hours.start + h as i64), self.get(t, h)).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a truth table written by [`TruthTable::write`].
    pub fn read(path: &Path) -> Result<Self> {
        const SRC: &str = "truth.csv";
        let rows = ingest::read_rows(ingest::open(path)?, SRC, &["tract_id", "hour", "p_true"])?;
        let mut tract_ids: Vec<String> = Vec::new();
        let mut entries = Vec::with_capacity(rows.len());
        for (line, cells) in rows {
            let seconds = parse_timestamp(&cells[1])
                .ok_or_else(|| Error::row(SRC, line, format!("bad timestamp {:?}", cells[1])))?;
            let p: f64 = cells[2]
                .parse()
                .map_err(|_| Error::row(SRC, line, format!("bad probability {:?}", cells[2])))?;
            if tract_ids.last() != Some(&cells[0]) {
                tract_ids.push(cells[0].clone());
            }
            entries.push((tract_ids.len() - 1, hour_of(seconds), p));
        }
        let start = entries.iter().map(|e| e.1).min().ok_or_else(|| Error::format(SRC, "empty table"))?;
        let end = entries.iter().map(|e| e.1).max().unwrap_or(start);
        let hours = HourRange::new(start, (end - start + 1) as usize);
        if entries.len() != tract_ids.len() * hours.len {
            return Err(Error::format(SRC, "table is not a complete tract x hour grid"));
        }
        let mut p = vec![0.0; entries.len()];
        for (t, hour, v) in entries {
            p[t * hours.len + (hour - start) as usize] = v;
        }
        Ok(Self { tract_ids, hours, p })
    }
}

/// A generated world: the five raw inputs plus hidden truth.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub stations: Vec<StationLocation>,
    pub tracts: Vec<TractProfile>,
    pub weather: Vec<WeatherObservation>,
    pub snapshots: Vec<OutageSnapshot>,
    pub allocations: Vec<Allocation>,
    pub truth: TruthTable,
    /// Latent storm intensity per hour.
    pub storm: Vec<f64>,
    /// Standardized fragility per tract.
    pub fragility: Vec<f64>,
    /// Calibrated intercept `c`.
    pub intercept: f64,
}

/// Smallest customer count that makes an outage hour in a tract of `n`:
/// at least two customers and a target of at least the scoring threshold.
pub fn outage_count(n: u64) -> u64 {
    (2..=n).find(|&k| k as f64 / n as f64 >= THRESHOLD).unwrap_or(n)
}

/// `P(K >= m)` for `K ~ Binomial(n, p)`.
fn binomial_tail(n: u64, p: f64, m: u64) -> f64 {
    if p <= 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ratio = p / (1.0 - p);
    let mut pmf = (n as f64 * (-p).ln_1p()).exp();
    let mut below = 0.0;
    for k in 0..m {
        below += pmf;
        pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
    }
    (1.0 - below).clamp(0.0, 1.0)
}

fn storm_series(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut s = vec![0.0; spec.n_hours];
    let start_prob = spec.storm_rate / 1000.0;
    for h in 0..spec.n_hours {
        if rng.gen::<f64>() >= start_prob {
            continue;
        }
        let duration = rng.gen_range(4..=12);
        let peak = rng.gen_range(1.0..2.5);
        for i in 0..duration {
            if let Some(v) = s.get_mut(h + i) {
                *v += peak * (std::f64::consts::PI * (i as f64 + 0.5) / duration as f64).sin();
            }
        }
    }
    s
}

/// Bin estimates from positive random weights scaled to `total`.
fn bins(weights: &[f64], total: f64, moe_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Estimate> {
    let sum: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| {
            let estimate = (w / sum * total).round();
            let moe = (estimate * moe_fraction + rng.gen_range(0.0..3.0)).round();
            Estimate { estimate, moe }
        })
        .collect()
}

fn make_tracts(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Vec<TractProfile> {
    (0..spec.n_tracts)
        .map(|i| {
            let population = rng.gen_range(spec.population_min..=spec.population_max);
            let households = (population as f64 / rng.gen_range(2.2..2.8)).round().max(1.0) as u64;
            let houses = (households as f64 * rng.gen_range(1.0..1.2)).round() as u64;
            let income: Vec<f64> = (0..K_INCOME).map(|_| rng.gen_range(0.2..1.0)).collect();
            // Tract age skews the year-built profile toward old or new bins.
            let age: f64 = rng.gen_range(-1.5..1.5);
            let year_built: Vec<f64> = (0..K_YEAR_BUILT)
                .map(|k| {
                    let centered = 1.0 - 2.0 * k as f64 / (K_YEAR_BUILT - 1) as f64;
                    (age * centered).exp() * rng.gen_range(0.5..1.0)
                })
                .collect();
            // Per-type counts follow a common tract scale.
            let scale: f64 = rng.gen_range(0.3..3.0);
            let mut infra = [0u64; N_INFRA];
            for (c, base) in infra.iter_mut().zip(INFRA_BASE) {
                *c = (base * scale * rng.gen_range(0.8..1.2)).round() as u64;
            }
            TractProfile {
                tract_id: format!("T{:04}", i + 1),
                centroid: (rng.gen_range(39.5..40.5), rng.gen_range(-75.5..-74.5)),
                population,
                households,
                houses,
                income_bins: bins(&income, households as f64, spec.moe_fraction, rng),
                year_built_bins: bins(&year_built, houses as f64, spec.moe_fraction, rng),
                infra_counts: [0; N_INFRA],
                infra_total: 0,
            }
            .with_infra(infra)
        })
        .collect()
}

/// Fragility scores: year-built shares and infrastructure counts (per 100)
/// weighted, then standardized to mean 0 and unit population std.
pub fn fragility_scores(spec: &WorldSpec, tracts: &[TractProfile]) -> Vec<f64> {
    let raw: Vec<f64> = tracts
        .iter()
        .map(|t| {
            let total: f64 = t.year_built_bins.iter().map(|b| b.estimate).sum::<f64>().max(1.0);
            let age: f64 = spec
                .year_built_weights
                .iter()
                .zip(&t.year_built_bins)
                .map(|(w, b)| w * b.estimate / total)
                .sum();
            let exposure: f64 = spec
                .infra_weights
                .iter()
                .zip(&t.infra_counts)
                .map(|(w, &c)| w * c as f64 / 100.0)
                .sum();
            age + exposure
        })
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    raw.iter().map(|r| (r - mean) / std).collect()
}

/// Intercept at which the expected share of outage hours equals the target.
fn calibrate_intercept(spec: &WorldSpec, storm: &[f64], fragility: &[f64], populations: &[u64]) -> f64 {
    // Hours share one storm level each; collapse repeats before bisecting.
    let mut levels: Vec<(f64, usize)> = Vec::new();
    let mut sorted = storm.to_vec();
    sorted.sort_by(f64::total_cmp);
    for s in sorted {
        match levels.last_mut() {
            Some((v, n)) if *v == s => *n += 1,
            _ => levels.push((s, 1)),
        }
    }
    let expected = |c: f64| {
        let mut total = 0.0;
        for (f, &n) in fragility.iter().zip(populations) {
            let m = outage_count(n);
            for &(s, count) in &levels {
                let p = sigmoid(spec.storm_coef * s + spec.fragility_coef * f - c);
                total += count as f64 * binomial_tail(n, p, m);
            }
        }
        total / (fragility.len() * storm.len()) as f64
    };
    let (mut lo, mut hi) = (-30.0, 60.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) > spec.outage_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn weather_for(
    stations: &[StationLocation],
    storm: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<WeatherObservation> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let offsets: Vec<(f64, f64, f64)> = stations
        .iter()
        .map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..24.0)))
        .collect();
    let mut out = Vec::with_capacity(stations.len() * storm.len());
    for (st, &(temp_off, wind_off, phase)) in stations.iter().zip(&offsets) {
        for (h, &s) in storm.iter().enumerate() {
            let hour = START_HOUR + h as i64;
            let day = std::f64::consts::TAU * (h as f64 + phase) / 24.0;
            let slow = std::f64::consts::TAU * h as f64 / 500.0;
            let mut e = || noise.sample(rng);
            let mut c = [0.0; N_CHANNELS];
            c[TEMPERATURE] = 12.0 + temp_off + 6.0 * day.sin() + 4.0 * slow.sin() - 2.0 * s + 0.4 * e();
            c[HUMIDITY] = (60.0 + 12.0 * day.cos() + 12.0 * s + 2.0 * e()).clamp(5.0, 100.0);
            c[PRESSURE] = 30.0 + 0.1 * slow.cos() - 0.25 * s + 0.01 * e();
            c[WIND_SPEED] = (7.0 + wind_off + 7.0 * s + 0.4 * e()).max(0.0);
            c[WIND_DIRECTION] = (200.0 + 50.0 * slow.sin() + 8.0 * e()).rem_euclid(360.0);
            c[WIND_GUST] = c[WIND_SPEED] + 3.0 + 7.0 * s + 0.4 * e().abs();
            c[VISIBILITY] = (10.0 - 3.0 * s + 0.3 * e()).clamp(0.0, 10.0);
            let drizzle = if rng.gen::<f64>() < 0.05 { rng.gen_range(0.01..0.05) } else { 0.0 };
            c[PRECIPITATION] = drizzle + 0.2 * s;
            c[DEW_POINT] = c[TEMPERATURE] - (100.0 - c[HUMIDITY]) / 5.0;
            c[SKY_COVER] = (3.0 + 2.0 * slow.sin() + 2.0 * s + 0.5 * noise.sample(rng)).clamp(0.0, 8.0);
            for v in &mut c {
                *v = (*v * 1000.0).round() / 1000.0;
            }
            let mut missing_mask = [false; N_CHANNELS];
            for ch in [TEMPERATURE, HUMIDITY, PRESSURE, DEW_POINT] {
                if rng.gen::<f64>() < MISSING_RATE {
                    missing_mask[ch] = true;
                    c[ch] = 0.0;
                }
            }
            out.push(WeatherObservation {
                station_id: st.station_id.clone(),
                hour,
                channels: c,
                missing_mask,
            });
        }
    }
    out
}

/// Generates a world. The same spec always yields the same world.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stations: Vec<StationLocation> = (0..spec.n_stations)
        .map(|i| StationLocation {
            station_id: format!("S{:02}", i + 1),
            lat: (rng.gen_range(39.4..40.6f64) * 1e4).round() / 1e4,
            lon: (rng.gen_range(-75.6..-74.4f64) * 1e4).round() / 1e4,
        })
        .collect();
    let mut tracts = make_tracts(spec, &mut rng);
    for t in &mut tracts {
        t.centroid = ((t.centroid.0 * 1e4).round() / 1e4, (t.centroid.1 * 1e4).round() / 1e4);
    }
    let storm = storm_series(spec, &mut rng);
    let fragility = fragility_scores(spec, &tracts);
    let populations: Vec<u64> = tracts.iter().map(|t| t.population).collect();
    let intercept = calibrate_intercept(spec, &storm, &fragility, &populations);
    let weather = weather_for(&stations, &storm, &mut rng);

    let hours = HourRange::new(START_HOUR, spec.n_hours);
    let mut p = Vec::with_capacity(spec.n_tracts * spec.n_hours);
    let mut snapshots = Vec::new();
    let mut allocations = Vec::new();
    for (t, tract) in tracts.iter().enumerate() {
        for (h, &s) in storm.iter().enumerate() {
            let prob = sigmoid(spec.storm_coef * s + spec.fragility_coef * fragility[t] - intercept);
            p.push(prob);
            let k = Binomial::new(tract.population, prob)
                .map_err(|e| Error::Numeric {
                    location: "synth".into(),
                    message: e.to_string(),
                })?
                .sample(&mut rng);
            if k == 0 {
                continue;
            }
            let event_id = format!("E{:06}", allocations.len() + 1);
            let at = (START_HOUR + h as i64) * 3600;
            // Four snapshots in the hour; the peak is the drawn count.
            for (minute, customers) in [(0, k.div_ceil(2)), (15, k), (30, k), (45, k.div_ceil(3))] {
                snapshots.push(OutageSnapshot {
                    event_id: event_id.clone(),
                    observed_at: at + minute * 60,
                    customers,
                });
            }
            allocations.push(Allocation {
                event_id,
                tract_id: tract.tract_id.clone(),
                fraction: 1.0,
            });
        }
    }
    let truth = TruthTable {
        tract_ids: tracts.iter().map(|t| t.tract_id.clone()).collect(),
        hours,
        p,
    };
    Ok(World {
        spec: spec.clone(),
        stations,
        tracts,
        weather,
        snapshots,
        allocations,
        truth,
        storm,
        fragility,
        intercept,
    })
}

impl World {
    /// Writes the five input files and `truth.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(&path, e))
        };
        write_weather(create(ingest::WEATHER_FILE)?, &WeatherSchema::default(), &self.weather)?;
        write_stations(create(ingest::STATIONS_FILE)?, &self.stations)?;
        write_snapshots(create(ingest::SNAPSHOTS_FILE)?, &self.snapshots)?;
        write_allocations(create(ingest::ALLOCATIONS_FILE)?, &self.allocations)?;
        write_tracts(create(ingest::TRACTS_FILE)?, &self.tracts)?;
        self.truth.write(create(TRUTH_FILE)?)
    }

    /// The inputs as ingest would parse them from disk.
    pub fn raw_data(&self) -> ingest::RawData {
        ingest::RawData {
            weather: self.weather.clone(),
            stations: self.stations.clone(),
            snapshots: self.snapshots.clone(),
            allocations: self.allocations.clone(),
            tracts: self.tracts.clone(),
        }
    }

    /// Mean true probability per tract.
    pub fn mean_probability(&self, tract: usize) -> f64 {
        let row = self.truth.tract_row(tract);
        row.iter().sum::<f64>() / row.len() as f64
    }
}

/// RMSE of thresholded truth against realized targets.
pub fn rmse_against(truth: &[f64], realized: &[f64]) -> Result<f64> {
    if truth.len() != realized.len() || truth.is_empty() {
        return Err(Error::Config("truth and targets must be equal-length and non-empty".into()));
    }
    let sq: Vec<f64> = truth
        .iter()
        .zip(realized)
        .map(|(p, g)| (threshold_one(*p) - g).powi(2))
        .collect();
    Ok((pairwise_sum(&sq) / truth.len() as f64).sqrt())
}

/// RMSE of the thresholded true probability against the ingested targets of
/// `tracts`, the floor any model is measured against.
pub fn bayes_rmse(truth: &TruthTable, dataset: &Dataset, tracts: &[usize]) -> Result<f64> {
    let (p, g) = aligned(truth, dataset, tracts)?;
    rmse_against(&p, &g)
}

/// Truth and realized targets over every hour of `tracts`, in dataset order.
pub fn aligned(truth: &TruthTable, dataset: &Dataset, tracts: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = Vec::new();
    let mut g = Vec::new();
    for &t in tracts {
        let id = &dataset.tracts[t].tract_id;
        let row = truth
            .tract_ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::Data(format!("tract {id} missing from the truth table")))?;
        for h in 0..dataset.n_hours() {
            let hour = dataset.weather.hours.start + h as i64;
            let th = truth
                .hours
                .index(hour)
                .ok_or_else(|| Error::Data(format!("hour {} missing from the truth table", format_hour(hour))))?;
            p.push(truth.get(row, th));
            g.push(dataset.target(t, h));
        }
    }
    Ok((p, g))
}
