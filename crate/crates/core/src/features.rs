//! Training-sample construction: outage targets, condition vectors with
//! margin-of-error augmentation, ablation masks, and the tract split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Diagnostics, Error, Result};
use crate::ingest::{
    self, compute_stats, consolidate_events, fill_missing, normalize, station_distances,
    ChannelStats, Estimate, HourRange, OutageEvent, RawData, StationLocation, TractProfile,
    WeatherGrid, WeatherSchema, N_CHANNELS, N_INFRA,
};

/// Distances enter the base vector in units of 100 km.
pub const DISTANCE_SCALE_KM: f64 = 100.0;

/// Number of entries in the totals block (population, households, houses,
/// infrastructure total).
pub const N_TOTALS: usize = 4;

/// Which feature groups feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureMask {
    pub weather: bool,
    pub distance: bool,
    pub totals: bool,
    pub income: bool,
    pub year_built: bool,
    pub power_infra: bool,
}

pub const GROUP_NAMES: [&str; 6] = [
    "weather",
    "distance",
    "totals",
    "income",
    "year_built",
    "power_infra",
];

impl FeatureMask {
    pub const WEATHER_ONLY: FeatureMask = FeatureMask {
        weather: true,
        distance: false,
        totals: false,
        income: false,
        year_built: false,
        power_infra: false,
    };

    pub const ALL: FeatureMask = FeatureMask {
        weather: true,
        distance: true,
        totals: true,
        income: true,
        year_built: true,
        power_infra: true,
    };

    fn flags(&self) -> [bool; 6] {
        [
            self.weather,
            self.distance,
            self.totals,
            self.income,
            self.year_built,
            self.power_infra,
        ]
    }

    fn from_flags(f: [bool; 6]) -> Self {
        Self {
            weather: f[0],
            distance: f[1],
            totals: f[2],
            income: f[3],
            year_built: f[4],
            power_infra: f[5],
        }
    }

    /// The nested ladder: weather, then distance, totals, income, year
    /// built and power infrastructure added one at a time.
    pub fn ladder() -> [FeatureMask; 6] {
        std::array::from_fn(|row| Self::from_flags(std::array::from_fn(|g| g <= row)))
    }

    /// Parses a comma list of group names. Weather is always switched on.
    pub fn parse(list: &str) -> Result<Self> {
        let mut flags = [false; 6];
        flags[0] = true;
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let g = GROUP_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Config(format!("unknown feature group {name:?}")))?;
            flags[g] = true;
        }
        Ok(Self::from_flags(flags))
    }

    pub fn set(&mut self, group: &str, on: bool) -> Result<()> {
        let mut flags = self.flags();
        let g = GROUP_NAMES
            .iter()
            .position(|n| *n == group)
            .ok_or_else(|| Error::Config(format!("unknown feature group {group:?}")))?;
        if g == 0 && !on {
            return Err(Error::Config("the weather group cannot be disabled".into()));
        }
        flags[g] = on;
        *self = Self::from_flags(flags);
        Ok(())
    }

    pub fn groups(&self) -> Vec<&'static str> {
        self.flags()
            .iter()
            .zip(GROUP_NAMES)
            .filter_map(|(on, n)| on.then_some(n))
            .collect()
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.groups().join("+"))
    }
}

/// Shape information shared by every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleLayout {
    pub n_stations: usize,
    pub k_income: usize,
    pub k_year_built: usize,
}

impl SampleLayout {
    pub fn base_len(&self, mask: &FeatureMask) -> usize {
        self.n_stations * N_CHANNELS + if mask.distance { self.n_stations } else { 0 }
    }

    pub fn cond_len(&self, mask: &FeatureMask) -> usize {
        let mut n = 0;
        if mask.income {
            n += self.k_income;
        }
        if mask.year_built {
            n += self.k_year_built;
        }
        if mask.power_infra {
            n += N_INFRA;
        }
        if mask.totals {
            n += N_TOTALS;
        }
        n
    }
}

/// One (tract, hour) record.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySample {
    pub tract_id: String,
    pub hour: i64,
    pub base: Vec<f64>,
    pub condition: Vec<f64>,
    pub target: f64,
}

/// Hourly outage probabilities, dense over tracts x hours.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTable {
    pub tract_ids: Vec<String>,
    pub hours: HourRange,
    values: Vec<f64>,
}

impl TargetTable {
    /// All-zero targets, for inference inputs that carry no outages.
    pub fn zeros(tract_ids: Vec<String>, hours: HourRange) -> Self {
        let values = vec![0.0; tract_ids.len() * hours.len];
        Self {
            tract_ids,
            hours,
            values,
        }
    }

    pub fn get(&self, tract_index: usize, hour_index: usize) -> f64 {
        self.values[tract_index * self.hours.len + hour_index]
    }

    /// Every target, tract-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tract_row(&self, tract_index: usize) -> &[f64] {
        let n = self.hours.len;
        &self.values[tract_index * n..(tract_index + 1) * n]
    }

    /// Looks a target up by tract id and absolute hour.
    pub fn lookup(&self, tract_id: &str, hour: i64) -> Option<f64> {
        let t = self.tract_ids.iter().position(|id| id == tract_id)?;
        Some(self.get(t, self.hours.index(hour)?))
    }
}

/// Converts consolidated events into per-tract hourly outage probabilities.
///
/// Every hour of an event adds `max_customers * fraction` customers to each
/// allocated tract; overlapping events add up. The probability is that count
/// over the tract population, clipped at one. Hours outside every event are 0.
pub fn build_targets(
    events: &[OutageEvent],
    tracts: &[TractProfile],
    hours: HourRange,
    diag: &mut Diagnostics,
) -> TargetTable {
    let index: HashMap<&str, usize> = tracts
        .iter()
        .enumerate()
        .map(|(i, t)| (t.tract_id.as_str(), i))
        .collect();
    let mut counts = vec![0.0; tracts.len() * hours.len];
    let mut unknown: Vec<&str> = Vec::new();
    for event in events {
        for (tract_id, fraction) in &event.allocations {
            let Some(&t) = index.get(tract_id.as_str()) else {
                if !unknown.contains(&tract_id.as_str()) {
                    unknown.push(tract_id);
                }
                continue;
            };
            let customers = event.max_customers as f64 * fraction;
            for hour in event.start_hour..=event.end_hour {
                if let Some(h) = hours.index(hour) {
                    counts[t * hours.len + h] += customers;
                }
            }
        }
    }
    for id in unknown {
        diag.warn(format!("allocation references unknown tract {id}; ignored"));
    }
    let mut zero_population = false;
    let values = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let population = tracts[i / hours.len].population;
            if count <= 0.0 {
                0.0
            } else if population == 0 {
                zero_population = true;
                1.0
            } else {
                (count / population as f64).min(1.0)
            }
        })
        .collect();
    if zero_population {
        diag.warn("outage customers allocated to a zero-population tract; target set to 1");
    }
    TargetTable {
        tract_ids: tracts.iter().map(|t| t.tract_id.clone()).collect(),
        hours,
        values,
    }
}

/// Draws each bin uniformly from `[estimate - moe, estimate + moe]`,
/// floored at zero.
pub fn augment_distribution<R: Rng + ?Sized>(bins: &[Estimate], rng: &mut R) -> Vec<f64> {
    bins.iter()
        .map(|b| {
            let v = if b.moe > 0.0 {
                rng.gen_range(b.estimate - b.moe..=b.estimate + b.moe)
            } else {
                b.estimate
            };
            v.max(0.0)
        })
        .collect()
}

/// Softmax over `bins / total`, with max subtraction.
///
/// A non-positive total falls back to zero logits (uniform output).
pub fn softmax_normalize(bins: &[f64], total: f64) -> Vec<f64> {
    if bins.is_empty() {
        return Vec::new();
    }
    let logits: Vec<f64> = if total > 0.0 {
        bins.iter().map(|b| b / total).collect()
    } else {
        log::warn!("softmax_normalize: non-positive total {total}; using uniform distribution");
        vec![0.0; bins.len()]
    };
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn block_simplex(values: &[f64]) -> Vec<f64> {
    softmax_normalize(values, values.iter().sum())
}

/// The condition vector of a tract: income, year-built and infrastructure
/// simplices, then log1p totals, each present only if masked in.
///
/// With `rng` present the income and year-built bins are resampled within
/// their margins of error first.
pub fn condition_vector<R: Rng + ?Sized>(
    tract: &TractProfile,
    mask: &FeatureMask,
    mut rng: Option<&mut R>,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut draw = |bins: &[Estimate]| match rng.as_deref_mut() {
        Some(r) => augment_distribution(bins, r),
        None => bins.iter().map(|b| b.estimate).collect(),
    };
    if mask.income {
        out.extend(block_simplex(&draw(&tract.income_bins)));
    }
    if mask.year_built {
        out.extend(block_simplex(&draw(&tract.year_built_bins)));
    }
    if mask.power_infra {
        let counts: Vec<f64> = tract.infra_counts.iter().map(|&c| c as f64).collect();
        out.extend(softmax_normalize(&counts, tract.infra_total as f64));
    }
    if mask.totals {
        out.extend(
            [
                tract.population,
                tract.households,
                tract.houses,
                tract.infra_total,
            ]
            .map(|v| (v as f64).ln_1p()),
        );
    }
    out
}

/// Assembles one sample. `weather_slice` is the normalized per-station
/// channel block for the hour and `distances` the tract-station distances in
/// km; both must match `layout`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_sample<R: Rng + ?Sized>(
    tract: &TractProfile,
    hour: i64,
    target: f64,
    weather_slice: &[f64],
    distances: &[f64],
    layout: &SampleLayout,
    mask: &FeatureMask,
    rng: Option<&mut R>,
) -> Result<HourlySample> {
    if !mask.weather {
        return Err(Error::Config("feature mask must include weather".into()));
    }
    if weather_slice.len() != layout.n_stations * N_CHANNELS || distances.len() != layout.n_stations {
        return Err(Error::Config(format!(
            "sample for tract {} expects {} stations; got {} weather values and {} distances",
            tract.tract_id,
            layout.n_stations,
            weather_slice.len(),
            distances.len()
        )));
    }
    if tract.income_bins.len() != layout.k_income || tract.year_built_bins.len() != layout.k_year_built {
        return Err(Error::Config(format!(
            "tract {} has {}/{} income/year-built bins, layout expects {}/{}",
            tract.tract_id,
            tract.income_bins.len(),
            tract.year_built_bins.len(),
            layout.k_income,
            layout.k_year_built
        )));
    }
    let mut base = weather_slice.to_vec();
    if mask.distance {
        base.extend(distances.iter().map(|d| d / DISTANCE_SCALE_KM));
    }
    Ok(HourlySample {
        tract_id: tract.tract_id.clone(),
        hour,
        base,
        condition: condition_vector(tract, mask, rng),
        target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        })
    }
}

/// Tract-level train/validation/test assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Subset>,
}

impl SplitAssignment {
    pub fn subset_of(&self, tract_id: &str) -> Option<Subset> {
        self.assignment.get(tract_id).copied()
    }

    pub fn count(&self, subset: Subset) -> usize {
        self.assignment.values().filter(|s| **s == subset).count()
    }
}

/// Shuffles tracts with `seed` and cuts 72% / 8% / 20% (floors, remainder to
/// train). An empty validation share borrows one tract from train.
pub fn split_tracts(tract_ids: &[String], seed: u64) -> Result<SplitAssignment> {
    let n = tract_ids.len();
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 tracts to split, got {n}")));
    }
    let mut ids = tract_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != n {
        return Err(Error::Config("duplicate tract ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = n * 8 / 100;
    let n_test = n * 20 / 100;
    let mut n_train = n - n_val - n_test;
    if n_val == 0 {
        n_val = 1;
        n_train -= 1;
    }
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let subset = if i < n_train {
                Subset::Train
            } else if i < n_train + n_val {
                Subset::Val
            } else {
                Subset::Test
            };
            (id, subset)
        })
        .collect();
    Ok(SplitAssignment { assignment })
}

/// Independent random stream for augmenting one sample in one epoch.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut x = seed ^ 0x5851_F42D_4C95_7F2D;
    for v in [epoch, index] {
        x = splitmix64(x ^ splitmix64(v));
    }
    ChaCha8Rng::seed_from_u64(x)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cleaned, normalized inputs from which samples are assembled on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub mask: FeatureMask,
    pub layout: SampleLayout,
    pub stations: Vec<StationLocation>,
    pub tracts: Vec<TractProfile>,
    /// Tract-station distances in km, `[tract][station]`.
    pub distances: Vec<Vec<f64>>,
    pub weather: WeatherGrid,
    pub stats: ChannelStats,
    pub targets: TargetTable,
    conditions: Vec<Vec<f64>>,
}

impl Dataset {
    /// Runs the whole cleaning pipeline over raw inputs.
    ///
    /// `stats` reuses previously persisted normalization; otherwise they are
    /// computed from the weather in `raw`.
    pub fn prepare(
        raw: &RawData,
        schema: &WeatherSchema,
        mask: FeatureMask,
        stats: Option<&ChannelStats>,
        diag: &mut Diagnostics,
    ) -> Result<Self> {
        let hours = HourRange::covering(&raw.weather)
            .ok_or_else(|| Error::Data("weather file has no observations".into()))?;
        let station_ids: Vec<String> = raw.stations.iter().map(|s| s.station_id.clone()).collect();
        let unknown = raw
            .weather
            .iter()
            .filter(|o| !station_ids.contains(&o.station_id))
            .count();
        if unknown > 0 {
            diag.warn(format!("{unknown} weather rows from stations missing in stations.csv ignored"));
        }
        let grid = fill_missing(&raw.weather, &station_ids, hours, schema)?;
        let stats = match stats {
            Some(s) => s.clone(),
            None => compute_stats(&grid, schema, diag),
        };
        let weather = normalize(&grid, &stats);
        let events = consolidate_events(&raw.snapshots, &raw.allocations, diag);
        let targets = build_targets(&events, &raw.tracts, hours, diag);
        Self::from_parts(mask, raw.stations.clone(), raw.tracts.clone(), weather, stats, targets)
    }

    pub fn from_parts(
        mask: FeatureMask,
        stations: Vec<StationLocation>,
        tracts: Vec<TractProfile>,
        weather: WeatherGrid,
        stats: ChannelStats,
        targets: TargetTable,
    ) -> Result<Self> {
        let first = tracts
            .first()
            .ok_or_else(|| Error::Data("no tracts".into()))?;
        let layout = SampleLayout {
            n_stations: stations.len(),
            k_income: first.income_bins.len(),
            k_year_built: first.year_built_bins.len(),
        };
        if let Some(t) = tracts.iter().find(|t| {
            t.income_bins.len() != layout.k_income || t.year_built_bins.len() != layout.k_year_built
        }) {
            return Err(Error::Data(format!("tract {} has inconsistent bin counts", t.tract_id)));
        }
        if weather.stations.len() != stations.len() || targets.hours != weather.hours {
            return Err(Error::Config("weather grid does not match stations or targets".into()));
        }
        let distances = tracts
            .iter()
            .map(|t| station_distances(t.centroid, &stations))
            .collect::<Result<Vec<_>>>()?;
        let mut dataset = Self {
            mask,
            layout,
            stations,
            tracts,
            distances,
            weather,
            stats,
            targets,
            conditions: Vec::new(),
        };
        dataset.conditions = dataset.raw_conditions();
        Ok(dataset)
    }

    fn raw_conditions(&self) -> Vec<Vec<f64>> {
        self.tracts
            .iter()
            .map(|t| condition_vector::<ChaCha8Rng>(t, &self.mask, None))
            .collect()
    }

    /// Same data under a different feature mask.
    pub fn with_mask(&self, mask: FeatureMask) -> Self {
        let mut d = self.clone();
        d.mask = mask;
        d.conditions = d.raw_conditions();
        d
    }

    pub fn n_tracts(&self) -> usize {
        self.tracts.len()
    }

    pub fn n_hours(&self) -> usize {
        self.weather.hours.len
    }

    pub fn base_len(&self) -> usize {
        self.layout.base_len(&self.mask)
    }

    pub fn cond_len(&self) -> usize {
        self.layout.cond_len(&self.mask)
    }

    pub fn tract_ids(&self) -> Vec<String> {
        self.tracts.iter().map(|t| t.tract_id.clone()).collect()
    }

    /// Indices of the tracts assigned to `subset`, in dataset order.
    pub fn tract_indices(&self, split: &SplitAssignment, subset: Subset) -> Vec<usize> {
        self.tracts
            .iter()
            .enumerate()
            .filter(|(_, t)| split.subset_of(&t.tract_id) == Some(subset))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn target(&self, tract: usize, hour: usize) -> f64 {
        self.targets.get(tract, hour)
    }

    /// Writes the base block of a sample into `out`.
    pub fn fill_base(&self, tract: usize, hour: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.weather.hour_slice(hour));
        if self.mask.distance {
            out.extend(self.distances[tract].iter().map(|d| d / DISTANCE_SCALE_KM));
        }
    }

    /// The raw-estimate condition vector of a tract.
    pub fn condition(&self, tract: usize) -> &[f64] {
        &self.conditions[tract]
    }

    /// A condition vector with margin-of-error augmentation.
    pub fn augmented_condition<R: Rng + ?Sized>(&self, tract: usize, rng: &mut R) -> Vec<f64> {
        condition_vector(&self.tracts[tract], &self.mask, Some(rng))
    }

    pub fn sample(&self, tract: usize, hour: usize) -> Result<HourlySample> {
        assemble_sample::<ChaCha8Rng>(
            &self.tracts[tract],
            self.weather.hours.start + hour as i64,
            self.target(tract, hour),
            self.weather.hour_slice(hour),
            &self.distances[tract],
            &self.layout,
            &self.mask,
            None,
        )
    }

    /// Writes `samples.csv` plus a `schema.txt` sidecar with the column counts.
    pub fn write_samples(&self, dir: &std::path::Path) -> Result<()> {
        let path = dir.join("samples.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let (nb, nc) = (self.base_len(), self.cond_len());
        let mut header = vec!["tract_id".to_string(), "hour".into(), "target".into()];
        header.extend((0..nb).map(|i| format!("base_{i}")));
        header.extend((0..nc).map(|i| format!("cond_{i}")));
        ingest::write_csv_record(&mut writer, &header)?;
        let mut base = Vec::new();
        for t in 0..self.n_tracts() {
            for h in 0..self.n_hours() {
                self.fill_base(t, h, &mut base);
                let mut row = vec![
                    self.tracts[t].tract_id.clone(),
                    ingest::time::format_hour(self.weather.hours.start + h as i64),
                    self.target(t, h).to_string(),
                ];
                row.extend(base.iter().map(f64::to_string));
                row.extend(self.condition(t).iter().map(f64::to_string));
                ingest::write_csv_record(&mut writer, &row)?;
            }
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
        let schema_path = dir.join("schema.txt");
        let mut f = std::fs::File::create(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
        writeln!(
            f,
            "mask={}\nbase_columns={nb}\ncond_columns={nc}\nstations={}\nincome_bins={}\nyear_built_bins={}",
            self.mask,
            self.layout.n_stations,
            self.layout.k_income,
            self.layout.k_year_built
        )
        .map_err(|e| Error::io(&schema_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tract(id: &str, population: u64) -> TractProfile {
        TractProfile {
            tract_id: id.into(),
            centroid: (42.3, -83.1),
            population,
            households: population / 2,
            houses: population / 2,
            income_bins: (0..10)
                .map(|i| Estimate {
                    estimate: 10.0 + i as f64,
                    moe: 2.0,
                })
                .collect(),
            year_built_bins: (0..9)
                .map(|i| Estimate {
                    estimate: 20.0 - i as f64,
                    moe: 3.0,
                })
                .collect(),
            infra_counts: [0; N_INFRA],
            infra_total: 0,
        }
        .with_infra([1, 0, 2, 5, 30, 0, 1, 3, 0, 0, 12])
    }

    fn event(id: &str, start: i64, end: i64, customers: u64, alloc: &[(&str, f64)]) -> OutageEvent {
        OutageEvent {
            event_id: id.into(),
            start_hour: start,
            end_hour: end,
            max_customers: customers,
            allocations: alloc.iter().map(|(t, f)| (t.to_string(), *f)).collect(),
        }
    }

    #[test]
    fn excess_customers_clip_to_one() {
        let tracts = [tract("A", 100)];
        let t = build_targets(
            &[event("E", 0, 0, 150, &[("A", 1.0)])],
            &tracts,
            HourRange::new(0, 2),
            &mut Diagnostics::new(),
        );
        assert_eq!(t.get(0, 0), 1.0);
        assert_eq!(t.get(0, 1), 0.0);
    }

    #[test]
    fn simple_ratio() {
        let tracts = [tract("A", 200)];
        let t = build_targets(
            &[event("E", 0, 0, 50, &[("A", 1.0)])],
            &tracts,
            HourRange::new(0, 1),
            &mut Diagnostics::new(),
        );
        assert_eq!(t.get(0, 0), 0.25);
    }

    #[test]
    fn overlapping_events_sum() {
        let tracts = [tract("A", 400), tract("B", 400)];
        let events = [
            event("E1", 3, 6, 60, &[("A", 0.5), ("B", 0.5)]),
            event("E2", 5, 8, 20, &[("A", 1.0)]),
        ];
        let range = HourRange::new(0, 10);
        let t = build_targets(&events, &tracts, range, &mut Diagnostics::new());
        // Brute force: walk every hour and every event.
        for (ti, tr) in tracts.iter().enumerate() {
            for h in 0..10i64 {
                let mut count = 0.0;
                for e in &events {
                    if h >= e.start_hour && h <= e.end_hour {
                        for (id, f) in &e.allocations {
                            if *id == tr.tract_id {
                                count += e.max_customers as f64 * f;
                            }
                        }
                    }
                }
                let expected = (count / tr.population as f64).min(1.0);
                assert_eq!(t.get(ti, h as usize), expected, "tract {ti} hour {h}");
            }
        }
        assert_eq!(t.get(0, 5), 0.125);
    }

    #[test]
    fn zero_population_with_outage_is_one() {
        let tracts = [tract("A", 0)];
        let mut diag = Diagnostics::new();
        let t = build_targets(&[event("E", 0, 0, 5, &[("A", 1.0)])], &tracts, HourRange::new(0, 1), &mut diag);
        assert_eq!(t.get(0, 0), 1.0);
        assert_eq!(diag.warnings.len(), 1);
    }

    #[test]
    fn augmentation_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let exact = [Estimate { estimate: 3.0, moe: 0.0 }, Estimate { estimate: 9.0, moe: 0.0 }];
        assert_eq!(augment_distribution(&exact, &mut rng), vec![3.0, 9.0]);

        let bins = [Estimate { estimate: 10.0, moe: 4.0 }, Estimate { estimate: 1.0, moe: 5.0 }];
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for _ in 0..10_000 {
            let v = augment_distribution(&bins, &mut rng);
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        assert!(lo[0] >= 6.0 && hi[0] <= 14.0);
        assert!(lo[0] < 6.1 && hi[0] > 13.9);
        assert!(lo[1] == 0.0 && hi[1] <= 6.0 && hi[1] > 5.9);
    }

    #[test]
    fn softmax_cases() {
        let u = softmax_normalize(&[4.0; 5], 20.0);
        assert!(u.iter().all(|v| (v - 0.2).abs() < 1e-15));

        let total = 7.0;
        let s = softmax_normalize(&[total, 0.0, 0.0], total);
        let e = 1f64.exp();
        let oracle = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
        for k in 0..3 {
            assert!((s[k] - oracle[k]).abs() < 1e-15);
        }
        assert!((s[0] - 0.576).abs() < 5e-4 && (s[1] - 0.212).abs() < 5e-4);

        let fallback = softmax_normalize(&[1.0, 2.0], 0.0);
        assert_eq!(fallback, vec![0.5, 0.5]);
    }

    fn layout() -> SampleLayout {
        SampleLayout {
            n_stations: 5,
            k_income: 10,
            k_year_built: 9,
        }
    }

    #[test]
    fn sample_lengths_follow_mask() {
        let t = tract("A", 100);
        let weather = vec![0.1; 50];
        let dist = vec![12.0; 5];
        let s = assemble_sample::<ChaCha8Rng>(&t, 0, 0.0, &weather, &dist, &layout(), &FeatureMask::ALL, None)
            .unwrap();
        assert_eq!((s.base.len(), s.condition.len()), (55, 10 + 9 + 11 + 4));
        assert_eq!(layout().base_len(&FeatureMask::ALL), 55);
        assert_eq!(layout().cond_len(&FeatureMask::ALL), 34);

        let s = assemble_sample::<ChaCha8Rng>(
            &t,
            0,
            0.0,
            &weather,
            &dist,
            &layout(),
            &FeatureMask::WEATHER_ONLY,
            None,
        )
        .unwrap();
        assert!(s.condition.is_empty());
        assert_eq!(s.base.len(), 50);
    }

    #[test]
    fn condition_is_hour_independent_without_augmentation() {
        let t = tract("A", 100);
        let dist = vec![12.0; 5];
        let a = assemble_sample::<ChaCha8Rng>(&t, 1, 0.0, &[0.3; 50], &dist, &layout(), &FeatureMask::ALL, None)
            .unwrap();
        let b = assemble_sample::<ChaCha8Rng>(&t, 2, 0.0, &[-0.7; 50], &dist, &layout(), &FeatureMask::ALL, None)
            .unwrap();
        assert_eq!(a.condition, b.condition);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = assemble_sample(&t, 1, 0.0, &[0.3; 50], &dist, &layout(), &FeatureMask::ALL, Some(&mut rng))
            .unwrap();
        assert_ne!(a.condition, c.condition);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let t = tract("A", 100);
        let r = assemble_sample::<ChaCha8Rng>(&t, 0, 0.0, &[0.0; 40], &[1.0; 5], &layout(), &FeatureMask::ALL, None);
        assert!(matches!(r, Err(Error::Config(_))));
        let mut narrow = layout();
        narrow.k_income = 4;
        let r = assemble_sample::<ChaCha8Rng>(&t, 0, 0.0, &[0.0; 50], &[1.0; 5], &narrow, &FeatureMask::ALL, None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("T{i:03}")).collect()
    }

    #[test]
    fn split_proportions() {
        let s = split_tracts(&ids(100), 3).unwrap();
        assert_eq!(
            (s.count(Subset::Train), s.count(Subset::Val), s.count(Subset::Test)),
            (72, 8, 20)
        );
        // 10 tracts: floors 7/0/2, remainder to train gives 8/0/2, then
        // validation borrows one tract from train.
        let s = split_tracts(&ids(10), 3).unwrap();
        let n = 10;
        let (f_val, f_test) = (n * 8 / 100, n * 20 / 100);
        assert_eq!((n - f_val - f_test, f_val, f_test), (8, 0, 2));
        assert_eq!(
            (s.count(Subset::Train), s.count(Subset::Val), s.count(Subset::Test)),
            (7, 1, 2)
        );
        assert!(split_tracts(&ids(9), 3).is_err());
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let a = split_tracts(&ids(60), 11).unwrap();
        assert_eq!(a, split_tracts(&ids(60), 11).unwrap());
        assert_ne!(a, split_tracts(&ids(60), 12).unwrap());
        assert_eq!(a.assignment.len(), 60);
    }

    #[test]
    fn mask_ladder_and_parsing() {
        let ladder = FeatureMask::ladder();
        assert_eq!(ladder[0], FeatureMask::WEATHER_ONLY);
        assert_eq!(ladder[5], FeatureMask::ALL);
        for w in ladder.windows(2) {
            assert_eq!(w[1].groups().len(), w[0].groups().len() + 1);
        }
        assert_eq!(FeatureMask::parse("distance,income").unwrap().to_string(), "weather+distance+income");
        assert!(FeatureMask::parse("bogus").is_err());
        let mut m = FeatureMask::ALL;
        assert!(m.set("weather", false).is_err());
        m.set("totals", false).unwrap();
        assert!(!m.totals);
    }

    #[test]
    fn sample_rng_streams_differ() {
        let a: u64 = sample_rng(1, 0, 0).gen();
        assert_eq!(a, sample_rng(1, 0, 0).gen::<u64>());
        assert_ne!(a, sample_rng(1, 0, 1).gen::<u64>());
        assert_ne!(a, sample_rng(1, 1, 0).gen::<u64>());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_simplex(bins in prop::collection::vec(0.0f64..1e6, 1..20)) {
                let total: f64 = bins.iter().sum();
                let s = softmax_normalize(&bins, total);
                prop_assert!(s.iter().all(|v| *v > 0.0));
                prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn targets_stay_in_unit_interval(
                customers in prop::collection::vec(2u64..500, 1..6),
                population in 1u64..300,
            ) {
                let tracts = [tract("A", population), tract("B", population * 2)];
                let events: Vec<OutageEvent> = customers
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| event(&format!("E{i}"), i as i64, i as i64 + 2, c, &[("A", 0.25), ("B", 0.75)]))
                    .collect();
                let t = build_targets(&events, &tracts, HourRange::new(0, 12), &mut Diagnostics::new());
                for ti in 0..2 {
                    for h in 0..12 {
                        let v = t.get(ti, h);
                        prop_assert!((0.0..=1.0).contains(&v));
                        if h >= customers.len() + 2 {
                            prop_assert_eq!(v, 0.0);
                        }
                    }
                }
                for e in &events {
                    let allocated: f64 = e.allocations.iter().map(|(_, f)| e.max_customers as f64 * f).sum();
                    prop_assert!((allocated - e.max_customers as f64).abs() < 1e-6);
                }
            }
        }
    }
}
