//! Mini-batch training with validation-based model selection, repeated
//! seeded runs, and trained-model bundles.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{parse_bool, parse_kv, parse_value};
use crate::error::{Error, Result};
use crate::eval::{self, MetricPair};
use crate::features::{
    sample_rng, split_tracts, Dataset, FeatureMask, SampleLayout, SplitAssignment, Subset, GROUP_NAMES,
};
use crate::ingest::{read_stats, write_stats, ChannelStats, StationLocation, WeatherSchema};
use crate::loss::{LossKind, DEFAULT_BETA, DEFAULT_OUTAGE_WEIGHT};
use crate::nn::{accumulate_backward, checkpoint, init_params, parse_width_list, Architecture, ForwardCache, Gradients, ModelParams};

/// Samples per gradient chunk; chunks are reduced in a fixed order.
const CHUNK: usize = 64;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Unconditional,
    Conditional,
}

impl ArchKind {
    pub fn name(&self) -> &'static str {
        match self {
            ArchKind::Unconditional => "uncond",
            ArchKind::Conditional => "cond",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "uncond" | "unconditional" => Ok(ArchKind::Unconditional),
            "cond" | "conditional" => Ok(ArchKind::Conditional),
            _ => Err(Error::Config(format!("unknown architecture {text:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossChoice {
    CrossEntropy,
    Exponential,
}

impl LossChoice {
    pub fn name(&self) -> &'static str {
        match self {
            LossChoice::CrossEntropy => "xent",
            LossChoice::Exponential => "exp",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "xent" => Ok(LossChoice::CrossEntropy),
            "exp" => Ok(LossChoice::Exponential),
            _ => Err(Error::Config(format!("unknown loss {text:?} (expected xent or exp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd { momentum: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: ArchKind,
    pub loss: LossChoice,
    pub w: f64,
    pub beta: f64,
    pub mask: FeatureMask,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub n_runs: usize,
    pub clip_norm: f64,
    pub augment: bool,
    pub hidden: Vec<usize>,
    pub base_hidden: Vec<usize>,
    pub cond_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let Architecture::Unconditional { hidden, .. } = Architecture::default_unconditional(1, 1) else {
            unreachable!()
        };
        let Architecture::Conditional {
            base_hidden,
            cond_hidden,
            head_hidden,
            ..
        } = Architecture::default_conditional(1, 1, 1)
        else {
            unreachable!()
        };
        Self {
            arch: ArchKind::Unconditional,
            loss: LossChoice::Exponential,
            w: DEFAULT_OUTAGE_WEIGHT,
            beta: DEFAULT_BETA,
            mask: FeatureMask::ALL,
            seed: 0,
            epochs: 50,
            batch_size: 512,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            n_runs: 3,
            clip_norm: 10.0,
            augment: true,
            hidden,
            base_hidden,
            cond_hidden,
            head_hidden,
        }
    }
}

fn widths(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in parse_kv(text)? {
            config.set(&k, &v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies one `key = value` setting. Feature groups can be given as a
    /// `mask` list or as individual boolean keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "arch" => self.arch = ArchKind::parse(value)?,
            "loss" => self.loss = LossChoice::parse(value)?,
            "w" => self.w = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "mask" => self.mask = FeatureMask::parse(value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "n_runs" => self.n_runs = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "hidden" => self.hidden = parse_width_list(value)?,
            "base_hidden" => self.base_hidden = parse_width_list(value)?,
            "cond_hidden" => self.cond_hidden = parse_width_list(value)?,
            "head_hidden" => self.head_hidden = parse_width_list(value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => Optimizer::adam(),
                    "sgd" => Optimizer::Sgd { momentum: 0.9 },
                    _ => return Err(Error::Config(format!("unknown optimizer {value:?}"))),
                }
            }
            "momentum" | "beta1" | "beta2" | "epsilon" => {
                let x: f64 = parse_value(key, value)?;
                match (&mut self.optimizer, key) {
                    (Optimizer::Sgd { momentum }, "momentum") => *momentum = x,
                    (Optimizer::Adam { beta1, .. }, "beta1") => *beta1 = x,
                    (Optimizer::Adam { beta2, .. }, "beta2") => *beta2 = x,
                    (Optimizer::Adam { epsilon, .. }, "epsilon") => *epsilon = x,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key} does not apply to the selected optimizer"
                        )))
                    }
                }
            }
            group if GROUP_NAMES.contains(&group) => self.mask.set(group, parse_bool(group, value)?)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_kind().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !self.mask.weather {
            return bad("the weather group cannot be disabled".into());
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            LossChoice::CrossEntropy => LossKind::WeightedCrossEntropy { w: self.w },
            LossChoice::Exponential => LossKind::Exponential { beta: self.beta },
        }
    }

    pub fn architecture(&self, base_len: usize, cond_len: usize) -> Architecture {
        let d_out = self.loss_kind().d_out();
        match self.arch {
            ArchKind::Unconditional => Architecture::Unconditional {
                input: base_len + cond_len,
                hidden: self.hidden.clone(),
                d_out,
            },
            ArchKind::Conditional => Architecture::Conditional {
                base_input: base_len,
                cond_input: cond_len,
                base_hidden: self.base_hidden.clone(),
                cond_hidden: self.cond_hidden.clone(),
                head_hidden: self.head_hidden.clone(),
                d_out,
            },
        }
    }

    /// The resolved configuration as `key = value` lines, readable by
    /// [`RunConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "arch = {}\nloss = {}\nw = {}\nbeta = {}\nmask = {}\nseed = {}\nepochs = {}\n\
batch_size = {}\nlearning_rate = {}\nn_runs = {}\nclip_norm = {}\naugment = {}\n",
            self.arch.name(),
            self.loss.name(),
            self.w,
            self.beta,
            self.mask.groups().join(","),
            self.seed,
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.n_runs,
            self.clip_norm,
            self.augment,
        );
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, epsilon } => s.push_str(&format!(
                "optimizer = adam\nbeta1 = {beta1}\nbeta2 = {beta2}\nepsilon = {epsilon}\n"
            )),
            Optimizer::Sgd { momentum } => {
                s.push_str(&format!("optimizer = sgd\nmomentum = {momentum}\n"))
            }
        }
        s.push_str(&format!(
            "hidden = {}\nbase_hidden = {}\ncond_hidden = {}\nhead_hidden = {}\n",
            widths(&self.hidden),
            widths(&self.base_hidden),
            widths(&self.cond_hidden),
            widths(&self.head_hidden)
        ));
        s
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 means the initial parameters.
    pub selected_epoch: usize,
    pub test: MetricPair,
    pub wall_time: Duration,
}

impl TrainReport {
    /// Share of consecutive epochs whose training loss did not increase.
    pub fn non_increasing_fraction(&self) -> Option<f64> {
        let pairs = self.epochs.windows(2);
        let n = pairs.len();
        if n == 0 {
            return None;
        }
        let ok = self
            .epochs
            .windows(2)
            .filter(|w| w[1].train_loss <= w[0].train_loss)
            .count();
        Some(ok as f64 / n as f64)
    }
}

struct OptimizerState {
    kind: Optimizer,
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, params: &ModelParams) -> Self {
        Self {
            kind,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        match self.kind {
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for ((p, g), (m, v)) in tensors {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                    }
                }
            }
            Optimizer::Sgd { momentum } => {
                for ((p, g), (m, _)) in tensors {
                    for i in 0..p.len() {
                        m[i] = momentum * m[i] + g[i];
                        p[i] -= lr * m[i];
                    }
                }
            }
        }
    }
}

fn with_context(err: Error, context: &str) -> Error {
    match err {
        Error::Numeric { location, message } => Error::Numeric {
            location: format!("{context}, {location}"),
            message,
        },
        other => other,
    }
}

/// Loss sum and summed gradients over one chunk of samples.
fn chunk_gradients(
    params: &ModelParams,
    dataset: &Dataset,
    loss: LossKind,
    samples: &[(u32, u32)],
    augment: Option<(u64, u64)>,
) -> Result<(f64, Gradients)> {
    let mut grads = params.zeros_like();
    let mut cache = ForwardCache::default();
    let mut base = Vec::with_capacity(dataset.base_len());
    let mut total = 0.0;
    for &(t, h) in samples {
        let (t, h) = (t as usize, h as usize);
        dataset.fill_base(t, h, &mut base);
        let augmented;
        let cond = match augment {
            Some((seed, epoch)) => {
                let index = (t * dataset.n_hours() + h) as u64;
                augmented = dataset.augmented_condition(t, &mut sample_rng(seed, epoch, index));
                &augmented[..]
            }
            None => dataset.condition(t),
        };
        let out = params.forward(&base, cond, Some(&mut cache))?;
        let (value, dlogits) = loss.value_and_logit_grad(&out, dataset.target(t, h))?;
        total += value;
        accumulate_backward(params, &cache, &dlogits, &mut grads)?;
    }
    Ok((total, grads))
}

/// Mean loss over every hour of `tracts`, without augmentation.
pub fn mean_loss(params: &ModelParams, dataset: &Dataset, loss: LossKind, tracts: &[usize]) -> Result<f64> {
    let sums = tracts
        .par_iter()
        .map(|&t| {
            let mut base = Vec::with_capacity(dataset.base_len());
            let mut values = Vec::with_capacity(dataset.n_hours());
            for h in 0..dataset.n_hours() {
                dataset.fill_base(t, h, &mut base);
                let out = params.forward(&base, dataset.condition(t), None)?;
                values.push(loss.value_and_grad(&out, dataset.target(t, h))?.0);
            }
            Ok(eval::pairwise_sum(&values))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(eval::pairwise_sum(&sums) / (tracts.len() * dataset.n_hours()).max(1) as f64)
}

/// Trains one model. The dataset is re-masked to `config.mask` if needed.
pub fn train_one(config: &RunConfig, dataset: &Dataset, split: &SplitAssignment) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let start = Instant::now();
    let remasked;
    let dataset = if dataset.mask == config.mask {
        dataset
    } else {
        remasked = dataset.with_mask(config.mask);
        &remasked
    };
    let loss = config.loss_kind();
    let arch = config.architecture(dataset.base_len(), dataset.cond_len());
    let mut params = init_params(&arch, config.seed)?;
    let train_tracts = dataset.tract_indices(split, Subset::Train);
    let val_tracts = dataset.tract_indices(split, Subset::Val);
    let test_tracts = dataset.tract_indices(split, Subset::Test);
    if train_tracts.is_empty() || val_tracts.is_empty() || test_tracts.is_empty() {
        return Err(Error::Config("split leaves a partition without tracts".into()));
    }

    let mut order: Vec<(u32, u32)> = train_tracts
        .iter()
        .flat_map(|&t| (0..dataset.n_hours()).map(move |h| (t as u32, h as u32)))
        .collect();
    let mut optimizer = OptimizerState::new(config.optimizer, &params);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut sample_rng(config.seed, epoch as u64, SHUFFLE_STREAM));
        let mut batch_losses = Vec::with_capacity(order.len() / config.batch_size + 1);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let context = format!("epoch {epoch}, batch {}", b + 1);
            let augment = config.augment.then_some((config.seed, epoch as u64));
            let parts = batch
                .par_chunks(CHUNK)
                .map(|chunk| chunk_gradients(&params, dataset, loss, chunk, augment))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| with_context(e, &context))?;
            let mut parts = parts.into_iter();
            let (mut total, mut grads) = parts.next().expect("batches are non-empty");
            for (l, g) in parts {
                total += l;
                grads.add_assign(&g);
            }
            let mean = total / batch.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Numeric {
                    location: context,
                    message: format!("training loss became {mean}"),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::Numeric {
                    location: context,
                    message: format!("gradient norm became {norm}"),
                });
            }
            if norm > config.clip_norm {
                grads.scale(config.clip_norm / norm);
            }
            optimizer.step(&mut params, &grads, config.learning_rate);
            if !params.all_finite() {
                return Err(Error::Numeric {
                    location: context,
                    message: "parameters became non-finite after the update".into(),
                });
            }
            batch_losses.push(mean);
        }
        let train_loss = eval::pairwise_sum(&batch_losses) / batch_losses.len() as f64;
        let val_context = format!("epoch {epoch}, validation");
        let val_loss = mean_loss(&params, dataset, loss, &val_tracts).map_err(|e| with_context(e, &val_context))?;
        let val_mae = eval::evaluate(&params, dataset, &val_tracts)
            .map_err(|e| with_context(e, &val_context))?
            .mae;
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} val_mae {val_mae:.6}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_mae,
        });
        if best.as_ref().is_none_or(|(m, _, _)| val_mae < *m) {
            best = Some((val_mae, epoch, params.clone()));
        }
    }

    let (selected_epoch, params) = match best {
        Some((_, epoch, p)) => (epoch, p),
        None => (0, params),
    };
    let test = eval::evaluate(&params, dataset, &test_tracts)?;
    Ok((
        params,
        TrainReport {
            epochs,
            selected_epoch,
            test,
            wall_time: start.elapsed(),
        },
    ))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}({:.4})", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedResult {
    pub runs: Vec<RunOutcome>,
    pub mae: Summary,
    pub rmse: Summary,
}

/// Seeds used by [`run_repeated`]: `seed + i` for each run.
pub fn run_seeds(config: &RunConfig) -> Vec<u64> {
    (0..config.n_runs as u64).map(|i| config.seed.wrapping_add(i)).collect()
}

/// Trains `n_runs` models. The split is drawn once from the base seed and
/// shared by every run; each run trains with its own seed.
pub fn run_repeated(config: &RunConfig, dataset: &Dataset) -> Result<RepeatedResult> {
    config.validate()?;
    let split = split_tracts(&dataset.tract_ids(), config.seed)?;
    let runs = run_seeds(config)
        .into_par_iter()
        .map(|seed| {
            let run = RunConfig { seed, ..config.clone() };
            let (_, report) = train_one(&run, dataset, &split)?;
            Ok(RunOutcome { seed, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let mae: Vec<f64> = runs.iter().map(|r| r.report.test.mae).collect();
    let rmse: Vec<f64> = runs.iter().map(|r| r.report.test.rmse).collect();
    Ok(RepeatedResult {
        mae: Summary::of(&mae),
        rmse: Summary::of(&rmse),
        runs,
    })
}

/// A trained network plus what inference needs to rebuild its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub params: ModelParams,
    pub config: RunConfig,
    pub split_seed: u64,
    pub stations: Vec<StationLocation>,
    pub layout: SampleLayout,
    pub stats: ChannelStats,
}

/// Normalization statistics are stored beside the checkpoint.
pub fn stats_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_os_string();
    name.push(".stats.csv");
    PathBuf::from(name)
}

impl ModelBundle {
    pub fn descriptor_extra(&self) -> String {
        let mut s = String::new();
        for line in self.config.to_text().lines() {
            let (k, v) = line.split_once('=').expect("to_text emits key = value");
            s.push_str(&format!("run.{}={}\n", k.trim(), v.trim()));
        }
        s.push_str(&format!("split_seed={}\n", self.split_seed));
        s.push_str(&format!("income_bins={}\n", self.layout.k_income));
        s.push_str(&format!("year_built_bins={}\n", self.layout.k_year_built));
        for st in &self.stations {
            s.push_str(&format!("station={},{},{}\n", st.station_id, st.lat, st.lon));
        }
        s
    }

    pub fn save(&self, path: &Path, schema: &WeatherSchema) -> Result<()> {
        checkpoint::save(path, &self.params, &self.descriptor_extra())?;
        let sp = stats_path(path);
        let file = std::fs::File::create(&sp).map_err(|e| Error::io(&sp, e))?;
        write_stats(std::io::BufWriter::new(file), schema, &self.stats)
    }

    pub fn load(path: &Path, schema: &WeatherSchema) -> Result<Self> {
        let (params, descriptor) = checkpoint::load(path)?;
        let bad = |m: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m,
        };
        let mut run_text = String::new();
        let mut split_seed = None;
        let mut k_income = None;
        let mut k_year_built = None;
        let mut stations = Vec::new();
        for line in descriptor.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            if let Some(key) = k.strip_prefix("run.") {
                run_text.push_str(&format!("{key} = {v}\n"));
                continue;
            }
            match k {
                "split_seed" => split_seed = v.parse().ok(),
                "income_bins" => k_income = v.parse().ok(),
                "year_built_bins" => k_year_built = v.parse().ok(),
                "station" => {
                    let parts: Vec<&str> = v.split(',').collect();
                    let parsed = match parts.as_slice() {
                        [id, lat, lon] => lat.parse().ok().zip(lon.parse().ok()).map(|(lat, lon)| StationLocation {
                            station_id: id.to_string(),
                            lat,
                            lon,
                        }),
                        _ => None,
                    };
                    stations.push(parsed.ok_or_else(|| bad(format!("bad station entry {v:?}")))?);
                }
                _ => {}
            }
        }
        let config = RunConfig::from_text(&run_text).map_err(|e| bad(e.to_string()))?;
        let (Some(split_seed), Some(k_income), Some(k_year_built)) = (split_seed, k_income, k_year_built) else {
            return Err(bad("descriptor lacks split seed or bin counts".into()));
        };
        let layout = SampleLayout {
            n_stations: stations.len(),
            k_income,
            k_year_built,
        };
        let expected = config.architecture(layout.base_len(&config.mask), layout.cond_len(&config.mask));
        if params.architecture() != expected {
            return Err(bad("stored architecture does not match the stored run settings".into()));
        }
        let sp = stats_path(path);
        let stats = read_stats(crate::ingest::open(&sp)?, schema)?;
        Ok(Self {
            params,
            config,
            split_seed,
            stations,
            layout,
            stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_text() {
        let mut c = RunConfig::default();
        c.arch = ArchKind::Conditional;
        c.loss = LossChoice::CrossEntropy;
        c.w = 7.5;
        c.mask = FeatureMask::parse("weather,distance,income").unwrap();
        c.optimizer = Optimizer::Sgd { momentum: 0.5 };
        c.hidden = vec![8, 4];
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_keys_and_errors() {
        let c = RunConfig::from_text("loss = xent\nw = 1\nyear_built = false\nepochs = 3\n").unwrap();
        assert_eq!(c.loss_kind(), LossKind::WeightedCrossEntropy { w: 1.0 });
        assert!(!c.mask.year_built && c.mask.income);
        assert_eq!(c.epochs, 3);
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("loss = hinge").is_err());
        assert!(RunConfig::from_text("n_runs = 0").is_err());
        assert!(RunConfig::from_text("weather = false").is_err());
        assert!(RunConfig::from_text("momentum = 0.3").is_err());
    }

    #[test]
    fn defaults_follow_the_published_settings() {
        let c = RunConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.n_runs), (50, 512, 3));
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.optimizer, Optimizer::adam());
        assert_eq!((c.w, c.beta), (500.0, 20.0));
        assert_eq!(c.architecture(10, 5).d_out(), 1);
        let x = RunConfig { loss: LossChoice::CrossEntropy, ..c };
        assert_eq!(x.architecture(10, 5).d_out(), 2);
    }

    #[test]
    fn summary_oracle() {
        let s = Summary::of(&[0.2]);
        assert_eq!((s.mean, s.std), (0.2, 0.0));
        let v = [0.1, 0.4, 0.25];
        let s = Summary::of(&v);
        let mean = (0.1 + 0.4 + 0.25) / 3.0;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((s.mean - mean).abs() < 1e-12 && (s.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let arch = Architecture::Unconditional {
            input: 2,
            hidden: vec![2],
            d_out: 1,
        };
        let mut p = init_params(&arch, 1).unwrap();
        let before = p.flatten();
        let mut g = p.zeros_like();
        g.load_flat(&vec![0.5; before.len()]).unwrap();
        let mut opt = OptimizerState::new(Optimizer::adam(), &p);
        opt.step(&mut p, &g, 0.01);
        for (a, b) in before.iter().zip(p.flatten()) {
            assert!((a - b - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn seeds_increment_from_base() {
        let c = RunConfig {
            seed: 10,
            n_runs: 3,
            ..RunConfig::default()
        };
        assert_eq!(run_seeds(&c), vec![10, 11, 12]);
    }
}
