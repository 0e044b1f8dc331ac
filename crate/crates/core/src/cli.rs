//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Diagnostics, Error, Result};
use crate::eval::{self, ReportRow};
use crate::features::{split_tracts, Dataset, FeatureMask, Subset, TargetTable};
use crate::ingest::{
    fill_missing, normalize, parse_tracts, parse_weather, write_stats, HourRange, RawData, WeatherSchema,
};
use crate::synth::{generate_world, WorldSpec};
use crate::train::{self, ArchKind, LossChoice, ModelBundle, RunConfig, Summary};

#[derive(Debug, Parser)]
#[command(name = "gridrisk", version, about = "Hourly outage probability forecasting per census tract")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world (five input files plus truth.csv).
    Synth {
        /// World spec file; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Clean a data directory and write the assembled samples.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `<data>/model.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on the test tracts of a data directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Defaults to `predictions.csv` beside the report.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run the feature ablation ladder.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Outage probabilities for every tract and forecast hour.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        #[arg(long)]
        tracts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = ["xent", "exp"])]
    loss: Option<String>,
    #[arg(long, value_parser = ["uncond", "cond"])]
    arch: Option<String>,
    /// Comma list of feature groups; weather is always on.
    #[arg(long)]
    mask: Option<String>,
}

impl Overrides {
    fn resolve(&self, file: Option<&Path>) -> Result<RunConfig> {
        let mut config = match file {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        if let Some(loss) = &self.loss {
            config.loss = LossChoice::parse(loss)?;
        }
        if let Some(arch) = &self.arch {
            config.arch = ArchKind::parse(arch)?;
        }
        if let Some(mask) = &self.mask {
            config.mask = FeatureMask::parse(mask)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            return 1;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn report_warnings(diag: &Diagnostics) {
    if !diag.is_empty() {
        eprintln!("{} data warning(s)", diag.warnings.len());
    }
}

fn load_dataset(data: &Path, mask: FeatureMask, bundle: Option<&ModelBundle>) -> Result<Dataset> {
    let schema = WeatherSchema::default();
    let raw = RawData::load(data, &schema)?;
    let mut diag = Diagnostics::new();
    let dataset = Dataset::prepare(&raw, &schema, mask, bundle.map(|b| &b.stats), &mut diag)?;
    report_warnings(&diag);
    Ok(dataset)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn check_stations(bundle: &ModelBundle, dataset: &Dataset) -> Result<()> {
    if bundle.stations != dataset.stations || bundle.layout != dataset.layout {
        return Err(Error::Data(
            "stations or bin counts differ from those the checkpoint was trained on".into(),
        ));
    }
    Ok(())
}

fn echo_config(config: &RunConfig) {
    println!("# resolved configuration");
    print!("{config}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out, seed } => {
            let mut spec = match spec {
                Some(path) => WorldSpec::from_file(&path)?,
                None => WorldSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            println!("# resolved world spec");
            print!("{}", spec.to_text());
            let world = generate_world(&spec)?;
            world.write(&out)?;
            println!(
                "wrote {} stations, {} tracts, {} events to {}",
                world.stations.len(),
                world.tracts.len(),
                world.allocations.len(),
                out.display()
            );
        }
        Command::Ingest { data, out } => {
            let dataset = load_dataset(&data, FeatureMask::ALL, None)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            dataset.write_samples(&out)?;
            let stats_path = out.join("stats.csv");
            let file = std::fs::File::create(&stats_path).map_err(|e| Error::io(&stats_path, e))?;
            write_stats(std::io::BufWriter::new(file), &WeatherSchema::default(), &dataset.stats)?;
            println!(
                "{} tracts x {} hours, base {} + condition {} features, written to {}",
                dataset.n_tracts(),
                dataset.n_hours(),
                dataset.base_len(),
                dataset.cond_len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            checkpoint,
            overrides,
        } => {
            let config = overrides.resolve(config.as_deref())?;
            echo_config(&config);
            let checkpoint = checkpoint.unwrap_or_else(|| data.join("model.bin"));
            let dataset = load_dataset(&data, config.mask, None)?;
            let split = split_tracts(&dataset.tract_ids(), config.seed)?;
            let (params, report) = train::train_one(&config, &dataset, &split)?;
            create_parent(&checkpoint)?;
            let bundle = ModelBundle {
                params,
                config: config.clone(),
                split_seed: config.seed,
                stations: dataset.stations.clone(),
                layout: dataset.layout,
                stats: dataset.stats.clone(),
            };
            bundle.save(&checkpoint, &WeatherSchema::default())?;
            let log = training_log_path(&checkpoint);
            write_training_log(&log, &report)?;
            println!(
                "selected epoch {}; test MAE {} RMSE {}; checkpoint {}",
                report.selected_epoch,
                report.test.mae,
                report.test.rmse,
                checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            report,
            predictions,
        } => {
            let schema = WeatherSchema::default();
            let bundle = ModelBundle::load(&checkpoint, &schema)?;
            echo_config(&bundle.config);
            let dataset = load_dataset(&data, bundle.config.mask, Some(&bundle))?;
            check_stations(&bundle, &dataset)?;
            let split = split_tracts(&dataset.tract_ids(), bundle.split_seed)?;
            let test = dataset.tract_indices(&split, Subset::Test);
            let preds = eval::predict(&bundle.params, &dataset, &test)?;
            let metrics = eval::score(&preds)?;
            create_parent(&report)?;
            let single = |x: f64| Summary { mean: x, std: 0.0 };
            eval::write_report(
                &report,
                &[ReportRow {
                    mask: bundle.config.mask,
                    loss: bundle.config.loss.name(),
                    mae: single(metrics.mae),
                    rmse: single(metrics.rmse),
                }],
            )?;
            let predictions = predictions.unwrap_or_else(|| report.with_file_name("predictions.csv"));
            eval::write_predictions(&predictions, &preds)?;
            println!("test MAE {} RMSE {} over {} samples", metrics.mae, metrics.rmse, preds.len());
        }
        Command::Ablate {
            config,
            data,
            report,
            overrides,
        } => {
            let config = overrides.resolve(config.as_deref())?;
            echo_config(&config);
            let dataset = load_dataset(&data, FeatureMask::ALL, None)?;
            let rows = eval::ablate(&config, &dataset)?;
            create_parent(&report)?;
            let flat: Vec<ReportRow> = rows.iter().flat_map(|r| r.report_rows()).collect();
            eval::write_report(&report, &flat)?;
            let table = ablation_table_path(&report);
            eval::write_ablation_table(&table, &rows)?;
            for r in &flat {
                println!("{:<50} {:<5} MAE {} RMSE {}", r.mask.to_string(), r.loss, r.mae, r.rmse);
            }
        }
        Command::Predict {
            checkpoint,
            weather,
            tracts,
            out,
        } => {
            let schema = WeatherSchema::default();
            let bundle = ModelBundle::load(&checkpoint, &schema)?;
            echo_config(&bundle.config);
            let preds = predict_forecast(&bundle, &schema, &weather, &tracts)?;
            create_parent(&out)?;
            write_forecast(&out, &preds)?;
            println!("wrote {} predictions to {}", preds.len(), out.display());
        }
    }
    Ok(())
}

/// `<checkpoint>.train.csv`: one line per epoch.
pub fn training_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_os_string();
    name.push(".train.csv");
    PathBuf::from(name)
}

/// `<report stem>_table.csv` beside the report.
pub fn ablation_table_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}_table.csv"))
}

fn write_training_log(path: &Path, report: &train::TrainReport) -> Result<()> {
    use std::io::Write;
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "epoch,train_loss,val_loss,val_mae,selected").map_err(io)?;
    for e in &report.epochs {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_mae,
            u8::from(e.epoch == report.selected_epoch)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Predictions for every tract in `tracts` and every hour covered by the
/// forecast, using the checkpoint's stations and normalization.
pub fn predict_forecast(
    bundle: &ModelBundle,
    schema: &WeatherSchema,
    weather: &Path,
    tracts: &Path,
) -> Result<Vec<eval::Prediction>> {
    let obs = parse_weather(crate::ingest::open(weather)?, schema)?;
    let tracts = parse_tracts(crate::ingest::open(tracts)?)?;
    let hours = HourRange::covering(&obs).ok_or_else(|| Error::Data("forecast has no observations".into()))?;
    let ids: Vec<String> = bundle.stations.iter().map(|s| s.station_id.clone()).collect();
    let unknown = obs.iter().filter(|o| !ids.contains(&o.station_id)).count();
    if unknown > 0 {
        log::warn!("{unknown} forecast rows from stations unknown to the checkpoint ignored");
    }
    let grid = normalize(&fill_missing(&obs, &ids, hours, schema)?, &bundle.stats);
    let targets = TargetTable::zeros(tracts.iter().map(|t| t.tract_id.clone()).collect(), hours);
    let dataset = Dataset::from_parts(
        bundle.config.mask,
        bundle.stations.clone(),
        tracts,
        grid,
        bundle.stats.clone(),
        targets,
    )?;
    if dataset.layout != bundle.layout {
        return Err(Error::Data("tract bin counts differ from those the checkpoint was trained on".into()));
    }
    let all: Vec<usize> = (0..dataset.n_tracts()).collect();
    eval::predict(&bundle.params, &dataset, &all)
}

fn write_forecast(path: &Path, preds: &[eval::Prediction]) -> Result<()> {
    use std::io::Write;
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "tract_id,hour,pred_raw,pred_thresholded").map_err(io)?;
    for p in preds {
        writeln!(
            w,
            "{},{},{},{}",
            p.tract_id,
            crate::ingest::time::format_hour(p.hour),
            p.raw,
            p.thresholded
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
