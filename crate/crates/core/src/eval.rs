//! Thresholded error metrics, prediction export, and the feature ablation
//! ladder.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureMask};
use crate::ingest::time::format_hour;
use crate::loss::LossKind;
use crate::nn::ModelParams;
use crate::train::{run_repeated, LossChoice, ArchKind, RunConfig, Summary};

/// Predictions strictly below this are zeroed before scoring.
pub const THRESHOLD: f64 = 0.05;

pub fn threshold_one(p: f64) -> f64 {
    if p < THRESHOLD {
        0.0
    } else {
        p
    }
}

pub fn threshold(preds: &[f64]) -> Vec<f64> {
    preds.iter().map(|&p| threshold_one(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub mae: f64,
    pub rmse: f64,
}

/// Pairwise summation with a fixed split order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn check_lengths(gt: &[f64], pred: &[f64]) -> Result<()> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::Config(format!(
            "metric inputs must be equal-length and non-empty, got {} and {}",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

pub fn mae(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(gt, pred)?;
    let abs: Vec<f64> = gt.iter().zip(pred).map(|(g, p)| (g - p).abs()).collect();
    Ok(pairwise_sum(&abs) / gt.len() as f64)
}

pub fn rmse(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(gt, pred)?;
    let sq: Vec<f64> = gt.iter().zip(pred).map(|(g, p)| (g - p) * (g - p)).collect();
    Ok((pairwise_sum(&sq) / gt.len() as f64).sqrt())
}

pub fn metrics(gt: &[f64], pred: &[f64]) -> Result<MetricPair> {
    Ok(MetricPair {
        mae: mae(gt, pred)?,
        rmse: rmse(gt, pred)?,
    })
}

/// One scored (tract, hour).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tract_id: String,
    pub hour: i64,
    pub gt: f64,
    pub raw: f64,
    pub thresholded: f64,
}

/// Outage probabilities for every hour of the given tracts, without
/// augmentation.
pub fn predict(params: &ModelParams, dataset: &Dataset, tracts: &[usize]) -> Result<Vec<Prediction>> {
    let per_tract = tracts
        .par_iter()
        .map(|&t| {
            let mut base = Vec::with_capacity(dataset.base_len());
            let cond = dataset.condition(t);
            (0..dataset.n_hours())
                .map(|h| {
                    dataset.fill_base(t, h, &mut base);
                    let raw = LossKind::outage_probability(&params.forward(&base, cond, None)?);
                    Ok(Prediction {
                        tract_id: dataset.tracts[t].tract_id.clone(),
                        hour: dataset.weather.hours.start + h as i64,
                        gt: dataset.target(t, h),
                        raw,
                        thresholded: threshold_one(raw),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_tract.into_iter().flatten().collect())
}

/// Pooled thresholded metrics over the predictions.
pub fn score(predictions: &[Prediction]) -> Result<MetricPair> {
    let gt: Vec<f64> = predictions.iter().map(|p| p.gt).collect();
    let pred: Vec<f64> = predictions.iter().map(|p| p.thresholded).collect();
    metrics(&gt, &pred)
}

pub fn evaluate(params: &ModelParams, dataset: &Dataset, tracts: &[usize]) -> Result<MetricPair> {
    score(&predict(params, dataset, tracts)?)
}

/// Share of outage hours (`gt >= 0.05`) predicted at or above the threshold.
pub fn outage_recall(predictions: &[Prediction]) -> Option<f64> {
    let outages: Vec<&Prediction> = predictions.iter().filter(|p| p.gt >= THRESHOLD).collect();
    if outages.is_empty() {
        return None;
    }
    let hits = outages.iter().filter(|p| p.raw >= THRESHOLD).count();
    Some(hits as f64 / outages.len() as f64)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "tract_id,hour,gt,pred_raw,pred_thresholded").map_err(io)?;
    for p in predictions {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.tract_id,
            format_hour(p.hour),
            p.gt,
            p.raw,
            p.thresholded
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mask: FeatureMask,
    pub loss: &'static str,
    pub mae: Summary,
    pub rmse: Summary,
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "mask,loss,mae_mean,mae_std,rmse_mean,rmse_std").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.mask, r.loss, r.mae.mean, r.mae.std, r.rmse.mean, r.rmse.std
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One rung of the ablation ladder: metrics under both losses.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mask: FeatureMask,
    pub exponential: (Summary, Summary),
    pub cross_entropy: (Summary, Summary),
}

impl AblationRow {
    pub fn report_rows(&self) -> [ReportRow; 2] {
        [
            ReportRow {
                mask: self.mask,
                loss: "exp",
                mae: self.exponential.0,
                rmse: self.exponential.1,
            },
            ReportRow {
                mask: self.mask,
                loss: "xent",
                mae: self.cross_entropy.0,
                rmse: self.cross_entropy.1,
            },
        ]
    }
}

/// Trains the unconditional model on each rung of the feature ladder under
/// both losses, `n_runs` seeded runs per cell.
pub fn ablate(base: &RunConfig, dataset: &Dataset) -> Result<Vec<AblationRow>> {
    FeatureMask::ladder()
        .into_iter()
        .map(|mask| {
            let masked = dataset.with_mask(mask);
            let cell = |loss: LossChoice| -> Result<(Summary, Summary)> {
                let config = RunConfig {
                    arch: ArchKind::Unconditional,
                    loss,
                    mask,
                    ..base.clone()
                };
                let r = run_repeated(&config, &masked)?;
                log::info!("ablation {mask} {}: mae {:?} rmse {:?}", loss.name(), r.mae, r.rmse);
                Ok((r.mae, r.rmse))
            };
            Ok(AblationRow {
                mask,
                exponential: cell(LossChoice::Exponential)?,
                cross_entropy: cell(LossChoice::CrossEntropy)?,
            })
        })
        .collect()
}

/// The ladder in a wide layout: one row per rung with a check mark column
/// per feature group, then `mean(std)` cells of MAE and RMSE for each loss.
pub fn write_ablation_table(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "weather,distance,totals,income,year_built,power_infra,exp_mae,exp_rmse,xent_mae,xent_rmse"
    )
    .map_err(io)?;
    let cell = |s: Summary| format!("{:.6}({:.6})", s.mean, s.std);
    for r in rows {
        let m = r.mask;
        let flags = [m.weather, m.distance, m.totals, m.income, m.year_built, m.power_infra]
            .map(|f| if f { "x" } else { "" })
            .join(",");
        let (em, er) = r.exponential;
        let (xm, xr) = r.cross_entropy;
        writeln!(w, "{flags},{},{},{},{}", cell(em), cell(er), cell(xm), cell(xr)).map_err(io)?;
    }
    w.flush().map_err(io)
}
