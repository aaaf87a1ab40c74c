use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TradeoffPoint;
use crate::error::{Error, Result};
use crate::imaging::{bicubic_downsample, Image};
use crate::losses::LossWeights;
use crate::metrics::{evaluate_pair, MetricReport, NiqeModel};
use crate::models::Generator;
use crate::trainer::{derive_seed, echo_config, train_gan, RunOutputs, TrainConfig};

const SWEEP_STREAM: u64 = 0x5e;

/// One grid cell; `lambda1` comes from the base config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda2: f64,
    pub lambda3: f64,
}

impl SweepEntry {
    pub fn label(&self) -> String {
        format!("l2_{}_l3_{}", self.lambda2, self.lambda3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptualScale {
    Pi,
    Niqe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub weights: LossWeights,
    /// `None` when training or evaluation failed.
    pub point: Option<TradeoffPoint>,
    pub scale: PerceptualScale,
    pub checkpoint: Option<PathBuf>,
    pub error: Option<String>,
}

/// Upscales the ×4 bicubic degradation of every HR image and scores it.
/// PI is reported when every image id has a Ma-score.
pub fn evaluate_generator(
    generator: &Generator<f32>,
    eval_set: &[(String, Image)],
    niqe: Option<&NiqeModel>,
    ma: Option<&HashMap<String, f64>>,
) -> Result<MetricReport> {
    let scale = generator.config().scale;
    let mut rows = Vec::with_capacity(eval_set.len());
    for (id, hr) in eval_set {
        let hr = hr.crop_to_multiple(scale)?;
        let est = generator.upscale(&bicubic_downsample(&hr, scale)?)?;
        let ma = ma.and_then(|m| m.get(id).copied());
        rows.push(evaluate_pair(id, &est, &hr, niqe, ma)?);
    }
    MetricReport::from_rows(rows)
}

fn run_entry(
    base: &TrainConfig,
    index: usize,
    entry: &SweepEntry,
    dataset: &[Image],
    pretrained: &Path,
    eval_set: &[(String, Image)],
    niqe: &NiqeModel,
    ma: Option<&HashMap<String, f64>>,
    dir: &Path,
) -> Result<(TradeoffPoint, PerceptualScale, PathBuf)> {
    let mut config = base.clone();
    config.weights = LossWeights::new(base.weights.lambda1, entry.lambda2, entry.lambda3)?;
    config.seed = derive_seed(base.seed, SWEEP_STREAM ^ ((index as u64) << 8));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    echo_config(&config, dir.join("config.json"))?;
    let out = RunOutputs {
        checkpoint_dir: Some(dir.to_path_buf()),
        log_path: Some(dir.join("train.jsonl")),
    };
    let (trainer, summary) = train_gan(config.clone(), dataset.to_vec(), Some(pretrained), &out)?;
    let report = evaluate_generator(trainer.generator(), eval_set, Some(niqe), ma)?;
    report.write_csv(dir.join("metrics.csv"))?;
    let (pi, scale) = match report.means.pi {
        Some(pi) => (pi, PerceptualScale::Pi),
        None => (report.means.niqe.expect("NIQE model supplied"), PerceptualScale::Niqe),
    };
    let point = TradeoffPoint {
        label: entry.label(),
        rmse: report.means.rmse,
        pi,
        weights: Some(config.weights),
    };
    Ok((point, scale, summary.final_generator.expect("checkpoint dir set")))
}

/// Trains one GAN per grid entry from the shared pretrained generator and
/// places it on the plane. A failed entry is recorded and the sweep
/// continues.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    base: &TrainConfig,
    grid: &[SweepEntry],
    dataset: &[Image],
    pretrained: &Path,
    eval_set: &[(String, Image)],
    niqe: &NiqeModel,
    ma: Option<&HashMap<String, f64>>,
    out_dir: &Path,
) -> Vec<SweepPoint> {
    let mut points = Vec::with_capacity(grid.len());
    for (i, entry) in grid.iter().enumerate() {
        let label = entry.label();
        let weights = LossWeights {
            lambda1: base.weights.lambda1,
            lambda2: entry.lambda2,
            lambda3: entry.lambda3,
        };
        let dir = out_dir.join(&label);
        log::info!("sweep entry {}/{}: {label}", i + 1, grid.len());
        let sp = match run_entry(base, i, entry, dataset, pretrained, eval_set, niqe, ma, &dir) {
            Ok((point, scale, ckpt)) => SweepPoint {
                label,
                weights,
                point: Some(point),
                scale,
                checkpoint: Some(ckpt),
                error: None,
            },
            Err(e) => {
                log::error!("sweep entry {label} failed: {e}");
                SweepPoint {
                    label,
                    weights,
                    point: None,
                    scale: PerceptualScale::Niqe,
                    checkpoint: None,
                    error: Some(e.to_string()),
                }
            }
        };
        points.push(sp);
    }
    points
}

pub const SWEEP_CSV_HEADER: [&str; 7] = ["label", "lambda1", "lambda2", "lambda3", "rmse", "pi_or_niqe", "checkpoint_path"];

/// Failed entries keep their row with empty score columns.
pub fn write_sweep_csv(points: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(SWEEP_CSV_HEADER).map_err(io)?;
    for p in points {
        let (rmse, perc) = match &p.point {
            Some(t) => (t.rmse.to_string(), t.pi.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            p.label.clone(),
            p.weights.lambda1.to_string(),
            p.weights.lambda2.to_string(),
            p.weights.lambda3.to_string(),
            rmse,
            perc,
            p.checkpoint.as_ref().map(|c| c.display().to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
