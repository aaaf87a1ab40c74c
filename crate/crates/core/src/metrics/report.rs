use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{eval_luma_crop, niqe_score, perceptual_index, psnr_from_rmse, rmse, ssim, NiqeModel};
use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image: String,
    pub rmse: f64,
    pub psnr: f64,
    pub psnr_capped: bool,
    pub ssim: f64,
    pub niqe: Option<f64>,
    pub ma: Option<f64>,
    pub pi: Option<f64>,
}

/// Scores one estimate against its reference under the luma + border
/// protocol. NIQE is computed on the cropped estimate when a model is
/// given; PI only when an external Ma-score is also available.
pub fn evaluate_pair(
    id: &str,
    est: &Image,
    reference: &Image,
    niqe: Option<&NiqeModel>,
    ma: Option<f64>,
) -> Result<MetricRow> {
    let (e, r) = eval_luma_crop(est, reference)?;
    let rmse = rmse(&e, &r)?;
    let p = psnr_from_rmse(rmse);
    let niqe = niqe.map(|m| niqe_score(&e, m)).transpose()?;
    let pi = match (ma, niqe) {
        (Some(ma), Some(n)) => Some(perceptual_index(ma, n)?),
        _ => None,
    };
    Ok(MetricRow {
        image: id.to_string(),
        rmse,
        psnr: p.db,
        psnr_capped: p.capped,
        ssim: ssim(&e, &r)?,
        niqe,
        ma,
        pi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub niqe: Option<f64>,
    pub ma: Option<f64>,
    pub pi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub means: MetricMeans,
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

/// Mean of an optional column, defined only when every row has a value.
fn mean_opt(rows: &[MetricRow], f: impl Fn(&MetricRow) -> Option<f64>) -> Option<f64> {
    rows.iter().map(&f).collect::<Option<Vec<f64>>>().map(|v| mean_of(v.into_iter()))
}

impl MetricReport {
    /// Means are taken per image, in row order.
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::usage("metric report has no rows"));
        }
        let means = MetricMeans {
            rmse: mean_of(rows.iter().map(|r| r.rmse)),
            psnr: mean_of(rows.iter().map(|r| r.psnr)),
            ssim: mean_of(rows.iter().map(|r| r.ssim)),
            niqe: mean_opt(&rows, |r| r.niqe),
            ma: mean_opt(&rows, |r| r.ma),
            pi: mean_opt(&rows, |r| r.pi),
        };
        if means.niqe.is_some() && means.pi.is_none() {
            log::info!("no Ma-scores supplied; reporting NIQE without a perceptual index");
        }
        Ok(MetricReport { rows, means })
    }

    pub const CSV_HEADER: [&'static str; 8] = ["image", "rmse", "psnr", "psnr_capped", "ssim", "niqe", "ma", "pi"];

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(Self::CSV_HEADER).map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.image.clone(),
                r.rmse.to_string(),
                r.psnr.to_string(),
                r.psnr_capped.to_string(),
                r.ssim.to_string(),
                opt(r.niqe),
                opt(r.ma),
                opt(r.pi),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads externally computed Ma-scores from a CSV with `image` and `ma`
/// columns.
pub fn read_ma_scores(path: impl AsRef<Path>) -> Result<HashMap<String, f64>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::usage(format!("{} has no {name:?} column", path.display())))
    };
    let (ci, cm) = (col("image")?, col("ma")?);
    let mut out = HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let v: f64 = rec[cm]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad Ma-score {:?} for {}", &rec[cm], &rec[ci])))?;
        out.insert(rec[ci].trim().to_string(), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth;

    #[test]
    fn identical_pair_row() {
        let a = synth::natural_image(40, 40, 3, 1);
        let r = evaluate_pair("a", &a, &a, None, Some(5.0)).unwrap();
        assert_eq!((r.rmse, r.psnr, r.psnr_capped, r.ssim), (0.0, 99.0, true, 1.0));
        assert_eq!(r.pi, None);
    }

    #[test]
    fn csv_round_trip_header() {
        let dir = tempfile::tempdir().unwrap();
        let a = synth::natural_image(40, 40, 3, 1);
        let b = synth::natural_image(40, 40, 3, 2);
        let rows = vec![
            evaluate_pair("a", &a, &b, None, None).unwrap(),
            evaluate_pair("b", &b, &a, None, None).unwrap(),
        ];
        let rep = MetricReport::from_rows(rows).unwrap();
        assert_eq!(rep.means.rmse, rep.rows[0].rmse);
        let p = dir.path().join("r.csv");
        rep.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image,rmse,psnr,psnr_capped,ssim,niqe,ma,pi\n"));
    }
}
