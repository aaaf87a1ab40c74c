//! The perception-distortion plane: RMSE regions, region-wise ranking,
//! λ sweeps and a fitted trade-off curve.

mod fit;
mod sweep;

pub use fit::{fit_curve, CurveFit, CURVE_FAMILY};
pub use sweep::{evaluate_generator, sweep, write_sweep_csv, PerceptualScale, SweepEntry, SweepPoint};

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Published PIRM-self scores of the compared methods.
pub const PUBLISHED_SCORES_CSV: &str = include_str!("../../data/published_scores.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    R1,
    R2,
    R3,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::R1, Region::R2, Region::R3];

    /// Inclusive upper RMSE bound.
    pub fn upper(self) -> f64 {
        match self {
            Region::R1 => 11.5,
            Region::R2 => 12.5,
            Region::R3 => 16.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize + 1
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Region {}", self.index())
    }
}

/// Region for a dataset-mean RMSE, `None` above 16.
pub fn assign_region(rmse: f64) -> Result<Option<Region>> {
    if !(rmse >= 0.0) || rmse.is_infinite() {
        return Err(Error::usage(format!("RMSE must be a finite non-negative number, got {rmse}")));
    }
    Ok(Region::ALL.into_iter().find(|r| rmse <= r.upper()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub label: String,
    pub rmse: f64,
    pub pi: f64,
    pub weights: Option<LossWeights>,
}

impl TradeoffPoint {
    pub fn new(label: impl Into<String>, rmse: f64, pi: f64) -> Self {
        TradeoffPoint {
            label: label.into(),
            rmse,
            pi,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRanking {
    pub region: Region,
    /// Lowest PI first.
    pub entries: Vec<TradeoffPoint>,
}

impl RegionRanking {
    pub fn winner(&self) -> Option<&TradeoffPoint> {
        self.entries.first()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankingTable {
    /// Non-empty regions in order.
    pub regions: Vec<RegionRanking>,
    /// RMSE above the last bound; listed, never ranked.
    pub out_of_range: Vec<TradeoffPoint>,
}

impl RankingTable {
    pub fn region(&self, r: Region) -> Option<&RegionRanking> {
        self.regions.iter().find(|x| x.region == r)
    }

    pub fn winner(&self, r: Region) -> Option<&TradeoffPoint> {
        self.region(r).and_then(RegionRanking::winner)
    }
}

impl fmt::Display for RankingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.regions {
            writeln!(f, "{} (RMSE <= {}):", r.region, r.region.upper())?;
            for (i, p) in r.entries.iter().enumerate() {
                writeln!(f, "  {:>2}. {:<12} PI {:<8} RMSE {}", i + 1, p.label, p.pi, p.rmse)?;
            }
        }
        if !self.out_of_range.is_empty() {
            writeln!(f, "Out of range (RMSE > 16):")?;
            for p in &self.out_of_range {
                writeln!(f, "      {:<12} PI {:<8} RMSE {}", p.label, p.pi, p.rmse)?;
            }
        }
        Ok(())
    }
}

/// Buckets points by region and orders each bucket by PI, then RMSE,
/// then label.
pub fn rank(points: &[TradeoffPoint]) -> Result<RankingTable> {
    let mut buckets: [Vec<TradeoffPoint>; 3] = Default::default();
    let mut out_of_range = Vec::new();
    for p in points {
        match assign_region(p.rmse)? {
            Some(r) => buckets[r.index() - 1].push(p.clone()),
            None => out_of_range.push(p.clone()),
        }
    }
    let regions = Region::ALL
        .into_iter()
        .zip(buckets)
        .filter(|(_, b)| !b.is_empty())
        .map(|(region, mut entries)| {
            entries.sort_by(|a, b| {
                a.pi.total_cmp(&b.pi)
                    .then(a.rmse.total_cmp(&b.rmse))
                    .then_with(|| a.label.cmp(&b.label))
            });
            RegionRanking { region, entries }
        })
        .collect();
    Ok(RankingTable { regions, out_of_range })
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    label: String,
    #[serde(default)]
    dataset: Option<String>,
    rmse: f64,
    pi: f64,
}

/// Parses a scores CSV with at least `label`, `rmse` and `pi` columns,
/// optionally keeping only rows whose `dataset` matches.
pub fn read_scores(reader: impl Read, dataset: Option<&str>) -> Result<Vec<TradeoffPoint>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    for col in ["label", "rmse", "pi"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::usage(format!("scores CSV has no {col:?} column")));
        }
    }
    let mut out = Vec::new();
    for row in r.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| Error::Parse(format!("scores CSV: {e}")))?;
        if dataset.is_some_and(|d| row.dataset.as_deref() != Some(d)) {
            continue;
        }
        out.push(TradeoffPoint::new(row.label, row.rmse, row.pi));
    }
    Ok(out)
}

pub fn read_scores_file(path: impl AsRef<Path>, dataset: Option<&str>) -> Result<Vec<TradeoffPoint>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(f, dataset)
}

/// The bundled PIRM-self fixture.
pub fn published_scores() -> Vec<TradeoffPoint> {
    read_scores(PUBLISHED_SCORES_CSV.as_bytes(), Some("PIRM-self")).expect("bundled fixture parses")
}
