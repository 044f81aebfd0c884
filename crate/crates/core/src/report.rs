//! Task-level metrics (completion rate, hazard exposure rate, time ratio),
//! per-episode cost distributions, and value-field heatmaps of cost
//! functions, with their CSV/PGM/JSON exports.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::EpisodeStats;
use crate::dsl::{evaluate, CostExpr, DslError};
use crate::env::EnvConfig;
use crate::ppo::{EpochStats, TrainReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Eval(#[from] DslError),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(tcr, her)`: the share of episodes that reached the goal and the share
/// that touched a hazard at least once.
pub fn compute_rates(episodes: &[EpisodeStats]) -> Result<(f64, f64), ReportError> {
    if episodes.is_empty() {
        return Err(ReportError::InvalidArgument("no episodes".into()));
    }
    let n = episodes.len() as f64;
    let completed = episodes.iter().filter(|e| e.reached_goal).count() as f64;
    let exposed = episodes.iter().filter(|e| e.touched_hazard).count() as f64;
    Ok((completed / n, exposed / n))
}

pub fn time_ratio(t_algo: f64, t_ppo: f64) -> Result<f64, ReportError> {
    if !(t_ppo > 0.0) {
        return Err(ReportError::InvalidArgument(format!("t_ppo must be > 0, got {t_ppo}")));
    }
    Ok(t_algo / t_ppo)
}

/// Box-plot summary of per-episode discounted costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    /// Values beyond 1.5 IQR from the quartiles, in input order.
    pub outliers: Vec<f64>,
}

/// Linear interpolation between closest ranks. `q` in [0, 1].
fn quantile_select(values: &mut [f64], q: f64) -> f64 {
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut lo_v, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 {
        return lo_v;
    }
    let hi_v = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_v + frac * (hi_v - lo_v)
}

pub fn cost_distribution(episodes: &[EpisodeStats]) -> Result<Distribution, ReportError> {
    let costs: Vec<f64> = episodes.iter().map(|e| e.j_c).collect();
    distribution(&costs)
}

pub fn distribution(values: &[f64]) -> Result<Distribution, ReportError> {
    if values.is_empty() {
        return Err(ReportError::InvalidArgument("no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ReportError::InvalidArgument("non-finite value".into()));
    }
    let mut scratch = values.to_vec();
    let q25 = quantile_select(&mut scratch, 0.25);
    let median = quantile_select(&mut scratch, 0.5);
    let q75 = quantile_select(&mut scratch, 0.75);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let iqr = q75 - q25;
    let (lo, hi) = (q25 - 1.5 * iqr, q75 + 1.5 * iqr);
    Ok(Distribution {
        min,
        q25,
        median,
        q75,
        max,
        outliers: values.iter().copied().filter(|&v| v < lo || v > hi).collect(),
    })
}

/// Everything needed to plot one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub curves: Vec<EpochStats>,
    pub tcr: f64,
    pub her: f64,
    pub t_algo: f64,
    pub env_steps: usize,
    pub episode_costs: Vec<f64>,
    pub cost_distribution: Distribution,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub lambda_trajectory: Vec<f64>,
}

impl RunSummary {
    pub fn new(report: &TrainReport, eval_episodes: &[EpisodeStats]) -> Result<Self, ReportError> {
        let (tcr, her) = compute_rates(eval_episodes)?;
        Ok(RunSummary {
            algorithm: report.algorithm.label().to_string(),
            curves: report.epochs.clone(),
            tcr,
            her,
            t_algo: report.wall_clock_s.max(f64::MIN_POSITIVE),
            env_steps: report.env_steps,
            episode_costs: eval_episodes.iter().map(|e| e.j_c).collect(),
            cost_distribution: cost_distribution(eval_episodes)?,
            lambda_trajectory: report.lambda_trajectory(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub resolution: usize,
}

impl Axis {
    /// Coordinate of sample `i`; samples include both endpoints.
    pub fn coord(&self, i: usize) -> f64 {
        if self.resolution <= 1 {
            return 0.5 * (self.min + self.max);
        }
        let t = i as f64 / (self.resolution - 1) as f64;
        self.min + t * (self.max - self.min)
    }
}

/// Candidate values over a grid of resting robot positions.
/// `values[row][col]` sits at `(x.coord(col), y.coord(row))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub x: Axis,
    pub y: Axis,
    pub values: Vec<Vec<f64>>,
}

pub const HEATMAP_CSV_HEADER: &str = "x,y,value";

/// Evaluates `candidate` with the robot at rest at every grid point of the arena.
pub fn heatmap(candidate: &CostExpr, env: &EnvConfig, resolution: usize) -> Result<HeatmapGrid, ReportError> {
    if resolution == 0 {
        return Err(ReportError::InvalidArgument("resolution must be >= 1".into()));
    }
    let h = env.arena_half_extent;
    let axis = Axis {
        min: -h,
        max: h,
        resolution,
    };
    let values = (0..resolution)
        .map(|row| {
            (0..resolution)
                .map(|col| evaluate(candidate, &env.features_at([axis.coord(col), axis.coord(row)])))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HeatmapGrid {
        x: axis,
        y: axis,
        values,
    })
}

impl HeatmapGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(HEATMAP_CSV_HEADER);
        s.push('\n');
        for (row, vals) in self.values.iter().enumerate() {
            for (col, v) in vals.iter().enumerate() {
                let _ = writeln!(s, "{},{},{}", self.x.coord(col), self.y.coord(row), v);
            }
        }
        s
    }

    /// Rebuilds a grid from [`HeatmapGrid::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEATMAP_CSV_HEADER) {
            return Err(ReportError::Csv("missing `x,y,value` header".into()));
        }
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(ReportError::Csv(format!("line {}: expected 3 fields", n + 2)));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| ReportError::Csv(format!("line {}: bad number `{s}`", n + 2)))
            };
            rows.push((num(fields[0])?, num(fields[1])?, num(fields[2])?));
        }
        let first_y = rows.first().ok_or_else(|| ReportError::Csv("no data rows".into()))?.1;
        let nx = rows.iter().take_while(|r| r.1 == first_y).count();
        if rows.len() % nx != 0 {
            return Err(ReportError::Csv("ragged grid".into()));
        }
        let ny = rows.len() / nx;
        let values: Vec<Vec<f64>> = rows.chunks(nx).map(|c| c.iter().map(|r| r.2).collect()).collect();
        Ok(HeatmapGrid {
            x: Axis {
                min: rows[0].0,
                max: rows[nx - 1].0,
                resolution: nx,
            },
            y: Axis {
                min: rows[0].1,
                max: rows[rows.len() - 1].1,
                resolution: ny,
            },
            values,
        })
    }

    /// Plain-text PGM (P2), top row = largest y. Values are mapped linearly
    /// from `[min, max]` to `[0, 255]`; a constant grid maps to 0.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let flat = self.values.iter().flatten().copied();
        let lo = flat.clone().fold(f64::INFINITY, f64::min);
        let hi = flat.fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        writeln!(out, "P2\n{} {}\n255", self.x.resolution, self.y.resolution)?;
        for row in self.values.iter().rev() {
            let line: Vec<String> = row
                .iter()
                .map(|v| {
                    let level = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                    (level as u8).to_string()
                })
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}
