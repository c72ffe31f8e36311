//! Trajectory CSV files and run summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::RolloutTrajectory;

/// Column order of every trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 6] = [
    "t",
    "stage_mi_nats",
    "expected_distortion",
    "lagrangian_stage_cost",
    "cumulative_di_nats",
    "wall_time_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub stage_mi_nats: f64,
    pub expected_distortion: f64,
    pub lagrangian_stage_cost: f64,
    pub cumulative_di_nats: f64,
    pub wall_time_ms: f64,
}

pub fn trajectory_rows(traj: &RolloutTrajectory) -> Vec<TrajectoryRow> {
    traj.stages
        .iter()
        .map(|s| TrajectoryRow {
            t: s.stage,
            stage_mi_nats: s.stage_mi,
            expected_distortion: s.expected_distortion,
            lagrangian_stage_cost: s.lagrangian_cost,
            cumulative_di_nats: s.cumulative_di,
            wall_time_ms: s.wall_time_ms,
        })
        .collect()
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != TRAJECTORY_COLUMNS {
        return Err(Error::Parse(format!(
            "{}: unexpected columns {header:?}",
            path.display()
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Column sums of a trajectory, accumulated in row order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTotals {
    pub stages: usize,
    pub directed_information_nats: f64,
    pub expected_distortion: f64,
    pub lagrangian_cost: f64,
    pub mean_stage_mi_nats: f64,
    pub wall_time_ms: f64,
}

impl RunTotals {
    pub fn from_rows(rows: &[TrajectoryRow]) -> Self {
        let mut t = RunTotals {
            stages: rows.len(),
            ..Default::default()
        };
        for r in rows {
            t.directed_information_nats += r.stage_mi_nats;
            t.expected_distortion += r.expected_distortion;
            t.lagrangian_cost += r.lagrangian_stage_cost;
            t.wall_time_ms += r.wall_time_ms;
        }
        if !rows.is_empty() {
            t.mean_stage_mi_nats = t.directed_information_nats / rows.len() as f64;
        }
        t
    }

    /// Largest absolute difference from the sums recomputed over `rows`.
    pub fn discrepancy(&self, rows: &[TrajectoryRow]) -> f64 {
        let r = Self::from_rows(rows);
        [
            self.directed_information_nats - r.directed_information_nats,
            self.expected_distortion - r.expected_distortion,
            self.lagrangian_cost - r.lagrangian_cost,
            self.wall_time_ms - r.wall_time_ms,
        ]
        .into_iter()
        .map(f64::abs)
        .fold(0.0, f64::max)
    }
}

/// One forward pass written by a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub trajectory_csv: Option<String>,
    pub artifact: Option<String>,
    pub rolling_horizon: usize,
    pub offline_wall_ms: f64,
    pub online_wall_ms: f64,
    pub flagged_points: usize,
    pub totals: Option<RunTotals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    /// Fingerprint of the configuration at the configured rolling horizon.
    pub fingerprint: String,
    pub seed: u64,
    pub workers: usize,
    pub runs: Vec<RunRecord>,
}

impl RunSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
