use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{read_log, TrajectoryRecord};
use super::HarnessError;

/// Aperture usage and latency over a set of logged trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub trajectories: usize,
    /// Trajectory count by number of aperture steps.
    pub histogram: BTreeMap<usize, usize>,
    pub mean_apertures: f64,
    /// Mean wall time in seconds.
    pub mean_latency: f64,
    /// Mean wall time in seconds by number of aperture steps.
    pub latency_by_count: BTreeMap<usize, f64>,
}

impl UsageStats {
    pub fn from_records(records: &[TrajectoryRecord]) -> Self {
        let mut histogram = BTreeMap::new();
        let mut latency_sum: BTreeMap<usize, f64> = BTreeMap::new();
        for r in records {
            let k = r.aperture_count();
            *histogram.entry(k).or_insert(0) += 1;
            *latency_sum.entry(k).or_insert(0.0) += r.wall_time;
        }
        let n = records.len();
        let mean = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
        let latency_by_count = latency_sum.into_iter().map(|(k, s)| (k, s / histogram[&k] as f64)).collect();
        Self {
            trajectories: n,
            mean_apertures: mean(records.iter().map(|r| r.aperture_count() as f64).sum()),
            mean_latency: mean(records.iter().map(|r| r.wall_time).sum()),
            histogram,
            latency_by_count,
        }
    }
}

/// Reads a trajectory log and summarises it.
pub fn compute_usage_stats(path: &Path) -> Result<UsageStats, HarnessError> {
    let (_, records) = read_log(path)?;
    Ok(UsageStats::from_records(&records))
}
