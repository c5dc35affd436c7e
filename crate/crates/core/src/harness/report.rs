use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::stats::UsageStats;
use super::HarnessError;
use crate::agrpo::{TrainPoint, TrainReport};

type Column = (&'static str, fn(&TrainPoint) -> f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Aligned tables for reading.
    Text,
    /// Tab-separated data files for plotting.
    Tsv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Self::Text),
            "tsv" => Ok(Self::Tsv),
            "json" => Ok(Self::Json),
            _ => Err(HarnessError::UnknownFormat(s.to_string())),
        }
    }
}

impl ReportFormat {
    fn ext(self) -> &'static str {
        match self {
            Self::Text => "txt",
            Self::Tsv => "tsv",
            Self::Json => "json",
        }
    }
}

fn series(
    rows: impl Iterator<Item = (usize, f64)>,
    name: &str,
    format: ReportFormat,
) -> Result<String, HarnessError> {
    let rows: Vec<(usize, f64)> = rows.collect();
    Ok(match format {
        ReportFormat::Text => {
            let mut s = format!("{:>8}  {name}\n", "step");
            for (step, v) in rows {
                let _ = writeln!(s, "{step:>8}  {v:.6}");
            }
            s
        }
        ReportFormat::Tsv => {
            let mut s = format!("step\t{name}\n");
            for (step, v) in rows {
                let _ = writeln!(s, "{step}\t{v}");
            }
            s
        }
        ReportFormat::Json => {
            let points: Vec<_> = rows.into_iter().map(|(step, v)| serde_json::json!({ "step": step, name: v })).collect();
            serde_json::to_string_pretty(&points).map_err(|e| HarnessError::Io(e.into()))? + "\n"
        }
    })
}

/// Writes the reward, entropy and aperture-count series of a training run.
pub fn report_train(report: &TrainReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let columns: [Column; 3] = [
        ("reward", |p| p.mean_reward),
        ("entropy", |p| p.entropy),
        ("aperture_count", |p| p.mean_aperture_count),
    ];
    let mut paths = Vec::new();
    for (name, f) in columns {
        let text = series(report.points.iter().map(|p| (p.step, f(p))), name, format)?;
        let path = dir.join(format!("{name}.{}", format.ext()));
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Histogram table followed by the summary lines.
pub fn render_usage_text(stats: &UsageStats) -> String {
    let mut s = format!("{:>9}  {:>12}  {:>10}\n", "apertures", "trajectories", "latency_s");
    for (k, n) in &stats.histogram {
        let _ = writeln!(s, "{k:>9}  {n:>12}  {:>10.3}", stats.latency_by_count[k]);
    }
    let _ = writeln!(s, "trajectories: {}", stats.trajectories);
    let _ = writeln!(s, "mean apertures per trajectory: {:.2}", stats.mean_apertures);
    let _ = writeln!(s, "mean latency per trajectory: {:.3} s", stats.mean_latency);
    s
}

/// Writes the usage histogram, latency by aperture count and the summary.
pub fn report_usage(stats: &UsageStats, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = Vec::new();
    match format {
        ReportFormat::Text => files.push(("usage.txt".into(), render_usage_text(stats))),
        ReportFormat::Tsv => {
            let mut hist = String::from("apertures\ttrajectories\n");
            let mut lat = String::from("apertures\tmean_latency_s\n");
            for (k, n) in &stats.histogram {
                let _ = writeln!(hist, "{k}\t{n}");
                let _ = writeln!(lat, "{k}\t{}", stats.latency_by_count[k]);
            }
            let summary = format!(
                "trajectories\t{}\nmean_apertures\t{}\nmean_latency_s\t{}\n",
                stats.trajectories, stats.mean_apertures, stats.mean_latency
            );
            files.push(("histogram.tsv".into(), hist));
            files.push(("latency_by_count.tsv".into(), lat));
            files.push(("summary.tsv".into(), summary));
        }
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(stats).map_err(|e| HarnessError::Io(e.into()))? + "\n";
            files.push(("usage.json".into(), text));
        }
    }
    let mut paths = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::agrpo::{Family, PolicySnapshot};

    fn stats() -> UsageStats {
        UsageStats {
            trajectories: 25,
            histogram: BTreeMap::from([(0, 4), (1, 10), (2, 11)]),
            mean_apertures: 1.28,
            mean_latency: 2.0,
            latency_by_count: BTreeMap::from([(0, 1.0), (1, 2.0), (2, 2.5)]),
        }
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("xml".parse::<ReportFormat>(), Err(HarnessError::UnknownFormat(_))));
        assert_eq!("TSV".parse::<ReportFormat>().unwrap(), ReportFormat::Tsv);
    }

    #[test]
    fn usage_text_has_table_and_three_summary_lines() {
        let text = render_usage_text(&stats());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 3);
        assert_eq!(lines[5], "mean apertures per trajectory: 1.28");
    }

    #[test]
    fn train_series_files() {
        let dir = tempfile::tempdir().unwrap();
        let snap = PolicySnapshot { probs: vec![], entropy: 0.0 };
        let report = TrainReport {
            points: (0..3)
                .map(|step| TrainPoint {
                    step,
                    family: Family::FineGrainedVqa,
                    mean_reward: 1.0,
                    entropy: 0.5,
                    mean_aperture_count: 0.25,
                    accuracy: 1.0,
                })
                .collect(),
            initial: snap.clone(),
            last: snap,
        };
        let paths = report_train(&report, ReportFormat::Tsv, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let ent = std::fs::read_to_string(dir.path().join("entropy.tsv")).unwrap();
        assert_eq!(ent, "step\tentropy\n0\t0.5\n1\t0.5\n2\t0.5\n");
        assert_eq!(report_usage(&stats(), ReportFormat::Tsv, dir.path()).unwrap().len(), 3);
    }
}
