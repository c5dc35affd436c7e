//! Append-only JSONL trajectory logs: one header line, then one record per
//! finished episode.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, TaskSpec};
use crate::aperture::{ApertureAction, PixelRect};
use crate::backends::{ScriptRecord, ScriptedPolicy, SegmenterBackend};
use crate::protocol::PromptVariant;
use crate::reward::{score_trajectory, RewardBreakdown};
use crate::tao_loop::{run_episode, EpisodeConfig, StepAction, Termination, Trajectory, ViolationKind};

pub const LOG_FORMAT: &str = "aperture-trajectories/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub variant: PromptVariant,
    pub seed: u64,
    #[serde(default)]
    pub tasks: usize,
}

impl LogHeader {
    pub fn new(variant: PromptVariant, seed: u64, tasks: usize) -> Self {
        Self { format: LOG_FORMAT.into(), variant, seed, tasks }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// `text_only`, `aperture` or `answer`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ApertureAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Seconds, tool time included.
    pub latency: f64,
    #[serde(default)]
    pub tool_latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<ViolationKind>,
    /// Raw assistant text.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<PixelRect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_fingerprint: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub family: String,
    pub variant: PromptVariant,
    /// Episode seed the run used.
    #[serde(default)]
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_answer: Option<String>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
    /// Seconds.
    pub wall_time: f64,
}

impl TrajectoryRecord {
    pub fn from_trajectory(trajectory: &Trajectory, family: &str) -> Self {
        let steps = trajectory
            .steps
            .iter()
            .map(|s| {
                let (kind, action, answer) = match &s.action {
                    StepAction::TextOnly => ("text_only", None, None),
                    StepAction::Aperture(a) => ("aperture", Some(a.clone()), None),
                    StepAction::Answer(a) => ("answer", None, Some(a.clone())),
                };
                StepRecord {
                    kind: kind.into(),
                    action,
                    answer,
                    latency: s.latency.as_secs_f64(),
                    tool_latency: s.tool_latency.as_secs_f64(),
                    violation: s.violation,
                    text: s.turn.raw.clone(),
                    view: s.view.as_ref().map(|v| v.pixel_rect()),
                    mask_fingerprint: s.mask.as_ref().map(|m| m.fingerprint()),
                }
            })
            .collect();
        Self {
            task_id: trajectory.task_id.clone(),
            family: family.into(),
            variant: trajectory.variant,
            seed: 0,
            steps,
            final_answer: trajectory.final_answer.clone(),
            termination: trajectory.termination.clone(),
            reward: trajectory.reward.clone(),
            wall_time: trajectory.wall_time.as_secs_f64(),
        }
    }

    pub fn aperture_count(&self) -> usize {
        self.steps.iter().filter(|s| s.kind == "aperture").count()
    }

    /// The assistant turns as a script reproducing this episode.
    pub fn to_script(&self) -> Vec<ScriptRecord> {
        let backend_failed = matches!(self.termination, Termination::BackendError(_));
        let n = if backend_failed && self.steps.last().is_some_and(|s| s.text.is_empty()) {
            self.steps.len() - 1
        } else {
            self.steps.len()
        };
        self.steps[..n]
            .iter()
            .enumerate()
            .map(|(i, s)| ScriptRecord {
                task_id: self.task_id.clone(),
                turn_index: i,
                text: s.text.clone(),
                latency_ms: Some(((s.latency - s.tool_latency) * 1000.0).round().max(0.0) as u64),
            })
            .collect()
    }
}

/// Writes a log file in completion order. Every line is flushed as it is
/// written so an interrupted run leaves a readable prefix.
pub struct LogWriter {
    out: BufWriter<File>,
    written: usize,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, HarnessError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = Self { out: BufWriter::new(File::create(path)?), written: 0 };
        w.line(header)?;
        Ok(w)
    }

    fn line(&mut self, value: &impl Serialize) -> Result<(), HarnessError> {
        let text = serde_json::to_string(value).map_err(|e| HarnessError::Io(e.into()))?;
        writeln!(self.out, "{text}")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn append(&mut self, record: &TrajectoryRecord) -> Result<(), HarnessError> {
        self.line(record)?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }
}

/// Reads a log. The header line is optional; blank lines are skipped.
pub fn read_log(path: &Path) -> Result<(Option<LogHeader>, Vec<TrajectoryRecord>), HarnessError> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |e: serde_json::Error| HarnessError::LogCorrupt { line: i + 1, message: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(corrupt)?;
        if header.is_none() && records.is_empty() && value.get("format").is_some() {
            let h: LogHeader = serde_json::from_value(value).map_err(corrupt)?;
            if h.format != LOG_FORMAT {
                return Err(HarnessError::LogCorrupt { line: i + 1, message: format!("unsupported format `{}`", h.format) });
            }
            header = Some(h);
            continue;
        }
        records.push(serde_json::from_value(value).map_err(corrupt)?);
    }
    Ok((header, records))
}

/// Re-runs a logged episode with its recorded assistant turns and checks the
/// rerun matches step for step.
pub fn replay_record(
    record: &TrajectoryRecord,
    task: &TaskSpec,
    segmenter: &dyn SegmenterBackend,
    episode: &EpisodeConfig,
) -> Result<TrajectoryRecord, HarnessError> {
    let mismatch = |detail: String| HarnessError::ReplayMismatch { task_id: record.task_id.clone(), detail };
    if record.task_id != task.task_id {
        return Err(mismatch(format!("log is for task `{}`, got `{}`", record.task_id, task.task_id)));
    }
    let policy = ScriptedPolicy::new_unchecked(record.to_script());
    let config = EpisodeConfig { variant: record.variant, seed: record.seed, ..episode.clone() };
    let mut traj = run_episode(&policy, segmenter, task, &config).map_err(|e| mismatch(e.to_string()))?;
    if let Some(r) = &record.reward {
        traj.reward = Some(score_trajectory(task, &traj, &r.config_used).map_err(|e| mismatch(e.to_string()))?);
    }
    let replayed = TrajectoryRecord { seed: record.seed, ..TrajectoryRecord::from_trajectory(&traj, &record.family) };
    compare_records(record, &replayed).map_err(mismatch)?;
    Ok(replayed)
}

fn compare_records(a: &TrajectoryRecord, b: &TrajectoryRecord) -> Result<(), String> {
    if a.steps.len() != b.steps.len() {
        return Err(format!("{} steps logged, {} replayed", a.steps.len(), b.steps.len()));
    }
    for (i, (x, y)) in a.steps.iter().zip(&b.steps).enumerate() {
        let same = x.kind == y.kind
            && x.action == y.action
            && x.answer == y.answer
            && x.violation == y.violation
            && x.view == y.view
            && x.mask_fingerprint == y.mask_fingerprint
            && (x.latency - y.latency).abs() < 1e-6;
        if !same {
            return Err(format!("step {i} differs"));
        }
    }
    let same_termination = match (&a.termination, &b.termination) {
        (Termination::BackendError(_), Termination::BackendError(_)) => true,
        (x, y) => x == y,
    };
    if !same_termination || a.final_answer != b.final_answer {
        return Err(format!("outcome {:?}/{:?} vs {:?}/{:?}", a.termination, a.final_answer, b.termination, b.final_answer));
    }
    let reward = |r: &TrajectoryRecord| r.reward.as_ref().map(|r| r.r_final);
    match (reward(a), reward(b)) {
        (Some(x), Some(y)) if (x - y).abs() > 1e-12 => Err(format!("reward {x} vs {y}")),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> TrajectoryRecord {
        TrajectoryRecord {
            task_id: "t".into(),
            family: "vqa".into(),
            variant: PromptVariant::Full,
            seed: 0,
            steps: vec![StepRecord {
                kind: "answer".into(),
                action: None,
                answer: Some("3".into()),
                latency: 0.25,
                tool_latency: 0.0,
                violation: None,
                text: "<answer>3</answer>".into(),
                view: None,
                mask_fingerprint: None,
            }],
            final_answer: Some("3".into()),
            termination: Termination::Answered,
            reward: None,
            wall_time: 0.25,
        }
    }

    #[test]
    fn round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = LogWriter::create(&path, &LogHeader::new(PromptVariant::Full, 7, 2)).unwrap();
        w.append(&record()).unwrap();
        w.append(&record()).unwrap();
        drop(w);
        let (h, recs) = read_log(&path).unwrap();
        assert_eq!(h.unwrap().seed, 7);
        assert_eq!(recs, vec![record(), record()]);
    }

    #[test]
    fn corrupt_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let good = serde_json::to_string(&record()).unwrap();
        std::fs::write(&path, format!("{good}\n{good}\n{{not json\n")).unwrap();
        match read_log(&path) {
            Err(HarnessError::LogCorrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn script_latency_excludes_tool_time() {
        let mut r = record();
        r.steps[0].latency = 1.5;
        r.steps[0].tool_latency = 0.5;
        assert_eq!(r.to_script()[0].latency_ms, Some(1000));
    }
}
