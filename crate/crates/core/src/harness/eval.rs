use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;

use serde::{Deserialize, Serialize};

use super::log::{LogWriter, TrajectoryRecord};
use super::{HarnessError, TaskKind, TaskSpec};
use crate::backends::{PolicyBackend, SegmenterBackend};
use crate::reward::{score_trajectory, RewardConfig};
use crate::tao_loop::{run_episode, EpisodeConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilySummary {
    pub tasks: usize,
    /// Mean task reward over question-answering tasks.
    pub accuracy: Option<f64>,
    /// Mean segmentation reward over segmentation tasks.
    pub mean_seg_reward: Option<f64>,
    pub mean_apertures: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tasks: usize,
    pub families: BTreeMap<String, FamilySummary>,
    /// `(task_id, error)` for episodes that could not be run or scored.
    pub failures: Vec<(String, String)>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    qa: Vec<f64>,
    seg: Vec<f64>,
    apertures: f64,
    reward: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// The family tag a task is reported under.
pub fn family_of(task: &TaskSpec) -> String {
    task.meta.get("family").cloned().unwrap_or_else(|| task.family().to_string())
}

/// Runs every task through the episode loop, scores it, and appends one
/// record per trajectory to `log` in task order. Episode `i` uses seed
/// `episode.seed + i`. Episodes run on up to the backends' concurrency limit.
pub fn run_eval(
    tasks: &[TaskSpec],
    policy: &dyn PolicyBackend,
    segmenter: &dyn SegmenterBackend,
    episode: &EpisodeConfig,
    reward: &RewardConfig,
    log: &mut LogWriter,
) -> Result<EvalSummary, HarnessError> {
    episode.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let reward = reward.validated().map_err(|e| HarnessError::Config(e.to_string()))?;
    let workers = policy.max_concurrency().min(segmenter.max_concurrency()).min(tasks.len()).max(1);
    let next = AtomicUsize::new(0);
    let (tx, rx) = sync_channel::<(usize, Result<TrajectoryRecord, String>)>(workers * 2);

    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut write_err = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let reward = &reward;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let seed = episode.seed.wrapping_add(i as u64);
                let config = EpisodeConfig { seed, ..episode.clone() };
                let result = run_episode(policy, segmenter, task, &config)
                    .map_err(|e| e.to_string())
                    .and_then(|mut traj| {
                        traj.reward = Some(score_trajectory(task, &traj, reward).map_err(|e| e.to_string())?);
                        Ok(TrajectoryRecord { seed, ..TrajectoryRecord::from_trajectory(&traj, &family_of(task)) })
                    });
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // single writer, restoring task order
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&expected) {
                let task = &tasks[expected];
                expected += 1;
                match result {
                    Ok(record) => {
                        let a = acc.entry(record.family.clone()).or_default();
                        a.n += 1;
                        a.apertures += record.aperture_count() as f64;
                        if let Some(r) = &record.reward {
                            a.reward += r.r_final;
                            match task.kind {
                                TaskKind::Segmentation { .. } => a.seg.push(r.r_seg.unwrap_or(0.0)),
                                _ => a.qa.push(r.r_task),
                            }
                        }
                        if write_err.is_none() {
                            write_err = log.append(&record).err();
                        }
                    }
                    Err(e) => {
                        log::warn!("task {} failed: {e}", task.task_id);
                        failures.push((task.task_id.clone(), e));
                    }
                }
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }

    let families = acc
        .into_iter()
        .map(|(name, a)| {
            let n = a.n.max(1) as f64;
            let summary = FamilySummary {
                tasks: a.n,
                accuracy: mean(&a.qa),
                mean_seg_reward: mean(&a.seg),
                mean_apertures: a.apertures / n,
                mean_reward: a.reward / n,
            };
            (name, summary)
        })
        .collect();
    Ok(EvalSummary { tasks: tasks.len(), families, failures })
}
