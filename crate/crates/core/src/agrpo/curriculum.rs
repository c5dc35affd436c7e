use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgrpoError;
use crate::harness::EnvTask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    VisualMath,
    FineGrainedVqa,
    Segmentation,
}

impl Family {
    pub const ALL: [Family; 3] = [Self::VisualMath, Self::FineGrainedVqa, Self::Segmentation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VisualMath => "visual_math",
            Self::FineGrainedVqa => "fine_grained_vqa",
            Self::Segmentation => "segmentation",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    SegWarmup,
    MultiTask,
}

/// Task mixture and step budget of one training stage. Weights are indexed
/// like [`Family::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub kind: StageKind,
    pub mixture: [f64; 3],
    pub step_budget: usize,
}

impl CurriculumStage {
    /// Segmentation tasks only.
    pub fn seg_warmup(step_budget: usize) -> Self {
        Self { kind: StageKind::SegWarmup, mixture: [0.0, 0.0, 1.0], step_budget }
    }

    /// Mixture over (visual math, fine-grained VQA, segmentation).
    pub fn multi_task(mixture: [f64; 3], step_budget: usize) -> Result<Self, AgrpoError> {
        let stage = Self { kind: StageKind::MultiTask, mixture, step_budget };
        stage.validate()?;
        Ok(stage)
    }

    pub fn validate(&self) -> Result<(), AgrpoError> {
        if self.mixture.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AgrpoError::InvalidConfig(format!("negative or non-finite mixture {:?}", self.mixture)));
        }
        let sum: f64 = self.mixture.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AgrpoError::InvalidConfig(format!("mixture weights sum to {sum}, not 1")));
        }
        if self.kind == StageKind::SegWarmup && self.mixture != [0.0, 0.0, 1.0] {
            return Err(AgrpoError::InvalidConfig("segmentation warm-up must sample segmentation only".into()));
        }
        Ok(())
    }

    pub fn weight(&self, family: Family) -> f64 {
        self.mixture[family.index()]
    }
}

/// Pre-generated tasks grouped by family.
#[derive(Debug, Clone, Default)]
pub struct TaskPools {
    pools: [Vec<Arc<EnvTask>>; 3],
}

impl TaskPools {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, family: Family, task: Arc<EnvTask>) {
        self.pools[family.index()].push(task);
    }

    pub fn pool(&self, family: Family) -> &[Arc<EnvTask>] {
        &self.pools[family.index()]
    }

    pub fn all(&self) -> impl Iterator<Item = &Arc<EnvTask>> {
        self.pools.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws a family by the stage's mixture, then a task uniformly from its pool.
pub fn curriculum_sample<'a>(
    stage: &CurriculumStage,
    pools: &'a TaskPools,
    rng: &mut impl Rng,
) -> Result<(Family, &'a Arc<EnvTask>), AgrpoError> {
    stage.validate()?;
    for family in Family::ALL {
        if stage.weight(family) > 0.0 && pools.pool(family).is_empty() {
            return Err(AgrpoError::UnknownFamily(family.as_str().into()));
        }
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut family = Family::ALL.into_iter().rev().find(|f| stage.weight(*f) > 0.0).unwrap_or(Family::Segmentation);
    for f in Family::ALL {
        acc += stage.weight(f);
        if u < acc && stage.weight(f) > 0.0 {
            family = f;
            break;
        }
    }
    let pool = pools.pool(family);
    Ok((family, &pool[rng.random_range(0..pool.len())]))
}
