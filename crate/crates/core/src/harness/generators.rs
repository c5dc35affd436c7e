use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Geometry, Glyph, Shape, SyntheticScene};
use super::{EnvTask, HarnessError, TaskKind};

const PALETTE: [(&str, [u8; 3]); 6] = [
    ("red", [220, 40, 40]),
    ("green", [40, 170, 60]),
    ("blue", [50, 80, 220]),
    ("yellow", [230, 210, 40]),
    ("purple", [140, 60, 170]),
    ("orange", [240, 140, 30]),
];

const BACKGROUND: [u8; 3] = [96, 96, 104];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedleParams {
    pub width: u32,
    pub height: u32,
    pub glyph_size: u32,
    pub rho: f64,
    /// Number of distractor shapes.
    pub clutter: usize,
    /// Minimum distance from the glyph centre to every image edge.
    pub center_margin: u32,
}

impl Default for NeedleParams {
    fn default() -> Self {
        Self { width: 512, height: 512, glyph_size: 8, rho: 0.05, clutter: 12, center_margin: 156 }
    }
}

impl NeedleParams {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(HarnessError::Param(format!("rho {} outside (0, 1]", self.rho)));
        }
        if self.glyph_size == 0 || self.glyph_size > self.width.min(self.height) {
            return Err(HarnessError::Param(format!("glyph size {} does not fit", self.glyph_size)));
        }
        let half = self.glyph_size.div_ceil(2);
        if self.center_margin < half || 2 * self.center_margin > self.width.min(self.height) {
            return Err(HarnessError::Param(format!("center margin {} is infeasible", self.center_margin)));
        }
        Ok(())
    }

    /// Whether a glyph of this size is readable without any aperture.
    pub fn is_control(&self) -> bool {
        self.glyph_size as f64 / self.width.min(self.height) as f64 >= self.rho
    }
}

fn random_shape(rng: &mut impl Rng, width: u32, height: u32, min_r: i64, max_r: i64) -> Shape {
    let (name, fill) = PALETTE[rng.random_range(0..PALETTE.len())];
    let r = rng.random_range(min_r..=max_r);
    let cx = rng.random_range(0..width as i64);
    let cy = rng.random_range(0..height as i64);
    if rng.random_bool(0.5) {
        Shape { geometry: Geometry::Disk { cx, cy, r }, fill, label: format!("{name} disk") }
    } else {
        Shape { geometry: Geometry::Rect { x0: cx - r, y0: cy - r, x1: cx + r, y1: cy + r }, fill, label: format!("{name} square") }
    }
}

fn needle_scene(rng: &mut impl Rng, params: &NeedleParams) -> Result<SyntheticScene, HarnessError> {
    params.validate()?;
    let short = params.width.min(params.height) as i64;
    let shapes = (0..params.clutter)
        .map(|_| random_shape(rng, params.width, params.height, (short / 32).max(1), (short / 8).max(1)))
        .collect();
    let half = params.glyph_size / 2;
    let x = rng.random_range(params.center_margin - half..=params.width - params.center_margin - half);
    let y = rng.random_range(params.center_margin - half..=params.height - params.center_margin - half);
    let symbol = char::from(b'0' + rng.random_range(0..10u8));
    let scene = SyntheticScene {
        width: params.width,
        height: params.height,
        background: BACKGROUND,
        shapes,
        glyph: Some(Glyph { symbol, x, y, size: params.glyph_size }),
        rho: params.rho,
    };
    scene.validate()?;
    Ok(scene)
}

/// A cluttered scene with a small digit tag; the question asks for the digit.
pub fn gen_needle_task(rng: &mut impl Rng, params: &NeedleParams, task_id: &str) -> Result<EnvTask, HarnessError> {
    let scene = needle_scene(rng, params)?;
    let symbol = scene.glyph.map(|g| g.symbol).unwrap_or('0');
    let question = "What digit is printed on the white tag in the image? Answer with the digit only.".to_string();
    let mut task = EnvTask::new(
        task_id.to_string(),
        |_| TaskKind::Vqa { question, ground_truth: symbol.to_string(), choices: None },
        scene,
        None,
    );
    task.spec.meta.insert("family".into(), "needle".into());
    task.spec.meta.insert("control".into(), params.is_control().to_string());
    Ok(task)
}

/// Needle scene whose question needs arithmetic on the digit (`3·d + 1`).
pub fn gen_math_task(rng: &mut impl Rng, params: &NeedleParams, task_id: &str) -> Result<EnvTask, HarnessError> {
    let scene = needle_scene(rng, params)?;
    let d = scene.glyph.and_then(|g| g.symbol.to_digit(10)).unwrap_or(0);
    let question = "Multiply the digit printed on the white tag by 3, then add 1. What is the result?".to_string();
    let mut task = EnvTask::new(
        task_id.to_string(),
        |_| TaskKind::VisualMath { question, ground_truth: (3 * d + 1).to_string() },
        scene,
        None,
    );
    task.spec.meta.insert("family".into(), "visual_math".into());
    task.spec.meta.insert("control".into(), params.is_control().to_string());
    task.spec.meta.insert("answer_rule".into(), "3,1".into());
    Ok(task)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSegParams {
    pub width: u32,
    pub height: u32,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Number of palette colours in play (1..=6).
    pub colors: usize,
    /// Allowed shape kinds: any of "disk", "square".
    pub kinds: Vec<String>,
    /// Fraction of the target's raster that must stay visible.
    pub min_visible: f64,
    pub max_tries: usize,
}

impl Default for ShapeSegParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            min_shapes: 2,
            max_shapes: 4,
            colors: 4,
            kinds: vec!["disk".into(), "square".into()],
            min_visible: 0.5,
            max_tries: 200,
        }
    }
}

impl ShapeSegParams {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.width < 16 || self.height < 16 {
            return Err(HarnessError::Param("segmentation scenes need at least 16x16 pixels".into()));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(HarnessError::Param("invalid shape count range".into()));
        }
        if self.colors == 0 || self.colors > PALETTE.len() {
            return Err(HarnessError::Param(format!("colors must be in 1..={}", PALETTE.len())));
        }
        if self.kinds.is_empty() || self.kinds.iter().any(|k| k != "disk" && k != "square") {
            return Err(HarnessError::Param("kinds must be drawn from disk/square".into()));
        }
        Ok(())
    }
}

/// Overlapping shapes with a uniquely described target. Larger shapes are
/// painted first so that smaller ones stay fully visible.
pub fn gen_shape_seg_task(rng: &mut impl Rng, params: &ShapeSegParams, task_id: &str) -> Result<EnvTask, HarnessError> {
    params.validate()?;
    let short = params.width.min(params.height) as i64;
    for _ in 0..params.max_tries {
        let n = rng.random_range(params.min_shapes..=params.max_shapes);
        let mut shapes: Vec<Shape> = (0..n)
            .map(|_| {
                let (name, fill) = PALETTE[rng.random_range(0..params.colors)];
                let kind = &params.kinds[rng.random_range(0..params.kinds.len())];
                let r = rng.random_range(short / 16..=short / 5);
                let cx = rng.random_range(r..params.width as i64 - r);
                let cy = rng.random_range(r..params.height as i64 - r);
                let geometry = if kind == "disk" {
                    Geometry::Disk { cx, cy, r }
                } else {
                    Geometry::Rect { x0: cx - r, y0: cy - r, x1: cx + r, y1: cy + r }
                };
                Shape { geometry, fill, label: format!("{name} {kind}") }
            })
            .collect();
        shapes.sort_by_key(|s| std::cmp::Reverse(s.geometry.area()));
        let target = rng.random_range(0..n);
        let Some(referent) = describe(&shapes, target) else { continue };
        let scene = SyntheticScene { width: params.width, height: params.height, background: BACKGROUND, shapes, glyph: None, rho: 1.0 };
        scene.validate()?;
        let label = target as u16 + 1;
        let raster = scene.shape_raster(target).count();
        let task = EnvTask::new(
            task_id.to_string(),
            |labels| TaskKind::Segmentation { instruction: format!("Segment {referent}."), gt_mask: labels.region(label) },
            scene,
            Some(label),
        );
        let TaskKind::Segmentation { gt_mask, .. } = &task.spec.kind else { unreachable!() };
        if (gt_mask.count() as f64) < params.min_visible * raster as f64 || gt_mask.count() == 0 {
            continue;
        }
        let mut task = task;
        task.spec.meta.insert("family".into(), "segmentation".into());
        return Ok(task);
    }
    Err(HarnessError::Param(format!("no unambiguous referent after {} tries", params.max_tries)))
}

/// Unique noun phrase for `shapes[target]`, if one exists.
fn describe(shapes: &[Shape], target: usize) -> Option<String> {
    let same: Vec<usize> = (0..shapes.len()).filter(|&i| shapes[i].label == shapes[target].label).collect();
    match same.len() {
        1 => Some(format!("the {}", shapes[target].label)),
        2 => {
            let other = if same[0] == target { same[1] } else { same[0] };
            let (a, b) = (shapes[target].geometry.area(), shapes[other].geometry.area());
            match a.cmp(&b) {
                std::cmp::Ordering::Less => Some(format!("the smaller {}", shapes[target].label)),
                std::cmp::Ordering::Greater => Some(format!("the larger {}", shapes[target].label)),
                std::cmp::Ordering::Equal => None,
            }
        }
        _ => None,
    }
}

/// Serialized task: the scene is stored so the image re-renders bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub kind: TaskKind,
    pub scene: SyntheticScene,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<u16>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl TaskRecord {
    pub fn from_task(task: &EnvTask) -> Self {
        Self {
            task_id: task.spec.task_id.clone(),
            kind: task.spec.kind.clone(),
            scene: (*task.scene).clone(),
            target: task.target,
            meta: task.spec.meta.clone(),
        }
    }

    pub fn into_task(self) -> Result<EnvTask, HarnessError> {
        self.scene.validate()?;
        let target = self.target;
        let mut kind = self.kind;
        let mut task = EnvTask::new(
            self.task_id,
            |labels| {
                if let (TaskKind::Segmentation { gt_mask, .. }, Some(t)) = (&mut kind, target) {
                    *gt_mask = labels.region(t);
                }
                kind
            },
            self.scene,
            target,
        );
        task.spec.meta = self.meta;
        task.spec.validate()?;
        Ok(task)
    }
}

/// Writes `tasks.jsonl` plus PNG images (and ground-truth masks) under `dir`.
pub fn write_tasks(dir: &Path, tasks: &[EnvTask]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut out = BufWriter::new(std::fs::File::create(dir.join("tasks.jsonl"))?);
    for task in tasks {
        let record = TaskRecord::from_task(task);
        let line = serde_json::to_string(&record).map_err(|e| HarnessError::Param(e.to_string()))?;
        writeln!(out, "{line}")?;
        let id = &task.spec.task_id;
        task.spec
            .image
            .save(dir.join("images").join(format!("{id}.png")))
            .map_err(|e| HarnessError::Io(std::io::Error::other(e)))?;
        if let TaskKind::Segmentation { gt_mask, .. } = &task.spec.kind {
            let png = gt_mask.to_png().map_err(|e| HarnessError::Param(e.to_string()))?;
            std::fs::write(dir.join("images").join(format!("{id}.mask.png")), png)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_tasks(path: &Path) -> Result<Vec<EnvTask>, HarnessError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut tasks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord =
            serde_json::from_str(&line).map_err(|e| HarnessError::LogCorrupt { line: i + 1, message: e.to_string() })?;
        tasks.push(record.into_task()?);
    }
    Ok(tasks)
}
