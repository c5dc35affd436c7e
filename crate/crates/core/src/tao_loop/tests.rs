use std::collections::BTreeMap;
use std::time::Duration;

use image::{Rgb, RgbImage};

use super::*;
use crate::backends::{GeometricOracle, LabelMap, ScriptRecord, ScriptedPolicy};
use crate::harness::TaskKind;
use crate::reward::{score_trajectory, RewardConfig};

const ZOOM: &str = r#"{"name":"image_zoom_in_tool","arguments":{"bbox":[0,0,500,500],"obj_label":"corner"}}"#;
const SEGMENT: &str =
    r#"{"name":"image_segment_tool","arguments":{"bbox":[0,0,1000,1000],"points":[[250,250]],"labels":[1]}}"#;

fn task() -> TaskSpec {
    let mut img = RgbImage::from_pixel(64, 64, Rgb([100, 100, 100]));
    for y in 8..24 {
        for x in 8..24 {
            img.put_pixel(x, y, Rgb([200, 10, 10]));
        }
    }
    TaskSpec {
        task_id: "t0".into(),
        kind: TaskKind::Vqa { question: "What colour is the square?".into(), ground_truth: "red".into(), choices: None },
        image: Arc::new(img),
        meta: BTreeMap::new(),
    }
}

fn oracle(task: &TaskSpec) -> GeometricOracle {
    let oracle = GeometricOracle::new().with_latency(Duration::from_millis(40));
    let mut labels = LabelMap::new(64, 64);
    for y in 8..24 {
        for x in 8..24 {
            labels.set(x, y, 1);
        }
    }
    oracle.register(&task.image, labels);
    oracle
}

fn tool_turn(payload: &str, observe: bool) -> String {
    let obs = if observe { "A grey image with a small square.\n" } else { "" };
    format!("{obs}Thinking Process: look closer.\n<tool_call>\n{payload}\n</tool_call>")
}

fn answer_turn(answer: &str, observe: bool) -> String {
    let obs = if observe { "The view shows a red square.\n" } else { "" };
    format!("{obs}Thinking Process: done.\n<answer>{answer}</answer>")
}

fn script(turns: &[String]) -> ScriptedPolicy {
    ScriptedPolicy::new_unchecked(turns.iter().enumerate().map(|(i, t)| ScriptRecord {
        task_id: "t0".into(),
        turn_index: i,
        text: t.clone(),
        latency_ms: Some(100),
    }))
}

fn run(turns: &[String], config: &EpisodeConfig) -> Trajectory {
    let t = task();
    run_episode(&script(turns), &oracle(&t), &t, config).unwrap()
}

#[test]
fn zoom_then_answer() {
    let traj = run(&[tool_turn(ZOOM, true), answer_turn("red", true)], &EpisodeConfig::default());
    assert_eq!(traj.termination, Termination::Answered);
    assert_eq!(traj.final_answer.as_deref(), Some("red"));
    assert_eq!(traj.aperture_count(), 1);
    let view = traj.steps[0].view.as_ref().unwrap();
    assert_eq!(view.pixels().dimensions(), (32, 32));
    assert_eq!(traj.wall_time, Duration::from_millis(200));
    assert!(!traj.penalized());
}

#[test]
fn segment_latency_counts_tool_time() {
    let traj = run(&[tool_turn(SEGMENT, true), answer_turn("red", true)], &EpisodeConfig::default());
    assert_eq!(traj.termination, Termination::Answered);
    assert_eq!(traj.steps[0].tool_latency, Duration::from_millis(40));
    assert_eq!(traj.wall_time, Duration::from_millis(240));
    assert_eq!(traj.final_mask().unwrap().count(), 256);
}

#[test]
fn missing_observation_terminates_by_default() {
    let traj = run(&[tool_turn(ZOOM, true), answer_turn("red", false)], &EpisodeConfig::default());
    assert_eq!(traj.termination, Termination::Violation(ViolationKind::MissingObservation));
    assert_eq!(traj.final_answer, None);
    assert_eq!(traj.steps.len(), 2);
}

#[test]
fn missing_observation_penalized_zeroes_reward() {
    let config = EpisodeConfig { on_missing_observation: OnMissingObservation::Penalize, ..Default::default() };
    let t = task();
    let traj = run_episode(&script(&[tool_turn(ZOOM, true), answer_turn("red", false)]), &oracle(&t), &t, &config).unwrap();
    assert_eq!(traj.termination, Termination::Answered);
    assert!(traj.penalized());
    assert_eq!(traj.steps[1].violation, Some(ViolationKind::MissingObservation));
    let score = score_trajectory(&t, &traj, &RewardConfig::default()).unwrap();
    assert_eq!((score.r_task, score.r_aperture, score.r_final), (0.0, 0.0, 0.0));
    assert!(score.penalized);
}

#[test]
fn first_turn_observation_required_under_full() {
    let traj = run(&[tool_turn(ZOOM, false)], &EpisodeConfig::default());
    assert_eq!(traj.termination, Termination::Violation(ViolationKind::MissingObservation));
    let relaxed = EpisodeConfig { observe_first_turn: false, ..Default::default() };
    let traj = run(&[tool_turn(ZOOM, false), answer_turn("red", true)], &relaxed);
    assert_eq!(traj.termination, Termination::Answered);
}

#[test]
fn no_observation_variant_skips_the_requirement() {
    let config = EpisodeConfig::for_variant(PromptVariant::NoObservation);
    let traj = run(&[tool_turn(ZOOM, false), answer_turn("red", false)], &config);
    assert_eq!(traj.termination, Termination::Answered);
}

#[test]
fn tool_outside_variant_is_a_violation() {
    let config = EpisodeConfig::for_variant(PromptVariant::ZoomOnly);
    let traj = run(&[tool_turn(SEGMENT, false)], &config);
    assert_eq!(traj.termination, Termination::Violation(ViolationKind::VariantViolation));
}

#[test]
fn text_only_turns_hit_max_turns() {
    let config = EpisodeConfig { max_turns: 3, max_apertures: 2, ..Default::default() };
    let text = "Looking.\nThinking Process: still thinking.".to_string();
    let traj = run(&[text.clone(), text.clone(), text], &config);
    assert_eq!(traj.termination, Termination::MaxTurns);
    assert_eq!(traj.steps.len(), 3);
}

#[test]
fn aperture_budget() {
    let config = EpisodeConfig { max_apertures: 1, ..Default::default() };
    let traj = run(&[tool_turn(ZOOM, true), tool_turn(ZOOM, true)], &config);
    assert_eq!(traj.termination, Termination::Violation(ViolationKind::ApertureBudgetExceeded));
    assert_eq!(traj.aperture_count(), 1);
}

#[test]
fn script_exhaustion_is_a_backend_error() {
    let traj = run(&[tool_turn(ZOOM, true)], &EpisodeConfig::default());
    assert!(matches!(traj.termination, Termination::BackendError(_)));
    assert_eq!(traj.aperture_count(), 1);
}

#[test]
fn unknown_image_makes_segmenter_unavailable() {
    let t = task();
    let traj = run_episode(&script(&[tool_turn(SEGMENT, true)]), &GeometricOracle::new(), &t, &EpisodeConfig::default())
        .unwrap();
    assert!(matches!(traj.termination, Termination::BackendError(ref m) if m.contains("segmenter")));
}

#[test]
fn empty_mask_gives_noise_view_and_continues() {
    let background =
        r#"{"name":"image_segment_tool","arguments":{"bbox":[500,500,1000,1000],"points":[[750,750]],"labels":[1]}}"#;
    let traj = run(&[tool_turn(background, true), answer_turn("red", true)], &EpisodeConfig::default());
    assert_eq!(traj.termination, Termination::Answered);
    assert!(traj.steps[0].view.as_ref().unwrap().is_empty_mask());
}

#[test]
fn runs_are_deterministic_per_seed() {
    let turns = [tool_turn(SEGMENT, true), answer_turn("red", true)];
    let config = EpisodeConfig { seed: 42, ..Default::default() };
    let a = run(&turns, &config);
    let b = run(&turns, &config);
    assert_eq!(a, b);
    let c = run(&turns, &EpisodeConfig { seed: 43, ..config });
    assert_ne!(a.steps[0].view, c.steps[0].view);
}

#[test]
fn phase_errors() {
    let t = task();
    let config = EpisodeConfig::default();
    let mut state = init_episode(&t, &config).unwrap();
    let view = Arc::new(zoom_crop(&t.image, &crate::aperture::NormalizedBBox::full(), &config.view_config()).unwrap());
    let action = ApertureAction::Zoom { bbox: crate::aperture::NormalizedBBox::full(), obj_label: None };
    assert!(matches!(attach_view(&mut state, action, view, &config), Err(LoopError::PhaseError { .. })));
    state.phase = Phase::Done;
    let turn = parse_assistant_turn(&answer_turn("red", true), config.variant, true).unwrap();
    assert!(matches!(advance(&mut state, &turn, &config), Err(LoopError::PhaseError { .. })));
}

#[test]
fn state_machine_phases() {
    let t = task();
    let config = EpisodeConfig::default();
    let mut state = init_episode(&t, &config).unwrap();
    assert!(state.expects_observation(&config));
    let turn = parse_assistant_turn(&tool_turn(ZOOM, true), config.variant, true).unwrap();
    let Transition::NeedToolExecution(action) = advance(&mut state, &turn, &config).unwrap() else { panic!() };
    assert_eq!(state.phase, Phase::AwaitToolExecution);
    let view = Arc::new(zoom_crop(&t.image, action.bbox(), &config.view_config()).unwrap());
    attach_view(&mut state, action, view, &config).unwrap();
    assert_eq!(state.phase, Phase::AwaitObservation);
    assert_eq!(state.history.len(), 4);
    let turn = parse_assistant_turn(&answer_turn("red", true), config.variant, true).unwrap();
    assert_eq!(advance(&mut state, &turn, &config).unwrap(), Transition::Finished("red".into()));
    assert_eq!(state.phase, Phase::Done);
}

#[test]
fn noise_seeds_differ_per_step() {
    assert_ne!(noise_seed(1, 0), noise_seed(1, 1));
    assert_eq!(noise_seed(0, 0), 0x9E37_79B9_7F4A_7C15);
}
