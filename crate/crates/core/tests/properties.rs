use aperture_core::agrpo::{group_advantages, token_objective, AgrpoConfig};
use aperture_core::aperture::{to_pixel_rect, zoom_crop, ViewConfig};
use aperture_core::protocol::{parse_assistant_turn, render_assistant_turn, validate_tool_call, AssistantTurn, PromptVariant, ToolCallPayload};
use aperture_core::reward::{final_reward, iou, s_measure, seg_reward, RewardConfig};
use aperture_core::{ApertureAction, Mask, NormalizedBBox, PointPrompt};
use image::RgbImage;
use proptest::prelude::*;

fn mask_pair(max: u32) -> impl Strategy<Value = (Mask, Mask)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)).prop_map(move |(a, b)| {
            (Mask::from_bits(w, h, a).unwrap(), Mask::from_bits(w, h, b).unwrap())
        })
    })
}

fn bbox() -> impl Strategy<Value = NormalizedBBox> {
    (0.0..999.0f64, 0.0..999.0f64, 0.001..1.0f64, 0.001..1.0f64).prop_map(|(x1, y1, fw, fh)| {
        let x2 = x1 + (1000.0 - x1) * fw;
        let y2 = y1 + (1000.0 - y1) * fh;
        NormalizedBBox::new(x1, y1, x2.max(x1 + 1e-3), y2.max(y1 + 1e-3)).unwrap()
    })
}

fn action() -> impl Strategy<Value = ApertureAction> {
    let label = prop::option::of("[a-zA-Z ,.'\"/\\\\-]{1,24}");
    let point = (0.0..=1000.0f64, 0.0..=1000.0f64, 0..2i64).prop_map(|(x, y, l)| PointPrompt::new(x, y, l).unwrap());
    prop_oneof![
        (bbox(), label.clone()).prop_map(|(bbox, obj_label)| ApertureAction::Zoom { bbox, obj_label }),
        (bbox(), prop::collection::vec(point, 1..5), label)
            .prop_map(|(bbox, points, obj_label)| ApertureAction::segment(bbox, points, obj_label).unwrap()),
    ]
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval((pred, gt) in mask_pair(12)) {
        let i = iou(&pred, &gt).unwrap();
        let s = s_measure(&pred, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s), "s = {s}");
        prop_assert_eq!(iou(&gt, &pred).unwrap(), i);
    }

    #[test]
    fn identical_masks_are_perfect((mask, _) in mask_pair(12)) {
        prop_assert_eq!(iou(&mask, &mask).unwrap(), 1.0);
        prop_assert!((s_measure(&mask, &mask).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn seg_reward_never_in_clip_gap((pred, gt) in mask_pair(12)) {
        let cfg = RewardConfig::default();
        let r = seg_reward(&pred, &gt, &cfg).unwrap();
        prop_assert!(r == 0.0 || (cfg.seg_clip..=1.0 + 1e-12).contains(&r));
    }

    #[test]
    fn final_reward_is_the_weighted_sum(t in 0.0..=1.0f64, a in prop::sample::select(vec![0.0, 1.0]), b1 in 0.01..3.0f64, b2 in 0.01..3.0f64) {
        let cfg = RewardConfig { beta1: b1, beta2: b2, ..RewardConfig::default() };
        prop_assert_eq!(final_reward(t, a, &cfg), b1 * t + b2 * a);
    }

    #[test]
    fn pixel_rect_stays_inside_and_covers_the_box(b in bbox(), w in 1u32..600, h in 1u32..600, min_side in 0u32..32) {
        let r = to_pixel_rect(&b, w, h, min_side).unwrap();
        prop_assert!(r.x0 < r.x1 && r.x1 <= w && r.y0 < r.y1 && r.y1 <= h);
        prop_assert!(r.width() >= min_side.min(w) && r.height() >= min_side.min(h));
        let [x1, y1, x2, y2] = b.to_array();
        let (sx, sy) = (w as f64 / 1000.0, h as f64 / 1000.0);
        prop_assert!(r.x0 as f64 <= (x1 * sx).floor() && r.x1 as f64 >= (x2 * sx).ceil().min(w as f64));
        prop_assert!(r.y0 as f64 <= (y1 * sy).floor() && r.y1 as f64 >= (y2 * sy).ceil().min(h as f64));
    }

    #[test]
    fn zoom_view_matches_rect(b in bbox(), w in 8u32..80, h in 8u32..80) {
        let img = RgbImage::from_fn(w, h, |x, y| image::Rgb([x as u8, y as u8, (x ^ y) as u8]));
        let config = ViewConfig { min_view_side: 1, min_view_pixels: 1 };
        let view = zoom_crop(&img, &b, &config).unwrap();
        let r = view.pixel_rect();
        prop_assert_eq!(view.pixels().dimensions(), (r.width(), r.height()));
        prop_assert_eq!(view.pixels().get_pixel(0, 0), img.get_pixel(r.x0, r.y0));
    }

    #[test]
    fn advantages_are_centred_and_scaled(rewards in prop::collection::vec(0.0..2.0f64, 2..16)) {
        let cfg = AgrpoConfig::default();
        let adv = group_advantages(&rewards, &cfg).unwrap();
        prop_assert!(adv.iter().sum::<f64>().abs() < 1e-9 * rewards.len() as f64);
        let var = adv.iter().map(|a| a * a).sum::<f64>() / adv.len() as f64;
        prop_assert!(var <= 1.0 + 1e-9);
        let order = |v: &[f64], i: usize, j: usize| v[i].partial_cmp(&v[j]).unwrap();
        for i in 0..rewards.len() {
            for j in 0..rewards.len() {
                if rewards[i] < rewards[j] {
                    prop_assert_eq!(order(&adv, i, j), std::cmp::Ordering::Less);
                }
            }
        }
    }

    #[test]
    fn clipped_objective_is_a_pessimistic_bound(dl in -2.0..2.0f64, a in -3.0..3.0f64) {
        let cfg = AgrpoConfig::default();
        let (value, _) = token_objective(dl, 0.0, a, &cfg);
        let rho = dl.exp();
        prop_assert!(value <= rho * a + 1e-12);
        let clipped = rho.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * a;
        prop_assert!((value - (rho * a).min(clipped)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_clip_matches_the_symmetric_formula(dl in -2.0..2.0f64, a in -3.0..3.0f64, eps in 0.05..0.5f64) {
        let cfg = AgrpoConfig { eps_low: eps, eps_high: eps, ..AgrpoConfig::default() };
        let rho = dl.exp();
        let (value, _) = token_objective(dl, 0.0, a, &cfg);
        prop_assert!((value - (rho * a).min(rho.clamp(1.0 - eps, 1.0 + eps) * a)).abs() < 1e-12);
    }

    #[test]
    fn tool_calls_round_trip(action in action(), observe in any::<bool>()) {
        let variant = if observe { PromptVariant::Full } else { PromptVariant::NoObservation };
        let payload = ToolCallPayload::from_action(&action);
        let reparsed = ToolCallPayload::from_json(&payload.to_json()).unwrap();
        prop_assert_eq!(validate_tool_call(&reparsed, variant).unwrap(), action.clone());

        let turn = AssistantTurn {
            observation: observe.then(|| "A cluttered desk.".to_string()),
            thinking: "Check the corner.".into(),
            tool_call: Some(payload),
            answer: None,
            raw: String::new(),
        };
        let parsed = parse_assistant_turn(&render_assistant_turn(&turn), variant, observe).unwrap();
        prop_assert_eq!(validate_tool_call(parsed.tool_call.as_ref().unwrap(), variant).unwrap(), action);
        prop_assert_eq!(parsed.observation, turn.observation);
    }
}
