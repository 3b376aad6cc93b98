use embodied_loop::client::truncate_at_stop;
use embodied_loop::feedback::{
    object_feedback, success_feedback, FeedbackConfig, FeedbackSource, ObjectMode, OcclusionTracker,
};
use embodied_loop::harness::{
    run_benchmark, run_episode, run_episode_with, EpisodeConfig, FailureCause, FewShot,
};
use embodied_loop::kitchen::{
    execute_skill, is_afforded, KitchenScenario, KitchenState, SkillOutcomeModel,
};
use embodied_loop::monologue::{parse_episode, render_transcript, Dialect};
use embodied_loop::planner::{OraclePlanner, OraclePolicy};
use embodied_loop::tabletop::{
    execute_pick_place, init_episode, stream_rng, NamedLocation, NoiseConfig, ObjectId,
    PlaceTarget, TabletopTask, TaskFamily, MAX_BLOCKS, MAX_BOWLS,
};
use proptest::prelude::*;

const KITCHEN_TASKS: [&str; 8] = [
    "pick-soda",
    "pick-chips",
    "pick-snack",
    "pick-caffeinated",
    "throw-away-soda",
    "bring-cleaner",
    "drawer-open",
    "coke-in-drawer",
];

fn feedback_strategy() -> impl Strategy<Value = FeedbackConfig> {
    (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(
        |(obj, succ, scene, every)| {
            let mut s = Vec::new();
            if obj || scene {
                s.push(FeedbackSource::Object);
            }
            if succ {
                s.push(FeedbackSource::Success);
            }
            if scene {
                s.push(FeedbackSource::Scene);
            }
            let mode = if every {
                ObjectMode::EveryStep
            } else {
                ObjectMode::Initial
            };
            FeedbackConfig::new(&s).with_object_mode(mode)
        },
    )
}

fn tabletop_config(
    family: usize,
    fb: FeedbackConfig,
    sigma: f64,
    dist: f64,
    seed: u64,
    real: bool,
) -> EpisodeConfig {
    let noise = NoiseConfig {
        place_sigma: sigma,
        disturbance_prob: dist,
        ..NoiseConfig::default()
    };
    let mut cfg = EpisodeConfig::tabletop(TaskFamily::ALL[family].id(), fb, noise, seed);
    if real {
        cfg.dialect = Dialect::RealTabletop;
        cfg.feedback.enabled.remove(&FeedbackSource::Scene);
        cfg.feedback.occlusion = true;
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Every transcript the loop produces renders and parses back unchanged.
    #[test]
    fn produced_transcripts_round_trip(
        family in 0usize..8, fb in feedback_strategy(), sigma in 0.0..0.04f64,
        dist in 0.0..0.3f64, seed in 0u64..1000, real in any::<bool>(),
    ) {
        let r = run_episode(&tabletop_config(family, fb, sigma, dist, seed, real)).unwrap();
        let text = render_transcript(&r.transcript).unwrap().text;
        prop_assert_eq!(parse_episode(r.transcript.dialect, &text).unwrap(), r.transcript);
    }

    #[test]
    fn kitchen_transcripts_round_trip(task in 0usize..8, seed in 0u64..1000, active in any::<bool>(), obj in any::<bool>()) {
        let mut fb = vec![FeedbackSource::Success];
        if obj { fb.push(FeedbackSource::Object); }
        let mut cfg = EpisodeConfig::kitchen(KITCHEN_TASKS[task], KitchenScenario::default(), FeedbackConfig::new(&fb), seed);
        if active { cfg.dialect = Dialect::KitchenActive; }
        let r = run_episode(&cfg).unwrap();
        let text = render_transcript(&r.transcript).unwrap().text;
        prop_assert_eq!(parse_episode(r.transcript.dialect, &text).unwrap(), r.transcript);
    }

    // Support relations stay consistent under any sequence of noisy actions.
    #[test]
    fn world_invariants_hold_under_actions(
        seed in 0u64..10_000,
        steps in prop::collection::vec((0u32..4, 0u32..16, 0.0..0.06f64), 1..12),
    ) {
        let mut state = init_episode(&TabletopTask::StackAll, MAX_BLOCKS, MAX_BOWLS, seed).unwrap();
        let mut rng = stream_rng(seed, 1);
        for (pick, target, sigma) in steps {
            let place = if target < 9 {
                PlaceTarget::Location(NamedLocation::ALL[target as usize])
            } else {
                PlaceTarget::Object(ObjectId(target - 9))
            };
            if place == PlaceTarget::Object(ObjectId(pick)) { continue; }
            let noise = NoiseConfig { place_sigma: sigma, ..NoiseConfig::default() };
            state = execute_pick_place(&state, ObjectId(pick), place, &noise, &mut rng).unwrap().state;
            prop_assert!(state.check_invariants().is_ok(), "{:?}", state.check_invariants());
            let p = state.get(ObjectId(pick)).unwrap();
            prop_assert!(p.pose[0].abs() <= 0.3 && p.pose[1].abs() <= 0.3);
        }
    }

    // The detector agrees with the plain geometric rule for arbitrary poses.
    #[test]
    fn success_rule_matches_geometry(seed in 0u64..5000, dx in -0.08..0.08f64, dy in -0.08..0.08f64, target in 4u32..7) {
        let mut s = init_episode(&TabletopTask::StackAll, MAX_BLOCKS, MAX_BOWLS, seed).unwrap();
        let base = s.get(ObjectId(target)).unwrap().pose;
        let top = s.objects.iter_mut().find(|o| o.id == ObjectId(0)).unwrap();
        top.pose[0] = base[0] + dx;
        top.pose[1] = base[1] + dy;
        top.rests_on = Some(ObjectId(target));
        s.recompute_heights();
        let expect = (dx * dx + dy * dy).sqrt() < 0.04;
        prop_assert_eq!(success_feedback(&s, ObjectId(0), PlaceTarget::Object(ObjectId(target)), 0.04), expect);
        // a block on the table beside the bowl is never "on" it
        let t = s.objects.iter_mut().find(|o| o.id == ObjectId(0)).unwrap();
        t.rests_on = None;
        s.recompute_heights();
        let low = s.get(ObjectId(0)).unwrap().pose[2] > s.get(ObjectId(target)).unwrap().pose[2];
        prop_assert_eq!(success_feedback(&s, ObjectId(0), PlaceTarget::Object(ObjectId(target)), 0.04), expect && low);
    }

    // A skill is afforded exactly when it can be executed without bypass.
    #[test]
    fn affordance_matches_execution(ops in prop::collection::vec(0usize..64, 1..20), seed in 0u64..100) {
        let mut state = KitchenState::default();
        let model = SkillOutcomeModel::reliable();
        let mut rng = stream_rng(seed, 1);
        for op in ops {
            let skills = state.all_skills();
            let skill = &skills[op % skills.len()];
            let r = execute_skill(&state, skill, &model, &mut rng, (1, 1), false);
            prop_assert_eq!(r.is_ok(), is_afforded(&state, skill), "{}", skill);
            if let Ok((next, ok)) = r {
                prop_assert!(ok);
                prop_assert!(next.check_invariants().is_ok());
                state = next;
            }
        }
    }

    // Once an object has been reported it never drops out of later reports.
    #[test]
    fn occlusion_is_monotone(seed in 0u64..5000, steps in prop::collection::vec((0u32..4, 0u32..4), 1..10)) {
        let mut state = init_episode(&TabletopTask::StackAll, MAX_BLOCKS, 0, seed).unwrap();
        let mut tracker = OcclusionTracker::default();
        let mut rng = stream_rng(seed, 1);
        let (v, o) = object_feedback(&state, Some(&mut tracker));
        let mut reported: Vec<String> = v.into_iter().chain(o).collect();
        for (pick, on) in steps {
            if pick == on { continue; }
            state = execute_pick_place(&state, ObjectId(pick), PlaceTarget::Object(ObjectId(on)), &NoiseConfig::noiseless(), &mut rng)
                .unwrap().state;
            let (v, o) = object_feedback(&state, Some(&mut tracker));
            let now: Vec<String> = v.iter().chain(&o).cloned().collect();
            for n in &reported {
                prop_assert!(now.contains(n), "{} vanished", n);
            }
            prop_assert!(v.iter().all(|n| !o.contains(n)));
            reported = now;
        }
    }

    // The oracle is a pure function of the transcript: identical configs give identical results.
    #[test]
    fn oracle_is_deterministic(family in 0usize..8, fb in feedback_strategy(), seed in 0u64..1000, dist in 0.0..0.3f64) {
        let cfg = tabletop_config(family, fb, 0.02, dist, seed, false);
        prop_assert_eq!(run_episode(&cfg).unwrap(), run_episode(&cfg).unwrap());
    }

    // Zero noise with scene feedback always succeeds.
    #[test]
    fn oracle_sound_without_noise(family in 0usize..8, seed in 0u64..100_000) {
        let cfg = tabletop_config(family, FeedbackConfig::new(&[FeedbackSource::Object, FeedbackSource::Scene]), 0.0, 0.0, seed, false);
        let r = run_episode(&cfg).unwrap();
        prop_assert!(r.success, "{:?}", r.failure_cause);
    }

    #[test]
    fn step_cap_and_cause_consistency(
        family in 0usize..8, fb in feedback_strategy(), seed in 0u64..1000,
        max_steps in 1usize..8, dist in 0.0..0.5f64, retry in any::<bool>(),
    ) {
        let mut cfg = tabletop_config(family, fb, 0.03, dist, seed, false);
        cfg.max_steps = max_steps;
        cfg.few_shot = FewShot::None;
        let planner = OraclePlanner::new(OraclePolicy { retry_on_failure: retry, ..OraclePolicy::default() });
        let r = run_episode_with(&cfg, &planner).unwrap();
        prop_assert!(r.steps_taken <= max_steps);
        prop_assert_eq!(r.success, r.failure_cause == FailureCause::None);
    }

    #[test]
    fn truncation_removes_every_stop(text in ".{0,60}", stops in prop::collection::vec("[a-z\\n]{1,3}", 0..3)) {
        let out = truncate_at_stop(&text, &stops);
        prop_assert!(text.starts_with(&out));
        for s in &stops {
            prop_assert!(!out.contains(s.as_str()));
        }
    }
}

// Growing the episode count leaves the shared seeds untouched.
#[test]
fn seed_isolation() {
    let cells = vec![
        tabletop_config(
            5,
            FeedbackConfig::new(&[FeedbackSource::Object]),
            0.02,
            0.1,
            0,
            false,
        ),
        tabletop_config(
            1,
            FeedbackConfig::new(&[FeedbackSource::Object, FeedbackSource::Success]),
            0.02,
            0.1,
            0,
            false,
        ),
    ];
    let small = run_benchmark(&cells, 5, 40, Some(2)).unwrap();
    let large = run_benchmark(&cells, 9, 40, Some(3)).unwrap();
    for e in &small.episodes {
        let twin = large
            .episodes
            .iter()
            .find(|x| x.cell == e.cell && x.seed == e.seed)
            .unwrap();
        assert_eq!(e, twin);
    }
    for c in &large.report.cells {
        assert_eq!(
            c.failure_causes.values().sum::<usize>() + c.successes,
            c.episodes
        );
        assert!((0.0..=1.0).contains(&c.success_rate));
    }
}
