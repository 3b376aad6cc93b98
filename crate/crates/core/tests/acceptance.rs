//! Acceptance suite. Runs as a plain binary (no libtest harness) so every
//! criterion prints one PASS/FAIL line; exits nonzero if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use embodied_loop::client::{mock_from_listing, ClientConfig, CompletionClient, ScriptedBackend};
use embodied_loop::feedback::{
    success_feedback, DetectorError, FeedbackConfig, FeedbackSource::*, ObjectMode,
};
use embodied_loop::golden::LISTINGS;
use embodied_loop::harness::{
    replay_listing, run_benchmark, run_episode, run_episode_with, EnvironmentSpec, EpisodeConfig,
    FailureCause,
};
use embodied_loop::kitchen::{
    Disturbance, ForcedFailure, KitchenScenario, SkillKind, SkillOutcomeModel,
};
use embodied_loop::monologue::{render_document, Dialect, Entry, ParsedAction, Transcript};
use embodied_loop::planner::LlmPlanner;
use embodied_loop::tabletop::{
    execute_pick_place, init_episode, stream_rng, NamedLocation, NoiseConfig, ObjectId, PickNoise,
    PlaceTarget, TabletopTask, TaskFamily, MAX_BLOCKS, MAX_BOWLS,
};
use rand::Rng;
use std::sync::Arc;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, format!("took {t:?}, limit {limit:?}"))
}

fn repeats(t: &Transcript) -> usize {
    let lines: Vec<&str> = t
        .entries
        .iter()
        .filter_map(|e| match e {
            Entry::RobotAction(a) => Some(a.text.as_str()),
            _ => None,
        })
        .collect();
    lines.windows(2).filter(|w| w[0] == w[1]).count()
}

// 1. Golden grammar: parse, byte-exact re-render, replay with recorded step counts.
fn golden_grammar() -> Outcome {
    let start = Instant::now();
    let mut episodes = 0;
    for l in LISTINGS {
        let doc = l.document().map_err(|e| format!("{}: {e}", l.name))?;
        check(
            render_document(&doc).map_err(|e| e.to_string())? == l.text,
            format!("{} re-render differs", l.name),
        )?;
        for (k, ep) in doc.episodes.iter().enumerate() {
            let turns = ep.planner_turns().len();
            if turns == 0 {
                continue;
            }
            let mock = mock_from_listing(&doc, k).map_err(|e| e.to_string())?;
            check(
                mock.turns().len() == turns,
                format!("{} episode {k}: mock has wrong turn count", l.name),
            )?;
            let r = replay_listing(&doc, k).map_err(|e| e.to_string())?;
            check(
                r.success,
                format!(
                    "{} episode {k} replay failed: {:?}",
                    l.name, r.failure_cause
                ),
            )?;
            check(
                r.steps_taken == turns,
                format!(
                    "{} episode {k}: {} steps, recorded {turns}",
                    l.name, r.steps_taken
                ),
            )?;
            episodes += 1;
        }
    }

    // block stacking in the real listing: one failed attempt, two placements, stop
    let real = LISTINGS[1].document().unwrap();
    let stack = (0..real.episodes.len())
        .find(|&k| real.episodes[k].instruction() == Some("Stack all the blocks."))
        .ok_or("no stacking episode in the real listing")?;
    let r = replay_listing(&real, stack).map_err(|e| e.to_string())?;
    let effective = r.trace.iter().filter(|s| s.reported != Some(false)).count();
    check(
        effective == 3,
        format!("stacking episode: {effective} effective steps, expected 3"),
    )?;
    check(
        r.steps_taken == 4,
        format!(
            "stacking episode: {} completions, recorded 4",
            r.steps_taken
        ),
    )?;

    let kitchen = LISTINGS[2].document().unwrap();
    let sponge = kitchen
        .episodes
        .iter()
        .find(|e| e.instruction().is_some_and(|i| i.contains("sponge")))
        .ok_or("no sponge episode")?;
    check(
        repeats(sponge) == 2,
        format!("sponge episode has {} retries", repeats(sponge)),
    )?;

    within(start, Duration::from_secs(1))?;
    Ok(format!(
        "{episodes} episodes replayed, stacking 3 effective steps, sponge 2 retries, {:?}",
        start.elapsed()
    ))
}

// 2. Oracle soundness at zero noise.
fn oracle_soundness() -> Outcome {
    let start = Instant::now();
    let mut n = 0;
    for family in TaskFamily::ALL {
        for seed in 0..50 {
            let cfg = EpisodeConfig::tabletop(
                family.id(),
                FeedbackConfig::new(&[Object, Scene]),
                NoiseConfig::noiseless(),
                seed,
            );
            let r = run_episode(&cfg).map_err(|e| e.to_string())?;
            check(
                r.success,
                format!("{family} seed {seed}: {:?}", r.failure_cause),
            )?;
            check(
                r.steps_taken <= 15,
                format!("{family} seed {seed}: {} steps", r.steps_taken),
            )?;
            n += 1;
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{n}/{n} episodes succeeded, {:?}", start.elapsed()))
}

// Independent reading of the success rule; anchors restated by hand.
fn reference_verdict(top: [f64; 3], target: Result<[f64; 3], &str>) -> bool {
    let anchor = |name: &str| -> [f64; 2] {
        let x = if name.contains("left") {
            -0.2
        } else if name.contains("right") {
            0.2
        } else {
            0.0
        };
        let y = if name.starts_with("top") {
            0.2
        } else if name.starts_with("bottom") {
            -0.2
        } else {
            0.0
        };
        [x, y]
    };
    match target {
        Ok(t) => ((top[0] - t[0]).powi(2) + (top[1] - t[1]).powi(2)).sqrt() < 0.04 && top[2] > t[2],
        Err(loc) => {
            let a = anchor(loc);
            ((top[0] - a[0]).powi(2) + (top[1] - a[1]).powi(2)).sqrt() < 0.04
        }
    }
}

// 3. Success detector equivalence over random placements.
fn detector_equivalence() -> Outcome {
    let mut rng = stream_rng(2024, 9);
    let (mut mismatches, mut positives) = (0, 0);
    for i in 0..10_000u64 {
        let state = init_episode(&TabletopTask::StackAll, MAX_BLOCKS, MAX_BOWLS, i)
            .map_err(|e| e.to_string())?;
        let pick = ObjectId(rng.random_range(0..MAX_BLOCKS as u32));
        let target = if rng.random_bool(0.3) {
            PlaceTarget::Location(NamedLocation::ALL[rng.random_range(0..9)])
        } else {
            let mut id = rng.random_range(0..(MAX_BLOCKS + MAX_BOWLS) as u32);
            if id == pick.0 {
                id = (id + 1) % (MAX_BLOCKS + MAX_BOWLS) as u32;
            }
            PlaceTarget::Object(ObjectId(id))
        };
        let sigma = [0.0, 0.01, 0.02, 0.03, 0.05][rng.random_range(0..5)];
        let noise = NoiseConfig {
            place_sigma: sigma,
            ..NoiseConfig::default()
        };
        let curr = execute_pick_place(&state, pick, target, &noise, &mut rng)
            .map_err(|e| e.to_string())?
            .state;
        // occasionally move the block sideways so "not higher" cases occur
        let curr = if rng.random_bool(0.1) {
            let mut c = curr.clone();
            let o = c.objects.iter_mut().find(|o| o.id == pick).unwrap();
            o.rests_on = None;
            c.recompute_heights();
            c
        } else {
            curr
        };
        let top = curr.get(pick).unwrap().pose;
        let reference = match target {
            PlaceTarget::Object(id) => reference_verdict(top, Ok(curr.get(id).unwrap().pose)),
            PlaceTarget::Location(l) => reference_verdict(top, Err(l.name())),
        };
        let got = success_feedback(&curr, pick, target, 0.04);
        positives += usize::from(got);
        mismatches += usize::from(got != reference);
    }
    check(mismatches == 0, format!("{mismatches} mismatches"))?;
    Ok(format!(
        "10000 placements, {positives} positive, 0 mismatches"
    ))
}

// 4. Feedback ordering on matching bowls under noise and disturbance.
fn table_ordering() -> Outcome {
    let start = Instant::now();
    let noise = NoiseConfig {
        place_sigma: 0.02,
        disturbance_prob: 0.1,
        ..NoiseConfig::default()
    };
    let cells: Vec<EpisodeConfig> = [vec![Object], vec![Object, Success], vec![Object, Scene]]
        .iter()
        .map(|f| EpisodeConfig::tabletop("matching-bowls", FeedbackConfig::new(f), noise, 0))
        .collect();
    let out = run_benchmark(&cells, 200, 0, None).map_err(|e| e.to_string())?;
    let r: Vec<f64> = out.report.cells.iter().map(|c| c.success_rate).collect();
    let rates = format!(
        "Object {:.3}, Object+Success {:.3}, Object+Scene {:.3}",
        r[0], r[1], r[2]
    );
    check(
        r[2] - r[1] >= 0.05 && r[1] - r[0] >= 0.05,
        format!("gaps below 5 points: {rates}"),
    )?;
    within(start, Duration::from_secs(60))?;
    Ok(rates)
}

fn partial_tower(feedback: FeedbackConfig) -> EpisodeConfig {
    let noise = NoiseConfig {
        place_sigma: 0.02,
        place_clip: Some(2.0),
        pick: Some(PickNoise {
            sigma: 0.02,
            cap: 1.5,
        }),
        ..NoiseConfig::default()
    };
    EpisodeConfig {
        environment: EnvironmentSpec::Tabletop {
            task: "stack-all".into(),
            blocks: None,
            bowls: None,
            noise,
            partial_tower: true,
        },
        dialect: Dialect::RealTabletop,
        feedback: FeedbackConfig {
            occlusion: true,
            ..feedback
        },
        ..EpisodeConfig::tabletop("stack-all", FeedbackConfig::none(), noise, 0)
    }
}

// 5. Retry on the real tabletop with a covered tower base.
fn retry_criterion() -> Outcome {
    let cells = vec![
        partial_tower(FeedbackConfig::new(&[Object]).with_object_mode(ObjectMode::EveryStep)),
        partial_tower(FeedbackConfig::new(&[Object, Success])),
        partial_tower(
            FeedbackConfig::new(&[Object, Success]).with_object_mode(ObjectMode::EveryStep),
        ),
    ];
    let out = run_benchmark(&cells, 100, 0, None).map_err(|e| e.to_string())?;
    let r: Vec<f64> = out.report.cells.iter().map(|c| c.success_rate).collect();
    let rates = format!(
        "Object {:.2}, Success {:.2}, Object+Success {:.2}",
        r[0], r[1], r[2]
    );
    check(
        r[2] > r[0] && r[2] > r[1],
        format!("ordering violated: {rates}"),
    )?;
    Ok(rates)
}

pub const KITCHEN_TASKS: [&str; 8] = [
    "pick-soda",
    "pick-chips",
    "pick-snack",
    "pick-caffeinated",
    "throw-away-soda",
    "bring-cleaner",
    "drawer-open",
    "coke-in-drawer",
];

// 6. Kitchen with forced skill failures and knocks.
fn kitchen_disturbance() -> Outcome {
    let scenario = KitchenScenario {
        outcome: SkillOutcomeModel {
            base_success_prob: SkillKind::ALL.iter().map(|k| (*k, 1.0)).collect(),
            forced_failures: vec![
                ForcedFailure {
                    skill: "pick_up".into(),
                    attempt: 1,
                },
                ForcedFailure {
                    skill: "open_drawer".into(),
                    attempt: 1,
                },
            ],
            disturbance: Disturbance::KnockFromGripper(0.3),
        },
        ..KitchenScenario::default()
    };
    let rate = |fb: FeedbackConfig| -> Result<f64, String> {
        let mut ok = 0;
        for i in 0..100u64 {
            let cfg = EpisodeConfig::kitchen(
                KITCHEN_TASKS[i as usize % 8],
                scenario.clone(),
                fb.clone(),
                i,
            );
            ok += usize::from(run_episode(&cfg).map_err(|e| e.to_string())?.success);
        }
        Ok(ok as f64 / 100.0)
    };
    let none = rate(FeedbackConfig::none())?;
    let success = rate(FeedbackConfig::new(&[Success]))?;
    let both = rate(FeedbackConfig::new(&[Object, Success]))?;
    let rates = format!("None {none:.2}, Success {success:.2}, Object+Success {both:.2}");
    check(
        none <= 0.10 && success >= 0.50 && both >= success,
        format!("violated: {rates}"),
    )?;
    Ok(rates)
}

// 7. `bench` output is identical at parallelism 1 and 8.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = dir.path().join("bench.toml");
    std::fs::write(
        &spec,
        r#"
base_seed = 11
episodes_per_cell = 12

[sweep]
tasks = ["matching-bowls", "stack-all"]
disturbance = [0.0, 0.1]
feedback = [{ enabled = ["object"] }, { enabled = ["object", "success"] }, { enabled = ["object", "scene"] }]

[sweep.template]
dialect = "sim_tabletop"
feedback = { enabled = [] }
environment = { kind = "tabletop", task = "stack-all", noise = { place_sigma = 0.02, disturbance_prob = 0.0 } }
"#,
    )
    .map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for p in ["1", "8"] {
        let out = dir.path().join(format!("p{p}"));
        let status = Command::new(env!("CARGO_BIN_EXE_eloop"))
            .args([
                "bench",
                spec.to_str().unwrap(),
                "--parallelism",
                p,
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .map_err(|e| e.to_string())?;
        check(
            status.status.success(),
            format!("bench exited {:?}", status.status),
        )?;
        let json = std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?;
        let jsonl = std::fs::read(out.join("episodes.jsonl")).map_err(|e| e.to_string())?;
        reports.push((json, jsonl));
    }
    check(
        reports[0] == reports[1],
        "reports differ between parallelism 1 and 8",
    )?;
    Ok(format!(
        "report.json {} bytes identical, 12 cells x 12 episodes",
        reports[0].0.len()
    ))
}

// 8. Sampling keeps the spacing at maximum object counts.
fn sampling_invariant() -> Outcome {
    let mut worst = f64::INFINITY;
    for seed in 0..1000 {
        let s = init_episode(&TabletopTask::StackAll, MAX_BLOCKS, MAX_BOWLS, seed)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        worst = worst.min(s.min_pairwise_distance());
    }
    check(worst >= 0.15, format!("min distance {worst:.4}"))?;
    Ok(format!("1000 draws, min pairwise distance {worst:.4} m"))
}

fn scripted(texts: Vec<String>) -> LlmPlanner {
    let backend = ScriptedBackend::new(texts.into_iter().map(Ok).collect());
    let client = CompletionClient::new(
        ClientConfig {
            retries: 0,
            ..ClientConfig::default()
        },
        Arc::new(backend),
    )
    .unwrap();
    LlmPlanner::new(Arc::new(client))
}

// 9. Failure attribution on scripted traces.
fn attribution() -> Outcome {
    let mut cases = 0;
    // hallucinated object
    let cfg = EpisodeConfig::tabletop(
        "stack-all",
        FeedbackConfig::new(&[Object]),
        NoiseConfig::noiseless(),
        0,
    );
    let r = run_episode_with(
        &cfg,
        &scripted(vec![
            "Robot action: Pick the purple block and place it on the purple bowl.".into(),
        ]),
    )
    .map_err(|e| e.to_string())?;
    check(
        r.failure_cause == FailureCause::PlanningFailure,
        format!("hallucination -> {:?}", r.failure_cause),
    )?;
    cases += 1;

    // step cap: a valid, successful action repeated forever
    let state = init_episode(&TabletopTask::StackAll, 3, 0, 0).unwrap();
    let name = state.objects[0].name();
    let line = format!(
        "Robot action: {}",
        embodied_loop::monologue::pick_place_text(Dialect::SimTabletop, &name, "middle")
    );
    let cfg = EpisodeConfig {
        max_steps: 6,
        ..cfg
    };
    let r = run_episode_with(&cfg, &scripted(vec![line; 10])).map_err(|e| e.to_string())?;
    check(
        r.failure_cause == FailureCause::MaxSteps && r.steps_taken == 6,
        format!("step cap -> {:?}", r.failure_cause),
    )?;
    cases += 1;

    // control misses and detector false positives under heavy place noise
    let noisy = NoiseConfig {
        place_sigma: 0.08,
        ..NoiseConfig::default()
    };
    let lying = FeedbackConfig {
        detector_error: Some(DetectorError {
            false_positive: 1.0,
            false_negative: 0.0,
        }),
        ..FeedbackConfig::new(&[Object, Success])
    };
    let (mut control, mut detector) = (0, 0);
    for seed in 0..30 {
        let r = run_episode(&EpisodeConfig::tabletop(
            "stack-all",
            FeedbackConfig::new(&[Object]),
            noisy,
            seed,
        ))
        .map_err(|e| e.to_string())?;
        if !r.success {
            check(
                r.failure_cause == FailureCause::ControlFailure,
                format!("control seed {seed} -> {:?}", r.failure_cause),
            )?;
            control += 1;
        }
        let r = run_episode(&EpisodeConfig::tabletop(
            "stack-all",
            lying.clone(),
            noisy,
            seed,
        ))
        .map_err(|e| e.to_string())?;
        if !r.success {
            let cause = r.failure_cause;
            check(
                cause == FailureCause::SuccessDetectionError,
                format!("detector seed {seed} -> {cause:?}"),
            )?;
            check(
                r.trace.last().and_then(|s| s.action.clone()) == Some(ParsedAction::Done),
                "expected a premature stop",
            )?;
            detector += 1;
        }
    }
    check(
        control > 0 && detector > 0,
        format!("too few failures to classify ({control}, {detector})"),
    )?;
    cases += control + detector;
    Ok(format!("{cases} scripted failures classified correctly"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("golden grammar round trip and replay", golden_grammar),
        ("oracle soundness, 8 tasks x 50 seeds", oracle_soundness),
        ("success detector oracle equivalence", detector_equivalence),
        ("feedback ordering on matching bowls", table_ordering),
        ("retry on real tabletop partial tower", retry_criterion),
        (
            "kitchen forced failures and disturbances",
            kitchen_disturbance,
        ),
        ("benchmark determinism across parallelism", determinism),
        ("sampling spacing at max object counts", sampling_invariant),
        ("failure attribution", attribution),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({why})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
