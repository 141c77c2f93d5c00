//! Metrics, persistence and configuration invariants.

use meshnav::baselines::fixed_epsilon_config;
use meshnav::context::TerrainContext;
use meshnav::dynamics::State;
use meshnav::fmm::{compute_field, VertexCosts};
use meshnav::harness::batch::{read_output, run_batch_to_dir, summary_csv, BatchOptions, MethodSpec, OutputDir};
use meshnav::harness::metrics::{compute_metrics, RunRecord, TradeoffNormalization};
use meshnav::harness::suite::{benchmark_suite, ScenarioClass};
use meshnav::harness::ExperimentConfig;
use meshnav::mesh::{generate_terrain, TerrainSpec};
use meshnav::objectives::ObjectiveParams;
use meshnav::planner::{plan_step, Outcome, PlanContext, PlannerConfig};
use nalgebra::Point3;
use proptest::prelude::*;

const OUTCOMES: [Outcome; 5] = [
    Outcome::Success,
    Outcome::FailureTipover,
    Outcome::FailureOffmesh,
    Outcome::Timeout,
    Outcome::Infeasible,
];

fn record() -> impl Strategy<Value = RunRecord> {
    (0usize..3, 0usize..5, 0.0f64..30.0, 0.0f64..50.0, 5.0f64..15.0).prop_map(|(m, o, extra, phi, sl)| {
        let outcome = OUTCOMES[o];
        RunRecord {
            scenario: "s".into(),
            method: format!("m{m}"),
            repeat: 0,
            seed: 0,
            outcome,
            traveled: sl + extra,
            straight_line: sl,
            delta_l: extra,
            phi_max_deg: phi,
            tipover: outcome == Outcome::FailureTipover,
            iterations: 10,
            fallbacks: 0,
            message: String::new(),
            mean_plan_ms: 1.0,
        }
    })
}

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * (1.0 + a.abs())
}

proptest! {
    #[test]
    fn metrics_ignore_run_order(
        runs in prop::collection::vec(record(), 1..40),
        perm in any::<prop::sample::Index>(),
    ) {
        let mut shuffled = runs.clone();
        let k = perm.index(shuffled.len());
        shuffled.rotate_left(k);
        shuffled.reverse();
        for norm in [TradeoffNormalization::BatchMinMax, meshnav::harness::metrics::fixed_reference()] {
            let a = compute_metrics(&runs, norm);
            let b = compute_metrics(&shuffled, norm);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(&x.method, &y.method);
                prop_assert_eq!(x.runs, y.runs);
                prop_assert!(same(x.success_rate, y.success_rate));
                prop_assert!(same(x.mean_delta_l, y.mean_delta_l));
                prop_assert!(same(x.mean_phi_max_deg, y.mean_phi_max_deg));
                prop_assert!(same(x.tradeoff, y.tradeoff));
            }
        }
    }

    #[test]
    fn tradeoff_stays_in_unit_interval(runs in prop::collection::vec(record(), 1..40)) {
        for s in compute_metrics(&runs, TradeoffNormalization::BatchMinMax) {
            prop_assert!(s.tradeoff.is_nan() || (-1e-12..=1.0 + 1e-12).contains(&s.tradeoff));
        }
    }

    #[test]
    fn config_override_sets_value(n in 2usize..500, h in 1usize..60, seed in any::<u32>()) {
        let cfg = ExperimentConfig::from_toml(
            "",
            &[format!("planner.n_cand={n}"), format!("planner.horizon={h}"), format!("batch.seed={seed}")],
        )
        .unwrap();
        prop_assert_eq!(cfg.planner.n_cand, n);
        prop_assert_eq!(cfg.planner.horizon, h);
        prop_assert_eq!(cfg.batch.seed, seed as u64);
    }
}

#[test]
fn config_rejects_a_single_candidate() {
    assert!(ExperimentConfig::from_toml("", &["planner.n_cand=1".to_string()]).is_err());
}

/// On flat ground every candidate has zero tilt cost, so the constraint
/// level cannot change the choice.
#[test]
fn fixed_and_adaptive_epsilon_agree_on_flat_ground() {
    let ctx = TerrainContext::new(generate_terrain(&TerrainSpec::grid(41, 10.0)).unwrap());
    let goal = Point3::new(6.0, 4.0, 0.0);
    let field = compute_field(&ctx.mesh, goal, &VertexCosts::uniform(ctx.mesh.num_vertices())).unwrap();
    let obj = ObjectiveParams::default();
    let pc = PlanContext {
        ctx: &ctx,
        field: &field,
        model: None,
        objectives: &obj,
    };
    for k in 0..5 {
        let cfg = PlannerConfig {
            seed: k,
            ..Default::default()
        };
        let fixed = fixed_epsilon_config(&cfg, 1e-3);
        let s = State::on_terrain(&ctx, -5.0 + k as f64, -3.0, 0.3 * k as f64).unwrap();
        let a = plan_step(&s, &pc, None, &cfg, k).unwrap();
        let b = plan_step(&s, &pc, None, &fixed, k).unwrap();
        assert_eq!(a.best_index, b.best_index);
        assert_eq!(a.control, b.control);
        assert!(a.candidates.iter().all(|c| c.f2 == 0.0));
    }
}

fn small_batch() -> (meshnav::harness::Suite, TerrainContext, Vec<MethodSpec>, BatchOptions) {
    let (mut suite, ctx) = benchmark_suite(ScenarioClass::GentleSlope).unwrap();
    suite.scenarios.truncate(2);
    let methods = vec![MethodSpec::eps_adaptive("eps-adaptive", PlannerConfig::default())];
    let opts = BatchOptions {
        repeats: Some(1),
        ..Default::default()
    };
    (suite, ctx, methods, opts)
}

#[test]
fn csv_round_trip_reproduces_summary_and_resume_is_a_no_op() {
    let (suite, ctx, methods, opts) = small_batch();
    let norm = TradeoffNormalization::BatchMinMax;
    let tmp = tempfile::tempdir().unwrap();
    let dir = OutputDir::new(tmp.path());
    let first = run_batch_to_dir(&ctx, &suite.scenarios, &methods, None, &opts, &dir, norm).unwrap();
    for r in &first.runs {
        assert!(r.delta_l >= -1e-6, "{r:?}");
    }

    let back = read_output(&dir).unwrap();
    assert_eq!(back.runs.len(), first.runs.len());
    assert_eq!(
        summary_csv(&back.summarize(norm)).unwrap(),
        summary_csv(&first.summarize(norm)).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.summary()).unwrap(),
        summary_csv(&first.summarize(norm)).unwrap()
    );

    let runs_before = std::fs::read(dir.runs()).unwrap();
    let again = run_batch_to_dir(&ctx, &suite.scenarios, &methods, None, &opts, &dir, norm).unwrap();
    assert_eq!(again.runs, back.runs);
    assert_eq!(std::fs::read(dir.runs()).unwrap(), runs_before);
}

#[test]
fn interrupted_batch_resumes_to_the_same_rows() {
    let (suite, ctx, methods, opts) = small_batch();
    let norm = TradeoffNormalization::BatchMinMax;
    let full = tempfile::tempdir().unwrap();
    let full_dir = OutputDir::new(full.path());
    run_batch_to_dir(&ctx, &suite.scenarios, &methods, None, &opts, &full_dir, norm).unwrap();

    // Run only the first scenario, then the whole list into the same dir.
    let part = tempfile::tempdir().unwrap();
    let part_dir = OutputDir::new(part.path());
    run_batch_to_dir(&ctx, &suite.scenarios[..1], &methods, None, &opts, &part_dir, norm).unwrap();
    run_batch_to_dir(&ctx, &suite.scenarios, &methods, None, &opts, &part_dir, norm).unwrap();

    assert_eq!(
        std::fs::read(part_dir.runs()).unwrap(),
        std::fs::read(full_dir.runs()).unwrap()
    );
}
