use std::fs;

use aif_core::bayesnet::{model_to_json, Dag, GenerativeModel, VariableDef};
use aif_core::domain::{Configuration, MetricSample};
use aif_core::harness::*;
use aif_core::Error;

fn sim(service: &str, device: &str, seed: u64, cycles: usize) -> ExperimentConfig {
    ExperimentConfig::new(service, device, seed, cycles)
}

#[test]
fn single_cycle_is_just_the_cold_start() {
    let r = run_experiment(&sim("CV", "NX+", 0, 1)).unwrap();
    assert_eq!(r.trajectory.len(), 1);
    assert!(!r.converged && r.converged_at.is_none());
    assert!(r.matrix.is_total());
    assert!(r.model.dag().edge_names().is_empty());
}

#[test]
fn zero_cycles_is_rejected() {
    assert!(matches!(
        run_experiment(&sim("CV", "NX+", 0, 0)),
        Err(Error::InvalidExperiment(_))
    ));
}

#[test]
fn calibrated_cv_nx_plus_settles_in_time() {
    let r = run_experiment(&sim("CV", "NX+", 0, 40)).unwrap();
    assert!(r.converged);
    assert!(r.converged_at.unwrap() <= 35, "{:?}", r.converged_at);
    assert_eq!(r.converged_at.is_some(), r.converged);
    assert_eq!(r.trajectory.len(), 40);
    assert_eq!(r.chosen, r.trajectory.last().unwrap().chosen);
}

#[test]
fn convergence_needs_five_in_a_row() {
    let r = run_experiment(&sim("QR", "AGX+", 1, 12)).unwrap();
    let mut h = r.trajectory.clone();
    let c = h[0].chosen.clone();
    for d in h.iter_mut() {
        d.chosen = c.clone();
    }
    assert_eq!(convergence(&h), Some(0));
    let other = h[1].chosen.clone();
    let n = h.len();
    h[n - 5].chosen = Configuration::new([("pixel", "x"), ("fps", "y")]);
    assert_eq!(convergence(&h[..n]), None);
    h[n - 6] = h[n - 5].clone();
    h[n - 5].chosen = other;
    assert_eq!(convergence(&h), Some(h[n - 5].cycle));
    assert_eq!(convergence(&[]), None);
}

#[test]
fn runs_write_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = sim("LI", "AGX-", 4, 15);
    cfg.out = Some(a.path().to_path_buf());
    let ra = run_experiment(&cfg).unwrap();
    cfg.out = Some(b.path().to_path_buf());
    let rb = run_experiment(&cfg).unwrap();
    assert_eq!(ra.files.len(), rb.files.len());
    for (fa, fb) in ra.files.iter().zip(&rb.files) {
        assert!(fa.exists(), "{}", fa.display());
        assert_eq!(fa.file_name(), fb.file_name());
        assert_eq!(fs::read(fa).unwrap(), fs::read(fb).unwrap(), "{}", fa.display());
    }
    for name in ["trajectory.csv", "model.json", "dag.dot", "pv_heatmap.csv", "ig_heatmap.csv", "metrics.csv"] {
        assert!(a.path().join(name).exists(), "{name}");
    }
    let traj = fs::read_to_string(a.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 16);
    assert!(traj.starts_with("cycle,mode,fps,pv,ig,score,fulfillment_overall,"));
}

#[test]
fn missing_profiles_and_bad_outputs_are_reported() {
    assert!(matches!(run_experiment(&sim("XX", "NX+", 0, 3)), Err(Error::ProfileNotFound(_))));
    assert!(matches!(run_experiment(&sim("CV", "TX2", 0, 3)), Err(Error::ProfileNotFound(_))));

    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let mut cfg = sim("CV", "NX+", 0, 3);
    cfg.out = Some(blocker.join("sub"));
    match run_experiment(&cfg) {
        Err(Error::UnwritableOutput { path, .. }) => assert_eq!(path, blocker.join("sub")),
        other => panic!("{other:?}"),
    }

    let mut cfg = sim("CV", "NX+", 0, 3);
    cfg.data_dir = Some(dir.path().to_path_buf());
    match run_experiment(&cfg) {
        Err(Error::ProfileNotFound(p)) => assert!(p.contains("cv.json"), "{p}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn custom_data_dir_matches_builtins() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let mut cfg = sim("QR", "NX-", 2, 6);
    let builtin = run_experiment(&cfg).unwrap();
    cfg.data_dir = Some(root);
    let loaded = run_experiment(&cfg).unwrap();
    assert_eq!(builtin.trajectory, loaded.trajectory);
}

#[test]
fn config_json_defaults() {
    let c = ExperimentConfig::from_json(r#"{"service": "CV", "device": "AGX+"}"#, "inline").unwrap();
    assert_eq!((c.cycles, c.seed, c.mode.clone()), (40, 0, Mode::Simulate));
    let c = ExperimentConfig::from_json(
        r#"{"service": "CV", "device": "AGX+", "mode": {"replay": {"trace": "t.csv"}}, "hyper": {"w_pv": 4}}"#,
        "inline",
    )
    .unwrap();
    assert_eq!(c.mode, Mode::Replay { trace: "t.csv".into() });
    assert_eq!(c.hyper.w_pv, 4.0);
    match ExperimentConfig::from_json("{\n  \"service\": 3\n}", "cfg.json") {
        Err(Error::Parse { context, message }) => {
            assert_eq!(context, "cfg.json");
            assert!(message.contains("line 2"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

fn sample(t: u64, fps: &str) -> MetricSample {
    MetricSample {
        timestamp_ms: t,
        values: [("time".to_string(), 1.0)].into(),
        config: Configuration::new([("fps", fps)]),
    }
}

#[test]
fn trace_windows_drop_partial_tail() {
    let p = std::path::Path::new("trace.csv");
    let mut s: Vec<MetricSample> = (0..10).map(|i| sample(1000 + i * 200, "5")).collect();
    s.extend((0..10).map(|i| sample(3000 + i * 200, "10")));
    s.extend((0..3).map(|i| sample(5000 + i * 200, "10")));
    let w = window_trace(&s, 2000, p).unwrap();
    assert_eq!(w.len(), 2);
    assert_eq!(w[0].len(), 10);
    assert_eq!(w[1].config(), Some(&Configuration::new([("fps", "10")])));

    // A gap leaves an empty window, which is skipped.
    let mut g: Vec<MetricSample> = (0..10).map(|i| sample(i * 200, "5")).collect();
    g.extend((0..10).map(|i| sample(6000 + i * 200, "5")));
    assert_eq!(window_trace(&g, 2000, p).unwrap().len(), 2);

    let mut mixed: Vec<MetricSample> = (0..10).map(|i| sample(i * 200, "5")).collect();
    mixed[4] = sample(800, "10");
    assert!(matches!(window_trace(&mixed, 2000, p), Err(Error::ReplaySchemaMismatch { .. })));

    let back = vec![sample(0, "5"), sample(4000, "5"), sample(100, "5")];
    assert!(window_trace(&back, 2000, p).is_err());
    assert!(window_trace(&[], 2000, p).unwrap().is_empty());
}

#[test]
fn replay_learns_from_a_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = sim("CV", "AGX+", 5, 12);
    rec.out = Some(dir.path().join("rec"));
    let recorded = run_experiment(&rec).unwrap();
    let trace = dir.path().join("rec").join("metrics.csv");

    let mut rep = sim("CV", "AGX+", 5, 40);
    rep.mode = Mode::Replay { trace: trace.clone() };
    let replayed = run_experiment(&rep).unwrap();
    // Eleven recorded windows plus the cold start.
    assert_eq!(replayed.trajectory.len(), 12);
    assert!(replayed.optimum.is_none() && replayed.optimal_match().is_none());
    assert_eq!(replayed.model.trained_on(), recorded.model.trained_on());
    // The agent perceives exactly what it saw live, so it reaches the same model.
    assert_eq!(replayed.model, recorded.model);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "timestamp_ms,pixel,fps,time\n0,480,5,10.0\n").unwrap();
    rep.mode = Mode::Replay { trace: bad.clone() };
    match run_experiment(&rep) {
        Err(Error::ReplaySchemaMismatch { path, detail }) => {
            assert_eq!(path, bad);
            assert!(detail.contains("energy"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
    fs::write(&bad, "timestamp_ms,fps,pixel,time\n0,5,480,10.0\n").unwrap();
    assert!(matches!(run_experiment(&rep), Err(Error::ReplaySchemaMismatch { .. })));
}

#[test]
fn suite_of_one_matches_the_experiment() {
    let cfg = sim("QR", "AGX-", 3, 20);
    let alone = run_experiment(&cfg).unwrap();
    let report = run_suite(std::slice::from_ref(&cfg), 1, None).unwrap();
    assert_eq!(report.rows, vec![SummaryRow::from_result(&alone)]);
}

#[test]
fn suite_is_schedule_independent_and_keeps_failures() {
    let mut configs: Vec<ExperimentConfig> = ["AGX+", "NX-", "TX2"]
        .iter()
        .flat_map(|d| [sim("LI", d, 1, 12), sim("CV", d, 2, 12)])
        .collect();
    configs.push(sim("QR", "NX+", 0, 0));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_suite(&configs, 1, Some(a.path())).unwrap();
    let rb = run_suite(&configs, 4, Some(b.path())).unwrap();
    assert_eq!(ra.rows.len(), configs.len());
    assert_eq!(ra.rows, rb.rows);
    assert_eq!(ra.failures().count(), 3);
    let sa = fs::read_to_string(a.path().join("summary.csv")).unwrap();
    assert_eq!(sa, fs::read_to_string(b.path().join("summary.csv")).unwrap());
    assert_eq!(sa.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    assert_eq!(sa.lines().count(), configs.len() + 1);
    assert!(a.path().join("errors.csv").exists());
    let run = a.path().join("LI_AGX+_s1").join("trajectory.csv");
    assert_eq!(fs::read(&run).unwrap(), fs::read(b.path().join("LI_AGX+_s1/trajectory.csv")).unwrap());
    assert!(run_suite(&[], 1, None).is_err());
    assert!(run_suite(&configs, 0, None).is_err());
}

#[test]
fn suite_config_expands_grid() {
    let s = SuiteConfig::calibrated(&[0, 1], 30);
    let all = s.expand();
    assert_eq!(all.len(), 24);
    assert_eq!((all[0].service.as_str(), all[0].device.as_str(), all[0].seed), ("CV", "AGX+", 0));
    assert!(all.iter().all(|c| c.cycles == 30));
    let parsed = SuiteConfig::from_json(
        r#"{"experiments": [{"service": "LI", "device": "NX+"}], "grid": {"services": ["QR"], "devices": ["AGX-"], "seeds": [4, 5]}}"#,
        "suite.json",
    )
    .unwrap();
    let e = parsed.expand();
    assert_eq!(e.len(), 3);
    assert_eq!(e[2].seed, 5);
}

fn cv_vars() -> Vec<VariableDef> {
    vec![
        VariableDef::parameter("pixel", vec!["480".into(), "720".into()]),
        VariableDef::parameter("fps", vec!["5".into(), "10".into()]),
        VariableDef::slo("time"),
        VariableDef::slo("energy"),
    ]
}

#[test]
fn inspect_lists_learned_edges() {
    let dir = tempfile::tempdir().unwrap();
    let edges = [("pixel", "time"), ("fps", "time"), ("fps", "energy")];
    let dag = Dag::with_edges(cv_vars(), &edges).unwrap();
    let model = GenerativeModel::uninformed(dag, 1.0).unwrap();
    let path = dir.path().join("model.json");
    fs::write(&path, model_to_json(&model)).unwrap();
    let report = inspect_model(&path).unwrap();
    let mut got = report.edges.clone();
    got.sort();
    let mut want: Vec<(String, String)> = edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    want.sort();
    assert_eq!(got, want);
    assert!(report.text.contains("pixel=720, fps=10: 0.5000"), "{}", report.text);
    assert!(report.dot.contains("\"fps\" -> \"energy\""));

    let empty = GenerativeModel::uninformed(Dag::empty(cv_vars()).unwrap(), 1.0).unwrap();
    fs::write(&path, model_to_json(&empty)).unwrap();
    let report = inspect_model(&path).unwrap();
    assert!(report.edges.is_empty());
    assert!(report.text.contains("no dependencies learned"));
}

#[test]
fn inspect_round_trips_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sim("CV", "NX-", 1, 25);
    cfg.out = Some(dir.path().to_path_buf());
    let r = run_experiment(&cfg).unwrap();
    let report = inspect_model(&dir.path().join("model.json")).unwrap();
    assert_eq!(report.edges, r.model.dag().edge_names());
    assert_eq!(report.dot, fs::read_to_string(dir.path().join("dag.dot")).unwrap());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"variables\": [}").unwrap();
    assert!(matches!(inspect_model(&bad), Err(Error::Parse { .. })));
    assert!(matches!(inspect_model(&dir.path().join("none.json")), Err(Error::Io { .. })));
}
