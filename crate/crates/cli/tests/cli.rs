use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use tempfile::TempDir;

use slowfast::criterion::trace_equilibrium_set;
use slowfast::equilibrium::seed_grid;
use slowfast::integrate::{IntegrationStats, Trajectory, TrajectoryFlags};
use slowfast::studies::study;
use slowfast::ModelId;
use slowfast_cli::config::RunConfig;
use slowfast_cli::render::{render_bifurcation_svg, render_timeseries_svg};
use slowfast_cli::{run, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};

fn slowfast(args: &[&str], out: &Path) -> i32 {
    let mut argv = vec!["slowfast".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out".into());
    argv.push(out.display().to_string());
    run(argv)
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn assert_valid(schema: &str, doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(schema);
    let validator = jsonschema::validator_for(&read_json(path)).unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

fn markers(svg: &str, color: &str) -> usize {
    svg.matches(&format!("r=\"5\" fill=\"{color}\"")).count()
}

/// (x, y) pixel pairs of the first polyline.
fn polyline(svg: &str) -> Vec<(f64, f64)> {
    let start = svg.find("<polyline points=\"").unwrap() + "<polyline points=\"".len();
    let end = start + svg[start..].find('"').unwrap();
    svg[start..end]
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn criterion_foodweb_is_recurrence() {
    let dir = TempDir::new().unwrap();
    assert_eq!(slowfast(&["criterion", "--model", "foodweb"], dir.path()), EXIT_OK);
    let doc = read_json(dir.path().join("criterion.json"));
    assert_eq!(doc["verdict"], "recurrence");
    assert_eq!(doc["stop_kind"], "SuddenStop");
    assert_valid("criterion.schema.json", &doc);
}

#[test]
fn simulate_writes_csv() {
    let dir = TempDir::new().unwrap();
    let code = slowfast(&["simulate", "--model", "gause", "--set", "eps=0.05", "--tspan", "0:200"], dir.path());
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,y"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() > 100);
    assert_eq!(rows[0], vec![0.0, 5.0, 10.0]);
    assert_eq!(rows.last().unwrap()[0], 200.0);
    assert!(!dir.path().join("timeseries.svg").exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(slowfast(&["simulate", "--model", "nosuchmodel"], d), EXIT_CONFIG);
    assert_eq!(slowfast(&["simulate", "--model", "gause", "--set", "eps"], d), EXIT_CONFIG);
    assert_eq!(slowfast(&["simulate", "--model", "gause", "--set", "zeta=1"], d), EXIT_CONFIG);
    assert_eq!(slowfast(&["simulate", "--model", "gause", "--x0", "1,2,3"], d), EXIT_CONFIG);
    assert_eq!(slowfast(&["scan", "--model", "gause", "--param", "r"], d), EXIT_CONFIG);
    assert_eq!(slowfast(&["simulate", "--bogus"], d), EXIT_CONFIG);
    assert_eq!(run(["slowfast"]), EXIT_CONFIG);
    assert_eq!(run(["slowfast", "--help"]), EXIT_OK);
    assert_eq!(run(["slowfast", "list-models"]), EXIT_OK);
    // past the Hopf point the equilibrium attracts and there is no cycle
    assert_eq!(slowfast(&["cycle", "--model", "gause", "--set", "eps=0.3"], d), EXIT_NUMERIC);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"model": "gause", "params": {"eps": 0.05}, "tspan": [0, 50], "x0": [4, 9]}"#).unwrap();
    let code = slowfast(
        &["simulate", "--config", cfg.to_str().unwrap(), "--x0", "6,11"],
        dir.path(),
    );
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("0,6.0000000000000000e0,1.1000000000000000e1"));
    assert!(csv.lines().last().unwrap().starts_with("5.0000000000000000e1,"));

    fs::write(&cfg, r#"{"model": "gause", "step": 1}"#).unwrap();
    assert_eq!(slowfast(&["simulate", "--config", cfg.to_str().unwrap()], dir.path()), EXIT_CONFIG);
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("from-env");
    // the only test that leaves --out unset, so no other test reads this
    std::env::set_var(slowfast_cli::config::OUT_DIR_ENV, &out);
    let code = run(["slowfast", "simulate", "--model", "vanderpol", "--tspan", "0:5"]);
    std::env::remove_var(slowfast_cli::config::OUT_DIR_ENV);
    assert_eq!(code, EXIT_OK);
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn gause_diagram_has_one_hopf_and_one_stop() {
    let dir = TempDir::new().unwrap();
    assert_eq!(slowfast(&["plot", "--model", "gause"], dir.path()), EXIT_OK);
    let svg = fs::read_to_string(dir.path().join("bifurcation.svg")).unwrap();
    assert_eq!(markers(&svg, "red"), 1);
    assert_eq!(markers(&svg, "blue"), 1);
    assert!(svg.contains("stroke-dasharray"), "unstable stretch drawn dashed");
    assert!(svg.contains(">eps</text>") && svg.contains(">x</text>"));
}

#[test]
fn foodweb_diagram_shows_branch_point() {
    let dir = TempDir::new().unwrap();
    // the branch point lies at beta < -0.1, outside the default range
    assert_eq!(slowfast(&["plot", "--model", "foodweb", "--range", "-1:1"], dir.path()), EXIT_OK);
    let svg = fs::read_to_string(dir.path().join("bifurcation.svg")).unwrap();
    assert!(markers(&svg, "red") >= 1);
    assert_eq!(markers(&svg, "blue"), 1);
    assert_eq!(markers(&svg, "orange"), 1);
}

#[test]
fn branch_without_events_has_no_markers() {
    let s = study(ModelId::Gause);
    let set = trace_equilibrium_set(&s.params(), "eps", s.range, &seed_grid(s.seed_bounds, s.seed_counts)).unwrap();
    let branches: Vec<_> = set.into_iter().map(|(b, _)| b).collect();
    let svg = render_bifurcation_svg(&branches, &[], None, 0, ("eps", "x"));
    assert!(svg.contains("<polyline"));
    assert!(!svg.contains("<circle"));
}

#[test]
fn gause_timeseries_shows_spikes() {
    let dir = TempDir::new().unwrap();
    let code = slowfast(
        &["plot", "--kind", "timeseries", "--model", "gause", "--set", "eps=0.02", "--tspan", "0:1500"],
        dir.path(),
    );
    assert_eq!(code, EXIT_OK);
    let pts = polyline(&fs::read_to_string(dir.path().join("timeseries.svg")).unwrap());
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let mid = 0.5 * (lo + hi);
    // screen y grows downward, so an excursion upward crosses mid from above
    let spikes = pts.windows(2).filter(|w| w[0].1 > mid && w[1].1 <= mid).count();
    assert!(spikes >= 3, "{spikes} spikes");
}

#[test]
fn constant_signal_is_a_horizontal_line() {
    let traj = Trajectory {
        times: (0..50).map(f64::from).collect(),
        states: vec![vec![3.0, 1.0]; 50],
        flags: TrajectoryFlags::default(),
        stats: IntegrationStats::default(),
    };
    let pts = polyline(&render_timeseries_svg(&traj, 0, "x"));
    assert_eq!(pts.len(), 50);
    assert!(pts.iter().all(|p| p.1 == pts[0].1));
    assert!(pts[0].1.is_finite());
}

#[test]
fn json_outputs_match_schemas() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(slowfast(&["equilibria", "--model", "enso"], d), EXIT_OK);
    assert_valid("equilibria.schema.json", &read_json(d.join("equilibria.json")));
    assert_eq!(slowfast(&["branch", "--model", "hiv"], d), EXIT_OK);
    let events = read_json(d.join("events.json"));
    assert!(!events["events"].as_array().unwrap().is_empty());
    assert_valid("events.schema.json", &events);
    assert_eq!(slowfast(&["cycle", "--model", "fear", "--set", "eps=0.2"], d), EXIT_OK);
    let cycle = read_json(d.join("cycle.json"));
    assert!(cycle["period"].as_f64().unwrap() > 0.0);
    assert_valid("cycle.schema.json", &cycle);

    let cfg: RunConfig = RunConfig::from_json(
        r#"{"model": "foodweb", "bif_param": "beta", "range": [-0.1, 1.0], "grid": [0, 0.5, 1],
            "x0": [1, 1, 1], "integrator": {"rtol": 1e-8, "method": "implicit-stiff"}, "out_dir": "out"}"#,
    )
    .unwrap();
    assert_valid("run-config.schema.json", &serde_json::to_value(&cfg).unwrap());
}

#[test]
fn scan_and_branch_csv() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(slowfast(&["scan", "--model", "enso", "--grid", "0.02,0.1,0.4"], d), EXIT_OK);
    let scan = fs::read_to_string(d.join("scan.csv")).unwrap();
    assert_eq!(scan.lines().count(), 4);
    assert!(scan.starts_with("param,class,"));
    assert_eq!(slowfast(&["branch", "--model", "gause", "--plot"], d), EXIT_OK);
    let branch = fs::read_to_string(d.join("branch.csv")).unwrap();
    assert!(branch.starts_with("branch,param,x,y,stability,max_real\n"));
    assert!(d.join("bifurcation.svg").exists());
}
