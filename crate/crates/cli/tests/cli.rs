use std::path::Path;
use std::process::{Command, Output};

use rarespot_core::grid::{write_rawf32, RasterScene};

fn rarespot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rarespot"))
        .current_dir(dir)
        .env("RUST_BACKTRACE", "0")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = rarespot(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// A 16x16 px, 3-band scene with 8 px patches: a 2x2 grid.
fn tiny_scene(dir: &Path) {
    let (w, h, bands) = (16, 16, 3);
    let data: Vec<f32> = (0..w * h * bands).map(|i| ((i * 37) % 251) as f32).collect();
    let scene = RasterScene::new(w, h, bands, 0.5, data).unwrap();
    write_rawf32(&scene, &dir.join("tiny.f32")).unwrap();
    std::fs::write(
        dir.join("tiny.scene.json"),
        r#"{"scene_path": "tiny.f32", "format": "rawf32", "patch_size_px": 8}"#,
    )
    .unwrap();
}

#[test]
fn colorstats_on_two_by_two_grid() {
    let dir = tempfile::tempdir().unwrap();
    tiny_scene(dir.path());
    ok(dir.path(), &["--out", "f", "featurize", "--manifest", "tiny.scene.json"]);
    let text = String::from_utf8(read(dir.path(), "f/features_colorstats.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    for line in &lines {
        assert_eq!(line.split(',').count(), 2 + 4 * 3, "{line}");
    }
}

#[test]
fn rcf_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    tiny_scene(dir.path());
    let args = |out: &'static str| ["--seed", "3", "--out", out, "featurize", "--manifest", "tiny.scene.json", "--method", "rcf"];
    ok(dir.path(), &args("a"));
    ok(dir.path(), &args("b"));
    assert_eq!(read(dir.path(), "a/features_rcf.csv"), read(dir.path(), "b/features_rcf.csv"));
    ok(dir.path(), &["--seed", "4", "--out", "c", "featurize", "--manifest", "tiny.scene.json", "--method", "rcf"]);
    assert_ne!(read(dir.path(), "a/features_rcf.csv"), read(dir.path(), "c/features_rcf.csv"));
}

#[test]
fn missing_manifest_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = rarespot(dir.path(), &["featurize", "--manifest", "absent.scene.json"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent.scene.json"), "{stderr}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[experiment]\ntrials = 2\nbogus = 1\n").unwrap();
    let out = rarespot(dir.path(), &["--config", "run.toml", "experiment"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

const SMALL_EXPERIMENT: &str = r#"
[experiment]
budgets = [20, 60, 150]
trials = 3

[experiment.scene]
rows = 40
cols = 40
positive_fraction = 0.03

[experiment.clustering]
k = 6
"#;

#[test]
fn experiment_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL_EXPERIMENT).unwrap();
    ok(dir.path(), &["--config", "run.toml", "--seed", "11", "--out", "a", "experiment"]);
    ok(dir.path(), &["--config", "run.toml", "--seed", "11", "--out", "b", "experiment"]);
    for f in [
        "report.csv",
        "report.json",
        "trials.csv",
        "plot_npos_vs_budget.csv",
        "clusters.csv",
        "logs/cluster_online_trial2.csv",
        "run_config.json",
    ] {
        assert_eq!(read(dir.path(), &format!("a/{f}")), read(dir.path(), &format!("b/{f}")), "{f}");
    }
    // The echoed configuration alone reproduces the run.
    ok(dir.path(), &["--config", "a/run_config.json", "--out", "c", "experiment"]);
    assert_eq!(read(dir.path(), "a/report.json"), read(dir.path(), "c/report.json"));
}

#[test]
fn default_experiment_reports_every_strategy_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--out", "e", "experiment", "--trials", "2"]);
    let text = String::from_utf8(read(dir.path(), "e/report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for strategy in ["uniform_offline", "cluster_offline", "proximity", "cluster_online"] {
        for budget in ["300", "950", "3000"] {
            assert!(
                rows.iter().any(|r| r[0] == strategy && r[1] == budget),
                "missing {strategy}@{budget}"
            );
        }
    }
    assert_eq!(rows.len(), 12);
    let plot = String::from_utf8(read(dir.path(), "e/plot_npos_vs_budget.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 4 * 3000);
}

#[test]
fn single_trial_has_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL_EXPERIMENT).unwrap();
    ok(dir.path(), &["--config", "run.toml", "--out", "e", "experiment", "--trials", "1"]);
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path(), "e/report.json")).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    for r in rows {
        assert_eq!(r["n_pos_std"], 0.0, "{r}");
        assert_eq!(r["trials"], 1);
    }
}

#[test]
fn synth_render_feeds_the_scene_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--out", "s", "synth", "--rows", "12", "--cols", "10", "--render"]);
    ok(dir.path(), &["--out", "g", "gridify", "--manifest", "s/synthetic.scene.json"]);
    let grid: serde_json::Value = serde_json::from_slice(&read(dir.path(), "g/grid.json")).unwrap();
    assert_eq!((grid["rows"].as_u64(), grid["cols"].as_u64()), (Some(12), Some(10)));
    ok(dir.path(), &["--out", "f", "featurize", "--manifest", "s/synthetic.scene.json"]);
    ok(dir.path(), &["--out", "c", "cluster", "--features", "f/features_colorstats.csv", "--k", "3"]);
    let clusters = String::from_utf8(read(dir.path(), "c/clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 1 + 120);
    ok(dir.path(), &["--out", "t", "tune", "--features", "colorstats=f/features_colorstats.csv", "--trials", "4"]);
    let trials = String::from_utf8(read(dir.path(), "t/tune_trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 4);
}

#[test]
fn sweep_and_rce_demo_write_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[sweep]\nm = 10\nseeds = 3\n[sweep.scene]\nrows = 30\ncols = 30\npositive_fraction = 0.05\n[sweep.search]\ntrials = 5\nalgorithms = [\"kmeans\"]\n",
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.toml", "--out", "w", "sweep"]);
    let summary: serde_json::Value = serde_json::from_slice(&read(dir.path(), "w/sweep_summary.json")).unwrap();
    assert_eq!(summary["trials"], 5);
    let plot = String::from_utf8(read(dir.path(), "w/plot_silhouette_vs_cost.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + summary["non_degenerate"].as_u64().unwrap() as usize);

    ok(dir.path(), &["--out", "r", "rce-demo", "--pixels", "20"]);
    let demo: serde_json::Value = serde_json::from_slice(&read(dir.path(), "r/rce_demo.json")).unwrap();
    assert!(demo["max_gradient_error"].as_f64().unwrap() < 1e-6);
    let curve = String::from_utf8(read(dir.path(), "r/rce_rho_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 21);
}

#[test]
fn serve_rejects_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = rarespot(dir.path(), &["--seed", "1", "serve", "--port", "0"]);
    assert!(!out.status.success());
}
