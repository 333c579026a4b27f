use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SYNTH: &str = r#"
[[synth.groups]]
name = "a"
positives = 600
negatives = 900
positive_scores = { beta = { alpha = 5.0, beta = 2.0 } }
negative_scores = { beta = { alpha = 2.0, beta = 5.0 } }

[[synth.groups]]
name = "b"
positives = 400
negatives = 1100
positive_scores = { beta = { alpha = 3.0, beta = 2.0 } }
negative_scores = { beta = { alpha = 2.0, beta = 3.0 } }
"#;

fn rocfair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocfair")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a config with the given constraint block and draws its synthetic data.
fn setup(constraints: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scores.csv");
    let cfg = dir.path().join("run.toml");
    let text = format!(
        "seed = 4\n\n[data]\ninput = {:?}\n\n[output]\ndir = {:?}\nhull_csv = true\n{constraints}\n{SYNTH}",
        path_str(&csv),
        path_str(&dir.path().join("out")),
    );
    fs::write(&cfg, text).unwrap();
    let out = rocfair(&["synth", "--config", path_str(&cfg), "--output", path_str(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (dir, cfg)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const ALL_ONE: &str = r#"
[[constraints.active]]
metric = "dp"
delta = 1.0

[[constraints.active]]
metric = "eopp"
delta = 1.0

[[constraints.active]]
metric = "pp"
delta = 1.0
"#;

const FAIR: &str = r#"
[[constraints.active]]
metric = "dp"
delta = 0.05

[[constraints.active]]
metric = "pp"
delta = 0.05
"#;

#[test]
fn vacuous_tolerances_change_nothing() {
    let (dir, cfg) = setup(ALL_ONE);
    let out = rocfair(&["run", "--config", path_str(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("out/report.json"));
    assert_eq!(report["guard"]["alpha"], 1.0);
    assert_eq!(report["guard"]["triggered"], false);
    assert_eq!(report["test"]["sampled_intervention"], 0.0);
    assert_eq!(report["test"]["expected_intervention"], 0.0);
    assert!(dir.path().join("out/hulls.csv").exists());
}

#[test]
fn identical_runs_are_byte_identical() {
    let (dir, cfg) = setup(FAIR);
    for (sub, mech) in [("r1", "ad"), ("r2", "ad"), ("r3", "lf")] {
        let out_dir = dir.path().join(sub);
        let out = rocfair(&[
            "run",
            "--config",
            path_str(&cfg),
            "--seed",
            "21",
            "--mechanism",
            mech,
            "--out-dir",
            path_str(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["recipe.json", "report.json", "report.txt", "hulls.csv"] {
        assert_eq!(
            fs::read(dir.path().join("r1").join(f)).unwrap(),
            fs::read(dir.path().join("r2").join(f)).unwrap(),
            "{f}"
        );
    }
    let lf = json(&dir.path().join("r3/recipe.json"));
    assert_eq!(lf["mechanism"], "label_flipping");
}

#[test]
fn saved_recipe_reproduces_the_test_report() {
    let (dir, cfg) = setup(FAIR);
    let run_dir = dir.path().join("run");
    let eval_dir = dir.path().join("eval");
    assert!(rocfair(&["run", "--config", path_str(&cfg), "--out-dir", path_str(&run_dir)])
        .status
        .success());
    let out = rocfair(&[
        "eval-recipe",
        "--config",
        path_str(&cfg),
        "--recipe",
        path_str(&run_dir.join("recipe.json")),
        "--out-dir",
        path_str(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&run_dir.join("report.json"));
    assert_eq!(report["test"], json(&eval_dir.join("eval.json")));
}

#[test]
fn hull_oracle_and_multi_seed_outputs() {
    let (dir, cfg) = setup(FAIR);
    let out = dir.path().join("o");
    assert!(rocfair(&["hull", "-c", path_str(&cfg), "--out-dir", path_str(&out)]).status.success());
    let hulls = fs::read_to_string(out.join("hulls.csv")).unwrap();
    assert!(hulls.lines().count() > 3);

    assert!(rocfair(&["oracle", "-c", path_str(&cfg), "--out-dir", path_str(&out)]).status.success());
    let oracle = json(&out.join("oracle.json"));
    assert!(oracle["accuracy"].as_f64().unwrap() > 0.5);

    let multi = dir.path().join("multi");
    let res = rocfair(&["run", "-c", path_str(&cfg), "--seeds", "3", "--out-dir", path_str(&multi)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = json(&multi.join("summary.json"));
    assert_eq!(summary["seeds"], serde_json::json!([4, 5, 6]));
    assert!(multi.join("seed-6/report.json").exists());
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(rocfair(&["run", "--config", path_str(&missing)]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[region]\ntau_alpha = -1.0\n").unwrap();
    assert_eq!(rocfair(&["run", "--config", path_str(&bad)]).status.code(), Some(2));

    let nodata = dir.path().join("nodata.toml");
    fs::write(&nodata, format!("[data]\ninput = {:?}\n", path_str(&dir.path().join("none.csv")))).unwrap();
    let out = rocfair(&["run", "--config", path_str(&nodata)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.csv"));

    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "score,group,label\n0.5,a,1\n1.5,a,0\n").unwrap();
    let cfg = dir.path().join("badcsv.toml");
    fs::write(&cfg, format!("[data]\ninput = {:?}\n", path_str(&csv))).unwrap();
    let out = rocfair(&["run", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    assert_eq!(rocfair(&["run", "--mechanism", "xyz"]).status.code(), Some(2));
    assert_eq!(rocfair(&["synth"]).status.code(), Some(2));
}

#[test]
fn column_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("renamed.csv");
    let mut text = String::from("p,race,y\n");
    for i in 0..40 {
        let s = (i as f64 + 0.5) / 40.0;
        text.push_str(&format!("{s},{},{}\n", if i % 2 == 0 { "u" } else { "v" }, u8::from(i % 3 != 0)));
    }
    fs::write(&csv, text).unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, format!("[data]\ninput = {:?}\nsplit = {{ train = 0.2, post = 0.4, test = 0.4 }}\n", path_str(&csv))).unwrap();
    let base = ["hull", "-c", path_str(&cfg), "--out-dir", path_str(dir.path())];
    assert_eq!(rocfair(&base).status.code(), Some(2));
    let mut args = base.to_vec();
    args.extend(["--score-col", "p", "--group-col", "race", "--label-col", "y"]);
    let out = rocfair(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
