use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn obf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obf"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SPEC: &str = "start_date = \"2016-01-01\"\nend_date = \"2016-02-29\"\nseed = 9\n";

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.toml");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let data = dir.join("data");
    let out = obf(&["generate", "--spec", path(&spec), "--out", path(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path());
    let b = dir.path().join("again");
    let spec = dir.path().join("spec.toml");
    assert_eq!(obf(&["generate", "--spec", path(&spec), "--out", path(&b)]).status.code(), Some(0));
    for f in ["books.csv", "fundamentals.csv", "calendars.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("other_seed");
    obf(&["generate", "--spec", path(&spec), "--seed", "10", "--out", path(&c)]);
    assert_ne!(fs::read(a.join("books.csv")).unwrap(), fs::read(c.join("books.csv")).unwrap());
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let scheme = dir.path().join("scheme.txt");
    let out = obf(&["partition", "--data", path(&data), "--vstar", "3000", "--out", path(&scheme)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&scheme).unwrap().contains("v_star=3000"));

    let features = dir.path().join("features.csv");
    let out = obf(&["features", "--data", path(&data), "--scheme", path(&scheme), "--out", path(&features)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(&features).unwrap().starts_with("# feature_set="));

    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        r#"{"folds": 3, "groups": [
            {"name": "ols", "candidates": [{"family": "ols"}]},
            {"name": "rf", "candidates": [
                {"family": "random_forest", "n_trees": 10, "feature_fraction": 0.5, "min_node_fraction": 0.05}]}
        ]}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = obf(&["train", "--features", path(&features), "--grid", path(&grid), "--out", path(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("models/ols.json").exists() && run.join("models/rf.json").exists());
    let cv = fs::read_to_string(run.join("cv_table.csv")).unwrap();
    assert!(cv.starts_with("group,config_id,family,label,fold_1_rmse,fold_2_rmse,fold_3_rmse,mean_rmse,status"));

    let out = obf(&[
        "evaluate",
        "--features",
        path(&features),
        "--models",
        path(&run.join("models")),
        "--data",
        path(&data),
        "--out",
        path(&run),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cmp = fs::read_to_string(run.join("comparison.csv")).unwrap();
    assert!(cmp.starts_with("model,split,rmse,mae,mdape"));
    assert_eq!(cmp.lines().count(), 1 + 3 * 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_spec = dir.path().join("bad.toml");
    fs::write(&bad_spec, "no_such_field = 1\n").unwrap();
    let out_dir = dir.path().join("never");
    let out = obf(&["generate", "--spec", path(&bad_spec), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());

    assert_eq!(obf(&["frobnicate"]).status.code(), Some(2));

    let data = small_dataset(dir.path());
    let scheme = dir.path().join("s.txt");
    let out = obf(&["partition", "--data", path(&data), "--vstar", "-5", "--out", path(&scheme)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!scheme.exists());

    let broken = dir.path().join("broken");
    fs::create_dir(&broken).unwrap();
    for f in ["fundamentals.csv", "calendars.csv"] {
        fs::copy(data.join(f), broken.join(f)).unwrap();
    }
    let mut books = fs::read_to_string(data.join("books.csv")).unwrap();
    books.push_str("2016-01-05,7,S,12.34,10\n");
    let bad_line = books.lines().count();
    fs::write(broken.join("books.csv"), books).unwrap();
    let out = obf(&["partition", "--data", path(&broken), "--out", path(&scheme)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("books.csv:{bad_line}:")), "{stderr}");
}

#[test]
fn failed_final_model_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let scheme = dir.path().join("scheme.txt");
    obf(&["partition", "--data", path(&data), "--out", path(&scheme)]);
    let features = dir.path().join("features.csv");
    obf(&["features", "--data", path(&data), "--scheme", path(&scheme), "--out", path(&features)]);
    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        r#"{"folds": 2, "groups": [{"name": "unstable", "candidates": [
            {"family": "mlp", "layer_sizes": [8], "activation": "relu", "optimizer": "sgd",
             "epochs": 5, "batch_size": 16, "learning_rate": 1e9}]}]}"#,
    )
    .unwrap();
    let out = obf(&["train", "--features", path(&features), "--grid", path(&grid), "--out", path(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1));
}
