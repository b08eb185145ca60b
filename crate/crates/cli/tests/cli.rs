use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn stone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stone"))
        .args(args)
        .output()
        .expect("run stone")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "seed": 3,
  "data": { "dir": "data", "k_hist": 8, "k_fut": 6, "split": [0.45, 0.10, 0.45] },
  "model": { "branch": "gru", "q": 8, "depth": 1, "heads": 2, "trunk_hidden": 16, "trunk_layers": 1, "p": 1 },
  "train": { "max_epochs": 3, "batch_size": 16 }
}"#;

/// Synthesizes a dataset into `dir/data` and writes `dir/run.json`.
fn small_workspace(dir: &Path, config: &str) -> PathBuf {
    let data = dir.join("data");
    let out = stone(&[
        "synth", "--seed", "5", "--sensors", "3", "--grid", "4x6", "--days", "200", "--out", s(&data),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cfg = dir.join("run.json");
    fs::write(&cfg, config).unwrap();
    cfg
}

#[test]
fn synth_writes_three_reproducible_files() {
    let tmp = TempDir::new().unwrap();
    let args = |d: &Path| {
        let out = stone(&[
            "synth", "--seed", "7", "--sensors", "4", "--grid", "8x16", "--days", "400", "--out", s(d),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    args(&a);
    args(&b);
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["fields.stnf", "manifest.json", "sensors.csv"]);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    let pack = fs::read(a.join("fields.stnf")).unwrap();
    assert_eq!(u32::from_le_bytes(pack[8..12].try_into().unwrap()), 128);
    assert_eq!(u32::from_le_bytes(pack[12..16].try_into().unwrap()), 400);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["driver"].as_array().unwrap().len(), 400);
}

#[test]
fn synth_rejects_bad_grid_as_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = stone(&["synth", "--grid", "8by16", "--out", s(tmp.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_error_exits_two() {
    assert_eq!(code(&stone(&["train"])), 2);
    assert_eq!(code(&stone(&["nonsense"])), 2);
}

#[test]
fn unknown_config_key_reports_field_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_workspace(tmp.path(), &SMALL.replace("\"max_epochs\"", "\"max_epoch\""));
    let out = stone(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train"), "{}", stderr(&out));
    assert!(stderr(&out).contains("max_epoch"), "{}", stderr(&out));
}

#[test]
fn wrong_type_reports_field_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_workspace(tmp.path(), &SMALL.replace("\"batch_size\": 16", "\"batch_size\": \"many\""));
    let out = stone(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train.batch_size"), "{}", stderr(&out));
}

#[test]
fn missing_dataset_is_data_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, SMALL).unwrap();
    let out = stone(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn leakage_emptied_split_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_workspace(tmp.path(), &SMALL.replace("[0.45, 0.10, 0.45]", "[0.45, 0.02, 0.53]"));
    let out = stone(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("data.split"), "{}", stderr(&out));
}

#[test]
fn divergence_exits_four_after_writing_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_workspace(
        tmp.path(),
        &SMALL.replace("\"max_epochs\": 3", "\"max_epochs\": 20, \"lr0\": 1e150"),
    );
    let o = tmp.path().join("o");
    let out = stone(&["train", "--config", s(&cfg), "--out", s(&o)]);
    assert_eq!(code(&out), 4, "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("diverged"));
    assert!(o.join("gru.stnc").exists());
}

#[test]
fn train_eval_forecast_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_workspace(tmp.path(), SMALL);
    let run = tmp.path().join("run");
    let out = stone(&["train", "--config", s(&cfg), "--branch", "all", "--out", s(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for kind in ["fcn", "gru", "lstm", "transformer"] {
        assert!(run.join(format!("{kind}.stnc")).exists());
        let log = fs::read_to_string(run.join(format!("{kind}_log.csv"))).unwrap();
        assert_eq!(log.lines().count(), 4, "{log}");
        assert!(stdout(&out).contains(&format!("{kind}: ")));
    }
    assert!(stdout(&out).contains("val rel_l2"));

    let ckpts: Vec<String> = ["fcn", "gru", "lstm", "transformer"]
        .iter()
        .map(|k| s(&run.join(format!("{k}.stnc"))).to_string())
        .collect();
    let ev = tmp.path().join("ev");
    let mut args = vec!["eval"];
    for c in &ckpts {
        args.extend(["--checkpoint", c.as_str()]);
    }
    args.extend(["--config", s(&cfg), "--out", s(&ev), "--region", "-90:0,-180:180"]);
    let out = stone(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(ev.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4 * 6);
    let heatmap = fs::read_to_string(ev.join("heatmap.csv")).unwrap();
    assert_eq!(heatmap.lines().next().unwrap(), "model,lead_1,lead_2,lead_3,lead_4,lead_5,lead_6");
    let comparison = fs::read_to_string(ev.join("comparison.csv")).unwrap();
    let leads: Vec<&str> = comparison.lines().skip(1).step_by(4).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(leads, ["1", "2", "3", "4", "5", "6"]);
    assert!(ev.join("region.csv").exists());

    // targets scored against themselves
    let sc = tmp.path().join("sc");
    let out = stone(&["eval", "--checkpoint", &ckpts[1], "--data", s(&tmp.path().join("data")), "--out", s(&sc), "--self-check"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(sc.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 6);
    for line in report.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(cols[2..6].iter().all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }

    // forecast from the first 8 days
    let sensors = fs::read_to_string(tmp.path().join("data/sensors.csv")).unwrap();
    let window: String = sensors.lines().take(9).map(|l| format!("{l}\n")).collect();
    let win = tmp.path().join("win.csv");
    fs::write(&win, window).unwrap();
    let f1 = tmp.path().join("f1");
    let f2 = tmp.path().join("f2");
    for f in [&f1, &f2] {
        let out = stone(&["forecast", "--checkpoint", &ckpts[1], "--sensors", s(&win), "--grid", "4x6", "--out", s(f)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).contains(" ms"));
    }
    let pack = fs::read(f1.join("forecast.stnf")).unwrap();
    assert_eq!(pack, fs::read(f2.join("forecast.stnf")).unwrap());
    assert_eq!(u32::from_le_bytes(pack[8..12].try_into().unwrap()), 24);
    assert_eq!(u32::from_le_bytes(pack[12..16].try_into().unwrap()), 6);
    let csv = fs::read_to_string(f1.join("forecast.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "lat,lon,lead,value");
    assert_eq!(csv.lines().count(), 1 + 24 * 6);

    // explicit coordinates, including an off-grid point
    let coords = tmp.path().join("coords.csv");
    fs::write(&coords, "lat,lon\n10.5,20.25\n-45,100\n").unwrap();
    let f3 = tmp.path().join("f3");
    let out = stone(&["forecast", "--checkpoint", &ckpts[1], "--sensors", s(&win), "--coords", s(&coords), "--out", s(&f3)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(f3.join("forecast.csv")).unwrap().lines().count(), 1 + 2 * 6);

    fs::write(&coords, "lat,lon\n95,0\n").unwrap();
    let out = stone(&["forecast", "--checkpoint", &ckpts[1], "--sensors", s(&win), "--coords", s(&coords), "--out", s(&f3)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    let short: String = sensors.lines().take(6).map(|l| format!("{l}\n")).collect();
    fs::write(&win, short).unwrap();
    let out = stone(&["forecast", "--checkpoint", &ckpts[1], "--sensors", s(&win), "--grid", "4x6", "--out", s(&f3)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("exactly 8"), "{}", stderr(&out));

    // a dataset with a different sensor count
    let other = tmp.path().join("other");
    let out = stone(&["synth", "--sensors", "5", "--grid", "4x6", "--days", "200", "--out", s(&other)]);
    assert_eq!(code(&out), 0);
    let out = stone(&["eval", "--checkpoint", &ckpts[1], "--data", s(&other), "--out", s(&sc)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("3 sensors") && stderr(&out).contains("has 5"), "{}", stderr(&out));
}

#[test]
fn gradcheck_lists_every_row_and_passes() {
    let out = stone(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 17);
    assert!(rows.iter().all(|r| r.ends_with("PASS")));
    for kind in ["fcn", "gru", "lstm", "transformer"] {
        assert!(rows.iter().any(|r| r.starts_with("end_to_end") && r.contains(kind)));
    }
}

#[test]
fn gradcheck_with_impossible_tolerance_exits_four() {
    let out = stone(&["gradcheck", "--tol", "0"]);
    assert_eq!(code(&out), 4);
    assert!(stdout(&out).contains("FAIL"));
}
