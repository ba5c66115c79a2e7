use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fleetmon_core::data::{ingest, Schema};
use fleetmon_core::metrics::calibration_levels;
use fleetmon_core::{EvaluationReport, ModelBundle};

fn fleetmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleetmon"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[track_caller]
fn ok(args: &[&str]) -> Output {
    let out = fleetmon(args);
    assert!(
        out.status.success(),
        "fleetmon {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_in(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn manifest_lines(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Simulates `units` units and ingests each into the expanded layout.
fn simulated(root: &Path, units: usize, rows: usize, extra: &[&str]) -> (PathBuf, PathBuf) {
    let sim = root.join("sim");
    let units_s = units.to_string();
    let rows_s = rows.to_string();
    let mut args = vec!["--out-dir", s(&sim), "--seed", "7", "simulate", "--units", &units_s, "--rows", &rows_s];
    args.extend_from_slice(extra);
    ok(&args);
    let ing = root.join("ingested");
    for u in 1..=units {
        let input = sim.join(format!("T{u:02}.csv"));
        ok(&["--out-dir", s(&ing), "ingest", "--input", s(&input), "--schema", s(&sim.join("schema.json"))]);
    }
    (sim, ing)
}

#[test]
fn simulate_writes_fleet_events_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["--out-dir", s(&out), "simulate", "--units", "1", "--rows", "100"]);
    for f in ["T01.csv", "events.csv", "truth.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let unit = fs::read_to_string(out.join("T01.csv")).unwrap();
    assert_eq!(unit.lines().count(), 101);
    let truth = fs::read_to_string(out.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 101);

    let m = manifest_lines(&out);
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["subcommand"], "simulate");
    let listed: Vec<&str> = m[0]["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in files_in(&out) {
        if f.file_name().unwrap() != "manifest.jsonl" {
            assert!(listed.contains(&s(&f)), "{} not in manifest", f.display());
        }
    }
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--out-dir", s(&out), "--seed", seed, "simulate", "--units", "2", "--rows", "500",
            "--fault", "T02:24:12", "--healthy-windows", "1", "--window-length", "72",
        ]);
        out
    };
    let (a, b, c) = (run("a", "5"), run("b", "5"), run("c", "6"));
    let strip = |d: &Path, f: &Path| f.strip_prefix(d).unwrap().to_path_buf();
    let fa: Vec<_> = files_in(&a).into_iter().filter(|f| !f.ends_with("manifest.jsonl")).collect();
    let fb: Vec<_> = files_in(&b).into_iter().filter(|f| !f.ends_with("manifest.jsonl")).collect();
    assert_eq!(fa.iter().map(|f| strip(&a, f)).collect::<Vec<_>>(), fb.iter().map(|f| strip(&b, f)).collect::<Vec<_>>());
    assert!(fa.len() >= 7, "{fa:?}");
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
    assert_ne!(fs::read(a.join("T01.csv")).unwrap(), fs::read(c.join("T01.csv")).unwrap());
}

#[test]
fn invalid_fault_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = fleetmon(&["--out-dir", s(&out), "simulate", "--rows", "100", "--fault", "T01:10:-5"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("ends before it starts"));
    assert!(!out.exists());

    let res = fleetmon(&["--out-dir", s(&out), "simulate", "--units", "1", "--fault", "T03:10:5"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ing) = simulated(dir.path(), 1, 400, &[]);
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, r#"{"seed": 4, "fit": {"max_epochs": 3, "arch": "a1"}}"#).unwrap();
    let out = dir.path().join("train");
    ok(&["--out-dir", s(&out), "--config", s(&cfg), "train", "--input", s(&ing.join("T01.csv")), "--epochs", "2"]);
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4, "header plus epochs 0..=2");
    let m = &manifest_lines(&out)[0];
    assert_eq!(m["config"]["fit"]["max_epochs"], 2);
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config_path"], s(&cfg));

    fs::write(&cfg, r#"{"fit": {"epochs": 3}}"#).unwrap();
    let res = fleetmon(&["--out-dir", s(&out), "--config", s(&cfg), "train", "--input", s(&ing.join("T01.csv"))]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(manifest_lines(&out).len(), 1, "failed runs leave the manifest alone");
}

#[test]
fn trained_bundle_loads_and_predicts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ing) = simulated(dir.path(), 1, 600, &[]);
    let out = dir.path().join("train");
    ok(&["--out-dir", s(&out), "train", "--input", s(&ing.join("T01.csv")), "--epochs", "5"]);
    let bundle = ModelBundle::from_json(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    let model = bundle.load().unwrap();
    assert_eq!(model.metadata.history.epochs_run(), 5);
    assert_eq!(model.arch.output_scale, 2050.0);
    let schema = Schema::identity(&model.normalization.input_names);
    let (test, _) = ingest(&out.join("test.csv"), "T01", &schema).unwrap();
    assert_eq!(test.len(), 120);
    let preds = model.predict_raw(&test).unwrap();
    assert!(preds.iter().all(|p| p.mean.is_finite() && p.stddev > 0.0));
}

#[test]
fn pretrain_then_finetune_improves_unit_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ing) = simulated(dir.path(), 3, 1500, &[]);
    let pre = dir.path().join("pre");
    let inputs: Vec<PathBuf> = (1..=3).map(|u| ing.join(format!("T{u:02}.csv"))).collect();
    ok(&[
        "--out-dir", s(&pre), "pretrain", "--input", s(&inputs[0]), "--input", s(&inputs[1]), "--input", s(&inputs[2]),
        "--epochs", "20",
    ]);
    assert!(pre.join("fleet_model.json").is_file());
    for u in 1..=3 {
        assert!(pre.join(format!("T{u:02}.test.csv")).is_file());
    }
    let ft = dir.path().join("ft");
    ok(&["--out-dir", s(&ft), "finetune", "--bundle", s(&pre.join("fleet_model.json")), "--input", s(&inputs[1])]);
    let model = ModelBundle::from_json(&fs::read_to_string(ft.join("model.json")).unwrap()).unwrap();
    assert_eq!(model.metadata.units, vec!["T02".to_string()]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(ft.join("finetune.json")).unwrap()).unwrap();
    let (before, after) = (summary["pretrained_val_loss"].as_f64().unwrap(), summary["finetuned_val_loss"].as_f64().unwrap());
    assert!(after <= before, "fine-tuned {after} > pre-trained {before}");

    let res = fleetmon(&[
        "--out-dir", s(&dir.path().join("bad")), "finetune", "--bundle", s(&pre.join("fleet_model.json")),
        "--input", s(&inputs[1]), "--arch", "a2",
    ]);
    assert_ne!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stderr).contains("arch mismatch"));
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn evaluate_reports_converged_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ing) = simulated(dir.path(), 1, 6000, &[]);
    let unit = ing.join("T01.csv");
    let tr = dir.path().join("train");
    ok(&["--out-dir", s(&tr), "train", "--input", s(&unit)]);
    let ev = dir.path().join("eval");
    ok(&["--out-dir", s(&ev), "evaluate", "--bundle", s(&tr.join("model.json")), "--input", s(&unit)]);
    let report: EvaluationReport = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.n, 6000);
    assert!(report.nrmse < 5.0, "nrmse {}", report.nrmse);
    let nominal: Vec<f64> = report.calibration_bins.iter().map(|b| b.nominal).collect();
    assert_eq!(nominal, calibration_levels(20).unwrap());
    let csv = fs::read_to_string(ev.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);

    let ev10 = dir.path().join("eval10");
    ok(&["--out-dir", s(&ev10), "evaluate", "--bundle", s(&tr.join("model.json")), "--input", s(&unit), "--bins", "10"]);
    let r10: EvaluationReport = serde_json::from_str(&fs::read_to_string(ev10.join("report.json")).unwrap()).unwrap();
    let nominal: Vec<f64> = r10.calibration_bins.iter().map(|b| b.nominal).collect();
    assert_eq!(nominal, calibration_levels(10).unwrap());

    ok(&["--out-dir", s(&ev), "evaluate", "--bundle", s(&tr.join("model.json")), "--input", s(&unit)]);
    assert_eq!(manifest_lines(&ev).len(), 2, "manifest is appended per run");
}

#[test]
fn evaluate_rejects_empty_and_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ing) = simulated(dir.path(), 1, 400, &[]);
    let unit = ing.join("T01.csv");
    let tr = dir.path().join("train");
    ok(&["--out-dir", s(&tr), "train", "--input", s(&unit), "--epochs", "2"]);
    let bundle = tr.join("model.json");

    let text = fs::read_to_string(&unit).unwrap();
    let header = text.lines().next().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, format!("{header}\n")).unwrap();
    let res = fleetmon(&["--out-dir", s(&dir.path().join("e1")), "evaluate", "--bundle", s(&bundle), "--input", s(&empty)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));

    let renamed = dir.path().join("renamed.csv");
    fs::write(&renamed, text.replacen("Avg. wind speed", "wind", 1)).unwrap();
    let res = fleetmon(&["--out-dir", s(&dir.path().join("e2")), "evaluate", "--bundle", s(&bundle), "--input", s(&renamed)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("evaluate"));
}

#[test]
fn monitor_alarms_on_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, ing) = simulated(dir.path(), 2, 4000, &["--fault", "T02:400:24:4"]);
    let flt = dir.path().join("filtered");
    ok(&["--out-dir", s(&flt), "filter", "--input", s(&ing.join("T01.csv")), "--events", s(&sim.join("events.csv"))]);
    let tr = dir.path().join("train");
    ok(&["--out-dir", s(&tr), "train", "--input", s(&flt.join("T01.csv"))]);

    let mon = dir.path().join("mon");
    ok(&[
        "--out-dir", s(&mon), "monitor", "--bundle", s(&tr.join("model.json")), "--input", s(&ing.join("T02.csv")),
        "--auto-ack",
    ]);
    let alarms: Vec<serde_json::Value> = fs::read_to_string(mon.join("alarms.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let fault = |a: &serde_json::Value| {
        let t = a["timestamp"].as_str().unwrap();
        ("2020-01-17T16:00:00Z".."2020-01-18T16:00:00Z").contains(&t)
    };
    let hit = alarms.iter().find(|a| fault(a)).expect("an alarm inside the degradation");
    assert_eq!(hit["side"], "low", "a derate drives power down");
    let trace = fs::read_to_string(mon.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "t,s_high,neg_s_low,upper,lower");
    assert!(trace.lines().count() > 4000 - 40);

    // Resuming from the saved state continues the step counter.
    let state: serde_json::Value = serde_json::from_str(&fs::read_to_string(mon.join("monitor_state.json")).unwrap()).unwrap();
    let steps = state["state"]["t"].as_u64().unwrap();
    let mon2 = dir.path().join("mon2");
    ok(&[
        "--out-dir", s(&mon2), "monitor", "--bundle", s(&tr.join("model.json")), "--input", s(&ing.join("T02.csv")),
        "--resume", s(&mon.join("monitor_state.json")),
    ]);
    let state2: serde_json::Value = serde_json::from_str(&fs::read_to_string(mon2.join("monitor_state.json")).unwrap()).unwrap();
    assert_eq!(state2["state"]["t"].as_u64().unwrap(), 2 * steps);
}

#[test]
fn sweep_table_has_one_row_per_interval() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, ing) = simulated(
        dir.path(),
        2,
        5000,
        &["--fault", "T01:500:24:3", "--fault", "T02:300:24:3", "--fault", "T02:700:24:3", "--healthy-windows", "3"],
    );
    let flt = dir.path().join("filtered");
    ok(&["--out-dir", s(&flt), "filter", "--input", s(&ing.join("T01.csv")), "--events", s(&sim.join("events.csv"))]);
    let tr = dir.path().join("train");
    ok(&["--out-dir", s(&tr), "train", "--input", s(&flt.join("T01.csv"))]);

    let sw = dir.path().join("sweep");
    ok(&[
        "--out-dir", s(&sw), "sweep", "--bundle", s(&tr.join("model.json")), "--windows", s(&sim.join("windows")),
        "--schema", s(&sim.join("schema.json")), "--grid", "5,10,15,20", "--traces",
    ]);
    let mut rdr = csv::Reader::from_path(sw.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let intervals: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(intervals, [5.0, 10.0, 15.0, 20.0]);
    let recall: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(recall.windows(2).all(|w| w[1] <= w[0]), "{recall:?}");
    let tp_fn: Vec<usize> = rows.iter().map(|r| r[3].parse::<usize>().unwrap() + r[5].parse::<usize>().unwrap()).collect();
    assert!(tp_fn.iter().all(|&n| n == 3), "three faulty windows: {tp_fn:?}");
    let windows = fs::read_to_string(sim.join("windows/index.csv")).unwrap().lines().count() - 1;
    assert_eq!(fs::read_dir(sw.join("traces")).unwrap().count(), windows);

    let res = fleetmon(&[
        "--out-dir", s(&sw), "sweep", "--bundle", s(&tr.join("model.json")), "--windows", s(&sim.join("windows")),
        "--schema", s(&sim.join("schema.json")), "--grid", "10,5",
    ]);
    assert_eq!(res.status.code(), Some(2));
}
