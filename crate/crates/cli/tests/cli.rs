use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_holdwise");

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Two links over three weeks with small, fast model settings.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({
            "samples": 200,
            "synth": { "n_links": 2, "weeks": 3 },
            "table": { "min_bin_count": 2, "day_class_fallback": true },
            "dqr": { "lstm_state_size": 10, "max_epochs": 2, "batch_size": 128 },
            "brnn": { "lstm_state_size": 10, "max_epochs": 2, "batch_size": 128 },
            "kalman": { "n_iter": 15 },
            "eval": { "max_windows": 60 },
            "journeys": { "n_pairs": 120, "n_samples": 200 }
        });
        fs::write(dir.path().join("cfg.json"), cfg.to_string()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .current_dir(self.dir.path())
            .env("HOLDWISE_ARTIFACTS", self.path("artifacts"))
            .env_remove("RUST_LOG")
            .arg("--config")
            .arg("cfg.json")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn prepared(&self) -> &Self {
        if !self.path("prep/meta.json").exists() {
            self.ok(&["synth", "--out", "syn"]);
            self.ok(&["prepare", "syn/observations.csv", "--split", "1,1,1", "--out", "prep"]);
        }
        self
    }

    fn trained(&self, model: &str) -> String {
        self.prepared();
        if !self.path(model).join("model.json").exists() {
            self.ok(&["train", model, "--data", "prep", "--out", model]);
        }
        model.to_string()
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn prepare_shapes_follow_window_arithmetic() {
    let ws = Workspace::new();
    ws.prepared();
    let meta = json(&ws.path("prep/meta.json"));
    let steps_per_week = 7 * 96;
    let (u, k, links) = (32, 3, 2);
    for split in ["train", "validation", "test"] {
        let range = meta["split_steps"][split].as_array().unwrap();
        let steps = (range[1].as_u64().unwrap() - range[0].as_u64().unwrap()) as usize;
        assert_eq!(steps, steps_per_week);
        let n = steps - u - k + 1;
        let x: Vec<usize> = serde_json::from_value(meta["arrays"][format!("{split}_x.f32")].clone()).unwrap();
        let y: Vec<usize> = serde_json::from_value(meta["arrays"][format!("{split}_y.f32")].clone()).unwrap();
        assert_eq!(x, vec![n, u, links]);
        assert_eq!(y, vec![n, k, links]);
        let bytes = fs::metadata(ws.path(&format!("prep/{split}_x.f32"))).unwrap().len() as usize;
        assert_eq!(bytes, 4 * n * u * links);
    }
    assert_eq!(meta["links"], serde_json::json!(["L00", "L01"]));
}

#[test]
fn prepare_prints_summary_and_is_a_noop_on_rerun() {
    let ws = Workspace::new();
    ws.ok(&["synth", "--out", "syn"]);
    let first = ws.ok(&["prepare", "syn/observations.csv", "--split", "1,1,1"]);
    assert!(first.contains("links 2"), "{first}");
    assert!(first.contains("638 x 32 x 2"), "{first}");
    let again = ws.ok(&["prepare", "syn/observations.csv", "--split", "1,1,1"]);
    assert!(again.starts_with("up to date"), "{again}");
    let forced = ws.ok(&["prepare", "syn/observations.csv", "--split", "1,1,1", "--force"]);
    assert!(forced.contains("wrote"), "{forced}");
    let text = fs::read_to_string(ws.path("syn/observations.csv")).unwrap();
    let trimmed: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    fs::write(ws.path("fewer.csv"), trimmed.join("\n") + "\n").unwrap();
    let other = ws.ok(&["prepare", "fewer.csv", "--split", "1,1,1"]);
    assert!(other.contains("wrote"), "{other}");
    let dirs = fs::read_dir(ws.path("artifacts/prepare")).unwrap().count();
    assert_eq!(dirs, 2);
}

#[test]
fn bad_input_exits_with_code_two() {
    let ws = Workspace::new();
    fs::write(ws.path("empty.csv"), "link_id,observed_at,travel_time_s\n").unwrap();
    let out = ws.run(&["prepare", "empty.csv", "--out", "p1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no observations"));

    fs::write(
        ws.path("broken.csv"),
        "link_id,observed_at,travel_time_s\na,2021-01-04T00:00:00Z,30\na,2021-01-04T00:20:00Z,-4\n",
    )
    .unwrap();
    let out = ws.run(&["prepare", "broken.csv", "--out", "p2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = ws.run(&["train", "dqr", "--data", "missing-dir", "--out", "t"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ws.run(&["--samples", "0", "synth"]);
    assert_eq!(out.status.code(), Some(2));

    let out = ws.run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_twice_with_the_same_seed_gives_identical_checkpoints() {
    let ws = Workspace::new();
    ws.prepared();
    ws.ok(&["--seed", "5", "train", "dqr", "--data", "prep", "--out", "a"]);
    ws.ok(&["--seed", "5", "train", "dqr", "--data", "prep", "--out", "b"]);
    for f in ["model.json", "params.bin", "training_log.csv"] {
        assert_eq!(fs::read(ws.path("a").join(f)).unwrap(), fs::read(ws.path("b").join(f)).unwrap(), "{f}");
    }
    ws.ok(&["--seed", "6", "train", "dqr", "--data", "prep", "--out", "c"]);
    assert_ne!(fs::read(ws.path("a/params.bin")).unwrap(), fs::read(ws.path("c/params.bin")).unwrap());
}

#[test]
fn kalman_training_trace_is_monotone() {
    let ws = Workspace::new();
    let dir = ws.trained("kalman");
    let rows = csv_rows(&ws.path(&dir).join("em_trace.csv"));
    assert!(rows.len() >= 2);
    let ll: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    for w in ll.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{} then {}", w[0], w[1]);
    }
    assert_eq!(json(&ws.path(&dir).join("model.json"))["kind"], "kalman");
}

#[test]
fn brnn_checkpoint_holds_mu_and_rho_per_weight() {
    let ws = Workspace::new();
    let dir = ws.trained("brnn");
    let m = json(&ws.path(&dir).join("model.json"));
    let layers = m["layers"].as_array().unwrap();
    let (h, l) = (10, 2);
    let shape_of = |name: &str| -> Vec<usize> {
        let e = layers.iter().find(|e| e["name"] == name).unwrap_or_else(|| panic!("{name} missing"));
        serde_json::from_value(e["shape"].clone()).unwrap()
    };
    assert_eq!(shape_of("encoder.w_ih.mu"), vec![l, 4 * h]);
    assert_eq!(shape_of("encoder.w_ih.rho"), vec![l, 4 * h]);
    assert_eq!(shape_of("encoder.w_hh.mu"), vec![h, 4 * h]);
    assert_eq!(shape_of("head.w.rho"), vec![h, l]);
    let total: usize = layers.iter().map(|e| e["len"].as_u64().unwrap() as usize).sum();
    let bytes = fs::metadata(ws.path(&dir).join("params.bin")).unwrap().len() as usize;
    assert_eq!(bytes, 8 * total);
    let mus = layers.iter().filter(|e| e["name"].as_str().unwrap().ends_with(".mu")).count();
    let rhos = layers.iter().filter(|e| e["name"].as_str().unwrap().ends_with(".rho")).count();
    assert_eq!(mus, rhos);
}

#[test]
fn evaluate_reports_every_interval_and_horizon_deterministically() {
    let ws = Workspace::new();
    let dqr = ws.trained("dqr");
    let kalman = ws.trained("kalman");
    let text = ws.ok(&["evaluate", "--model", &dqr, "--model", &kalman, "--data", "prep", "--out", "e1"]);
    assert!(text.contains("DQR results") && text.contains("KALMAN results"));
    let rows = csv_rows(&ws.path("e1/report.csv"));
    assert_eq!(rows.len(), 2 * 5 * 3);
    for model in ["dqr", "kalman"] {
        let mine: Vec<_> = rows.iter().filter(|r| r[0] == model).collect();
        assert_eq!(mine.len(), 15);
        assert!(mine.iter().all(|r| !r[3].is_empty() && !r[4].is_empty() && !r[5].is_empty()));
    }
    let report = fs::read_to_string(ws.path("e1/report.txt")).unwrap();
    assert_eq!(report.matches("RMSE route s").count(), 2);
    ws.ok(&["evaluate", "--model", &dqr, "--model", &kalman, "--data", "prep", "--out", "e2"]);
    assert_eq!(fs::read(ws.path("e1/report.csv")).unwrap(), fs::read(ws.path("e2/report.csv")).unwrap());
}

#[test]
fn evaluate_rejects_incompatible_link_counts() {
    let ws = Workspace::new();
    let dqr = ws.trained("dqr");
    fs::write(
        ws.path("cfg4.json"),
        serde_json::json!({ "synth": { "n_links": 3, "weeks": 3 } }).to_string(),
    )
    .unwrap();
    let out = Command::new(BIN)
        .current_dir(ws.dir.path())
        .args(["--config", "cfg4.json", "synth", "--out", "syn3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    ws.ok(&["prepare", "syn3/observations.csv", "--split", "1,1,1", "--out", "prep3"]);
    let out = ws.run(&["evaluate", "--model", &dqr, "--data", "prep3", "--out", "bad"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("links"));
}

#[test]
fn predict_fit_and_aggregate_write_their_tables() {
    let ws = Workspace::new();
    let dqr = ws.trained("dqr");
    ws.ok(&["predict", "--model", &dqr, "--data", "prep", "--window", "4", "--out", "pr"]);
    let rows = csv_rows(&ws.path("pr/predictions.csv"));
    assert_eq!(rows.len(), 3 * 2);
    for r in &rows {
        let (point, lo, hi): (f64, f64, f64) = (r[5].parse().unwrap(), r[7].parse().unwrap(), r[8].parse().unwrap());
        assert!(lo < point && point < hi, "{r:?}");
    }

    ws.ok(&["fit-gaussians", "--model", &dqr, "--data", "prep", "--window", "4", "--out", "fg"]);
    let fits = csv_rows(&ws.path("fg/fits.csv"));
    assert_eq!(fits.len(), 3 * 2);
    for (f, p) in fits.iter().zip(&rows) {
        assert_eq!(f[1], p[3]);
        let (mean, point): (f64, f64) = (f[3].parse().unwrap(), p[5].parse().unwrap());
        assert!((mean - point).abs() < 1e-2);
    }

    ws.ok(&["aggregate", "--model", &dqr, "--data", "prep", "--window", "4", "--route", "L00,L01", "--out", "ag"]);
    let samples = csv_rows(&ws.path("ag/route_samples.csv"));
    assert_eq!(samples.len(), 200);
    let summary = json(&ws.path("ag/summary.json"));
    assert_eq!(summary["n"], 200);
    assert_eq!(summary["links"], 2);

    let out = ws.run(&["aggregate", "--model", &dqr, "--data", "prep", "--window", "4", "--route", "L00,L05", "--out", "ag2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("L05"));
}

#[test]
fn fixture_policy_beats_always_hold_and_never_hold_matches_recorded_breaks() {
    let ws = Workspace::new();
    ws.ok(&["synth", "--journeys", "--out", "syn"]);
    ws.ok(&["simulate-transfer", "--pairs", "syn/pairs.csv", "--pair-samples", "syn/pair_samples.csv", "--out", "st"]);
    let s = json(&ws.path("st/summary.json"));
    let policy = s["policy"]["mean_delay_s"].as_f64().unwrap();
    let always = s["always_hold"]["mean_delay_s"].as_f64().unwrap();
    assert!(policy < always, "{policy} vs {always}");
    assert_eq!(s["always_hold"]["kept_rate"], 1.0);

    let mut delays = Vec::new();
    let mut kept = 0usize;
    let t = |v: &str| chrono::DateTime::parse_from_rfc3339(v).unwrap().timestamp_micros() as f64 / 1e6;
    for r in csv_rows(&ws.path("syn/pairs.csv")) {
        let (f, sched, arr) = (t(&r[7]), t(&r[10]), t(&r[11]));
        let dep = sched.max(arr);
        delays.push(dep - sched);
        kept += usize::from(f + 60.0 <= dep);
    }
    let mean = delays.iter().sum::<f64>() / delays.len() as f64;
    let never = s["never_hold"]["mean_delay_s"].as_f64().unwrap();
    assert!((never - mean).abs() < 1e-3, "{never} vs {mean}");
    let rate = s["never_hold"]["kept_rate"].as_f64().unwrap();
    assert!((rate - kept as f64 / delays.len() as f64).abs() < 1e-12);

    let outcomes = csv_rows(&ws.path("st/outcomes.csv"));
    assert_eq!(outcomes.len(), 120);
    ws.ok(&["simulate-transfer", "--fixture", "--out", "fx"]);
    let fx = json(&ws.path("fx/summary.json"));
    assert!(fx["reduction_vs_always_hold"].as_f64().unwrap() >= 0.2);
}

fn model_pairs(ws: &Workspace) {
    let meta = json(&ws.path("prep/meta.json"));
    let start = chrono::DateTime::parse_from_rfc3339(meta["grid"]["period_start"].as_str().unwrap()).unwrap();
    let test_start = meta["split_steps"]["test"][0].as_u64().unwrap() as i64;
    let fmt = |t: chrono::DateTime<chrono::FixedOffset>| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let mut csv = String::from(
        "pair_id,feeder_journey,receiver_journey,feeder_stop,receiver_stop,window_s,feeder_site_scheduled,\
         feeder_site_actual,receiver_origin_scheduled,receiver_origin_actual,receiver_site_scheduled,\
         receiver_site_arrival,receiver_site_departure\n",
    );
    for i in 0..5i64 {
        let origin = start + chrono::Duration::seconds((test_start + 40 + 10 * i) * 900);
        let s = origin + chrono::Duration::seconds(300);
        let sec = chrono::Duration::seconds;
        csv.push_str(&format!(
            "{i},F{i},R{i},a,b,300,{},{},{},{},{},{},\n",
            fmt(s - sec(60)),
            fmt(s + sec(10 * i)),
            fmt(origin),
            fmt(origin),
            fmt(s),
            fmt(s + sec(5)),
        ));
    }
    fs::write(ws.path("mpairs.csv"), csv).unwrap();
}

#[test]
fn transfer_accepts_a_different_model_per_line() {
    let ws = Workspace::new();
    let dqr = ws.trained("dqr");
    let brnn = ws.trained("brnn");
    model_pairs(&ws);
    let base = ["simulate-transfer", "--pairs", "mpairs.csv"];
    let mut args = base.to_vec();
    args.extend([
        "--feeder-model", &dqr, "--feeder-data", "prep", "--feeder-route", "L00",
        "--receiver-model", &brnn, "--receiver-data", "prep", "--receiver-route", "L01",
        "--out", "mixed",
    ]);
    let text = ws.ok(&args);
    assert!(text.contains("evaluated 5"), "{text}");
    assert_eq!(csv_rows(&ws.path("mixed/outcomes.csv")).len(), 5);

    let mut bad = base.to_vec();
    bad.extend([
        "--feeder-model", &dqr, "--feeder-data", "prep", "--feeder-route", "X9",
        "--receiver-model", &brnn, "--receiver-data", "prep", "--receiver-route", "L01",
        "--out", "bad",
    ]);
    let out = ws.run(&bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("X9"));
}

#[test]
fn diverging_training_exits_with_code_three() {
    let ws = Workspace::new();
    ws.prepared();
    fs::write(
        ws.path("div.json"),
        serde_json::json!({ "brnn": { "lstm_state_size": 10, "max_epochs": 2, "learning_rate": 1e30 } }).to_string(),
    )
    .unwrap();
    let out = Command::new(BIN)
        .current_dir(ws.dir.path())
        .args(["--config", "div.json", "train", "brnn", "--data", "prep", "--out", "div"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!ws.path("div/run.json").exists());
}

#[test]
fn hpo_writes_the_trial_table() {
    let ws = Workspace::new();
    ws.prepared();
    ws.ok(&["hpo", "brnn", "--data", "prep", "--trials", "2", "--out", "hp"]);
    let rows = csv_rows(&ws.path("hp/trials.csv"));
    assert_eq!(rows.len(), 2);
    let best = json(&ws.path("hp/best.json"));
    let losses: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((best["best_val_loss"].as_f64().unwrap() - min).abs() < 1e-5);
}
