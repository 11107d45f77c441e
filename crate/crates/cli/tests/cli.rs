use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zonetrust"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Generated data plus a trained model, shared by the tests below.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let o = run(&[
            "gen", "--benign", "1500", "--attack", "mirai-flood", "100", "--attack", "mirai-scan", "100", "--out",
            s(&data),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let model = dir.path().join("model/model.json");
        let o = run(&[
            "train", "--data", s(&data.join("benign.csv")), "--model", s(&model), "--lr-n", "0.01", "--epochs", "40",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        Fixture { _dir: dir, data, model }
    })
}

#[test]
fn gen_writes_exact_rows_and_is_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = run(&["gen", "--benign", "50", "--attack", "mirai-flood", "20", "--seed", "7", "--out", s(d.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["benign.csv", "mirai-flood.csv", "gen.manifest.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let lines = |n: &str| std::fs::read_to_string(dirs[0].path().join(n)).unwrap().lines().count();
    assert_eq!(lines("benign.csv"), 51);
    assert_eq!(lines("mirai-flood.csv"), 21);
}

#[test]
fn gen_rejects_unknown_attack() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["gen", "--benign", "5", "--attack", "mirai-smurf", "3", "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("mirai-flood") && err.contains("mirai-scan"), "{err}");
    assert!(!d.path().join("benign.csv").exists());
}

#[test]
fn train_reports_positive_threshold_and_is_reproducible() {
    let f = fixture();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.model.with_file_name("train_report.json")).unwrap()).unwrap();
    assert!(report["th_v"].as_f64().unwrap() > 0.0);
    assert!(!report["history"].as_array().unwrap().is_empty());

    let d = tempfile::tempdir().unwrap();
    let model = d.path().join("model.json");
    let o = run(&[
        "train", "--data", s(&f.data.join("benign.csv")), "--model", s(&model), "--lr-n", "0.01", "--epochs", "40",
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&f.model).unwrap());
}

#[test]
fn train_reports_corrupt_csv_position() {
    let f = fixture();
    let d = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(f.data.join("benign.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[3].split(',').collect();
    cells[5] = "abc";
    lines[3] = cells.join(",");
    let bad = d.path().join("bad.csv");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let o = run(&["train", "--data", s(&bad), "--model", s(&d.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("row 3") && err.contains("column"), "{err}");
}

#[test]
fn detect_reports_per_detector_rows_with_latency() {
    let f = fixture();
    let d = tempfile::tempdir().unwrap();
    let data = [f.data.join("benign.csv"), f.data.join("mirai-flood.csv"), f.data.join("mirai-scan.csv")];
    let base = ["detect", "--model", s(&f.model), "--data", s(&data[0]), s(&data[1]), s(&data[2])];

    let out1 = d.path().join("ae");
    let o = run(&[&base[..], &["--out", s(&out1)]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out1.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().next().unwrap().contains("latency_mean_us"));
    let tpr: f64 = csv.lines().nth(1).unwrap().split(',').nth(7).unwrap().parse().unwrap();
    assert!(tpr >= 0.99, "{csv}");

    let out2 = d.path().join("all");
    let o = run(&[&base[..], &["--baselines", "--train", s(&data[0]), "--out", s(&out2)]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out2.join("report.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["autoencoder", "iforest", "lof"]);

    let o = run(&["report", "--input", s(&out2.join("report.json")), "--format", "csv"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), csv);
    let o = run(&["report", "--input", s(&out2.join("report.json"))]);
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn detect_without_model_is_not_trained() {
    let f = fixture();
    let d = tempfile::tempdir().unwrap();
    let o = run(&[
        "detect", "--model", s(&d.path().join("none.json")), "--data", s(&f.data.join("benign.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("not-trained"), "{}", stderr(&o));
}

fn simulate(scenario: &Path, out: &Path) -> Output {
    let f = fixture();
    run(&["simulate", "--scenario", s(scenario), "--model", s(&f.model), "--out", s(out)])
}

fn status_of(o: &Output) -> Vec<(String, String)> {
    stdout(o)
        .lines()
        .map(|l| {
            let field = |k: &str| l.split(' ').find_map(|t| t.strip_prefix(k)).unwrap().to_string();
            (field("zone="), field("status="))
        })
        .collect()
}

#[test]
fn simulate_attack_scenario_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let scenario = repo().join("scenarios/mirai_one_zone.scn");
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let o = simulate(&scenario, &a);
    assert!(o.status.success(), "{}", stderr(&o));
    let st = status_of(&o);
    assert_eq!(st.len(), 3);
    for (zone, status) in &st {
        let expected = if zone == "home" { "untrusted" } else { "trusted" };
        assert_eq!(status, expected, "{zone}");
    }

    let o = simulate(&scenario, &b);
    assert!(o.status.success());
    for name in ["ledger-home.hex", "ledger-office.hex", "ledger-plant.hex", "alerts.csv", "status.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }

    let ledger = a.join("ledger-office.hex");
    let o = run(&["verify-ledger", s(&ledger)]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("ok blocks="));

    // One hex digit changed inside the third block.
    let text = std::fs::read_to_string(&ledger).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut bytes = lines[2].clone().into_bytes();
    let i = bytes.len() / 2;
    bytes[i] = if bytes[i] == b'0' { b'1' } else { b'0' };
    lines[2] = String::from_utf8(bytes).unwrap();
    let tampered = d.path().join("tampered.hex");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let o = run(&["verify-ledger", s(&tampered)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("first_bad_height=2"), "{}", stdout(&o));

    let o = run(&["verify-ledger", s(&d.path().join("missing.hex"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_benign_topology_keeps_all_zones_trusted() {
    let d = tempfile::tempdir().unwrap();
    let f = fixture();
    let o = run(&["simulate", "--model", s(&f.model), "--out", s(d.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let st = status_of(&o);
    assert_eq!(st.len(), 3);
    assert!(st.iter().all(|(_, s)| s == "trusted"), "{}", stdout(&o));
}

#[test]
fn simulate_reports_scenario_line() {
    let d = tempfile::tempdir().unwrap();
    let scenario = d.path().join("bad.scn");
    std::fs::write(&scenario, "REGISTER home cam\nTICK 2\nSEND home cam\n").unwrap();
    let o = simulate(&scenario, &d.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn fuse_demo_gates_drifting_barometer() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("fuse.csv");
    let o = run(&["fuse", "--demo", "--drift", "baro=0.5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 501);
    let late_rejections = csv
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().unwrap().parse::<u64>().unwrap() > 20)
        .filter(|l| l.split(',').nth(4).unwrap().contains("baro:"))
        .count();
    assert!(late_rejections as f64 >= 0.9 * 480.0, "{late_rejections}");

    // Replaying the readings from a file gives a verdict per tick.
    let readings = d.path().join("r.csv");
    std::fs::write(&readings, "tick,sensor_id,value\n1,gps,100\n1,baro,101\n2,gps,100.5\n2,radar,100.4\n").unwrap();
    let o = run(&["fuse", "--input", s(&readings)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn config_file_and_validation() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    std::fs::write(&cfg, "seed = 11\n[zone]\ntau = 1.5\n").unwrap();
    let o = run(&["--config", s(&cfg), "gen", "--benign", "3", "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tau"));

    std::fs::write(&cfg, "seed = 11\n").unwrap();
    let o = run(&["--config", s(&cfg), "gen", "--benign", "3", "--out", s(d.path())]);
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("gen.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);

    std::fs::write(&cfg, "sed = 11\n").unwrap();
    let o = run(&["--config", s(&cfg), "gen", "--benign", "3", "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["--config", s(&repo().join("config/default.toml")), "gen", "--benign", "3", "--out", s(d.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
}
