use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use zonetrust::baselines::{
    evaluate, reports_from_json, reports_to_csv, reports_to_dat, reports_to_json, AnomalyScorer, AutoencoderScorer,
    EvalReport, IForestScorer, LofScorer, ThresholdPolicy,
};
use zonetrust::datagen::{
    gen_attack, gen_benign, load_csv, save_csv, split_indices, AttackProfile, BenignShape, Label, LabeledDataset,
};
use zonetrust::fusion::{run_log, AltitudeScenario, FusionVerdict, KalmanState, Matrix2, SensorSpec};
use zonetrust::ledger::verify_export;
use zonetrust::monitor::{fit, Detector, MonitorError, MonitorState};
use zonetrust::rng::SimRng;
use zonetrust::sim::{parse_scenario, SimConfig, SimError, Simulation};

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::{CliError, DetectArgs, FuseArgs, GenArgs, ReportArgs, SimulateArgs, TrainArgs, VerifyArgs};

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::data(e.to_string())
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_file(p: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(p, content).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

pub fn gen(cfg: &RunConfig, a: GenArgs) -> Result<(), CliError> {
    let mut attacks = Vec::new();
    for pair in a.attack.chunks(2) {
        let profile = AttackProfile::by_name(&pair[0]).map_err(|e| CliError::validation(e.to_string()))?;
        let n: usize = pair[1]
            .parse()
            .map_err(|_| CliError::validation(format!("attack row count {:?} is not a number", pair[1])))?;
        attacks.push((profile, n));
    }
    let out = a.out.unwrap_or_else(|| cfg.paths.data.clone());
    create_dir(&out)?;
    let base = BenignShape::default().expand().map_err(data_err)?;
    let mut manifest = ManifestBuilder::new();

    let path = out.join("benign.csv");
    save_csv(&gen_benign(&base, a.benign, cfg.seed).map_err(data_err)?, &path).map_err(data_err)?;
    println!("{} rows={}", path.display(), a.benign);
    manifest.output(&path);
    for (profile, n) in attacks {
        let path = out.join(format!("{}.csv", profile.name));
        save_csv(&gen_attack(&profile, &base, n, cfg.seed).map_err(data_err)?, &path).map_err(data_err)?;
        println!("{} rows={n}", path.display());
        manifest.output(&path);
    }
    manifest.write(&out, "gen", cfg)?;
    Ok(())
}

fn benign_only(ds: LabeledDataset) -> Result<LabeledDataset, CliError> {
    let ds = match &ds.labels {
        Some(labels) => {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == Label::Benign).collect();
            ds.select(&idx)
        }
        None => ds,
    };
    if ds.is_empty() {
        return Err(CliError::data("no benign rows to train on"));
    }
    Ok(ds)
}

fn fit_detector(cfg: &RunConfig, rows: &LabeledDataset) -> Result<(Detector, serde_json::Value), CliError> {
    let out = fit(&rows.rows, &cfg.fit_config()).map_err(data_err)?;
    let t = out.detector.threshold;
    let report = serde_json::json!({
        "th_v": t.th_v,
        "opt_mean": t.opt_mean,
        "opt_std": t.opt_std,
        "lr_n": out.lr_n,
        "best_epoch": out.best_epoch,
        "opt_fpr": out.opt_fpr,
        "t_rows": out.t_rows,
        "opt_rows": out.opt_rows,
        "history": out.history,
    });
    Ok((out.detector, report))
}

pub fn train(cfg: &RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let data = benign_only(load_csv(&a.data).map_err(data_err)?)?;
    let model_path = a.model.unwrap_or_else(|| cfg.paths.model.clone());
    let dir = parent_dir(&model_path);
    let report_path = a.report.unwrap_or_else(|| dir.join("train_report.json"));
    let (detector, report) = fit_detector(cfg, &data)?;
    create_dir(&dir)?;
    MonitorState::from_detector(&detector).save(&model_path).map_err(data_err)?;
    write_file(&report_path, &(serde_json::to_string_pretty(&report).unwrap() + "\n"))?;
    println!(
        "th_v={} lr_n={} best_epoch={} rows={}",
        detector.threshold.th_v,
        report["lr_n"],
        report["best_epoch"],
        data.len()
    );
    ManifestBuilder::new()
        .input(&a.data)
        .output(&model_path)
        .output(&report_path)
        .write(&dir, "train", cfg)?;
    Ok(())
}

fn load_detector(path: &Path) -> Result<Detector, CliError> {
    if !path.exists() {
        return Err(CliError::data(format!(
            "not-trained: {}: {}",
            path.display(),
            MonitorError::NotTrained
        )));
    }
    MonitorState::load(path)
        .and_then(MonitorState::into_detector)
        .map_err(data_err)
}

pub fn report_table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>8} {:>14} {:>18}\n",
        "detector", "TPR", "FPR", "threshold", "latency_us"
    );
    for r in reports {
        writeln!(
            s,
            "{:<16} {:>8.4} {:>8.4} {:>14.6} {:>9.2} ± {:<7.2}",
            r.detector, r.tpr, r.fpr, r.threshold, r.latency_mean_us, r.latency_std_us
        )
        .unwrap();
    }
    s
}

pub fn detect(cfg: &RunConfig, a: DetectArgs) -> Result<(), CliError> {
    if a.baselines && a.train.is_none() {
        return Err(CliError::validation("--baselines needs --train with benign rows"));
    }
    let model_path = a.model.unwrap_or_else(|| cfg.paths.model.clone());
    let detector = load_detector(&model_path)?;
    let mut data: Option<LabeledDataset> = None;
    for p in &a.data {
        let d = load_csv(p).map_err(data_err)?;
        data = Some(match data {
            Some(acc) => acc.concat(&d),
            None => d,
        });
    }
    let data = data.expect("clap requires --data");
    if data.labels.is_none() {
        return Err(CliError::data("detect needs a label column"));
    }

    let ae = AutoencoderScorer(&detector);
    let mut reports = vec![evaluate(&ae, &data, ThresholdPolicy::Fixed(detector.threshold.th_v)).map_err(data_err)?];
    if a.baselines {
        let train_path = a.train.as_ref().unwrap();
        let train = benign_only(load_csv(train_path).map_err(data_err)?)?;
        let (t_idx, o_idx) = split_indices(train.len(), cfg.train.split_ratio, cfg.seed).map_err(data_err)?;
        let (fit_rows, calib) = (train.select(&t_idx).rows, train.select(&o_idx).rows);
        let b = &cfg.baselines;
        let scorers: Vec<Box<dyn AnomalyScorer>> = vec![
            Box::new(IForestScorer::fit(&fit_rows, b.trees, b.subsample, cfg.seed).map_err(data_err)?),
            Box::new(LofScorer::fit(&fit_rows, b.lof_k).map_err(data_err)?),
        ];
        let policy = ThresholdPolicy::BenignQuantile {
            calibration: &calib,
            q: b.quantile,
        };
        for s in &scorers {
            reports.push(evaluate(s.as_ref(), &data, policy).map_err(data_err)?);
        }
    }

    let out = a.out.unwrap_or_else(|| cfg.paths.reports.clone());
    create_dir(&out)?;
    let th = detector.threshold.th_v;
    let mses = detector.model.score_rows(&data.rows).map_err(data_err)?;
    let labels = data.labels.as_ref().unwrap();
    let mut verdicts = String::from("row,device_id,truth,mse,th_v,label\n");
    for (i, m) in mses.iter().enumerate() {
        let label = if *m > th { "malicious" } else { "normal" };
        writeln!(verdicts, "{},{},{},{m},{th},{label}", i + 1, data.device_ids[i], labels[i].as_str()).unwrap();
    }
    let paths = [
        out.join("verdicts.csv"),
        out.join("report.csv"),
        out.join("report.json"),
        out.join("report.dat"),
    ];
    write_file(&paths[0], &verdicts)?;
    write_file(&paths[1], &reports_to_csv(&reports))?;
    write_file(&paths[2], &reports_to_json(&reports))?;
    write_file(&paths[3], &reports_to_dat(&reports))?;
    print!("{}", report_table(&reports));

    let mut m = ManifestBuilder::new();
    m.input(&model_path);
    for p in a.data.iter().chain(&a.train) {
        m.input(p);
    }
    m.output(&paths[0]);
    for p in &paths[1..] {
        m.timed_output(p);
    }
    m.write(&out, "detect", cfg)?;
    Ok(())
}

fn topology_scenario(cfg: &RunConfig) -> String {
    let mut s = String::new();
    for z in &cfg.topology.zones {
        for d in 1..=cfg.topology.devices_per_zone {
            writeln!(s, "REGISTER {z} dev{d}").unwrap();
        }
    }
    writeln!(s, "TICK {}", cfg.topology.ticks).unwrap();
    s
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Io(m) => CliError::data(m),
        other => CliError::validation(other.to_string()),
    }
}

pub fn simulate(cfg: &RunConfig, a: SimulateArgs) -> Result<(), CliError> {
    let text = match &a.scenario {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
        None => topology_scenario(cfg),
    };
    let script = parse_scenario(&text).map_err(sim_err)?;
    let detector = match &a.model {
        Some(p) => load_detector(p)?,
        None => {
            let base = BenignShape::default().expand().map_err(data_err)?;
            let rows = gen_benign(&base, cfg.train.sim_train_rows, cfg.seed).map_err(data_err)?;
            eprintln!("training detector on {} generated benign rows", rows.len());
            fit_detector(cfg, &rows)?.0
        }
    };
    let mut sim = Simulation::new(
        SimConfig {
            seed: cfg.seed,
            zone: cfg.zone_config(),
        },
        Some(detector),
    )
    .map_err(sim_err)?;
    sim.run(&script).map_err(sim_err)?;

    let out = a.out.unwrap_or_else(|| cfg.paths.ledger.clone());
    let written = sim.write_artifacts(&out).map_err(sim_err)?;
    for z in sim.zones() {
        let st = z.zone_status();
        println!(
            "zone={} trust={:.4} status={} malicious={}/{} alerts={} height={}",
            st.label,
            st.trust.trust,
            st.trust.status.as_str(),
            st.trust.malicious_count,
            st.trust.observed,
            st.alerts,
            st.ledger_height
        );
    }
    let mut m = ManifestBuilder::new();
    if let Some(p) = &a.scenario {
        m.input(p);
    }
    if let Some(p) = &a.model {
        m.input(p);
    }
    for p in &written {
        if p.to_string_lossy().contains("verdicts-") {
            m.timed_output(p);
        } else {
            m.output(p);
        }
    }
    m.write(&out, "simulate", cfg)?;

    let problems = sim.self_check();
    if !problems.is_empty() {
        return Err(CliError::verification(problems.join("; ")));
    }
    Ok(())
}

pub fn verify_ledger(a: VerifyArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.path).map_err(|e| CliError::data(format!("{}: {e}", a.path.display())))?;
    match verify_export(&text) {
        Ok(n) => {
            println!("ok blocks={n}");
            Ok(())
        }
        Err(b) => {
            println!("invalid first_bad_height={}", b.height);
            Err(CliError::verification(b.to_string()))
        }
    }
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| CliError::data(format!("{}: {e}", a.input.display())))?;
    let reports = reports_from_json(&text).map_err(CliError::data)?;
    let s = match a.format.as_str() {
        "csv" => reports_to_csv(&reports),
        "dat" => reports_to_dat(&reports),
        "json" => reports_to_json(&reports),
        _ => report_table(&reports),
    };
    print!("{s}");
    Ok(())
}

fn read_readings(path: &Path) -> Result<Vec<(u64, String, f64)>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<(u64, String, f64)>().enumerate() {
        let r = rec.map_err(|e| CliError::data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if !r.2.is_finite() {
            return Err(CliError::data(format!("{}: row {}: non-finite value", path.display(), i + 1)));
        }
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(CliError::data(format!("{}: no readings", path.display())));
    }
    Ok(rows)
}

pub const FUSE_HEADER: &str = "tick,position,velocity,accepted,rejected,inflation";

pub fn verdicts_csv(verdicts: &[FusionVerdict]) -> String {
    let mut s = format!("{FUSE_HEADER}\n");
    for v in verdicts {
        let rejected: Vec<String> = v.rejected.iter().map(|(id, nis)| format!("{id}:{nis}")).collect();
        writeln!(
            s,
            "{},{},{},{},{},{}",
            v.tick,
            v.fused_x[0],
            v.fused_x[1],
            v.accepted.join(";"),
            rejected.join(";"),
            v.inflation
        )
        .unwrap();
    }
    s
}

pub fn fuse(cfg: &RunConfig, a: FuseArgs) -> Result<(), CliError> {
    let specs = cfg.sensor_specs();
    let (initial, rows) = if a.demo {
        let mut sc = AltitudeScenario::three_sensor();
        for s in &mut sc.sensors {
            s.spec.gate_p = cfg.fusion.gate_p;
        }
        if let Some(d) = &a.drift {
            let (id, rate) = d
                .split_once('=')
                .and_then(|(id, r)| Some((id, r.parse::<f64>().ok()?)))
                .ok_or_else(|| CliError::validation(format!("--drift expects sensor=rate, got {d:?}")))?;
            if !sc.sensors.iter().any(|s| s.spec.id == id) {
                return Err(CliError::validation(format!("--drift names unknown sensor {id:?}")));
            }
            sc = sc.with_drift(id, rate);
        }
        let (_, rows) = sc.generate(&mut SimRng::derive(cfg.seed, "fuse/demo"));
        (sc.initial_state(), rows)
    } else {
        let path = a
            .input
            .as_ref()
            .ok_or_else(|| CliError::validation("fuse needs --input or --demo"))?;
        let rows = read_readings(path)?;
        let first = rows.iter().map(|r| r.0).min().unwrap();
        let start: Vec<f64> = rows.iter().filter(|r| r.0 == first).map(|r| r.2).collect();
        let max_r = specs.iter().map(|s| s.r).fold(1.0, f64::max);
        let template = AltitudeScenario::three_sensor().initial_state();
        let mut st = KalmanState::new(
            start.iter().sum::<f64>() / start.len() as f64,
            0.0,
            Matrix2::new(max_r, 0.0, 0.0, 1.0),
            template.q,
        );
        st.tick = first;
        (st, rows)
    };
    let sensors = if a.demo {
        AltitudeScenario::three_sensor()
            .sensors
            .into_iter()
            .map(|s| SensorSpec {
                gate_p: cfg.fusion.gate_p,
                ..s.spec
            })
            .collect()
    } else {
        specs
    };
    let (_, verdicts) = run_log(initial, &sensors, &rows).map_err(|e| CliError::data(e.to_string()))?;
    let csv = verdicts_csv(&verdicts);
    match &a.out {
        Some(p) => {
            write_file(p, &csv)?;
            for s in &sensors {
                let n = verdicts.iter().filter(|v| v.rejected.iter().any(|(id, _)| *id == s.id)).count();
                println!("sensor={} rejected_steps={n}/{}", s.id, verdicts.len());
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}
