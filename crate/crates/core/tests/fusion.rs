use zonetrust::fusion::{run_log, rmse, AltitudeScenario, SensorSpec};
use zonetrust::rng::SimRng;

fn fused_track(scn: &AltitudeScenario, rows: &[(u64, String, f64)], only: Option<&str>) -> Vec<f64> {
    let specs: Vec<SensorSpec> = scn.sensors.iter().map(|s| s.spec.clone()).collect();
    let rows: Vec<_> = rows
        .iter()
        .filter(|r| only.is_none_or(|id| r.1 == id))
        .cloned()
        .collect();
    let (_, verdicts) = run_log(scn.initial_state(), &specs, &rows).unwrap();
    verdicts.iter().map(|v| v.fused_x[0]).collect()
}

#[test]
fn fused_beats_every_single_sensor() {
    let scn = AltitudeScenario::three_sensor();
    let mut filtered_ratio = 0.0;
    for rep in 0..20 {
        let (truth, rows) = scn.generate(&mut SimRng::derive(7, &format!("fusion/{rep}")));
        let fused = rmse(&fused_track(&scn, &rows, None), &truth);
        let mut best_filtered = f64::INFINITY;
        for id in ["gps", "baro", "radar"] {
            let readings: Vec<f64> = rows.iter().filter(|r| r.1 == id).map(|r| r.2).collect();
            let raw = rmse(&readings, &truth);
            assert!(fused <= raw, "rep {rep}: fused {fused} vs {id} readings {raw}");
            best_filtered = best_filtered.min(rmse(&fused_track(&scn, &rows, Some(id)), &truth));
        }
        filtered_ratio += fused / best_filtered;
    }
    // Gating occasionally drops a good reading, so single runs can lose to a
    // radar-only filter; on average fusion still wins.
    assert!(filtered_ratio / 20.0 < 1.0, "mean ratio {}", filtered_ratio / 20.0);
}

#[test]
fn drifting_barometer_is_gated_out() {
    let scn = AltitudeScenario::three_sensor().with_drift("baro", 0.5);
    for rep in 0..20 {
        let (_, rows) = scn.generate(&mut SimRng::derive(7, &format!("drift/{rep}")));
        let specs: Vec<SensorSpec> = scn.sensors.iter().map(|s| s.spec.clone()).collect();
        let (_, verdicts) = run_log(scn.initial_state(), &specs, &rows).unwrap();
        let late: Vec<_> = verdicts.iter().filter(|v| v.tick > 20).collect();
        let rejected = late
            .iter()
            .filter(|v| v.rejected.iter().any(|(id, _)| id == "baro"))
            .count();
        let frac = rejected as f64 / late.len() as f64;
        assert!(frac >= 0.9, "rep {rep}: baro rejected on {frac}");
    }
}

