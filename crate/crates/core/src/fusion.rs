//! Kalman fusion of redundant altitude sensors with innovation gating.
//!
//! State is `[position (m), velocity (m/tick)]` under a constant-velocity
//! model. Every reading is gated against the predicted state with a
//! chi-square(1) test on its normalized innovation; accepted readings are
//! then applied one at a time as scalar updates.
//!
//! A slowly drifting sensor can bias the estimate before its own drift is
//! large enough to gate, after which the filter rejects the honest sensors
//! instead. When at least two readings, a strict majority, are rejected yet
//! agree with each other, the predicted covariance is scaled by the smallest
//! factor that lets that majority pass and gating is redone.

use std::collections::BTreeMap;

pub use nalgebra::{Matrix2, Vector2};
use nalgebra::RowVector2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::rng::SimRng;

pub const DEFAULT_GATE_P: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("innovation variance {0} is not positive")]
    Degenerate(f64),
    #[error("sensor {id}: {reason}")]
    InvalidSensor { id: String, reason: String },
    #[error("no readings supplied")]
    NoReadings,
    #[error("negative time step")]
    NegativeDt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: Vector2<f64>,
    pub p: Matrix2<f64>,
    /// Process noise per tick.
    pub q: Matrix2<f64>,
    pub tick: u64,
}

impl KalmanState {
    pub fn new(position: f64, velocity: f64, p: Matrix2<f64>, q: Matrix2<f64>) -> Self {
        Self {
            x: Vector2::new(position, velocity),
            p,
            q,
            tick: 0,
        }
    }

    pub fn position(&self) -> f64 {
        self.x[0]
    }

    pub fn velocity(&self) -> f64 {
        self.x[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    /// Observation row; `[1, 0]` for a direct altitude sensor.
    pub h: [f64; 2],
    /// Measurement noise variance (m²).
    pub r: f64,
    pub gate_p: f64,
}

impl SensorSpec {
    pub fn altitude(id: &str, r: f64) -> Self {
        Self {
            id: id.to_string(),
            h: [1.0, 0.0],
            r,
            gate_p: DEFAULT_GATE_P,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |reason: &str| FusionError::InvalidSensor {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(bad("measurement variance must be positive"));
        }
        if !(self.gate_p > 0.0 && self.gate_p < 1.0) {
            return Err(bad("gate probability must lie in (0, 1)"));
        }
        Ok(())
    }

    fn row(&self) -> RowVector2<f64> {
        RowVector2::new(self.h[0], self.h[1])
    }
}

/// Upper chi-square(1) quantile: readings with NIS above this are rejected.
pub fn gate_threshold(gate_p: f64) -> f64 {
    ChiSquared::new(1.0).unwrap().inverse_cdf(1.0 - gate_p)
}

pub fn predict(state: &KalmanState, dt: u64) -> KalmanState {
    if dt == 0 {
        return state.clone();
    }
    let dtf = dt as f64;
    let f = Matrix2::new(1.0, dtf, 0.0, 1.0);
    let p = f * state.p * f.transpose() + state.q * dtf;
    KalmanState {
        x: f * state.x,
        p: symmetrize(p),
        q: state.q,
        tick: state.tick + dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub accepted: bool,
    pub innovation: f64,
    pub innovation_var: f64,
    /// Normalized innovation squared, ν²/S.
    pub nis: f64,
}

pub fn gate(state: &KalmanState, reading: f64, spec: &SensorSpec) -> Result<GateDecision, FusionError> {
    let h = spec.row();
    let innovation = reading - (h * state.x)[0];
    let s = (h * state.p * h.transpose())[0] + spec.r;
    if !(s > 0.0) {
        return Err(FusionError::Degenerate(s));
    }
    let nis = innovation * innovation / s;
    Ok(GateDecision {
        accepted: nis <= gate_threshold(spec.gate_p),
        innovation,
        innovation_var: s,
        nis,
    })
}

fn update(state: &mut KalmanState, reading: f64, spec: &SensorSpec) -> Result<(), FusionError> {
    let h = spec.row();
    let innovation = reading - (h * state.x)[0];
    let s = (h * state.p * h.transpose())[0] + spec.r;
    if !(s > 0.0) {
        return Err(FusionError::Degenerate(s));
    }
    let k: Vector2<f64> = state.p * h.transpose() / s;
    state.x += k * innovation;
    // Joseph form keeps P positive semi-definite under roundoff.
    let ikh = Matrix2::identity() - k * h;
    state.p = symmetrize(ikh * state.p * ikh.transpose() + k * k.transpose() * spec.r);
    Ok(())
}

fn symmetrize(p: Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionVerdict {
    pub tick: u64,
    pub fused_x: Vector2<f64>,
    pub accepted: Vec<String>,
    /// Gated-out sensors with their NIS.
    pub rejected: Vec<(String, f64)>,
    /// Every reading was rejected; the state is the bare prediction.
    pub coasting: bool,
    /// Factor applied to the predicted covariance on recovery, 1 otherwise.
    pub inflation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gating {
    Enabled,
    Disabled,
}

pub fn fuse_step(
    state: &KalmanState,
    readings: &[(SensorSpec, f64)],
    dt: u64,
) -> Result<(KalmanState, FusionVerdict), FusionError> {
    fuse_step_with(state, readings, dt, Gating::Enabled)
}

pub fn fuse_step_with(
    state: &KalmanState,
    readings: &[(SensorSpec, f64)],
    dt: u64,
    gating: Gating,
) -> Result<(KalmanState, FusionVerdict), FusionError> {
    if readings.is_empty() {
        return Err(FusionError::NoReadings);
    }
    for (spec, _) in readings {
        spec.validate()?;
    }
    let mut predicted = predict(state, dt);
    let mut decisions = gate_all(&predicted, readings)?;
    let mut inflation = 1.0;
    if gating == Gating::Enabled {
        if let Some(lambda) = recovery_factor(&predicted, readings, &decisions)? {
            inflation = lambda;
            predicted.p *= lambda;
            decisions = gate_all(&predicted, readings)?;
        }
    }
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut next = predicted;
    for ((spec, z), g) in readings.iter().zip(&decisions) {
        if gating == Gating::Disabled || g.accepted {
            accepted.push(spec.id.clone());
            update(&mut next, *z, spec)?;
        } else {
            rejected.push((spec.id.clone(), g.nis));
        }
    }
    let verdict = FusionVerdict {
        tick: next.tick,
        fused_x: next.x,
        coasting: accepted.is_empty(),
        accepted,
        rejected,
        inflation,
    };
    Ok((next, verdict))
}

fn gate_all(state: &KalmanState, readings: &[(SensorSpec, f64)]) -> Result<Vec<GateDecision>, FusionError> {
    readings.iter().map(|(spec, z)| gate(state, *z, spec)).collect()
}

/// Covariance scale for a filter that a rejected but self-consistent
/// majority says has lost track, or `None` if no recovery is needed.
fn recovery_factor(
    state: &KalmanState,
    readings: &[(SensorSpec, f64)],
    decisions: &[GateDecision],
) -> Result<Option<f64>, FusionError> {
    let out: Vec<usize> = (0..readings.len()).filter(|&i| !decisions[i].accepted).collect();
    if out.len() < 2 || 2 * out.len() <= readings.len() {
        return Ok(None);
    }
    for (a, &i) in out.iter().enumerate() {
        for &j in &out[a + 1..] {
            let (si, sj) = (&readings[i].0, &readings[j].0);
            let dh = si.row() - sj.row();
            let diff = decisions[i].innovation - decisions[j].innovation;
            let var = (dh * state.p * dh.transpose())[0] + si.r + sj.r;
            if diff * diff / var > gate_threshold(si.gate_p.min(sj.gate_p)) {
                return Ok(None);
            }
        }
    }
    let mut lambda = 1.0f64;
    for &i in &out {
        let spec = &readings[i].0;
        let hph = (spec.row() * state.p * spec.row().transpose())[0];
        if !(hph > 0.0) {
            return Err(FusionError::Degenerate(hph));
        }
        let nu = decisions[i].innovation;
        lambda = lambda.max((nu * nu / gate_threshold(spec.gate_p) - spec.r) / hph);
    }
    Ok(Some(lambda * (1.0 + 1e-6)))
}

/// Runs a filter over `(tick, sensor_id, value)` rows grouped by tick.
pub fn run_log(
    initial: KalmanState,
    sensors: &[SensorSpec],
    rows: &[(u64, String, f64)],
) -> Result<(KalmanState, Vec<FusionVerdict>), FusionError> {
    let by_id: BTreeMap<&str, &SensorSpec> = sensors.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut by_tick: BTreeMap<u64, Vec<(SensorSpec, f64)>> = BTreeMap::new();
    for (tick, id, value) in rows {
        let spec = by_id.get(id.as_str()).ok_or_else(|| FusionError::InvalidSensor {
            id: id.clone(),
            reason: "unknown sensor".to_string(),
        })?;
        by_tick.entry(*tick).or_default().push(((*spec).clone(), *value));
    }
    let mut state = initial;
    let mut verdicts = Vec::new();
    for (tick, readings) in by_tick {
        let dt = tick.checked_sub(state.tick).ok_or(FusionError::NegativeDt)?;
        let (next, v) = fuse_step(&state, &readings, dt)?;
        state = next;
        verdicts.push(v);
    }
    Ok((state, verdicts))
}

/// Synthetic altitude run used by tests, the CLI demo and acceptance checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltitudeScenario {
    pub steps: usize,
    pub initial_altitude: f64,
    pub initial_velocity: f64,
    /// Standard deviation of the per-tick velocity random walk.
    pub accel_std: f64,
    pub sensors: Vec<SimulatedSensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSensor {
    pub spec: SensorSpec,
    pub noise_std: f64,
    pub bias: f64,
    /// Additional bias accumulated per tick.
    pub drift_per_step: f64,
}

impl AltitudeScenario {
    /// GPS (σ 5 m), barometer (σ 2 m) and radar (σ 1 m), all unbiased.
    pub fn three_sensor() -> Self {
        let sensor = |id: &str, std: f64| SimulatedSensor {
            spec: SensorSpec::altitude(id, std * std),
            noise_std: std,
            bias: 0.0,
            drift_per_step: 0.0,
        };
        Self {
            steps: 500,
            initial_altitude: 100.0,
            initial_velocity: 0.5,
            accel_std: 0.05,
            sensors: vec![sensor("gps", 5.0), sensor("baro", 2.0), sensor("radar", 1.0)],
        }
    }

    pub fn with_drift(mut self, id: &str, drift_per_step: f64) -> Self {
        for s in &mut self.sensors {
            if s.spec.id == id {
                s.drift_per_step = drift_per_step;
            }
        }
        self
    }

    pub fn with_bias(mut self, id: &str, bias: f64) -> Self {
        for s in &mut self.sensors {
            if s.spec.id == id {
                s.bias = bias;
            }
        }
        self
    }

    pub fn initial_state(&self) -> KalmanState {
        let q = Matrix2::new(0.0, 0.0, 0.0, self.accel_std * self.accel_std);
        KalmanState::new(
            self.initial_altitude,
            self.initial_velocity,
            Matrix2::new(25.0, 0.0, 0.0, 1.0),
            q,
        )
    }

    /// Truth per step and the `(tick, sensor, value)` rows, ticks `1..=steps`.
    pub fn generate(&self, rng: &mut SimRng) -> (Vec<f64>, Vec<(u64, String, f64)>) {
        let mut pos = self.initial_altitude;
        let mut vel = self.initial_velocity;
        let mut truth = Vec::with_capacity(self.steps);
        let mut rows = Vec::with_capacity(self.steps * self.sensors.len());
        for step in 1..=self.steps {
            pos += vel;
            vel += self.accel_std * rng.normal();
            truth.push(pos);
            for s in &self.sensors {
                let offset = s.bias + s.drift_per_step * step as f64;
                rows.push((step as u64, s.spec.id.clone(), pos + offset + s.noise_std * rng.normal()));
            }
        }
        (truth, rows)
    }
}

pub fn rmse(estimates: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimates.len(), truth.len());
    let sum: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    (sum / truth.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state() -> KalmanState {
        KalmanState::new(10.0, 2.0, Matrix2::new(4.0, 1.0, 1.0, 2.0), Matrix2::new(0.1, 0.0, 0.0, 0.2))
    }

    #[test]
    fn predict_zero_dt_is_identity() {
        assert_eq!(predict(&state(), 0), state());
    }

    #[test]
    fn predict_constant_velocity() {
        let mut s = state();
        s.q = Matrix2::zeros();
        let p = predict(&s, 3);
        assert_eq!(p.position(), 16.0);
        assert_eq!(p.velocity(), 2.0);
        assert_eq!(p.tick, 3);
    }

    #[test]
    fn process_noise_grows_trace() {
        let mut s = state();
        s.p = Matrix2::zeros();
        s.x = Vector2::zeros();
        assert!(predict(&s, 1).p.trace() > s.p.trace());
    }

    #[test]
    fn exact_reading_is_accepted() {
        let spec = SensorSpec::altitude("gps", 1.0);
        let g = gate(&state(), 10.0, &spec).unwrap();
        assert!(g.accepted);
        assert_eq!(g.innovation, 0.0);
    }

    #[test]
    fn chi_square_quantile_matches_table() {
        // Table value for chi-square(1) at 0.99 is 6.635.
        assert!((gate_threshold(0.01) - 6.6349).abs() < 1e-3);
        assert!((gate_threshold(0.05) - 3.8415).abs() < 1e-3);
    }

    #[test]
    fn gate_rejects_iff_nis_above_quantile() {
        let spec = SensorSpec::altitude("gps", 1.0);
        let s = state(); // S = 4 + 1 = 5
        let limit = (6.6349f64 * 5.0).sqrt();
        assert!(gate(&s, 10.0 + limit * 0.99, &spec).unwrap().accepted);
        assert!(!gate(&s, 10.0 + limit * 1.01, &spec).unwrap().accepted);
    }

    #[test]
    fn degenerate_variance_is_an_error() {
        let mut s = state();
        s.p = Matrix2::zeros();
        let mut spec = SensorSpec::altitude("x", 1.0);
        spec.r = -1.0;
        assert!(matches!(gate(&s, 0.0, &spec), Err(FusionError::Degenerate(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SensorSpec::altitude("x", 0.0);
        assert!(spec.validate().is_err());
        spec.r = 1.0;
        spec.gate_p = 1.0;
        assert!(spec.validate().is_err());
        assert_eq!(fuse_step(&state(), &[], 1).unwrap_err(), FusionError::NoReadings);
    }

    #[test]
    fn precise_sensor_dominates() {
        let spec = SensorSpec {
            gate_p: 1e-9,
            ..SensorSpec::altitude("lidar", 1e-12)
        };
        let (s, v) = fuse_step(&state(), &[(spec, 13.0)], 0).unwrap();
        assert!((s.position() - 13.0).abs() < 1e-9);
        assert_eq!(v.accepted, vec!["lidar".to_string()]);
    }

    #[test]
    fn all_rejected_coasts_on_prediction() {
        let spec = SensorSpec::altitude("gps", 0.01);
        let (s, v) = fuse_step(&state(), &[(spec, 1e6)], 1).unwrap();
        assert!(v.coasting);
        assert_eq!(s, predict(&state(), 1));
    }

    #[test]
    fn biased_sensor_rejected_within_five_steps() {
        let scenario = AltitudeScenario::three_sensor().with_bias("baro", 50.0);
        let (_, rows) = scenario.generate(&mut SimRng::new(4));
        let (_, verdicts) = run_log(scenario.initial_state(), &scenario.sensors.iter().map(|s| s.spec.clone()).collect::<Vec<_>>(), &rows).unwrap();
        let first = verdicts
            .iter()
            .position(|v| v.rejected.iter().any(|(id, _)| id == "baro"))
            .unwrap();
        assert!(first < 5, "first rejection at step {}", first + 1);
        assert!(verdicts[5..]
            .iter()
            .all(|v| v.rejected.iter().any(|(id, _)| id == "baro")));
    }

    #[test]
    fn rejected_sensor_never_moves_state() {
        let s = state();
        let good = SensorSpec::altitude("radar", 1.0);
        let bad = SensorSpec::altitude("baro", 1.0);
        let (with_bad, v) = fuse_step(&s, &[(good.clone(), 12.0), (bad, 500.0)], 1).unwrap();
        assert_eq!(v.rejected.len(), 1);
        let (alone, _) = fuse_step(&s, &[(good, 12.0)], 1).unwrap();
        assert_eq!(with_bad, alone);
    }

    proptest! {
        #[test]
        fn covariance_stays_symmetric_psd(zs in prop::collection::vec((-50.0f64..50.0, 0.1f64..30.0), 1..40)) {
            let mut s = state();
            for (z, r) in zs {
                let spec = SensorSpec::altitude("s", r);
                let (next, _) = fuse_step_with(&s, &[(spec, z)], 1, Gating::Disabled).unwrap();
                s = next;
                prop_assert_eq!(s.p[(0, 1)], s.p[(1, 0)]);
                let eig = s.p.symmetric_eigenvalues();
                prop_assert!(eig.iter().all(|&e| e >= -1e-9));
            }
        }

        #[test]
        fn ungated_updates_commute(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -20.0f64..20.0) {
            let specs = [SensorSpec::altitude("a", 4.0), SensorSpec::altitude("b", 1.0), SensorSpec::altitude("c", 9.0)];
            let fwd: Vec<_> = specs.iter().cloned().zip([a, b, c]).collect();
            let rev: Vec<_> = fwd.iter().rev().cloned().collect();
            let (x1, _) = fuse_step_with(&state(), &fwd, 2, Gating::Disabled).unwrap();
            let (x2, _) = fuse_step_with(&state(), &rev, 2, Gating::Disabled).unwrap();
            for i in 0..2 {
                let scale = x1.x[i].abs().max(x2.x[i].abs()).max(1.0);
                prop_assert!((x1.x[i] - x2.x[i]).abs() <= 1e-9 * scale);
            }
        }
    }
}
