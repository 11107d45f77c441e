//! Behavior monitor: snapshot store, detector fitting, per-instance
//! classification against the mean-plus-sample-std threshold, alerts, and the
//! sliding-window zone trust level.
//!
//! Raw snapshots stay here, off-chain. Their canonical-byte hashes are what
//! the zone master writes to the ledger, and [`audit`] checks the two agree.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{hash, Digest};
use crate::datagen::{split_indices, DataError, FEATURE_COUNT};
use crate::ledger::Ledger;
use crate::nn::{
    init_model, tune_learning_rate, AutoencoderModel, Architecture, EpochRecord, ModelFile, NnError, Normalizer,
    TrainConfig,
};
use crate::rng::SimRng;

pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_TAU: f64 = 0.95;
pub const MIN_FIT_ROWS: usize = 50;

const SNAPSHOT_DOMAIN: &str = "zonetrust/snapshot/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid feature: {0}")]
    InvalidFeature(String),
    #[error("monitor has no fitted detector")]
    NotTrained,
    #[error("sequence id {got} is not after {last}")]
    SequenceOrder { got: u64, last: u64 },
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(String),
    #[error("invalid monitor config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("monitor state: {0}")]
    State(String),
}

/// Exactly [`FEATURE_COUNT`] finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MonitorError> {
        if values.len() != FEATURE_COUNT {
            return Err(MonitorError::InvalidFeature(format!(
                "expected {FEATURE_COUNT} values, found {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MonitorError::InvalidFeature(format!("value {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Opaque network identifiers carried alongside the features.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub src_ip: String,
    pub dst_ip: String,
    pub mac: String,
    pub src_port: String,
    pub dst_port: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq_id: u64,
    pub device_id: String,
    pub features: FeatureVector,
    pub meta: SnapshotMeta,
    pub tick: u64,
}

impl Snapshot {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        Encoder::new()
            .str(SNAPSHOT_DOMAIN)
            .u64(self.seq_id)
            .str(&self.device_id)
            .f64s(self.features.values())
            .str(&self.meta.src_ip)
            .str(&self.meta.dst_ip)
            .str(&self.meta.mac)
            .str(&self.meta.src_port)
            .str(&self.meta.dst_port)
            .u64(self.tick)
            .finish()
    }

    pub fn payload_hash(&self) -> Digest {
        hash(&self.canonical_bytes())
    }
}

/// Snapshot contents before a sequence id is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDraft {
    pub device_id: String,
    pub features: FeatureVector,
    pub meta: SnapshotMeta,
    pub tick: u64,
}

impl SnapshotDraft {
    pub fn with_seq(self, seq_id: u64) -> Snapshot {
        Snapshot {
            seq_id,
            device_id: self.device_id,
            features: self.features,
            meta: self.meta,
            tick: self.tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StoredSnapshot {
    snapshot: Snapshot,
    /// Hash computed when the snapshot was recorded.
    recorded_hash: Digest,
}

/// Off-chain snapshot storage keyed by sequence id, cross-referenced by hash.
#[derive(Debug, Clone, Default)]
pub struct SnapshotStore {
    by_seq: BTreeMap<u64, StoredSnapshot>,
    by_hash: HashMap<Digest, u64>,
    last_seq: u64,
}

impl SnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq_id(&self) -> u64 {
        self.last_seq + 1
    }

    /// Stores under the next sequence id.
    pub fn record(&mut self, draft: SnapshotDraft) -> (u64, Digest) {
        let seq = self.next_seq_id();
        self.record_at(seq, draft).expect("next id is in order")
    }

    /// Stores under a caller-chosen id, which must exceed every earlier one.
    pub fn record_at(&mut self, seq_id: u64, draft: SnapshotDraft) -> Result<(u64, Digest), MonitorError> {
        if seq_id <= self.last_seq {
            return Err(MonitorError::SequenceOrder {
                got: seq_id,
                last: self.last_seq,
            });
        }
        let snapshot = draft.with_seq(seq_id);
        let h = snapshot.payload_hash();
        self.by_hash.insert(h, seq_id);
        self.by_seq.insert(
            seq_id,
            StoredSnapshot {
                snapshot,
                recorded_hash: h,
            },
        );
        self.last_seq = seq_id;
        Ok((seq_id, h))
    }

    pub fn get(&self, seq_id: u64) -> Option<&Snapshot> {
        self.by_seq.get(&seq_id).map(|s| &s.snapshot)
    }

    pub fn get_by_hash(&self, h: &Digest) -> Option<&Snapshot> {
        self.by_hash.get(h).and_then(|s| self.get(*s))
    }

    pub fn hash_of(&self, seq_id: u64) -> Option<Digest> {
        self.by_seq.get(&seq_id).map(|s| s.recorded_hash)
    }

    pub fn len(&self) -> usize {
        self.by_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_seq.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Snapshot> {
        self.by_seq.values().map(|s| &s.snapshot)
    }

    /// Mutable access that bypasses hashing; exists to model storage tampering.
    pub fn get_mut_unchecked(&mut self, seq_id: u64) -> Option<&mut Snapshot> {
        self.by_seq.get_mut(&seq_id).map(|s| &mut s.snapshot)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    /// Snapshots whose recomputed hash is not on the sealed chain exactly once.
    pub orphans: Vec<u64>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.orphans.is_empty()
    }
}

/// Recomputes every stored snapshot's hash and checks it appears exactly
/// once among the ledger's sealed transactions.
pub fn audit(store: &SnapshotStore, ledger: &Ledger) -> AuditReport {
    let mut report = AuditReport::default();
    for s in store.iter() {
        report.checked += 1;
        if ledger.occurrences(&s.payload_hash()) != 1 {
            report.orphans.push(s.seq_id);
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionThreshold {
    pub th_v: f64,
    pub opt_mean: f64,
    pub opt_std: f64,
}

/// `th_v = mean + s` over the optimization-set MSEs, with `s` the sample
/// standard deviation (divisor `n - 1`).
pub fn compute_threshold(opt_mses: &[f64]) -> Result<DetectionThreshold, MonitorError> {
    let n = opt_mses.len();
    if n < 2 {
        return Err(MonitorError::InsufficientData(format!(
            "threshold needs at least 2 values, got {n}"
        )));
    }
    if opt_mses.iter().any(|v| !v.is_finite()) {
        return Err(MonitorError::InvalidFeature("non-finite MSE".into()));
    }
    // Shifting by the first value keeps a constant list exactly constant.
    let shift = opt_mses[0];
    let opt_mean = shift + opt_mses.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    let ss: f64 = opt_mses.iter().map(|v| (v - opt_mean).powi(2)).sum();
    let opt_std = (ss / (n - 1) as f64).sqrt();
    Ok(DetectionThreshold {
        th_v: opt_mean + opt_std,
        opt_mean,
        opt_std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Normal,
    Malicious,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Normal => "normal",
            VerdictLabel::Malicious => "malicious",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub seq_id: u64,
    pub device_id: String,
    pub mse: f64,
    pub threshold: f64,
    pub label: VerdictLabel,
    pub tick: u64,
    /// Wall time spent scoring; the only non-deterministic field.
    pub elapsed_micros: f64,
}

/// Malicious iff `mse > th_v`; a tie is normal.
pub fn label_for(mse: f64, threshold: &DetectionThreshold) -> VerdictLabel {
    if mse > threshold.th_v {
        VerdictLabel::Malicious
    } else {
        VerdictLabel::Normal
    }
}

/// Fitted model plus its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub model: AutoencoderModel,
    pub threshold: DetectionThreshold,
}

impl Detector {
    pub fn score(&self, features: &[f64]) -> Result<f64, MonitorError> {
        Ok(self.model.score(features)?)
    }
}

pub fn classify(detector: &Detector, snapshot: &Snapshot) -> Result<Verdict, MonitorError> {
    let start = Instant::now();
    let mse = detector.score(snapshot.features.values())?;
    let elapsed_micros = start.elapsed().as_secs_f64() * 1e6;
    Ok(Verdict {
        seq_id: snapshot.seq_id,
        device_id: snapshot.device_id.clone(),
        mse,
        threshold: detector.threshold.th_v,
        label: label_for(mse, &detector.threshold),
        tick: snapshot.tick,
        elapsed_micros,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Share of rows used for T_DS; the rest is Opt_DS.
    pub split_ratio: f64,
    pub seed: u64,
    pub train: TrainConfig,
    /// Learning rates tried; the lowest Opt_DS MSE wins.
    pub lr_grid: Vec<f64>,
    /// Defaults to [`Architecture::default_for`] the data width.
    pub architecture: Option<Architecture>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            split_ratio: 2.0 / 3.0,
            seed: 7,
            train: TrainConfig::default(),
            lr_grid: vec![0.1, 0.01, 0.001],
            architecture: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub detector: Detector,
    pub opt_mses: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub lr_n: f64,
    /// Share of Opt_DS rows above `th_v`.
    pub opt_fpr: f64,
    pub t_rows: usize,
    pub opt_rows: usize,
}

/// Splits benign rows into T_DS and Opt_DS, fits the normalizer on T_DS,
/// trains with a learning-rate search, and thresholds on Opt_DS MSEs.
pub fn fit(benign: &Array2<f64>, config: &FitConfig) -> Result<FitOutcome, MonitorError> {
    let n = benign.nrows();
    if n < MIN_FIT_ROWS {
        return Err(MonitorError::InsufficientData(format!(
            "fit needs at least {MIN_FIT_ROWS} snapshots, got {n}"
        )));
    }
    if benign.iter().any(|v| !v.is_finite()) {
        return Err(MonitorError::InvalidFeature("non-finite value in training data".into()));
    }
    let (t_idx, o_idx) = split_indices(n, config.split_ratio, config.seed)?;
    let t_raw = benign.select(Axis(0), &t_idx);
    let o_raw = benign.select(Axis(0), &o_idx);

    let arch = match &config.architecture {
        Some(a) => a.clone(),
        None => Architecture::default_for(benign.ncols()),
    };
    if arch.input_dim() != benign.ncols() {
        return Err(NnError::Dimension {
            expected: arch.input_dim(),
            found: benign.ncols(),
        }
        .into());
    }
    let mut model = init_model(&arch, &mut SimRng::derive(config.seed, "monitor/init"))?;
    model.normalizer = Normalizer::fit(&t_raw);
    let t_ds = model.normalizer.normalize_rows(&t_raw);
    let opt_ds = model.normalizer.normalize_rows(&o_raw);
    let train_cfg = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let outcome = tune_learning_rate(&model, &t_ds, &opt_ds, &train_cfg, &config.lr_grid)?;
    let opt_mses = outcome.model.reconstruction_errors(&opt_ds)?;
    let threshold = compute_threshold(&opt_mses)?;
    let above = opt_mses.iter().filter(|&&m| m > threshold.th_v).count();
    Ok(FitOutcome {
        detector: Detector {
            model: outcome.model,
            threshold,
        },
        opt_fpr: above as f64 / opt_mses.len() as f64,
        opt_mses,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        lr_n: outcome.lr_n,
        t_rows: t_idx.len(),
        opt_rows: o_idx.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrustStatus {
    Trusted,
    Untrusted,
    NoData,
}

impl TrustStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrustStatus::Trusted => "trusted",
            TrustStatus::Untrusted => "untrusted",
            TrustStatus::NoData => "no-data",
        }
    }
}

/// Sliding window over the last `capacity` verdicts.
#[derive(Debug, Clone)]
pub struct ZoneTrust {
    window: VecDeque<bool>,
    capacity: usize,
    malicious: usize,
    tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub trust: f64,
    pub malicious_count: usize,
    pub observed: usize,
    pub window: usize,
    pub tau: f64,
    pub status: TrustStatus,
}

impl ZoneTrust {
    pub fn new(capacity: usize, tau: f64) -> Result<Self, MonitorError> {
        if capacity == 0 {
            return Err(MonitorError::InvalidConfig("trust window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(MonitorError::InvalidConfig("tau must lie in [0, 1]".into()));
        }
        Ok(Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            malicious: 0,
            tau,
        })
    }

    pub fn push(&mut self, label: VerdictLabel) {
        if self.window.len() == self.capacity && self.window.pop_front() == Some(true) {
            self.malicious -= 1;
        }
        let bad = label == VerdictLabel::Malicious;
        self.window.push_back(bad);
        self.malicious += bad as usize;
    }

    pub fn trust(&self) -> f64 {
        if self.window.is_empty() {
            1.0
        } else {
            1.0 - self.malicious as f64 / self.window.len() as f64
        }
    }

    pub fn report(&self) -> TrustReport {
        let trust = self.trust();
        let status = if self.window.is_empty() {
            TrustStatus::NoData
        } else if trust >= self.tau {
            TrustStatus::Trusted
        } else {
            TrustStatus::Untrusted
        };
        TrustReport {
            trust,
            malicious_count: self.malicious,
            observed: self.window.len(),
            window: self.capacity,
            tau: self.tau,
            status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub seq_id: u64,
    pub device_id: String,
    pub payload_hash: Digest,
    pub mse: f64,
    pub threshold: f64,
    pub tick: u64,
}

/// One zone's monitor: owns the store, the trust window, and the history of
/// verdicts and alerts.
#[derive(Debug, Clone)]
pub struct BehaviorMonitor {
    pub store: SnapshotStore,
    detector: Option<Detector>,
    trust: ZoneTrust,
    verdicts: Vec<Verdict>,
    alerts: Vec<Alert>,
    sensor_hints: BTreeMap<String, u64>,
}

impl BehaviorMonitor {
    pub fn new(window: usize, tau: f64) -> Result<Self, MonitorError> {
        Ok(Self {
            store: SnapshotStore::new(),
            detector: None,
            trust: ZoneTrust::new(window, tau)?,
            verdicts: Vec::new(),
            alerts: Vec::new(),
            sensor_hints: BTreeMap::new(),
        })
    }

    pub fn with_detector(mut self, detector: Detector) -> Self {
        self.detector = Some(detector);
        self
    }

    pub fn set_detector(&mut self, detector: Detector) {
        self.detector = Some(detector);
    }

    pub fn detector(&self) -> Option<&Detector> {
        self.detector.as_ref()
    }

    /// Records, classifies and windows one snapshot stored under `seq_id`.
    pub fn ingest_at(&mut self, seq_id: u64, draft: SnapshotDraft) -> Result<(Verdict, Option<Alert>), MonitorError> {
        let detector = self.detector.as_ref().ok_or(MonitorError::NotTrained)?;
        let (seq, h) = self.store.record_at(seq_id, draft)?;
        let verdict = classify(detector, self.store.get(seq).unwrap())?;
        Ok(self.emit(verdict, h))
    }

    pub fn ingest(&mut self, draft: SnapshotDraft) -> Result<(Verdict, Option<Alert>), MonitorError> {
        let seq = self.store.next_seq_id();
        self.ingest_at(seq, draft)
    }

    fn emit(&mut self, verdict: Verdict, payload_hash: Digest) -> (Verdict, Option<Alert>) {
        self.trust.push(verdict.label);
        let alert = (verdict.label == VerdictLabel::Malicious).then(|| Alert {
            seq_id: verdict.seq_id,
            device_id: verdict.device_id.clone(),
            payload_hash,
            mse: verdict.mse,
            threshold: verdict.threshold,
            tick: verdict.tick,
        });
        if let Some(a) = &alert {
            self.alerts.push(a.clone());
        }
        self.verdicts.push(verdict.clone());
        (verdict, alert)
    }

    /// Records every snapshot, scores them in parallel, then windows the
    /// verdicts in ingestion order.
    pub fn monitor_stream(
        &mut self,
        drafts: impl IntoIterator<Item = SnapshotDraft>,
    ) -> Result<Vec<(Verdict, Option<Alert>)>, MonitorError> {
        let detector = self.detector.clone().ok_or(MonitorError::NotTrained)?;
        let recorded: Vec<(u64, Digest)> = drafts.into_iter().map(|d| self.store.record(d)).collect();
        let snapshots: Vec<&Snapshot> = recorded.iter().map(|(s, _)| self.store.get(*s).unwrap()).collect();
        let verdicts: Vec<Verdict> = snapshots
            .par_iter()
            .map(|s| classify(&detector, s))
            .collect::<Result<_, _>>()?;
        Ok(verdicts
            .into_iter()
            .zip(recorded)
            .map(|(v, (_, h))| self.emit(v, h))
            .collect())
    }

    pub fn trust_level(&self) -> TrustReport {
        self.trust.report()
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    /// Counts a gated-out sensor reading against a device. Hints are reported
    /// but never change a verdict.
    pub fn note_sensor_rejection(&mut self, device_id: &str) {
        *self.sensor_hints.entry(device_id.to_string()).or_default() += 1;
    }

    pub fn sensor_hints(&self) -> &BTreeMap<String, u64> {
        &self.sensor_hints
    }
}

pub const VERDICT_HEADER: &str = "seq_id,device_id,mse,threshold,label,tick,elapsed_micros";

pub fn write_verdicts_csv(verdicts: &[Verdict], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{VERDICT_HEADER}")?;
    for v in verdicts {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.3}",
            v.seq_id,
            v.device_id,
            v.mse,
            v.threshold,
            v.label.as_str(),
            v.tick,
            v.elapsed_micros
        )?;
    }
    Ok(())
}

/// Persisted detector: the model container plus its threshold record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub model: ModelFile,
    pub threshold: DetectionThreshold,
}

impl MonitorState {
    pub fn from_detector(d: &Detector) -> Self {
        Self {
            model: ModelFile::from(&d.model),
            threshold: d.threshold,
        }
    }

    pub fn into_detector(self) -> Result<Detector, MonitorError> {
        let t = self.threshold;
        if !(t.th_v.is_finite() && t.th_v >= 0.0) || t.th_v != t.opt_mean + t.opt_std {
            return Err(MonitorError::State("threshold record is inconsistent".into()));
        }
        Ok(Detector {
            model: AutoencoderModel::try_from(self.model)?,
            threshold: t,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), MonitorError> {
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        std::fs::write(path, text).map_err(|e| MonitorError::State(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, MonitorError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| MonitorError::State(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| MonitorError::State(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::ledger::Transaction;
    use crate::nn::Activation;
    use proptest::prelude::*;

    fn features(v: f64) -> FeatureVector {
        FeatureVector::new(vec![v; FEATURE_COUNT]).unwrap()
    }

    fn draft(device: &str, v: f64, tick: u64) -> SnapshotDraft {
        SnapshotDraft {
            device_id: device.into(),
            features: features(v),
            meta: SnapshotMeta::default(),
            tick,
        }
    }

    #[test]
    fn threshold_hand_cases() {
        assert_eq!(compute_threshold(&[1.0, 2.0, 3.0]).unwrap().th_v, 3.0);
        let t = compute_threshold(&[0.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!((t.opt_mean, t.opt_std, t.th_v), (1.0, 2.0, 3.0));
        for c in [0.1, 1.0 / 3.0, 7e-5] {
            assert_eq!(compute_threshold(&[c; 7]).unwrap().th_v, c);
        }
        assert!(matches!(compute_threshold(&[1.0]), Err(MonitorError::InsufficientData(_))));
    }

    #[test]
    fn feature_vector_rules() {
        assert!(FeatureVector::new(vec![0.0; 114]).is_err());
        let mut v = vec![0.0; FEATURE_COUNT];
        v[3] = f64::INFINITY;
        assert!(FeatureVector::new(v).is_err());
    }

    #[test]
    fn store_indexes_by_seq_and_hash() {
        let mut s = SnapshotStore::new();
        let (seq, h) = s.record(draft("d1", 1.0, 0));
        assert_eq!(seq, 1);
        assert_eq!(s.get(1).unwrap().device_id, "d1");
        assert_eq!(s.get_by_hash(&h).unwrap().seq_id, 1);
        assert_eq!(s.record(draft("d1", 2.0, 1)).0, 2);
        assert!(matches!(s.record_at(2, draft("d1", 3.0, 2)), Err(MonitorError::SequenceOrder { .. })));
        assert_eq!(s.record_at(10, draft("d1", 3.0, 2)).unwrap().0, 10);
    }

    #[test]
    fn audit_finds_tampered_snapshot() {
        let keys = KeyPair::generate(&mut SimRng::new(1));
        let mut store = SnapshotStore::new();
        let mut ledger = Ledger::new(2).unwrap();
        for i in 0..4 {
            let (seq, h) = store.record(draft("d", i as f64, i));
            ledger
                .submit(Transaction::signed(seq, "master", h, i, &keys), &keys.public())
                .unwrap();
        }
        assert_eq!(audit(&store, &ledger), AuditReport { checked: 4, orphans: vec![] });

        store.get_mut_unchecked(3).unwrap().meta.dst_port = "23".into();
        assert_eq!(audit(&store, &ledger).orphans, vec![3]);
        assert!(ledger.verify_chain().is_ok());
    }

    #[test]
    fn unsealed_snapshot_is_an_orphan() {
        let keys = KeyPair::generate(&mut SimRng::new(1));
        let mut store = SnapshotStore::new();
        let mut ledger = Ledger::new(5).unwrap();
        let (seq, h) = store.record(draft("d", 0.0, 0));
        ledger.submit(Transaction::signed(seq, "m", h, 0, &keys), &keys.public()).unwrap();
        assert_eq!(audit(&store, &ledger).orphans, vec![1]);
        ledger.flush(1);
        assert!(audit(&store, &ledger).is_clean());
    }

    #[test]
    fn trust_window_arithmetic() {
        let mut t = ZoneTrust::new(1000, 0.95).unwrap();
        assert_eq!(t.report().status, TrustStatus::NoData);
        assert_eq!(t.trust(), 1.0);
        for i in 0..1000 {
            t.push(if i % 20 == 0 { VerdictLabel::Malicious } else { VerdictLabel::Normal });
        }
        let r = t.report();
        assert_eq!(r.malicious_count, 50);
        assert_eq!(r.trust, 0.95);
        assert_eq!(r.status, TrustStatus::Trusted);

        let mut t = ZoneTrust::new(1000, 0.95).unwrap();
        for i in 0..1000 {
            t.push(if i % 10 == 0 { VerdictLabel::Malicious } else { VerdictLabel::Normal });
        }
        assert_eq!(t.report().status, TrustStatus::Untrusted);

        let mut t = ZoneTrust::new(100, 0.95).unwrap();
        for i in 0..100 {
            t.push(if i < 5 { VerdictLabel::Malicious } else { VerdictLabel::Normal });
        }
        assert_eq!(t.trust(), 0.95);
    }

    #[test]
    fn window_evicts_oldest() {
        let mut t = ZoneTrust::new(3, 0.5).unwrap();
        t.push(VerdictLabel::Malicious);
        t.push(VerdictLabel::Normal);
        t.push(VerdictLabel::Normal);
        assert_eq!(t.report().malicious_count, 1);
        t.push(VerdictLabel::Normal);
        assert_eq!(t.report().malicious_count, 0);
        assert_eq!(t.trust(), 1.0);
    }

    #[test]
    fn tie_is_normal() {
        let th = compute_threshold(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(label_for(3.0, &th), VerdictLabel::Normal);
        assert_eq!(label_for(3.0000001, &th), VerdictLabel::Malicious);
    }

    fn tiny_detector() -> Detector {
        let arch = Architecture::new(vec![FEATURE_COUNT, 4, FEATURE_COUNT], Activation::Tanh).unwrap();
        let model = init_model(&arch, &mut SimRng::new(3)).unwrap();
        Detector {
            model,
            threshold: compute_threshold(&[0.0, 2.0]).unwrap(),
        }
    }

    #[test]
    fn unfitted_monitor_refuses() {
        let mut m = BehaviorMonitor::new(10, 0.9).unwrap();
        assert_eq!(m.ingest(draft("d", 0.0, 0)).unwrap_err(), MonitorError::NotTrained);
        assert!(m.store.is_empty());
    }

    #[test]
    fn stream_order_and_alerts() {
        let mut a = BehaviorMonitor::new(10, 0.9).unwrap().with_detector(tiny_detector());
        let drafts: Vec<_> = (0..40).map(|i| draft("d", (i % 7) as f64 - 3.0, i)).collect();
        let out = a.monitor_stream(drafts.clone()).unwrap();
        let mut b = BehaviorMonitor::new(10, 0.9).unwrap().with_detector(tiny_detector());
        for (i, d) in drafts.into_iter().enumerate() {
            let (v, alert) = b.ingest(d).unwrap();
            assert_eq!(v.seq_id, out[i].0.seq_id);
            assert_eq!(v.mse.to_bits(), out[i].0.mse.to_bits());
            assert_eq!(alert, out[i].1);
        }
        for (v, alert) in &out {
            assert_eq!(v.label == VerdictLabel::Malicious, v.mse > v.threshold);
            assert_eq!(alert.is_some(), v.label == VerdictLabel::Malicious);
            if let Some(al) = alert {
                assert_eq!(a.store.hash_of(al.seq_id), Some(al.payload_hash));
            }
        }
        assert_eq!(a.trust_level(), b.trust_level());
    }

    #[test]
    fn fit_needs_fifty_rows() {
        let rows = Array2::zeros((49, FEATURE_COUNT));
        assert!(matches!(fit(&rows, &FitConfig::default()), Err(MonitorError::InsufficientData(_))));
    }

    #[test]
    fn state_round_trip() {
        let d = tiny_detector();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("state.json");
        MonitorState::from_detector(&d).save(&p).unwrap();
        let back = MonitorState::load(&p).unwrap().into_detector().unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn threshold_identity(v in prop::collection::vec(0.0f64..1e6, 2..200)) {
            let t = compute_threshold(&v).unwrap();
            prop_assert_eq!(t.th_v - (t.opt_mean + t.opt_std), 0.0);
            prop_assert!(t.th_v >= 0.0);
        }

        #[test]
        fn malicious_never_raises_full_window_trust(labels in prop::collection::vec(any::<bool>(), 20..60)) {
            let mut t = ZoneTrust::new(20, 0.9).unwrap();
            for l in labels {
                t.push(if l { VerdictLabel::Malicious } else { VerdictLabel::Normal });
            }
            let before = t.trust();
            t.push(VerdictLabel::Malicious);
            prop_assert!(t.trust() <= before);
        }
    }
}
