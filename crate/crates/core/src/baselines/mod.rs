//! Comparison detectors and the evaluation harness.
//!
//! Every detector maps a raw feature row to a score where larger means more
//! anomalous. [`evaluate`] thresholds the scores, counts the confusion
//! matrix and times each instance.

mod iforest;
mod lof;

use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use iforest::{average_path_length, score_from_path, IsolationForest, IsolationTree, DEFAULT_SUBSAMPLE, DEFAULT_TREES};
pub use lof::{LofModel, MIN_REACH};

use crate::datagen::{Label, LabeledDataset};
use crate::monitor::Detector;
use crate::nn::Normalizer;

pub const DEFAULT_LOF_K: usize = 20;
pub const DEFAULT_QUANTILE: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("evaluation needs both benign and malicious rows ({benign} benign, {malicious} malicious)")]
    DegenerateEval { benign: usize, malicious: usize },
    #[error("scoring failed: {0}")]
    Score(String),
}

pub trait AnomalyScorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64, BaselineError>;
}

/// The autoencoder: score is the reconstruction MSE of the normalized row.
pub struct AutoencoderScorer<'a>(pub &'a Detector);

impl AnomalyScorer for AutoencoderScorer<'_> {
    fn name(&self) -> &str {
        "autoencoder"
    }

    fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64, BaselineError> {
        let row = x.to_vec();
        self.0.model.score(&row).map_err(|e| BaselineError::Score(e.to_string()))
    }
}

/// Isolation Forest on raw features; axis-aligned uniform splits make it
/// indifferent to per-feature affine scaling.
pub struct IForestScorer(pub IsolationForest);

impl IForestScorer {
    pub fn fit(train: &Array2<f64>, trees: usize, subsample: usize, seed: u64) -> Result<Self, BaselineError> {
        Ok(Self(IsolationForest::fit(train, trees, subsample.min(train.nrows()), seed)?))
    }
}

impl AnomalyScorer for IForestScorer {
    fn name(&self) -> &str {
        "iforest"
    }

    fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64, BaselineError> {
        check_dim(self.0.dim, x.len())?;
        Ok(self.0.score(x))
    }
}

/// LOF on z-scored features (fitted on the training rows), since raw
/// feature scales differ by orders of magnitude.
pub struct LofScorer {
    pub normalizer: Normalizer,
    pub model: LofModel,
}

impl LofScorer {
    pub fn fit(train: &Array2<f64>, k: usize) -> Result<Self, BaselineError> {
        let normalizer = Normalizer::fit(train);
        let model = LofModel::fit(&normalizer.normalize_rows(train), k)?;
        Ok(Self { normalizer, model })
    }
}

impl AnomalyScorer for LofScorer {
    fn name(&self) -> &str {
        "lof"
    }

    fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64, BaselineError> {
        check_dim(self.normalizer.dim(), x.len())?;
        let z = self.normalizer.normalize(&x.to_vec());
        Ok(self.model.score(ArrayView1::from(&z)))
    }
}

/// Adapter for ad-hoc score functions.
pub struct FnScorer<F> {
    pub name: String,
    pub f: F,
}

impl<F: Fn(ArrayView1<'_, f64>) -> f64 + Sync> AnomalyScorer for FnScorer<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64, BaselineError> {
        Ok((self.f)(x))
    }
}

fn check_dim(expected: usize, found: usize) -> Result<(), BaselineError> {
    if expected != found {
        return Err(BaselineError::Score(format!("expected {expected} features, found {found}")));
    }
    Ok(())
}

/// Linear-interpolation quantile (R type 7) of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn score_rows(scorer: &dyn AnomalyScorer, rows: &Array2<f64>) -> Result<Vec<f64>, BaselineError> {
    (0..rows.nrows())
        .into_par_iter()
        .map(|i| scorer.score(rows.row(i)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum ThresholdPolicy<'a> {
    /// A threshold fixed in advance, e.g. the autoencoder's `th_v`.
    Fixed(f64),
    /// The `q` quantile of scores on benign calibration rows.
    BenignQuantile { calibration: &'a Array2<f64>, q: f64 },
}

impl ThresholdPolicy<'_> {
    pub fn resolve(&self, scorer: &dyn AnomalyScorer) -> Result<f64, BaselineError> {
        match *self {
            ThresholdPolicy::Fixed(t) => Ok(t),
            ThresholdPolicy::BenignQuantile { calibration, q } => {
                if calibration.nrows() == 0 || !(0.0..=1.0).contains(&q) {
                    return Err(BaselineError::InvalidParameter(
                        "quantile policy needs calibration rows and q in [0, 1]".into(),
                    ));
                }
                Ok(quantile(&score_rows(scorer, calibration)?, q))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub latency_mean_us: f64,
    pub latency_std_us: f64,
    pub latency_p50_us: f64,
    pub latency_p99_us: f64,
}

/// Scores every row once, sequentially so each latency is uncontended, and
/// flags rows scoring strictly above the threshold.
pub fn evaluate(
    scorer: &dyn AnomalyScorer,
    data: &LabeledDataset,
    policy: ThresholdPolicy<'_>,
) -> Result<EvalReport, BaselineError> {
    let (benign, malicious) = data.label_counts();
    if benign == 0 || malicious == 0 {
        return Err(BaselineError::DegenerateEval { benign, malicious });
    }
    let labels = data.labels.as_ref().expect("counted above");
    let threshold = policy.resolve(scorer)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut latencies = Vec::with_capacity(data.len());
    for (i, row) in data.rows.rows().into_iter().enumerate() {
        let start = Instant::now();
        let s = scorer.score(row)?;
        latencies.push(start.elapsed().as_secs_f64() * 1e6);
        match (labels[i], s > threshold) {
            (Label::Malicious, true) => tp += 1,
            (Label::Malicious, false) => fn_ += 1,
            (Label::Benign, true) => fp += 1,
            (Label::Benign, false) => tn += 1,
        }
    }
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let var = latencies.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / latencies.len() as f64;
    Ok(EvalReport {
        detector: scorer.name().to_string(),
        threshold,
        tp,
        fp,
        tn,
        fn_,
        n: data.len(),
        tpr: tp as f64 / malicious as f64,
        fpr: fp as f64 / benign as f64,
        latency_mean_us: mean,
        latency_std_us: var.sqrt(),
        latency_p50_us: quantile(&latencies, 0.5),
        latency_p99_us: quantile(&latencies, 0.99),
    })
}

pub const REPORT_HEADER: &str =
    "detector,threshold,tp,fp,tn,fn,n,tpr,fpr,latency_mean_us,latency_std_us,latency_p50_us,latency_p99_us";

/// Index of the first latency column in [`REPORT_HEADER`].
pub const REPORT_LATENCY_FROM: usize = 9;

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}\n",
            r.detector,
            r.threshold,
            r.tp,
            r.fp,
            r.tn,
            r.fn_,
            r.n,
            r.tpr,
            r.fpr,
            r.latency_mean_us,
            r.latency_std_us,
            r.latency_p50_us,
            r.latency_p99_us
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub reports: Vec<EvalReport>,
}

pub fn reports_to_json(reports: &[EvalReport]) -> String {
    serde_json::to_string_pretty(&ReportFile {
        reports: reports.to_vec(),
    })
    .expect("reports serialize")
}

pub fn reports_from_json(text: &str) -> Result<Vec<EvalReport>, String> {
    serde_json::from_str::<ReportFile>(text)
        .map(|f| f.reports)
        .map_err(|e| e.to_string())
}

/// Whitespace table for bar charts: accuracy and detection time per detector.
pub fn reports_to_dat(reports: &[EvalReport]) -> String {
    let mut out = String::from("# idx detector tpr fpr latency_mean_ms latency_std_ms\n");
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "{} {} {:.6} {:.6} {:.6} {:.6}\n",
            i,
            r.detector,
            r.tpr,
            r.fpr,
            r.latency_mean_us / 1e3,
            r.latency_std_us / 1e3
        ));
    }
    out
}
