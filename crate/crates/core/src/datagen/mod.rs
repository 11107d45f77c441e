//! Synthetic benign and Mirai-like traffic, dataset CSV I/O and splits.
//!
//! Generated and loaded datasets share one 115-column layout (see
//! [`features`]) so either can feed the monitor and the baselines.

pub mod features;
mod profile;

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{feature_names, group_indices, FeatureGroup, FEATURE_COUNT};
pub use profile::{
    AttackProfile, BenignProfile, BenignShape, Component, GroupInflation, RegimeParams, TrafficSource,
    ATTACK_NAMES,
};

use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("profile: {0}")]
    Profile(String),
    #[error("unknown attack {name:?}; valid options: {valid}")]
    UnknownAttack { name: String, valid: String },
    #[error("{0}")]
    Io(String),
    #[error("expected {expected} feature columns, found {found}")]
    Format { expected: usize, found: usize },
    #[error("row {row}, column {column}: cannot parse {value:?}")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("dataset is empty")]
    Empty,
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("split of {n} rows at ratio {ratio} leaves one side empty")]
    EmptySplit { n: usize, ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "normal" | "0" => Some(Label::Benign),
            "malicious" | "attack" | "1" => Some(Label::Malicious),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// One row per snapshot, [`FEATURE_COUNT`] columns.
    pub rows: Array2<f64>,
    /// Present when the source had a label column.
    pub labels: Option<Vec<Label>>,
    pub device_ids: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            rows: self.rows.select(Axis(0), idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            device_ids: idx.iter().map(|&i| self.device_ids[i].clone()).collect(),
        }
    }

    /// Row-wise concatenation. Labels survive only if both sides have them.
    pub fn concat(&self, other: &Self) -> Self {
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self {
            rows: ndarray::concatenate(Axis(0), &[self.rows.view(), other.rows.view()]).expect("equal widths"),
            labels,
            device_ids: self.device_ids.iter().chain(&other.device_ids).cloned().collect(),
        }
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let labels = self.labels.as_deref().unwrap_or(&[]);
        let malicious = labels.iter().filter(|&&l| l == Label::Malicious).count();
        (labels.len() - malicious, malicious)
    }
}

fn dataset(rows: Vec<Vec<f64>>, label: Label, device: &str) -> LabeledDataset {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    LabeledDataset {
        rows: Array2::from_shape_vec((n, FEATURE_COUNT), flat).expect("fixed width"),
        labels: Some(vec![label; n]),
        device_ids: vec![device.to_string(); n],
    }
}

pub fn gen_benign(profile: &BenignProfile, n: usize, seed: u64) -> Result<LabeledDataset, DataError> {
    profile.validate()?;
    let mut rng = SimRng::derive(seed, "datagen/benign");
    let rows = (0..n as u64).map(|i| profile.sample(i, &mut rng)).collect();
    Ok(dataset(rows, Label::Benign, "synthetic"))
}

/// Benign draws with the attack's groups inflated, all labeled malicious.
pub fn gen_attack(
    attack: &AttackProfile,
    base: &BenignProfile,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    attack.validate()?;
    base.validate()?;
    let mut rng = SimRng::derive(seed, &format!("datagen/{}", attack.name));
    let rows = (0..n as u64)
        .map(|i| {
            let mut row = base.sample(i, &mut rng);
            attack.apply(&mut row, &mut rng);
            row
        })
        .collect();
    Ok(dataset(rows, Label::Malicious, "synthetic"))
}

/// Seeded shuffle, then the first `floor(n * ratio)` rows form the first part.
pub fn split(data: &LabeledDataset, ratio: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let (a, b) = split_indices(data.len(), ratio, seed)?;
    Ok((data.select(&a), data.select(&b)))
}

/// Index form of [`split`].
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::InvalidRatio(ratio));
    }
    if n == 0 {
        return Err(DataError::Empty);
    }
    // The guard absorbs representation error, e.g. 99 * (2/3).
    let cut = (n as f64 * ratio + 1e-9).floor() as usize;
    if cut == 0 || cut == n {
        return Err(DataError::EmptySplit { n, ratio });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SimRng::derive(seed, "datagen/split").shuffle(&mut order);
    let rest = order.split_off(cut);
    Ok((order, rest))
}

const DEVICE_COLUMN: &str = "device_id";
const LABEL_COLUMN: &str = "label";

pub fn load_csv(path: &Path) -> Result<LabeledDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    read_csv(file)
}

pub fn read_csv(input: impl std::io::Read) -> Result<LabeledDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| DataError::Io(e.to_string()))?.clone();
    let device_col = header.iter().position(|h| h.trim() == DEVICE_COLUMN);
    let label_col = header.iter().position(|h| h.trim() == LABEL_COLUMN);
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != device_col && Some(i) != label_col)
        .collect();
    if feature_cols.len() != FEATURE_COUNT {
        return Err(DataError::Format {
            expected: FEATURE_COUNT,
            found: feature_cols.len(),
        });
    }

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    let mut devices = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::BadRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(DataError::BadRow {
                row,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for &c in &feature_cols {
            let cell = record[c].trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => flat.push(v),
                _ => {
                    return Err(DataError::Parse {
                        row,
                        column: header[c].to_string(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        if let Some(c) = label_col {
            labels.push(Label::parse(&record[c]).ok_or_else(|| DataError::Parse {
                row,
                column: LABEL_COLUMN.to_string(),
                value: record[c].to_string(),
            })?);
        }
        devices.push(device_col.map_or_else(String::new, |c| record[c].to_string()));
    }
    let n = devices.len();
    Ok(LabeledDataset {
        rows: Array2::from_shape_vec((n, FEATURE_COUNT), flat).expect("rows checked"),
        labels: label_col.map(|_| labels),
        device_ids: devices,
    })
}

/// Writes `device_id`, the feature columns and, if present, `label`. Floats
/// use shortest round-trip formatting, so output is deterministic.
pub fn write_csv(data: &LabeledDataset, out: impl std::io::Write) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![DEVICE_COLUMN.to_string()];
    header.extend(feature_names());
    if data.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    w.write_record(&header).map_err(io)?;
    for (i, row) in data.rows.rows().into_iter().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(data.device_ids[i].clone());
        rec.extend(row.iter().map(|v| v.to_string()));
        if let Some(labels) = &data.labels {
            rec.push(labels[i].as_str().to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

pub fn save_csv(data: &LabeledDataset, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    write_csv(data, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> BenignProfile {
        BenignShape::default().expand().unwrap()
    }

    #[test]
    fn benign_is_seeded_and_finite() {
        let a = gen_benign(&profile(), 200, 3).unwrap();
        let b = gen_benign(&profile(), 200, 3).unwrap();
        let c = gen_benign(&profile(), 200, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rows, c.rows);
        assert!(a.rows.iter().all(|v| v.is_finite()));
        assert_eq!(a.label_counts(), (200, 0));
    }

    #[test]
    fn profile_validation() {
        let mut p = profile();
        p.components[0].weight += 0.1;
        assert!(p.validate().is_err());
        let mut p = profile();
        p.components[1].std[3] = 0.0;
        assert!(p.validate().is_err());
        assert!(AttackProfile {
            name: "weak".into(),
            inflations: vec![GroupInflation {
                group: FeatureGroup::Connection,
                factor: 1.0,
                jitter: 0.0
            }]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn attack_profiles_differ_in_groups() {
        let flood = AttackProfile::mirai_flood();
        let scan = AttackProfile::mirai_scan();
        assert!(flood.affects(FeatureGroup::PacketRate) && !flood.affects(FeatureGroup::Connection));
        assert!(scan.affects(FeatureGroup::Connection) && !scan.affects(FeatureGroup::PacketRate));
        let err = AttackProfile::by_name("mirai-ack").unwrap_err().to_string();
        assert!(err.contains("mirai-flood") && err.contains("mirai-scan"));
    }

    #[test]
    fn split_floor_rule_and_permutation() {
        let d = gen_benign(&profile(), 99, 1).unwrap();
        let (t, o) = split(&d, 2.0 / 3.0, 5).unwrap();
        assert_eq!((t.len(), o.len()), (66, 33));
        assert_eq!(split(&d, 2.0 / 3.0, 5).unwrap().0, t);

        let key = |r: ndarray::ArrayView1<f64>| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let mut before: Vec<_> = d.rows.rows().into_iter().map(key).collect();
        let mut after: Vec<_> = t.rows.rows().into_iter().chain(o.rows.rows()).map(key).collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);

        assert_eq!(split(&d, 1.0, 5), Err(DataError::InvalidRatio(1.0)));
        assert_eq!(split(&d.select(&[]), 0.5, 5), Err(DataError::Empty));
    }

    #[test]
    fn csv_round_trip_with_labels() {
        let d = gen_benign(&profile(), 2, 1)
            .unwrap()
            .concat(&gen_attack(&AttackProfile::mirai_scan(), &profile(), 1, 1).unwrap());
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.label_counts(), (2, 1));
    }

    fn header(n: usize) -> String {
        feature_names().into_iter().take(n).collect::<Vec<_>>().join(",")
    }

    #[test]
    fn csv_without_label_or_device_columns() {
        let text = format!("{}\n{}\n{}\n", header(115), vec!["1.5"; 115].join(","), vec!["-2"; 115].join(","));
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.labels.is_none());
        assert_eq!(d.rows[[0, 0]], 1.5);
        assert_eq!(d.rows[[1, 114]], -2.0);
    }

    #[test]
    fn csv_errors_name_the_problem() {
        let text = format!("{}\n{}\n", header(114), vec!["1"; 114].join(","));
        let err = read_csv(text.as_bytes()).unwrap_err();
        assert_eq!(err, DataError::Format { expected: 115, found: 114 });
        assert!(err.to_string().contains("expected 115"));

        let mut cells = vec!["1".to_string(); 115];
        cells[7] = "abc".into();
        let text = format!("{}\n{}\n{}\n", header(115), vec!["1"; 115].join(","), cells.join(","));
        match read_csv(text.as_bytes()).unwrap_err() {
            DataError::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, feature_names()[7]);
            }
            e => panic!("unexpected {e}"),
        }

        cells[7] = "NaN".into();
        let text = format!("{}\n{}\n", header(115), cells.join(","));
        assert!(matches!(read_csv(text.as_bytes()), Err(DataError::Parse { row: 1, .. })));
    }
}
