use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zonetrust::fusion::{SensorSpec, DEFAULT_GATE_P};
use zonetrust::monitor::{FitConfig, DEFAULT_TAU, DEFAULT_WINDOW};
use zonetrust::nn::TrainConfig;
use zonetrust::zone::ZoneConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub topology: Topology,
    pub train: TrainSection,
    pub zone: ZoneSection,
    pub fusion: FusionSection,
    pub baselines: BaselineSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub model: PathBuf,
    pub ledger: PathBuf,
    pub reports: PathBuf,
}

/// Used by `simulate` when no scenario file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub zones: Vec<String>,
    pub devices_per_zone: usize,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Fixed learning rate; when absent the grid is searched.
    pub lr_n: Option<f64>,
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub split_ratio: f64,
    /// Benign rows generated when `simulate` has to train its own model.
    pub sim_train_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneSection {
    pub blocksize: usize,
    #[serde(rename = "W")]
    pub window: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub gate_p: f64,
    pub sensors: Vec<SensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorEntry {
    pub id: String,
    /// Measurement variance, m².
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub trees: usize,
    pub subsample: usize,
    pub lof_k: usize,
    pub quantile: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: Paths::default(),
            topology: Topology::default(),
            train: TrainSection::default(),
            zone: ZoneSection::default(),
            fusion: FusionSection::default(),
            baselines: BaselineSection::default(),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            model: "out/model.json".into(),
            ledger: "out/ledger".into(),
            reports: "out/reports".into(),
        }
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            zones: vec!["home".into(), "office".into(), "plant".into()],
            devices_per_zone: 3,
            ticks: 100,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let f = FitConfig::default();
        Self {
            lr_n: None,
            lr_grid: f.lr_grid,
            epochs: t.epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            split_ratio: f.split_ratio,
            sim_train_rows: 3000,
        }
    }
}

impl Default for ZoneSection {
    fn default() -> Self {
        let z = ZoneConfig::default();
        Self {
            blocksize: z.blocksize,
            window: DEFAULT_WINDOW,
            tau: DEFAULT_TAU,
        }
    }
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            gate_p: DEFAULT_GATE_P,
            sensors: vec![
                SensorEntry { id: "gps".into(), r: 25.0 },
                SensorEntry { id: "baro".into(), r: 4.0 },
                SensorEntry { id: "radar".into(), r: 1.0 },
            ],
        }
    }
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            trees: zonetrust::baselines::DEFAULT_TREES,
            subsample: zonetrust::baselines::DEFAULT_SUBSAMPLE,
            lof_k: zonetrust::baselines::DEFAULT_LOF_K,
            quantile: zonetrust::baselines::DEFAULT_QUANTILE,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::validation(m));
        let t = &self.train;
        if let Some(lr) = t.lr_n {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("lr_n must be positive, got {lr}"));
            }
        }
        if t.lr_n.is_none() && t.lr_grid.is_empty() {
            return fail("lr_grid is empty and no lr_n given".into());
        }
        if let Some(lr) = t.lr_grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return fail(format!("lr_grid entries must be positive, got {lr}"));
        }
        for (name, v) in [
            ("epochs", t.epochs),
            ("patience", t.patience),
            ("batch_size", t.batch_size),
            ("sim_train_rows", t.sim_train_rows),
            ("blocksize", self.zone.blocksize),
            ("W", self.zone.window),
            ("trees", self.baselines.trees),
            ("subsample", self.baselines.subsample),
            ("lof_k", self.baselines.lof_k),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !(t.split_ratio > 0.0 && t.split_ratio < 1.0) {
            return fail(format!("split_ratio must lie in (0, 1), got {}", t.split_ratio));
        }
        if !(self.zone.tau >= 0.0 && self.zone.tau <= 1.0) {
            return fail(format!("tau must lie in [0, 1], got {}", self.zone.tau));
        }
        if !(self.baselines.quantile >= 0.0 && self.baselines.quantile <= 1.0) {
            return fail(format!("quantile must lie in [0, 1], got {}", self.baselines.quantile));
        }
        for s in self.sensor_specs() {
            s.validate().map_err(|e| CliError::validation(e.to_string()))?;
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        let t = &self.train;
        FitConfig {
            split_ratio: t.split_ratio,
            seed: self.seed,
            train: TrainConfig {
                lr_n: t.lr_n.unwrap_or(t.lr_grid[0]),
                epochs: t.epochs,
                batch_size: t.batch_size,
                seed: self.seed,
                patience: t.patience,
            },
            lr_grid: match t.lr_n {
                Some(lr) => vec![lr],
                None => t.lr_grid.clone(),
            },
            architecture: None,
        }
    }

    pub fn zone_config(&self) -> ZoneConfig {
        ZoneConfig {
            blocksize: self.zone.blocksize,
            window: self.zone.window,
            tau: self.zone.tau,
        }
    }

    pub fn sensor_specs(&self) -> Vec<SensorSpec> {
        self.fusion
            .sensors
            .iter()
            .map(|s| SensorSpec {
                gate_p: self.fusion.gate_p,
                ..SensorSpec::altitude(&s.id, s.r)
            })
            .collect()
    }
}
