//! Benign mixture profiles and attack inflation profiles.

use serde::{Deserialize, Serialize};

use super::features::{layout, FeatureGroup, Stat, Stream, FEATURE_COUNT, WINDOW_LAMBDAS};
use super::DataError;
use crate::rng::SimRng;

/// Human-editable description of one traffic regime. [`BenignShape::expand`]
/// turns it into per-feature means and standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub name: String,
    pub weight: f64,
    /// Packets per second.
    pub rate: f64,
    /// Mean packet size in bytes.
    pub size: f64,
    /// Packet size standard deviation in bytes.
    pub size_spread: f64,
    /// Correlation between the two directions of a channel.
    pub rho: f64,
    /// Fraction of channel traffic carried by the busiest socket.
    pub socket_share: f64,
    /// Per-feature noise as a fraction of the feature mean.
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignShape {
    pub regimes: Vec<RegimeParams>,
    /// Relative change of every mean per generated row.
    pub drift_rate: f64,
}

impl Default for BenignShape {
    /// Mostly idle telemetry, regular active periods and rare noisy bursts.
    fn default() -> Self {
        let regime = |name: &str, weight, rate, size, size_spread, rho, socket_share, cv| RegimeParams {
            name: name.to_string(),
            weight,
            rate,
            size,
            size_spread,
            rho,
            socket_share,
            cv,
        };
        Self {
            regimes: vec![
                regime("idle", 0.85, 2.0, 90.0, 20.0, 0.3, 0.6, 0.05),
                regime("active", 0.14, 15.0, 420.0, 180.0, 0.5, 0.4, 0.08),
                regime("burst", 0.01, 40.0, 700.0, 400.0, 0.6, 0.3, 0.4),
            ],
            drift_rate: 0.0,
        }
    }
}

impl BenignShape {
    pub fn expand(&self) -> Result<BenignProfile, DataError> {
        let components = self.regimes.iter().map(expand_regime).collect();
        let profile = BenignProfile {
            components,
            drift_rate: self.drift_rate,
        };
        profile.validate()?;
        Ok(profile)
    }
}

fn expand_regime(p: &RegimeParams) -> Component {
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut mean = Vec::with_capacity(FEATURE_COUNT);
    for f in layout() {
        let count = p.rate / WINDOW_LAMBDAS[f.window];
        let m = match (f.stream, f.stat) {
            (Stream::MiDir, Stat::Weight) => count,
            (Stream::H, Stat::Weight) => 1.1 * count,
            (Stream::Hh | Stream::HhJit, Stat::Weight) => 0.8 * count,
            (Stream::HpHp, Stat::Weight) => 0.8 * p.socket_share * count,
            (Stream::HhJit, Stat::Mean) => 1.0 / p.rate,
            (Stream::HhJit, _) => 0.5 / (p.rate * p.rate),
            (Stream::H, Stat::Mean) => 1.05 * p.size,
            (_, Stat::Mean) => p.size,
            (_, Stat::Variance) => p.size_spread * p.size_spread,
            (_, Stat::Std) => p.size_spread,
            (_, Stat::Magnitude) => sqrt2 * p.size,
            (_, Stat::Radius) => sqrt2 * p.size_spread,
            (Stream::HpHp, Stat::Covariance) => 0.5 * p.rho * p.size_spread * p.size_spread,
            (_, Stat::Covariance) => p.rho * p.size_spread * p.size_spread,
            (Stream::HpHp, Stat::Pcc) => 0.5 * p.rho,
            (_, Stat::Pcc) => p.rho,
        };
        mean.push(m);
    }
    let std = mean.iter().map(|m| (p.cv * m.abs()).max(1e-9)).collect();
    Component {
        weight: p.weight,
        mean,
        std,
    }
}

/// One diagonal Gaussian mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignProfile {
    pub components: Vec<Component>,
    pub drift_rate: f64,
}

impl BenignProfile {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Profile(m));
        if self.components.is_empty() {
            return bad("no mixture components".into());
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights sum to {total}, not 1"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0) {
                return bad(format!("component {i}: weight must be positive"));
            }
            if c.mean.len() != FEATURE_COUNT || c.std.len() != FEATURE_COUNT {
                return bad(format!("component {i}: expected {FEATURE_COUNT} means and deviations"));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return bad(format!("component {i}: non-finite mean"));
            }
            if c.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad(format!("component {i}: deviations must be positive"));
            }
        }
        if !self.drift_rate.is_finite() {
            return bad("drift rate must be finite".into());
        }
        Ok(())
    }

    /// Mixture mean per feature at row `step`.
    pub fn mean_at(&self, step: u64) -> Vec<f64> {
        let scale = 1.0 + self.drift_rate * step as f64;
        (0..FEATURE_COUNT)
            .map(|j| scale * self.components.iter().map(|c| c.weight * c.mean[j]).sum::<f64>())
            .collect()
    }

    /// Mixture variance per feature (no drift).
    pub fn variance(&self) -> Vec<f64> {
        let mu = self.mean_at(0);
        (0..FEATURE_COUNT)
            .map(|j| {
                self.components
                    .iter()
                    .map(|c| c.weight * (c.std[j].powi(2) + (c.mean[j] - mu[j]).powi(2)))
                    .sum()
            })
            .collect()
    }

    /// Draws one row; `step` is the row's position in the device's stream.
    pub fn sample(&self, step: u64, rng: &mut SimRng) -> Vec<f64> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut chosen = self.components.last().unwrap();
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let scale = 1.0 + self.drift_rate * step as f64;
        chosen
            .mean
            .iter()
            .zip(&chosen.std)
            .map(|(m, s)| scale * m + s * rng.normal())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInflation {
    pub group: FeatureGroup,
    pub factor: f64,
    /// Each inflated value is scaled by `factor * (1 + jitter * U(-1, 1))`.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackProfile {
    pub name: String,
    pub inflations: Vec<GroupInflation>,
}

pub const ATTACK_NAMES: [&str; 2] = ["mirai-flood", "mirai-scan"];

impl AttackProfile {
    /// Packet-rate aggregates ×20.
    pub fn mirai_flood() -> Self {
        Self {
            name: "mirai-flood".into(),
            inflations: vec![GroupInflation {
                group: FeatureGroup::PacketRate,
                factor: 20.0,
                jitter: 0.1,
            }],
        }
    }

    /// Socket-level aggregates ×8 with wide jitter from port sweeping.
    pub fn mirai_scan() -> Self {
        Self {
            name: "mirai-scan".into(),
            inflations: vec![GroupInflation {
                group: FeatureGroup::Connection,
                factor: 8.0,
                jitter: 0.25,
            }],
        }
    }

    pub fn by_name(name: &str) -> Result<Self, DataError> {
        match name {
            "mirai-flood" => Ok(Self::mirai_flood()),
            "mirai-scan" => Ok(Self::mirai_scan()),
            other => Err(DataError::UnknownAttack {
                name: other.to_string(),
                valid: ATTACK_NAMES.join(", "),
            }),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !self.inflations.iter().any(|g| g.factor > 1.0) {
            return Err(DataError::Profile(format!(
                "attack {}: at least one group needs a factor above 1",
                self.name
            )));
        }
        for g in &self.inflations {
            if !(g.factor > 0.0 && g.factor.is_finite()) || !(0.0..1.0).contains(&g.jitter) {
                return Err(DataError::Profile(format!(
                    "attack {}: factor must be positive and jitter in [0, 1)",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Per-feature multiplier masks: `(index, factor, jitter)`.
    fn targets(&self) -> Vec<(usize, f64, f64)> {
        let groups: Vec<FeatureGroup> = self.inflations.iter().map(|g| g.group).collect();
        let mut out = Vec::new();
        for f in layout() {
            if let Some(i) = groups.iter().position(|&g| g == f.group()) {
                out.push((f.index, self.inflations[i].factor, self.inflations[i].jitter));
            }
        }
        out
    }

    pub fn apply(&self, row: &mut [f64], rng: &mut SimRng) {
        for (j, factor, jitter) in self.targets() {
            row[j] *= factor * (1.0 + jitter * rng.uniform_range(-1.0, 1.0));
        }
    }

    pub fn affects(&self, group: FeatureGroup) -> bool {
        self.inflations.iter().any(|g| g.group == group)
    }
}

/// Stateful per-device feature source used by the simulator.
#[derive(Debug, Clone)]
pub struct TrafficSource {
    pub profile: BenignProfile,
    pub attack: Option<AttackProfile>,
    rng: SimRng,
    step: u64,
}

impl TrafficSource {
    pub fn new(profile: BenignProfile, rng: SimRng) -> Self {
        Self {
            profile,
            attack: None,
            rng,
            step: 0,
        }
    }

    pub fn next_row(&mut self) -> Vec<f64> {
        let mut row = self.profile.sample(self.step, &mut self.rng);
        if let Some(a) = &self.attack {
            a.apply(&mut row, &mut self.rng);
        }
        self.step += 1;
        row
    }
}
