//! The 115-column traffic feature layout.
//!
//! Five stream aggregates, each over five exponential decay windows:
//!
//! | stream   | stats per window                                   |
//! |----------|----------------------------------------------------|
//! | `MI_dir` | weight, mean, variance (per source MAC-IP)         |
//! | `H`      | weight, mean, variance (per source IP)             |
//! | `HH`     | weight, mean, std, magnitude, radius, covariance, pcc (per channel) |
//! | `HH_jit` | weight, mean, variance of inter-arrival times      |
//! | `HpHp`   | weight, mean, std, magnitude, radius, covariance, pcc (per socket) |
//!
//! Columns are ordered stream-major, then window, then stat, which gives
//! 5 × (3 + 3 + 7 + 3 + 7) = 115.

use serde::{Deserialize, Serialize};

pub const FEATURE_COUNT: usize = 115;

pub const WINDOWS: [&str; 5] = ["L5", "L3", "L1", "L0.1", "L0.01"];

/// Decay constants matching [`WINDOWS`]; larger means a shorter memory.
pub const WINDOW_LAMBDAS: [f64; 5] = [5.0, 3.0, 1.0, 0.1, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    MiDir,
    H,
    Hh,
    HhJit,
    HpHp,
}

impl Stream {
    pub const ALL: [Stream; 5] = [Stream::MiDir, Stream::H, Stream::Hh, Stream::HhJit, Stream::HpHp];

    pub fn prefix(self) -> &'static str {
        match self {
            Stream::MiDir => "MI_dir",
            Stream::H => "H",
            Stream::Hh => "HH",
            Stream::HhJit => "HH_jit",
            Stream::HpHp => "HpHp",
        }
    }

    pub fn stats(self) -> &'static [Stat] {
        use Stat::*;
        match self {
            Stream::MiDir | Stream::H | Stream::HhJit => &[Weight, Mean, Variance],
            Stream::Hh | Stream::HpHp => &[Weight, Mean, Std, Magnitude, Radius, Covariance, Pcc],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stat {
    Weight,
    Mean,
    Variance,
    Std,
    Magnitude,
    Radius,
    Covariance,
    Pcc,
}

impl Stat {
    pub fn name(self) -> &'static str {
        match self {
            Stat::Weight => "weight",
            Stat::Mean => "mean",
            Stat::Variance => "variance",
            Stat::Std => "std",
            Stat::Magnitude => "magnitude",
            Stat::Radius => "radius",
            Stat::Covariance => "covariance",
            Stat::Pcc => "pcc",
        }
    }
}

/// Feature groups an attack profile can inflate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureGroup {
    /// Packet-count weights of the host and channel streams.
    PacketRate,
    /// Packet-size statistics of the host and channel streams.
    PacketSize,
    /// Channel inter-arrival (jitter) statistics.
    InterArrival,
    /// Socket-level statistics.
    Connection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub index: usize,
    pub stream: Stream,
    pub window: usize,
    pub stat: Stat,
}

impl FeatureSpec {
    pub fn name(&self) -> String {
        format!("{}_{}_{}", self.stream.prefix(), WINDOWS[self.window], self.stat.name())
    }

    pub fn group(&self) -> FeatureGroup {
        match (self.stream, self.stat) {
            (Stream::HhJit, _) => FeatureGroup::InterArrival,
            (Stream::HpHp, _) => FeatureGroup::Connection,
            (_, Stat::Weight) => FeatureGroup::PacketRate,
            _ => FeatureGroup::PacketSize,
        }
    }
}

pub fn layout() -> Vec<FeatureSpec> {
    let mut out = Vec::with_capacity(FEATURE_COUNT);
    for stream in Stream::ALL {
        for window in 0..WINDOWS.len() {
            for &stat in stream.stats() {
                out.push(FeatureSpec {
                    index: out.len(),
                    stream,
                    window,
                    stat,
                });
            }
        }
    }
    out
}

pub fn feature_names() -> Vec<String> {
    layout().iter().map(FeatureSpec::name).collect()
}

pub fn group_indices(group: FeatureGroup) -> Vec<usize> {
    layout().iter().filter(|f| f.group() == group).map(|f| f.index).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn layout_has_115_unique_columns() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        assert_eq!(names.iter().collect::<HashSet<_>>().len(), FEATURE_COUNT);
        assert_eq!(names[0], "MI_dir_L5_weight");
        assert_eq!(names[114], "HpHp_L0.01_pcc");
    }

    #[test]
    fn groups_partition_the_layout() {
        let sizes: Vec<usize> = [
            FeatureGroup::PacketRate,
            FeatureGroup::PacketSize,
            FeatureGroup::InterArrival,
            FeatureGroup::Connection,
        ]
        .iter()
        .map(|&g| group_indices(g).len())
        .collect();
        assert_eq!(sizes, vec![15, 50, 15, 35]);
        assert_eq!(sizes.iter().sum::<usize>(), FEATURE_COUNT);
    }
}
