//! Scripted multi-zone simulation.
//!
//! A scenario is a line-oriented script:
//!
//! ```text
//! # comment
//! REGISTER home cam
//! SEND home cam master 68656c6c6f
//! INJECT home cam mirai-flood
//! TICK 50
//! ```
//!
//! `TICK n` runs n ticks. On every tick each active device of every zone,
//! the master included, sends one telemetry message to its master carrying
//! a fresh traffic snapshot. Zones are created by their first `REGISTER`.
//! All keys, nonces and traffic streams derive from the run seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::RngCore as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::KeyPair;
use crate::datagen::{AttackProfile, BenignProfile, BenignShape, TrafficSource};
use crate::ledger::verify_export;
use crate::monitor::{audit, write_verdicts_csv, Alert, Detector, FeatureVector, SnapshotMeta, TrustStatus};
use crate::rng::SimRng;
use crate::zone::{AssociationRequest, Outgoing, Zone, ZoneConfig, ZoneError};

pub const MASTER_ID: &str = "master";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Tick(u64),
    Register { zone: String, device: String },
    Send { zone: String, from: String, to: String, payload: Vec<u8> },
    Inject { zone: String, device: String, attack: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptLine {
    pub line: usize,
    pub command: Command,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("scenario line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("scenario line {line}: {source}")]
    Zone { line: usize, source: ZoneError },
    #[error("scenario line {line}: unknown zone {zone}")]
    UnknownZone { line: usize, zone: String },
    #[error("scenario line {line}: unknown device {device} in zone {zone}")]
    UnknownDevice { line: usize, zone: String, device: String },
    #[error("scenario line {line}: {message}")]
    Attack { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

fn ident(tok: &str, line: usize) -> Result<String, SimError> {
    if !tok.is_empty() && tok.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) {
        Ok(tok.to_string())
    } else {
        Err(SimError::Syntax {
            line,
            message: format!("invalid name {tok:?}"),
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<Vec<ScriptLine>, SimError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let arity = |n: usize| {
            if toks.len() == n + 1 {
                Ok(())
            } else {
                Err(SimError::Syntax {
                    line,
                    message: format!("{} takes {n} arguments, found {}", toks[0], toks.len() - 1),
                })
            }
        };
        let command = match toks[0] {
            "TICK" => {
                arity(1)?;
                let n = toks[1].parse::<u64>().map_err(|_| SimError::Syntax {
                    line,
                    message: format!("invalid tick count {:?}", toks[1]),
                })?;
                Command::Tick(n)
            }
            "REGISTER" => {
                arity(2)?;
                Command::Register {
                    zone: ident(toks[1], line)?,
                    device: ident(toks[2], line)?,
                }
            }
            "SEND" => {
                arity(4)?;
                Command::Send {
                    zone: ident(toks[1], line)?,
                    from: ident(toks[2], line)?,
                    to: ident(toks[3], line)?,
                    payload: hex::decode(toks[4]).map_err(|e| SimError::Syntax {
                        line,
                        message: format!("invalid payload hex: {e}"),
                    })?,
                }
            }
            "INJECT" => {
                arity(3)?;
                Command::Inject {
                    zone: ident(toks[1], line)?,
                    device: ident(toks[2], line)?,
                    attack: toks[3].to_string(),
                }
            }
            other => {
                return Err(SimError::Syntax {
                    line,
                    message: format!("unknown command {other:?}, expected TICK, REGISTER, SEND or INJECT"),
                })
            }
        };
        out.push(ScriptLine { line, command });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub zone: ZoneConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            zone: ZoneConfig::default(),
        }
    }
}

/// Zone state as of the end of a `TICK` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRecord {
    pub tick: u64,
    pub zone: String,
    pub trust: f64,
    pub malicious: usize,
    pub observed: usize,
    pub status: TrustStatus,
    pub ledger_height: u64,
    pub devices: usize,
    pub alerts: usize,
}

struct ZoneRun {
    zone: Zone,
    keys: BTreeMap<String, KeyPair>,
    sources: BTreeMap<String, TrafficSource>,
}

pub struct Simulation {
    config: SimConfig,
    detector: Option<Detector>,
    benign: BenignProfile,
    zones: BTreeMap<String, ZoneRun>,
    tick: u64,
    pub status_log: Vec<StatusRecord>,
    /// Messages refused by a zone during telemetry or `SEND`.
    pub rejected: Vec<(u64, String, ZoneError)>,
}

fn telemetry_payload(row: &[f64]) -> Vec<u8> {
    Encoder::new().f64s(row).finish()
}

impl Simulation {
    pub fn new(config: SimConfig, detector: Option<Detector>) -> Result<Self, SimError> {
        let benign = BenignShape::default().expand().map_err(|e| SimError::Io(e.to_string()))?;
        Ok(Self {
            config,
            detector,
            benign,
            zones: BTreeMap::new(),
            tick: 0,
            status_log: Vec::new(),
            rejected: Vec::new(),
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn zone(&self, label: &str) -> Option<&Zone> {
        self.zones.get(label).map(|z| &z.zone)
    }

    pub fn zones(&self) -> impl Iterator<Item = &Zone> {
        self.zones.values().map(|z| &z.zone)
    }

    fn source(&self, zone: &str, device: &str) -> TrafficSource {
        TrafficSource::new(
            self.benign.clone(),
            SimRng::derive(self.config.seed, &format!("traffic/{zone}/{device}")),
        )
    }

    fn keys(&self, zone: &str, device: &str) -> KeyPair {
        KeyPair::generate(&mut SimRng::derive(self.config.seed, &format!("keys/{zone}/{device}")))
    }

    fn ensure_zone(&mut self, label: &str, line: usize) -> Result<&mut ZoneRun, SimError> {
        if !self.zones.contains_key(label) {
            let master = self.keys(label, MASTER_ID);
            let mut zone = Zone::new(label, MASTER_ID, master.clone(), &self.config.zone)
                .map_err(|source| SimError::Zone { line, source })?;
            if let Some(d) = &self.detector {
                zone.set_detector(d.clone());
            }
            let run = ZoneRun {
                zone,
                keys: BTreeMap::from([(MASTER_ID.to_string(), master)]),
                sources: BTreeMap::from([(MASTER_ID.to_string(), self.source(label, MASTER_ID))]),
            };
            self.zones.insert(label.to_string(), run);
        }
        Ok(self.zones.get_mut(label).unwrap())
    }

    fn run_mut(&mut self, zone: &str, line: usize) -> Result<&mut ZoneRun, SimError> {
        self.zones.get_mut(zone).ok_or_else(|| SimError::UnknownZone {
            line,
            zone: zone.to_string(),
        })
    }

    pub fn run(&mut self, script: &[ScriptLine]) -> Result<(), SimError> {
        for l in script {
            self.step(l)?;
        }
        self.finish();
        Ok(())
    }

    pub fn step(&mut self, l: &ScriptLine) -> Result<(), SimError> {
        let line = l.line;
        match &l.command {
            Command::Tick(n) => {
                for _ in 0..*n {
                    self.run_tick();
                }
                self.log_status();
            }
            Command::Register { zone, device } => {
                let keys = self.keys(zone, device);
                let source = self.source(zone, device);
                let nonce = SimRng::derive(self.config.seed, &format!("nonce/{zone}/{device}")).next_u64();
                let tick = self.tick;
                let run = self.ensure_zone(zone, line)?;
                let err = |source| SimError::Zone { line, source };
                let ticket = run.zone.issue_ticket(device, keys.public(), tick).map_err(err)?;
                let req = AssociationRequest::new(ticket, nonce, &keys);
                run.zone.associate(&req, tick).map_err(err)?;
                run.keys.insert(device.clone(), keys);
                run.sources.insert(device.clone(), source);
            }
            Command::Send { zone, from, to, payload } => {
                let tick = self.tick;
                let run = self.run_mut(zone, line)?;
                for d in [from, to] {
                    if !run.zone.is_active(d) {
                        return Err(SimError::UnknownDevice {
                            line,
                            zone: zone.clone(),
                            device: d.clone(),
                        });
                    }
                }
                let row = run.sources.get_mut(from).unwrap().next_row();
                let msg = Outgoing {
                    from: from.clone(),
                    to: to.clone(),
                    payload: payload.clone(),
                    features: Some(FeatureVector::new(row).map_err(|e| SimError::Io(e.to_string()))?),
                    meta: SnapshotMeta::default(),
                    tick,
                };
                let keys = run.keys[from].clone();
                if let Err(e) = run.zone.route_message(&keys, msg) {
                    self.rejected.push((tick, zone.clone(), e));
                }
            }
            Command::Inject { zone, device, attack } => {
                let profile = AttackProfile::by_name(attack).map_err(|e| SimError::Attack {
                    line,
                    message: e.to_string(),
                })?;
                let run = self.run_mut(zone, line)?;
                match run.sources.get_mut(device) {
                    Some(s) => s.attack = Some(profile),
                    None => {
                        return Err(SimError::UnknownDevice {
                            line,
                            zone: zone.clone(),
                            device: device.clone(),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    fn run_tick(&mut self) {
        self.tick += 1;
        let tick = self.tick;
        for (label, run) in self.zones.iter_mut() {
            for r in run.zone.advance(tick) {
                if let Err(e) = r {
                    self.rejected.push((tick, label.clone(), e));
                }
            }
            let devices: Vec<String> = run.sources.keys().cloned().collect();
            for dev in devices {
                let row = run.sources.get_mut(&dev).unwrap().next_row();
                let msg = Outgoing {
                    from: dev.clone(),
                    to: MASTER_ID.to_string(),
                    payload: telemetry_payload(&row),
                    features: Some(FeatureVector::new(row).expect("generated rows are finite")),
                    meta: SnapshotMeta::default(),
                    tick,
                };
                if let Err(e) = run.zone.route_message(&run.keys[&dev], msg) {
                    self.rejected.push((tick, label.clone(), e));
                }
            }
        }
    }

    fn log_status(&mut self) {
        for (label, run) in &self.zones {
            let st = run.zone.zone_status();
            self.status_log.push(StatusRecord {
                tick: self.tick,
                zone: label.clone(),
                trust: st.trust.trust,
                malicious: st.trust.malicious_count,
                observed: st.trust.observed,
                status: st.trust.status,
                ledger_height: st.ledger_height,
                devices: st.active_devices,
                alerts: st.alerts,
            });
        }
    }

    /// Seals every zone's remaining pool.
    pub fn finish(&mut self) {
        let tick = self.tick;
        for run in self.zones.values_mut() {
            run.zone.flush(tick);
        }
    }

    pub fn alerts(&self) -> Vec<(String, Alert)> {
        self.zones
            .iter()
            .flat_map(|(l, r)| r.zone.monitor.alerts().iter().map(move |a| (l.clone(), a.clone())))
            .collect()
    }

    pub fn status_csv(&self) -> String {
        let mut s = String::from("tick,zone,trust,malicious,observed,status,ledger_height,devices,alerts\n");
        for r in &self.status_log {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.tick,
                r.zone,
                r.trust,
                r.malicious,
                r.observed,
                r.status.as_str(),
                r.ledger_height,
                r.devices,
                r.alerts
            )
            .unwrap();
        }
        s
    }

    pub fn alerts_csv(&self) -> String {
        let mut s = String::from("zone,seq_id,device_id,payload_hash,mse,threshold,tick\n");
        for (zone, a) in self.alerts() {
            writeln!(
                s,
                "{zone},{},{},{},{},{},{}",
                a.seq_id,
                a.device_id,
                a.payload_hash.to_hex(),
                a.mse,
                a.threshold,
                a.tick
            )
            .unwrap();
        }
        s
    }

    /// Writes ledgers, verdicts, alerts and the status log into `dir` and
    /// returns the written paths in a fixed order.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
        let io = |e: std::io::Error| SimError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut written = Vec::new();
        for (label, run) in &self.zones {
            let p = dir.join(format!("ledger-{label}.hex"));
            std::fs::write(&p, run.zone.ledger.export()).map_err(io)?;
            written.push(p);
            let p = dir.join(format!("verdicts-{label}.csv"));
            let mut buf = Vec::new();
            write_verdicts_csv(run.zone.monitor.verdicts(), &mut buf).map_err(io)?;
            std::fs::write(&p, buf).map_err(io)?;
            written.push(p);
        }
        for (name, content) in [("alerts.csv", self.alerts_csv()), ("status.csv", self.status_csv())] {
            let p = dir.join(name);
            std::fs::write(&p, content).map_err(io)?;
            written.push(p);
        }
        Ok(written)
    }

    /// Chain validity, snapshot/ledger audit and alert resolution for every
    /// zone. Returns one problem description per failure.
    pub fn self_check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (label, run) in &self.zones {
            let z = &run.zone;
            if let Err(e) = verify_export(&z.ledger.export()) {
                problems.push(format!("{label}: exported ledger fails verification: {e}"));
            }
            let report = audit(&z.monitor.store, &z.ledger);
            if !report.is_clean() {
                problems.push(format!("{label}: {} orphan snapshots", report.orphans.len()));
            }
            for a in z.monitor.alerts() {
                match z.resolve_alert(a) {
                    Ok(tx) if tx.seq_id == a.seq_id => {}
                    Ok(tx) => problems.push(format!("{label}: alert {} resolves to seq {}", a.seq_id, tx.seq_id)),
                    Err(e) => problems.push(format!("{label}: alert {} unresolved: {e}", a.seq_id)),
                }
            }
        }
        problems
    }
}
