//! Zone protocol: the master issues signed tickets, followers associate with
//! a signed nonce-bearing request, and every message is recorded on the
//! zone ledger before the recipient may read it.
//!
//! Sequence ids come from one per-zone counter shared by all ledger
//! transactions. A routed message uses two consecutive ids: the message
//! transaction signed by the sender, then the snapshot record signed by the
//! master, whose id is also the snapshot's id in the monitor store.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::crypto::{hash, hash_concat, verify, Digest, KeyPair, PublicKey, Signature};
use crate::ledger::{Ledger, LedgerError, Rejection, Transaction, DEFAULT_BLOCKSIZE};
use crate::monitor::{
    Alert, BehaviorMonitor, Detector, FeatureVector, MonitorError, SnapshotDraft, SnapshotMeta, TrustReport,
    Verdict, DEFAULT_TAU, DEFAULT_WINDOW,
};
use crate::rng::SimRng;

const TICKET_DOMAIN: &str = "zonetrust/ticket/v1";
const ASSOC_DOMAIN: &str = "zonetrust/assoc/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZoneError {
    #[error("device {0} is already registered")]
    AlreadyRegistered(String),
    #[error("association rejected: follower signature does not verify")]
    Integrity,
    #[error("association rejected: ticket signature does not verify under the master key")]
    Ticket,
    #[error("association rejected: nonce already used or follower already active")]
    Replay,
    #[error("association rejected: ticket belongs to another zone")]
    ForeignTicket,
    #[error("unknown or inactive device {0}")]
    UnknownDevice(String),
    #[error("ledger rejected transaction: {0}")]
    Ledger(#[from] Rejection),
    #[error("message dropped in transit")]
    Dropped,
    #[error("message delayed until tick {0}")]
    Delayed(u64),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("invalid zone config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ticket {
    pub group_id: Digest,
    pub follower_id: String,
    pub follower_pubkey: PublicKey,
    pub issued_at: u64,
    pub master_signature: Signature,
}

impl Ticket {
    pub fn signing_bytes(group_id: &Digest, follower_id: &str, pk: &PublicKey, issued_at: u64) -> Vec<u8> {
        Encoder::new()
            .str(TICKET_DOMAIN)
            .bytes(group_id.as_bytes())
            .str(follower_id)
            .bytes(&pk.0)
            .u64(issued_at)
            .finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        Encoder::new()
            .bytes(self.group_id.as_bytes())
            .str(&self.follower_id)
            .bytes(&self.follower_pubkey.0)
            .u64(self.issued_at)
            .bytes(&self.master_signature.0)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let t = Self {
            group_id: Digest(d.array32()?),
            follower_id: d.str()?.to_string(),
            follower_pubkey: PublicKey(d.array32()?),
            issued_at: d.u64()?,
            master_signature: Signature(d.array64()?),
        };
        d.finish()?;
        Ok(t)
    }

    /// Decode errors count as failure.
    pub fn verifies(&self, master: &PublicKey) -> bool {
        let msg = Self::signing_bytes(&self.group_id, &self.follower_id, &self.follower_pubkey, self.issued_at);
        matches!(verify(master, &msg, &self.master_signature), Ok(true))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationRequest {
    pub ticket: Ticket,
    pub nonce: u64,
    pub follower_signature: Signature,
}

impl AssociationRequest {
    pub fn signing_bytes(ticket: &Ticket, nonce: u64) -> Vec<u8> {
        Encoder::new()
            .str(ASSOC_DOMAIN)
            .bytes(&ticket.encode())
            .u64(nonce)
            .finish()
    }

    pub fn new(ticket: Ticket, nonce: u64, follower: &KeyPair) -> Self {
        let follower_signature = follower.sign(&Self::signing_bytes(&ticket, nonce));
        Self {
            ticket,
            nonce,
            follower_signature,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        Encoder::new()
            .bytes(&self.ticket.encode())
            .u64(self.nonce)
            .bytes(&self.follower_signature.0)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let r = Self {
            ticket: Ticket::decode(d.bytes()?)?,
            nonce: d.u64()?,
            follower_signature: Signature(d.array64()?),
        };
        d.finish()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceStatus {
    Pending,
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRecord {
    pub id: String,
    pub pubkey: PublicKey,
    pub status: DeviceStatus,
    pub ticket: Option<Ticket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneConfig {
    pub blocksize: usize,
    /// Trust window W.
    pub window: usize,
    pub tau: f64,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        Self {
            blocksize: DEFAULT_BLOCKSIZE,
            window: DEFAULT_WINDOW,
            tau: DEFAULT_TAU,
        }
    }
}

/// A message as handed to the transport by its sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub from: String,
    pub to: String,
    pub payload: Vec<u8>,
    /// Traffic snapshot of the sender at send time, if featurized.
    pub features: Option<FeatureVector>,
    pub meta: SnapshotMeta,
    pub tick: u64,
}

/// What reaches the master: the sender's transaction and the payload as
/// received, which may differ from what was signed.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub tx: Transaction,
    pub received_payload: Vec<u8>,
    pub to: String,
    pub features: Option<FeatureVector>,
    pub meta: SnapshotMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: String,
    pub to: String,
    pub payload: Vec<u8>,
    pub tx: Transaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub tx_seq: u64,
    pub snapshot_seq: Option<u64>,
    pub verdict: Option<Verdict>,
    pub alert: Option<Alert>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    Drop,
    /// Flip one bit of the payload.
    Corrupt,
    /// Hold for this many ticks.
    Delay(u64),
}

/// Fault probabilities for the in-memory transport, plus a queue of faults
/// forced onto the next messages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    pub drop_p: f64,
    pub corrupt_p: f64,
    pub delay_p: f64,
    pub max_delay: u64,
    #[serde(skip)]
    pub forced: VecDeque<Fault>,
}

impl FaultModel {
    fn draw(&mut self, rng: &mut SimRng) -> Option<Fault> {
        if let Some(f) = self.forced.pop_front() {
            return Some(f);
        }
        if self.drop_p == 0.0 && self.corrupt_p == 0.0 && self.delay_p == 0.0 {
            return None;
        }
        let u = rng.uniform();
        if u < self.drop_p {
            Some(Fault::Drop)
        } else if u < self.drop_p + self.corrupt_p {
            Some(Fault::Corrupt)
        } else if u < self.drop_p + self.corrupt_p + self.delay_p && self.max_delay > 0 {
            Some(Fault::Delay(1 + rng.below(self.max_delay as usize) as u64))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneStatus {
    pub label: String,
    pub group_id: Digest,
    pub trust: TrustReport,
    pub ledger_height: u64,
    pub pool: usize,
    pub active_devices: usize,
    pub pending_devices: usize,
    pub alerts: usize,
    pub sensor_hints: BTreeMap<String, u64>,
}

pub struct Zone {
    pub label: String,
    pub group_id: Digest,
    master_id: String,
    master_keys: KeyPair,
    devices: BTreeMap<String, DeviceRecord>,
    used_nonces: BTreeSet<(String, u64)>,
    pub ledger: Ledger,
    pub monitor: BehaviorMonitor,
    inboxes: BTreeMap<String, Vec<Message>>,
    next_seq: u64,
    pub faults: FaultModel,
    transport_rng: SimRng,
    in_flight: Vec<(u64, KeyPair, Outgoing)>,
}

impl Zone {
    pub fn new(label: &str, master_id: &str, master_keys: KeyPair, config: &ZoneConfig) -> Result<Self, ZoneError> {
        let ledger = Ledger::new(config.blocksize).map_err(|e| ZoneError::Config(e.to_string()))?;
        let monitor = BehaviorMonitor::new(config.window, config.tau)?;
        let master_pk = master_keys.public();
        let group_id = hash_concat([master_pk.0.as_slice(), label.as_bytes()]);
        let mut devices = BTreeMap::new();
        devices.insert(
            master_id.to_string(),
            DeviceRecord {
                id: master_id.to_string(),
                pubkey: master_pk,
                status: DeviceStatus::Active,
                ticket: None,
            },
        );
        Ok(Self {
            label: label.to_string(),
            group_id,
            master_id: master_id.to_string(),
            transport_rng: SimRng::derive(u64::from_be_bytes(group_id.0[..8].try_into().unwrap()), "transport"),
            master_keys,
            devices,
            used_nonces: BTreeSet::new(),
            ledger,
            monitor,
            inboxes: BTreeMap::new(),
            next_seq: 1,
            faults: FaultModel::default(),
            in_flight: Vec::new(),
        })
    }

    pub fn master_id(&self) -> &str {
        &self.master_id
    }

    pub fn master_public(&self) -> PublicKey {
        self.master_keys.public()
    }

    pub fn set_detector(&mut self, detector: Detector) {
        self.monitor.set_detector(detector);
    }

    pub fn device(&self, id: &str) -> Option<&DeviceRecord> {
        self.devices.get(id)
    }

    pub fn followers(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.devices.values().filter(move |d| d.id != self.master_id)
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.devices.get(id).is_some_and(|d| d.status == DeviceStatus::Active)
    }

    pub fn inbox(&self, id: &str) -> &[Message] {
        self.inboxes.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn issue_ticket(&mut self, follower_id: &str, follower_pubkey: PublicKey, tick: u64) -> Result<Ticket, ZoneError> {
        if self.devices.contains_key(follower_id) {
            return Err(ZoneError::AlreadyRegistered(follower_id.to_string()));
        }
        let msg = Ticket::signing_bytes(&self.group_id, follower_id, &follower_pubkey, tick);
        let ticket = Ticket {
            group_id: self.group_id,
            follower_id: follower_id.to_string(),
            follower_pubkey,
            issued_at: tick,
            master_signature: self.master_keys.sign(&msg),
        };
        self.devices.insert(
            follower_id.to_string(),
            DeviceRecord {
                id: follower_id.to_string(),
                pubkey: follower_pubkey,
                status: DeviceStatus::Pending,
                ticket: Some(ticket.clone()),
            },
        );
        Ok(ticket)
    }

    /// Checks, in order: follower signature, zone, master signature and the
    /// issued record, then nonce freshness. On success the request is
    /// recorded on the ledger and the follower becomes active.
    pub fn associate(&mut self, req: &AssociationRequest, tick: u64) -> Result<u64, ZoneError> {
        let t = &req.ticket;
        let msg = AssociationRequest::signing_bytes(t, req.nonce);
        if !matches!(verify(&t.follower_pubkey, &msg, &req.follower_signature), Ok(true)) {
            return Err(ZoneError::Integrity);
        }
        if t.group_id != self.group_id {
            return Err(ZoneError::ForeignTicket);
        }
        if !t.verifies(&self.master_keys.public()) {
            return Err(ZoneError::Ticket);
        }
        let record = match self.devices.get(&t.follower_id) {
            Some(r) if r.ticket.as_ref() == Some(t) => r,
            _ => return Err(ZoneError::Ticket),
        };
        if record.status == DeviceStatus::Active || self.used_nonces.contains(&(t.follower_id.clone(), req.nonce)) {
            return Err(ZoneError::Replay);
        }
        let seq = self.next_seq;
        let tx = Transaction::signed(seq, &self.master_id, hash(&req.encode()), tick, &self.master_keys);
        self.ledger.submit(tx, &self.master_keys.public())?;
        self.next_seq += 1;
        self.used_nonces.insert((t.follower_id.clone(), req.nonce));
        self.devices.get_mut(&t.follower_id).unwrap().status = DeviceStatus::Active;
        Ok(seq)
    }

    /// Signs and sends `msg` through the transport. Faults surface as
    /// errors; a delayed message is processed by a later [`Zone::advance`].
    pub fn route_message(&mut self, sender: &KeyPair, msg: Outgoing) -> Result<Delivery, ZoneError> {
        for id in [&msg.from, &msg.to] {
            if !self.is_active(id) {
                return Err(ZoneError::UnknownDevice(id.clone()));
            }
        }
        match self.faults.draw(&mut self.transport_rng) {
            Some(Fault::Drop) => Err(ZoneError::Dropped),
            Some(Fault::Delay(d)) => {
                let at = msg.tick + d;
                self.in_flight.push((at, sender.clone(), msg));
                Err(ZoneError::Delayed(at))
            }
            Some(Fault::Corrupt) => {
                let mut env = self.seal_envelope(sender, msg);
                if env.received_payload.is_empty() {
                    env.received_payload.push(1);
                } else {
                    let bit = self.transport_rng.below(env.received_payload.len() * 8);
                    env.received_payload[bit / 8] ^= 1 << (bit % 8);
                }
                self.receive(env)
            }
            None => {
                let env = self.seal_envelope(sender, msg);
                self.receive(env)
            }
        }
    }

    fn seal_envelope(&self, sender: &KeyPair, msg: Outgoing) -> Envelope {
        let tx = Transaction::signed(self.next_seq, &msg.from, hash(&msg.payload), msg.tick, sender);
        Envelope {
            tx,
            received_payload: msg.payload,
            to: msg.to,
            features: msg.features,
            meta: msg.meta,
        }
    }

    /// Master-side handling: the payload hash is recomputed from what
    /// arrived, so any change in transit breaks the sender's signature.
    pub fn receive(&mut self, env: Envelope) -> Result<Delivery, ZoneError> {
        let from = env.tx.device_id.clone();
        let sender_key = match self.devices.get(&from) {
            Some(d) if d.status == DeviceStatus::Active => d.pubkey,
            _ => return Err(ZoneError::UnknownDevice(from)),
        };
        if !self.is_active(&env.to) {
            return Err(ZoneError::UnknownDevice(env.to));
        }
        let tx = Transaction {
            payload_hash: hash(&env.received_payload),
            ..env.tx
        };
        let tick = tx.timestamp;
        let tx_seq = tx.seq_id;
        self.ledger.submit(tx.clone(), &sender_key)?;
        self.next_seq = self.next_seq.max(tx_seq + 1);
        self.inboxes.entry(env.to.clone()).or_default().push(Message {
            from: from.clone(),
            to: env.to,
            payload: env.received_payload,
            tx,
        });

        let Some(features) = env.features else {
            return Ok(Delivery {
                tx_seq,
                snapshot_seq: None,
                verdict: None,
                alert: None,
            });
        };
        let draft = SnapshotDraft {
            device_id: from,
            features,
            meta: env.meta,
            tick,
        };
        let seq = self.next_seq;
        let (h, verdict, alert) = if self.monitor.detector().is_some() {
            let (v, a) = self.monitor.ingest_at(seq, draft)?;
            (self.monitor.store.hash_of(seq).unwrap(), Some(v), a)
        } else {
            (self.monitor.store.record_at(seq, draft)?.1, None, None)
        };
        let record = Transaction::signed(seq, &self.master_id, h, tick, &self.master_keys);
        self.ledger.submit(record, &self.master_keys.public())?;
        self.next_seq += 1;
        Ok(Delivery {
            tx_seq,
            snapshot_seq: Some(seq),
            verdict,
            alert,
        })
    }

    /// Releases delayed messages due at or before `tick`, in send order.
    pub fn advance(&mut self, tick: u64) -> Vec<Result<Delivery, ZoneError>> {
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.in_flight)
            .into_iter()
            .partition(|(at, _, _)| *at <= tick);
        self.in_flight = later;
        due.into_iter()
            .map(|(_, keys, msg)| {
                let env = self.seal_envelope(&keys, msg);
                self.receive(env)
            })
            .collect()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Gated-out sensor readings reported for a device.
    pub fn report_sensor_rejections(&mut self, device_id: &str, count: u64) {
        for _ in 0..count {
            self.monitor.note_sensor_rejection(device_id);
        }
    }

    pub fn flush(&mut self, tick: u64) -> Option<u64> {
        self.ledger.flush(tick)
    }

    pub fn zone_status(&self) -> ZoneStatus {
        let followers: Vec<&DeviceRecord> = self.followers().collect();
        let active = followers.iter().filter(|d| d.status == DeviceStatus::Active).count();
        ZoneStatus {
            label: self.label.clone(),
            group_id: self.group_id,
            trust: self.monitor.trust_level(),
            ledger_height: self.ledger.height(),
            pool: self.ledger.pool().len(),
            active_devices: active + 1,
            pending_devices: followers.len() - active,
            alerts: self.monitor.alerts().len(),
            sensor_hints: self.monitor.sensor_hints().clone(),
        }
    }

    /// The sealed transaction recording an alert's snapshot.
    pub fn resolve_alert(&self, alert: &Alert) -> Result<&Transaction, LedgerError> {
        self.ledger.lookup(&alert.payload_hash).map(|(tx, _)| tx)
    }
}
