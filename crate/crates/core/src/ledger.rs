//! Per-zone append-only hash-chained ledger.
//!
//! Transactions wait in a pool until it holds `blocksize` entries, at which
//! point the zone master seals them into a block linked to the previous
//! header by hash. Only sealed transactions are visible to [`Ledger::lookup`].
//!
//! Each block carries the digest of its own header so that tampering with the
//! newest block is detectable without a successor.

use std::collections::HashMap;

use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::crypto::{self, hash, hash_concat, Digest, KeyPair, PublicKey, Signature};

pub const DEFAULT_BLOCKSIZE: usize = 10;

const TX_DOMAIN: &str = "zonetrust/tx/v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub seq_id: u64,
    pub device_id: String,
    pub payload_hash: Digest,
    pub timestamp: u64,
    /// Key the signature was made with; must match the device's registered key.
    pub signer: PublicKey,
    pub signature: Signature,
}

impl Transaction {
    pub fn signing_bytes(seq_id: u64, device_id: &str, payload_hash: &Digest, timestamp: u64) -> Vec<u8> {
        Encoder::new()
            .str(TX_DOMAIN)
            .u64(seq_id)
            .str(device_id)
            .bytes(payload_hash.as_bytes())
            .u64(timestamp)
            .finish()
    }

    pub fn signed(seq_id: u64, device_id: &str, payload_hash: Digest, timestamp: u64, keys: &KeyPair) -> Self {
        let msg = Self::signing_bytes(seq_id, device_id, &payload_hash, timestamp);
        Self {
            seq_id,
            device_id: device_id.to_string(),
            payload_hash,
            timestamp,
            signer: keys.public(),
            signature: keys.sign(&msg),
        }
    }

    pub fn signature_valid(&self) -> bool {
        let msg = Self::signing_bytes(self.seq_id, &self.device_id, &self.payload_hash, self.timestamp);
        matches!(crypto::verify(&self.signer, &msg, &self.signature), Ok(true))
    }

    pub fn encode_into(&self, e: &mut Encoder) {
        e.u64(self.seq_id)
            .str(&self.device_id)
            .bytes(self.payload_hash.as_bytes())
            .u64(self.timestamp)
            .bytes(&self.signer.0)
            .bytes(&self.signature.0);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode_into(&mut e);
        e.finish()
    }

    pub fn decode_from(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            seq_id: d.u64()?,
            device_id: d.str()?.to_string(),
            payload_hash: Digest(d.array32()?),
            timestamp: d.u64()?,
            signer: PublicKey(d.array32()?),
            signature: Signature(d.array64()?),
        })
    }

    pub fn digest(&self) -> Digest {
        hash(&self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub timestamp: u64,
}

impl BlockHeader {
    pub fn encode_into(&self, e: &mut Encoder) {
        e.u64(self.height)
            .bytes(self.prev_hash.as_bytes())
            .bytes(self.tx_root.as_bytes())
            .u64(self.timestamp);
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        self.encode_into(&mut e);
        hash(&e.finish())
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            height: d.u64()?,
            prev_hash: Digest(d.array32()?),
            tx_root: Digest(d.array32()?),
            timestamp: d.u64()?,
        })
    }
}

/// Hash of the in-order concatenation of transaction digests.
pub fn tx_root(txs: &[Transaction]) -> Digest {
    let digests: Vec<Digest> = txs.iter().map(Transaction::digest).collect();
    hash_concat(digests.iter().map(|d| d.as_bytes().as_slice()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    /// Digest of `header`.
    pub hash: Digest,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn encode(&self) -> Vec<u8> {
        Encoder::new()
            .nested(|e| self.header.encode_into(e))
            .bytes(self.hash.as_bytes())
            .nested(|e| {
                for tx in &self.transactions {
                    e.nested(|inner| tx.encode_into(inner));
                }
            })
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let mut hd = d.nested()?;
        let header = BlockHeader::decode_from(&mut hd)?;
        hd.finish()?;
        let hash = Digest(d.array32()?);
        let mut list = d.nested()?;
        let mut transactions = Vec::new();
        while !list.is_empty() {
            let mut td = list.nested()?;
            transactions.push(Transaction::decode_from(&mut td)?);
            td.finish()?;
        }
        d.finish()?;
        Ok(Self {
            header,
            hash,
            transactions,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TxLocation {
    pub height: u64,
    pub position: usize,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    #[error("invalid signature")]
    InvalidSignature,
    #[error("replayed or non-monotone sequence id")]
    Replay,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("transaction pool is empty")]
    EmptyPool,
    #[error("hash-id {0} not found in sealed blocks")]
    NotFound(Digest),
    #[error("blocksize must be positive")]
    ZeroBlocksize,
}

/// Result of a successful [`Ledger::submit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submitted {
    Pooled,
    /// The submission filled the pool and sealed the block at this height.
    Sealed(u64),
}

/// First block that fails verification.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("chain invalid at height {height}: {reason}")]
pub struct BadBlock {
    pub height: u64,
    pub reason: String,
}

impl BadBlock {
    fn at(height: u64, reason: impl Into<String>) -> Self {
        Self {
            height,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ledger {
    blocksize: usize,
    chain: Vec<Block>,
    pool: Vec<Transaction>,
    index: HashMap<Digest, TxLocation>,
    last_seq: Option<u64>,
}

impl Ledger {
    pub fn new(blocksize: usize) -> Result<Self, LedgerError> {
        if blocksize == 0 {
            return Err(LedgerError::ZeroBlocksize);
        }
        Ok(Self {
            blocksize,
            chain: Vec::new(),
            pool: Vec::new(),
            index: HashMap::new(),
            last_seq: None,
        })
    }

    pub fn blocksize(&self) -> usize {
        self.blocksize
    }

    pub fn height(&self) -> u64 {
        self.chain.len() as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.chain
    }

    pub fn pool(&self) -> &[Transaction] {
        &self.pool
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    /// Validates `tx` against the device's registered key and the sequence
    /// rule, pools it, and seals a block if the pool is now full.
    pub fn submit(&mut self, tx: Transaction, device_key: &PublicKey) -> Result<Submitted, Rejection> {
        if tx.signer != *device_key || !tx.signature_valid() {
            return Err(Rejection::InvalidSignature);
        }
        if self.last_seq.is_some_and(|last| tx.seq_id <= last) {
            return Err(Rejection::Replay);
        }
        self.last_seq = Some(tx.seq_id);
        let now = tx.timestamp;
        self.pool.push(tx);
        if self.pool.len() >= self.blocksize {
            let height = self.seal_block(now).expect("pool is non-empty").header.height;
            Ok(Submitted::Sealed(height))
        } else {
            Ok(Submitted::Pooled)
        }
    }

    pub fn seal_block(&mut self, now: u64) -> Result<&Block, LedgerError> {
        if self.pool.is_empty() {
            return Err(LedgerError::EmptyPool);
        }
        let transactions = std::mem::take(&mut self.pool);
        let height = self.height();
        let header = BlockHeader {
            height,
            prev_hash: self.chain.last().map_or(Digest::ZERO, |b| b.hash),
            tx_root: tx_root(&transactions),
            timestamp: now,
        };
        for (position, tx) in transactions.iter().enumerate() {
            self.index
                .entry(tx.payload_hash)
                .or_insert(TxLocation { height, position });
        }
        self.chain.push(Block {
            hash: header.digest(),
            header,
            transactions,
        });
        Ok(self.chain.last().unwrap())
    }

    /// Seals whatever is pending, possibly a short block. Returns the new
    /// height if anything was sealed.
    pub fn flush(&mut self, now: u64) -> Option<u64> {
        self.seal_block(now).ok().map(|b| b.header.height)
    }

    pub fn verify_chain(&self) -> Result<(), BadBlock> {
        verify_blocks(&self.chain)
    }

    /// The sealed transaction whose payload hash is `hash_id` (first
    /// occurrence if the same payload was recorded more than once).
    pub fn lookup(&self, hash_id: &Digest) -> Result<(&Transaction, TxLocation), LedgerError> {
        let loc = self.index.get(hash_id).ok_or(LedgerError::NotFound(*hash_id))?;
        Ok((&self.chain[loc.height as usize].transactions[loc.position], *loc))
    }

    /// Number of sealed transactions carrying `hash_id`.
    pub fn occurrences(&self, hash_id: &Digest) -> usize {
        self.chain
            .iter()
            .flat_map(|b| &b.transactions)
            .filter(|tx| tx.payload_hash == *hash_id)
            .count()
    }

    /// One hex-encoded canonical block per line.
    pub fn export(&self) -> String {
        export_blocks(&self.chain)
    }
}

pub fn export_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        out.push_str(&hex::encode(b.encode()));
        out.push('\n');
    }
    out
}

/// Decodes an export. A line that does not decode is reported as a bad block
/// at that line's height.
pub fn import_blocks(text: &str) -> Result<Vec<Block>, BadBlock> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let bytes = hex::decode(line.trim()).map_err(|e| BadBlock::at(i as u64, format!("hex: {e}")))?;
            Block::decode(&bytes).map_err(|e| BadBlock::at(i as u64, format!("decode: {e}")))
        })
        .collect()
}

/// Decode and verify an exported chain, returning its height.
pub fn verify_export(text: &str) -> Result<u64, BadBlock> {
    let blocks = import_blocks(text)?;
    verify_blocks(&blocks)?;
    Ok(blocks.len() as u64)
}

/// Checks heights, links, header digests, transaction roots, signatures and
/// sequence monotonicity; reports the lowest offending height.
pub fn verify_blocks(blocks: &[Block]) -> Result<(), BadBlock> {
    let mut prev = Digest::ZERO;
    let mut last_seq: Option<u64> = None;
    for (i, b) in blocks.iter().enumerate() {
        let h = i as u64;
        if b.header.height != h {
            return Err(BadBlock::at(h, "height field"));
        }
        if b.header.prev_hash != prev {
            return Err(BadBlock::at(h, "previous-hash link"));
        }
        if b.header.digest() != b.hash {
            return Err(BadBlock::at(h, "header digest"));
        }
        if b.transactions.is_empty() {
            return Err(BadBlock::at(h, "empty block"));
        }
        if tx_root(&b.transactions) != b.header.tx_root {
            return Err(BadBlock::at(h, "transaction root"));
        }
        for tx in &b.transactions {
            if !tx.signature_valid() {
                return Err(BadBlock::at(h, format!("signature of seq {}", tx.seq_id)));
            }
            if last_seq.is_some_and(|l| tx.seq_id <= l) {
                return Err(BadBlock::at(h, format!("sequence {} not increasing", tx.seq_id)));
            }
            last_seq = Some(tx.seq_id);
        }
        prev = b.hash;
    }
    Ok(())
}
