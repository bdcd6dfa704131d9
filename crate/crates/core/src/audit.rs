//! Hash-chained, append-only audit log.
//!
//! `this_hash = sha256(prev_hash || canonical(seq, actor_id, action,
//! entity_ref, payload_digest, timestamp))`, with 64 hex zeros before the
//! first event. Events live in the key-value backend under zero-padded
//! sequence keys next to a head record holding the latest seq and hash.

use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical::{self, ZERO_HASH};
use crate::clock::Timestamp;
use crate::store::{EntityRef, KvBackend, StoreError};

const EVENT_PREFIX: &str = "audit/event/";
const HEAD_KEY: &str = "audit/head";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub actor_id: String,
    pub action: String,
    pub entity_ref: EntityRef,
    pub payload_digest: String,
    pub timestamp: Timestamp,
    pub prev_hash: String,
    pub this_hash: String,
}

/// Everything but the chain fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewEvent {
    pub actor_id: String,
    pub action: String,
    pub entity_ref: EntityRef,
    pub payload_digest: String,
    pub timestamp: Timestamp,
}

#[derive(Serialize)]
struct HashedFields<'a> {
    seq: u64,
    actor_id: &'a str,
    action: &'a str,
    entity_ref: &'a EntityRef,
    payload_digest: &'a str,
    timestamp: &'a Timestamp,
}

pub fn chain_hash(prev_hash: &str, seq: u64, e: &NewEvent) -> String {
    let fields = HashedFields {
        seq,
        actor_id: &e.actor_id,
        action: &e.action,
        entity_ref: &e.entity_ref,
        payload_digest: &e.payload_digest,
        timestamp: &e.timestamp,
    };
    let mut h = Sha256::new();
    h.update(prev_hash.as_bytes());
    h.update(canonical::to_vec(&fields));
    hex::encode(h.finalize())
}

impl AuditEvent {
    fn unchained(&self) -> NewEvent {
        NewEvent {
            actor_id: self.actor_id.clone(),
            action: self.action.clone(),
            entity_ref: self.entity_ref.clone(),
            payload_digest: self.payload_digest.clone(),
            timestamp: self.timestamp,
        }
    }

    pub fn recompute_hash(&self) -> String {
        chain_hash(&self.prev_hash, self.seq, &self.unchained())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("audit event has no actor")]
    MissingActor,
    #[error("audit event has no action")]
    MissingAction,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("malformed audit line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Head {
    seq: u64,
    hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceKind {
    /// Recomputed hash differs from the stored one.
    HashMismatch,
    /// `prev_hash` does not match the predecessor's hash.
    BrokenLink,
    /// The event expected at this seq is absent.
    Missing,
    /// The stored record at this seq cannot be decoded.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub seq: u64,
    pub kind: DivergenceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub valid: bool,
    pub checked: u64,
    pub first_divergence: Option<Divergence>,
    /// Events the head record says exist.
    pub expected_len: Option<u64>,
    pub actual_len: u64,
    pub length_mismatch: bool,
}

/// Checks a run of events that should start at `first_seq`, chained from `prev_hash`.
pub fn verify_events(events: &[AuditEvent], first_seq: u64, prev_hash: &str, expected_len: Option<u64>) -> VerificationReport {
    let mut prev = prev_hash.to_owned();
    let mut divergence = None;
    let mut checked = 0;
    for (i, e) in events.iter().enumerate() {
        let want_seq = first_seq + i as u64;
        let kind = if e.seq != want_seq {
            Some(DivergenceKind::Missing)
        } else if e.prev_hash != prev {
            Some(DivergenceKind::BrokenLink)
        } else if e.recompute_hash() != e.this_hash {
            Some(DivergenceKind::HashMismatch)
        } else {
            None
        };
        if let Some(kind) = kind {
            divergence = Some(Divergence { seq: want_seq, kind });
            break;
        }
        checked += 1;
        prev = e.this_hash.clone();
    }
    let actual_len = events.last().map(|e| e.seq).unwrap_or(first_seq.saturating_sub(1));
    let length_mismatch = expected_len.is_some_and(|n| n != actual_len);
    if divergence.is_none() {
        // A truncated tail is missing its first absent event.
        if expected_len.is_some_and(|n| n > actual_len) {
            divergence = Some(Divergence { seq: actual_len + 1, kind: DivergenceKind::Missing });
        }
    }
    VerificationReport {
        valid: divergence.is_none() && !length_mismatch,
        checked,
        first_divergence: divergence,
        expected_len,
        actual_len,
        length_mismatch,
    }
}

#[derive(Clone)]
pub struct AuditLog {
    kv: Arc<dyn KvBackend>,
    lock: Arc<Mutex<()>>,
}

pub fn event_key(seq: u64) -> String {
    format!("{EVENT_PREFIX}{seq:020}")
}

impl AuditLog {
    pub fn new(kv: Arc<dyn KvBackend>) -> Self {
        AuditLog { kv, lock: Arc::new(Mutex::new(())) }
    }

    fn head(&self) -> Result<Option<Head>, AuditError> {
        match self.kv.get(HEAD_KEY)? {
            None => Ok(None),
            Some(b) => serde_json::from_slice(&b)
                .map(Some)
                .map_err(|e| StoreError::Corrupt { key: HEAD_KEY.into(), reason: e.to_string() }.into()),
        }
    }

    pub fn append(&self, event: NewEvent) -> Result<AuditEvent, AuditError> {
        if event.actor_id.trim().is_empty() {
            return Err(AuditError::MissingActor);
        }
        if event.action.trim().is_empty() {
            return Err(AuditError::MissingAction);
        }
        let _g = self.lock.lock().unwrap();
        let (seq, prev_hash) = match self.head()? {
            Some(h) => (h.seq + 1, h.hash),
            None => (1, ZERO_HASH.to_owned()),
        };
        let this_hash = chain_hash(&prev_hash, seq, &event);
        let stored = AuditEvent {
            seq,
            actor_id: event.actor_id,
            action: event.action,
            entity_ref: event.entity_ref,
            payload_digest: event.payload_digest,
            timestamp: event.timestamp,
            prev_hash,
            this_hash: this_hash.clone(),
        };
        self.kv.put(&event_key(seq), &canonical::to_vec(&stored))?;
        self.kv.put(HEAD_KEY, &canonical::to_vec(&Head { seq, hash: this_hash }))?;
        Ok(stored)
    }

    pub fn len(&self) -> Result<u64, AuditError> {
        Ok(self.head()?.map(|h| h.seq).unwrap_or(0))
    }

    pub fn is_empty(&self) -> Result<bool, AuditError> {
        Ok(self.len()? == 0)
    }

    pub fn get(&self, seq: u64) -> Result<Option<AuditEvent>, AuditError> {
        let key = event_key(seq);
        match self.kv.get(&key)? {
            None => Ok(None),
            Some(b) => serde_json::from_slice(&b)
                .map(Some)
                .map_err(|e| StoreError::Corrupt { key, reason: e.to_string() }.into()),
        }
    }

    /// All stored events in seq order. Undecodable records surface as errors.
    pub fn events(&self) -> Result<Vec<AuditEvent>, AuditError> {
        self.kv
            .scan_prefix(EVENT_PREFIX)?
            .into_iter()
            .map(|(k, b)| serde_json::from_slice(&b).map_err(|e| StoreError::Corrupt { key: k, reason: e.to_string() }.into()))
            .collect()
    }

    /// Verifies the whole log against the head record.
    pub fn verify_chain(&self) -> Result<VerificationReport, AuditError> {
        let mut events = Vec::new();
        let mut malformed = None;
        for (k, b) in self.kv.scan_prefix(EVENT_PREFIX)? {
            match serde_json::from_slice::<AuditEvent>(&b) {
                Ok(e) => events.push(e),
                Err(_) => {
                    malformed = k[EVENT_PREFIX.len()..].parse::<u64>().ok();
                    break;
                }
            }
        }
        let mut report = verify_events(&events, 1, ZERO_HASH, Some(self.len()?));
        if let Some(seq) = malformed {
            let first = report.first_divergence.as_ref().map_or(u64::MAX, |d| d.seq);
            if seq <= first {
                report.first_divergence = Some(Divergence { seq, kind: DivergenceKind::Malformed });
            }
            report.valid = false;
        }
        Ok(report)
    }

    /// Verifies events `from..=to` (inclusive), linking to the stored event before `from`.
    pub fn verify_range(&self, from: u64, to: u64) -> Result<VerificationReport, AuditError> {
        let from = from.max(1);
        let prev = if from == 1 {
            ZERO_HASH.to_owned()
        } else {
            match self.get(from - 1)? {
                Some(e) => e.this_hash,
                None => {
                    return Ok(VerificationReport {
                        valid: false,
                        checked: 0,
                        first_divergence: Some(Divergence { seq: from - 1, kind: DivergenceKind::Missing }),
                        expected_len: None,
                        actual_len: 0,
                        length_mismatch: false,
                    })
                }
            }
        };
        let events: Vec<_> = self.events()?.into_iter().filter(|e| e.seq >= from && e.seq <= to).collect();
        let head = self.len()?;
        Ok(verify_events(&events, from, &prev, Some(to.min(head))))
    }

    pub fn export_ndjson(&self, out: &mut impl Write) -> Result<u64, AuditError> {
        let mut n = 0;
        for e in self.events()? {
            writeln!(out, "{}", canonical::to_string(&e)).map_err(StoreError::from)?;
            n += 1;
        }
        Ok(n)
    }
}

pub fn import_ndjson(input: impl BufRead) -> Result<Vec<AuditEvent>, AuditError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(StoreError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| AuditError::Malformed { line: i + 1, reason: e.to_string() })?;
        out.push(e);
    }
    Ok(out)
}

/// Offline check of an exported log.
pub fn verify_export(input: impl BufRead) -> Result<VerificationReport, AuditError> {
    let events = import_ndjson(input)?;
    Ok(verify_events(&events, 1, ZERO_HASH, None))
}
