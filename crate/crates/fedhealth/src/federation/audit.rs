//! Line-delimited audit trail of every parameter movement in a protocol
//! run. Records carry only metadata (who, what kind of payload, how many
//! bytes, which model fingerprint) so the log itself can be checked for
//! the privacy contract: the server must never appear holding a client's
//! plaintext parameters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// What a record's payload was. `ClientModelPlaintext` at the server is
/// the one combination the protocol must never produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    CloudModelPlaintext,
    CloudModelEncrypted,
    ClientModelPlaintext,
    ClientModelEncrypted,
    AggregateEncrypted,
    AggregatePlaintext,
    Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// Experiment repetition this record belongs to.
    pub repetition: u32,
    /// Protocol round; 0 covers pre-round work (cloud training).
    pub round: u32,
    /// "server", "client_<subject>", or "key_authority".
    pub actor: String,
    pub event: String,
    pub payload: PayloadKind,
    /// Architecture fingerprint of the model the payload refers to
    /// (empty for pure metadata records).
    pub fingerprint: String,
    pub bytes: u64,
}

/// Append-only record list with JSONL persistence.
#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> AuditLog {
        AuditLog::default()
    }

    pub fn push(&mut self, record: AuditRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: AuditLog) {
        self.records.extend(other.records);
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::parse(format!("audit serialization: {e}")))?;
            let _ = writeln!(out, "{line}");
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<AuditLog> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: AuditRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("audit line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(AuditLog { records })
    }

    /// The privacy contract, checked mechanically: no record shows the
    /// server holding client-model plaintext, and the only plaintext
    /// payloads attributed to the server are its own cloud model or the
    /// already-aggregated result.
    pub fn server_plaintext_violations(&self) -> Vec<&AuditRecord> {
        self.records
            .iter()
            .filter(|r| {
                r.actor == "server"
                    && matches!(
                        r.payload,
                        PayloadKind::ClientModelPlaintext
                    )
            })
            .collect()
    }
}
