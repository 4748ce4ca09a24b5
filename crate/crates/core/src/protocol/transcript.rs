use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    NodeToVerifier,
    VerifierToNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub direction: Flow,
    /// Encoded message (type byte and payload) in hex.
    pub payload: String,
    pub timestamp_ns: u64,
}

/// Verifier-side record of one session. The CRP index is kept for
/// auditing and never leaves the verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: u64,
    pub node_id: u8,
    pub index: usize,
    pub records: Vec<TranscriptRecord>,
    pub verdict: Option<Verdict>,
}

impl SessionTranscript {
    pub fn messages(&self) -> usize {
        self.records.len()
    }

    /// Payload bytes (type bytes excluded) across all messages.
    pub fn payload_bytes(&self) -> usize {
        self.records.iter().map(|r| r.payload.len() / 2 - 1).sum()
    }

    pub fn payload_of(&self, tag: u8) -> Option<Vec<u8>> {
        self.records
            .iter()
            .filter_map(|r| hex::decode(&r.payload).ok())
            .find(|b| b.first() == Some(&tag))
    }
}

/// Closed transcripts, kept in memory and optionally appended to a
/// JSON-lines file.
#[derive(Debug, Default)]
pub struct TranscriptLog {
    closed: Vec<SessionTranscript>,
    file: Option<File>,
}

impl TranscriptLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn append_to(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self {
            closed: Vec::new(),
            file: Some(OpenOptions::new().create(true).append(true).open(path)?),
        })
    }

    pub fn push(&mut self, t: SessionTranscript) -> std::io::Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&t).map_err(std::io::Error::other)?;
            writeln!(f, "{line}")?;
        }
        self.closed.push(t);
        Ok(())
    }

    pub fn closed(&self) -> &[SessionTranscript] {
        &self.closed
    }
}

pub fn read_transcripts(path: impl AsRef<Path>) -> std::io::Result<Vec<SessionTranscript>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
