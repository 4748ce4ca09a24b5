//! Transport-agnostic authentication state machines.
//!
//! ```text
//! node                         verifier
//!  | -- AuthRequest(id) ------>  | draw unused index i, (C, R) = DNN(i)
//!  | <----- ChallengeMsg(LC) --  | LC = Encoder1(C), deadline = now + T_max
//!  | check LC authentic          |
//!  | -- ResponseMsg(LR) ------>  | R′ = bin(Decoder1(LR)); accept iff R′ = R
//! ```

mod clock;
mod store;
mod transcript;
pub mod wire;

pub use clock::{Clock, ManualClock, SystemClock};
pub use store::{IndexStore, StoreError};
pub use transcript::{read_transcripts, Flow, SessionTranscript, TranscriptLog, TranscriptRecord};
pub use wire::{decode_wire, encode_wire, AuthRequest, ChallengeMsg, Message, ResponseMsg, WireError};

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{binarize, ModelError, NodeModelSet, VerifierModels, DEFAULT_TAU};
use crate::puf::Response;

pub const DEFAULT_T_MAX: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    RejectResponseMismatch,
    RejectTimeout,
    NodeAbortUnauthenticLc,
}

impl Verdict {
    pub fn code(self) -> u8 {
        match self {
            Verdict::Accept => 0,
            Verdict::RejectResponseMismatch => 1,
            Verdict::RejectTimeout => 2,
            Verdict::NodeAbortUnauthenticLc => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Verdict::Accept,
            1 => Verdict::RejectResponseMismatch,
            2 => Verdict::RejectTimeout,
            3 => Verdict::NodeAbortUnauthenticLc,
            _ => return None,
        })
    }

    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("all {n} enrolled CRPs have been used; re-enrollment required")]
    PoolExhausted { n: usize },
    #[error("unknown or closed session {0}")]
    UnknownSession(u64),
    #[error("bit vectors of length {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("transcript log: {0}")]
    Log(#[from] std::io::Error),
}

/// Number of differing positions.
pub fn hamming(a: &[bool], b: &[bool]) -> Result<usize, ProtocolError> {
    if a.len() != b.len() {
        return Err(ProtocolError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

pub type SessionId = u64;

#[derive(Debug)]
struct Session {
    expected: Response,
    deadline: Duration,
    transcript: SessionTranscript,
}

#[derive(Debug)]
struct Inner {
    store: IndexStore,
    rng: ChaCha8Rng,
    sessions: HashMap<SessionId, Session>,
    next_id: SessionId,
    log: TranscriptLog,
}

/// Verifier side. Inference runs outside the lock; index drawing, the
/// session map and the transcript log are guarded by one mutex.
pub struct VerifierState {
    models: VerifierModels,
    tau: f64,
    t_max: Duration,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

/// Outcome of [`VerifierState::on_request`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Issued {
    pub session: SessionId,
    pub challenge: ChallengeMsg,
    pub deadline: Duration,
}

impl VerifierState {
    pub fn new(
        models: VerifierModels,
        store: IndexStore,
        log: TranscriptLog,
        t_max: Duration,
        clock: Arc<dyn Clock>,
        seed: u64,
    ) -> Self {
        Self {
            models,
            tau: DEFAULT_TAU,
            t_max,
            clock,
            inner: Mutex::new(Inner {
                store,
                rng: ChaCha8Rng::seed_from_u64(seed),
                sessions: HashMap::new(),
                next_id: 1,
                log,
            }),
        }
    }

    /// A second verifier with the same models, clock and T_max whose store
    /// is a detached copy of this one's (an independent deployment that
    /// has seen the same sessions). Its transcript log starts empty.
    pub fn fork(&self, seed: u64) -> Self {
        let store = self.lock().store.detached();
        Self::new(
            self.models.clone(),
            store,
            TranscriptLog::in_memory(),
            self.t_max,
            Arc::clone(&self.clock),
            seed,
        )
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn t_max(&self) -> Duration {
        self.t_max
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn models(&self) -> &VerifierModels {
        &self.models
    }

    pub fn remaining(&self) -> usize {
        self.lock().store.remaining()
    }

    pub fn active_sessions(&self) -> usize {
        self.lock().sessions.len()
    }

    /// Copies of every closed transcript recorded by this instance.
    pub fn transcripts(&self) -> Vec<SessionTranscript> {
        self.lock().log.closed().to_vec()
    }

    fn record(&self, direction: Flow, msg: &Message) -> TranscriptRecord {
        TranscriptRecord {
            direction,
            payload: hex::encode(encode_wire(msg)),
            timestamp_ns: self.clock.now().as_nanos() as u64,
        }
    }

    /// Draws a fresh index, regenerates its CRP and issues the latent
    /// challenge. The deadline runs from the moment the challenge is issued.
    pub fn on_request(&self, req: AuthRequest) -> Result<Issued, ProtocolError> {
        let req_record = self.record(Flow::NodeToVerifier, &Message::AuthRequest(req));
        let (index, session) = {
            let mut inner = self.lock();
            let Inner { store, rng, .. } = &mut *inner;
            let n = store.n();
            let index = store.draw(rng)?.ok_or(ProtocolError::PoolExhausted { n })?;
            let id = inner.next_id;
            inner.next_id += 1;
            (index, id)
        };
        let (c, r) = self.models.dnn.generate_crp(index)?;
        let challenge = ChallengeMsg::new(&self.models.encoder1.encode_challenge(c));
        let ch_record = self.record(Flow::VerifierToNode, &Message::Challenge(challenge));
        let deadline = self.clock.now() + self.t_max;
        let transcript = SessionTranscript {
            session_id: session,
            node_id: req.node_id,
            index,
            records: vec![req_record, ch_record],
            verdict: None,
        };
        self.lock().sessions.insert(
            session,
            Session {
                expected: r,
                deadline,
                transcript,
            },
        );
        Ok(Issued {
            session,
            challenge,
            deadline,
        })
    }

    fn take(&self, id: SessionId) -> Result<Session, ProtocolError> {
        self.lock().sessions.remove(&id).ok_or(ProtocolError::UnknownSession(id))
    }

    fn close(&self, mut s: Session, verdict: Verdict) -> Result<Verdict, ProtocolError> {
        s.transcript.verdict = Some(verdict);
        self.lock().log.push(s.transcript)?;
        Ok(verdict)
    }

    /// Decodes the latent response and compares it with the stored
    /// response. The session is closed and its response erased either way.
    pub fn on_response(&self, id: SessionId, msg: &ResponseMsg) -> Result<Verdict, ProtocolError> {
        let mut s = self.take(id)?;
        let now = self.clock.now();
        s.transcript.records.push(self.record(Flow::NodeToVerifier, &Message::Response(*msg)));
        if now > s.deadline {
            return self.close(s, Verdict::RejectTimeout);
        }
        let decoded = self.models.decoder1.decode_response(&msg.lr());
        let verdict = match binarize(&decoded, self.tau) {
            Ok(bits) if hamming(&bits, &s.expected.to_bits())? == 0 => Verdict::Accept,
            _ => Verdict::RejectResponseMismatch,
        };
        self.close(s, verdict)
    }

    /// Closes a session whose node hung up without answering.
    pub fn on_node_abort(&self, id: SessionId) -> Result<Verdict, ProtocolError> {
        let s = self.take(id)?;
        self.close(s, Verdict::NodeAbortUnauthenticLc)
    }

    /// Closes a session that produced no usable response before its deadline.
    pub fn on_expired(&self, id: SessionId) -> Result<Verdict, ProtocolError> {
        let s = self.take(id)?;
        self.close(s, Verdict::RejectTimeout)
    }

    /// Closes every session past its deadline; returns how many.
    pub fn sweep_expired(&self) -> Result<usize, ProtocolError> {
        let now = self.clock.now();
        let expired: Vec<SessionId> = {
            let inner = self.lock();
            inner
                .sessions
                .iter()
                .filter(|(_, s)| now > s.deadline)
                .map(|(&id, _)| id)
                .collect()
        };
        for id in &expired {
            self.on_expired(*id)?;
        }
        Ok(expired.len())
    }

    pub fn deadline(&self, id: SessionId) -> Option<Duration> {
        self.lock().sessions.get(&id).map(|s| s.deadline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeReply {
    Respond(ResponseMsg),
    Abort,
}

/// Node side: immutable after provisioning and free of session memory.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: u8,
    pub models: NodeModelSet,
}

impl NodeState {
    pub fn new(node_id: u8, models: NodeModelSet) -> Self {
        Self { node_id, models }
    }

    pub fn request(&self) -> AuthRequest {
        AuthRequest { node_id: self.node_id }
    }

    /// Answers only challenges that pass the authenticity check.
    pub fn on_challenge(&self, msg: &ChallengeMsg) -> NodeReply {
        let lc = msg.lc();
        if !lc.is_finite() || !self.models.verify_lc_authentic(&lc) {
            return NodeReply::Abort;
        }
        NodeReply::Respond(ResponseMsg::new(&self.models.predict_latent_response(&lc)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_basics() {
        let x = [true, false, true];
        assert_eq!(hamming(&x, &x).unwrap(), 0);
        assert_eq!(hamming(&[false; 4], &[true; 4]).unwrap(), 4);
        assert!(hamming(&[true], &[true, false]).is_err());
    }

    #[test]
    fn verdict_codes_round_trip() {
        for v in [
            Verdict::Accept,
            Verdict::RejectResponseMismatch,
            Verdict::RejectTimeout,
            Verdict::NodeAbortUnauthenticLc,
        ] {
            assert_eq!(Verdict::from_code(v.code()), Some(v));
        }
        assert_eq!(Verdict::from_code(9), None);
    }
}
