//! A verifier and a provisioned node joined by in-process loopback links.

use std::sync::Arc;
use std::time::Duration;

use crate::models::{ModelBundle, NodeModelSet, VerifierModels};
use crate::protocol::{
    decode_wire, encode_wire, ChallengeMsg, Clock, IndexStore, ManualClock, Message, NodeState, ProtocolError,
    ResponseMsg, SessionId, SessionTranscript, TranscriptLog, Verdict, VerifierState, DEFAULT_T_MAX,
};
use crate::transport::{
    loopback_pair, run_node, serve_connection, Fault, FrameChannel, NodeRun, ServeOutcome, TransportError, TAG_VERDICT,
};

pub const DEFAULT_IO_TIMEOUT: Duration = Duration::from_secs(5);

pub struct Deployment {
    pub verifier: VerifierState,
    pub node: NodeState,
    /// Present when the verifier runs on an injected clock.
    pub clock: Option<ManualClock>,
    pub io_timeout: Duration,
}

/// One session driven by an active attacker instead of the node.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSession {
    pub session: Option<SessionId>,
    pub challenge: Option<ChallengeMsg>,
    pub verdict: Option<Verdict>,
    /// The verifier had no unused CRP left.
    pub pool_exhausted: bool,
}

impl Deployment {
    /// Fresh in-memory deployment on an injected clock.
    pub fn fresh(bundle: &ModelBundle, seed: u64) -> Self {
        Self::fresh_with(bundle.verifier_models(), bundle.node_set(), bundle.meta.n, DEFAULT_T_MAX, seed)
    }

    pub fn fresh_with(verifier: VerifierModels, node: NodeModelSet, n: usize, t_max: Duration, seed: u64) -> Self {
        let clock = ManualClock::new();
        let vs = VerifierState::new(
            verifier,
            IndexStore::in_memory(n),
            TranscriptLog::in_memory(),
            t_max,
            Arc::new(clock.clone()) as Arc<dyn Clock>,
            seed,
        );
        Self {
            verifier: vs,
            node: NodeState::new(1, node),
            clock: Some(clock),
            io_timeout: DEFAULT_IO_TIMEOUT,
        }
    }

    pub fn new(verifier: VerifierState, node: NodeState, clock: Option<ManualClock>) -> Self {
        Self {
            verifier,
            node,
            clock,
            io_timeout: DEFAULT_IO_TIMEOUT,
        }
    }

    /// Same models, same used-index set, independent from here on.
    pub fn fork(&self, seed: u64) -> Self {
        Self {
            verifier: self.verifier.fork(seed),
            node: self.node.clone(),
            clock: self.clock.clone(),
            io_timeout: self.io_timeout,
        }
    }

    /// Runs the genuine node against the verifier. `node_faults` are
    /// applied to frames the node sends (0 = request, 1 = response).
    /// One honest session. A verifier with no unused CRP left yields
    /// `Protocol(PoolExhausted)`.
    pub fn honest_session(&self, node_faults: &[(usize, Fault)]) -> Result<(ServeOutcome, NodeRun), TransportError> {
        let (mut v_end, mut n_end) = loopback_pair(self.clock.clone());
        let plan = n_end.faults();
        for &(k, f) in node_faults {
            plan.at(k, f);
        }
        let io = self.io_timeout;
        std::thread::scope(|s| {
            let server = s.spawn(|| serve_connection(&self.verifier, &mut v_end, io));
            let node = run_node(&self.node, &mut n_end, io);
            n_end.close();
            let outcome = server.join().expect("verifier thread panicked");
            if outcome.pool_exhausted {
                return Err(TransportError::Protocol(ProtocolError::PoolExhausted {
                    n: self.verifier.models().dnn.n(),
                }));
            }
            node.map(|run| (outcome, run))
        })
    }

    /// Opens a session as node `node_id` and answers the challenge with
    /// whatever `answer` returns (`None` hangs up).
    pub fn attacker_session(
        &self,
        node_id: u8,
        answer: impl FnOnce(&ChallengeMsg) -> Option<ResponseMsg>,
    ) -> Result<AttackSession, TransportError> {
        let (mut v_end, mut a_end) = loopback_pair(self.clock.clone());
        let io = self.io_timeout;
        std::thread::scope(|s| {
            let server = s.spawn(|| serve_connection(&self.verifier, &mut v_end, io));
            let run = (|| -> Result<(Option<ChallengeMsg>, Option<Verdict>), TransportError> {
                a_end.send_payload(&encode_wire(&Message::AuthRequest(crate::protocol::AuthRequest { node_id })))?;
                let ch = match decode_wire(&a_end.recv_payload(Some(io))?)? {
                    Message::Challenge(c) => c,
                    other => return Err(TransportError::Unexpected(format!("{other:?}"))),
                };
                let Some(resp) = answer(&ch) else {
                    return Ok((Some(ch), None));
                };
                a_end.send_payload(&encode_wire(&Message::Response(resp)))?;
                let notice = a_end.recv_payload(Some(io))?;
                let v = match notice.as_slice() {
                    [TAG_VERDICT, code] => Verdict::from_code(*code),
                    _ => None,
                };
                Ok((Some(ch), v))
            })();
            a_end.close();
            let outcome = server.join().expect("verifier thread panicked");
            let pool_exhausted = outcome.pool_exhausted;
            match run {
                Ok((challenge, v)) => Ok(AttackSession {
                    session: outcome.session,
                    challenge,
                    verdict: outcome.verdict.or(v),
                    pool_exhausted,
                }),
                Err(_) if pool_exhausted => Ok(AttackSession {
                    session: None,
                    challenge: None,
                    verdict: None,
                    pool_exhausted,
                }),
                Err(e) => Err(e),
            }
        })
    }

    pub fn transcripts(&self) -> Vec<SessionTranscript> {
        self.verifier.transcripts()
    }

    pub fn transcript(&self, id: SessionId) -> Option<SessionTranscript> {
        self.verifier.transcripts().into_iter().find(|t| t.session_id == id)
    }

    /// Parameter digests of every defender network (verifier and node).
    pub fn defender_digests(&self) -> Vec<u32> {
        let v = self.verifier.models();
        let n = &self.node.models;
        vec![
            v.dnn.net().param_digest(),
            v.encoder1.net().param_digest(),
            v.decoder1.net().param_digest(),
            n.basic_encoder2().net().param_digest(),
            n.extended_encoder2.extension().param_digest(),
            n.decoder2.net().param_digest(),
            n.verifier_encoder_copy.net().param_digest(),
        ]
    }
}
