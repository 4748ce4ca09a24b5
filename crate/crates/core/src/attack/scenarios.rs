use std::collections::HashMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttackError, Deployment, Regressor};
use crate::models::{binarize, LatentBox, LatentChallenge, LatentResponse, NodeModelSet};
use crate::protocol::wire::{TAG_CHALLENGE, TAG_RESPONSE};
use crate::protocol::{decode_wire, hamming, Message, ResponseMsg, SessionTranscript, Verdict};
use crate::transport::Fault;

/// LC-LR pairs observed on the wire in accepted sessions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EavesdropLog {
    pub pairs: Vec<(LatentChallenge, LatentResponse)>,
}

fn decoded(t: &SessionTranscript, tag: u8) -> Option<Message> {
    t.payload_of(tag).and_then(|b| decode_wire(&b).ok())
}

impl EavesdropLog {
    /// Keeps only sessions that closed with `Accept`.
    pub fn from_transcripts(ts: &[SessionTranscript]) -> Self {
        let pairs = ts
            .iter()
            .filter(|t| t.verdict == Some(Verdict::Accept))
            .filter_map(|t| match (decoded(t, TAG_CHALLENGE), decoded(t, TAG_RESPONSE)) {
                (Some(Message::Challenge(c)), Some(Message::Response(r))) => Some((c.lc(), r.lr())),
                _ => None,
            })
            .collect();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Runs `sessions` honest sessions and returns what a passive listener saw.
pub fn harvest(dep: &Deployment, sessions: usize) -> Result<EavesdropLog, AttackError> {
    for _ in 0..sessions {
        dep.honest_session(&[])?;
    }
    Ok(EavesdropLog::from_transcripts(&dep.transcripts()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rate {
    pub trials: usize,
    pub hits: usize,
    pub rate: f64,
}

impl Rate {
    pub fn new(trials: usize, hits: usize) -> Self {
        Self {
            trials,
            hits,
            rate: if trials == 0 { 0.0 } else { hits as f64 / trials as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub requested: usize,
    /// Sessions that were actually opened.
    pub rejected: Rate,
    pub accepted: usize,
    pub pool_exhausted: usize,
}

/// Opens fresh sessions and answers each with a logged response.
pub fn replay_attack(log: &EavesdropLog, dep: &Deployment, trials: usize) -> Result<ReplayReport, AttackError> {
    if log.is_empty() {
        return Err(AttackError::EmptyLog);
    }
    let (mut opened, mut rejected, mut accepted, mut exhausted) = (0, 0, 0, 0);
    for k in 0..trials {
        let lr = log.pairs[k % log.len()].1;
        let s = dep.attacker_session(dep.node.node_id, |_| Some(ResponseMsg::new(&lr)))?;
        if s.pool_exhausted {
            exhausted += 1;
            continue;
        }
        opened += 1;
        match s.verdict {
            Some(Verdict::Accept) => accepted += 1,
            _ => rejected += 1,
        }
    }
    Ok(ReplayReport {
        requested: trials,
        rejected: Rate::new(opened, rejected),
        accepted,
        pool_exhausted: exhausted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpersonationReport {
    /// Uniform over the enrolled-LC bounding box.
    pub uniform: Rate,
    /// Untouched genuine LCs (a correct node never aborts these).
    pub genuine: Rate,
    /// Genuine LCs with every element moved by ±`noise` raw units.
    pub perturbed: Rate,
    pub noise: f64,
}

fn uniform_in(rng: &mut ChaCha8Rng, b: &LatentBox) -> LatentChallenge {
    LatentChallenge(std::array::from_fn(|d| {
        if b.max[d] > b.min[d] {
            rng.random_range(b.min[d]..b.max[d])
        } else {
            b.min[d]
        }
    }))
}

fn aborts(node: &NodeModelSet, lcs: &[LatentChallenge]) -> usize {
    let wire: Vec<LatentChallenge> = lcs.iter().map(LatentChallenge::quantized).collect();
    node.verify_batch(&wire).iter().filter(|ok| !**ok).count()
}

/// Feeds forged challenges to the node's authenticity check (in wire
/// precision, as `NodeState::on_challenge` sees them) and counts aborts.
pub fn impersonate_verifier(
    node: &NodeModelSet,
    genuine: &[LatentChallenge],
    lc_box: &LatentBox,
    trials: usize,
    seed: u64,
) -> Result<ImpersonationReport, AttackError> {
    if genuine.is_empty() {
        return Err(AttackError::EmptyLog);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = 10.0 * node.params.delta_raw();
    let uniform: Vec<LatentChallenge> = (0..trials).map(|_| uniform_in(&mut rng, lc_box)).collect();
    let clean: Vec<LatentChallenge> = (0..trials).map(|k| genuine[k % genuine.len()]).collect();
    let perturbed: Vec<LatentChallenge> = clean
        .iter()
        .map(|g| LatentChallenge(g.0.map(|v| if rng.random::<bool>() { v + noise } else { v - noise })))
        .collect();
    Ok(ImpersonationReport {
        uniform: Rate::new(trials, aborts(node, &uniform)),
        genuine: Rate::new(trials, aborts(node, &clean)),
        perturbed: Rate::new(trials, aborts(node, &perturbed)),
        noise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingReport {
    pub attacker: String,
    pub train_pairs: usize,
    pub requested: usize,
    pub sessions: usize,
    pub pool_exhausted: usize,
    pub accepted: Rate,
    /// Decoded response bits matching the expected response.
    pub bit_accuracy: f64,
    pub exact_match_rate: f64,
    /// Same two metrics on the logged pairs themselves (memorization).
    pub train_fit_bit_accuracy: f64,
    pub train_fit_exact_rate: f64,
}

pub const MIN_LOG: usize = 100;

/// Answers fresh sessions with the attacker's predicted LR and scores the
/// decoded responses against the CRPs the verifier actually drew.
pub fn ml_modeling_attack(
    log: &EavesdropLog,
    attacker: &dyn Regressor,
    dep: &Deployment,
    trials: usize,
) -> Result<ModelingReport, AttackError> {
    if log.len() < MIN_LOG {
        return Err(AttackError::InsufficientLog { got: log.len(), need: MIN_LOG });
    }
    let models = dep.verifier.models();
    let tau = dep.node.models.params.tau;
    let decode = |lr: &LatentResponse| binarize(&models.decoder1.decode_response(lr), tau).ok();

    let (mut fit_ok, mut fit_bits, mut fit_exact) = (0usize, 0usize, 0usize);
    for (lc, lr) in &log.pairs {
        let (Some(want), Some(got)) = (decode(lr), decode(&attacker.predict(lc).quantized())) else {
            fit_bits += crate::puf::RESPONSE_BITS;
            continue;
        };
        let d = hamming(&want, &got)?;
        fit_ok += want.len() - d;
        fit_bits += want.len();
        fit_exact += (d == 0) as usize;
    }

    let (mut sessions, mut exhausted, mut accepted) = (0, 0, 0);
    let (mut ok_bits, mut all_bits, mut exact) = (0usize, 0usize, 0usize);
    for _ in 0..trials {
        let mut sent = None;
        let s = dep.attacker_session(dep.node.node_id, |ch| {
            let r = ResponseMsg::new(&attacker.predict(&ch.lc()));
            sent = Some(r);
            Some(r)
        })?;
        if s.pool_exhausted {
            exhausted += 1;
            continue;
        }
        sessions += 1;
        accepted += (s.verdict == Some(Verdict::Accept)) as usize;
        let t = s.session.and_then(|id| dep.transcript(id)).ok_or(AttackError::MissingTranscript)?;
        let (_, expected) = models.dnn.generate_crp(t.index)?;
        let want = expected.to_bits();
        all_bits += want.len();
        if let Some(got) = sent.and_then(|r| decode(&r.lr())) {
            let d = hamming(&want, &got)?;
            ok_bits += want.len() - d;
            exact += (d == 0) as usize;
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ModelingReport {
        attacker: attacker.name().to_string(),
        train_pairs: log.len(),
        requested: trials,
        sessions,
        pool_exhausted: exhausted,
        accepted: Rate::new(sessions, accepted),
        bit_accuracy: frac(ok_bits, all_bits),
        exact_match_rate: frac(exact, sessions),
        train_fit_bit_accuracy: frac(fit_ok, fit_bits),
        train_fit_exact_rate: frac(fit_exact, log.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitmReport {
    pub delay_ns: u64,
    pub t_max_ns: u64,
    pub verdict: Option<Verdict>,
}

/// Genuine node whose response is held back by `delay` on the injected
/// clock before it reaches the verifier.
pub fn mitm_delay_attack(dep: &Deployment, delay: Duration) -> Result<MitmReport, AttackError> {
    if dep.clock.is_none() {
        return Err(AttackError::NoInjectedClock);
    }
    let (outcome, _) = dep.honest_session(&[(1, Fault::Delay(delay))])?;
    Ok(MitmReport {
        delay_ns: delay.as_nanos() as u64,
        t_max_ns: dep.verifier.t_max().as_nanos() as u64,
        verdict: outcome.verdict,
    })
}

/// Authenticity-check outcomes; genuine rows are `true_accept +
/// false_reject`, fake rows `true_reject + false_accept`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_accept: usize,
    pub false_reject: usize,
    pub true_reject: usize,
    pub false_accept: usize,
}

impl ConfusionMatrix {
    pub fn genuine_total(&self) -> usize {
        self.true_accept + self.false_reject
    }

    pub fn fake_total(&self) -> usize {
        self.true_reject + self.false_accept
    }

    pub fn true_accept_rate(&self) -> f64 {
        Rate::new(self.genuine_total(), self.true_accept).rate
    }

    pub fn true_reject_rate(&self) -> f64 {
        Rate::new(self.fake_total(), self.true_reject).rate
    }
}

/// Uniform draws from `lc_box` that stay more than `radius` (∞-norm) away
/// from every point of `exclude`.
pub fn fake_latents(
    lc_box: &LatentBox,
    exclude: &[LatentChallenge],
    radius: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<LatentChallenge> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let c = uniform_in(rng, lc_box);
        if exclude.iter().all(|g| g.max_abs_diff(&c) > radius) {
            out.push(c);
        }
    }
    out
}

/// Genuine LCs cycle through `genuine_pool`; fakes are uniform over the
/// enrolled bounding box outside the δ-balls of the pool.
pub fn fake_lc_sweep(
    node: &NodeModelSet,
    genuine_pool: &[LatentChallenge],
    lc_box: &LatentBox,
    genuine_count: usize,
    fake_count: usize,
    seed: u64,
) -> Result<ConfusionMatrix, AttackError> {
    if genuine_pool.is_empty() && genuine_count > 0 {
        return Err(AttackError::EmptyLog);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genuine: Vec<LatentChallenge> = (0..genuine_count).map(|k| genuine_pool[k % genuine_pool.len()]).collect();
    let fakes = fake_latents(lc_box, genuine_pool, node.params.delta_raw(), fake_count, &mut rng);
    let false_reject = aborts(node, &genuine);
    let true_reject = aborts(node, &fakes);
    Ok(ConfusionMatrix {
        true_accept: genuine_count - false_reject,
        false_reject,
        true_reject,
        false_accept: fake_count - true_reject,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub sessions: usize,
    pub distinct_indices: usize,
    /// Every index drawn more than once, with the sessions that drew it.
    pub index_reuse: Vec<(usize, Vec<u64>)>,
    /// Latent challenges seen in more than one session.
    pub lc_repeats: usize,
    pub lr_repeats: usize,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.index_reuse.is_empty() && self.lc_repeats == 0 && self.lr_repeats == 0
    }
}

fn repeats(items: impl Iterator<Item = Vec<u8>>) -> usize {
    let mut seen: HashMap<Vec<u8>, usize> = HashMap::new();
    for b in items {
        *seen.entry(b).or_default() += 1;
    }
    seen.values().map(|c| c - 1).sum()
}

/// Checks that no CRP index, LC or LR appears in two sessions.
pub fn forward_secrecy_audit(ts: &[SessionTranscript]) -> Result<AuditReport, AttackError> {
    if ts.len() < 2 {
        return Err(AttackError::TooFewTranscripts(ts.len()));
    }
    let mut by_index: HashMap<usize, Vec<u64>> = HashMap::new();
    for t in ts {
        by_index.entry(t.index).or_default().push(t.session_id);
    }
    let mut index_reuse: Vec<(usize, Vec<u64>)> = by_index.iter().filter(|(_, s)| s.len() > 1).map(|(i, s)| (*i, s.clone())).collect();
    index_reuse.sort();
    Ok(AuditReport {
        sessions: ts.len(),
        distinct_indices: by_index.len(),
        index_reuse,
        lc_repeats: repeats(ts.iter().filter_map(|t| t.payload_of(TAG_CHALLENGE))),
        lr_repeats: repeats(ts.iter().filter_map(|t| t.payload_of(TAG_RESPONSE))),
    })
}

