//! Adversarial scenarios against a live in-process deployment.
//!
//! Device impersonation by an attacker without a model bundle has no
//! mechanism of its own: it is bounded by [`replay_attack`] (reusing
//! observed responses) and [`ml_modeling_attack`] (predicting new ones).

mod deployment;
mod regressors;
mod scenarios;

pub use deployment::{AttackSession, Deployment, DEFAULT_IO_TIMEOUT};
pub use regressors::{
    cholesky, cholesky_solve, MlpAttacker, RbfAttacker, RbfError, Regressor, ATTACKER_EPOCHS, ATTACKER_HIDDEN,
    RBF_LAMBDA,
};
pub use scenarios::{
    fake_latents, fake_lc_sweep, forward_secrecy_audit, harvest, impersonate_verifier, ml_modeling_attack,
    mitm_delay_attack, replay_attack, AuditReport, ConfusionMatrix, EavesdropLog, ImpersonationReport, MitmReport,
    ModelingReport, Rate, ReplayReport, MIN_LOG,
};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::models::{LatentChallenge, ModelBundle, ModelError};
use crate::nn::NnError;
use crate::protocol::{Clock, IndexStore, ManualClock, NodeState, ProtocolError, StoreError, TranscriptLog, VerifierState};
use crate::transport::TransportError;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("the eavesdrop log is empty")]
    EmptyLog,
    #[error("the eavesdrop log has {got} pairs, at least {need} are needed")]
    InsufficientLog { got: usize, need: usize },
    #[error("an audit needs at least 2 transcripts, got {0}")]
    TooFewTranscripts(usize),
    #[error("the scenario needs a deployment on an injected clock")]
    NoInjectedClock,
    #[error("the verifier kept no transcript for an opened session")]
    MissingTranscript,
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rbf(#[from] RbfError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Replay,
    Impersonate,
    MlMlp,
    MlRbf,
    Mitm,
    FakeLc,
    FsAudit,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Replay,
        Scenario::Impersonate,
        Scenario::MlMlp,
        Scenario::MlRbf,
        Scenario::Mitm,
        Scenario::FakeLc,
        Scenario::FsAudit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Replay => "replay",
            Scenario::Impersonate => "impersonate",
            Scenario::MlMlp => "ml-mlp",
            Scenario::MlRbf => "ml-rbf",
            Scenario::Mitm => "mitm",
            Scenario::FakeLc => "fake-lc",
            Scenario::FsAudit => "fs-audit",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| AttackError::UnknownScenario(s.to_string()))
    }
}

/// Sizes of every scenario. Each scenario runs on its own fresh deployment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub seed: u64,
    /// Honest sessions observed before the replay attack.
    pub replay_log: usize,
    pub replay_trials: usize,
    /// Honest sessions observed before the modeling attacks.
    pub modeling_log: usize,
    pub modeling_trials: usize,
    pub attacker_epochs: usize,
    pub impersonation_trials: usize,
    pub sweep_genuine: usize,
    pub sweep_fake: usize,
    pub fs_sessions: usize,
    pub t_max: Duration,
    /// Where the audit keeps its persistent index store.
    pub state_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replay_log: 24,
            replay_trials: 1000,
            modeling_log: 500,
            modeling_trials: 1000,
            attacker_epochs: ATTACKER_EPOCHS,
            impersonation_trials: 10_000,
            sweep_genuine: 10_000,
            sweep_fake: 10_000,
            fs_sessions: 10_000,
            t_max: crate::protocol::DEFAULT_T_MAX,
            state_dir: None,
        }
    }
}

/// One line of the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub config: Value,
    pub metrics: Value,
    pub digests_before: Vec<u32>,
    pub digests_after: Vec<u32>,
    pub models_unchanged: bool,
}

impl ScenarioReport {
    pub fn append_to(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", serde_json::to_string(self).map_err(std::io::Error::other)?)
    }
}

pub fn read_reports(path: impl AsRef<Path>) -> std::io::Result<Vec<ScenarioReport>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// Encoded latents of every enrolled challenge, regenerated by the verifier.
pub fn genuine_latents(bundle: &ModelBundle) -> Result<Vec<LatentChallenge>, AttackError> {
    Ok(bundle
        .dnn
        .generate_all()?
        .iter()
        .map(|crp| bundle.encoder1.encode_challenge(crp.challenge))
        .collect())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data")
}

/// Sessions of a forward-secrecy audit run, split by a verifier restart
/// half way. Returns every transcript and how many requests found the
/// pool exhausted.
pub fn fs_sessions_with_restart(
    bundle: &ModelBundle,
    store_path: &Path,
    sessions: usize,
    t_max: Duration,
    seed: u64,
) -> Result<(Vec<crate::protocol::SessionTranscript>, usize), AttackError> {
    if store_path.exists() {
        std::fs::remove_file(store_path)?;
    }
    let clock = ManualClock::new();
    let mut transcripts = Vec::new();
    let mut exhausted = 0;
    for (part, count) in [(0u64, sessions / 2), (1, sessions - sessions / 2)] {
        let vs = VerifierState::new(
            bundle.verifier_models(),
            IndexStore::open(store_path, bundle.meta.n)?,
            TranscriptLog::in_memory(),
            t_max,
            Arc::new(clock.clone()) as Arc<dyn Clock>,
            seed + part,
        );
        let dep = Deployment::new(vs, NodeState::new(1, bundle.node_set()), Some(clock.clone()));
        for _ in 0..count {
            match dep.honest_session(&[]) {
                Ok(_) => {}
                Err(TransportError::Protocol(ProtocolError::PoolExhausted { .. })) => exhausted += 1,
                Err(e) => return Err(e.into()),
            }
        }
        transcripts.extend(dep.transcripts());
    }
    Ok((transcripts, exhausted))
}

/// Runs one scenario against fresh deployments of `bundle`.
pub fn run_scenario(bundle: &ModelBundle, scenario: Scenario, cfg: &BenchConfig) -> Result<ScenarioReport, AttackError> {
    let seed = cfg.seed;
    let fresh = |s: u64| {
        Deployment::fresh_with(bundle.verifier_models(), bundle.node_set(), bundle.meta.n, cfg.t_max, s)
    };
    let probe = fresh(seed);
    let before = probe.defender_digests();
    let (config, metrics) = match scenario {
        Scenario::Replay => {
            let dep = fresh(seed);
            let log = harvest(&dep, cfg.replay_log)?;
            let r = replay_attack(&log, &dep, cfg.replay_trials)?;
            (json!({"log": cfg.replay_log, "trials": cfg.replay_trials}), to_value(&r))
        }
        Scenario::Impersonate => {
            let genuine = genuine_latents(bundle)?;
            let r = impersonate_verifier(&probe.node.models, &genuine, &bundle.meta.lc_box, cfg.impersonation_trials, seed)?;
            (json!({"trials": cfg.impersonation_trials}), to_value(&r))
        }
        Scenario::MlMlp | Scenario::MlRbf => {
            let dep = fresh(seed);
            let log = harvest(&dep, cfg.modeling_log)?;
            let attack_dep = dep.fork(seed + 1);
            let r = if scenario == Scenario::MlMlp {
                let m = MlpAttacker::train(&log.pairs, cfg.attacker_epochs, seed)?;
                ml_modeling_attack(&log, &m, &attack_dep, cfg.modeling_trials)?
            } else {
                let m = RbfAttacker::train(&log.pairs, RBF_LAMBDA)?;
                ml_modeling_attack(&log, &m, &attack_dep, cfg.modeling_trials)?
            };
            (
                json!({"log": cfg.modeling_log, "trials": cfg.modeling_trials, "epochs": cfg.attacker_epochs, "lambda": RBF_LAMBDA}),
                to_value(&r),
            )
        }
        Scenario::Mitm => {
            let eps = Duration::from_millis(1);
            let mut rows = Vec::new();
            for delay in [Duration::ZERO, cfg.t_max - eps, cfg.t_max, cfg.t_max + eps] {
                rows.push(mitm_delay_attack(&fresh(seed), delay)?);
            }
            (json!({"t_max_ns": cfg.t_max.as_nanos() as u64, "epsilon_ns": eps.as_nanos() as u64}), to_value(&rows))
        }
        Scenario::FakeLc => {
            let genuine = genuine_latents(bundle)?;
            let m = fake_lc_sweep(&probe.node.models, &genuine, &bundle.meta.lc_box, cfg.sweep_genuine, cfg.sweep_fake, seed)?;
            let mut v = to_value(&m);
            v["true_accept_rate"] = json!(m.true_accept_rate());
            v["true_reject_rate"] = json!(m.true_reject_rate());
            (json!({"genuine": cfg.sweep_genuine, "fake": cfg.sweep_fake}), v)
        }
        Scenario::FsAudit => {
            let dir = cfg.state_dir.clone().unwrap_or_else(std::env::temp_dir);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("fs_audit_{}_{seed}.txt", std::process::id()));
            let (ts, exhausted) = fs_sessions_with_restart(bundle, &path, cfg.fs_sessions, cfg.t_max, seed)?;
            let _ = std::fs::remove_file(&path);
            let r = forward_secrecy_audit(&ts)?;
            let mut v = to_value(&r);
            v["clean"] = json!(r.clean());
            v["pool_exhausted"] = json!(exhausted);
            (json!({"sessions": cfg.fs_sessions, "restart_after": cfg.fs_sessions / 2}), v)
        }
    };
    let after = probe.defender_digests();
    Ok(ScenarioReport {
        name: scenario.name().to_string(),
        seed,
        config,
        metrics,
        models_unchanged: before == after,
        digests_before: before,
        digests_after: after,
    })
}
