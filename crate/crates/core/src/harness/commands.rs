use std::fmt::Write as _;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use serde::Serialize;

use crate::attack::{read_reports, run_scenario, BenchConfig, Deployment, Scenario, ScenarioReport};
use crate::models::{ModelBundle, NodeModelSet};
use crate::protocol::wire::SESSION_PAYLOAD;
use crate::protocol::{Clock, IndexStore, NodeState, SystemClock, TranscriptLog, Verdict, VerifierState};
use crate::transport::{bind, encode_frame, run_node, serve_tcp, ServeOutcome, TcpChannel};

use super::{exit, load_dataset, EnrollReport, HarnessError, RunConfig};

/// Simulates (or ingests) the dataset and writes it as CSV.
pub fn cmd_simulate(cfg: &RunConfig, force: bool) -> Result<usize, HarnessError> {
    cfg.validate()?;
    let path = cfg.dataset_path();
    if path.exists() && !force {
        return Err(HarnessError::Exists(path));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let d = load_dataset(cfg)?;
    d.save_csv(&path)?;
    Ok(d.len())
}

pub fn load_bundle(cfg: &RunConfig) -> Result<ModelBundle, HarnessError> {
    let p = cfg.bundle_path();
    if !p.exists() {
        return Err(HarnessError::Config(format!("no bundle at {}; run enroll first", p.display())));
    }
    Ok(ModelBundle::load(p)?)
}

pub fn load_node(cfg: &RunConfig) -> Result<NodeModelSet, HarnessError> {
    let p = cfg.node_path();
    if !p.exists() {
        return Err(HarnessError::Config(format!("no node model set at {}; run enroll first", p.display())));
    }
    Ok(NodeModelSet::load(p)?)
}

/// Verifier over TCP with the persistent index store and transcript log.
pub fn cmd_serve(cfg: &RunConfig, limit: Option<usize>, stop: Arc<AtomicBool>) -> Result<Vec<ServeOutcome>, HarnessError> {
    cfg.validate()?;
    let bundle = load_bundle(cfg)?;
    let vs = VerifierState::new(
        bundle.verifier_models(),
        IndexStore::open(cfg.store_path(), bundle.meta.n)?,
        TranscriptLog::append_to(cfg.transcript_path())?,
        cfg.t_max,
        Arc::new(SystemClock::new()) as Arc<dyn Clock>,
        cfg.seed,
    );
    let (listener, addr) = bind(cfg.addr.as_str())?;
    log::info!("verifier listening on {addr}, {} unused CRPs", vs.remaining());
    Ok(serve_tcp(listener, Arc::new(vs), stop, limit, cfg.io_timeout)?)
}

pub fn verdict_exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Accept => exit::ACCEPT,
        Verdict::RejectResponseMismatch => exit::REJECT,
        Verdict::RejectTimeout => exit::TIMEOUT,
        Verdict::NodeAbortUnauthenticLc => exit::NODE_ABORT,
    }
}

/// Node role over TCP.
pub fn cmd_authenticate(cfg: &RunConfig) -> Result<Verdict, HarnessError> {
    cfg.validate()?;
    let node = NodeState::new(cfg.node_id, load_node(cfg)?);
    let mut chan = TcpChannel::connect(cfg.addr.as_str(), cfg.io_timeout)?;
    Ok(run_node(&node, &mut chan, cfg.io_timeout + cfg.t_max)?.verdict)
}

pub fn bench_config(cfg: &RunConfig) -> BenchConfig {
    BenchConfig {
        seed: cfg.seed,
        t_max: cfg.t_max,
        state_dir: Some(cfg.out_dir.clone()),
        ..BenchConfig::default()
    }
}

/// Runs the scenarios and appends their records to the report file.
pub fn cmd_attack(cfg: &RunConfig, scenarios: &[Scenario], bench: &BenchConfig) -> Result<Vec<ScenarioReport>, HarnessError> {
    cfg.validate()?;
    let bundle = load_bundle(cfg)?;
    let mut out = Vec::new();
    for &s in scenarios {
        log::info!("scenario {}", s.name());
        let r = run_scenario(&bundle, s, bench).map_err(|e| HarnessError::Other(e.to_string()))?;
        r.append_to(cfg.report_path())?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverheadRow {
    pub protocol: String,
    pub messages: usize,
    pub bits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadTable {
    pub rows: Vec<OverheadRow>,
    /// Whether the last row comes from a live session.
    pub measured: bool,
    /// Bytes of the same session including transport framing.
    pub framed_bytes: Option<usize>,
}

pub const LITERATURE: [(&str, usize, usize); 4] = [
    ("Chatterjee", 6, 3504),
    ("Harishma", 8, 856),
    ("Nimmy", 3, 1792),
    ("Zhang", 5, 1040),
];
pub const THIS_PROTOCOL: &str = "LPUF-AuthNet";
pub const SESSION_MESSAGES: usize = 3;

fn row(name: &str, messages: usize, bits: usize) -> OverheadRow {
    OverheadRow {
        protocol: name.to_string(),
        messages,
        bits,
    }
}

/// Message and bit counts per session. With a bundle the last row is
/// measured from a live loopback session and must equal 3 messages and
/// 264 payload bits.
pub fn cmd_overhead(bundle: Option<&ModelBundle>) -> Result<OverheadTable, HarnessError> {
    let mut rows: Vec<OverheadRow> = LITERATURE.iter().map(|&(p, m, b)| row(p, m, b)).collect();
    let Some(bundle) = bundle else {
        rows.push(row(THIS_PROTOCOL, SESSION_MESSAGES, SESSION_PAYLOAD * 8));
        return Ok(OverheadTable {
            rows,
            measured: false,
            framed_bytes: None,
        });
    };
    let dep = Deployment::fresh(bundle, 0);
    let (outcome, _) = dep.honest_session(&[])?;
    let t = outcome
        .session
        .and_then(|id| dep.transcript(id))
        .ok_or_else(|| HarnessError::Other("measurement session left no transcript".into()))?;
    let (messages, bits) = (t.messages(), t.payload_bytes() * 8);
    let mut framed = 0;
    for r in &t.records {
        framed += encode_frame(&hex::decode(&r.payload).map_err(|e| HarnessError::Other(e.to_string()))?)
            .map_err(|e| HarnessError::Other(e.to_string()))?
            .len();
    }
    if (messages, bits) != (SESSION_MESSAGES, SESSION_PAYLOAD * 8) {
        return Err(HarnessError::Other(format!(
            "wire-format regression: measured {messages} messages / {bits} bits, expected {SESSION_MESSAGES} / {}",
            SESSION_PAYLOAD * 8
        )));
    }
    rows.push(row(THIS_PROTOCOL, messages, bits));
    Ok(OverheadTable {
        rows,
        measured: true,
        framed_bytes: Some(framed),
    })
}

impl OverheadTable {
    pub fn render(&self) -> String {
        let mut s = String::from("protocol        messages   bits\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:<15} {:>8} {:>6}", r.protocol, r.messages, r.bits);
        }
        if let Some(f) = self.framed_bytes {
            let _ = writeln!(s, "(measured; {f} bytes on the wire with framing and type bytes)");
        } else if !self.measured {
            s.push_str("(last row from the wire format; no bundle to measure with)\n");
        }
        s
    }
}

fn metric(r: &ScenarioReport, path: &[&str]) -> String {
    let mut v = &r.metrics;
    for p in path {
        v = &v[*p];
    }
    match v {
        serde_json::Value::Number(n) => n.as_f64().map_or(n.to_string(), |f| format!("{f:.4}")),
        other => other.to_string(),
    }
}

/// Human-readable summary of the enrollment report and every scenario
/// record found in `out_dir`.
pub fn cmd_report(cfg: &RunConfig) -> Result<String, HarnessError> {
    let mut s = String::new();
    let enroll = cfg.out_dir.join("enroll_report.json");
    if enroll.exists() {
        let e: serde_json::Value = serde_json::from_slice(&std::fs::read(&enroll)?)?;
        let _ = writeln!(s, "enrollment (n = {})", e["n"]);
        for stage in ["dnn", "phase_a", "phase_b"] {
            let _ = writeln!(
                s,
                "  {stage:<8} epochs {:>5}  bit accuracy {}  exact {}/{}",
                e[stage]["epochs"], e[stage]["bit_accuracy"], e[stage]["exact"], e[stage]["total"]
            );
        }
        let _ = writeln!(s, "  CRP bit errors {}  delta {}", e["crp_bit_errors"], e["calibration"]["delta"]);
    }
    let reports = if cfg.report_path().exists() { read_reports(cfg.report_path())? } else { Vec::new() };
    if !reports.is_empty() {
        s.push_str("\nscenarios (latest record of each)\n");
    }
    for sc in Scenario::ALL {
        let Some(r) = reports.iter().rev().find(|r| r.name == sc.name()) else { continue };
        let line = match sc {
            Scenario::Replay => format!("rejection rate {} over {} sessions", metric(r, &["rejected", "rate"]), metric(r, &["rejected", "trials"])),
            Scenario::Impersonate => format!(
                "abort rate uniform {} genuine {} perturbed {}",
                metric(r, &["uniform", "rate"]),
                metric(r, &["genuine", "rate"]),
                metric(r, &["perturbed", "rate"])
            ),
            Scenario::MlMlp | Scenario::MlRbf => format!(
                "accept {} bit accuracy {} exact {} over {} sessions (train fit {})",
                metric(r, &["accepted", "rate"]),
                metric(r, &["bit_accuracy"]),
                metric(r, &["exact_match_rate"]),
                metric(r, &["sessions"]),
                metric(r, &["train_fit_bit_accuracy"])
            ),
            Scenario::Mitm => r
                .metrics
                .as_array()
                .map(|rows| {
                    rows.iter()
                        .map(|x| format!("{}ns→{}", x["delay_ns"], x["verdict"].as_str().unwrap_or("none")))
                        .collect::<Vec<_>>()
                        .join(", ")
                })
                .unwrap_or_default(),
            Scenario::FakeLc => format!(
                "TA {} FR {} TR {} FA {} (true-accept {} true-reject {})",
                metric(r, &["true_accept"]),
                metric(r, &["false_reject"]),
                metric(r, &["true_reject"]),
                metric(r, &["false_accept"]),
                metric(r, &["true_accept_rate"]),
                metric(r, &["true_reject_rate"])
            ),
            Scenario::FsAudit => format!(
                "{} sessions, {} index reuses, {} LC repeats, clean {}",
                metric(r, &["sessions"]),
                r.metrics["index_reuse"].as_array().map_or(0, Vec::len),
                metric(r, &["lc_repeats"]),
                metric(r, &["clean"])
            ),
        };
        let _ = writeln!(s, "  {:<12} {line}{}", sc.name(), if r.models_unchanged { "" } else { "  (MODELS CHANGED)" });
    }
    if !reports.is_empty() {
        s.push_str("\ndevice impersonation without a bundle is bounded by replay and ml-*\n");
    }
    let bundle = if cfg.bundle_path().exists() { Some(load_bundle(cfg)?) } else { None };
    s.push('\n');
    s.push_str(&cmd_overhead(bundle.as_ref())?.render());
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("summary.txt"), &s)?;
    Ok(s)
}

/// Stage summary printed after enrollment.
pub fn render_enroll(r: &EnrollReport) -> String {
    let mut s = String::new();
    for t in [&r.dnn, &r.phase_a, &r.phase_b] {
        let _ = writeln!(
            s,
            "{:<8} epochs {:>5}  bit accuracy {:.5}  exact {}/{}  mae {:.3e}  {:.1}s",
            t.stage, t.epochs, t.bit_accuracy, t.exact, t.total, t.mae, t.seconds
        );
    }
    let _ = writeln!(s, "CRP bit errors {}", r.crp_bit_errors);
    let _ = writeln!(s, "challenge reconstruction exact {}/{}", r.reconstruction_exact, r.n);
    let _ = writeln!(
        s,
        "response path bit accuracy {:.5} (mae {:.3e}, flip rate {})",
        r.response_path.bit_accuracy, r.response_path.mae, r.response_path.bit_flip_rate
    );
    let _ = writeln!(s, "delta {:.3e} (nearest forgery {:.3e})", r.calibration.delta, r.calibration.nearest_forgery);
    let _ = writeln!(s, "total {:.1}s", r.seconds);
    s
}
