//! End-to-end acceptance checks at desk scale (n = 1024). The trained
//! bundle is cached under the cargo target tmp dir; delete
//! `target/tmp/lpuf-acceptance` to retrain.

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use lpuf_authnet::attack::{
    fake_lc_sweep, genuine_latents, mitm_delay_attack, run_scenario, AuditReport, BenchConfig, Deployment,
    ModelingReport, ReplayReport, Scenario,
};
use lpuf_authnet::harness::{cmd_enroll, cmd_overhead, crp_bit_errors, load_dataset, RunConfig};
use lpuf_authnet::models::{
    Architecture, BasicEncoder2, Decoder1, Decoder2, Encoder1, ExtendedEncoder2, ModelBundle,
};
use lpuf_authnet::nn::{gradient_check, Matrix, Mlp};
use lpuf_authnet::protocol::{
    Clock, IndexStore, NodeState, SystemClock, TranscriptLog, Verdict, VerifierState, DEFAULT_T_MAX,
};
use lpuf_authnet::puf::{CrpDataset, RoPufModel};
use lpuf_authnet::split::{monolithic_phase_a, monolithic_phase_b, phase_a, phase_b, CutLink, TrainConfig};
use lpuf_authnet::transport::{bind, run_node, serve_tcp, TcpChannel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Trained {
    cfg: RunConfig,
    bundle: ModelBundle,
    dataset: CrpDataset,
    enroll_seconds: f64,
    cached: bool,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let mut cfg = RunConfig::default();
        cfg.out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("lpuf-acceptance");
        let report_path = cfg.out_dir.join("enroll_report.json");
        let cached = cfg.bundle_path().exists() && report_path.exists();
        if !cached {
            cmd_enroll(&cfg, true).expect("enrollment");
        }
        let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
        Trained {
            bundle: ModelBundle::load(cfg.bundle_path()).expect("bundle"),
            dataset: load_dataset(&cfg).expect("dataset"),
            enroll_seconds: report["seconds"].as_f64().unwrap(),
            cached,
            cfg,
        }
    })
}

fn verdict_line(n: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n} [{tag}] {name}: {detail}");
}

fn bench() -> BenchConfig {
    BenchConfig {
        state_dir: Some(trained().cfg.out_dir.clone()),
        ..BenchConfig::default()
    }
}

#[test]
fn criterion_1_memorization_exactness() {
    let t = trained();
    let errors = crp_bit_errors(&t.bundle, &t.dataset).unwrap();
    let pass = errors == 0 && t.enroll_seconds <= 600.0;
    verdict_line(
        1,
        "memorization exactness",
        pass,
        &format!(
            "{errors} bit errors over {} CRPs, enrollment {:.0}s{}",
            t.dataset.len(),
            t.enroll_seconds,
            if t.cached { " (cached run)" } else { "" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_end_to_end_authentication() {
    let t = trained();
    let sessions = 1000;
    let io = Duration::from_secs(5);
    let vs = Arc::new(VerifierState::new(
        t.bundle.verifier_models(),
        IndexStore::in_memory(t.bundle.meta.n),
        TranscriptLog::in_memory(),
        DEFAULT_T_MAX,
        Arc::new(SystemClock::new()) as Arc<dyn Clock>,
        2,
    ));
    let node = NodeState::new(1, t.bundle.node_set());
    let (listener, addr) = bind("127.0.0.1:0").unwrap();
    let server_vs = Arc::clone(&vs);
    let server = std::thread::spawn(move || {
        serve_tcp(listener, server_vs, Arc::new(AtomicBool::new(false)), Some(sessions), io).unwrap()
    });
    let mut accepted = 0;
    for _ in 0..sessions {
        let mut ch = TcpChannel::connect(addr, io).unwrap();
        accepted += (run_node(&node, &mut ch, io).unwrap().verdict == Verdict::Accept) as usize;
    }
    server.join().unwrap();
    let ts = vs.transcripts();
    let shaped = ts.iter().filter(|t| t.messages() == 3 && t.payload_bytes() == 33).count();
    let pass = accepted == sessions && ts.len() == sessions && shaped == sessions;
    verdict_line(
        2,
        "end-to-end authentication",
        pass,
        &format!("{accepted}/{sessions} accepted over TCP loopback, {shaped} transcripts with 3 messages / 33 payload bytes"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_fake_lc_discrimination() {
    let t = trained();
    let genuine = genuine_latents(&t.bundle).unwrap();
    let m = fake_lc_sweep(&t.bundle.node_set(), &genuine, &t.bundle.meta.lc_box, 10_000, 10_000, 3).unwrap();
    let pass = m.true_accept_rate() >= 0.99 && m.true_reject_rate() >= 0.99;
    verdict_line(
        3,
        "fake-LC discrimination",
        pass,
        &format!(
            "TA {} FR {} TR {} FA {}, true-accept {:.4}, true-reject {:.4}",
            m.true_accept,
            m.false_reject,
            m.true_reject,
            m.false_accept,
            m.true_accept_rate(),
            m.true_reject_rate()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_ml_attack_resistance() {
    let t = trained();
    let cfg = bench();
    let mut pass = true;
    let mut details = Vec::new();
    for s in [Scenario::MlMlp, Scenario::MlRbf] {
        let r = run_scenario(&t.bundle, s, &cfg).unwrap();
        let m: ModelingReport = serde_json::from_value(r.metrics).unwrap();
        let ok = m.train_pairs == cfg.modeling_log
            && m.sessions == cfg.modeling_trials
            && m.accepted.rate <= 0.01
            && m.bit_accuracy <= 0.60
            && r.models_unchanged;
        pass &= ok;
        details.push(format!(
            "{}: {} pairs, {}/{} fresh sessions opened ({} refused, pool exhausted), accept {:.4}, bit accuracy {:.4}, train fit {:.4}",
            m.attacker,
            m.train_pairs,
            m.sessions,
            m.requested,
            m.pool_exhausted,
            m.accepted.rate,
            m.bit_accuracy,
            m.train_fit_bit_accuracy
        ));
    }
    verdict_line(4, "ML-attack resistance", pass, &details.join("; "));
    assert!(pass, "n = 1024 CRPs cannot supply 500 logged + 1000 fresh sessions");
}

#[test]
fn criterion_5_replay_rejection() {
    let t = trained();
    let r = run_scenario(&t.bundle, Scenario::Replay, &bench()).unwrap();
    let m: ReplayReport = serde_json::from_value(r.metrics).unwrap();
    let pass = m.rejected.trials == 1000 && m.rejected.hits == 1000 && r.models_unchanged;
    verdict_line(
        5,
        "replay rejection",
        pass,
        &format!("{}/{} replayed LRs rejected, {} accepted", m.rejected.hits, m.rejected.trials, m.accepted),
    );
    assert!(pass);
}

#[test]
fn criterion_6_forward_secrecy() {
    let t = trained();
    let cfg = bench();
    let r = run_scenario(&t.bundle, Scenario::FsAudit, &cfg).unwrap();
    let exhausted = r.metrics["pool_exhausted"].as_u64().unwrap();
    let m: AuditReport = serde_json::from_value(r.metrics).unwrap();
    let pass = m.sessions == cfg.fs_sessions && m.clean();
    verdict_line(
        6,
        "forward-secrecy mechanism",
        pass,
        &format!(
            "{} requests with a restart after {}: {} sessions held a CRP, {exhausted} refused (pool exhausted); index reuse {}, LC repeats {}, LR repeats {}",
            cfg.fs_sessions,
            cfg.fs_sessions / 2,
            m.sessions,
            m.index_reuse.len(),
            m.lc_repeats,
            m.lr_repeats
        ),
    );
    assert!(pass, "n = 1024 CRPs cannot supply 10^4 sessions");
}

#[test]
fn criterion_7_timer_enforcement() {
    let t = trained();
    let t_max = DEFAULT_T_MAX;
    let eps = Duration::from_nanos(1);
    let cases = [
        (Duration::ZERO, Verdict::Accept),
        (t_max - eps, Verdict::Accept),
        (t_max, Verdict::Accept),
        (t_max + eps, Verdict::RejectTimeout),
        (t_max * 3, Verdict::RejectTimeout),
    ];
    let mut pass = true;
    let mut seen = Vec::new();
    for (k, (delay, want)) in cases.into_iter().enumerate() {
        let dep = Deployment::fresh(&t.bundle, 70 + k as u64);
        let got = mitm_delay_attack(&dep, delay).unwrap().verdict;
        pass &= got == Some(want);
        seen.push(format!("{}ns→{got:?}", delay.as_nanos()));
    }
    verdict_line(7, "timer enforcement", pass, &seen.join(", "));
    assert!(pass);
}

fn small_dataset(n: usize) -> CrpDataset {
    CrpDataset::generate(&RoPufModel::simulate(5, 4).unwrap(), n, 6).unwrap()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        eval_every: epochs,
        target_accuracy: 1e-9,
        batch_size: 8,
        response_batch_size: 8,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn flat(m: &Mlp) -> Vec<u64> {
    m.layers()
        .iter()
        .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).map(|v| v.to_bits()))
        .collect()
}

#[test]
fn criterion_8_split_learning_fidelity() {
    trained();
    let d = small_dataset(40);
    let cfg = short(3);
    let init = || {
        (
            Encoder1::new(1).unwrap(),
            BasicEncoder2::new(2).unwrap(),
            Decoder2::new(3).unwrap(),
        )
    };
    let (e, b, dd) = init();
    let split_a = phase_a(&d, e, b, dd, &mut CutLink::in_process(), &cfg).unwrap();
    let (e, b, dd) = init();
    let tcp_a = phase_a(&d, e, b, dd, &mut CutLink::tcp_loopback().unwrap(), &cfg).unwrap();
    let (e, b, dd) = init();
    let mono_a = monolithic_phase_a(&d, e, b, dd, &cfg).unwrap();
    let same_a = [
        (split_a.encoder1.net(), mono_a.encoder1.net(), tcp_a.encoder1.net()),
        (split_a.basic_encoder2.net(), mono_a.basic_encoder2.net(), tcp_a.basic_encoder2.net()),
        (split_a.decoder2.net(), mono_a.decoder2.net(), tcp_a.decoder2.net()),
    ]
    .iter()
    .all(|(s, m, t)| flat(s) == flat(m) && flat(s) == flat(t));

    let base_digest = split_a.basic_encoder2.net().param_digest();
    let enc_digest = split_a.encoder1.net().param_digest();
    let xenc = || ExtendedEncoder2::new(split_a.basic_encoder2.clone(), 4).unwrap();
    let split_b = phase_b(&d, &split_a.encoder1, xenc(), Decoder1::new(5).unwrap(), &mut CutLink::in_process(), &cfg).unwrap();
    let mono_b = monolithic_phase_b(&d, &split_a.encoder1, xenc(), Decoder1::new(5).unwrap(), &cfg).unwrap();
    let same_b = flat(split_b.extended_encoder2.extension()) == flat(mono_b.extended_encoder2.extension())
        && flat(split_b.decoder1.net()) == flat(mono_b.decoder1.net());
    let frozen = split_b.extended_encoder2.base.net().param_digest() == base_digest
        && mono_b.extended_encoder2.base.net().param_digest() == base_digest
        && split_a.encoder1.net().param_digest() == enc_digest;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut archs = Architecture::all(1024);
    archs.push(Architecture {
        name: "attacker",
        input: 4,
        hidden: vec![64, 32, 16, 8],
        output: 4,
    });
    for (k, a) in archs.iter().enumerate() {
        let r = a.reduced(16);
        let mut net = r.build(20 + k as u64).unwrap();
        for l in net.layers_mut() {
            l.bias.iter_mut().enumerate().for_each(|(j, b)| *b = 0.05 + 0.01 * (j % 7) as f64);
        }
        let x = Matrix::from_vec(3, r.input, (0..3 * r.input).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = Matrix::from_vec(3, r.output, (0..3 * r.output).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        worst = worst.max(gradient_check(&net, &x, &y, 1e-5).unwrap().max_rel_error);
    }
    let grads_ok = worst <= 1e-4;
    let pass = same_a && same_b && frozen && grads_ok;
    verdict_line(
        8,
        "split-learning fidelity",
        pass,
        &format!(
            "phase A split = monolithic = TCP: {same_a}; phase B split = monolithic: {same_b}; frozen checksums constant: {frozen}; worst gradient-check relative error {worst:.2e} over {} reduced architectures",
            archs.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_wire_format_regression() {
    let t = trained();
    let table = cmd_overhead(Some(&t.bundle)).unwrap();
    let rows: Vec<(&str, usize, usize)> = table.rows.iter().map(|r| (r.protocol.as_str(), r.messages, r.bits)).collect();
    let want = vec![
        ("Chatterjee", 6, 3504),
        ("Harishma", 8, 856),
        ("Nimmy", 3, 1792),
        ("Zhang", 5, 1040),
        ("LPUF-AuthNet", 3, 264),
    ];
    let framed = table.framed_bytes.unwrap_or(0);
    let pass = table.measured && rows == want && framed > 33;
    verdict_line(
        9,
        "wire-format regression",
        pass,
        &format!("measured {:?}, {framed} framed bytes", rows.last().unwrap()),
    );
    assert!(pass);
}

fn lpuf(dir: &std::path::Path, args: &[&str]) -> std::process::Command {
    let mut c = std::process::Command::new(env!("CARGO_BIN_EXE_lpuf"));
    c.arg("--out").arg(dir).args(args).env_remove("LPUF_CONFIG").env("RUST_LOG", "warn");
    c
}

#[test]
fn cli_serve_and_authenticate() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(t.cfg.bundle_path(), dir.path().join("bundle.lpuf")).unwrap();
    std::fs::copy(t.cfg.node_path(), dir.path().join("node.lpuf")).unwrap();
    let port = bind("127.0.0.1:0").unwrap().1.port();
    let addr = format!("addr=127.0.0.1:{port}");
    let mut server = lpuf(dir.path(), &["-s", &addr, "serve", "--sessions", "2"]).spawn().unwrap();
    let auth = || {
        for _ in 0..100 {
            let s = lpuf(dir.path(), &["-s", &addr, "authenticate"]).output().unwrap();
            if s.status.code() != Some(6) {
                return s;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        panic!("verifier never came up");
    };
    let ok = auth();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    // A node provisioned from a different enrollment cannot pass.
    lpuf_authnet::models::fresh_bundle(1024, 99).unwrap().node_set().save(dir.path().join("node.lpuf")).unwrap();
    let wrong = auth();
    assert!(matches!(wrong.status.code(), Some(2) | Some(4)), "{wrong:?}");
    assert!(server.wait().unwrap().success());
    let used = std::fs::read_to_string(dir.path().join("used_indices.txt")).unwrap();
    assert_eq!(used.lines().count(), 3);
    assert_eq!(
        lpuf_authnet::protocol::read_transcripts(dir.path().join("transcripts.jsonl")).unwrap().len(),
        2
    );

    let absent = lpuf(dir.path(), &["-s", &addr, "authenticate"]).output().unwrap();
    assert_eq!(absent.status.code(), Some(6));
    let enroll_again = lpuf(dir.path(), &["enroll"]).output().unwrap();
    assert_eq!(enroll_again.status.code(), Some(5));
}
