use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use lpuf_authnet::attack::Scenario;
use lpuf_authnet::harness::{self, exit, HarnessError, RunConfig, CONFIG_ENV};

#[derive(Parser)]
#[command(name = "lpuf", version, about = "PUF-emulating networks, enrollment, authentication and attack bench")]
struct Cli {
    /// Config file (key = value lines)
    #[arg(short, long, env = CONFIG_ENV, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `-s n=256`; repeatable
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (config key out_dir)
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (config key seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the dataset CSV for the configured source
    SimulatePuf {
        #[arg(long)]
        force: bool,
    },
    /// Train all networks and provision bundle and node files
    Enroll {
        #[arg(long)]
        force: bool,
    },
    /// Run the verifier on the configured address
    Serve {
        /// Stop after this many connections
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Run one node session against a serving verifier
    Authenticate,
    /// Run attack scenarios (replay, impersonate, ml-mlp, ml-rbf, mitm, fake-lc, fs-audit, all)
    Attack { scenarios: Vec<String> },
    /// Message and bit counts per authentication
    Overhead,
    /// Summarize enrollment and scenario records
    Report,
}

fn config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    for kv in &cli.set {
        cfg.set_pair(kv)?;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32, HarnessError> {
    let cfg = config(cli)?;
    match &cli.cmd {
        Cmd::SimulatePuf { force } => {
            let n = harness::cmd_simulate(&cfg, *force)?;
            println!("wrote {n} CRPs to {}", cfg.dataset_path().display());
        }
        Cmd::Enroll { force } => {
            let r = harness::cmd_enroll(&cfg, *force)?;
            print!("{}", harness::render_enroll(&r));
            println!("bundle {}\nnode   {}", cfg.bundle_path().display(), cfg.node_path().display());
        }
        Cmd::Serve { sessions } => {
            let outcomes = harness::cmd_serve(&cfg, *sessions, Arc::new(AtomicBool::new(false)))?;
            for o in outcomes {
                println!(
                    "session {:?}: {:?}{}",
                    o.session,
                    o.verdict,
                    o.error.map(|e| format!(" ({e})")).unwrap_or_default()
                );
            }
        }
        Cmd::Authenticate => {
            let v = harness::cmd_authenticate(&cfg)?;
            println!("{v:?}");
            return Ok(harness::verdict_exit_code(v));
        }
        Cmd::Attack { scenarios } => {
            let list: Vec<Scenario> = if scenarios.is_empty() || scenarios.iter().any(|s| s == "all") {
                Scenario::ALL.to_vec()
            } else {
                scenarios
                    .iter()
                    .map(|s| s.parse().map_err(|e: lpuf_authnet::attack::AttackError| HarnessError::Config(e.to_string())))
                    .collect::<Result<_, _>>()?
            };
            for r in harness::cmd_attack(&cfg, &list, &harness::bench_config(&cfg))? {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Cmd::Overhead => {
            let bundle = if cfg.bundle_path().exists() { Some(harness::load_bundle(&cfg)?) } else { None };
            print!("{}", harness::cmd_overhead(bundle.as_ref())?.render());
        }
        Cmd::Report => print!("{}", harness::cmd_report(&cfg)?),
    }
    Ok(exit::ACCEPT)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { 0 });
        }
    };
    let code = match run(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
