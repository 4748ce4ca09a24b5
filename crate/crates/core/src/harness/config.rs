//! `key = value` run configuration.
//!
//! ```text
//! # dataset: either simulate ...
//! n = 1024
//! puf_seed = 1
//! oscillators = 4
//! dataset_seed = 2
//! # ... or ingest a CSV of challenge,response bit strings
//! # dataset_csv = crps.csv
//! seed = 0
//! max_epochs = 2000
//! batch_size = 32
//! lr = 0.001
//! encoder_lr = 0.0001
//! decoder_lr = 0.0005
//! response_lr = 0.002
//! response_lr_decay = 0.999
//! response_batch_size = 256
//! split_link = in-process      # or tcp
//! t_max_ms = 2000
//! io_timeout_ms = 5000
//! addr = 127.0.0.1:7878
//! node_id = 1
//! out_dir = lpuf-run
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::split::TrainConfig;

use super::HarnessError;

pub const CONFIG_ENV: &str = "LPUF_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Simulate { puf_seed: u64, oscillators: usize, dataset_seed: u64 },
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub source: DatasetSource,
    pub train: TrainConfig,
    pub split_link: LinkKind,
    pub t_max: Duration,
    pub io_timeout: Duration,
    pub addr: String,
    pub node_id: u8,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            source: DatasetSource::Simulate {
                puf_seed: 1,
                oscillators: 4,
                dataset_seed: 2,
            },
            train: TrainConfig::default(),
            split_link: LinkKind::InProcess,
            t_max: crate::protocol::DEFAULT_T_MAX,
            io_timeout: Duration::from_secs(5),
            addr: "127.0.0.1:7878".into(),
            node_id: 1,
            out_dir: PathBuf::from("lpuf-run"),
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::Config(format!("bad value {v:?} for {key}")))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let v = value.trim();
        let sim = |s: &DatasetSource| -> (u64, usize, u64) {
            match *s {
                DatasetSource::Simulate {
                    puf_seed,
                    oscillators,
                    dataset_seed,
                } => (puf_seed, oscillators, dataset_seed),
                DatasetSource::Csv(_) => (1, 4, 2),
            }
        };
        match key.trim() {
            "n" => self.n = parse(key, v)?,
            "puf_seed" => {
                let (_, k, d) = sim(&self.source);
                self.source = DatasetSource::Simulate {
                    puf_seed: parse(key, v)?,
                    oscillators: k,
                    dataset_seed: d,
                };
            }
            "oscillators" => {
                let (p, _, d) = sim(&self.source);
                self.source = DatasetSource::Simulate {
                    puf_seed: p,
                    oscillators: parse(key, v)?,
                    dataset_seed: d,
                };
            }
            "dataset_seed" => {
                let (p, k, _) = sim(&self.source);
                self.source = DatasetSource::Simulate {
                    puf_seed: p,
                    oscillators: k,
                    dataset_seed: parse(key, v)?,
                };
            }
            "dataset_csv" => self.source = DatasetSource::Csv(PathBuf::from(v)),
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
            }
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "eval_every" => self.train.eval_every = parse(key, v)?,
            "lr" => self.train.adam.lr = parse(key, v)?,
            "encoder_lr" => self.train.encoder_lr = parse(key, v)?,
            "decoder_lr" => self.train.decoder_lr = parse(key, v)?,
            "response_lr" => self.train.response_lr = parse(key, v)?,
            "response_lr_decay" => self.train.response_lr_decay = parse(key, v)?,
            "response_batch_size" => self.train.response_batch_size = parse(key, v)?,
            "split_link" => {
                self.split_link = match v {
                    "in-process" => LinkKind::InProcess,
                    "tcp" => LinkKind::Tcp,
                    _ => return Err(HarnessError::Config(format!("split_link must be in-process or tcp, not {v:?}"))),
                }
            }
            "t_max_ms" => self.t_max = Duration::from_millis(parse(key, v)?),
            "io_timeout_ms" => self.io_timeout = Duration::from_millis(parse(key, v)?),
            "addr" => self.addr = v.to_string(),
            "node_id" => self.node_id = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(HarnessError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `KEY=VALUE` (or `KEY = VALUE`).
    pub fn set_pair(&mut self, pair: &str) -> Result<(), HarnessError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    pub fn parse_str(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set_pair(line)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// The explicit path if given, else `$LPUF_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, HarnessError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(p),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let DatasetSource::Simulate { oscillators, .. } = self.source {
            if oscillators < 4 {
                return Err(HarnessError::Config("oscillators must be at least 4".into()));
            }
        }
        if self.n < 2 {
            return Err(HarnessError::Config("n must be at least 2".into()));
        }
        if self.t_max.is_zero() {
            return Err(HarnessError::Config("t_max_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.out_dir.join("bundle.lpuf")
    }

    pub fn node_path(&self) -> PathBuf {
        self.out_dir.join("node.lpuf")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out_dir.join("dataset.csv")
    }

    pub fn store_path(&self) -> PathBuf {
        self.out_dir.join("used_indices.txt")
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.out_dir.join("transcripts.jsonl")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("reports.jsonl")
    }
}
