//! Configuration, persistence wiring and reports behind the `lpuf` CLI.

pub mod commands;
pub mod config;
pub mod enroll;

pub use commands::{
    bench_config, cmd_attack, cmd_authenticate, cmd_overhead, cmd_report, cmd_serve, cmd_simulate, load_bundle,
    load_node, render_enroll, verdict_exit_code, OverheadRow, OverheadTable, LITERATURE, SESSION_MESSAGES, THIS_PROTOCOL,
};
pub use config::{DatasetSource, LinkKind, RunConfig, CONFIG_ENV};
pub use enroll::{cmd_enroll, crp_bit_errors, enroll_dataset, load_dataset, EnrollReport};

use std::path::PathBuf;

use crate::models::ModelError;
use crate::nn::NnError;
use crate::protocol::{ProtocolError, StoreError};
use crate::puf::DatasetError;
use crate::split::SplitError;
use crate::transport::TransportError;

/// Process exit codes.
pub mod exit {
    pub const ACCEPT: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const REJECT: i32 = 2;
    pub const TIMEOUT: i32 = 3;
    pub const NODE_ABORT: i32 = 4;
    pub const CONFIG: i32 = 5;
    pub const NETWORK: i32 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{} exists; pass --force to replace it", .0.display())]
    Exists(PathBuf),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Exists(_) => exit::CONFIG,
            HarnessError::Transport(_) => exit::NETWORK,
            _ => exit::FAILURE,
        }
    }
}
