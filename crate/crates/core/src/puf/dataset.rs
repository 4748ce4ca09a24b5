use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Challenge, Response, RoPufModel};
use crate::nn::container::{Container, ContainerKind, Reader};
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{0}")]
    Config(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("row {second}: challenge duplicates row {first}")]
    Duplicate { first: usize, second: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Container(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Crp {
    pub challenge: Challenge,
    pub response: Response,
}

/// Ordered CRPs with pairwise-distinct challenges, at least two of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrpDataset {
    entries: Vec<Crp>,
}

impl CrpDataset {
    pub fn new(entries: Vec<Crp>) -> Result<Self, DatasetError> {
        if entries.len() < 2 {
            return Err(DatasetError::Config(format!(
                "a dataset needs at least 2 CRPs, got {}",
                entries.len()
            )));
        }
        let mut seen = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if let Some(first) = seen.insert(e.challenge, i) {
                return Err(DatasetError::Duplicate {
                    first: first + 1,
                    second: i + 1,
                });
            }
        }
        Ok(Self { entries })
    }

    /// `n` distinct uniformly drawn challenges with the model's responses.
    pub fn generate(model: &RoPufModel, n: usize, seed: u64) -> Result<Self, DatasetError> {
        if n < 2 || n as u64 > 1u64 << 32 {
            return Err(DatasetError::Config(format!("dataset size {n} out of range [2, 2^32]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::with_capacity(n);
        let mut entries = Vec::with_capacity(n);
        while entries.len() < n {
            let c = Challenge(rng.random());
            if seen.insert(c) {
                entries.push(Crp {
                    challenge: c,
                    response: model.evaluate(c),
                });
            }
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Crp] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Option<&Crp> {
        self.entries.get(i)
    }

    pub fn challenges(&self) -> impl Iterator<Item = Challenge> + '_ {
        self.entries.iter().map(|e| e.challenge)
    }

    /// Rows `challenge,response` of `0`/`1` strings under a header line.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["challenge", "response"])?;
        for e in &self.entries {
            w.write_record([e.challenge.to_string(), e.response.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of [`save_csv`](Self::save_csv). The header line is
    /// optional; rows are numbered from 1 in errors, not counting the header.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut entries = Vec::new();
        let mut row = 0;
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if line == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("challenge")) {
                continue;
            }
            row += 1;
            if record.len() != 2 {
                return Err(DatasetError::Row {
                    row,
                    msg: format!("expected 2 fields, found {}", record.len()),
                });
            }
            let challenge = Challenge::parse_bits(&record[0])
                .map_err(|msg| DatasetError::Row { row, msg: format!("challenge: {msg}") })?;
            let response = Response::parse_bits(&record[1])
                .map_err(|msg| DatasetError::Row { row, msg: format!("response: {msg}") })?;
            entries.push(Crp { challenge, response });
        }
        Self::new(entries)
    }

    pub fn to_container(&self) -> Container {
        let mut payload = Vec::with_capacity(4 + self.entries.len() * 6);
        payload.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for e in &self.entries {
            payload.extend_from_slice(&e.challenge.0.to_be_bytes());
            payload.extend_from_slice(&e.response.0.to_be_bytes());
        }
        let mut c = Container::new(ContainerKind::Dataset);
        c.push("crps", payload);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, DatasetError> {
        if c.kind != ContainerKind::Dataset {
            return Err(NnError::Format(format!("expected a dataset container, found {:?}", c.kind)).into());
        }
        let mut r = Reader::new(c.section("crps")?);
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let challenge = Challenge(r.u32()?);
            let response = Response(r.u16()?);
            entries.push(Crp { challenge, response });
        }
        if !r.is_empty() {
            return Err(NnError::Format("trailing bytes in dataset".into()).into());
        }
        Self::new(entries)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_container().encode())?;
        Ok(())
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path)?;
        Self::from_container(&Container::decode(&bytes)?)
    }
}
