use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

/// Set of CRP indices already handed out. With a backing file every draw
/// is appended (and synced) before the index is used, so a restarted
/// verifier never draws it again.
///
/// File format: a header line `lpuf-used-indices n=<n>` followed by one
/// decimal index per line.
#[derive(Debug)]
pub struct IndexStore {
    n: usize,
    used: HashSet<usize>,
    unused: Vec<usize>,
    file: Option<(PathBuf, File)>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("index store {path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const HEADER: &str = "lpuf-used-indices";

impl IndexStore {
    pub fn in_memory(n: usize) -> Self {
        Self {
            n,
            used: HashSet::new(),
            unused: (0..n).collect(),
            file: None,
        }
    }

    /// Opens or creates the store at `path` for an enrolled set of size `n`.
    pub fn open(path: impl AsRef<Path>, n: usize) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let bad = |msg: String| StoreError::Format {
            path: path.display().to_string(),
            msg,
        };
        let mut used = HashSet::new();
        if path.exists() {
            let mut lines = BufReader::new(File::open(path)?).lines();
            let header = lines.next().transpose()?.unwrap_or_default();
            if header != format!("{HEADER} n={n}") {
                return Err(bad(format!("header {header:?} does not match n={n}")));
            }
            for (k, line) in lines.enumerate() {
                let line = line?;
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let i: usize = line.parse().map_err(|_| bad(format!("line {}: {line:?}", k + 2)))?;
                if i >= n {
                    return Err(bad(format!("line {}: index {i} out of range", k + 2)));
                }
                used.insert(i);
            }
        } else {
            let mut f = File::create(path)?;
            writeln!(f, "{HEADER} n={n}")?;
            f.sync_all()?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        let unused = (0..n).filter(|i| !used.contains(i)).collect();
        Ok(Self {
            n,
            used,
            unused,
            file: Some((path.to_path_buf(), file)),
        })
    }

    /// An in-memory copy with the same used set; draws on the copy do not
    /// touch this store or its file.
    pub fn detached(&self) -> Self {
        Self {
            n: self.n,
            used: self.used.clone(),
            unused: self.unused.clone(),
            file: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn used_count(&self) -> usize {
        self.used.len()
    }

    pub fn remaining(&self) -> usize {
        self.unused.len()
    }

    pub fn is_used(&self, i: usize) -> bool {
        self.used.contains(&i)
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    /// Draws an unused index uniformly at random and records it. Returns
    /// `None` once the pool is exhausted.
    pub fn draw(&mut self, rng: &mut impl Rng) -> Result<Option<usize>, StoreError> {
        if self.unused.is_empty() {
            return Ok(None);
        }
        let k = rng.random_range(0..self.unused.len());
        let i = self.unused[k];
        if let Some((_, f)) = &mut self.file {
            writeln!(f, "{i}")?;
            f.sync_data()?;
        }
        self.unused.swap_remove(k);
        self.used.insert(i);
        Ok(Some(i))
    }
}
