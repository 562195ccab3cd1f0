//! Token counting.
//!
//! Every length in the toolkit (segment sizes, compression ledgers, rollout
//! caps) is measured through [`TokenCounter`]. Three modes are offered:
//!
//! - `whitespace`: number of maximal non-whitespace runs. The default.
//! - `bytes-div-4`: `ceil(byte_length / 4)`, a rough BPE stand-in.
//! - `table:<path>`: per-word counts loaded from a JSON object
//!   `{"word": count, ...}`; words absent from the table fall back to
//!   `ceil(byte_length / 4)`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CounterError {
    #[error("cannot read token table {path}: {source}")]
    TableIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed token table {path}: {source}")]
    TableFormat {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown counter mode `{0}` (expected whitespace, bytes-div-4 or table:<path>)")]
    UnknownMode(String),
}

/// Word → token-count table backing the `table:<path>` mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTable {
    path: PathBuf,
    entries: HashMap<String, usize>,
}

impl TokenTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CounterError> {
        let path = path.as_ref().to_path_buf();
        let raw = std::fs::read_to_string(&path).map_err(|source| CounterError::TableIo {
            path: path.clone(),
            source,
        })?;
        let entries = serde_json::from_str(&raw).map_err(|source| CounterError::TableFormat {
            path: path.clone(),
            source,
        })?;
        Ok(Self { path, entries })
    }

    pub fn from_entries(path: impl Into<PathBuf>, entries: HashMap<String, usize>) -> Self {
        Self {
            path: path.into(),
            entries,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn count_word(&self, word: &str) -> usize {
        self.entries
            .get(word)
            .copied()
            .unwrap_or_else(|| word.len().div_ceil(4))
    }
}

#[derive(Debug, Clone, Default)]
pub enum TokenCounter {
    #[default]
    Whitespace,
    BytesDiv4,
    Table(Arc<TokenTable>),
}

impl TokenCounter {
    /// Parses a mode label, loading the table file for `table:<path>`.
    pub fn from_mode(mode: &str) -> Result<Self, CounterError> {
        match mode {
            "whitespace" => Ok(Self::Whitespace),
            "bytes-div-4" => Ok(Self::BytesDiv4),
            other => match other.strip_prefix("table:") {
                Some(path) if !path.is_empty() => Ok(Self::Table(Arc::new(TokenTable::load(path)?))),
                _ => Err(CounterError::UnknownMode(other.to_string())),
            },
        }
    }

    pub fn count(&self, text: &str) -> usize {
        match self {
            Self::Whitespace => text.split_whitespace().count(),
            Self::BytesDiv4 => text.len().div_ceil(4),
            Self::Table(table) => text.split_whitespace().map(|w| table.count_word(w)).sum(),
        }
    }

    /// Stable label used in manifests and snapshot records.
    pub fn mode_label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TokenCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Whitespace => f.write_str("whitespace"),
            Self::BytesDiv4 => f.write_str("bytes-div-4"),
            Self::Table(table) => write!(f, "table:{}", table.path.display()),
        }
    }
}

impl PartialEq for TokenCounter {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Whitespace, Self::Whitespace) | (Self::BytesDiv4, Self::BytesDiv4) => true,
            (Self::Table(a), Self::Table(b)) => a == b,
            _ => false,
        }
    }
}

impl FromStr for TokenCounter {
    type Err = CounterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_mode(s)
    }
}

/// Free-function form of [`TokenCounter::count`].
pub fn count_tokens(counter: &TokenCounter, text: &str) -> usize {
    counter.count(text)
}
