use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Period, RejectReason};
use crate::error::{CoreError, Result};

/// One accepted request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub jurisdiction: String,
    pub period: Period,
    pub w: u64,
    pub accepted_at: String,
}

/// Accepted `(jurisdiction, period)` pairs, persisted as append-only JSON
/// lines when backed by a file.
#[derive(Debug, Default)]
pub struct Ledger {
    path: Option<PathBuf>,
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path`, which need not exist yet.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        if path.exists() {
            let f = BufReader::new(File::open(&path)?);
            for (i, line) in f.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: LedgerEntry = serde_json::from_str(&line)
                    .map_err(|err| CoreError::Ledger(format!("{}:{}: {err}", path.display(), i + 1)))?;
                entries.push(e);
            }
        }
        Ok(Self {
            path: Some(path),
            entries,
        })
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Fails with `PERIOD_OVERLAP` if an accepted request for the same area
    /// intersects `period`.
    pub fn check(&self, jurisdiction: &str, period: &Period) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|e| e.jurisdiction == jurisdiction && e.period.overlaps(period))
        {
            Some(e) => Err(CoreError::rejected(
                RejectReason::PeriodOverlap,
                format!("period {period} overlaps {} accepted for `{jurisdiction}`", e.period),
            )),
            None => Ok(()),
        }
    }

    pub fn record(&mut self, jurisdiction: &str, period: Period, w: u64) -> Result<()> {
        self.check(jurisdiction, &period)?;
        let entry = LedgerEntry {
            jurisdiction: jurisdiction.to_string(),
            period,
            w,
            accepted_at: chrono::Utc::now().to_rfc3339(),
        };
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.entries.push(entry);
        Ok(())
    }
}
