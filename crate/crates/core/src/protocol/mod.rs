//! The two-party exchange: admission policy, request ledger, index mapping,
//! wire messages, and the client and server state machines.

mod ledger;
mod mapping;
mod session;
pub mod wire;

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use ledger::{Ledger, LedgerEntry};
pub use mapping::IndexMapping;
pub use session::{
    centered, client_finalize, client_prepare, context_for, ideal_f_cov, keygen_for, required_rotations, Heatmap,
    ProcessReport, Server, ServerConfig,
};
pub use wire::{ClientRequest, Message, MessageType, RequestSizes, ServerResponse, FRAME_MAGIC};

/// Why the server refused a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    WTooSmall,
    PeriodOverlap,
    OutOfJurisdiction,
    Malformed,
    /// The query period lies outside the data's collection period.
    PeriodOutOfRange,
}

impl RejectReason {
    pub const ALL: [RejectReason; 5] = [
        RejectReason::WTooSmall,
        RejectReason::PeriodOverlap,
        RejectReason::OutOfJurisdiction,
        RejectReason::Malformed,
        RejectReason::PeriodOutOfRange,
    ];

    pub fn code(self) -> u16 {
        match self {
            RejectReason::WTooSmall => 1,
            RejectReason::PeriodOverlap => 2,
            RejectReason::OutOfJurisdiction => 3,
            RejectReason::Malformed => 4,
            RejectReason::PeriodOutOfRange => 5,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.code() == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::WTooSmall => "W_TOO_SMALL",
            RejectReason::PeriodOverlap => "PERIOD_OVERLAP",
            RejectReason::OutOfJurisdiction => "OUT_OF_JURISDICTION",
            RejectReason::Malformed => "MALFORMED",
            RejectReason::PeriodOutOfRange => "PERIOD_OUT_OF_RANGE",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive date range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(CoreError::Config(format!("period starts {start} after it ends {end}")));
        }
        Ok(Self { start, end })
    }

    /// `YYYY-MM-DD..YYYY-MM-DD`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| CoreError::Config(format!("period `{s}` is not START..END")))?;
        let date = |d: &str| {
            NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d")
                .map_err(|_| CoreError::Config(format!("bad date `{d}`")))
        };
        Self::new(date(a)?, date(b)?)
    }

    pub fn overlaps(&self, other: &Period) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, other: &Period) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

pub const DEFAULT_W_MIN: u64 = 15;

/// Contributions per tower the advisory calculator aims for.
pub const TARGET_CONTRIBUTIONS: f64 = 15.0;

/// Server-side admission rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub w_min: u64,
    /// `None` accepts every jurisdiction.
    pub jurisdictions: Option<BTreeSet<String>>,
    /// Collection period of the server's data, if known.
    pub collection: Option<Period>,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            w_min: DEFAULT_W_MIN,
            jurisdictions: None,
            collection: None,
        }
    }
}

impl Policy {
    /// Checks everything except the ledger.
    pub fn check(&self, w: u64, jurisdiction: &str, period: &Period) -> Result<()> {
        if w < self.w_min {
            return Err(CoreError::rejected(
                RejectReason::WTooSmall,
                format!("announced weight {w} is below the floor {}", self.w_min),
            ));
        }
        if let Some(allowed) = &self.jurisdictions {
            if !allowed.contains(jurisdiction) {
                return Err(CoreError::rejected(
                    RejectReason::OutOfJurisdiction,
                    format!("jurisdiction `{jurisdiction}` is not served"),
                ));
            }
        }
        if let Some(c) = &self.collection {
            if !c.contains(period) {
                return Err(CoreError::rejected(
                    RejectReason::PeriodOutOfRange,
                    format!("period {period} is outside the collection period {c}"),
                ));
            }
        }
        Ok(())
    }
}

/// Smallest `w` whose expected contributions to an average touched tower
/// reach `target`, if `w` users are drawn uniformly from `rows`.
pub fn advisory_w(column_supports: &[usize], rows: usize, target: f64) -> Option<u64> {
    let touched: Vec<f64> = column_supports.iter().filter(|&&s| s > 0).map(|&s| s as f64).collect();
    if touched.is_empty() || rows == 0 {
        return None;
    }
    let mean = touched.iter().sum::<f64>() / touched.len() as f64;
    let w = (target * rows as f64 / mean).ceil() as u64;
    (w as usize <= rows).then_some(w)
}
