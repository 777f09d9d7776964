//! Building the subscriber-by-tower matrix from count records or check-ins.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{CoreError, Result};
use crate::matrix::CdrMatrix;

/// Known cell towers in column order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TowerRegistry {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl TowerRegistry {
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Result<Self> {
        let mut reg = Self::default();
        for id in ids {
            if reg.index.contains_key(&id) {
                return Err(CoreError::Ingest(format!("tower `{id}` listed twice")));
            }
            reg.push(id);
        }
        Ok(reg)
    }

    /// One tower id per line; blank lines and `#` comments are skipped.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut ids = Vec::new();
        for line in r.lines() {
            let line = line?;
            let id = line.trim();
            if !id.is_empty() && !id.starts_with('#') {
                ids.push(id.to_string());
            }
        }
        Self::from_ids(ids)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        Ok(())
    }

    fn push(&mut self, id: String) -> usize {
        let i = self.ids.len();
        self.index.insert(id.clone(), i);
        self.ids.push(id);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Ingested matrix with its row and column labels.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub matrix: CdrMatrix,
    pub users: Vec<String>,
    pub towers: TowerRegistry,
    /// Entries lowered to the sensitivity cap.
    pub clamped: usize,
}

struct Accumulator {
    users: Vec<String>,
    user_index: HashMap<String, usize>,
    cells: HashMap<(usize, usize), u64>,
    towers: TowerRegistry,
    grow_towers: bool,
}

impl Accumulator {
    fn new(registry: Option<TowerRegistry>) -> Self {
        Self {
            users: Vec::new(),
            user_index: HashMap::new(),
            cells: HashMap::new(),
            grow_towers: registry.is_none(),
            towers: registry.unwrap_or_default(),
        }
    }

    fn add(&mut self, user: &str, tower: &str, count: u64, line: usize) -> Result<()> {
        let col = match self.towers.get(tower) {
            Some(c) => c,
            None if self.grow_towers => self.towers.push(tower.to_string()),
            None => return Err(CoreError::Ingest(format!("line {line}: unknown tower `{tower}`"))),
        };
        let row = match self.user_index.get(user) {
            Some(&r) => r,
            None => {
                self.users.push(user.to_string());
                self.user_index.insert(user.to_string(), self.users.len() - 1);
                self.users.len() - 1
            }
        };
        let e = self.cells.entry((row, col)).or_insert(0);
        *e = e.saturating_add(count);
        Ok(())
    }

    fn finish(self, cap: Option<u64>) -> Result<Ingested> {
        if self.users.is_empty() || self.towers.is_empty() {
            return Err(CoreError::Ingest("no records".into()));
        }
        let mut m = CdrMatrix::zeros(self.users.len(), self.towers.len())?;
        let mut clamped = 0;
        for ((r, c), mut v) in self.cells {
            if let Some(cap) = cap {
                if v > cap {
                    v = cap;
                    clamped += 1;
                }
            }
            m.set(r, c, v);
        }
        Ok(Ingested {
            matrix: m,
            users: self.users,
            towers: self.towers,
            clamped,
        })
    }
}

/// Records `user_id,tower_id,count` with a header line. Counts for the same
/// pair are summed, then clamped to `cap`.
pub fn ingest_counts<R: Read>(r: R, registry: Option<TowerRegistry>, cap: Option<u64>) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut acc = Accumulator::new(registry);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(CoreError::Ingest(format!("line {line}: expected 3 fields, found {}", rec.len())));
        }
        let count: i64 = rec[2]
            .parse()
            .map_err(|_| CoreError::Ingest(format!("line {line}: bad count `{}`", &rec[2])))?;
        if count < 0 {
            return Err(CoreError::Ingest(format!("line {line}: negative count {count}")));
        }
        acc.add(&rec[0], &rec[1], count as u64, line)?;
    }
    acc.finish(cap)
}

/// One check-in: `user_id, timestamp, latitude, longitude, location_id`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckIn {
    pub user: String,
    pub time: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub location: String,
}

/// Parses comma- or tab-separated check-ins, skipping blank lines.
pub fn read_checkins<R: BufRead>(r: R) -> Result<Vec<CheckIn>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let f: Vec<&str> = line.split(sep).map(str::trim).collect();
        let bad = |what: &str| CoreError::Ingest(format!("line {}: {what}", i + 1));
        if f.len() != 5 {
            return Err(bad(&format!("expected 5 fields, found {}", f.len())));
        }
        let time = DateTime::parse_from_rfc3339(f[1])
            .map_err(|_| bad(&format!("bad timestamp `{}`", f[1])))?
            .with_timezone(&Utc);
        let lat: f64 = f[2].parse().map_err(|_| bad("bad latitude"))?;
        let lon: f64 = f[3].parse().map_err(|_| bad("bad longitude"))?;
        out.push(CheckIn {
            user: f[0].to_string(),
            time,
            lat,
            lon,
            location: f[4].to_string(),
        });
    }
    Ok(out)
}

pub fn write_checkins<W: Write>(checkins: &[CheckIn], mut w: W) -> Result<()> {
    for c in checkins {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{}",
            c.user,
            c.time.format("%Y-%m-%dT%H:%M:%SZ"),
            c.lat,
            c.lon,
            c.location
        )?;
    }
    Ok(())
}

/// Counts check-ins per user and location, optionally restricted to an
/// inclusive date range.
pub fn aggregate_checkins(
    checkins: &[CheckIn],
    registry: Option<TowerRegistry>,
    cap: Option<u64>,
    period: Option<(NaiveDate, NaiveDate)>,
) -> Result<Ingested> {
    let mut acc = Accumulator::new(registry);
    for (i, c) in checkins.iter().enumerate() {
        if let Some((from, to)) = period {
            let d = c.time.date_naive();
            if d < from || d > to {
                continue;
            }
        }
        acc.add(&c.user, &c.location, 1, i + 1)?;
    }
    acc.finish(cap)
}

/// Users moving around home towers on a `grid x grid` lattice; each user
/// makes between `min_checkins` and `max_checkins` check-ins.
pub fn synthetic_checkins(users: usize, grid: usize, min_checkins: usize, max_checkins: usize, seed: u64) -> Vec<CheckIn> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = DateTime::parse_from_rfc3339("2020-03-01T00:00:00Z")
        .expect("valid literal")
        .with_timezone(&Utc);
    let mut out = Vec::new();
    // A few dense hotspots make the heatmap non-uniform.
    let hotspots: Vec<(usize, usize)> = (0..3).map(|_| (rng.random_range(0..grid), rng.random_range(0..grid))).collect();
    for u in 0..users {
        let (hx, hy) = if rng.random_bool(0.6) {
            hotspots[rng.random_range(0..hotspots.len())]
        } else {
            (rng.random_range(0..grid), rng.random_range(0..grid))
        };
        let n = rng.random_range(min_checkins..=max_checkins);
        for _ in 0..n {
            let dx = rng.random_range(-2i64..=2);
            let dy = rng.random_range(-2i64..=2);
            let x = (hx as i64 + dx).clamp(0, grid as i64 - 1) as usize;
            let y = (hy as i64 + dy).clamp(0, grid as i64 - 1) as usize;
            let time = start + chrono::Duration::seconds(rng.random_range(0..30 * 86_400));
            out.push(CheckIn {
                user: format!("u{u:05}"),
                time,
                lat: 48.1 + 0.002 * y as f64,
                lon: 16.2 + 0.003 * x as f64,
                location: format!("t{}", y * grid + x),
            });
        }
    }
    out
}

/// Registry of every tower on a `grid x grid` synthetic lattice.
pub fn synthetic_registry(grid: usize) -> TowerRegistry {
    TowerRegistry::from_ids((0..grid * grid).map(|i| format!("t{i}"))).expect("distinct ids")
}
