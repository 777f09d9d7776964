//! Scaling sweep over the number of tile products.

use std::io::Write;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::matrix::CdrMatrix;
use crate::par::ThreadBudget;
use crate::protocol::{
    client_prepare, context_for, keygen_for, Ledger, Message, Period, Policy, ProcessReport, Server, ServerConfig,
    ServerResponse,
};

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub n_v: usize,
    pub n_o: usize,
    pub matmuls: u64,
    pub wall_secs: f64,
    pub row_rotations: u64,
    pub column_rotations: u64,
    pub pt_ct_mults: u64,
    pub ct_ct_mults: u64,
    pub ct_bytes: usize,
    pub galois_bytes: usize,
    pub relin_bytes: usize,
    pub request_bytes: usize,
    pub response_bytes: usize,
}

/// Least-squares line through `(x, y)` with its coefficient of determination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r2 })
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub params: String,
    pub masked: bool,
    /// Row blocks per point; each point uses one column block.
    pub sizes: Vec<usize>,
    pub threads: ThreadBudget,
    pub seed: u64,
    /// Cache budget; zero encodes diagonals on the fly for every tile.
    pub cache_bytes: usize,
    /// Timed passes per point; the fastest is reported.
    pub repeats: usize,
}

/// One request per size against a random dense matrix of `size * n` rows and
/// `n/2` columns.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<BenchRow>> {
    if cfg.sizes.is_empty() || cfg.sizes.contains(&0) {
        return Err(CoreError::Config("sizes must be positive".into()));
    }
    if cfg.repeats == 0 {
        return Err(CoreError::Config("repeats must be positive".into()));
    }
    let ctx = context_for(&cfg.params)?;
    let (n, t) = (ctx.n(), ctx.params().t());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let keys = keygen_for(&ctx, cfg.masked, &mut rng)?;
    let period = Period::new(
        NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
        NaiveDate::from_ymd_opt(2020, 3, 14).expect("valid date"),
    )?;
    let mut sc = ServerConfig::new(&cfg.params);
    sc.masked = cfg.masked;
    sc.threads = cfg.threads;
    sc.cache_bytes = cfg.cache_bytes;
    sc.policy = Policy {
        w_min: 0,
        ..Policy::default()
    };
    let cols = n / 2;
    // Matrices are regenerated from a per-point seed on every pass rather than
    // held in memory all at once.
    let matrix = |size: usize| -> Result<Arc<CdrMatrix>> {
        let mut r = ChaCha20Rng::seed_from_u64(cfg.seed ^ ((size as u64) << 32));
        let data = (0..size * n * cols).map(|_| r.random_range(0..8u64.min(t))).collect();
        Ok(Arc::new(CdrMatrix::new(size * n, cols, data)?))
    };
    let mut requests = Vec::with_capacity(cfg.sizes.len());
    for (i, &size) in cfg.sizes.iter().enumerate() {
        let n_rows = size * n;
        let mut x = vec![0u64; n_rows];
        for v in x.iter_mut().take(n_rows.min(32)) {
            *v = 1;
        }
        requests.push(client_prepare(&keys, &x, cfg.masked, &format!("bench-{i}"), period, &mut rng)?);
    }

    // Passes are interleaved across points so a slow stretch of the machine
    // hits every point alike; the fastest pass is reported.
    let mut times = vec![Vec::with_capacity(cfg.repeats); cfg.sizes.len()];
    let mut first: Vec<Option<(ServerResponse, ProcessReport)>> = vec![None; cfg.sizes.len()];
    for _ in 0..cfg.repeats {
        for (i, &size) in cfg.sizes.iter().enumerate() {
            // A fresh ledger each pass, otherwise the repeat overlaps itself.
            let server = Server::new(sc.clone(), matrix(size)?, Ledger::in_memory())?;
            let run = server.process(&requests[i], &[i as u8; 32])?;
            times[i].push(run.1.elapsed.as_secs_f64());
            first[i].get_or_insert(run);
        }
    }

    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for ((req, run), secs) in requests.iter().zip(first).zip(times) {
        let (resp, report) = run.expect("at least one pass");
        let sizes = req.sizes()?;
        let wall_secs = secs.iter().copied().fold(f64::INFINITY, f64::min);
        let response_bytes = Message::Response(resp).encode()?.len();
        rows.push(BenchRow {
            n_v: report.n_v,
            n_o: report.n_o,
            matmuls: report.matmul.matmuls,
            wall_secs,
            row_rotations: report.counts.row_rotations,
            column_rotations: report.counts.column_rotations,
            pt_ct_mults: report.counts.pt_ct_mults,
            ct_ct_mults: report.counts.ct_ct_mults,
            ct_bytes: sizes.ciphertexts,
            galois_bytes: sizes.galois_keys,
            relin_bytes: sizes.relin_key,
            request_bytes: sizes.total,
            response_bytes,
        });
    }
    Ok(rows)
}

/// Fit of wall time against MatMul count.
pub fn fit_rows(rows: &[BenchRow]) -> Option<LinearFit> {
    let xs: Vec<f64> = rows.iter().map(|r| r.matmuls as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_secs).collect();
    linear_fit(&xs, &ys)
}

pub fn write_rows<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
