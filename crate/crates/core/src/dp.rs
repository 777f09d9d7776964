//! Rounded Laplace noise, its homomorphic application, and the
//! privacy-utility experiment harness.

use std::io::Write;

use heatmap_bfv::{Evaluator, PlainVec};
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{CoreError, Result};
use crate::linalg::EncryptedHeatmap;
use crate::masking::derive_seed;
use crate::matrix::CdrMatrix;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta_q: u64,
    pub enabled: bool,
}

impl DpConfig {
    /// `epsilon` may be infinite, which yields no noise.
    pub fn new(epsilon: f64, delta_q: u64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(CoreError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if delta_q == 0 {
            return Err(CoreError::Config("delta-q must be at least 1".into()));
        }
        Ok(Self {
            epsilon,
            delta_q,
            enabled: true,
        })
    }

    pub fn disabled() -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta_q: 1,
            enabled: false,
        }
    }

    /// Laplace scale `b = delta_q / epsilon`.
    pub fn scale(&self) -> f64 {
        self.delta_q as f64 / self.epsilon
    }
}

/// Uniform double in the open interval (0, 1).
fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Inverse-CDF draw from Laplace(0, b).
pub fn laplace(rng: &mut impl RngCore, b: f64) -> f64 {
    let u = open_unit(rng);
    if u < 0.5 {
        b * (2.0 * u).ln()
    } else {
        -b * (2.0 * (1.0 - u)).ln()
    }
}

/// Nearest integer, ties rounded up.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// `count` i.i.d. samples of the rounded Laplace(delta_q / epsilon).
pub fn sample_discrete_laplace(cfg: &DpConfig, count: usize, seed: [u8; 32]) -> Vec<i64> {
    if !cfg.enabled || cfg.epsilon.is_infinite() {
        return vec![0; count];
    }
    let b = cfg.scale();
    let mut rng = ChaCha20Rng::from_seed(seed);
    (0..count).map(|_| round_half_up(laplace(&mut rng, b))).collect()
}

fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// `P[round(Lap(b)) = k]` in closed form.
pub fn rounded_laplace_pmf(k: i64, b: f64) -> f64 {
    laplace_cdf(k as f64 + 0.5, b) - laplace_cdf(k as f64 - 0.5, b)
}

/// `E|round(Lap(b))|`, summed until the tail is negligible.
pub fn rounded_laplace_mean_abs(b: f64) -> f64 {
    let mut total = 0.0;
    let mut k = 1i64;
    loop {
        let p = rounded_laplace_pmf(k, b);
        total += 2.0 * k as f64 * p;
        if p < 1e-18 && k as f64 > b {
            return total;
        }
        k += 1;
    }
}

/// Noise laid out like the heatmap: `n_o` blocks, value `c` in slot
/// `c mod n/2` of both rows of block `c / (n/2)`, negatives as `t + d`.
pub fn noise_blocks(delta: &[i64], t: u64, n: usize, n_o: usize) -> Result<Vec<Vec<u64>>> {
    let half = n / 2;
    if delta.len() > n_o * half {
        return Err(CoreError::Shape(format!("{} noise values for {n_o} blocks", delta.len())));
    }
    let mut blocks = vec![vec![0u64; n]; n_o];
    for (c, &d) in delta.iter().enumerate() {
        let v = d.rem_euclid(t as i64) as u64;
        blocks[c / half][c % half] = v;
        blocks[c / half][half + c % half] = v;
    }
    Ok(blocks)
}

/// `h + delta`, slot-aligned with the heatmap layout.
pub fn apply_noise(ev: &Evaluator, h: &mut EncryptedHeatmap, delta: &[i64]) -> Result<()> {
    let ctx = ev.context();
    if delta.len() != h.k {
        return Err(CoreError::Shape(format!("{} noise values for {} towers", delta.len(), h.k)));
    }
    let blocks = noise_blocks(delta, ctx.params().t(), ctx.n(), h.blocks.len())?;
    for (c, b) in h.blocks.iter_mut().zip(blocks) {
        ev.add_plain_assign(c, &PlainVec::new(ctx, &b)?)?;
    }
    Ok(())
}

/// `0.05, 0.10, ..., 1.00`.
pub fn paper_epsilon_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

pub const REPORT_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub epsilon: f64,
    pub w: usize,
    pub mean_noise: f64,
    pub min: f64,
    pub max: f64,
    pub quantiles: Vec<f64>,
    pub queries: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub w_range: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub delta_q: u64,
    pub seed: [u8; 32],
    pub parallel: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(epsilon: f64, w: usize, mut values: Vec<f64>) -> ExperimentRow {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    ExperimentRow {
        epsilon,
        w,
        mean_noise: mean,
        min: values[0],
        max: values[values.len() - 1],
        quantiles: REPORT_QUANTILES.iter().map(|&q| quantile(&values, q)).collect(),
        queries: values.len(),
    }
}

/// Random `w`-subsets of users; for each subset and `epsilon`, the mean
/// `|noise|` over towers the aggregate touches. One row per `(epsilon, w)`.
pub fn dp_experiment(data: &CdrMatrix, cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    if data.data().iter().all(|&v| v == 0) {
        return Err(CoreError::Ingest("dataset has no observations".into()));
    }
    if cfg.trials == 0 || cfg.epsilons.is_empty() || cfg.w_range.is_empty() {
        return Err(CoreError::Config("experiment needs trials, epsilons and weights".into()));
    }
    let dps = cfg
        .epsilons
        .iter()
        .map(|&e| DpConfig::new(e, cfg.delta_q))
        .collect::<Result<Vec<_>>>()?;
    let users = data.rows();
    let mut rows = Vec::new();
    for &w in &cfg.w_range {
        if w == 0 || w > users {
            return Err(CoreError::Config(format!("w = {w} outside 1..={users}")));
        }
        // per_query[q][e] = mean |noise| of query q at epsilon e
        let per_query = par::map_range(cfg.parallel, cfg.trials, |q| {
            let seed = derive_seed(&cfg.seed, &format!("query/{w}/{q}"));
            let mut rng = ChaCha20Rng::from_seed(seed);
            let mut x = vec![0u64; users];
            for u in sample(&mut rng, users, w) {
                x[u] = 1;
            }
            let agg = data.vec_mul(&x, u64::MAX).expect("length matches");
            let support: Vec<usize> = (0..agg.len()).filter(|&c| agg[c] != 0).collect();
            dps.iter()
                .enumerate()
                .map(|(e, dp)| {
                    let noise = sample_discrete_laplace(dp, agg.len(), derive_seed(&seed, &format!("eps/{e}")));
                    let cells = if support.is_empty() { (0..agg.len()).collect() } else { support.clone() };
                    cells.iter().map(|&c| noise[c].unsigned_abs() as f64).sum::<f64>() / cells.len() as f64
                })
                .collect::<Vec<f64>>()
        });
        for (e, &eps) in cfg.epsilons.iter().enumerate() {
            rows.push(summarize(eps, w, per_query.iter().map(|r| r[e]).collect()));
        }
    }
    Ok(rows)
}

pub fn write_report<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epsilon".to_string(), "w".into(), "mean_noise".into(), "min".into(), "max".into()];
    header.extend(REPORT_QUANTILES.iter().map(|q| format!("q{:02}", (q * 100.0).round() as u32)));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            format!("{:.2}", r.epsilon),
            r.w.to_string(),
            format!("{:.6}", r.mean_noise),
            format!("{:.6}", r.min),
            format!("{:.6}", r.max),
        ];
        rec.extend(r.quantiles.iter().map(|q| format!("{q:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Original aggregate of `x` next to one noised copy per epsilon.
pub fn heatmap_pairs(data: &CdrMatrix, x: &[u64], epsilons: &[f64], delta_q: u64, seed: [u8; 32]) -> Result<(Vec<u64>, Vec<Vec<i64>>)> {
    let agg = data.vec_mul(x, u64::MAX)?;
    let noised = epsilons
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let dp = DpConfig::new(eps, delta_q)?;
            let noise = sample_discrete_laplace(&dp, agg.len(), derive_seed(&seed, &format!("pair/{e}")));
            Ok(agg.iter().zip(noise).map(|(&a, d)| a as i64 + d).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((agg, noised))
}

pub fn write_heatmap_pairs<W: Write>(towers: &[String], original: &[u64], epsilons: &[f64], noised: &[Vec<i64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["tower".to_string(), "original".into()];
    header.extend(epsilons.iter().map(|e| format!("eps_{e:.2}")));
    w.write_record(&header)?;
    for (c, o) in original.iter().enumerate() {
        let mut rec = vec![towers.get(c).cloned().unwrap_or_else(|| c.to_string()), o.to_string()];
        rec.extend(noised.iter().map(|n| n[c].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_config() {
        assert!(DpConfig::new(0.0, 1).is_err());
        assert!(DpConfig::new(-1.0, 1).is_err());
        assert!(DpConfig::new(f64::NAN, 1).is_err());
        assert!(DpConfig::new(0.4, 0).is_err());
        assert_eq!(DpConfig::new(0.4, 1).unwrap().scale(), 2.5);
    }

    #[test]
    fn infinite_epsilon_is_noiseless() {
        let dp = DpConfig::new(f64::INFINITY, 3).unwrap();
        assert!(sample_discrete_laplace(&dp, 100, [1; 32]).iter().all(|&v| v == 0));
        assert!(sample_discrete_laplace(&DpConfig::disabled(), 5, [1; 32]).iter().all(|&v| v == 0));
    }

    #[test]
    fn rounding_ties_go_up() {
        assert_eq!(round_half_up(0.5), 1);
        assert_eq!(round_half_up(-0.5), 0);
        assert_eq!(round_half_up(-1.5), -1);
        assert_eq!(round_half_up(2.49), 2);
    }

    #[test]
    fn pmf_sums_to_one() {
        let s: f64 = (-200..=200).map(|k| rounded_laplace_pmf(k, 2.5)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_layout_duplicates_rows() {
        let b = noise_blocks(&[-3, 5, 1], 17, 4, 2).unwrap();
        assert_eq!(b[0], vec![14, 5, 14, 5]);
        assert_eq!(b[1], vec![1, 0, 1, 0]);
        assert!(noise_blocks(&[0; 5], 17, 4, 2).is_err());
    }

    #[test]
    fn grid_matches_scan() {
        let g = paper_epsilon_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.05).abs() < 1e-12 && (g[19] - 1.0).abs() < 1e-12);
    }
}
