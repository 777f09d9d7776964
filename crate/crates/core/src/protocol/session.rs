use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use heatmap_bfv::{decrypt, encrypt, keygen, Context, Evaluator, HeParams, KeyMaterial, OpCounts, PlainVec, SecretKey};
use rand::{CryptoRng, RngCore};

use super::wire::{ClientRequest, Message, ServerResponse};
use super::{Ledger, Period, Policy, RejectReason};
use crate::dp::{apply_noise, sample_discrete_laplace, DpConfig};
use crate::error::{CoreError, Result};
use crate::linalg::{mat_mul_full, BsgsPlan, DiagonalCache, MatMulStats, PreparedMatrix};
use crate::masking::{combine_and_apply_mask, derive_seed, eval_mask, inner_sum_indices, MaskRandomness, ShakeSampler};
use crate::matrix::CdrMatrix;
use crate::par::{self, ThreadBudget};

/// Shared context for a named parameter set, built once per process.
pub fn context_for(name: &str) -> Result<Arc<Context>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<Context>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(c) = cache.lock().unwrap().get(name) {
        return Ok(c.clone());
    }
    let ctx = Context::new(HeParams::named(name)?)?;
    cache.lock().unwrap().entry(name.to_string()).or_insert(ctx.clone());
    Ok(ctx)
}

/// `v mod t` as a representative in `[-t/2, t/2)`.
pub fn centered(v: u64, t: u64) -> i64 {
    if v >= t.div_ceil(2) {
        v as i64 - t as i64
    } else {
        v as i64
    }
}

/// Row rotations the server needs: the BSGS schedule, plus every power of
/// two up to `n/4` in masked mode.
pub fn required_rotations(params: &HeParams, masked: bool) -> Result<BTreeSet<usize>> {
    let mut s = BsgsPlan::for_params(params)?.rotation_indices();
    if masked {
        s.extend(inner_sum_indices(params.n()));
    }
    Ok(s)
}

fn check_mask_support(params: &HeParams, masked: bool) -> Result<()> {
    if masked && !params.supports_masking() {
        return Err(CoreError::Config(format!(
            "parameter set {} lacks the depth for masked mode",
            params.name()
        )));
    }
    Ok(())
}

/// Keys for one client; the relinearization key exists only in masked mode.
pub fn keygen_for<R: RngCore + CryptoRng>(ctx: &Arc<Context>, masked: bool, rng: &mut R) -> Result<KeyMaterial> {
    check_mask_support(ctx.params(), masked)?;
    let rot = required_rotations(ctx.params(), masked)?;
    Ok(keygen(ctx, &rot, masked, rng)?)
}

/// Splits `x` into `ceil(N/n)` zero-padded blocks and encrypts each one.
pub fn client_prepare<R: RngCore + CryptoRng>(
    keys: &KeyMaterial,
    x: &[u64],
    masked: bool,
    jurisdiction: &str,
    period: Period,
    rng: &mut R,
) -> Result<ClientRequest> {
    let ctx = keys.secret.context().clone();
    check_mask_support(ctx.params(), masked)?;
    if masked && !keys.eval.has_relin() {
        return Err(CoreError::Config("masked mode needs a relinearization key".into()));
    }
    if x.is_empty() {
        return Err(CoreError::Shape("empty query vector".into()));
    }
    let (n, t) = (ctx.n(), ctx.params().t());
    let blocks = x
        .chunks(n)
        .map(|chunk| {
            let vals: Vec<u64> = chunk.iter().map(|v| v % t).collect();
            Ok(encrypt(&keys.secret, &PlainVec::new(&ctx, &vals)?, rng)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClientRequest {
        params: ctx.params().name().to_string(),
        masked,
        eval_keys: keys.eval.clone(),
        blocks,
        w: x.iter().sum(),
        jurisdiction: jurisdiction.to_string(),
        period,
    })
}

/// Decrypted heatmap with centered values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    pub values: Vec<i64>,
    /// Both slot rows agreed in every block; false points at exhausted noise.
    pub consistent: bool,
}

pub fn client_finalize(sk: &SecretKey, resp: &ServerResponse, k: usize) -> Result<Heatmap> {
    let ctx = sk.context();
    if resp.params != ctx.params().name() {
        return Err(CoreError::Config(format!(
            "response uses {}, key belongs to {}",
            resp.params,
            ctx.params().name()
        )));
    }
    let half = ctx.n() / 2;
    if resp.blocks.len() != (2 * k).div_ceil(ctx.n()) || resp.k as usize != k {
        return Err(CoreError::Shape(format!(
            "{} response blocks for {k} towers",
            resp.blocks.len()
        )));
    }
    let t = ctx.params().t();
    let mut values = Vec::with_capacity(k);
    let mut consistent = true;
    for b in &resp.blocks {
        let p = decrypt(sk, b)?;
        consistent &= p.row(0) == p.row(1);
        values.extend(p.row(0).iter().take(k - values.len().min(k)).map(|&v| centered(v, t)));
    }
    debug_assert_eq!(values.len(), k.min(resp.blocks.len() * half));
    Ok(Heatmap { values, consistent })
}

/// Reference computation: `x^T Z + noise` for a binary `x` of weight `w`,
/// otherwise a uniform vector. Noise comes from the same seed derivation as
/// the server's.
pub fn ideal_f_cov(x: &[u64], w: u64, z: &CdrMatrix, dp: &DpConfig, seed: &[u8; 32], t: u64) -> Result<Vec<i64>> {
    if x.len() != z.rows() {
        return Err(CoreError::Shape(format!("query of length {} for {} rows", x.len(), z.rows())));
    }
    let honest = x.iter().all(|&v| v <= 1) && x.iter().sum::<u64>() == w;
    if !honest {
        let mut s = ShakeSampler::new(&derive_seed(seed, "ideal-uniform"));
        return Ok(s.sample(t, false, z.cols())?.into_iter().map(|v| centered(v, t)).collect());
    }
    let agg = z.vec_mul(x, t)?;
    let noise = sample_discrete_laplace(dp, z.cols(), derive_seed(seed, "dp"));
    Ok(agg
        .iter()
        .zip(noise)
        .map(|(&a, d)| centered((a as i64 + d).rem_euclid(t as i64) as u64, t))
        .collect())
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub params: String,
    pub masked: bool,
    /// Include the hamming-weight term of the mask.
    pub hw_check: bool,
    pub dp: DpConfig,
    pub policy: Policy,
    pub threads: ThreadBudget,
    /// Byte budget of the encoded-diagonal cache.
    pub cache_bytes: usize,
}

impl ServerConfig {
    pub fn new(params: &str) -> Self {
        Self {
            params: params.to_string(),
            masked: false,
            hw_check: true,
            dp: DpConfig::disabled(),
            policy: Policy::default(),
            threads: ThreadBudget::max(),
            cache_bytes: 1 << 30,
        }
    }
}

/// Work done for one accepted request.
#[derive(Clone, Debug)]
pub struct ProcessReport {
    pub counts: OpCounts,
    pub matmul: MatMulStats,
    pub n_v: usize,
    pub n_o: usize,
    pub elapsed: Duration,
}

pub struct Server {
    config: ServerConfig,
    ctx: Arc<Context>,
    matrix: PreparedMatrix,
    cache: DiagonalCache,
    ledger: Mutex<Ledger>,
}

fn malformed(detail: impl Into<String>) -> CoreError {
    CoreError::rejected(RejectReason::Malformed, detail)
}

impl Server {
    pub fn new(config: ServerConfig, matrix: Arc<CdrMatrix>, ledger: Ledger) -> Result<Self> {
        let ctx = context_for(&config.params)?;
        check_mask_support(ctx.params(), config.masked)?;
        if config.dp.enabled {
            matrix.check_cap(config.dp.delta_q)?;
        }
        let prepared = PreparedMatrix::new(ctx.clone(), matrix)?;
        Ok(Self {
            cache: DiagonalCache::new(config.cache_bytes),
            config,
            ctx,
            matrix: prepared,
            ledger: Mutex::new(ledger),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn matrix(&self) -> &PreparedMatrix {
        &self.matrix
    }

    pub fn cache(&self) -> &DiagonalCache {
        &self.cache
    }

    /// Encodes diagonals ahead of the first request, up to the cache budget.
    pub fn warm_cache(&self) {
        let budget = self.config.threads;
        par::install(budget, || self.matrix.warm(&self.cache, budget.is_parallel()));
    }

    pub fn ledger_entries(&self) -> usize {
        self.ledger.lock().unwrap().entries().len()
    }

    fn validate(&self, req: &ClientRequest) -> Result<()> {
        if req.params != self.config.params {
            return Err(malformed(format!(
                "request uses {}, server runs {}",
                req.params, self.config.params
            )));
        }
        let grid = self.matrix.grid();
        if req.blocks.len() != grid.n_v {
            return Err(malformed(format!(
                "{} query blocks, the mapping needs {}",
                req.blocks.len(),
                grid.n_v
            )));
        }
        let top = self.ctx.top_level();
        if req.blocks.iter().any(|b| b.level() != top || b.size() != 2) {
            return Err(malformed("query blocks must be fresh ciphertexts"));
        }
        if self.config.masked && !req.masked {
            return Err(malformed("this server requires masked requests"));
        }
        let have = req.eval_keys.row_indices();
        let need = required_rotations(self.ctx.params(), self.config.masked)?;
        if let Some(missing) = need.difference(&have).next() {
            return Err(malformed(format!("missing Galois key for rotation {missing}")));
        }
        if self.config.masked && !req.eval_keys.has_relin() {
            return Err(malformed("masked mode needs the relinearization key"));
        }
        Ok(())
    }

    /// Admission, aggregation, masking and noise; the ledger records the
    /// request only once it succeeds.
    pub fn process(&self, req: &ClientRequest, seed: &[u8; 32]) -> Result<(ServerResponse, ProcessReport)> {
        let mut ledger = self.ledger.lock().unwrap();
        self.config.policy.check(req.w, &req.jurisdiction, &req.period)?;
        ledger.check(&req.jurisdiction, &req.period)?;
        self.validate(req)?;

        let start = Instant::now();
        let ev = Evaluator::new(self.ctx.clone(), Arc::new(req.eval_keys.clone())).map_err(|e| malformed(e.to_string()))?;
        let budget = self.config.threads;
        let parallel = budget.is_parallel();
        let grid = *self.matrix.grid();
        let t = self.ctx.params().t();
        let (h, stats) = par::install(budget, || -> Result<_> {
            let (product, mask) = par::join(
                parallel,
                || mat_mul_full(&ev, &self.matrix, &req.blocks, Some(&self.cache), parallel),
                || -> Result<Option<_>> {
                    if !self.config.masked {
                        return Ok(None);
                    }
                    let rand = MaskRandomness::from_seed(derive_seed(seed, "mask"), t, self.ctx.n(), grid.n_o)?;
                    let mu = eval_mask(&ev, &req.blocks, req.w, &rand, self.config.hw_check, parallel)?;
                    Ok(Some((mu, rand)))
                },
            );
            let (mut h, stats) = product?;
            if let Some((mu, rand)) = mask? {
                combine_and_apply_mask(&ev, &mut h, &mu, &rand)?;
            }
            if self.config.dp.enabled {
                let delta = sample_discrete_laplace(&self.config.dp, grid.cols, derive_seed(seed, "dp"));
                apply_noise(&ev, &mut h, &delta)?;
            }
            let blocks = par::map_range(parallel, h.blocks.len(), |i| ev.mod_switch_to_last(&h.blocks[i]))
                .into_iter()
                .collect::<heatmap_bfv::Result<Vec<_>>>()?;
            Ok((blocks, stats))
        })?;
        ledger.record(&req.jurisdiction, req.period, req.w)?;
        let report = ProcessReport {
            counts: ev.counts(),
            matmul: stats,
            n_v: grid.n_v,
            n_o: grid.n_o,
            elapsed: start.elapsed(),
        };
        Ok((
            ServerResponse {
                params: self.config.params.clone(),
                k: grid.cols as u64,
                blocks: h,
            },
            report,
        ))
    }

    /// Turns policy and wire failures into a REJECT message.
    pub fn handle(&self, msg: Message, seed: &[u8; 32]) -> Result<(Message, Option<ProcessReport>)> {
        let req = match msg {
            Message::Request(r) => r,
            other => {
                return Ok((
                    Message::Reject {
                        reason: RejectReason::Malformed,
                        detail: format!("expected a request, got {:?}", other.kind()),
                    },
                    None,
                ))
            }
        };
        match self.process(&req, seed) {
            Ok((resp, report)) => Ok((Message::Response(resp), Some(report))),
            Err(CoreError::Rejected { reason, detail }) => Ok((Message::Reject { reason, detail }, None)),
            Err(CoreError::Wire(detail)) => Ok((
                Message::Reject {
                    reason: RejectReason::Malformed,
                    detail,
                },
                None,
            )),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_is_half_open() {
        assert_eq!(centered(8, 17), 8);
        assert_eq!(centered(9, 17), -8);
        assert_eq!(centered(16, 17), -1);
        assert_eq!(centered(0, 17), 0);
    }

    #[test]
    fn rotation_sets() {
        let p = HeParams::named("desk").unwrap();
        let semi = required_rotations(&p, false).unwrap();
        assert_eq!(semi.len(), 1 + 31);
        let masked = required_rotations(&p, true).unwrap();
        assert!(masked.is_superset(&semi));
        assert!((0..11).all(|e| masked.contains(&(1 << e))));
    }

    #[test]
    fn ideal_uniform_branch_on_cheating() {
        let z = CdrMatrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        let dp = DpConfig::disabled();
        let s = [3u8; 32];
        assert_eq!(ideal_f_cov(&[1, 1], 2, &z, &dp, &s, 97).unwrap(), vec![4, 6]);
        let wrong = ideal_f_cov(&[1, 1], 1, &z, &dp, &s, 97).unwrap();
        assert_eq!(wrong, ideal_f_cov(&[1, 1], 1, &z, &dp, &s, 97).unwrap());
        assert!(ideal_f_cov(&[1], 1, &z, &dp, &s, 97).is_err());
    }
}
