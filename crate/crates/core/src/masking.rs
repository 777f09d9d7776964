//! Server-side proving mask: zero exactly when the encrypted query is binary
//! and matches its announced hamming weight, otherwise a random-looking
//! nonzero shift of every output.

use std::collections::BTreeSet;

use heatmap_bfv::{CipherVec, Evaluator, HeError, PlainVec};
use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake128;

use crate::error::{CoreError, Result};
use crate::linalg::EncryptedHeatmap;
use crate::par;

/// Maximum rejection-loop iterations per sampled value.
pub const SAMPLER_CAP: usize = 1_000_000;

/// Derives a 32-byte sub-seed from `master` and a domain label.
pub fn derive_seed(master: &[u8; 32], label: &str) -> [u8; 32] {
    let mut h = Shake128::default();
    h.update(master);
    h.update(label.as_bytes());
    let mut out = [0u8; 32];
    h.finalize_xof().read(&mut out);
    out
}

/// Uniform elements of `Z_t` (or `Z_t \ {0}`) by rejection sampling from a
/// SHAKE128 stream.
pub struct ShakeSampler {
    reader: <Shake128 as ExtendableOutput>::Reader,
}

impl ShakeSampler {
    pub fn new(seed: &[u8]) -> Self {
        let mut h = Shake128::default();
        h.update(seed);
        Self {
            reader: h.finalize_xof(),
        }
    }

    pub fn next(&mut self, t: u64, nonzero: bool) -> Result<u64> {
        if t < 2 {
            return Err(CoreError::Config(format!("modulus {t} is too small to sample from")));
        }
        let bits = 64 - (t - 1).leading_zeros();
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        let mut buf = [0u8; 8];
        for _ in 0..SAMPLER_CAP {
            self.reader.read(&mut buf);
            let v = u64::from_le_bytes(buf) & mask;
            if v < t && !(nonzero && v == 0) {
                return Ok(v);
            }
        }
        Err(CoreError::SamplerExhausted)
    }

    pub fn sample(&mut self, t: u64, nonzero: bool, count: usize) -> Result<Vec<u64>> {
        (0..count).map(|_| self.next(t, nonzero)).collect()
    }
}

/// Row rotations needed for summing all slots: `1, 2, 4, ..., n/4`.
pub fn inner_sum_indices(n: usize) -> BTreeSet<usize> {
    (0..(n / 2).trailing_zeros()).map(|e| 1usize << e).collect()
}

/// Every slot of the result holds the sum of all `n` input slots.
pub fn inner_sum(ev: &Evaluator, c: &CipherVec) -> Result<CipherVec> {
    let n = ev.context().n();
    let mut acc = c.clone();
    for s in inner_sum_indices(n) {
        let r = ev.rotate_rows(&acc, s)?;
        ev.add_assign(&mut acc, &r)?;
    }
    let swapped = ev.rotate_columns(&acc)?;
    Ok(ev.add(&acc, &swapped)?)
}

/// Mask randomness for one request, reproducible from `seed`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRandomness {
    pub y1: u64,
    pub y2: u64,
    pub r1: u64,
    pub r2: u64,
    /// `n_o` blocks of `n` nonzero slots; both rows of a block carry the same
    /// values and the first `k` row-0 slots overall are the output randomizers.
    pub r_vec: Vec<Vec<u64>>,
    pub seed: [u8; 32],
}

impl MaskRandomness {
    pub fn from_seed(seed: [u8; 32], t: u64, n: usize, n_o: usize) -> Result<Self> {
        let mut s = ShakeSampler::new(&seed);
        let y1 = s.next(t, true)?;
        let y2 = s.next(t, true)?;
        let r1 = s.next(t, true)?;
        let r2 = s.next(t, true)?;
        let half = n / 2;
        let mut r_vec = Vec::with_capacity(n_o);
        for _ in 0..n_o {
            let row = s.sample(t, true, half)?;
            r_vec.push([row.as_slice(), row.as_slice()].concat());
        }
        Ok(Self {
            y1,
            y2,
            r1,
            r2,
            r_vec,
            seed,
        })
    }

    /// Output randomizers `r_0 .. r_{k-1}`.
    pub fn r_outputs(&self, k: usize) -> Vec<u64> {
        let half = self.r_vec.first().map_or(0, |b| b.len() / 2);
        (0..k).map(|c| self.r_vec[c / half][c % half]).collect()
    }

    /// `Y_j[s] = r1 * y1^(jn+s) + r2 * y2^(jn+s)` for `j < n_v`.
    pub fn weight_blocks(&self, t: u64, n: usize, n_v: usize) -> Vec<Vec<u64>> {
        let mul = |a: u64, b: u64| (a as u128 * b as u128 % t as u128) as u64;
        let (mut p1, mut p2) = (1u64, 1u64);
        (0..n_v)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let v = (mul(self.r1, p1) as u128 + mul(self.r2, p2) as u128) % t as u128;
                        p1 = mul(p1, self.y1);
                        p2 = mul(p2, self.y2);
                        v as u64
                    })
                    .collect()
            })
            .collect()
    }
}

/// `mu_bin = sum_j inner_sum((c_j * (c_j - 1)) . Y_j)`, replicated in all
/// slots. Uses one relinearization for all blocks.
pub fn eval_binary_mask(
    ev: &Evaluator,
    c_blocks: &[CipherVec],
    rand: &MaskRandomness,
    parallel: bool,
) -> Result<CipherVec> {
    let ctx = ev.context();
    let (t, n) = (ctx.params().t(), ctx.n());
    if c_blocks.is_empty() {
        return Err(CoreError::Shape("no query blocks".into()));
    }
    if !ev.keys().is_some_and(|k| k.has_relin()) {
        return Err(HeError::MissingRelinKey.into());
    }
    let one = PlainVec::constant(ctx, 1);
    let weights = rand.weight_blocks(t, n, c_blocks.len());
    let terms = par::map_range(parallel, c_blocks.len(), |j| -> Result<CipherVec> {
        let c = &c_blocks[j];
        let d = ev.sub_plain(c, &one)?;
        let sq = ev.multiply(c, &d)?;
        let y = ev.prepare_plain(&PlainVec::new(ctx, &weights[j])?, c.level());
        Ok(ev.mul_plain(&sq, &y)?)
    });
    let mut acc: Option<CipherVec> = None;
    for term in terms {
        let term = term?;
        match &mut acc {
            Some(a) => ev.add_assign(a, &term)?,
            None => acc = Some(term),
        }
    }
    let folded = ev.relinearize(&acc.expect("at least one block"))?;
    inner_sum(ev, &folded)
}

/// `mu_HW = <x, 1^N> - w`, replicated in all slots.
pub fn eval_hw_mask(ev: &Evaluator, c_blocks: &[CipherVec], w: u64) -> Result<CipherVec> {
    let ctx = ev.context();
    let t = ctx.params().t();
    let (first, rest) = c_blocks
        .split_first()
        .ok_or_else(|| CoreError::Shape("no query blocks".into()))?;
    let mut acc = first.clone();
    for c in rest {
        ev.add_assign(&mut acc, c)?;
    }
    let total = inner_sum(ev, &acc)?;
    Ok(ev.sub_plain(&total, &PlainVec::constant(ctx, w % t))?)
}

/// `mu_bin + mu_HW`, or just `mu_bin` with the weight check disabled.
pub fn eval_mask(
    ev: &Evaluator,
    c_blocks: &[CipherVec],
    w: u64,
    rand: &MaskRandomness,
    hw_check: bool,
    parallel: bool,
) -> Result<CipherVec> {
    let bin = eval_binary_mask(ev, c_blocks, rand, parallel)?;
    if !hw_check {
        return Ok(bin);
    }
    let hw = eval_hw_mask(ev, c_blocks, w)?;
    Ok(ev.add(&bin, &hw)?)
}

/// `h_i += mu * R_i` for every output block.
pub fn combine_and_apply_mask(
    ev: &Evaluator,
    h: &mut EncryptedHeatmap,
    mu: &CipherVec,
    rand: &MaskRandomness,
) -> Result<()> {
    if rand.r_vec.len() != h.blocks.len() {
        return Err(CoreError::Shape(format!(
            "{} randomizer blocks for {} heatmap blocks",
            rand.r_vec.len(),
            h.blocks.len()
        )));
    }
    let ctx = ev.context();
    for (block, r) in h.blocks.iter_mut().zip(&rand.r_vec) {
        let rp = ev.prepare_plain(&PlainVec::new(ctx, r)?, mu.level());
        ev.mul_plain_add_assign(block, mu, &rp)?;
    }
    Ok(())
}

/// Plaintext value of the scalar mask for query `x`. The full mask vector is
/// this value times the nonzero randomizers, so it vanishes iff this does.
pub fn plain_mask_scalar(x: &[u64], w: u64, t: u64, rand: &MaskRandomness, hw_check: bool) -> u64 {
    let tt = t as u128;
    let (mut p1, mut p2) = (1u128, 1u128);
    let mut acc = 0u128;
    let mut sum = 0u128;
    for &xi in x {
        let xi = xi as u128 % tt;
        let d = (xi + tt - 1) % tt;
        let y = (rand.r1 as u128 * p1 + rand.r2 as u128 * p2) % tt;
        acc = (acc + xi * d % tt * y) % tt;
        sum = (sum + xi) % tt;
        p1 = p1 * rand.y1 as u128 % tt;
        p2 = p2 * rand.y2 as u128 % tt;
    }
    if hw_check {
        acc = (acc + sum + tt - w as u128 % tt) % tt;
    }
    acc as u64
}

/// Scalar-only randomness for the plaintext soundness simulation.
pub fn plain_randomness(seed: &[u8], t: u64) -> Result<MaskRandomness> {
    let mut s = ShakeSampler::new(seed);
    Ok(MaskRandomness {
        y1: s.next(t, true)?,
        y2: s.next(t, true)?,
        r1: s.next(t, true)?,
        r2: s.next(t, true)?,
        r_vec: Vec::new(),
        seed: [0; 32],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_is_deterministic_and_in_range() {
        let a = ShakeSampler::new(b"seed").sample(17, false, 1000).unwrap();
        let b = ShakeSampler::new(b"seed").sample(17, false, 1000).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v < 17));
        let nz = ShakeSampler::new(b"other").sample(2, true, 200).unwrap();
        assert!(nz.iter().all(|&v| v == 1));
        assert!(ShakeSampler::new(b"x").next(1, false).is_err());
    }

    #[test]
    fn seeds_split_by_label() {
        let m = [7u8; 32];
        assert_ne!(derive_seed(&m, "mask"), derive_seed(&m, "dp"));
        assert_eq!(derive_seed(&m, "mask"), derive_seed(&m, "mask"));
    }

    #[test]
    fn power_of_two_indices() {
        assert_eq!(inner_sum_indices(16), BTreeSet::from([1, 2, 4]));
        assert_eq!(inner_sum_indices(4096).len(), 11);
    }

    #[test]
    fn plain_mask_vanishes_for_honest_queries() {
        let t = 12289;
        let r = plain_randomness(b"r", t).unwrap();
        assert_eq!(plain_mask_scalar(&[1, 0, 1, 1], 3, t, &r, true), 0);
        assert_ne!(plain_mask_scalar(&[1, 0, 1, 1], 2, t, &r, true), 0);
        assert_eq!(plain_mask_scalar(&[1, 0, 1, 1], 2, t, &r, false), 0);
    }

    #[test]
    fn weight_blocks_use_global_exponents() {
        let t = 97;
        let r = MaskRandomness {
            y1: 3,
            y2: 5,
            r1: 1,
            r2: 2,
            r_vec: vec![],
            seed: [0; 32],
        };
        let w = r.weight_blocks(t, 4, 2);
        let pow = |b: u64, e: u32| (b.pow(e)) % t;
        assert_eq!(w[1][1], (pow(3, 5) + 2 * pow(5, 5)) % t);
        assert_eq!(w[0][0], 3);
    }
}
