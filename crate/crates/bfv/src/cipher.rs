//! Ciphertexts, secret-key encryption, decryption and noise introspection.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::{CryptoRng, RngCore};

use crate::arith::Modulus;
use crate::context::Context;
use crate::encoding::PlainVec;
use crate::error::{HeError, Result};
use crate::keys::SecretKey;
use crate::poly::{sample_error, RnsPoly};

/// A batched ciphertext. Components are kept in evaluation form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CipherVec {
    pub(crate) polys: Vec<RnsPoly>,
    pub(crate) level: usize,
}

impl CipherVec {
    /// Index into the prime chain; the ciphertext lives modulo the first
    /// `level + 1` primes.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Number of polynomial components (2, or 3 before relinearization).
    pub fn size(&self) -> usize {
        self.polys.len()
    }

    pub(crate) fn moduli(&self) -> usize {
        self.level + 1
    }
}

/// `value mod q` for an arbitrary-size integer.
pub(crate) fn big_mod(value: &BigUint, q: &Modulus) -> u64 {
    let mut r = 0u64;
    for d in value.iter_u64_digits().rev() {
        r = q.reduce_u128(((r as u128) << 64) | d as u128);
    }
    r
}

pub(crate) fn signed_big_mod(mag: &BigUint, neg: bool, q: &Modulus) -> u64 {
    let r = big_mod(mag, q);
    if neg {
        q.neg(r)
    } else {
        r
    }
}

/// `round(q_l m / t)` placed in every prime of `level`, in evaluation form.
pub(crate) fn scaled_plain(ctx: &Context, plain: &PlainVec, level: usize) -> RnsPoly {
    let n = ctx.n();
    let t = ctx.params().t();
    let m = plain.to_poly(ctx);
    let data = &ctx.levels[level];
    // floor(q/t) m + round((q mod t) m / t)
    let fix: Vec<u64> = m
        .iter()
        .map(|&c| ((data.delta_rem as u128 * c as u128 + (t / 2) as u128) / t as u128) as u64)
        .collect();
    let mut p = RnsPoly::zero(ctx, level + 1, false);
    for i in 0..=level {
        let q = ctx.q[i];
        let (d, ds) = (data.delta[i], q.shoup(data.delta[i]));
        for ((dst, &c), &f) in p.residues_mut(n, i).iter_mut().zip(&m).zip(&fix) {
            *dst = q.add(q.mul_shoup(q.reduce(c), d, ds), q.reduce(f));
        }
    }
    p.to_ntt(ctx);
    p
}

/// Symmetric encryption at the top level: `(-a s + e + delta m, a)`.
pub fn encrypt<R: RngCore + CryptoRng>(sk: &SecretKey, plain: &PlainVec, rng: &mut R) -> Result<CipherVec> {
    let ctx = &sk.ctx;
    let n = ctx.n();
    if plain.len() != n {
        return Err(HeError::Capacity {
            len: plain.len(),
            slots: n,
        });
    }
    let level = ctx.top_level();
    let a = RnsPoly::uniform(ctx, level + 1, true, rng);
    let mut e = RnsPoly::from_signed(ctx, &sample_error(n, rng), level + 1);
    e.to_ntt(ctx);
    let mut c0 = a.clone();
    c0.mul_assign(ctx, &sk.ntt);
    c0.neg_assign(ctx);
    c0.add_assign(ctx, &e);
    c0.add_assign(ctx, &scaled_plain(ctx, plain, level));
    Ok(CipherVec {
        polys: vec![c0, a],
        level,
    })
}

/// Coefficients of `c0 + c1 s + c2 s^2 + ...` in `[0, q_level)`.
fn phase(sk: &SecretKey, ct: &CipherVec) -> Result<Vec<BigUint>> {
    let ctx = &sk.ctx;
    if ct.polys.len() < 2 {
        return Err(HeError::CiphertextSize(ct.polys.len()));
    }
    if ct.level > ctx.top_level() || ct.polys.iter().any(|p| p.moduli != ct.moduli()) {
        return Err(HeError::Decode("ciphertext level inconsistent with parameters".into()));
    }
    let n = ctx.n();
    let s = sk.at(ct.moduli());
    let mut acc = ct.polys[ct.polys.len() - 1].clone();
    for p in ct.polys[..ct.polys.len() - 1].iter().rev() {
        acc.mul_assign(ctx, &s);
        acc.add_assign(ctx, p);
    }
    acc.to_coeff(ctx);
    let crt = &ctx.levels[ct.level].crt;
    Ok((0..n)
        .map(|j| crt.reconstruct((0..ct.moduli()).map(|i| acc.data[i * n + j])))
        .collect())
}

/// Decrypts without checking the noise budget.
pub fn decrypt(sk: &SecretKey, ct: &CipherVec) -> Result<PlainVec> {
    let ctx = &sk.ctx;
    let t = ctx.params().t();
    let level = &ctx.levels[ct.level.min(ctx.top_level())];
    let q = &level.crt.product;
    let half = q >> 1u32;
    let coeffs = phase(sk, ct)?
        .into_iter()
        .map(|x| {
            let r: BigUint = (x * t + &half) / q;
            (r % t).to_u64().expect("reduced mod t")
        })
        .collect();
    Ok(PlainVec::from_poly(ctx, coeffs))
}

/// Decrypts, failing if the noise has consumed the whole budget.
pub fn decrypt_checked(sk: &SecretKey, ct: &CipherVec) -> Result<PlainVec> {
    if noise_budget(sk, ct)? == 0 {
        return Err(HeError::NoiseExhausted);
    }
    decrypt(sk, ct)
}

/// Remaining noise budget in bits; zero means decryption is unreliable.
pub fn noise_budget(sk: &SecretKey, ct: &CipherVec) -> Result<u32> {
    let ctx = &sk.ctx;
    let t = ctx.params().t();
    let phase = phase(sk, ct)?;
    let q = &ctx.levels[ct.level].crt.product;
    let half = q >> 1u32;
    let mut worst = BigUint::zero();
    for x in phase {
        let mut y = (x * t) % q;
        if y > half {
            y = q - y;
        }
        if y > worst {
            worst = y;
        }
    }
    let q_bits = q.bits() as i64;
    let used = worst.bits() as i64;
    Ok((q_bits - used - 1).max(0) as u32)
}
