//! Secret key, key-switching keys and the evaluation key bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::context::Context;
use crate::error::{HeError, Result};
use crate::params::HeParams;
use crate::poly::{sample_error, sample_ternary, RnsPoly};

/// Ternary secret key.
#[derive(Clone)]
pub struct SecretKey {
    pub(crate) ctx: Arc<Context>,
    pub(crate) coeffs: Vec<i64>,
    /// `s` in evaluation form over every prime.
    pub(crate) ntt: RnsPoly,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey").field("params", &self.ctx.params().name()).finish_non_exhaustive()
    }
}

impl SecretKey {
    pub fn generate<R: RngCore + CryptoRng>(ctx: &Arc<Context>, rng: &mut R) -> Self {
        let coeffs = sample_ternary(ctx.n(), rng);
        Self::from_coeffs(ctx, coeffs)
    }

    pub(crate) fn from_coeffs(ctx: &Arc<Context>, coeffs: Vec<i64>) -> Self {
        let mut ntt = RnsPoly::from_signed(ctx, &coeffs, ctx.top_level() + 1);
        ntt.to_ntt(ctx);
        Self {
            ctx: ctx.clone(),
            coeffs,
            ntt,
        }
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    /// `s` restricted to the first `moduli` primes.
    pub(crate) fn at(&self, moduli: usize) -> RnsPoly {
        let mut s = self.ntt.clone();
        s.truncate(&self.ctx, moduli);
        s
    }
}

/// Digit-decomposed key switching key from some `s'` to `s`.
///
/// Component `(j, l)` encrypts `s' * 2^(w l)` under `s` in prime `j` only;
/// the `a` halves are expanded from a 32-byte seed.
#[derive(Clone, Debug)]
pub struct KeySwitchKey {
    pub(crate) seed: [u8; 32],
    pub(crate) digit_bits: u32,
    pub(crate) b: Vec<RnsPoly>,
    pub(crate) a: Vec<RnsPoly>,
}

impl PartialEq for KeySwitchKey {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.digit_bits == other.digit_bits && self.b == other.b
    }
}

pub(crate) fn digits_per_prime(ctx: &Context, digit_bits: u32) -> Vec<usize> {
    ctx.q
        .iter()
        .map(|q| q.bits().div_ceil(digit_bits) as usize)
        .collect()
}

impl KeySwitchKey {
    pub(crate) fn expand_a(ctx: &Context, seed: [u8; 32], count: usize) -> Vec<RnsPoly> {
        let moduli = ctx.top_level() + 1;
        (0..count)
            .map(|idx| {
                let mut rng = ChaCha20Rng::from_seed(seed);
                rng.set_stream(idx as u64);
                RnsPoly::uniform(ctx, moduli, true, &mut rng)
            })
            .collect()
    }

    pub(crate) fn generate<R: RngCore + CryptoRng>(
        sk: &SecretKey,
        target: &RnsPoly,
        rng: &mut R,
    ) -> Self {
        let ctx = &sk.ctx;
        let digit_bits = ctx.params().ks_digit_bits();
        let n = ctx.n();
        let moduli = ctx.top_level() + 1;
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let per_prime = digits_per_prime(ctx, digit_bits);
        let total: usize = per_prime.iter().sum();
        let a = Self::expand_a(ctx, seed, total);
        let mut b = Vec::with_capacity(total);
        let mut idx = 0;
        for (j, &digits) in per_prime.iter().enumerate() {
            let q = ctx.q[j];
            for l in 0..digits {
                let e = sample_error(n, rng);
                let mut bi = RnsPoly::from_signed(ctx, &e, moduli);
                bi.to_ntt(ctx);
                let mut as_ = a[idx].clone();
                as_.mul_assign(ctx, &sk.ntt);
                bi.sub_assign(ctx, &as_);
                let factor = q.pow(2, digit_bits as u64 * l as u64);
                let fs = q.shoup(factor);
                for (dst, &s) in bi.residues_mut(n, j).iter_mut().zip(target.residues(n, j)) {
                    *dst = q.add(*dst, q.mul_shoup(s, factor, fs));
                }
                b.push(bi);
                idx += 1;
            }
        }
        Self {
            seed,
            digit_bits,
            b,
            a,
        }
    }

    pub fn byte_size(&self) -> usize {
        32 + 4 + self.b.iter().map(|p| p.data.len() * 8).sum::<usize>()
    }
}

/// What one Galois key rotates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rotation {
    /// Both rows left by this many slots.
    Rows(usize),
    /// Swap the two rows.
    Columns,
}

impl std::fmt::Display for Rotation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rotation::Rows(s) => write!(f, "rows by {s}"),
            Rotation::Columns => write!(f, "columns"),
        }
    }
}

/// Everything the evaluating party needs: Galois keys for a declared index
/// set and, optionally, a relinearization key.
#[derive(Clone, Debug)]
pub struct EvalKeys {
    pub(crate) params: HeParams,
    // Shared so that cloning a key set, which requests do, stays cheap.
    pub(crate) galois: BTreeMap<Rotation, Arc<KeySwitchKey>>,
    pub(crate) relin: Option<Arc<KeySwitchKey>>,
}

impl EvalKeys {
    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn rotations(&self) -> impl Iterator<Item = Rotation> + '_ {
        self.galois.keys().copied()
    }

    pub fn row_indices(&self) -> BTreeSet<usize> {
        self.galois
            .keys()
            .filter_map(|r| match r {
                Rotation::Rows(s) => Some(*s),
                Rotation::Columns => None,
            })
            .collect()
    }

    pub fn has_relin(&self) -> bool {
        self.relin.is_some()
    }

    pub(crate) fn galois_key(&self, rot: Rotation) -> Result<&KeySwitchKey> {
        self.galois
            .get(&rot)
            .map(|k| &**k)
            .ok_or_else(|| HeError::MissingGaloisKey(rot.to_string()))
    }

    pub(crate) fn relin_key(&self) -> Result<&KeySwitchKey> {
        self.relin.as_deref().ok_or(HeError::MissingRelinKey)
    }

    /// Serialized size of the Galois keys alone.
    pub fn galois_byte_size(&self) -> usize {
        self.galois.values().map(|k| k.byte_size()).sum()
    }

    pub fn relin_byte_size(&self) -> usize {
        self.relin.as_ref().map_or(0, |k| k.byte_size())
    }
}

/// Secret key together with the evaluation keys generated for it.
#[derive(Clone, Debug)]
pub struct KeyMaterial {
    pub secret: SecretKey,
    pub eval: EvalKeys,
}

/// Generates a secret key, one Galois key per requested row rotation plus the
/// column key, and a relinearization key when `with_relin` is set.
pub fn keygen<R: RngCore + CryptoRng>(
    ctx: &Arc<Context>,
    rotation_indices: &BTreeSet<usize>,
    with_relin: bool,
    rng: &mut R,
) -> Result<KeyMaterial> {
    let secret = SecretKey::generate(ctx, rng);
    let eval = eval_keys_for(&secret, rotation_indices, with_relin, rng)?;
    Ok(KeyMaterial { secret, eval })
}

/// Evaluation keys for an existing secret key.
pub fn eval_keys_for<R: RngCore + CryptoRng>(
    secret: &SecretKey,
    rotation_indices: &BTreeSet<usize>,
    with_relin: bool,
    rng: &mut R,
) -> Result<EvalKeys> {
    let ctx = &secret.ctx;
    let row = ctx.params().row_size();
    let mut galois = BTreeMap::new();
    for &idx in rotation_indices {
        if idx == 0 || idx >= row {
            return Err(HeError::InvalidParams(format!(
                "rotation index {idx} outside 1..{row}"
            )));
        }
        let g = ctx.row_galois_element(idx);
        let target = secret.ntt.permuted(ctx, &ctx.galois_permutation(g));
        galois.insert(Rotation::Rows(idx), Arc::new(KeySwitchKey::generate(secret, &target, rng)));
    }
    let g = ctx.column_galois_element();
    let target = secret.ntt.permuted(ctx, &ctx.galois_permutation(g));
    galois.insert(Rotation::Columns, Arc::new(KeySwitchKey::generate(secret, &target, rng)));

    let relin = with_relin.then(|| {
        let mut s2 = secret.ntt.clone();
        s2.mul_assign(ctx, &secret.ntt);
        Arc::new(KeySwitchKey::generate(secret, &s2, rng))
    });
    Ok(EvalKeys {
        params: ctx.params().clone(),
        galois,
        relin,
    })
}
