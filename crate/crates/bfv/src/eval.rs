//! Homomorphic evaluation with operation counters.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::cipher::{scaled_plain, signed_big_mod, CipherVec};
use crate::context::Context;
use crate::encoding::{MulPlain, PlainVec};
use crate::error::{HeError, Result};
use crate::keys::{digits_per_prime, EvalKeys, KeySwitchKey, Rotation};
use crate::poly::RnsPoly;

#[derive(Debug, Default)]
struct Counters {
    row_rotations: AtomicU64,
    column_rotations: AtomicU64,
    pt_ct_mults: AtomicU64,
    ct_ct_mults: AtomicU64,
    relinearizations: AtomicU64,
    mod_switches: AtomicU64,
}

/// Operation counts observed by an [`Evaluator`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub row_rotations: u64,
    pub column_rotations: u64,
    pub pt_ct_mults: u64,
    pub ct_ct_mults: u64,
    pub relinearizations: u64,
    pub mod_switches: u64,
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;
    fn sub(self, o: OpCounts) -> OpCounts {
        OpCounts {
            row_rotations: self.row_rotations - o.row_rotations,
            column_rotations: self.column_rotations - o.column_rotations,
            pt_ct_mults: self.pt_ct_mults - o.pt_ct_mults,
            ct_ct_mults: self.ct_ct_mults - o.ct_ct_mults,
            relinearizations: self.relinearizations - o.relinearizations,
            mod_switches: self.mod_switches - o.mod_switches,
        }
    }
}

/// Evaluates operations on ciphertexts using public evaluation keys.
///
/// Shareable across threads; counters are updated atomically.
#[derive(Debug)]
pub struct Evaluator {
    ctx: Arc<Context>,
    keys: Option<Arc<EvalKeys>>,
    counters: Counters,
}

const LAZY_TERMS: usize = 15;

fn reduce_lazy(ctx: &Context, acc: &mut [u128], moduli: usize) {
    let n = ctx.n();
    for i in 0..moduli {
        let q = ctx.q[i];
        for a in &mut acc[i * n..(i + 1) * n] {
            *a = q.reduce_u128(*a) as u128;
        }
    }
}

fn finish_lazy(ctx: &Context, acc: &[u128], moduli: usize) -> RnsPoly {
    let n = ctx.n();
    let mut out = RnsPoly::zero(ctx, moduli, true);
    for i in 0..moduli {
        let q = ctx.q[i];
        for (d, a) in out.residues_mut(n, i).iter_mut().zip(&acc[i * n..(i + 1) * n]) {
            *d = q.reduce_u128(*a);
        }
    }
    out
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl Evaluator {
    pub fn new(ctx: Arc<Context>, keys: Arc<EvalKeys>) -> Result<Self> {
        if keys.params() != ctx.params() {
            return Err(HeError::ParamsMismatch(format!(
                "keys for {} used with {}",
                keys.params().name(),
                ctx.params().name()
            )));
        }
        Ok(Self {
            ctx,
            keys: Some(keys),
            counters: Counters::default(),
        })
    }

    /// An evaluator that can only perform key-free operations.
    pub fn without_keys(ctx: Arc<Context>) -> Self {
        Self {
            ctx,
            keys: None,
            counters: Counters::default(),
        }
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn keys(&self) -> Option<&Arc<EvalKeys>> {
        self.keys.as_ref()
    }

    pub fn counts(&self) -> OpCounts {
        let c = &self.counters;
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        OpCounts {
            row_rotations: g(&c.row_rotations),
            column_rotations: g(&c.column_rotations),
            pt_ct_mults: g(&c.pt_ct_mults),
            ct_ct_mults: g(&c.ct_ct_mults),
            relinearizations: g(&c.relinearizations),
            mod_switches: g(&c.mod_switches),
        }
    }

    fn eval_keys(&self) -> Result<&EvalKeys> {
        self.keys
            .as_deref()
            .ok_or_else(|| HeError::MissingGaloisKey("no evaluation keys loaded".into()))
    }

    fn check_pair(&self, a: &CipherVec, b: &CipherVec) -> Result<()> {
        if a.level != b.level {
            return Err(HeError::LevelMismatch(a.level, b.level));
        }
        Ok(())
    }

    /// A fresh-looking encryption of zero with no noise, at `level`.
    pub fn zero(&self, level: usize) -> CipherVec {
        let z = RnsPoly::zero(&self.ctx, level + 1, true);
        CipherVec {
            polys: vec![z.clone(), z],
            level,
        }
    }

    pub fn add(&self, a: &CipherVec, b: &CipherVec) -> Result<CipherVec> {
        let mut out = a.clone();
        self.add_assign(&mut out, b)?;
        Ok(out)
    }

    pub fn add_assign(&self, acc: &mut CipherVec, b: &CipherVec) -> Result<()> {
        self.check_pair(acc, b)?;
        while acc.polys.len() < b.polys.len() {
            acc.polys.push(RnsPoly::zero(&self.ctx, acc.moduli(), true));
        }
        for (x, y) in acc.polys.iter_mut().zip(&b.polys) {
            x.add_assign(&self.ctx, y);
        }
        Ok(())
    }

    pub fn sub(&self, a: &CipherVec, b: &CipherVec) -> Result<CipherVec> {
        self.check_pair(a, b)?;
        let mut out = a.clone();
        while out.polys.len() < b.polys.len() {
            out.polys.push(RnsPoly::zero(&self.ctx, out.moduli(), true));
        }
        for (x, y) in out.polys.iter_mut().zip(&b.polys) {
            x.sub_assign(&self.ctx, y);
        }
        Ok(out)
    }

    pub fn negate(&self, a: &CipherVec) -> CipherVec {
        let mut out = a.clone();
        for p in &mut out.polys {
            p.neg_assign(&self.ctx);
        }
        out
    }

    pub fn add_plain(&self, a: &CipherVec, p: &PlainVec) -> Result<CipherVec> {
        let mut out = a.clone();
        self.add_plain_assign(&mut out, p)?;
        Ok(out)
    }

    pub fn add_plain_assign(&self, acc: &mut CipherVec, p: &PlainVec) -> Result<()> {
        self.check_plain(p)?;
        acc.polys[0].add_assign(&self.ctx, &scaled_plain(&self.ctx, p, acc.level));
        Ok(())
    }

    pub fn sub_plain(&self, a: &CipherVec, p: &PlainVec) -> Result<CipherVec> {
        self.check_plain(p)?;
        let mut out = a.clone();
        out.polys[0].sub_assign(&self.ctx, &scaled_plain(&self.ctx, p, a.level));
        Ok(out)
    }

    fn check_plain(&self, p: &PlainVec) -> Result<()> {
        if p.len() != self.ctx.n() {
            return Err(HeError::Capacity {
                len: p.len(),
                slots: self.ctx.n(),
            });
        }
        Ok(())
    }

    /// Encodes `p` for repeated multiplication at `level`.
    pub fn prepare_plain(&self, p: &PlainVec, level: usize) -> MulPlain {
        MulPlain::new(&self.ctx, p, level)
    }

    pub fn mul_plain(&self, a: &CipherVec, p: &MulPlain) -> Result<CipherVec> {
        let mut out = a.clone();
        self.mul_plain_assign(&mut out, p)?;
        Ok(out)
    }

    pub fn mul_plain_assign(&self, a: &mut CipherVec, p: &MulPlain) -> Result<()> {
        if p.level < a.level {
            return Err(HeError::LevelMismatch(a.level, p.level));
        }
        bump(&self.counters.pt_ct_mults);
        for x in &mut a.polys {
            x.mul_assign(&self.ctx, &p.poly);
        }
        Ok(())
    }

    /// `acc += a * p` without materializing the product.
    pub fn mul_plain_add_assign(&self, acc: &mut CipherVec, a: &CipherVec, p: &MulPlain) -> Result<()> {
        self.check_pair(acc, a)?;
        if p.level < a.level {
            return Err(HeError::LevelMismatch(a.level, p.level));
        }
        bump(&self.counters.pt_ct_mults);
        while acc.polys.len() < a.polys.len() {
            acc.polys.push(RnsPoly::zero(&self.ctx, acc.moduli(), true));
        }
        for (d, x) in acc.polys.iter_mut().zip(&a.polys) {
            d.mul_add_assign(&self.ctx, x, &p.poly);
        }
        Ok(())
    }

    /// Tensor product of two size-2 ciphertexts; yields a size-3 ciphertext.
    pub fn multiply(&self, a: &CipherVec, b: &CipherVec) -> Result<CipherVec> {
        self.check_pair(a, b)?;
        for c in [a, b] {
            if c.polys.len() != 2 {
                return Err(HeError::CiphertextSize(c.polys.len()));
            }
        }
        bump(&self.counters.ct_ct_mults);
        let ctx = &*self.ctx;
        let n = ctx.n();
        let level = a.level;
        let lq = level + 1;
        let basis = ctx.tensor_basis(level);
        let la = basis.aux.len();
        let q_crt = &ctx.levels[level].crt;

        // Lift every component to the joint basis through its centered value.
        let lift = |p: &RnsPoly| -> Vec<Vec<u64>> {
            let mut c = p.clone();
            c.to_coeff(ctx);
            let mut out: Vec<Vec<u64>> = (0..lq).map(|i| c.residues(n, i).to_vec()).collect();
            let mut aux = vec![vec![0u64; n]; la];
            for j in 0..n {
                let (mag, neg) = q_crt.reconstruct_centered((0..lq).map(|i| c.data[i * n + j]));
                for (k, m) in basis.aux.iter().enumerate() {
                    aux[k][j] = signed_big_mod(&mag, neg, m);
                }
            }
            out.extend(aux);
            for (i, r) in out.iter_mut().enumerate() {
                if i < lq {
                    ctx.q_ntt[i].forward(r);
                } else {
                    basis.aux_ntt[i - lq].forward(r);
                }
            }
            out
        };
        let (a0, a1) = (lift(&a.polys[0]), lift(&a.polys[1]));
        let (b0, b1) = (lift(&b.polys[0]), lift(&b.polys[1]));

        let moduli: Vec<_> = ctx.q[..lq].iter().chain(&basis.aux).copied().collect();
        let mut e = [vec![], vec![], vec![]];
        for (i, m) in moduli.iter().enumerate() {
            let mut e0 = vec![0u64; n];
            let mut e1 = vec![0u64; n];
            let mut e2 = vec![0u64; n];
            for j in 0..n {
                e0[j] = m.mul(a0[i][j], b0[i][j]);
                e1[j] = m.add(m.mul(a0[i][j], b1[i][j]), m.mul(a1[i][j], b0[i][j]));
                e2[j] = m.mul(a1[i][j], b1[i][j]);
            }
            for (dst, mut v) in e.iter_mut().zip([e0, e1, e2]) {
                if i < lq {
                    ctx.q_ntt[i].inverse(&mut v);
                } else {
                    basis.aux_ntt[i - lq].inverse(&mut v);
                }
                dst.push(v);
            }
        }

        // Scale by t / q and round, exactly.
        let t = ctx.params().t();
        let q = &q_crt.product;
        let half = q >> 1u32;
        let polys = e
            .iter()
            .map(|comp| {
                let mut p = RnsPoly::zero(ctx, lq, false);
                for j in 0..n {
                    let (mag, neg) = basis.joint.reconstruct_centered(comp.iter().map(|r| r[j]));
                    let scaled = (mag * t + &half) / q;
                    for i in 0..lq {
                        p.data[i * n + j] = signed_big_mod(&scaled, neg, &ctx.q[i]);
                    }
                }
                p.to_ntt(ctx);
                p
            })
            .collect();
        Ok(CipherVec { polys, level })
    }

    pub fn relinearize(&self, a: &CipherVec) -> Result<CipherVec> {
        match a.polys.len() {
            2 => return Ok(a.clone()),
            3 => {}
            s => return Err(HeError::CiphertextSize(s)),
        }
        let key = self.eval_keys().map_err(|_| HeError::MissingRelinKey)?.relin_key()?;
        bump(&self.counters.relinearizations);
        let (k0, k1) = self.key_switch(&a.polys[2], a.level, key);
        let mut c0 = a.polys[0].clone();
        let mut c1 = a.polys[1].clone();
        c0.add_assign(&self.ctx, &k0);
        c1.add_assign(&self.ctx, &k1);
        Ok(CipherVec {
            polys: vec![c0, c1],
            level: a.level,
        })
    }

    /// Multiplies and relinearizes.
    pub fn mul_ct(&self, a: &CipherVec, b: &CipherVec) -> Result<CipherVec> {
        // Fail before the expensive tensoring if relinearization is impossible.
        self.eval_keys().map_err(|_| HeError::MissingRelinKey)?.relin_key()?;
        let prod = self.multiply(a, b)?;
        self.relinearize(&prod)
    }

    /// Rotates both rows left by `steps`. Requires the Galois key for exactly
    /// `steps mod n/2`; zero is the identity.
    pub fn rotate_rows(&self, a: &CipherVec, steps: usize) -> Result<CipherVec> {
        let s = steps % self.ctx.params().row_size();
        if s == 0 {
            return Ok(a.clone());
        }
        let key = self.eval_keys()?.galois_key(Rotation::Rows(s))?;
        bump(&self.counters.row_rotations);
        self.apply_galois(a, self.ctx.row_galois_element(s), key)
    }

    /// Swaps the two rows.
    pub fn rotate_columns(&self, a: &CipherVec) -> Result<CipherVec> {
        let key = self.eval_keys()?.galois_key(Rotation::Columns)?;
        bump(&self.counters.column_rotations);
        self.apply_galois(a, self.ctx.column_galois_element(), key)
    }

    fn apply_galois(&self, a: &CipherVec, g: u64, key: &KeySwitchKey) -> Result<CipherVec> {
        if a.polys.len() != 2 {
            return Err(HeError::CiphertextSize(a.polys.len()));
        }
        let perm = self.ctx.galois_permutation(g);
        let mut c0 = a.polys[0].permuted(&self.ctx, &perm);
        let c1 = a.polys[1].permuted(&self.ctx, &perm);
        let (k0, k1) = self.key_switch(&c1, a.level, key);
        c0.add_assign(&self.ctx, &k0);
        Ok(CipherVec {
            polys: vec![c0, k1],
            level: a.level,
        })
    }

    /// Returns `(b, a)` with `b + a s ~ c s'` for the key's source secret `s'`.
    fn key_switch(&self, c: &RnsPoly, level: usize, key: &KeySwitchKey) -> (RnsPoly, RnsPoly) {
        let ctx = &*self.ctx;
        let n = ctx.n();
        let lq = level + 1;
        let mut coeff = c.clone();
        coeff.to_coeff(ctx);
        let w = key.digit_bits;
        let mask = if w >= 64 { u64::MAX } else { (1u64 << w) - 1 };
        let per_prime = digits_per_prime(ctx, w);
        // Products stay below 2^124: fifteen of them plus one reduced residue fit in a u128.
        let mut acc0 = vec![0u128; lq * n];
        let mut acc1 = vec![0u128; lq * n];
        let mut pending = 0;
        let mut digit = RnsPoly::zero(ctx, lq, false);
        let mut idx = 0;
        for (j, &count) in per_prime.iter().enumerate() {
            if j >= lq {
                break;
            }
            let src = coeff.residues(n, j).to_vec();
            for l in 0..count {
                let shift = w * l as u32;
                digit.ntt = false;
                for i in 0..lq {
                    let q = ctx.q[i];
                    for (d, &x) in digit.residues_mut(n, i).iter_mut().zip(&src) {
                        *d = q.reduce((x >> shift) & mask);
                    }
                }
                digit.to_ntt(ctx);
                if pending == LAZY_TERMS {
                    reduce_lazy(ctx, &mut acc0, lq);
                    reduce_lazy(ctx, &mut acc1, lq);
                    pending = 1;
                }
                let (kb, ka) = (&key.b[idx], &key.a[idx]);
                for (k, (d, (x, y))) in digit
                    .data
                    .iter()
                    .zip(kb.data[..lq * n].iter().zip(&ka.data[..lq * n]))
                    .enumerate()
                {
                    acc0[k] += *d as u128 * *x as u128;
                    acc1[k] += *d as u128 * *y as u128;
                }
                pending += 1;
                idx += 1;
            }
        }
        (finish_lazy(ctx, &acc0, lq), finish_lazy(ctx, &acc1, lq))
    }

    /// `sum_i cts[i] * pts[i]` with a single reduction per slot.
    pub fn dot_plain(&self, cts: &[&CipherVec], pts: &[&MulPlain]) -> Result<CipherVec> {
        if cts.len() != pts.len() || cts.is_empty() {
            return Err(HeError::InvalidParams("dot product operands differ in length".into()));
        }
        let level = cts[0].level;
        let size = cts[0].polys.len();
        for (c, p) in cts.iter().zip(pts) {
            if c.level != level {
                return Err(HeError::LevelMismatch(level, c.level));
            }
            if c.polys.len() != size {
                return Err(HeError::CiphertextSize(c.polys.len()));
            }
            if p.level < level {
                return Err(HeError::LevelMismatch(level, p.level));
            }
        }
        let ctx = &*self.ctx;
        let n = ctx.n();
        let lq = level + 1;
        self.counters
            .pt_ct_mults
            .fetch_add(cts.len() as u64, Ordering::Relaxed);
        let polys = (0..size)
            .map(|c| {
                let mut acc = vec![0u128; lq * n];
                for (chunk_c, chunk_p) in cts.chunks(LAZY_TERMS).zip(pts.chunks(LAZY_TERMS)) {
                    for (ct, pt) in chunk_c.iter().zip(chunk_p) {
                        for (a, (x, y)) in acc.iter_mut().zip(ct.polys[c].data.iter().zip(&pt.poly.data[..lq * n])) {
                            *a += *x as u128 * *y as u128;
                        }
                    }
                    reduce_lazy(ctx, &mut acc, lq);
                }
                finish_lazy(ctx, &acc, lq)
            })
            .collect();
        Ok(CipherVec { polys, level })
    }

    /// Drops the last prime of the current level, dividing by it with rounding.
    pub fn mod_switch_to_next(&self, a: &CipherVec) -> Result<CipherVec> {
        if a.level == 0 {
            return Err(HeError::InvalidParams("already at the lowest level".into()));
        }
        bump(&self.counters.mod_switches);
        let ctx = &*self.ctx;
        let n = ctx.n();
        let last = a.level;
        let ql = ctx.q[last];
        let polys = a
            .polys
            .iter()
            .map(|p| {
                let mut c = p.clone();
                c.to_coeff(ctx);
                let top: Vec<i64> = c.residues(n, last).iter().map(|&r| ql.center(r)).collect();
                let mut out = RnsPoly::zero(ctx, last, false);
                for i in 0..last {
                    let q = ctx.q[i];
                    let inv = q.inv(q.reduce(ql.value())).expect("distinct primes");
                    let inv_s = q.shoup(inv);
                    for ((d, &x), &r) in out.residues_mut(n, i).iter_mut().zip(c.residues(n, i)).zip(&top) {
                        *d = q.mul_shoup(q.sub(x, q.reduce_i64(r)), inv, inv_s);
                    }
                }
                out.to_ntt(ctx);
                out
            })
            .collect();
        Ok(CipherVec {
            polys,
            level: last - 1,
        })
    }

    /// Switches down to the parameter set's final level.
    pub fn mod_switch_to_last(&self, a: &CipherVec) -> Result<CipherVec> {
        let target = self.ctx.last_level();
        let mut c = a.clone();
        while c.level > target {
            c = self.mod_switch_to_next(&c)?;
        }
        Ok(c)
    }
}
