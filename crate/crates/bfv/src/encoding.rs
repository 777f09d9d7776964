//! SIMD batching: `n` residues mod `t` viewed as a `2 x n/2` matrix.

use std::sync::Arc;

use crate::context::Context;
use crate::error::{HeError, Result};
use crate::poly::RnsPoly;

/// A batched plaintext. Row 0 is slots `0..n/2`, row 1 is slots `n/2..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainVec {
    slots: Vec<u64>,
}

impl PlainVec {
    /// Encodes `values` (reduced mod `t`), right-padding with zeros.
    pub fn new(ctx: &Context, values: &[u64]) -> Result<Self> {
        let n = ctx.n();
        if values.len() > n {
            return Err(HeError::Capacity {
                len: values.len(),
                slots: n,
            });
        }
        let t = ctx.plain_modulus();
        let mut slots: Vec<u64> = values.iter().map(|&v| t.reduce(v)).collect();
        slots.resize(n, 0);
        Ok(Self { slots })
    }

    /// Encodes signed values through their residues mod `t`.
    pub fn from_signed(ctx: &Context, values: &[i64]) -> Result<Self> {
        let t = ctx.plain_modulus();
        let reduced: Vec<u64> = values.iter().map(|&v| t.reduce_i64(v)).collect();
        Self::new(ctx, &reduced)
    }

    pub fn zero(ctx: &Context) -> Self {
        Self {
            slots: vec![0; ctx.n()],
        }
    }

    /// Every slot set to `value`.
    pub fn constant(ctx: &Context, value: u64) -> Self {
        Self {
            slots: vec![ctx.plain_modulus().reduce(value); ctx.n()],
        }
    }

    /// The two rows given separately; each must have at most `n/2` entries.
    pub fn from_rows(ctx: &Context, row0: &[u64], row1: &[u64]) -> Result<Self> {
        let row = ctx.params().row_size();
        if row0.len() > row || row1.len() > row {
            return Err(HeError::Capacity {
                len: row0.len().max(row1.len()),
                slots: row,
            });
        }
        let t = ctx.plain_modulus();
        let mut slots = vec![0u64; ctx.n()];
        for (d, &v) in slots.iter_mut().zip(row0) {
            *d = t.reduce(v);
        }
        for (d, &v) in slots[row..].iter_mut().zip(row1) {
            *d = t.reduce(v);
        }
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[u64] {
        &self.slots
    }

    pub fn into_slots(self) -> Vec<u64> {
        self.slots
    }

    pub fn row(&self, r: usize) -> &[u64] {
        let h = self.slots.len() / 2;
        &self.slots[r * h..(r + 1) * h]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slot values as centered representatives in `[-t/2, t/2)`.
    pub fn to_centered(&self, ctx: &Context) -> Vec<i64> {
        let t = ctx.plain_modulus();
        self.slots.iter().map(|&v| t.center(v)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slots.iter().all(|&v| v == 0)
    }

    /// Polynomial coefficients mod `t` whose evaluations are these slots.
    pub(crate) fn to_poly(&self, ctx: &Context) -> Vec<u64> {
        let mut evals = vec![0u64; ctx.n()];
        for (s, &v) in self.slots.iter().enumerate() {
            evals[ctx.slot_index[s]] = v;
        }
        ctx.t_ntt.inverse(&mut evals);
        evals
    }

    pub(crate) fn from_poly(ctx: &Context, mut coeffs: Vec<u64>) -> Self {
        ctx.t_ntt.forward(&mut coeffs);
        let slots = ctx.slot_index.iter().map(|&i| coeffs[i]).collect();
        Self { slots }
    }
}

/// A plaintext lifted into the ciphertext ring, ready for multiplication.
#[derive(Clone, Debug)]
pub struct MulPlain {
    pub(crate) poly: RnsPoly,
    pub(crate) level: usize,
    pub(crate) zero: bool,
}

impl MulPlain {
    /// Lifts using centered coefficients, which keeps noise growth minimal.
    pub fn new(ctx: &Arc<Context>, plain: &PlainVec, level: usize) -> Self {
        let t = ctx.plain_modulus();
        let zero = plain.is_zero();
        let coeffs: Vec<i64> = plain.to_poly(ctx).into_iter().map(|c| t.center(c)).collect();
        let mut poly = RnsPoly::from_signed(ctx, &coeffs, level + 1);
        poly.to_ntt(ctx);
        Self { poly, level, zero }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn byte_size(&self) -> usize {
        self.poly.data.len() * 8
    }
}
