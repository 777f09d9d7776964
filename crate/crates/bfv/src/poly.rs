//! Polynomials in RNS form over a prefix of the ciphertext prime chain.

use rand::{CryptoRng, Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::context::Context;

/// Standard deviation of the encryption error distribution.
pub const ERROR_STD: f64 = 3.2;
const ERROR_BOUND: f64 = 6.0 * ERROR_STD;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct RnsPoly {
    /// Residues, prime-major: `data[i * n + j]` is coefficient/slot `j` mod `q_i`.
    pub(crate) data: Vec<u64>,
    pub(crate) moduli: usize,
    pub(crate) ntt: bool,
}

impl RnsPoly {
    pub(crate) fn zero(ctx: &Context, moduli: usize, ntt: bool) -> Self {
        Self {
            data: vec![0; moduli * ctx.n()],
            moduli,
            ntt,
        }
    }

    pub(crate) fn residues(&self, n: usize, i: usize) -> &[u64] {
        &self.data[i * n..(i + 1) * n]
    }

    pub(crate) fn residues_mut(&mut self, n: usize, i: usize) -> &mut [u64] {
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Lifts small signed coefficients into every prime.
    pub(crate) fn from_signed(ctx: &Context, coeffs: &[i64], moduli: usize) -> Self {
        let n = ctx.n();
        let mut p = Self::zero(ctx, moduli, false);
        for i in 0..moduli {
            let q = &ctx.q[i];
            for (dst, &c) in p.residues_mut(n, i).iter_mut().zip(coeffs) {
                *dst = q.reduce_i64(c);
            }
        }
        p
    }

    pub(crate) fn uniform<R: RngCore + CryptoRng>(ctx: &Context, moduli: usize, ntt: bool, rng: &mut R) -> Self {
        let n = ctx.n();
        let mut p = Self::zero(ctx, moduli, ntt);
        for i in 0..moduli {
            let q = ctx.q[i].value();
            for dst in p.residues_mut(n, i) {
                *dst = rng.random_range(0..q);
            }
        }
        p
    }

    pub(crate) fn to_ntt(&mut self, ctx: &Context) {
        if !self.ntt {
            let n = ctx.n();
            for i in 0..self.moduli {
                ctx.q_ntt[i].forward(self.residues_mut(n, i));
            }
            self.ntt = true;
        }
    }

    pub(crate) fn to_coeff(&mut self, ctx: &Context) {
        if self.ntt {
            let n = ctx.n();
            for i in 0..self.moduli {
                ctx.q_ntt[i].inverse(self.residues_mut(n, i));
            }
            self.ntt = false;
        }
    }

    pub(crate) fn add_assign(&mut self, ctx: &Context, other: &Self) {
        debug_assert_eq!((self.moduli, self.ntt), (other.moduli, other.ntt));
        let n = ctx.n();
        for i in 0..self.moduli {
            let q = ctx.q[i];
            for (a, b) in self.residues_mut(n, i).iter_mut().zip(other.residues(n, i)) {
                *a = q.add(*a, *b);
            }
        }
    }

    pub(crate) fn sub_assign(&mut self, ctx: &Context, other: &Self) {
        debug_assert_eq!((self.moduli, self.ntt), (other.moduli, other.ntt));
        let n = ctx.n();
        for i in 0..self.moduli {
            let q = ctx.q[i];
            for (a, b) in self.residues_mut(n, i).iter_mut().zip(other.residues(n, i)) {
                *a = q.sub(*a, *b);
            }
        }
    }

    pub(crate) fn neg_assign(&mut self, ctx: &Context) {
        let n = ctx.n();
        for i in 0..self.moduli {
            let q = ctx.q[i];
            for a in self.residues_mut(n, i) {
                *a = q.neg(*a);
            }
        }
    }

    /// Pointwise product; both operands in evaluation form.
    pub(crate) fn mul_assign(&mut self, ctx: &Context, other: &Self) {
        debug_assert!(self.ntt && other.ntt);
        let n = ctx.n();
        for i in 0..self.moduli {
            let q = ctx.q[i];
            for (a, b) in self.residues_mut(n, i).iter_mut().zip(other.residues(n, i)) {
                *a = q.mul(*a, *b);
            }
        }
    }

    /// `self += a * b` pointwise.
    pub(crate) fn mul_add_assign(&mut self, ctx: &Context, a: &Self, b: &Self) {
        let n = ctx.n();
        for i in 0..self.moduli {
            let q = ctx.q[i];
            let dst = &mut self.data[i * n..(i + 1) * n];
            for ((d, x), y) in dst.iter_mut().zip(a.residues(n, i)).zip(b.residues(n, i)) {
                *d = q.add(*d, q.mul(*x, *y));
            }
        }
    }

    /// Applies `X -> X^g` in evaluation form.
    pub(crate) fn permuted(&self, ctx: &Context, perm: &[usize]) -> Self {
        debug_assert!(self.ntt);
        let n = ctx.n();
        let mut out = Self::zero(ctx, self.moduli, true);
        for i in 0..self.moduli {
            let src = self.residues(n, i);
            for (dst, &p) in out.residues_mut(n, i).iter_mut().zip(perm) {
                *dst = src[p];
            }
        }
        out
    }

    /// Keeps only the first `moduli` primes.
    pub(crate) fn truncate(&mut self, ctx: &Context, moduli: usize) {
        self.data.truncate(moduli * ctx.n());
        self.moduli = moduli;
    }
}

pub(crate) fn sample_ternary<R: RngCore + CryptoRng>(n: usize, rng: &mut R) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(-1i64..=1)).collect()
}

pub(crate) fn sample_error<R: RngCore + CryptoRng>(n: usize, rng: &mut R) -> Vec<i64> {
    let normal = Normal::new(0.0, ERROR_STD).expect("valid normal");
    (0..n)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= ERROR_BOUND {
                break x.round() as i64;
            }
        })
        .collect()
}
