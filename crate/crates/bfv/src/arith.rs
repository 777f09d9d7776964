//! Word-sized modular arithmetic for moduli below 2^62.

/// A prime (or odd) modulus with precomputed Barrett constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    // floor(2^128 / value) split into (low, high) words.
    ratio: (u64, u64),
    bits: u32,
}

impl Modulus {
    pub const MAX_BITS: u32 = 62;

    pub fn new(value: u64) -> Option<Self> {
        if value < 2 || 64 - value.leading_zeros() > Self::MAX_BITS {
            return None;
        }
        let ratio = u128::MAX / value as u128;
        // u128::MAX / q equals floor(2^128 / q) unless q divides 2^128, which a
        // modulus above 1 that is not a power of two never does.
        let ratio = if value.is_power_of_two() {
            ratio + 1
        } else {
            ratio
        };
        Some(Self {
            value,
            ratio: (ratio as u64, (ratio >> 64) as u64),
            bits: 64 - value.leading_zeros(),
        })
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Reduces a 128-bit value.
    #[inline]
    pub fn reduce_u128(&self, z: u128) -> u64 {
        let z0 = z as u64;
        let z1 = (z >> 64) as u64;
        let (r0, r1) = self.ratio;
        let carry = ((z0 as u128 * r0 as u128) >> 64) as u64;
        let t = z0 as u128 * r1 as u128 + carry as u128;
        let (t_lo, t_hi) = (t as u64, (t >> 64) as u64);
        let u = z1 as u128 * r0 as u128 + t_lo as u128;
        let carry2 = (u >> 64) as u64;
        let q_hat = z1
            .wrapping_mul(r1)
            .wrapping_add(t_hi)
            .wrapping_add(carry2);
        let r = z0.wrapping_sub(q_hat.wrapping_mul(self.value));
        let r = r.min(r.wrapping_sub(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    #[inline]
    pub fn reduce(&self, a: u64) -> u64 {
        if a < self.value {
            a
        } else {
            self.reduce_u128(a as u128)
        }
    }

    /// Reduces a signed value into `[0, q)`.
    #[inline]
    pub fn reduce_i64(&self, a: i64) -> u64 {
        if a >= 0 {
            self.reduce(a as u64)
        } else {
            let r = self.reduce(a.unsigned_abs());
            if r == 0 {
                0
            } else {
                self.value - r
            }
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        s.min(s.wrapping_sub(self.value))
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = a.wrapping_sub(b);
        d.min(d.wrapping_add(self.value))
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Shoup precomputation `floor(w * 2^64 / q)` for a fixed multiplicand `w < q`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod q` with `w_shoup = shoup(w)`.
    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let q_hat = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(q_hat.wrapping_mul(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    /// Like [`mul_shoup`](Self::mul_shoup) but leaves the result in `[0, 2q)`.
    #[inline]
    pub fn mul_shoup_lazy(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let q_hat = ((a as u128 * w_shoup as u128) >> 64) as u64;
        a.wrapping_mul(w).wrapping_sub(q_hat.wrapping_mul(self.value))
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.value;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse modulo a prime modulus.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = self.reduce(a);
        if a == 0 {
            return None;
        }
        let inv = self.pow(a, self.value - 2);
        (self.mul(inv, a) == 1).then_some(inv)
    }

    /// Centered representative in `[-q/2, q/2)`.
    #[inline]
    pub fn center(&self, a: u64) -> i64 {
        if a >= self.value.div_ceil(2) {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    (a as u128 * b as u128 % m as u128) as u64
}

fn pow_mod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod_u64(acc, b, m);
        }
        b = mul_mod_u64(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Finds a primitive `order`-th root of unity modulo prime `q`, where `order`
/// is a power of two dividing `q - 1`. Returns the smallest such root so the
/// result is reproducible.
pub fn primitive_root_of_unity(q: &Modulus, order: u64) -> Option<u64> {
    let p = q.value();
    if order == 0 || !order.is_power_of_two() || (p - 1) % order != 0 {
        return None;
    }
    let cofactor = (p - 1) / order;
    let mut best: Option<u64> = None;
    for g in 2..p.min(1 << 16) {
        let w = q.pow(g, cofactor);
        if q.pow(w, order / 2) == p - 1 {
            // Every primitive root of this order is w^k for odd k; pick the minimum.
            let w2 = q.mul(w, w);
            let mut cur = w;
            let mut min = w;
            for _ in 0..order / 2 {
                min = min.min(cur);
                cur = q.mul(cur, w2);
            }
            best = Some(min);
            break;
        }
    }
    best
}

/// Generates `count` primes of exactly `bits` bits that are congruent to 1
/// modulo `2n`, skipping any listed in `exclude`. Searches downward from 2^bits.
pub fn ntt_primes(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Vec<u64> {
    let step = 2 * n as u64;
    let mut candidate = ((1u64 << bits) / step) * step + 1;
    let floor = 1u64 << (bits - 1);
    let mut out = Vec::with_capacity(count);
    while out.len() < count && candidate > floor + step {
        candidate -= step;
        if is_prime(candidate) && !exclude.contains(&candidate) {
            out.push(candidate);
        }
    }
    out
}

#[inline]
pub fn bit_reverse(x: usize, log_n: u32) -> usize {
    if log_n == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - log_n)
    }
}
