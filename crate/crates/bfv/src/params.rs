//! Scheme parameters and the named parameter-set registry.

use std::fmt;

use crate::arith::{is_prime, Modulus};
use crate::error::{HeError, Result};

/// BFV parameters: ring degree, plaintext modulus and ciphertext prime chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeParams {
    name: String,
    n: usize,
    t: u64,
    q_chain: Vec<u64>,
    kappa: Option<u32>,
    ks_digit_bits: u32,
    masking: bool,
}

/// Headroom (in bits of `q_level / t`) kept when choosing the final
/// modulus-switch level, so that the rounding noise of the switch itself
/// never reaches the decryption threshold.
pub const SWITCH_HEADROOM_BITS: u32 = 20;

impl HeParams {
    /// Builds and validates a parameter set. The key-switching digit width
    /// defaults to the widest modulus (one digit per prime).
    pub fn new(name: impl Into<String>, n: usize, t: u64, q_chain: Vec<u64>) -> Result<Self> {
        let ks_digit_bits = q_chain
            .iter()
            .map(|q| 64 - q.leading_zeros())
            .max()
            .unwrap_or(0);
        let params = Self {
            name: name.into(),
            n,
            t,
            q_chain,
            kappa: None,
            ks_digit_bits,
            masking: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_kappa(mut self, kappa: u32) -> Self {
        self.kappa = Some(kappa);
        self
    }

    pub fn with_ks_digit_bits(mut self, bits: u32) -> Result<Self> {
        if bits == 0 || bits > 62 {
            return Err(HeError::InvalidParams(format!(
                "key-switching digit width {bits} out of range"
            )));
        }
        self.ks_digit_bits = bits;
        Ok(self)
    }

    pub fn with_masking(mut self, masking: bool) -> Self {
        self.masking = masking;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HeError::InvalidParams(msg));
        if !self.n.is_power_of_two() || self.n < 8 {
            return bad(format!("n = {} is not a power of two >= 8", self.n));
        }
        let two_n = 2 * self.n as u64;
        if Modulus::new(self.t).is_none() || !is_prime(self.t) {
            return bad(format!("t = {:#x} is not a prime below 2^62", self.t));
        }
        if self.t % two_n != 1 {
            return bad(format!("t = {:#x} is not 1 mod 2n = {two_n}", self.t));
        }
        if self.q_chain.is_empty() {
            return bad("empty ciphertext modulus chain".into());
        }
        for (i, &q) in self.q_chain.iter().enumerate() {
            if Modulus::new(q).is_none() || !is_prime(q) || q % two_n != 1 {
                return bad(format!("q_{i} = {q:#x} is not an NTT-friendly prime"));
            }
            if q == self.t || self.q_chain[..i].contains(&q) {
                return bad(format!("q_{i} = {q:#x} repeats another modulus"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Slots per row of the `2 x n/2` batching matrix.
    pub fn row_size(&self) -> usize {
        self.n / 2
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn q_chain(&self) -> &[u64] {
        &self.q_chain
    }

    pub fn kappa(&self) -> Option<u32> {
        self.kappa
    }

    pub fn ks_digit_bits(&self) -> u32 {
        self.ks_digit_bits
    }

    /// Whether the set carries enough noise budget for the masked pipeline.
    pub fn supports_masking(&self) -> bool {
        self.masking
    }

    pub fn t_bits(&self) -> u32 {
        64 - self.t.leading_zeros()
    }

    /// `log2(q)` rounded up to whole bits.
    pub fn q_bits(&self) -> u32 {
        self.q_chain
            .iter()
            .map(|q| (*q as f64).log2())
            .sum::<f64>()
            .ceil() as u32
    }

    pub fn top_level(&self) -> usize {
        self.q_chain.len() - 1
    }

    /// Lowest level (number of primes minus one) whose modulus still exceeds
    /// `t` by [`SWITCH_HEADROOM_BITS`]; responses are switched down to it.
    pub fn last_level(&self) -> usize {
        let t_bits = (self.t as f64).log2();
        let mut acc = 0.0;
        for (level, q) in self.q_chain.iter().enumerate() {
            acc += (*q as f64).log2();
            if acc - t_bits >= SWITCH_HEADROOM_BITS as f64 {
                return level;
            }
        }
        self.top_level()
    }

    /// Parameter sets known by name.
    pub fn named(name: &str) -> Result<Self> {
        let set = match name {
            "paper-1" => HeParams::new("paper-1", 8192, PAPER_T[0], PAPER_Q_8192.to_vec())?
                .with_kappa(128)
                .with_masking(false),
            "paper-2" => HeParams::new("paper-2", 16384, PAPER_T[1], PAPER_Q_16384.to_vec())?
                .with_kappa(128),
            "paper-3" => HeParams::new("paper-3", 16384, PAPER_T[2], PAPER_Q_16384.to_vec())?
                .with_kappa(128),
            "desk" => HeParams::new("desk", 4096, DESK_T, DESK_Q.to_vec())?
                .with_kappa(128)
                .with_ks_digit_bits(12)?
                .with_masking(false),
            "desk-mask" => HeParams::new("desk-mask", 4096, DESK_T, PAPER_Q_8192.to_vec())?,
            "toy" => HeParams::new("toy", 1024, 65537, PAPER_Q_8192[..4].to_vec())?,
            other => return Err(HeError::UnknownParams(other.to_string())),
        };
        Ok(set)
    }

    pub const NAMES: [&'static str; 6] = ["paper-1", "paper-2", "paper-3", "desk", "desk-mask", "toy"];
}

impl fmt::Display for HeParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (n={}, log t={}, log q={}, primes={}",
            self.name,
            self.n,
            self.t_bits(),
            self.q_bits(),
            self.q_chain.len()
        )?;
        match self.kappa {
            Some(k) => write!(f, ", kappa={k})"),
            None => write!(f, ", test-only)"),
        }
    }
}

/// Plaintext moduli of the three benchmark configurations (33, 42, 60 bits).
pub const PAPER_T: [u64; 3] = [0x1e21a0001, 0x3fffffa8001, 0xf4fc03ff53d0001];

/// Ciphertext primes for n = 8192 at 128-bit security (218 bits).
pub const PAPER_Q_8192: [u64; 5] = [
    0x7fffffd8001,
    0x7fffffc8001,
    0xfffffffc001,
    0xffffff6c001,
    0xfffffebc001,
];

/// Ciphertext primes for n = 16384 at 128-bit security (438 bits).
pub const PAPER_Q_16384: [u64; 9] = [
    0xfffffffd8001,
    0xfffffffa0001,
    0xfffffff00001,
    0x1fffffff68001,
    0x1fffffff50001,
    0x1ffffffee8001,
    0x1ffffffea0001,
    0x1ffffffe88001,
    0x1ffffffe48001,
];

/// 30-bit batching prime for n = 4096.
pub const DESK_T: u64 = 0x3fff4001;

/// Default 109-bit chain for n = 4096 at 128-bit security.
pub const DESK_Q: [u64; 3] = [0xffffee001, 0xffffc4001, 0x1ffffe0001];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_reproduces_tables() {
        let p1 = HeParams::named("paper-1").unwrap();
        assert_eq!(p1.n(), 8192);
        assert_eq!(p1.t(), 0x1e21a0001);
        assert_eq!(p1.t_bits(), 33);
        assert_eq!(p1.q_bits(), 218);
        assert!(!p1.supports_masking());

        for (name, t, t_bits) in [("paper-2", 0x3fffffa8001, 42), ("paper-3", 0xf4fc03ff53d0001, 60)] {
            let p = HeParams::named(name).unwrap();
            assert_eq!(p.n(), 16384);
            assert_eq!(p.t(), t);
            assert_eq!(p.t_bits(), t_bits);
            assert_eq!(p.q_chain().len(), 9);
            assert_eq!(p.q_bits(), 438);
            assert_eq!(p.kappa(), Some(128));
        }

        let desk = HeParams::named("desk").unwrap();
        assert_eq!((desk.n(), desk.t_bits(), desk.q_bits()), (4096, 30, 109));
    }

    #[test]
    fn rejects_non_batching_plain_modulus() {
        // 12289 = 3 * 2^12 + 1 is prime but not 1 mod 8192.
        let err = HeParams::new("x", 4096, 12289, DESK_Q.to_vec()).unwrap_err();
        assert!(matches!(err, HeError::InvalidParams(_)));
        assert!(HeParams::new("x", 4096, DESK_T, vec![]).is_err());
        assert!(HeParams::new("x", 3000, DESK_T, DESK_Q.to_vec()).is_err());
        assert!(matches!(HeParams::named("nope"), Err(HeError::UnknownParams(_))));
    }

    #[test]
    fn last_level_keeps_headroom() {
        for name in HeParams::NAMES {
            let p = HeParams::named(name).unwrap();
            let bits: f64 = p.q_chain()[..=p.last_level()].iter().map(|q| (*q as f64).log2()).sum();
            assert!(bits - (p.t() as f64).log2() >= SWITCH_HEADROOM_BITS as f64, "{name}");
            assert!(p.last_level() < p.top_level(), "{name}");
        }
    }
}
