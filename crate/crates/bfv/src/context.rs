//! Precomputed tables shared by every object built from one parameter set.

use std::sync::{Arc, OnceLock};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::arith::{ntt_primes, Modulus};
use crate::error::{HeError, Result};
use crate::ntt::NttTable;
use crate::params::HeParams;

/// Generator of the row-rotation subgroup of `(Z/2nZ)^*`.
pub const ROW_GENERATOR: u64 = 3;

/// CRT reconstruction data for a set of word-sized moduli.
#[derive(Debug)]
pub(crate) struct Crt {
    moduli: Vec<Modulus>,
    pub(crate) product: BigUint,
    half: BigUint,
    punctured: Vec<BigUint>,
    punctured_inv: Vec<u64>,
}

impl Crt {
    pub(crate) fn new(moduli: &[Modulus]) -> Self {
        let product = moduli
            .iter()
            .fold(BigUint::one(), |acc, m| acc * m.value());
        let punctured: Vec<BigUint> = moduli.iter().map(|m| &product / m.value()).collect();
        let punctured_inv = moduli
            .iter()
            .zip(&punctured)
            .map(|(m, p)| {
                let r = (p % m.value()).to_u64().expect("residue fits");
                m.inv(r).expect("moduli are coprime")
            })
            .collect();
        let half = &product >> 1u32;
        Self {
            moduli: moduli.to_vec(),
            product,
            half,
            punctured,
            punctured_inv,
        }
    }

    /// Integer in `[0, product)` with the given residues.
    pub(crate) fn reconstruct(&self, residues: impl IntoIterator<Item = u64>) -> BigUint {
        let mut acc = BigUint::zero();
        for (i, r) in residues.into_iter().enumerate() {
            let m = &self.moduli[i];
            let c = m.mul(r, self.punctured_inv[i]);
            if c != 0 {
                acc += &self.punctured[i] * c;
            }
        }
        if acc >= self.product {
            acc %= &self.product;
        }
        acc
    }

    /// Reconstructs and returns `(magnitude, negative)` of the centered value.
    pub(crate) fn reconstruct_centered(&self, residues: impl IntoIterator<Item = u64>) -> (BigUint, bool) {
        let v = self.reconstruct(residues);
        if v > self.half {
            (&self.product - v, true)
        } else {
            (v, false)
        }
    }
}

/// Per-level constants; level `l` uses the first `l + 1` primes.
#[derive(Debug)]
pub(crate) struct LevelData {
    pub(crate) crt: Crt,
    /// `floor(q_l / t) mod q_i`.
    pub(crate) delta: Vec<u64>,
    /// `q_l mod t`.
    pub(crate) delta_rem: u64,
}

/// Auxiliary basis used for exact ciphertext tensoring.
#[derive(Debug)]
pub(crate) struct TensorBasis {
    pub(crate) aux: Vec<Modulus>,
    pub(crate) aux_ntt: Vec<NttTable>,
    /// CRT over `q_l` primes followed by the auxiliary primes.
    pub(crate) joint: Crt,
}

#[derive(Debug)]
pub struct Context {
    params: HeParams,
    pub(crate) q: Vec<Modulus>,
    pub(crate) q_ntt: Vec<NttTable>,
    pub(crate) t: Modulus,
    pub(crate) t_ntt: NttTable,
    pub(crate) levels: Vec<LevelData>,
    /// Slot position -> index in the (bit-reversed) evaluation vector.
    pub(crate) slot_index: Vec<usize>,
    aux_primes: Vec<u64>,
    tensor: Vec<OnceLock<TensorBasis>>,
}

impl Context {
    pub fn new(params: HeParams) -> Result<Arc<Self>> {
        let n = params.n();
        let mk = |v: u64| {
            Modulus::new(v).ok_or_else(|| HeError::InvalidParams(format!("bad modulus {v:#x}")))
        };
        let q: Vec<Modulus> = params.q_chain().iter().map(|&v| mk(v)).collect::<Result<_>>()?;
        let q_ntt = q
            .iter()
            .map(|m| {
                NttTable::new(*m, n).ok_or_else(|| HeError::InvalidParams(format!("no NTT for {:#x}", m.value())))
            })
            .collect::<Result<Vec<_>>>()?;
        let t = mk(params.t())?;
        let t_ntt = NttTable::new(t, n)
            .ok_or_else(|| HeError::InvalidParams("plaintext modulus does not support batching".into()))?;

        let levels = (0..q.len())
            .map(|l| {
                let crt = Crt::new(&q[..=l]);
                let delta_big = &crt.product / params.t();
                let delta = q[..=l]
                    .iter()
                    .map(|m| (&delta_big % m.value()).to_u64().unwrap())
                    .collect();
                let delta_rem = (&crt.product % params.t()).to_u64().unwrap();
                LevelData { crt, delta, delta_rem }
            })
            .collect();

        let two_n = 2 * n as u64;
        let row = n / 2;
        let mut slot_index = vec![0usize; n];
        let mut e = 1u64;
        for c in 0..row {
            slot_index[c] = t_ntt.slot_of_exponent(e as usize);
            slot_index[row + c] = t_ntt.slot_of_exponent((two_n - e) as usize);
            e = e * ROW_GENERATOR % two_n;
        }

        // Exact tensoring needs q * aux > n * q^2, i.e. aux > n * q.
        let needed = params.q_bits() + n.trailing_zeros() + 4;
        let count = needed.div_ceil(59) as usize;
        let mut exclude = params.q_chain().to_vec();
        exclude.push(params.t());
        let aux_primes = ntt_primes(60, n, count, &exclude);
        if aux_primes.len() < count {
            return Err(HeError::InvalidParams("not enough auxiliary primes".into()));
        }
        let tensor = (0..q.len()).map(|_| OnceLock::new()).collect();

        Ok(Arc::new(Self {
            params,
            q,
            q_ntt,
            t,
            t_ntt,
            levels,
            slot_index,
            aux_primes,
            tensor,
        }))
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn top_level(&self) -> usize {
        self.q.len() - 1
    }

    pub fn last_level(&self) -> usize {
        self.params.last_level()
    }

    pub fn plain_modulus(&self) -> &Modulus {
        &self.t
    }

    pub(crate) fn tensor_basis(&self, level: usize) -> &TensorBasis {
        self.tensor[level].get_or_init(|| {
            let aux: Vec<Modulus> = self
                .aux_primes
                .iter()
                .map(|&p| Modulus::new(p).unwrap())
                .collect();
            let aux_ntt = aux.iter().map(|m| NttTable::new(*m, self.n()).unwrap()).collect();
            let mut joint_moduli = self.q[..=level].to_vec();
            joint_moduli.extend_from_slice(&aux);
            TensorBasis {
                aux,
                aux_ntt,
                joint: Crt::new(&joint_moduli),
            }
        })
    }

    /// Galois element that rotates both rows left by `steps`.
    pub fn row_galois_element(&self, steps: usize) -> u64 {
        let two_n = 2 * self.n() as u64;
        let row = self.params.row_size();
        let s = (steps % row) as u64;
        let mut g = 1u64;
        for _ in 0..s {
            g = g * ROW_GENERATOR % two_n;
        }
        g
    }

    /// Galois element swapping the two rows.
    pub fn column_galois_element(&self) -> u64 {
        2 * self.n() as u64 - 1
    }

    /// Permutation applying `X -> X^g` to a polynomial in evaluation form:
    /// `out[i] = in[perm[i]]`.
    pub(crate) fn galois_permutation(&self, g: u64) -> Vec<usize> {
        let n = self.n();
        let two_n = 2 * n as u64;
        let table = &self.t_ntt;
        (0..n)
            .map(|i| {
                let e = table.slot_exponent(i) as u64;
                table.slot_of_exponent((e * g % two_n) as usize)
            })
            .collect()
    }
}
