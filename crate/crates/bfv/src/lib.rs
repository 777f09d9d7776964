//! RNS variant of the BFV somewhat-homomorphic encryption scheme.
//!
//! Plaintexts are vectors of `n` residues mod `t`, laid out as a `2 x n/2`
//! matrix; rotations act on both rows at once, and a column rotation swaps
//! them.
//!
//! ```
//! use heatmap_bfv::{decrypt, encrypt, keygen, Context, Evaluator, HeParams, PlainVec};
//! use rand::SeedableRng;
//! use std::collections::BTreeSet;
//! use std::sync::Arc;
//!
//! let ctx = Context::new(HeParams::named("toy").unwrap()).unwrap();
//! let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
//! let keys = keygen(&ctx, &BTreeSet::from([1]), false, &mut rng).unwrap();
//! let ev = Evaluator::new(ctx.clone(), Arc::new(keys.eval)).unwrap();
//!
//! let ct = encrypt(&keys.secret, &PlainVec::new(&ctx, &[1, 2, 3]).unwrap(), &mut rng).unwrap();
//! let rotated = ev.rotate_rows(&ct, 1).unwrap();
//! assert_eq!(&decrypt(&keys.secret, &rotated).unwrap().slots()[..2], &[2, 3]);
//! ```

pub mod arith;
mod cipher;
mod context;
mod encoding;
mod error;
mod eval;
mod keys;
pub mod ntt;
mod params;
mod poly;
pub mod serialize;

pub use cipher::{decrypt, decrypt_checked, encrypt, noise_budget, CipherVec};
pub use context::{Context, ROW_GENERATOR};
pub use encoding::{MulPlain, PlainVec};
pub use error::{HeError, Result};
pub use eval::{Evaluator, OpCounts};
pub use keys::{eval_keys_for, keygen, EvalKeys, KeyMaterial, KeySwitchKey, Rotation, SecretKey};
pub use params::{HeParams, DESK_Q, DESK_T, PAPER_Q_16384, PAPER_Q_8192, PAPER_T, SWITCH_HEADROOM_BITS};
pub use poly::ERROR_STD;
