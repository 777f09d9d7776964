//! Compact binary encoding of ciphertexts and keys.
//!
//! Residues are bit-packed at the width of their prime. Standalone blobs are
//! wrapped in a versioned envelope closed by a SHA-256 digest, which is
//! verified before any field is interpreted.

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::cipher::CipherVec;
use crate::context::Context;
use crate::error::{HeError, Result};
use crate::keys::{digits_per_prime, EvalKeys, KeySwitchKey, Rotation, SecretKey};
use crate::poly::RnsPoly;

pub const BLOB_MAGIC: [u8; 4] = *b"HMPB";
pub const FORMAT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

/// What a blob contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum BlobKind {
    Ciphertext = 1,
    EvalKeys = 2,
    SecretKey = 3,
}

impl BlobKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => BlobKind::Ciphertext,
            2 => BlobKind::EvalKeys,
            3 => BlobKind::SecretKey,
            _ => return None,
        })
    }
}

fn decode_err(msg: impl Into<String>) -> HeError {
    HeError::Decode(msg.into())
}

/// Append-only little-endian writer.
#[derive(Default, Debug)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// Length-prefixed byte string.
    pub fn blob(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.bytes(v);
    }

    pub fn str(&mut self, s: &str) {
        self.blob(s.as_bytes());
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    /// Packs `values` using `bits` bits each, least significant first.
    pub fn packed(&mut self, values: &[u64], bits: u32) {
        let mut acc: u128 = 0;
        let mut filled = 0u32;
        for &v in values {
            acc |= (v as u128) << filled;
            filled += bits;
            while filled >= 8 {
                self.buf.push(acc as u8);
                acc >>= 8;
                filled -= 8;
            }
        }
        if filled > 0 {
            self.buf.push(acc as u8);
        }
    }
}

/// Bounds-checked reader over a byte slice.
#[derive(Debug)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| decode_err("truncated input"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn blob(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()?;
        let len = usize::try_from(len).map_err(|_| decode_err("length overflow"))?;
        self.take(len)
    }

    pub fn str(&mut self) -> Result<String> {
        String::from_utf8(self.blob()?.to_vec()).map_err(|_| decode_err("invalid utf-8"))
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    /// Fails unless every byte was consumed.
    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(decode_err(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    pub fn packed(&mut self, count: usize, bits: u32) -> Result<Vec<u64>> {
        let total = (count as u64 * bits as u64).div_ceil(8) as usize;
        let bytes = self.take(total)?;
        let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
        let mut out = Vec::with_capacity(count);
        let mut acc: u128 = 0;
        let mut filled = 0u32;
        let mut it = bytes.iter();
        for _ in 0..count {
            while filled < bits {
                acc |= (*it.next().expect("length checked") as u128) << filled;
                filled += 8;
            }
            out.push(acc as u64 & mask);
            acc >>= bits;
            filled -= bits;
        }
        Ok(out)
    }
}

/// Wraps a payload: magic, version, kind, parameter name, payload, digest.
pub fn seal(kind: BlobKind, params: &str, payload: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&BLOB_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(kind as u8);
    w.str(params);
    w.blob(payload);
    let digest = Sha256::digest(&w.buf);
    w.bytes(&digest);
    w.into_bytes()
}

/// Verifies the digest and header of a sealed blob and returns
/// `(parameter name, payload)`.
pub fn open(bytes: &[u8], kind: BlobKind) -> Result<(String, &[u8])> {
    if bytes.len() < DIGEST_LEN + BLOB_MAGIC.len() {
        return Err(decode_err("truncated blob"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(decode_err("digest mismatch"));
    }
    let mut r = Reader::new(body);
    if r.take(4)? != BLOB_MAGIC {
        return Err(decode_err("bad magic"));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(decode_err(format!("unsupported format version {version}")));
    }
    let found = r.u8()?;
    if BlobKind::from_u8(found) != Some(kind) {
        return Err(decode_err(format!("expected {kind:?}, found kind {found}")));
    }
    let params = r.str()?;
    let payload = r.blob()?;
    r.finish()?;
    Ok((params, payload))
}

fn check_params(ctx: &Context, name: &str) -> Result<()> {
    if ctx.params().name() != name {
        return Err(HeError::ParamsMismatch(format!(
            "blob is for {name}, context is {}",
            ctx.params().name()
        )));
    }
    Ok(())
}

fn write_poly(w: &mut Writer, ctx: &Context, p: &RnsPoly) {
    let n = ctx.n();
    for i in 0..p.moduli {
        w.packed(p.residues(n, i), ctx.q[i].bits());
    }
}

fn read_poly(r: &mut Reader<'_>, ctx: &Context, moduli: usize) -> Result<RnsPoly> {
    let n = ctx.n();
    let mut p = RnsPoly::zero(ctx, moduli, true);
    for i in 0..moduli {
        let q = ctx.q[i].value();
        let vals = r.packed(n, ctx.q[i].bits())?;
        if vals.iter().any(|&v| v >= q) {
            return Err(decode_err("residue out of range"));
        }
        p.residues_mut(n, i).copy_from_slice(&vals);
    }
    Ok(p)
}

impl CipherVec {
    pub fn write(&self, w: &mut Writer, ctx: &Context) {
        w.u32(self.level as u32);
        w.u8(self.polys.len() as u8);
        for p in &self.polys {
            write_poly(w, ctx, p);
        }
    }

    pub fn read(r: &mut Reader<'_>, ctx: &Context) -> Result<Self> {
        let level = r.u32()? as usize;
        if level > ctx.top_level() {
            return Err(decode_err(format!("level {level} beyond the prime chain")));
        }
        let size = r.u8()? as usize;
        if !(2..=3).contains(&size) {
            return Err(HeError::CiphertextSize(size));
        }
        let polys = (0..size)
            .map(|_| read_poly(r, ctx, level + 1))
            .collect::<Result<_>>()?;
        Ok(Self { polys, level })
    }

    /// Encoded size in bytes, without any envelope.
    pub fn byte_size(&self, ctx: &Context) -> usize {
        let n = ctx.n() as u64;
        let per_poly: u64 = ctx.q[..=self.level]
            .iter()
            .map(|q| (n * q.bits() as u64).div_ceil(8))
            .sum();
        5 + self.polys.len() * per_poly as usize
    }

    pub fn to_blob(&self, ctx: &Context) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w, ctx);
        seal(BlobKind::Ciphertext, ctx.params().name(), &w.into_bytes())
    }

    pub fn from_blob(ctx: &Context, bytes: &[u8]) -> Result<Self> {
        let (params, payload) = open(bytes, BlobKind::Ciphertext)?;
        check_params(ctx, &params)?;
        let mut r = Reader::new(payload);
        let ct = Self::read(&mut r, ctx)?;
        r.finish()?;
        Ok(ct)
    }
}

fn write_ksk(w: &mut Writer, ctx: &Context, k: &KeySwitchKey) {
    w.bytes(&k.seed);
    w.u32(k.digit_bits);
    w.u32(k.b.len() as u32);
    for b in &k.b {
        write_poly(w, ctx, b);
    }
}

fn read_ksk(r: &mut Reader<'_>, ctx: &Context) -> Result<KeySwitchKey> {
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let digit_bits = r.u32()?;
    if digit_bits != ctx.params().ks_digit_bits() {
        return Err(decode_err("key-switching digit width differs from parameters"));
    }
    let count = r.u32()? as usize;
    let expected: usize = digits_per_prime(ctx, digit_bits).iter().sum();
    if count != expected {
        return Err(decode_err(format!("expected {expected} key components, found {count}")));
    }
    let moduli = ctx.top_level() + 1;
    let b = (0..count)
        .map(|_| read_poly(r, ctx, moduli))
        .collect::<Result<Vec<_>>>()?;
    let a = KeySwitchKey::expand_a(ctx, seed, count);
    Ok(KeySwitchKey {
        seed,
        digit_bits,
        b,
        a,
    })
}

impl KeySwitchKey {
    fn encoded_size(&self, ctx: &Context) -> usize {
        let n = ctx.n() as u64;
        let per_poly: u64 = ctx.q.iter().map(|q| (n * q.bits() as u64).div_ceil(8)).sum();
        32 + 8 + self.b.len() * per_poly as usize
    }
}

impl EvalKeys {
    pub fn write(&self, w: &mut Writer, ctx: &Context) {
        w.u32(self.galois.len() as u32);
        for (rot, key) in &self.galois {
            match rot {
                Rotation::Rows(s) => {
                    w.u8(0);
                    w.u32(*s as u32);
                }
                Rotation::Columns => {
                    w.u8(1);
                    w.u32(0);
                }
            }
            write_ksk(w, ctx, key);
        }
        match &self.relin {
            Some(k) => {
                w.u8(1);
                write_ksk(w, ctx, k);
            }
            None => w.u8(0),
        }
    }

    pub fn read(r: &mut Reader<'_>, ctx: &Arc<Context>) -> Result<Self> {
        let count = r.u32()? as usize;
        let row = ctx.params().row_size();
        let mut galois = BTreeMap::new();
        for _ in 0..count {
            let tag = r.u8()?;
            let steps = r.u32()? as usize;
            let rot = match tag {
                0 if steps > 0 && steps < row => Rotation::Rows(steps),
                1 => Rotation::Columns,
                _ => return Err(decode_err("invalid rotation tag")),
            };
            if galois.insert(rot, Arc::new(read_ksk(r, ctx)?)).is_some() {
                return Err(decode_err("duplicate Galois key"));
            }
        }
        let relin = match r.u8()? {
            0 => None,
            1 => Some(Arc::new(read_ksk(r, ctx)?)),
            _ => return Err(decode_err("invalid relinearization flag")),
        };
        Ok(Self {
            params: ctx.params().clone(),
            galois,
            relin,
        })
    }

    /// Encoded size of the Galois keys alone.
    pub fn galois_encoded_size(&self, ctx: &Context) -> usize {
        4 + self.galois.values().map(|k| 5 + k.encoded_size(ctx)).sum::<usize>()
    }

    /// Encoded size of the relinearization key (plus its presence flag).
    pub fn relin_encoded_size(&self, ctx: &Context) -> usize {
        1 + self.relin.as_ref().map_or(0, |k| k.encoded_size(ctx))
    }

    pub fn to_blob(&self, ctx: &Context) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w, ctx);
        seal(BlobKind::EvalKeys, ctx.params().name(), &w.into_bytes())
    }

    pub fn from_blob(ctx: &Arc<Context>, bytes: &[u8]) -> Result<Self> {
        let (params, payload) = open(bytes, BlobKind::EvalKeys)?;
        check_params(ctx, &params)?;
        let mut r = Reader::new(payload);
        let keys = Self::read(&mut r, ctx)?;
        r.finish()?;
        Ok(keys)
    }
}

impl SecretKey {
    pub fn to_blob(&self) -> Vec<u8> {
        let mut w = Writer::new();
        let vals: Vec<u64> = self.coeffs.iter().map(|&c| (c + 1) as u64).collect();
        w.packed(&vals, 2);
        seal(BlobKind::SecretKey, self.ctx.params().name(), &w.into_bytes())
    }

    pub fn from_blob(ctx: &Arc<Context>, bytes: &[u8]) -> Result<Self> {
        let (params, payload) = open(bytes, BlobKind::SecretKey)?;
        check_params(ctx, &params)?;
        let mut r = Reader::new(payload);
        let vals = r.packed(ctx.n(), 2)?;
        r.finish()?;
        if vals.iter().any(|&v| v > 2) {
            return Err(decode_err("secret key coefficient out of range"));
        }
        Ok(Self::from_coeffs(ctx, vals.iter().map(|&v| v as i64 - 1).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn packing_roundtrip(bits in 1u32..=62, raw in prop::collection::vec(any::<u64>(), 0..200)) {
            let mask = (1u64 << bits) - 1;
            let vals: Vec<u64> = raw.iter().map(|v| v & mask).collect();
            let mut w = Writer::new();
            w.packed(&vals, bits);
            let bytes = w.into_bytes();
            prop_assert_eq!(bytes.len(), (vals.len() * bits as usize).div_ceil(8));
            let mut r = Reader::new(&bytes);
            prop_assert_eq!(r.packed(vals.len(), bits).unwrap(), vals);
            prop_assert!(r.finish().is_ok());
        }
    }

    #[test]
    fn envelope_detects_corruption() {
        let blob = seal(BlobKind::Ciphertext, "toy", b"payload");
        assert_eq!(open(&blob, BlobKind::Ciphertext).unwrap().1, b"payload");
        for i in 0..blob.len() {
            let mut bad = blob.clone();
            bad[i] ^= 0x40;
            assert!(open(&bad, BlobKind::Ciphertext).is_err());
        }
        assert!(open(&blob[..blob.len() - 1], BlobKind::Ciphertext).is_err());
        assert!(open(&blob, BlobKind::EvalKeys).is_err());
    }
}
