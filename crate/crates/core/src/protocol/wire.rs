//! Framed, versioned, digest-protected messages.
//!
//! Frame: 4-byte magic, 1-byte message type, 8-byte little-endian payload
//! length, payload. The payload is a format version, the message body and a
//! SHA-256 digest over type, version and body. Files hold the same bytes.

use std::io::{Read, Write};
use std::path::Path;

use heatmap_bfv::serialize::{Reader, Writer};
use heatmap_bfv::{CipherVec, EvalKeys};
use sha2::{Digest, Sha256};

use super::session::context_for;
use super::{Period, RejectReason};
use crate::error::{CoreError, Result};

pub const FRAME_MAGIC: [u8; 4] = *b"HMAP";
pub const MESSAGE_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;
const HEADER_LEN: usize = 13;

/// Largest payload accepted from a peer.
pub const MAX_PAYLOAD: u64 = 1 << 34;

/// Everything a request carries, in encoding order. Only these are visible
/// to the server; `eval_keys` and `blocks` are key material and ciphertexts.
pub const REQUEST_FIELDS: [&str; 9] = [
    "params",
    "masked",
    "w",
    "jurisdiction",
    "period_start",
    "period_end",
    "eval_keys",
    "block_count",
    "blocks",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Request = 1,
    Response = 2,
    Reject = 3,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(MessageType::Request),
            2 => Some(MessageType::Response),
            3 => Some(MessageType::Reject),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClientRequest {
    pub params: String,
    pub masked: bool,
    pub eval_keys: EvalKeys,
    pub blocks: Vec<CipherVec>,
    pub w: u64,
    pub jurisdiction: String,
    pub period: Period,
}

#[derive(Clone, Debug)]
pub struct ServerResponse {
    pub params: String,
    pub k: u64,
    pub blocks: Vec<CipherVec>,
}

#[derive(Clone, Debug)]
pub enum Message {
    Request(ClientRequest),
    Response(ServerResponse),
    Reject { reason: RejectReason, detail: String },
}

/// Encoded sizes of a request's components, in bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct RequestSizes {
    pub ciphertexts: usize,
    pub galois_keys: usize,
    pub relin_key: usize,
    /// Frame header, metadata and digest.
    pub overhead: usize,
    pub total: usize,
}

/// Bytes to MiB, one decimal.
pub fn mib(bytes: usize) -> String {
    format!("{:.1}", bytes as f64 / (1024.0 * 1024.0))
}

fn wire_err(e: impl std::fmt::Display) -> CoreError {
    CoreError::Wire(e.to_string())
}

impl ClientRequest {
    pub fn encode_body(&self, w: &mut Writer) -> Result<()> {
        let ctx = context_for(&self.params)?;
        if self.eval_keys.params().name() != self.params {
            return Err(CoreError::Config("evaluation keys belong to other parameters".into()));
        }
        w.str(&self.params);
        w.u8(self.masked as u8);
        w.u64(self.w);
        w.str(&self.jurisdiction);
        w.str(&self.period.start.to_string());
        w.str(&self.period.end.to_string());
        self.eval_keys.write(w, &ctx);
        w.u32(self.blocks.len() as u32);
        for b in &self.blocks {
            b.write(w, &ctx);
        }
        Ok(())
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self> {
        let params = r.str().map_err(wire_err)?;
        let ctx = context_for(&params).map_err(wire_err)?;
        let masked = match r.u8().map_err(wire_err)? {
            0 => false,
            1 => true,
            v => return Err(wire_err(format!("invalid mask flag {v}"))),
        };
        let w = r.u64().map_err(wire_err)?;
        let jurisdiction = r.str().map_err(wire_err)?;
        let start = r.str().map_err(wire_err)?;
        let end = r.str().map_err(wire_err)?;
        let period = Period::parse(&format!("{start}..{end}")).map_err(wire_err)?;
        let eval_keys = EvalKeys::read(r, &ctx).map_err(wire_err)?;
        let count = r.u32().map_err(wire_err)? as usize;
        let blocks = (0..count)
            .map(|_| CipherVec::read(r, &ctx).map_err(wire_err))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            masked,
            eval_keys,
            blocks,
            w,
            jurisdiction,
            period,
        })
    }

    /// Component sizes of this request once framed.
    pub fn sizes(&self) -> Result<RequestSizes> {
        let ctx = context_for(&self.params)?;
        let total = Message::Request(self.clone()).encode()?.len();
        let ciphertexts = 4 + self.blocks.iter().map(|b| b.byte_size(&ctx)).sum::<usize>();
        let galois_keys = self.eval_keys.galois_encoded_size(&ctx);
        let relin_key = self.eval_keys.relin_encoded_size(&ctx);
        Ok(RequestSizes {
            ciphertexts,
            galois_keys,
            relin_key,
            overhead: total - ciphertexts - galois_keys - relin_key,
            total,
        })
    }
}

impl ServerResponse {
    fn encode_body(&self, w: &mut Writer) -> Result<()> {
        let ctx = context_for(&self.params)?;
        w.str(&self.params);
        w.u64(self.k);
        w.u32(self.blocks.len() as u32);
        for b in &self.blocks {
            b.write(w, &ctx);
        }
        Ok(())
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self> {
        let params = r.str().map_err(wire_err)?;
        let ctx = context_for(&params).map_err(wire_err)?;
        let k = r.u64().map_err(wire_err)?;
        let count = r.u32().map_err(wire_err)? as usize;
        let blocks = (0..count)
            .map(|_| CipherVec::read(r, &ctx).map_err(wire_err))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, k, blocks })
    }
}

fn digest(kind: u8, version_and_body: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([kind]);
    h.update(version_and_body);
    h.finalize().into()
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Request(_) => MessageType::Request,
            Message::Response(_) => MessageType::Response,
            Message::Reject { .. } => MessageType::Reject,
        }
    }

    /// Payload bytes: version, body, digest.
    pub fn encode_payload(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.u16(MESSAGE_VERSION);
        match self {
            Message::Request(r) => r.encode_body(&mut w)?,
            Message::Response(r) => r.encode_body(&mut w)?,
            Message::Reject { reason, detail } => {
                w.u16(reason.code());
                w.str(detail);
            }
        }
        let mut bytes = w.into_bytes();
        let d = digest(self.kind() as u8, &bytes);
        bytes.extend_from_slice(&d);
        Ok(bytes)
    }

    /// Complete frame.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let payload = self.encode_payload()?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(&FRAME_MAGIC);
        out.push(self.kind() as u8);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Verifies the digest before looking at anything else.
    pub fn decode_payload(kind: MessageType, payload: &[u8]) -> Result<Self> {
        if payload.len() < 2 + DIGEST_LEN {
            return Err(wire_err("truncated payload"));
        }
        let (body, d) = payload.split_at(payload.len() - DIGEST_LEN);
        if digest(kind as u8, body) != d {
            return Err(wire_err("payload digest mismatch"));
        }
        let mut r = Reader::new(body);
        let version = r.u16().map_err(wire_err)?;
        if version != MESSAGE_VERSION {
            return Err(wire_err(format!("unsupported message version {version}")));
        }
        let msg = match kind {
            MessageType::Request => Message::Request(ClientRequest::decode_body(&mut r)?),
            MessageType::Response => Message::Response(ServerResponse::decode_body(&mut r)?),
            MessageType::Reject => {
                let code = r.u16().map_err(wire_err)?;
                let reason =
                    RejectReason::from_code(code).ok_or_else(|| wire_err(format!("unknown reject code {code}")))?;
                Message::Reject {
                    reason,
                    detail: r.str().map_err(wire_err)?,
                }
            }
        };
        r.finish().map_err(wire_err)?;
        Ok(msg)
    }

    pub fn decode(frame: &[u8]) -> Result<Self> {
        let (kind, payload) = read_frame(&mut &frame[..], frame.len() as u64)?;
        Self::decode_payload(kind, &payload)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.encode()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let (kind, payload) = read_frame(&mut r, MAX_PAYLOAD)?;
        Self::decode_payload(kind, &payload)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }
}

/// Reads one frame header and payload.
pub fn read_frame<R: Read>(r: &mut R, max_payload: u64) -> Result<(MessageType, Vec<u8>)> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|_| wire_err("truncated frame header"))?;
    if head[..4] != FRAME_MAGIC {
        return Err(wire_err("bad frame magic"));
    }
    let kind = MessageType::from_u8(head[4]).ok_or_else(|| wire_err(format!("unknown message type {}", head[4])))?;
    let len = u64::from_le_bytes(head[5..].try_into().unwrap());
    if len > max_payload {
        return Err(wire_err(format!("payload of {len} bytes exceeds the limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|_| wire_err("truncated frame payload"))?;
    Ok((kind, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reject_roundtrip_and_corruption() {
        let m = Message::Reject {
            reason: RejectReason::PeriodOverlap,
            detail: "seen".into(),
        };
        let bytes = m.encode().unwrap();
        assert_eq!(&bytes[..4], b"HMAP");
        assert_eq!(bytes[4], 3);
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize, bytes.len() - 13);
        match Message::decode(&bytes).unwrap() {
            Message::Reject { reason, detail } => {
                assert_eq!(reason, RejectReason::PeriodOverlap);
                assert_eq!(detail, "seen");
            }
            other => panic!("{other:?}"),
        }
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(Message::decode(&bad).is_err(), "flip at {i} accepted");
        }
        assert!(Message::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn mib_formatting() {
        assert_eq!(mib(3 * 1024 * 1024 + 60_000), "3.1");
        assert_eq!(mib(0), "0.0");
    }
}
