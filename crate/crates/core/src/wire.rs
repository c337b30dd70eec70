//! Binary framing shared by the TCP transport and the on-disk binary forms.
//!
//! Frame layout, all integers little-endian:
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 4     | magic `41 43 4E 31` (`"ACN1"`)          |
//! | 1     | tag: 0 = EVAL_REQ, 1 = EVAL_REPLY, 2 = SHUTDOWN |
//! | 4     | worker id (u32)                        |
//! | 8     | round id (u64)                         |
//! | 8     | payload element count (u64)            |
//! | 8·n   | payload, IEEE-754 binary64             |
//!
//! The payload section on its own (count followed by values) is the binary
//! encoding used for datasets and shard files.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ACN1";
pub const HEADER_LEN: usize = 25;
/// Upper bound on accepted payload lengths, to reject garbage headers early.
pub const MAX_PAYLOAD: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    EvalReq = 0,
    EvalReply = 1,
    Shutdown = 2,
}

impl TryFrom<u8> for Tag {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Tag::EvalReq),
            1 => Ok(Tag::EvalReply),
            2 => Ok(Tag::Shutdown),
            other => Err(Error::Malformed(format!("unknown tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub tag: Tag,
    pub round_id: u64,
    pub worker_id: u32,
    pub payload: Vec<f64>,
}

impl Message {
    pub fn eval_request(round_id: u64, worker_id: u32, x: &[f64]) -> Self {
        Self { tag: Tag::EvalReq, round_id, worker_id, payload: x.to_vec() }
    }

    /// Reply payload is the gradient followed by the function value.
    pub fn eval_reply(round_id: u64, worker_id: u32, grad: &[f64], value: f64) -> Self {
        let mut payload = Vec::with_capacity(grad.len() + 1);
        payload.extend_from_slice(grad);
        payload.push(value);
        Self { tag: Tag::EvalReply, round_id, worker_id, payload }
    }

    pub fn shutdown(round_id: u64, worker_id: u32) -> Self {
        Self { tag: Tag::Shutdown, round_id, worker_id, payload: Vec::new() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        buf.extend_from_slice(&MAGIC);
        buf.push(self.tag as u8);
        buf.extend_from_slice(&self.worker_id.to_le_bytes());
        buf.extend_from_slice(&self.round_id.to_le_bytes());
        buf.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let msg = read_message(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Malformed(format!("{} trailing bytes after frame", cursor.len())));
        }
        Ok(msg)
    }
}

pub fn write_message<W: Write>(out: &mut W, msg: &Message) -> Result<()> {
    out.write_all(&msg.encode())?;
    out.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(input: &mut R) -> Result<Message> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(Error::Malformed(format!("bad magic {:02x?}", &header[..4])));
    }
    let tag = Tag::try_from(header[4])?;
    let worker_id = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes"));
    let round_id = u64::from_le_bytes(header[9..17].try_into().expect("8 bytes"));
    let count = u64::from_le_bytes(header[17..25].try_into().expect("8 bytes"));
    if count > MAX_PAYLOAD {
        return Err(Error::Malformed(format!("payload of {count} values exceeds limit")));
    }
    let mut body = vec![0u8; count as usize * 8];
    input.read_exact(&mut body)?;
    let payload = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Message { tag, round_id, worker_id, payload })
}

/// Length-prefixed block of little-endian f64 values.
pub fn encode_values(values: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 8 * values.len());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_values(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 8 {
        return Err(Error::Malformed("value block shorter than its length prefix".into()));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let body = &bytes[8..];
    if count.checked_mul(8) != Some(body.len() as u64) {
        return Err(Error::Malformed(format!("value block declares {count} values but holds {} bytes", body.len())));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}
