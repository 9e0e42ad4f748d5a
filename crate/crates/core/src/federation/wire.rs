//! Byte-exact framing of round messages.
//!
//! `frame = u32 payload_len ‖ u8 tag ‖ payload`, with
//! `payload = u32 round ‖ u32 party_id ‖ (u32 rows ‖ u32 cols ‖ f64 values)*`.
//! All integers and floats are little-endian; matrices are row-major and
//! vectors are encoded as one row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const TAG_PROTO_DOWN: u8 = 1;
pub const TAG_REPR_UP: u8 = 2;
/// Length prefix plus tag.
pub const FRAME_HEADER: usize = 5;
const FIXED_PAYLOAD: usize = 8;
const DIM_HEADER: usize = 8;

/// Protocol payloads. Neither variant has room for labels, raw features or
/// gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RoundMessage {
    /// Active party to party `m`: its prototypes and the global prior.
    ProtoDown {
        round: u32,
        prototypes: Matrix,
        global_prior: Vec<f64>,
    },
    /// Party `m` to the active party: aligned representations and its local prior.
    ReprUp {
        round: u32,
        party_id: u32,
        aligned_reps: Matrix,
        local_prior: Vec<f64>,
    },
}

impl RoundMessage {
    pub fn round(&self) -> u32 {
        match self {
            RoundMessage::ProtoDown { round, .. } | RoundMessage::ReprUp { round, .. } => *round,
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            RoundMessage::ProtoDown { .. } => TAG_PROTO_DOWN,
            RoundMessage::ReprUp { .. } => TAG_REPR_UP,
        }
    }

    /// Encoded size in bytes.
    pub fn frame_len(&self) -> usize {
        let values = match self {
            RoundMessage::ProtoDown {
                prototypes,
                global_prior,
                ..
            } => prototypes.data().len() + global_prior.len(),
            RoundMessage::ReprUp {
                aligned_reps,
                local_prior,
                ..
            } => aligned_reps.data().len() + local_prior.len(),
        };
        frame_len_for(values)
    }
}

/// Size of a two-array frame holding `values` floats in total.
pub fn frame_len_for(values: usize) -> usize {
    FRAME_HEADER + FIXED_PAYLOAD + 2 * DIM_HEADER + 8 * values
}

fn dim(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Protocol(format!("{what} = {n} exceeds 32 bits")))
}

fn put_array(out: &mut Vec<u8>, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("message payload".into()));
    }
    out.extend_from_slice(&dim(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&dim(cols, "cols")?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_message(msg: &RoundMessage) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(msg.frame_len() - FRAME_HEADER);
    match msg {
        RoundMessage::ProtoDown {
            round,
            prototypes,
            global_prior,
        } => {
            payload.extend_from_slice(&round.to_le_bytes());
            payload.extend_from_slice(&0u32.to_le_bytes());
            put_array(&mut payload, prototypes.rows(), prototypes.cols(), prototypes.data())?;
            put_array(&mut payload, 1, global_prior.len(), global_prior)?;
        }
        RoundMessage::ReprUp {
            round,
            party_id,
            aligned_reps,
            local_prior,
        } => {
            payload.extend_from_slice(&round.to_le_bytes());
            payload.extend_from_slice(&party_id.to_le_bytes());
            put_array(&mut payload, aligned_reps.rows(), aligned_reps.cols(), aligned_reps.data())?;
            put_array(&mut payload, 1, local_prior.len(), local_prior)?;
        }
    }
    let len = dim(payload.len(), "payload length")?;
    let mut out = Vec::with_capacity(FRAME_HEADER + payload.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.push(msg.tag());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Framing(format!("payload truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn array(&mut self) -> Result<(usize, usize, Vec<f64>)> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.at))
            .ok_or_else(|| Error::Framing(format!("{rows}×{cols} array overruns the payload")))?;
        let bytes = self.take(8 * n)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("non-finite value in payload".into()));
        }
        Ok((rows, cols, values))
    }

    fn vector(&mut self) -> Result<Vec<f64>> {
        let (rows, _, values) = self.array()?;
        if rows != 1 {
            return Err(Error::Protocol(format!("vector encoded with {rows} rows")));
        }
        Ok(values)
    }
}

/// Decodes one frame from the front of `bytes`. Returns the message and the
/// number of bytes consumed; anything after that belongs to the caller.
pub fn decode_message(bytes: &[u8]) -> Result<(RoundMessage, usize)> {
    if bytes.len() < FRAME_HEADER {
        return Err(Error::Framing(format!("{} bytes is shorter than a frame header", bytes.len())));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    let tag = bytes[4];
    let total = FRAME_HEADER
        .checked_add(len)
        .ok_or_else(|| Error::Framing("length overflow".into()))?;
    if bytes.len() < total {
        return Err(Error::Framing(format!(
            "frame declares {len} payload bytes, {} available",
            bytes.len() - FRAME_HEADER
        )));
    }
    if tag != TAG_PROTO_DOWN && tag != TAG_REPR_UP {
        return Err(Error::Protocol(format!("unknown message tag {tag}")));
    }
    let mut c = Cursor {
        buf: &bytes[FRAME_HEADER..total],
        at: 0,
    };
    let round = c.u32()?;
    let party_id = c.u32()?;
    let (rows, cols, values) = c.array()?;
    let matrix = Matrix::from_vec(rows, cols, values)?;
    let vector = c.vector()?;
    if c.at != len {
        return Err(Error::Framing(format!(
            "frame declares {len} payload bytes, content ends at {}",
            c.at
        )));
    }
    let msg = match tag {
        TAG_PROTO_DOWN => {
            if party_id != 0 {
                return Err(Error::Protocol(format!("ProtoDown carries party id {party_id}")));
            }
            RoundMessage::ProtoDown {
                round,
                prototypes: matrix,
                global_prior: vector,
            }
        }
        _ => RoundMessage::ReprUp {
            round,
            party_id,
            aligned_reps: matrix,
            local_prior: vector,
        },
    };
    Ok((msg, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_down() -> RoundMessage {
        RoundMessage::ProtoDown {
            round: 3,
            prototypes: Matrix::from_rows(&[[0.5]]).unwrap(),
            global_prior: vec![1.0],
        }
    }

    #[test]
    fn one_by_one_layout() {
        let bytes = encode_message(&tiny_down()).unwrap();
        assert_eq!(bytes.len(), 45);
        let mut expect = Vec::new();
        expect.extend_from_slice(&40u32.to_le_bytes());
        expect.push(1);
        expect.extend_from_slice(&3u32.to_le_bytes());
        expect.extend_from_slice(&0u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&0.5f64.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(tiny_down().frame_len(), 45);
    }

    #[test]
    fn trailing_bytes_are_reported() {
        let mut bytes = encode_message(&tiny_down()).unwrap();
        bytes.push(0xAB);
        let (msg, used) = decode_message(&bytes).unwrap();
        assert_eq!(msg, tiny_down());
        assert_eq!(used, 45);
        assert_eq!(&bytes[used..], &[0xAB]);
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(decode_message(&[]), Err(Error::Framing(_))));
        let bytes = encode_message(&tiny_down()).unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(decode_message(&bytes[..cut]), Err(Error::Framing(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_message(&bad), Err(Error::Protocol(_))));
        let mut short = bytes.clone();
        short[0] = 39;
        assert!(matches!(decode_message(&short), Err(Error::Framing(_))));
        let mut party = bytes;
        party[9] = 2;
        assert!(matches!(decode_message(&party), Err(Error::Protocol(_))));
    }
}
