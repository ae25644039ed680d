//! Binary message tensors and the length-prefixed framing used for file
//! payloads.

use crate::error::{Error, Result};
use crate::image::Shape;
use crate::keystream::StegoKey;

/// `D×H×W` bits, one per byte, each 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MessageTensor {
    shape: Shape,
    bits: Vec<u8>,
}

impl MessageTensor {
    pub fn from_bits(shape: Shape, bits: Vec<u8>) -> Result<Self> {
        shape.validate()?;
        if bits.len() != shape.len() {
            return Err(Error::shape(shape.len(), bits.len()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidArgument(format!("bit value {b} is not 0 or 1")));
        }
        Ok(MessageTensor { shape, bits })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Bits per pixel.
    pub fn depth(&self) -> usize {
        self.shape.channels
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn complement(&self) -> Self {
        MessageTensor {
            shape: self.shape,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    /// Pack all bits MSB-first; a trailing partial byte is zero-padded.
    pub fn to_packed(&self) -> Vec<u8> {
        pack_bits(&self.bits)
    }
}

pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)))
        })
        .collect()
}

pub fn unpack_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1))
        .collect()
}

const LENGTH_BITS: usize = 32;

/// Largest payload, in bytes, that fits a message of `shape` with framing.
pub fn frame_capacity(shape: Shape) -> usize {
    shape.len().saturating_sub(LENGTH_BITS) / 8
}

/// 32-bit big-endian byte length, then the payload bits, then filler bits
/// from `filler`'s stream up to the tensor size.
pub fn frame_payload(payload: &[u8], shape: Shape, filler: &StegoKey) -> Result<MessageTensor> {
    shape.validate()?;
    if payload.len() > frame_capacity(shape) || payload.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "payload of {} bytes exceeds capacity of {} bytes for a {shape} message",
            payload.len(),
            frame_capacity(shape)
        )));
    }
    let mut bits = unpack_bits(&(payload.len() as u32).to_be_bytes());
    bits.extend(unpack_bits(payload));
    let mut stream = filler.stream();
    while bits.len() < shape.len() {
        bits.push(stream.next_bit());
    }
    MessageTensor::from_bits(shape, bits)
}

/// Inverse of [`frame_payload`]. A corrupted length prefix that exceeds the
/// capacity is clamped to it rather than rejected, so a noisy extraction
/// still yields the best-effort payload.
pub fn unframe_payload(msg: &MessageTensor) -> Vec<u8> {
    let bits = msg.bits();
    if bits.len() < LENGTH_BITS {
        return Vec::new();
    }
    let prefix = pack_bits(&bits[..LENGTH_BITS]);
    let declared = u32::from_be_bytes(prefix.try_into().unwrap()) as usize;
    let len = declared.min(frame_capacity(msg.shape()));
    pack_bits(&bits[LENGTH_BITS..LENGTH_BITS + 8 * len])
}
