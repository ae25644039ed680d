//! Keys and the deterministic streams derived from them.
//!
//! A [`StegoKey`] is a 256-bit seed. Its four little-endian 64-bit words are
//! each passed once through SplitMix64 to form the state of a xoshiro256**
//! generator. Reals are built from the top 53 bits of each output, so every
//! stream is bit-reproducible in any language.

use std::fmt;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape, Tensor3};
use crate::message::MessageTensor;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct StegoKey {
    seed: [u8; 32],
    null: bool,
}

impl StegoKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        StegoKey { seed, null: false }
    }

    /// Parse a 64-digit hexadecimal seed.
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 64 {
            return Err(Error::InvalidKey(format!(
                "expected 64 hex digits, got {} characters",
                s.len()
            )));
        }
        let mut seed = [0u8; 32];
        hex::decode_to_slice(s, &mut seed)
            .map_err(|e| Error::InvalidKey(format!("not hexadecimal: {e}")))?;
        Ok(Self::from_seed(seed))
    }

    /// SHA-256 of the UTF-8 passphrase.
    pub fn from_passphrase(passphrase: &str) -> Self {
        Self::from_seed(Sha256::digest(passphrase.as_bytes()).into())
    }

    /// Key whose encryption mask is identically zero. Only meaningful in tests
    /// and diagnostics: encrypting with it is the identity.
    pub fn null() -> Self {
        StegoKey {
            seed: [0; 32],
            null: true,
        }
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.seed)
    }

    /// Independent sub-key for a named purpose: `SHA-256(seed || label)`.
    pub fn derive(&self, label: &str) -> StegoKey {
        let mut h = Sha256::new();
        h.update(self.seed);
        h.update(label.as_bytes());
        Self::from_seed(h.finalize().into())
    }

    pub fn stream(&self) -> Keystream {
        Keystream::new(&self.seed)
    }
}

impl fmt::Debug for StegoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.null {
            return f.write_str("StegoKey(null)");
        }
        write!(f, "StegoKey({}…)", &self.to_hex()[..8])
    }
}

/// xoshiro256** stream seeded from a 256-bit value.
pub struct Keystream {
    rng: Xoshiro256StarStar,
}

impl Keystream {
    pub fn new(seed: &[u8; 32]) -> Self {
        let mut state = [0u8; 32];
        for (lane, chunk) in state.chunks_exact_mut(8).zip(seed.chunks_exact(8)) {
            let word = u64::from_le_bytes(chunk.try_into().unwrap());
            let expanded = SplitMix64::seed_from_u64(word).next_u64();
            lane.copy_from_slice(&expanded.to_le_bytes());
        }
        Keystream {
            rng: Xoshiro256StarStar::from_seed(state),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` from the top 53 bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[-1, 1)`.
    pub fn next_symmetric(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }

    pub fn next_bit(&mut self) -> u8 {
        (self.next_u64() >> 63) as u8
    }

    /// Standard normal via the cosine branch of Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_unit();
        let u2 = self.next_unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// `Rand(K)`: key-derived array with elements in `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptionMask(Tensor3);

impl EncryptionMask {
    pub fn as_tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }
}

pub fn derive_mask(key: &StegoKey, shape: Shape) -> EncryptionMask {
    if key.is_null() {
        return EncryptionMask(Tensor3::zeros(shape));
    }
    let mut stream = key.stream();
    EncryptionMask(Tensor3::from_fn(shape, |_, _, _| stream.next_symmetric()))
}

/// `img + Rand(K)`, element-wise and deliberately unclipped.
pub fn encrypt(img: &ImageTensor, key: &StegoKey) -> ImageTensor {
    let mask = derive_mask(key, img.shape());
    img.add(mask.as_tensor()).expect("mask shape follows image")
}

/// Bernoulli(1/2) bit tensor drawn from the key's stream.
pub fn random_message(seed: &StegoKey, shape: Shape) -> MessageTensor {
    let mut stream = seed.stream();
    let bits = (0..shape.len()).map(|_| stream.next_bit()).collect();
    MessageTensor::from_bits(shape, bits).expect("length matches shape")
}

/// `n` distinct keys, all different from `correct`, derived deterministically
/// from it.
pub fn wrong_key_set(correct: &StegoKey, n: usize) -> Vec<StegoKey> {
    let mut keys: Vec<StegoKey> = Vec::with_capacity(n);
    let mut counter = 0u32;
    while keys.len() < n {
        let candidate = correct.derive(&format!("wrong-key/{counter}"));
        counter += 1;
        if candidate != *correct && !keys.contains(&candidate) {
            keys.push(candidate);
        }
    }
    keys
}
