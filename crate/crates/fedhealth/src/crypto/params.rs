//! Encrypted parameter vectors: the unit of exchange between server,
//! clients and the key authority.
//!
//! Wire layout (all integers big-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EHP1"
//!      4     8  key id (first 8 bytes of SHA-256 of the modulus)
//!     12    32  architecture fingerprint
//!     44     4  codec scale_bits        (u32)
//!     48     4  codec magnitude_bound   (u32)
//!     52     4  codec max_summands      (u32)
//!     56     4  summand count           (u32)
//!     60     8  ciphertext count        (u64)
//!     68     -  ciphertexts, each a u32 length followed by that many
//!               big-endian magnitude bytes
//! ```
//!
//! The layout is stable so hexdumps of two transfers can be diffed field
//! by field.

use crate::crypto::codec::{CodecSpec, FixedPointCodec};
use crate::crypto::paillier::{self, KeyPair, PublicKey};
use crate::error::{Error, Result};
use crate::nn::{ArchFingerprint, Architecture, ModelParams};
use num_bigint::BigUint;
use rand::Rng;
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 4] = b"EHP1";

#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedParams {
    key_id: [u8; 8],
    fingerprint: ArchFingerprint,
    codec: CodecSpec,
    summands: u32,
    ciphertexts: Vec<BigUint>,
}

impl EncryptedParams {
    pub fn fingerprint(&self) -> ArchFingerprint {
        self.fingerprint
    }

    pub fn codec(&self) -> &CodecSpec {
        &self.codec
    }

    pub fn summands(&self) -> u32 {
        self.summands
    }

    pub fn key_id(&self) -> [u8; 8] {
        self.key_id
    }

    pub fn len(&self) -> usize {
        self.ciphertexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ciphertexts.is_empty()
    }

    /// Homomorphic elementwise sum. Both operands must agree on key, codec
    /// and architecture, and the combined summand count must stay within
    /// the codec budget.
    pub fn add(&self, other: &EncryptedParams, pk: &PublicKey) -> Result<EncryptedParams> {
        if self.key_id != other.key_id || self.key_id != pk.key_id() {
            return Err(Error::protocol(
                "cannot add ciphertexts from different keys".to_string(),
            ));
        }
        if self.fingerprint != other.fingerprint {
            return Err(Error::protocol(format!(
                "architecture mismatch: {} vs {}",
                self.fingerprint, other.fingerprint
            )));
        }
        if self.codec != other.codec {
            return Err(Error::protocol("codec parameters differ".to_string()));
        }
        if self.ciphertexts.len() != other.ciphertexts.len() {
            return Err(Error::protocol(format!(
                "parameter counts differ: {} vs {}",
                self.ciphertexts.len(),
                other.ciphertexts.len()
            )));
        }
        let total = self.summands + other.summands;
        if total > self.codec.max_summands {
            return Err(Error::overflow(format!(
                "{} summands would exceed the budget of {}",
                total, self.codec.max_summands
            )));
        }
        let mut ciphertexts = Vec::with_capacity(self.ciphertexts.len());
        for (a, b) in self.ciphertexts.iter().zip(&other.ciphertexts) {
            ciphertexts.push(paillier::add_ciphertexts(pk, a, b)?);
        }
        Ok(EncryptedParams {
            key_id: self.key_id,
            fingerprint: self.fingerprint,
            codec: self.codec,
            summands: total,
            ciphertexts,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.key_id);
        out.extend_from_slice(&self.fingerprint.0);
        out.extend_from_slice(&self.codec.scale_bits.to_be_bytes());
        out.extend_from_slice(&self.codec.magnitude_bound.to_be_bytes());
        out.extend_from_slice(&self.codec.max_summands.to_be_bytes());
        out.extend_from_slice(&self.summands.to_be_bytes());
        out.extend_from_slice(&(self.ciphertexts.len() as u64).to_be_bytes());
        for c in &self.ciphertexts {
            let bytes = c.to_bytes_be();
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<EncryptedParams> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
            let end = pos.checked_add(len).ok_or_else(truncated)?;
            if end > data.len() {
                return Err(truncated());
            }
            let s = &data[*pos..end];
            *pos = end;
            Ok(s)
        };
        fn truncated() -> Error {
            Error::protocol("encrypted parameter frame truncated".to_string())
        }

        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::protocol(
                "bad magic; not an encrypted parameter frame".to_string(),
            ));
        }
        let mut key_id = [0u8; 8];
        key_id.copy_from_slice(take(&mut pos, 8)?);
        let mut fp = [0u8; 32];
        fp.copy_from_slice(take(&mut pos, 32)?);
        let u32be = |s: &[u8]| u32::from_be_bytes(s.try_into().expect("4 bytes"));
        let codec = CodecSpec {
            scale_bits: u32be(take(&mut pos, 4)?),
            magnitude_bound: u32be(take(&mut pos, 4)?),
            max_summands: u32be(take(&mut pos, 4)?),
        };
        codec.validate().map_err(|e| {
            Error::protocol(format!("frame carries unusable codec parameters: {e}"))
        })?;
        let summands = u32be(take(&mut pos, 4)?);
        if summands == 0 || summands > codec.max_summands {
            return Err(Error::protocol(format!(
                "frame claims {} summands with a budget of {}",
                summands, codec.max_summands
            )));
        }
        let count = u64::from_be_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes"));
        let mut ciphertexts = Vec::new();
        for _ in 0..count {
            let len = u32be(take(&mut pos, 4)?) as usize;
            ciphertexts.push(BigUint::from_bytes_be(take(&mut pos, len)?));
        }
        if pos != data.len() {
            return Err(Error::protocol(format!(
                "{} trailing bytes after encrypted parameter frame",
                data.len() - pos
            )));
        }
        Ok(EncryptedParams {
            key_id,
            fingerprint: ArchFingerprint(fp),
            codec,
            summands,
            ciphertexts,
        })
    }

    /// SHA-256 of the serialized frame, hex-encoded; what audit logs record
    /// instead of payload contents.
    pub fn payload_digest(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        68 + self
            .ciphertexts
            .iter()
            .map(|c| 4 + c.to_bytes_be().len())
            .sum::<usize>()
    }
}

/// Encode-then-encrypt every parameter of a model. The result carries one
/// summand and can be added to other encryptions under the same key.
pub fn encrypt_params<R: Rng>(
    params: &ModelParams,
    pk: &PublicKey,
    spec: CodecSpec,
    rng: &mut R,
) -> Result<EncryptedParams> {
    let codec = FixedPointCodec::new(spec, pk.modulus())?;
    let mut ciphertexts = Vec::with_capacity(params.param_count());
    for layer in params.layers() {
        for (what, tensor) in [("weights", &layer.weights), ("bias", &layer.bias)] {
            for &v in tensor.data() {
                let residue = codec.encode(v).map_err(|e| match e {
                    Error::Range(m) => {
                        Error::range(format!("layer {:?} {}: {}", layer.name, what, m))
                    }
                    other => other,
                })?;
                ciphertexts.push(paillier::encrypt(pk, &residue, rng)?);
            }
        }
    }
    Ok(EncryptedParams {
        key_id: pk.key_id(),
        fingerprint: params.fingerprint(),
        codec: spec,
        summands: 1,
        ciphertexts,
    })
}

/// Decrypt an encrypted parameter vector back into model parameters for
/// `arch`. With `average = true` every decoded value is divided by the
/// summand count (plaintext division after decryption), turning an
/// aggregate into a mean.
pub fn decrypt_params(
    ep: &EncryptedParams,
    kp: &KeyPair,
    arch: &Architecture,
    average: bool,
) -> Result<ModelParams> {
    if ep.key_id != kp.public().key_id() {
        return Err(Error::protocol(
            "encrypted parameters were produced under a different key".to_string(),
        ));
    }
    if ep.fingerprint != arch.fingerprint() {
        return Err(Error::protocol(format!(
            "encrypted parameters are for architecture {}, expected {}",
            ep.fingerprint,
            arch.fingerprint()
        )));
    }
    let codec = FixedPointCodec::new(ep.codec, kp.public().modulus())?;
    let mut flat = Vec::with_capacity(ep.ciphertexts.len());
    for c in &ep.ciphertexts {
        let residue = paillier::decrypt(kp, c)?;
        flat.push(if average {
            codec.decode_mean(&residue, ep.summands)?
        } else {
            codec.decode(&residue)?
        });
    }
    // Unflatten validates that the count matches the architecture.
    ModelParams::unflatten(arch, &flat)
}
