//! Fixed-point encoding of reals into Paillier residues.
//!
//! A value x with |x| ≤ magnitude_bound becomes the integer
//! m = round(x · 2^scale_bits), mapped into [0, n) with negatives stored
//! as n − |m|. Decoding re-centers around n/2. Because ciphertext addition
//! adds residues mod n, sums stay decodable as long as the running total
//! cannot reach n/2 in absolute value; the `max_summands` budget plus the
//! check in [`FixedPointCodec::new`] guarantee exactly that:
//!
//!   2 · max_summands · (magnitude_bound · 2^scale_bits + 1) < n
//!
//! The +1 absorbs the half-step from rounding.

use crate::error::{Error, Result};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

/// Codec parameters as they travel in headers and configs. The modulus is
/// not part of the spec; parties bind it via [`FixedPointCodec::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSpec {
    /// log2 of the scale; the scale is always a power of two.
    pub scale_bits: u32,
    /// Largest encodable |x|.
    pub magnitude_bound: u32,
    /// How many encodings may be summed before overflow is possible.
    pub max_summands: u32,
}

impl Default for CodecSpec {
    fn default() -> Self {
        CodecSpec {
            scale_bits: 24,
            magnitude_bound: 128,
            max_summands: 64,
        }
    }
}

impl CodecSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale_bits == 0 || self.scale_bits > 48 {
            return Err(Error::config(format!(
                "scale_bits must be in 1..=48, got {}",
                self.scale_bits
            )));
        }
        if self.magnitude_bound == 0 || self.max_summands == 0 {
            return Err(Error::config(
                "magnitude bound and max_summands must be positive",
            ));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.scale_bits) as f64
    }

    /// Largest |integer| an encoding can produce, rounding included.
    fn max_encoded(&self) -> u128 {
        (self.magnitude_bound as u128) * (1u128 << self.scale_bits) + 1
    }

    /// Largest |integer| a full budget of summands can accumulate to.
    fn max_accumulated(&self) -> u128 {
        self.max_summands as u128 * self.max_encoded()
    }
}

/// A [`CodecSpec`] bound to a concrete modulus, ready to encode residues.
#[derive(Debug, Clone)]
pub struct FixedPointCodec {
    spec: CodecSpec,
    modulus: BigUint,
    half_modulus: BigUint,
}

impl FixedPointCodec {
    /// Binds the codec to a modulus, rejecting combinations that could
    /// wrap: the accumulated magnitude must stay below n/2.
    pub fn new(spec: CodecSpec, modulus: &BigUint) -> Result<FixedPointCodec> {
        spec.validate()?;
        let needed = BigUint::from(2u32 * spec.max_summands) * BigUint::from(spec.max_encoded());
        if &needed >= modulus {
            return Err(Error::config(format!(
                "modulus of {} bits too small for scale 2^{}, bound {}, {} summands",
                modulus.bits(),
                spec.scale_bits,
                spec.magnitude_bound,
                spec.max_summands
            )));
        }
        Ok(FixedPointCodec {
            spec,
            modulus: modulus.clone(),
            half_modulus: modulus >> 1,
        })
    }

    pub fn spec(&self) -> &CodecSpec {
        &self.spec
    }

    /// round(x · scale) as a signed integer, before residue mapping.
    pub fn encode_integer(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(Error::invalid_input(format!("cannot encode {x}")));
        }
        if x.abs() > self.spec.magnitude_bound as f64 {
            return Err(Error::range(format!(
                "value {} exceeds magnitude bound {}",
                x, self.spec.magnitude_bound
            )));
        }
        Ok((x * self.spec.scale()).round() as i64)
    }

    /// Encodes a real into a residue in [0, n).
    pub fn encode(&self, x: f64) -> Result<BigUint> {
        let m = self.encode_integer(x)?;
        Ok(self.to_residue(m))
    }

    /// Maps a signed integer into [0, n): negatives become n − |m|.
    pub fn to_residue(&self, m: i64) -> BigUint {
        if m >= 0 {
            BigUint::from(m as u64)
        } else {
            &self.modulus - BigUint::from(m.unsigned_abs())
        }
    }

    /// Recovers the signed integer behind a residue. Values whose magnitude
    /// exceeds the accumulation budget are rejected: they cannot have been
    /// produced by in-contract encodes and usually mean key or data mix-ups.
    pub fn from_residue(&self, r: &BigUint) -> Result<i128> {
        if r >= &self.modulus {
            return Err(Error::range(
                "residue not reduced modulo this codec's modulus".to_string(),
            ));
        }
        let limit = self.spec.max_accumulated();
        let (negative, magnitude) = if r > &self.half_modulus {
            (true, &self.modulus - r)
        } else {
            (false, r.clone())
        };
        let mag = magnitude
            .to_u128()
            .filter(|&m| m <= limit)
            .ok_or_else(|| {
                Error::range(format!(
                    "decoded magnitude exceeds the accumulation budget of {}",
                    limit
                ))
            })?;
        Ok(if negative { -(mag as i128) } else { mag as i128 })
    }

    /// Decodes a residue into a real: centered lift divided by the scale.
    pub fn decode(&self, r: &BigUint) -> Result<f64> {
        Ok(self.from_residue(r)? as f64 / self.spec.scale())
    }

    /// Decode with a plaintext division, used to turn an aggregate of
    /// `divisor` summands into their mean.
    pub fn decode_mean(&self, r: &BigUint, divisor: u32) -> Result<f64> {
        if divisor == 0 {
            return Err(Error::config("divisor must be positive"));
        }
        Ok(self.from_residue(r)? as f64 / (divisor as f64 * self.spec.scale()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn codec(spec: CodecSpec) -> FixedPointCodec {
        // Modulus comfortably above the overflow threshold.
        let n = BigUint::from(1u8) << 80;
        FixedPointCodec::new(spec, &n).unwrap()
    }

    #[test]
    fn encode_matches_hand_value() {
        let c = codec(CodecSpec {
            scale_bits: 16,
            magnitude_bound: 8,
            max_summands: 4,
        });
        // 1.5 * 2^16
        assert_eq!(c.encode_integer(1.5).unwrap(), 98304);
        assert_eq!(c.encode(1.5).unwrap(), BigUint::from(98304u32));
    }

    #[test]
    fn roundtrip_within_half_step() {
        let c = codec(CodecSpec::default());
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let tol = 1.0 / c.spec().scale();
        for _ in 0..2000 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let back = c.decode(&c.encode(x).unwrap()).unwrap();
            assert!(
                (back - x).abs() <= tol,
                "x={x} back={back} err={}",
                (back - x).abs()
            );
        }
    }

    #[test]
    fn negation_cancels_under_modular_sum() {
        let c = codec(CodecSpec::default());
        let n = BigUint::from(1u8) << 80;
        for x in [0.125, 3.75, 127.0, 0.0] {
            let pos = c.encode(x).unwrap();
            let neg = c.encode(-x).unwrap();
            let sum = (pos + neg) % &n;
            assert_eq!(c.decode(&sum).unwrap(), 0.0);
        }
    }

    #[test]
    fn negative_values_lift_correctly() {
        let c = codec(CodecSpec::default());
        let r = c.encode(-2.5).unwrap();
        // Residue is near the modulus, decode recenters.
        assert!(r > (BigUint::from(1u8) << 79));
        assert_eq!(c.decode(&r).unwrap(), -2.5);
    }

    #[test]
    fn magnitude_bound_is_enforced() {
        let c = codec(CodecSpec::default());
        assert!(c.encode(128.0).is_ok());
        let err = c.encode(128.5).unwrap_err();
        assert!(matches!(err, Error::Range(_)));
        assert!(matches!(
            c.encode(f64::INFINITY).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn sums_up_to_budget_never_wrap() {
        let spec = CodecSpec {
            scale_bits: 10,
            magnitude_bound: 4,
            max_summands: 8,
        };
        // Smallest modulus the codec accepts plus a little headroom.
        let n = BigUint::from(2u32 * 8 * (4 * 1024 + 1) + 5u32);
        let c = FixedPointCodec::new(spec, &n).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..200 {
            let xs: Vec<f64> = (0..8).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut acc = BigUint::from(0u8);
            for &x in &xs {
                acc = (acc + c.encode(x).unwrap()) % &n;
            }
            let want: f64 = xs.iter().sum();
            let got = c.decode(&acc).unwrap();
            assert!(
                (got - want).abs() <= 8.0 / c.spec().scale(),
                "sum {want} decoded as {got}"
            );
        }
    }

    #[test]
    fn too_small_modulus_is_rejected() {
        // Default spec needs 2 * 64 * (128 * 2^24 + 1) = 2^38 + 128.
        let spec = CodecSpec::default();
        let tiny = BigUint::from(1u64 << 38);
        assert!(matches!(
            FixedPointCodec::new(spec, &tiny).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn out_of_budget_residue_is_rejected() {
        let c = codec(CodecSpec::default());
        // A residue near n/2 cannot come from in-contract sums.
        let r = BigUint::from(1u8) << 79;
        assert!(matches!(c.from_residue(&r).unwrap_err(), Error::Range(_)));
    }

    #[test]
    fn decode_mean_divides() {
        let c = codec(CodecSpec::default());
        let n = BigUint::from(1u8) << 80;
        let sum = (c.encode(3.0).unwrap() + c.encode(5.0).unwrap()) % &n;
        let mean = c.decode_mean(&sum, 2).unwrap();
        assert!((mean - 4.0).abs() <= 1.0 / c.spec().scale());
    }
}
