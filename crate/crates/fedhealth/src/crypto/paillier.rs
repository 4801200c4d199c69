//! Paillier cryptosystem with the `g = n + 1` generator.
//!
//! Additively homomorphic: the product of two ciphertexts mod n² decrypts
//! to the sum of the plaintexts mod n. Key generation, encryption and
//! decryption follow the textbook construction:
//!
//!   n = p·q,  λ = lcm(p−1, q−1),  μ = λ⁻¹ mod n
//!   enc(m; r) = (1 + m·n) · rⁿ  mod n²
//!   dec(c)    = L(c^λ mod n²) · μ  mod n,   L(x) = (x − 1) / n
//!
//! The `(1 + m·n)` form is the standard shortcut for gⁿ with g = n + 1.

use crate::error::{Error, Result};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Smallest modulus size the library will generate at all. Anything below
/// ~1024 bits is cryptographically weak and exists only to keep tests fast.
pub const MIN_KEY_BITS: u32 = 256;
/// Smallest modulus size considered adequate outside of tests.
pub const MIN_SECURE_BITS: u32 = 1024;
/// Miller-Rabin rounds used during prime generation.
pub const MILLER_RABIN_ROUNDS: u32 = 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    bits: u32,
    key_id: [u8; 8],
}

impl PublicKey {
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// First eight bytes of SHA-256(n), used to detect key mix-ups on the
    /// wire without shipping the modulus around.
    pub fn key_id(&self) -> [u8; 8] {
        self.key_id
    }
}

#[derive(Debug, Clone)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    public: PublicKey,
    secret: SecretKey,
}

impl KeyPair {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }
}

fn key_id_of(n: &BigUint) -> [u8; 8] {
    let digest = Sha256::digest(n.to_bytes_be());
    let mut id = [0u8; 8];
    id.copy_from_slice(&digest[..8]);
    id
}

/// Uniform random BigUint in [0, limit) by rejection sampling over the
/// minimal number of random bytes.
fn random_below<R: Rng>(limit: &BigUint, rng: &mut R) -> BigUint {
    assert!(!limit.is_zero());
    let bits = limit.bits();
    let bytes = ((bits + 7) / 8) as usize;
    let top_mask = if bits % 8 == 0 {
        0xffu8
    } else {
        (1u8 << (bits % 8)) - 1
    };
    loop {
        let mut buf = vec![0u8; bytes];
        rng.fill_bytes(&mut buf);
        buf[0] &= top_mask;
        let candidate = BigUint::from_bytes_be(&buf);
        if &candidate < limit {
            return candidate;
        }
    }
}

fn small_primes() -> Vec<u32> {
    // Sieve of Eratosthenes up to 2048; cheap next to one modpow.
    let n = 2048usize;
    let mut is_comp = vec![false; n];
    let mut primes = Vec::new();
    for i in 2..n {
        if !is_comp[i] {
            primes.push(i as u32);
            let mut j = i * i;
            while j < n {
                is_comp[j] = true;
                j += i;
            }
        }
    }
    primes
}

/// Miller-Rabin with `rounds` random bases. Composites slip through with
/// probability at most 4^(-rounds).
pub fn is_probable_prime<R: Rng>(n: &BigUint, rounds: u32, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in &small_primes() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    // n - 1 = 2^s * d with d odd
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'rounds: for _ in 0..rounds {
        // base in [2, n - 2]
        let a = random_below(&(n - 3u32), rng) + &two;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'rounds;
            }
        }
        return false;
    }
    true
}

fn gen_prime<R: Rng>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut candidate = random_below(&(BigUint::one() << bits), rng);
        // Force the exact bit length (two top bits set so products of two
        // such primes reach the full modulus size) and oddness.
        candidate |= BigUint::one() << (bits - 1);
        candidate |= BigUint::one() << (bits - 2);
        candidate |= BigUint::one();
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return candidate;
        }
    }
}

/// Deterministic keypair for a modulus of `bits` bits (two primes of
/// `bits / 2`). `bits` below [`MIN_KEY_BITS`] or odd is rejected.
pub fn keygen(bits: u32, seed: u64) -> Result<KeyPair> {
    if bits < MIN_KEY_BITS {
        return Err(Error::config(format!(
            "modulus of {} bits is below the {}-bit minimum",
            bits, MIN_KEY_BITS
        )));
    }
    if bits % 2 != 0 {
        return Err(Error::config("modulus bit length must be even"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let half = (bits / 2) as u64;
    let p = gen_prime(half, &mut rng);
    let q = loop {
        let q = gen_prime(half, &mut rng);
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    let n_squared = &n * &n;
    let lambda = (&p - 1u32).lcm(&(&q - 1u32));
    // With g = n + 1, L(g^λ mod n²) = λ mod n, so μ = λ⁻¹ mod n.
    let mu = modinv(&(&lambda % &n), &n).ok_or_else(|| {
        Error::crypto("lambda not invertible mod n; primes degenerate".to_string())
    })?;
    Ok(KeyPair {
        public: PublicKey {
            key_id: key_id_of(&n),
            n,
            n_squared,
            bits,
        },
        secret: SecretKey { lambda, mu },
    })
}

/// Modular inverse by extended Euclid over signed big integers.
fn modinv(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let mut r0 = BigInt::from(m.clone());
    let mut r1 = BigInt::from(a.clone());
    let mut t0 = BigInt::zero();
    let mut t1 = BigInt::one();
    while !r1.is_zero() {
        let q = &r0 / &r1;
        let r2 = &r0 - &q * &r1;
        r0 = std::mem::replace(&mut r1, r2);
        let t2 = &t0 - &q * &t1;
        t0 = std::mem::replace(&mut t1, t2);
    }
    if !r0.is_one() {
        return None;
    }
    let m_int = BigInt::from(m.clone());
    let mut t = t0 % &m_int;
    if t.sign() == num_bigint::Sign::Minus {
        t += &m_int;
    }
    t.to_biguint()
}

/// Encrypts a residue m ∈ [0, n) under `pk` with fresh randomness from
/// `rng`. Same plaintext, different call → different ciphertext.
pub fn encrypt<R: Rng>(pk: &PublicKey, m: &BigUint, rng: &mut R) -> Result<BigUint> {
    if m >= &pk.n {
        return Err(Error::invalid_input(format!(
            "plaintext has {} bits, modulus only {}",
            m.bits(),
            pk.n.bits()
        )));
    }
    let r = loop {
        let r = random_below(&pk.n, rng);
        if !r.is_zero() && r.gcd(&pk.n).is_one() {
            break r;
        }
    };
    let g_m = (BigUint::one() + m * &pk.n) % &pk.n_squared;
    let r_n = r.modpow(&pk.n, &pk.n_squared);
    Ok((g_m * r_n) % &pk.n_squared)
}

/// Decrypts a ciphertext back to its residue in [0, n).
pub fn decrypt(kp: &KeyPair, c: &BigUint) -> Result<BigUint> {
    let pk = &kp.public;
    if c.is_zero() || c >= &pk.n_squared {
        return Err(Error::crypto("ciphertext outside the valid range".to_string()));
    }
    let u = c.modpow(&kp.secret.lambda, &pk.n_squared);
    let u_minus_1 = &u - 1u32;
    let (l, rem) = u_minus_1.div_rem(&pk.n);
    if !rem.is_zero() {
        return Err(Error::crypto(
            "ciphertext does not decrypt under this key".to_string(),
        ));
    }
    Ok((l * &kp.secret.mu) % &pk.n)
}

/// Homomorphic addition: the returned ciphertext decrypts to the sum of
/// the two plaintexts mod n.
pub fn add_ciphertexts(pk: &PublicKey, c1: &BigUint, c2: &BigUint) -> Result<BigUint> {
    if c1 >= &pk.n_squared || c2 >= &pk.n_squared {
        return Err(Error::protocol(
            "ciphertext too large for this key; wrong public key?".to_string(),
        ));
    }
    Ok((c1 * c2) % &pk.n_squared)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_keys() -> KeyPair {
        keygen(MIN_KEY_BITS, 0xfeed).unwrap()
    }

    #[test]
    fn keygen_rejects_weak_and_odd_sizes() {
        assert!(matches!(keygen(128, 1).unwrap_err(), Error::Config(_)));
        assert!(matches!(keygen(257, 1).unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn keygen_is_deterministic_per_seed() {
        let a = keygen(MIN_KEY_BITS, 7).unwrap();
        let b = keygen(MIN_KEY_BITS, 7).unwrap();
        assert_eq!(a.public, b.public);
        let c = keygen(MIN_KEY_BITS, 8).unwrap();
        assert_ne!(a.public.modulus(), c.public.modulus());
    }

    #[test]
    fn modulus_has_requested_size() {
        let kp = test_keys();
        assert_eq!(kp.public.modulus().bits(), MIN_KEY_BITS as u64);
    }

    #[test]
    fn zero_roundtrips() {
        let kp = test_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let c = encrypt(kp.public(), &BigUint::zero(), &mut rng).unwrap();
        assert_eq!(decrypt(&kp, &c).unwrap(), BigUint::zero());
    }

    #[test]
    fn random_messages_roundtrip() {
        let kp = test_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = random_below(kp.public.modulus(), &mut rng);
            let c = encrypt(kp.public(), &m, &mut rng).unwrap();
            assert_eq!(decrypt(&kp, &c).unwrap(), m);
        }
    }

    #[test]
    fn encryption_is_randomized() {
        let kp = test_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let m = BigUint::from(41u32);
        let c1 = encrypt(kp.public(), &m, &mut rng).unwrap();
        let c2 = encrypt(kp.public(), &m, &mut rng).unwrap();
        assert_ne!(c1, c2);
        assert_eq!(decrypt(&kp, &c1).unwrap(), decrypt(&kp, &c2).unwrap());
    }

    #[test]
    fn ciphertext_product_is_plaintext_sum() {
        let kp = test_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let a = BigUint::from(3u32);
        let b = BigUint::from(5u32);
        let ca = encrypt(kp.public(), &a, &mut rng).unwrap();
        let cb = encrypt(kp.public(), &b, &mut rng).unwrap();
        let sum = add_ciphertexts(kp.public(), &ca, &cb).unwrap();
        assert_eq!(decrypt(&kp, &sum).unwrap(), BigUint::from(8u32));
    }

    #[test]
    fn addition_wraps_mod_n() {
        let kp = test_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = kp.public.modulus().clone();
        let a = &n - 1u32;
        let b = BigUint::from(2u32);
        let c = add_ciphertexts(
            kp.public(),
            &encrypt(kp.public(), &a, &mut rng).unwrap(),
            &encrypt(kp.public(), &b, &mut rng).unwrap(),
        )
        .unwrap();
        assert_eq!(decrypt(&kp, &c).unwrap(), BigUint::one());
    }

    #[test]
    fn plaintext_must_fit_modulus() {
        let kp = test_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let too_big = kp.public.modulus().clone();
        assert!(matches!(
            encrypt(kp.public(), &too_big, &mut rng).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn foreign_ciphertext_is_rejected_or_garbage() {
        let kp1 = keygen(MIN_KEY_BITS, 10).unwrap();
        let kp2 = keygen(MIN_KEY_BITS, 11).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let m = BigUint::from(1234u32);
        let c = encrypt(kp1.public(), &m, &mut rng).unwrap();
        // Decrypting under the wrong key must never silently return m.
        match decrypt(&kp2, &c) {
            Ok(got) => assert_ne!(got, m),
            Err(e) => assert!(matches!(e, Error::Crypto(_))),
        }
    }

    #[test]
    fn miller_rabin_agrees_with_known_values() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for p in [2u32, 3, 5, 104729, 1299709] {
            assert!(
                is_probable_prime(&BigUint::from(p), 40, &mut rng),
                "{p} is prime"
            );
        }
        for c in [1u32, 4, 100, 104730, 561, 41041, 825265] {
            // includes Carmichael numbers 561, 41041, 825265
            assert!(
                !is_probable_prime(&BigUint::from(c), 40, &mut rng),
                "{c} is composite"
            );
        }
    }

    #[test]
    fn modinv_matches_fermat_on_prime_modulus() {
        let p = BigUint::from(1299709u32);
        let a = BigUint::from(123456u32);
        let inv = modinv(&a, &p).unwrap();
        assert_eq!((a * inv) % p, BigUint::one());
        // No inverse when gcd > 1.
        assert!(modinv(&BigUint::from(6u32), &BigUint::from(9u32)).is_none());
    }
}
