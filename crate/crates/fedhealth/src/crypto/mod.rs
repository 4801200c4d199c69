//! Additively homomorphic encryption of parameter vectors: Paillier keys
//! and ciphertext arithmetic, fixed-point encoding of reals, and the
//! encrypted-parameter frames exchanged during federation.

mod codec;
mod paillier;
mod params;

pub use codec::{CodecSpec, FixedPointCodec};
pub use paillier::{
    add_ciphertexts, decrypt, encrypt, is_probable_prime, keygen, KeyPair, PublicKey, SecretKey,
    MILLER_RABIN_ROUNDS, MIN_KEY_BITS, MIN_SECURE_BITS,
};
pub use params::{decrypt_params, encrypt_params, EncryptedParams};
