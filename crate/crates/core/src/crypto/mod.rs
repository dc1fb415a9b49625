//! Group arithmetic, chameleon hashing, VRF and the standard hash.

mod chameleon;
mod group;
mod memo;
mod vrf;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use chameleon::{
    chamhash, chamhash_with_zeta, collide, commit, find_collision, keygen, keypair_from_secret,
    message_scalar, verify, ChameleonDigest, KeyPair,
};
pub use group::{is_probable_prime, Element, GroupParams, GroupParamsRecord, Profile, Scalar};
pub use memo::Verifier;
pub use vrf::{sign, verify_signature, vrf_prove, vrf_verify, Signature, VrfOutput};

/// 32-byte SHA-256 digest.
pub type HashDigest = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("invalid group parameters: {0}")]
    Parameters(String),
    #[error("source digest does not verify for the original message")]
    InvalidSource,
    #[error("malformed encoding: {0}")]
    Encoding(String),
}

/// SHA-256.
pub fn std_hash(input: &[u8]) -> HashDigest {
    Sha256::digest(input).into()
}
