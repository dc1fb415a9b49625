//! Discrete-log chameleon hash `h = g^H(pk, m) * pk^zeta mod p`.
//!
//! The trapdoor is the discrete log `sk` of `pk`. Knowing it, the owner can
//! move any digest onto a new message by solving
//! `H(m) + sk*zeta = H(m') + sk*zeta'` for `zeta'`. Without it, finding a
//! second preimage is as hard as computing discrete logs in the subgroup.
//!
//! `H` binds the owner's public key into its input, so identical messages
//! hashed for two different owners produce unrelated digests.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::group::{Element, GroupParams, Scalar};
use super::CryptoError;

const MESSAGE_DOMAIN: &[u8] = b"medblocktree/chameleon/message";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyPair {
    pub sk: Scalar,
    pub pk: Element,
}

impl KeyPair {
    /// `sk || pk`, fixed width.
    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 * params.width());
        params.write_scalar(&mut out, &self.sk);
        params.write_element(&mut out, &self.pk);
        out
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        let w = params.width();
        if bytes.len() != 2 * w {
            return Err(CryptoError::Encoding("key pair length".into()));
        }
        let sk = params.decode_scalar(&bytes[..w])?;
        let pk = params.decode_element(&bytes[w..])?;
        if sk.is_zero() || params.pow_g(&sk) != pk {
            return Err(CryptoError::Encoding("pk does not match sk".into()));
        }
        Ok(KeyPair { sk, pk })
    }
}

/// A chameleon hash value together with its check string.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChameleonDigest {
    pub h: Element,
    pub zeta: Scalar,
}

impl ChameleonDigest {
    /// `h || zeta`, fixed width.
    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 * params.width());
        params.write_element(&mut out, &self.h);
        params.write_scalar(&mut out, &self.zeta);
        out
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        let w = params.width();
        if bytes.len() != 2 * w {
            return Err(CryptoError::Encoding("digest length".into()));
        }
        Ok(ChameleonDigest {
            h: params.decode_element(&bytes[..w])?,
            zeta: params.decode_scalar(&bytes[w..])?,
        })
    }
}

/// Draws `sk` uniformly from `[1, q)`.
pub fn keygen<R: RngCore + ?Sized>(params: &GroupParams, rng: &mut R) -> KeyPair {
    let sk = params.random_nonzero_scalar(rng);
    let pk = params.pow_g(&sk);
    KeyPair { sk, pk }
}

pub fn keypair_from_secret(params: &GroupParams, sk: Scalar) -> Result<KeyPair, CryptoError> {
    if sk.is_zero() || sk.value() >= params.q() {
        return Err(CryptoError::Parameters("secret key out of range".into()));
    }
    let pk = params.pow_g(&sk);
    Ok(KeyPair { sk, pk })
}

/// `H(pk, m)` reduced into the scalar field.
pub fn message_scalar(params: &GroupParams, pk: &Element, message: &[u8]) -> Scalar {
    params.hash_to_scalar(MESSAGE_DOMAIN, &[&params.encode_element(pk), message])
}

/// `g^e * pk^zeta mod p` for an already-reduced message scalar `e`.
pub fn commit(params: &GroupParams, pk: &Element, e: &Scalar, zeta: &Scalar) -> Element {
    params.pow_g_mul(e, pk, zeta)
}

pub fn chamhash<R: RngCore + ?Sized>(
    params: &GroupParams,
    pk: &Element,
    message: &[u8],
    rng: &mut R,
) -> Result<ChameleonDigest, CryptoError> {
    let zeta = params.random_scalar(rng);
    chamhash_with_zeta(params, pk, message, zeta)
}

/// Deterministic form of [`chamhash`] with a caller-chosen check string.
pub fn chamhash_with_zeta(
    params: &GroupParams,
    pk: &Element,
    message: &[u8],
    zeta: Scalar,
) -> Result<ChameleonDigest, CryptoError> {
    if !params.contains(pk) {
        return Err(CryptoError::Parameters(
            "public key is not in the subgroup".into(),
        ));
    }
    if zeta.value() >= params.q() {
        return Err(CryptoError::Parameters(
            "check string not reduced mod q".into(),
        ));
    }
    let e = message_scalar(params, pk, message);
    Ok(ChameleonDigest {
        h: commit(params, pk, &e, &zeta),
        zeta,
    })
}

pub fn verify(
    params: &GroupParams,
    pk: &Element,
    message: &[u8],
    digest: &ChameleonDigest,
) -> bool {
    // h needs no membership check: equality with a fresh commitment implies it
    if !params.contains(pk) || digest.zeta.value() >= params.q() {
        return false;
    }
    let e = message_scalar(params, pk, message);
    commit(params, pk, &e, &digest.zeta) == digest.h
}

/// Re-targets `digest` from `old_message` to `new_message` using the trapdoor,
/// after checking that `digest` verifies for `old_message`.
pub fn find_collision(
    params: &GroupParams,
    owner: &KeyPair,
    old_message: &[u8],
    new_message: &[u8],
    digest: &ChameleonDigest,
) -> Result<ChameleonDigest, CryptoError> {
    if !verify(params, &owner.pk, old_message, digest) {
        return Err(CryptoError::InvalidSource);
    }
    collide(params, owner, old_message, new_message, digest)
}

/// The trapdoor step alone. Keeps `h` and returns
/// `zeta' = (H(m) - H(m')) * sk^-1 + zeta mod q`; the result only verifies
/// if `digest` did.
pub fn collide(
    params: &GroupParams,
    owner: &KeyPair,
    old_message: &[u8],
    new_message: &[u8],
    digest: &ChameleonDigest,
) -> Result<ChameleonDigest, CryptoError> {
    let sk_inv = params
        .scalar_inv(&owner.sk)
        .ok_or_else(|| CryptoError::Parameters("zero secret key".into()))?;
    let e_old = message_scalar(params, &owner.pk, old_message);
    let e_new = message_scalar(params, &owner.pk, new_message);
    let delta = params.scalar_sub(&e_old, &e_new);
    let zeta = params.scalar_add(&params.scalar_mul(&delta, &sk_inv), &digest.zeta);
    Ok(ChameleonDigest {
        h: digest.h.clone(),
        zeta,
    })
}
