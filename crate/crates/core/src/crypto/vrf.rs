//! Deterministic Schnorr signatures and a signature-then-hash VRF.
//!
//! The nonce is derived from the secret key and the signed bytes, so a given
//! `(sk, input)` pair always yields the same proof. The VRF output is the
//! hash of that proof.

use serde::{Deserialize, Serialize};

use super::chameleon::KeyPair;
use super::group::{domain_hash, Element, GroupParams, Scalar};
use super::CryptoError;

const NONCE_DOMAIN: &[u8] = b"medblocktree/schnorr/nonce";
const CHALLENGE_DOMAIN: &[u8] = b"medblocktree/schnorr/challenge";
const VRF_DOMAIN: &[u8] = b"medblocktree/vrf/prove";
const VRF_OUTPUT_DOMAIN: &[u8] = b"medblocktree/vrf/output";

/// Schnorr signature `(R, s)` with `g^s = R * pk^c`, `c = H(pk, R, msg)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub r: Element,
    pub s: Scalar,
}

impl Signature {
    /// `R || s`, fixed width.
    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 * params.width());
        params.write_element(&mut out, &self.r);
        params.write_scalar(&mut out, &self.s);
        out
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        let w = params.width();
        if bytes.len() != 2 * w {
            return Err(CryptoError::Encoding("signature length".into()));
        }
        Ok(Signature {
            r: params.decode_element(&bytes[..w])?,
            s: params.decode_scalar(&bytes[w..])?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VrfOutput {
    #[serde(with = "hex_array")]
    pub y: [u8; 32],
    pub pi: Signature,
}

impl VrfOutput {
    /// `y || pi`; 32 bytes followed by two scalars.
    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 2 * params.width());
        out.extend_from_slice(&self.y);
        out.extend_from_slice(&self.pi.encode(params));
        out
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != 32 + 2 * params.width() {
            return Err(CryptoError::Encoding("vrf output length".into()));
        }
        let mut y = [0u8; 32];
        y.copy_from_slice(&bytes[..32]);
        Ok(VrfOutput {
            y,
            pi: Signature::decode(params, &bytes[32..])?,
        })
    }

    pub fn encoded_len(params: &GroupParams) -> usize {
        32 + 2 * params.width()
    }
}

fn challenge(params: &GroupParams, pk: &Element, r: &Element, domain: &[u8], msg: &[u8]) -> Scalar {
    params.hash_to_scalar(
        CHALLENGE_DOMAIN,
        &[
            &params.encode_element(pk),
            &params.encode_element(r),
            domain,
            msg,
        ],
    )
}

/// Signs `msg` under `domain`. Deterministic in `(sk, domain, msg)`.
pub fn sign(params: &GroupParams, kp: &KeyPair, domain: &[u8], msg: &[u8]) -> Signature {
    let sk_bytes = params.encode_scalar(&kp.sk);
    let mut k = params.hash_to_scalar(NONCE_DOMAIN, &[&sk_bytes, domain, msg]);
    if k.is_zero() {
        k = Scalar::from_u64(1);
    }
    let r = params.pow_g(&k);
    let c = challenge(params, &kp.pk, &r, domain, msg);
    let s = params.scalar_add(&k, &params.scalar_mul(&c, &kp.sk));
    Signature { r, s }
}

pub fn verify_signature(
    params: &GroupParams,
    pk: &Element,
    domain: &[u8],
    msg: &[u8],
    sig: &Signature,
) -> bool {
    if !params.contains(pk)
        || sig.r.is_zero()
        || sig.r.value() >= params.p()
        || sig.s.value() >= params.q()
    {
        return false;
    }
    let c = challenge(params, pk, &sig.r, domain, msg);
    params.pow_g(&sig.s) == params.mul(&sig.r, &params.pow(pk, &c))
}

fn output_of(params: &GroupParams, pi: &Signature) -> [u8; 32] {
    domain_hash(VRF_OUTPUT_DOMAIN, &[&pi.encode(params)])
}

pub fn vrf_prove(params: &GroupParams, kp: &KeyPair, input: &[u8]) -> VrfOutput {
    let pi = sign(params, kp, VRF_DOMAIN, input);
    VrfOutput {
        y: output_of(params, &pi),
        pi,
    }
}

pub fn vrf_verify(params: &GroupParams, pk: &Element, input: &[u8], out: &VrfOutput) -> bool {
    output_of(params, &out.pi) == out.y && verify_signature(params, pk, VRF_DOMAIN, input, &out.pi)
}

mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}
