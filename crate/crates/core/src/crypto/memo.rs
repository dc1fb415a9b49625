use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::group::domain_hash;
use super::{ChameleonDigest, Element, GroupParams, Signature, VrfOutput};

/// Verification front-end with an optional shared result cache.
///
/// Every check here is a pure function of its inputs, so a cached answer is
/// indistinguishable from recomputing it. A simulation hands one shared cache
/// to all of its worker replicas so a block or vote verified by one replica
/// is not re-verified by the others. The key is a SHA-256 over the complete
/// verification input.
type Cache = Arc<Mutex<HashMap<[u8; 32], bool>>>;

#[derive(Clone, Debug, Default)]
pub struct Verifier {
    cache: Option<Cache>,
}

impl Verifier {
    /// Always recomputes.
    pub fn direct() -> Self {
        Verifier { cache: None }
    }

    pub fn cached() -> Self {
        Verifier {
            cache: Some(Arc::default()),
        }
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    fn memo(&self, key: impl FnOnce() -> [u8; 32], compute: impl FnOnce() -> bool) -> bool {
        let Some(cache) = &self.cache else {
            return compute();
        };
        let key = key();
        if let Some(hit) = cache.lock().expect("verifier cache poisoned").get(&key) {
            return *hit;
        }
        let result = compute();
        cache
            .lock()
            .expect("verifier cache poisoned")
            .insert(key, result);
        result
    }

    pub fn chameleon(
        &self,
        params: &GroupParams,
        pk: &Element,
        message: &[u8],
        digest: &ChameleonDigest,
    ) -> bool {
        self.memo(
            || {
                domain_hash(
                    b"chameleon",
                    &[&params.encode_element(pk), message, &digest.encode(params)],
                )
            },
            || super::verify(params, pk, message, digest),
        )
    }

    pub fn signature(
        &self,
        params: &GroupParams,
        pk: &Element,
        domain: &[u8],
        msg: &[u8],
        sig: &Signature,
    ) -> bool {
        self.memo(
            || {
                domain_hash(
                    b"signature",
                    &[&params.encode_element(pk), domain, msg, &sig.encode(params)],
                )
            },
            || super::verify_signature(params, pk, domain, msg, sig),
        )
    }

    pub fn vrf(&self, params: &GroupParams, pk: &Element, input: &[u8], out: &VrfOutput) -> bool {
        self.memo(
            || {
                domain_hash(
                    b"vrf",
                    &[&params.encode_element(pk), input, &out.encode(params)],
                )
            },
            || super::vrf_verify(params, pk, input, out),
        )
    }
}
