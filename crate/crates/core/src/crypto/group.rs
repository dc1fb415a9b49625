//! Prime-order subgroup of `Z_p^*` for a safe prime `p = 2q + 1`.
//!
//! Every primitive in this crate (chameleon hash, VRF, vote signatures) works
//! in the order-`q` subgroup of quadratic residues. Scalars live in `[0, q)`,
//! group elements in `[1, p)`. Both encode as fixed-width big-endian byte
//! strings whose width is the byte length of `p`.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use crypto_bigint::modular::{BoxedMontyForm, BoxedMontyParams};
use crypto_bigint::{BoxedUint, Odd};
use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use super::CryptoError;

/// 512-bit safe prime used by the fast test profile.
const TEST_P_HEX: &str = "ba178d064f16431f9c9877defac2a3921b0f6bec15a684b08ac9abd93321bbd7\
                          b531802249541b469add199f61006759f76f7f39444faaa16ea56a0e5392c2e7";

/// 2048-bit MODP group 14 prime (RFC 3526).
const DEMO_P_HEX: &str = "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
                          020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
                          4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
                          EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
                          98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
                          9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
                          E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
                          3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// Bases for the Miller-Rabin test; enough for the parameter checks done here.
const WITNESSES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// An integer modulo `q`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scalar(pub(crate) BigUint);

/// A member of the order-`q` subgroup, or the all-zero sentinel.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(pub(crate) BigUint);

impl Scalar {
    pub fn from_u64(v: u64) -> Self {
        Scalar(BigUint::from(v))
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl Element {
    /// The all-zero encoding; never a valid group member.
    pub fn zero() -> Self {
        Element(BigUint::zero())
    }

    pub fn from_u64(v: u64) -> Self {
        Element(BigUint::from(v))
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", short_hex(&self.0))
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Element({})", short_hex(&self.0))
    }
}

fn short_hex(v: &BigUint) -> String {
    let s = v.to_str_radix(16);
    if s.len() > 12 {
        format!("{}..", &s[..12])
    } else {
        s
    }
}

macro_rules! hex_serde {
    ($ty:ident) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.0.to_str_radix(16))
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                BigUint::parse_bytes(s.as_bytes(), 16)
                    .map($ty)
                    .ok_or_else(|| serde::de::Error::custom(format!("invalid hex integer {s:?}")))
            }
        }
    };
}

hex_serde!(Scalar);
hex_serde!(Element);

/// Named parameter sets shipped with the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 512-bit safe prime; used by tests and simulations.
    Test,
    /// 2048-bit RFC 3526 group 14.
    Demo,
}

impl Profile {
    pub fn params(self) -> Arc<GroupParams> {
        match self {
            Profile::Test => GroupParams::test_profile(),
            Profile::Demo => GroupParams::demo_profile(),
        }
    }
}

impl FromStr for Profile {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test" => Ok(Profile::Test),
            "demo" => Ok(Profile::Demo),
            other => Err(CryptoError::Parameters(format!(
                "unknown group profile {other:?}"
            ))),
        }
    }
}

/// Group description plus a Montgomery backend and a fixed-base table for `g`.
#[derive(Clone)]
pub struct GroupParams {
    p: Element,
    q: Scalar,
    g: Element,
    width: usize,
    backend: Arc<Backend>,
}

/// Serializable form of [`GroupParams`]; re-validated on the way back in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupParamsRecord {
    pub p: Element,
    pub q: Scalar,
    pub g: Element,
}

impl PartialEq for GroupParams {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.q == other.q && self.g == other.g
    }
}

impl Eq for GroupParams {}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("bits", &self.p.0.bits())
            .field("g", &self.g.0)
            .finish()
    }
}

impl GroupParams {
    /// Checks that `p` is a safe prime with `q = (p - 1) / 2` and that `g`
    /// generates the order-`q` subgroup.
    pub fn new(p: BigUint, q: BigUint, g: BigUint) -> Result<Self, CryptoError> {
        let err = |m: &str| Err(CryptoError::Parameters(m.to_string()));
        if p < BigUint::from(7u32) {
            return err("modulus too small");
        }
        if (&p - 1u32) != &q << 1 {
            return err("q must equal (p - 1) / 2");
        }
        if !is_probable_prime(&q) || !is_probable_prime(&p) {
            return err("p and q must both be prime");
        }
        if g <= BigUint::one() || g >= p {
            return err("generator out of range");
        }
        if !g.modpow(&q, &p).is_one() {
            return err("generator does not have order q");
        }
        Ok(Self::unchecked(p, q, g))
    }

    fn unchecked(p: BigUint, q: BigUint, g: BigUint) -> Self {
        let width = p.bits().div_ceil(8) as usize;
        let backend = Arc::new(Backend::new(&p, &q, &g));
        GroupParams {
            p: Element(p),
            q: Scalar(q),
            g: Element(g),
            width,
            backend,
        }
    }

    fn from_safe_prime_hex(hex: &str) -> Self {
        let p = BigUint::parse_bytes(hex.as_bytes(), 16).expect("shipped prime is valid hex");
        let q = (&p - 1u32) >> 1;
        Self::new(p, q, BigUint::from(4u32)).expect("shipped parameters are valid")
    }

    /// The 512-bit profile, validated once per process.
    pub fn test_profile() -> Arc<GroupParams> {
        static CELL: OnceLock<Arc<GroupParams>> = OnceLock::new();
        CELL.get_or_init(|| Arc::new(Self::from_safe_prime_hex(TEST_P_HEX)))
            .clone()
    }

    /// The 2048-bit profile, validated once per process.
    pub fn demo_profile() -> Arc<GroupParams> {
        static CELL: OnceLock<Arc<GroupParams>> = OnceLock::new();
        CELL.get_or_init(|| Arc::new(Self::from_safe_prime_hex(DEMO_P_HEX)))
            .clone()
    }

    pub fn to_record(&self) -> GroupParamsRecord {
        GroupParamsRecord {
            p: self.p.clone(),
            q: self.q.clone(),
            g: self.g.clone(),
        }
    }

    /// Rebuilds parameters from a record, reusing a shipped profile when the
    /// record matches one.
    pub fn from_record(record: GroupParamsRecord) -> Result<Arc<Self>, CryptoError> {
        for shipped in [Self::test_profile(), Self::demo_profile()] {
            if shipped.to_record() == record {
                return Ok(shipped);
            }
        }
        Self::new(record.p.0, record.q.0, record.g.0).map(Arc::new)
    }

    pub fn p(&self) -> &BigUint {
        &self.p.0
    }

    pub fn q(&self) -> &BigUint {
        &self.q.0
    }

    pub fn g(&self) -> &Element {
        &self.g
    }

    /// Encoded byte width of scalars and elements.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> u64 {
        self.p.0.bits()
    }

    pub fn pow_g(&self, e: &Scalar) -> Element {
        let b = &self.backend;
        Element(b.retrieve(&b.pow_g(&e.0)))
    }

    pub fn pow(&self, base: &Element, e: &Scalar) -> Element {
        let b = &self.backend;
        Element(b.retrieve(&b.pow(&b.to_monty(&base.0), &e.0)))
    }

    /// `g^a * base^b`, the shape of both the chameleon commitment and the
    /// Schnorr verification equation.
    pub fn pow_g_mul(&self, a: &Scalar, base: &Element, b: &Scalar) -> Element {
        let be = &self.backend;
        let lhs = be.pow_g(&a.0);
        let rhs = be.pow(&be.to_monty(&base.0), &b.0);
        Element(be.retrieve(&lhs.mul(&rhs)))
    }

    pub fn mul(&self, a: &Element, b: &Element) -> Element {
        Element((&a.0 * &b.0) % &self.p.0)
    }

    pub fn invert(&self, a: &Element) -> Option<Element> {
        a.0.modinv(&self.p.0).map(Element)
    }

    /// Subgroup membership. For a safe prime the order-`q` subgroup is exactly
    /// the set of quadratic residues, so a Jacobi symbol suffices.
    pub fn contains(&self, x: &Element) -> bool {
        !x.0.is_zero() && x.0 < self.p.0 && jacobi(&x.0, &self.p.0) == 1
    }

    pub fn scalar(&self, v: BigUint) -> Scalar {
        Scalar(v % &self.q.0)
    }

    pub fn scalar_add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % &self.q.0)
    }

    pub fn scalar_sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        let q = &self.q.0;
        Scalar((&a.0 + q - (&b.0 % q)) % q)
    }

    pub fn scalar_mul(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 * &b.0) % &self.q.0)
    }

    pub fn scalar_inv(&self, a: &Scalar) -> Option<Scalar> {
        if a.0.is_zero() {
            return None;
        }
        self.backend.invert_scalar(&a.0).map(Scalar)
    }

    /// Uniform in `[0, q)`.
    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(rng.gen_biguint_below(&self.q.0))
    }

    /// Uniform in `[1, q)`.
    pub fn random_nonzero_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        let below = &self.q.0 - 1u32;
        Scalar(rng.gen_biguint_below(&below) + 1u32)
    }

    /// SHA-256 over a domain tag and length-prefixed parts, reduced mod `q`.
    pub fn hash_to_scalar(&self, domain: &[u8], parts: &[&[u8]]) -> Scalar {
        let digest = domain_hash(domain, parts);
        self.scalar(BigUint::from_bytes_be(&digest))
    }

    pub fn encode_element(&self, e: &Element) -> Vec<u8> {
        fixed_width(&e.0, self.width)
    }

    pub fn encode_scalar(&self, s: &Scalar) -> Vec<u8> {
        fixed_width(&s.0, self.width)
    }

    pub fn write_element(&self, out: &mut Vec<u8>, e: &Element) {
        out.extend_from_slice(&fixed_width(&e.0, self.width));
    }

    pub fn write_scalar(&self, out: &mut Vec<u8>, s: &Scalar) {
        out.extend_from_slice(&fixed_width(&s.0, self.width));
    }

    /// Accepts the zero sentinel as well as any value below `p`.
    pub fn decode_element(&self, bytes: &[u8]) -> Result<Element, CryptoError> {
        if bytes.len() != self.width {
            return Err(CryptoError::Encoding(format!(
                "element must be {} bytes, got {}",
                self.width,
                bytes.len()
            )));
        }
        let v = BigUint::from_bytes_be(bytes);
        if v >= self.p.0 {
            return Err(CryptoError::Encoding("element not reduced mod p".into()));
        }
        Ok(Element(v))
    }

    pub fn decode_scalar(&self, bytes: &[u8]) -> Result<Scalar, CryptoError> {
        if bytes.len() != self.width {
            return Err(CryptoError::Encoding(format!(
                "scalar must be {} bytes, got {}",
                self.width,
                bytes.len()
            )));
        }
        let v = BigUint::from_bytes_be(bytes);
        if v >= self.q.0 {
            return Err(CryptoError::Encoding("scalar not reduced mod q".into()));
        }
        Ok(Scalar(v))
    }
}

pub(crate) fn domain_hash(domain: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((domain.len() as u32).to_be_bytes());
    h.update(domain);
    for part in parts {
        h.update((part.len() as u32).to_be_bytes());
        h.update(part);
    }
    h.finalize().into()
}

fn fixed_width(v: &BigUint, width: usize) -> Vec<u8> {
    let bytes = v.to_bytes_be();
    let bytes: &[u8] = if v.is_zero() { &[] } else { &bytes };
    assert!(bytes.len() <= width, "value wider than encoding width");
    let mut out = vec![0u8; width - bytes.len()];
    out.extend_from_slice(bytes);
    out
}

/// Jacobi symbol `(a / n)` for odd `n`, binary algorithm on 64-bit limbs.
fn jacobi(a: &BigUint, n: &BigUint) -> i8 {
    let mut a = (a % n).to_u64_digits();
    let mut n = n.to_u64_digits();
    let mut t = 1i8;
    loop {
        trim(&mut a);
        if a.is_empty() {
            trim(&mut n);
            return if n == [1] { t } else { 0 };
        }
        let tz = limbs_trailing_zeros(&a);
        if tz > 0 {
            shr_in_place(&mut a, tz);
            let n8 = n[0] & 7;
            if tz % 2 == 1 && (n8 == 3 || n8 == 5) {
                t = -t;
            }
        }
        if limbs_cmp(&a, &n) == std::cmp::Ordering::Less {
            std::mem::swap(&mut a, &mut n);
            if a[0] & 3 == 3 && n[0] & 3 == 3 {
                t = -t;
            }
        }
        sub_in_place(&mut a, &n);
    }
}

fn trim(v: &mut Vec<u64>) {
    while v.last() == Some(&0) {
        v.pop();
    }
}

fn limbs_trailing_zeros(v: &[u64]) -> u32 {
    let mut tz = 0;
    for limb in v {
        if *limb == 0 {
            tz += 64;
        } else {
            return tz + limb.trailing_zeros();
        }
    }
    tz
}

fn shr_in_place(v: &mut Vec<u64>, bits: u32) {
    let limbs = (bits / 64) as usize;
    let rem = bits % 64;
    v.drain(..limbs.min(v.len()));
    if rem > 0 {
        for i in 0..v.len() {
            let hi = v.get(i + 1).copied().unwrap_or(0);
            v[i] = (v[i] >> rem) | (hi << (64 - rem));
        }
    }
    trim(v);
}

fn limbs_cmp(a: &[u64], b: &[u64]) -> std::cmp::Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.iter().rev().cmp(b.iter().rev()))
}

/// `a -= b` for `a >= b`.
fn sub_in_place(a: &mut [u64], b: &[u64]) {
    let mut borrow = false;
    for (i, limb) in a.iter_mut().enumerate() {
        let rhs = b.get(i).copied().unwrap_or(0);
        let (d1, o1) = limb.overflowing_sub(rhs);
        let (d2, o2) = d1.overflowing_sub(u64::from(borrow));
        *limb = d2;
        borrow = o1 || o2;
    }
}

/// Montgomery arithmetic modulo `p` with a 4-bit fixed-base table for `g`.
struct Backend {
    params: BoxedMontyParams,
    q: Odd<BoxedUint>,
    precision: u32,
    /// `g_table[i][d - 1] = g^(d * 16^i)`
    g_table: Vec<Vec<BoxedMontyForm>>,
}

impl Backend {
    fn new(p: &BigUint, q: &BigUint, g: &BigUint) -> Self {
        let precision = (p.bits().div_ceil(64) * 64) as u32;
        let modulus = uint_from(p, precision);
        let params = BoxedMontyParams::new(Odd::new(modulus).expect("modulus is odd"));
        let exp_bits = q.bits();
        let mut backend = Backend {
            params,
            q: Odd::new(uint_from(q, precision)).expect("q is odd"),
            precision,
            g_table: Vec::new(),
        };
        let windows = exp_bits.div_ceil(4) as usize;
        let mut base = backend.to_monty(g);
        let mut table = Vec::with_capacity(windows);
        for _ in 0..windows {
            let mut row = Vec::with_capacity(15);
            let mut acc = base.clone();
            row.push(acc.clone());
            for _ in 2..16 {
                acc = acc.mul(&base);
                row.push(acc.clone());
            }
            // next window base: base^16
            base = acc.mul(&base);
            table.push(row);
        }
        backend.g_table = table;
        backend
    }

    fn to_monty(&self, v: &BigUint) -> BoxedMontyForm {
        BoxedMontyForm::new(uint_from(v, self.precision), &self.params)
    }

    fn retrieve(&self, v: &BoxedMontyForm) -> BigUint {
        BigUint::from_bytes_be(&v.retrieve().to_be_bytes())
    }

    /// `a^-1 mod q`, constant time in `a`.
    fn invert_scalar(&self, a: &BigUint) -> Option<BigUint> {
        let inv: Option<BoxedUint> = uint_from(a, self.precision).invert_odd_mod(&self.q).into();
        inv.map(|v| BigUint::from_bytes_be(&v.to_be_bytes()))
    }

    fn pow_g(&self, e: &BigUint) -> BoxedMontyForm {
        let mut acc = BoxedMontyForm::one(&self.params);
        for (i, byte) in e.to_bytes_le().into_iter().enumerate() {
            for (j, nibble) in [byte & 0x0f, byte >> 4].into_iter().enumerate() {
                if nibble == 0 {
                    continue;
                }
                match self.g_table.get(2 * i + j) {
                    Some(row) => acc = acc.mul(&row[nibble as usize - 1]),
                    // exponent wider than the table: fall back for the rest
                    None => return self.pow_g_slow(e),
                }
            }
        }
        acc
    }

    fn pow_g_slow(&self, e: &BigUint) -> BoxedMontyForm {
        let g = self.g_table[0][0].clone();
        self.pow(&g, e)
    }

    /// Fixed 4-bit window, most significant nibble first. Not constant time.
    fn pow(&self, base: &BoxedMontyForm, e: &BigUint) -> BoxedMontyForm {
        let mut powers = Vec::with_capacity(16);
        powers.push(BoxedMontyForm::one(&self.params));
        for i in 1..16 {
            let next = powers[i - 1].mul(base);
            powers.push(next);
        }
        let mut acc = BoxedMontyForm::one(&self.params);
        let mut started = false;
        for byte in e.to_bytes_be() {
            for nibble in [byte >> 4, byte & 0x0f] {
                if started {
                    for _ in 0..4 {
                        acc = acc.square();
                    }
                }
                if nibble != 0 {
                    acc = acc.mul(&powers[nibble as usize]);
                    started = true;
                }
            }
        }
        acc
    }
}

fn uint_from(v: &BigUint, precision: u32) -> BoxedUint {
    let bytes = v.to_bytes_be();
    let len = (precision / 8) as usize;
    let mut padded = vec![0u8; len - bytes.len().min(len)];
    padded.extend_from_slice(&bytes[bytes.len().saturating_sub(len)..]);
    BoxedUint::from_be_slice(&padded, precision).expect("value fits precision")
}

/// Miller-Rabin with fixed small-prime witnesses.
pub fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for w in WITNESSES {
        let w = BigUint::from(w);
        if *n == w {
            return true;
        }
        if (n % &w).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for w in WITNESSES {
        let mut x = BigUint::from(w).modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
