use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{ChameleonDigest, CryptoError, Element, GroupParams, VrfOutput};

pub type BranchId = u32;

/// Branch holding the genesis block.
pub const DEFAULT_BRANCH: BranchId = 1;

/// Position of a block: branch id and sequence number within the branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockIndex {
    pub branch: BranchId,
    pub seq: u64,
}

impl BlockIndex {
    pub fn new(branch: BranchId, seq: u64) -> Self {
        BlockIndex { branch, seq }
    }
}

impl fmt::Display for BlockIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}#{}", self.branch, self.seq)
    }
}

/// One EMR metadata record waiting for (or holding) a place on the tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetadataPack {
    pub patient_pk: Element,
    pub doctor_pk: Element,
    pub timestamp_ms: u64,
    pub keywords: String,
    pub meta_id: u64,
}

impl MetadataPack {
    /// Canonical encoding; this is the chameleon-hash message.
    ///
    /// Each field is written as a 4-byte big-endian length followed by its
    /// bytes, in declaration order. Elements use the profile's fixed width;
    /// integers are 8-byte big-endian.
    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 * params.width() + 64);
        put_field(&mut out, &params.encode_element(&self.patient_pk));
        put_field(&mut out, &params.encode_element(&self.doctor_pk));
        put_field(&mut out, &self.timestamp_ms.to_be_bytes());
        put_field(&mut out, self.keywords.as_bytes());
        put_field(&mut out, &self.meta_id.to_be_bytes());
        out
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let patient_pk = params.decode_element(r.field()?)?;
        let doctor_pk = params.decode_element(r.field()?)?;
        let timestamp_ms = u64::from_be_bytes(fixed(r.field()?)?);
        let keywords = String::from_utf8(r.field()?.to_vec())
            .map_err(|_| CryptoError::Encoding("keywords are not utf-8".into()))?;
        let meta_id = u64::from_be_bytes(fixed(r.field()?)?);
        r.finish()?;
        Ok(MetadataPack {
            patient_pk,
            doctor_pk,
            timestamp_ms,
            keywords,
            meta_id,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: BlockIndex,
    /// `h` of the predecessor; all-zero for genesis.
    pub pre_hash: Element,
    pub digest: ChameleonDigest,
    pub meta: MetadataPack,
    pub proposer_pk: Element,
    pub vrf: VrfOutput,
    pub committed_round: u64,
}

impl Block {
    /// Binary encoding used by the block store and the BlockMap digest.
    ///
    /// `branch u32 | seq u64 | pre_hash | h | zeta | meta_len u32 | meta |
    /// proposer_pk | vrf.y | vrf.pi | committed_round u64`, all big-endian,
    /// group values at the profile width.
    pub fn encode(&self, params: &GroupParams) -> Vec<u8> {
        let meta = self.meta.encode(params);
        let mut out = Vec::with_capacity(8 * params.width() + meta.len() + 64);
        out.extend_from_slice(&self.index.branch.to_be_bytes());
        out.extend_from_slice(&self.index.seq.to_be_bytes());
        params.write_element(&mut out, &self.pre_hash);
        out.extend_from_slice(&self.digest.encode(params));
        put_field(&mut out, &meta);
        params.write_element(&mut out, &self.proposer_pk);
        out.extend_from_slice(&self.vrf.encode(params));
        out.extend_from_slice(&self.committed_round.to_be_bytes());
        out
    }

    pub fn decode(params: &GroupParams, bytes: &[u8]) -> Result<Self, CryptoError> {
        let w = params.width();
        let mut r = Reader::new(bytes);
        let branch = u32::from_be_bytes(fixed(r.take(4)?)?);
        let seq = u64::from_be_bytes(fixed(r.take(8)?)?);
        let pre_hash = params.decode_element(r.take(w)?)?;
        let digest = ChameleonDigest::decode(params, r.take(2 * w)?)?;
        let meta = MetadataPack::decode(params, r.field()?)?;
        let proposer_pk = params.decode_element(r.take(w)?)?;
        let vrf = VrfOutput::decode(params, r.take(VrfOutput::encoded_len(params))?)?;
        let committed_round = u64::from_be_bytes(fixed(r.take(8)?)?);
        r.finish()?;
        Ok(Block {
            index: BlockIndex { branch, seq },
            pre_hash,
            digest,
            meta,
            proposer_pk,
            vrf,
            committed_round,
        })
    }

    /// The chameleon-hash message of this block.
    pub fn message(&self, params: &GroupParams) -> Vec<u8> {
        self.meta.encode(params)
    }
}

/// A block re-targeted onto new metadata with the patient's trapdoor.
///
/// Shares `h` and `pre_hash` with the block at `origin_index`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionBlock {
    pub block: Block,
    pub origin_index: BlockIndex,
}

fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn fixed<const N: usize>(bytes: &[u8]) -> Result<[u8; N], CryptoError> {
    bytes
        .try_into()
        .map_err(|_| CryptoError::Encoding(format!("expected {N} bytes, got {}", bytes.len())))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.buf.len())
            .ok_or_else(|| CryptoError::Encoding("truncated input".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn field(&mut self) -> Result<&'a [u8], CryptoError> {
        let len = u32::from_be_bytes(fixed(self.take(4)?)?) as usize;
        self.take(len)
    }

    fn finish(self) -> Result<(), CryptoError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CryptoError::Encoding("trailing bytes".into()))
        }
    }
}
