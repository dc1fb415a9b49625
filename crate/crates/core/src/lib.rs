//! MedBlockTree: a multi-branch ledger for EMR metadata whose branches grow
//! from chameleon-hash collision blocks, the EnhancedPro consensus that
//! commits one block per branch per round, an append-only block store, and a
//! deterministic network simulator with a single-chain baseline.

pub mod consensus;
pub mod crypto;
pub mod netsim;
pub mod store;
pub mod tree;
