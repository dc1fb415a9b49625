use std::fmt;

use super::block::{BlockIndex, BranchId, DEFAULT_BRANCH};
use super::medtree::MedBlockTree;
use crate::crypto::Element;

/// One violated tree invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Finding {
    MissingGenesis,
    GenesisPreHash,
    /// Block stored at position `position` of its branch claims `found`.
    IndexDiscontinuity {
        branch: BranchId,
        position: u64,
        found: BlockIndex,
    },
    EmptyBranch(BranchId),
    BrokenLinkage(BlockIndex),
    DigestInvalid(BlockIndex),
    MissingOrigin(BranchId),
    UnknownOrigin {
        branch: BranchId,
        origin: BlockIndex,
    },
    RootHashMismatch(BranchId),
    RootPreHashMismatch(BranchId),
    RootPatientMismatch(BranchId),
    StrayOrigin(BranchId),
    PatientTipMismatch {
        patient: Element,
        recorded: Option<BlockIndex>,
        scanned: Option<BlockIndex>,
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingGenesis => write!(f, "no genesis block at B1#0"),
            Finding::GenesisPreHash => write!(f, "genesis pre_hash is not the zero element"),
            Finding::IndexDiscontinuity {
                branch,
                position,
                found,
            } => {
                write!(f, "B{branch} position {position} holds {found}")
            }
            Finding::EmptyBranch(b) => write!(f, "B{b} has no blocks"),
            Finding::BrokenLinkage(i) => write!(f, "{i} pre_hash does not match its predecessor"),
            Finding::DigestInvalid(i) => write!(f, "{i} digest does not verify"),
            Finding::MissingOrigin(b) => write!(f, "B{b} has no recorded origin"),
            Finding::UnknownOrigin { branch, origin } => {
                write!(f, "B{branch} origin {origin} is not on the tree")
            }
            Finding::RootHashMismatch(b) => write!(f, "B{b} root hash differs from its origin"),
            Finding::RootPreHashMismatch(b) => {
                write!(f, "B{b} root pre_hash differs from its origin")
            }
            Finding::RootPatientMismatch(b) => {
                write!(f, "B{b} root patient differs from its origin")
            }
            Finding::StrayOrigin(b) => write!(f, "origin recorded for B{b}, which has no blocks"),
            Finding::PatientTipMismatch {
                patient,
                recorded,
                scanned,
            } => write!(
                f,
                "patient {:?} tip recorded {:?}, scan gives {:?}",
                patient, recorded, scanned
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub blocks_checked: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            return write!(f, "ok: {} blocks, no findings", self.blocks_checked);
        }
        writeln!(
            f,
            "{} findings over {} blocks:",
            self.findings.len(),
            self.blocks_checked
        )?;
        for finding in &self.findings {
            writeln!(f, "  {finding}")?;
        }
        Ok(())
    }
}

impl MedBlockTree {
    /// Checks every tree invariant and lists each violation found.
    pub fn validate_tree(&self) -> ValidationReport {
        let params = self.params().clone();
        let mut report = ValidationReport::default();
        let findings = &mut report.findings;

        match self.block(BlockIndex::new(DEFAULT_BRANCH, 0)) {
            Some(g) if g.index == BlockIndex::new(DEFAULT_BRANCH, 0) => {
                if !g.pre_hash.is_zero() {
                    findings.push(Finding::GenesisPreHash);
                }
            }
            _ => findings.push(Finding::MissingGenesis),
        }

        for (&branch, blocks) in self.branches() {
            if blocks.is_empty() {
                findings.push(Finding::EmptyBranch(branch));
                continue;
            }
            for (pos, block) in blocks.iter().enumerate() {
                report.blocks_checked += 1;
                let expected = BlockIndex::new(branch, pos as u64);
                if block.index != expected {
                    findings.push(Finding::IndexDiscontinuity {
                        branch,
                        position: pos as u64,
                        found: block.index,
                    });
                }
                if pos > 0 && block.pre_hash != blocks[pos - 1].digest.h {
                    findings.push(Finding::BrokenLinkage(block.index));
                }
                if !self.verifier().chameleon(
                    &params,
                    &block.meta.patient_pk,
                    &block.message(&params),
                    &block.digest,
                ) {
                    findings.push(Finding::DigestInvalid(block.index));
                }
            }
            if branch == DEFAULT_BRANCH {
                continue;
            }
            let Some(&origin_index) = self.origins().get(&branch) else {
                findings.push(Finding::MissingOrigin(branch));
                continue;
            };
            let Some(origin) = self.block(origin_index) else {
                findings.push(Finding::UnknownOrigin {
                    branch,
                    origin: origin_index,
                });
                continue;
            };
            let root = &blocks[0];
            if root.digest.h != origin.digest.h {
                findings.push(Finding::RootHashMismatch(branch));
            }
            if root.pre_hash != origin.pre_hash {
                findings.push(Finding::RootPreHashMismatch(branch));
            }
            if root.meta.patient_pk != origin.meta.patient_pk {
                findings.push(Finding::RootPatientMismatch(branch));
            }
        }
        for branch in self.origins().keys() {
            if *branch == DEFAULT_BRANCH || !self.branches().contains_key(branch) {
                findings.push(Finding::StrayOrigin(*branch));
            }
        }

        let scanned = self.scan_patient_tips();
        let recorded = self.patient_tips();
        let patients: std::collections::BTreeSet<&Element> =
            scanned.keys().chain(recorded.keys()).collect();
        for patient in patients {
            let (r, s) = (
                recorded.get(patient).copied(),
                scanned.get(patient).copied(),
            );
            if r != s {
                findings.push(Finding::PatientTipMismatch {
                    patient: patient.clone(),
                    recorded: r,
                    scanned: s,
                });
            }
        }
        report
    }
}
