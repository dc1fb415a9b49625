//! Line-oriented JSON export of a whole tree.
//!
//! The first line is a header naming the format, its version and the group
//! parameters. Every following line is one block with all of its fields plus
//! `origin`, which is set only on branch roots above the default chain.
//! Import rebuilds the tree without trusting it; callers validate afterwards.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::block::{Block, BlockIndex};
use super::medtree::MedBlockTree;
use super::TreeError;
use crate::crypto::{GroupParams, GroupParamsRecord};

pub const EXPORT_FORMAT: &str = "medblocktree-export";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    params: GroupParamsRecord,
}

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(flatten)]
    block: Block,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<BlockIndex>,
}

pub fn export_tree<W: Write>(tree: &MedBlockTree, mut out: W) -> Result<(), TreeError> {
    let io = |e: std::io::Error| TreeError::Import(e.to_string());
    let header = Header {
        format: EXPORT_FORMAT.to_string(),
        version: EXPORT_VERSION,
        params: tree.params().to_record(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| TreeError::Import(e.to_string()))?;
    out.write_all(b"\n").map_err(io)?;
    for block in tree.blocks() {
        let origin = if block.index.seq == 0 {
            tree.origins().get(&block.index.branch).copied()
        } else {
            None
        };
        let record = Record {
            block: block.clone(),
            origin,
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| TreeError::Import(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn import_tree<R: BufRead>(input: R) -> Result<MedBlockTree, TreeError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| TreeError::Import("empty input".into()))?;
    let first = first.map_err(|e| TreeError::Import(e.to_string()))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| TreeError::Import(format!("header: {e}")))?;
    if header.format != EXPORT_FORMAT || header.version != EXPORT_VERSION {
        return Err(TreeError::Import(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let params = GroupParams::from_record(header.params)?;
    let mut blocks = Vec::new();
    let mut origins = std::collections::BTreeMap::new();
    for (n, line) in lines {
        let line = line.map_err(|e| TreeError::Import(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| TreeError::Import(format!("line {}: {e}", n + 1)))?;
        if let Some(origin) = record.origin {
            origins.insert(record.block.index.branch, origin);
        }
        blocks.push(record.block);
    }
    blocks.sort_by_key(|b| b.index);
    Ok(MedBlockTree::from_raw(params, blocks, origins))
}

pub fn write_tree_file(tree: &MedBlockTree, path: &Path) -> Result<(), TreeError> {
    let file =
        File::create(path).map_err(|e| TreeError::Import(format!("{}: {e}", path.display())))?;
    export_tree(tree, BufWriter::new(file))
}

pub fn read_tree_file(path: &Path) -> Result<MedBlockTree, TreeError> {
    let file =
        File::open(path).map_err(|e| TreeError::Import(format!("{}: {e}", path.display())))?;
    import_tree(BufReader::new(file))
}
