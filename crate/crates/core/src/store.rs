//! Append-only block persistence.
//!
//! Two backends share the [`BlockStore`] interface: [`MemoryStore`] keeps the
//! encoded records in a vector, [`FileStore`] appends them to a single log
//! file.
//!
//! File layout: the 8-byte magic `MBTSTORE`, a version byte, the profile
//! element width as a big-endian `u16`, then one record per block. A record
//! is a big-endian `u32` length followed by [`Block::encode`] output.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{CryptoError, Element, GroupParams};
use crate::tree::{Block, BlockIndex};

pub const FILE_MAGIC: &[u8; 8] = b"MBTSTORE";
pub const FILE_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("block {0} is already stored")]
    Conflict(BlockIndex),
    #[error("store file: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Decode(#[from] CryptoError),
}

pub trait BlockStore {
    /// Appends `block`; its index must not be present yet.
    fn put_block(&mut self, block: &Block) -> Result<(), StoreError>;

    fn get_block(&self, index: BlockIndex) -> Option<Block>;

    /// Every block of the patient, ordered by committed round then index.
    fn blocks_of_patient(&self, patient: &Element) -> Vec<Block>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends performed since the store was opened.
    fn write_count(&self) -> u64;

    /// Encoded records in append order.
    fn encoded_records(&self) -> Vec<Vec<u8>>;
}

/// Lookup tables shared by both backends.
#[derive(Debug)]
struct Indexed {
    params: Arc<GroupParams>,
    records: Vec<Vec<u8>>,
    by_index: BTreeMap<BlockIndex, usize>,
    by_patient: HashMap<Element, Vec<usize>>,
}

impl Indexed {
    fn new(params: Arc<GroupParams>) -> Self {
        Indexed {
            params,
            records: Vec::new(),
            by_index: BTreeMap::new(),
            by_patient: HashMap::new(),
        }
    }

    fn check(&self, block: &Block) -> Result<(), StoreError> {
        if self.by_index.contains_key(&block.index) {
            return Err(StoreError::Conflict(block.index));
        }
        Ok(())
    }

    fn insert(&mut self, block: &Block, encoded: Vec<u8>) {
        let slot = self.records.len();
        self.records.push(encoded);
        self.by_index.insert(block.index, slot);
        self.by_patient
            .entry(block.meta.patient_pk.clone())
            .or_default()
            .push(slot);
    }

    fn decode(&self, slot: usize) -> Block {
        Block::decode(&self.params, &self.records[slot])
            .expect("stored records were encoded by this store")
    }

    fn get(&self, index: BlockIndex) -> Option<Block> {
        self.by_index.get(&index).map(|&slot| self.decode(slot))
    }

    fn of_patient(&self, patient: &Element) -> Vec<Block> {
        let mut blocks: Vec<Block> = self
            .by_patient
            .get(patient)
            .map(|slots| slots.iter().map(|&s| self.decode(s)).collect())
            .unwrap_or_default();
        blocks.sort_by_key(|b| (b.committed_round, b.index));
        blocks
    }
}

#[derive(Debug)]
pub struct MemoryStore {
    inner: Indexed,
    writes: u64,
}

impl MemoryStore {
    pub fn new(params: Arc<GroupParams>) -> Self {
        MemoryStore {
            inner: Indexed::new(params),
            writes: 0,
        }
    }
}

impl BlockStore for MemoryStore {
    fn put_block(&mut self, block: &Block) -> Result<(), StoreError> {
        self.inner.check(block)?;
        let encoded = block.encode(&self.inner.params);
        self.inner.insert(block, encoded);
        self.writes += 1;
        Ok(())
    }

    fn get_block(&self, index: BlockIndex) -> Option<Block> {
        self.inner.get(index)
    }

    fn blocks_of_patient(&self, patient: &Element) -> Vec<Block> {
        self.inner.of_patient(patient)
    }

    fn len(&self) -> usize {
        self.inner.records.len()
    }

    fn write_count(&self) -> u64 {
        self.writes
    }

    fn encoded_records(&self) -> Vec<Vec<u8>> {
        self.inner.records.clone()
    }
}

/// Single-file log. Reopening replays the file into the in-memory indexes.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: File,
    inner: Indexed,
    writes: u64,
}

impl FileStore {
    /// Opens `path`, creating it with a fresh header if it does not exist.
    pub fn open(params: Arc<GroupParams>, path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let width = u16::try_from(params.width())
            .map_err(|_| StoreError::Corrupt("element width exceeds u16".into()))?;
        let mut inner = Indexed::new(params.clone());
        if path.exists() && std::fs::metadata(&path)?.len() > 0 {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut header = [0u8; 11];
            reader
                .read_exact(&mut header)
                .map_err(|_| StoreError::Corrupt("short header".into()))?;
            if &header[..8] != FILE_MAGIC {
                return Err(StoreError::Corrupt("bad magic".into()));
            }
            if header[8] != FILE_VERSION {
                return Err(StoreError::Corrupt(format!(
                    "unsupported version {}",
                    header[8]
                )));
            }
            if u16::from_be_bytes([header[9], header[10]]) != width {
                return Err(StoreError::Corrupt(
                    "element width differs from the profile".into(),
                ));
            }
            loop {
                let mut len = [0u8; 4];
                match reader.read_exact(&mut len) {
                    Ok(()) => {}
                    Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                    Err(e) => return Err(e.into()),
                }
                let mut record = vec![0u8; u32::from_be_bytes(len) as usize];
                reader
                    .read_exact(&mut record)
                    .map_err(|_| StoreError::Corrupt("truncated record".into()))?;
                let block = Block::decode(&params, &record)?;
                inner.check(&block)?;
                inner.insert(&block, record);
            }
        } else {
            let mut file = File::create(&path)?;
            file.write_all(FILE_MAGIC)?;
            file.write_all(&[FILE_VERSION])?;
            file.write_all(&width.to_be_bytes())?;
            file.sync_data()?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(FileStore {
            path,
            file,
            inner,
            writes: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl BlockStore for FileStore {
    fn put_block(&mut self, block: &Block) -> Result<(), StoreError> {
        self.inner.check(block)?;
        let encoded = block.encode(&self.inner.params);
        let len = u32::try_from(encoded.len())
            .map_err(|_| StoreError::Corrupt("record too large".into()))?;
        let mut frame = Vec::with_capacity(4 + encoded.len());
        frame.extend_from_slice(&len.to_be_bytes());
        frame.extend_from_slice(&encoded);
        self.file.write_all(&frame)?;
        self.inner.insert(block, encoded);
        self.writes += 1;
        Ok(())
    }

    fn get_block(&self, index: BlockIndex) -> Option<Block> {
        self.inner.get(index)
    }

    fn blocks_of_patient(&self, patient: &Element) -> Vec<Block> {
        self.inner.of_patient(patient)
    }

    fn len(&self) -> usize {
        self.inner.records.len()
    }

    fn write_count(&self) -> u64 {
        self.writes
    }

    fn encoded_records(&self) -> Vec<Vec<u8>> {
        self.inner.records.clone()
    }
}
