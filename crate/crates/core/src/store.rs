//! One file per block, named `<var>-<n>` with the 1-based block number `n`, holding
//! the block's entries as headerless little-endian `f64`s.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::VarId;
use crate::plan::BlockPlan;

/// Block `index` (0-based) of the function produced by bucket `var`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub var: VarId,
    pub index: u64,
}

impl BlockId {
    pub fn new(var: VarId, index: u64) -> Self {
        BlockId { var, index }
    }

    pub fn file_name(&self) -> String {
        format!("{}-{}", self.var, self.index + 1)
    }
}

/// A contiguous slice `[first, last]` of a function table.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub first: u64,
    pub last: u64,
    pub data: Vec<f64>,
}

impl Block {
    pub fn new(id: BlockId, first: u64, last: u64, data: Vec<f64>) -> Result<Self> {
        if last < first || data.len() as u64 != last - first + 1 {
            return Err(Error::Contract(format!(
                "block {} spans {first}..={last} but holds {} entries",
                id.file_name(),
                data.len()
            )));
        }
        Ok(Block {
            id,
            first,
            last,
            data,
        })
    }

    pub fn bytes(&self) -> u64 {
        8 * self.data.len() as u64
    }
}

#[derive(Debug, Clone)]
pub struct BlockStore {
    dir: PathBuf,
}

impl BlockStore {
    /// Uses `dir` as the work directory, creating it if needed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::storage(&dir, e))?;
        Ok(BlockStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, id: BlockId) -> PathBuf {
        self.dir.join(id.file_name())
    }

    /// Writes the block through a temporary file and renames it into place.
    pub fn save_block(&self, b: &Block) -> Result<()> {
        let path = self.path(b.id);
        let tmp = self.dir.join(format!(".{}.tmp", b.id.file_name()));
        let mut bytes = Vec::with_capacity(b.data.len() * 8);
        for x in &b.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let write = || -> io::Result<()> {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&bytes)?;
            file.flush()?;
            drop(file);
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::storage(&path, e)
        })
    }

    /// Reads block `id` with the boundaries recorded in `plan`.
    pub fn load_block(&self, id: BlockId, plan: &BlockPlan) -> Result<Block> {
        let f = plan.for_var(id.var).ok_or_else(|| {
            Error::Contract(format!("variable {} has no planned function", id.var))
        })?;
        if id.index >= f.n_blocks {
            return Err(Error::Contract(format!(
                "block {} beyond the {} planned blocks",
                id.file_name(),
                f.n_blocks
            )));
        }
        let (s, e) = f.bounds(id.index);
        self.load_span(id, s, e)
    }

    /// Reads block `id`, expected to cover entries `first..=last`.
    pub fn load_span(&self, id: BlockId, first: u64, last: u64) -> Result<Block> {
        let path = self.path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(Error::MissingBlock { path })
            }
            Err(e) => return Err(Error::storage(&path, e)),
        };
        let expected = 8 * (last - first + 1);
        if bytes.len() as u64 != expected {
            return Err(Error::CorruptBlock {
                path,
                expected,
                found: bytes.len() as u64,
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Block::new(id, first, last, data)
    }

    /// Removes the block file. Returns whether a file was actually removed.
    pub fn delete_block(&self, id: BlockId) -> Result<bool> {
        let path = self.path(id);
        match fs::remove_file(&path) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                log::debug!("block {} already gone", path.display());
                Ok(false)
            }
            Err(e) => Err(Error::storage(&path, e)),
        }
    }

    /// Block files currently in the work directory.
    pub fn block_files(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::storage(&self.dir, e))? {
            let entry = entry.map_err(|e| Error::storage(&self.dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let is_block = name
                .split_once('-')
                .is_some_and(|(v, i)| v.parse::<usize>().is_ok() && i.parse::<u64>().is_ok());
            if is_block {
                out.push(entry.path());
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_are_one_based() {
        let names: Vec<String> = (0..5).map(|i| BlockId::new(7, i).file_name()).collect();
        assert_eq!(names, ["7-1", "7-2", "7-3", "7-4", "7-5"]);
    }

    #[test]
    fn scalar_block_is_eight_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let b = Block::new(BlockId::new(0, 0), 0, 0, vec![0.25]).unwrap();
        store.save_block(&b).unwrap();
        assert_eq!(fs::metadata(store.path(b.id)).unwrap().len(), 8);
        assert_eq!(fs::read(store.path(b.id)).unwrap(), 0.25f64.to_le_bytes());
    }

    #[test]
    fn delete_then_load_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let b = Block::new(BlockId::new(3, 1), 4, 6, vec![1.0, 2.0, 3.0]).unwrap();
        store.save_block(&b).unwrap();
        assert_eq!(store.load_span(b.id, 4, 6).unwrap(), b);
        assert!(store.delete_block(b.id).unwrap());
        assert!(!store.delete_block(b.id).unwrap());
        assert!(matches!(
            store.load_span(b.id, 4, 6),
            Err(Error::MissingBlock { .. })
        ));
    }

    #[test]
    fn size_mismatch_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let b = Block::new(BlockId::new(1, 0), 0, 1, vec![1.0, 2.0]).unwrap();
        store.save_block(&b).unwrap();
        assert!(matches!(
            store.load_span(b.id, 0, 2),
            Err(Error::CorruptBlock {
                expected: 24,
                found: 16,
                ..
            })
        ));
    }

    #[test]
    fn rewrite_replaces_and_lists_only_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let id = BlockId::new(2, 0);
        store
            .save_block(&Block::new(id, 0, 0, vec![1.0]).unwrap())
            .unwrap();
        store
            .save_block(&Block::new(id, 0, 0, vec![2.0]).unwrap())
            .unwrap();
        assert_eq!(store.load_span(id, 0, 0).unwrap().data, vec![2.0]);
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert_eq!(store.block_files().unwrap(), vec![store.path(id)]);
    }
}
