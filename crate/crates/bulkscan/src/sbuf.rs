//! Scan buffers: immutable, thread-shareable byte regions with forensic-path
//! provenance, parent/child accounting, and lazy cached hashing.
//!
//! An [`SBuf`] is the unit of scanning. It is created by mapping a file,
//! slicing another buffer (sharing storage), or wrapping the output of a
//! decoder (owning fresh storage). Every buffer knows the forensic path of its
//! byte 0, so features and decoded children derive their addresses by plain
//! offset arithmetic instead of per-scanner bookkeeping.
//!
//! # Invariants
//! - Bytes are immutable for the buffer's entire lifetime.
//! - A parent's storage outlives all children: children hold a reference to
//!   the parent, so releasing the parent handle while children are live is
//!   safe and deallocation waits for the last child.
//! - `child_count` equals the number of live children at all times.
//! - Every creation and release is tallied in the buffer's
//!   [`AllocationLedger`]; a finished run must balance exactly.
//! - `page_len` marks where margin bytes begin; slices preserve the boundary
//!   where it falls inside the slice.

use std::fs;
use std::io;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::path::{ForensicPath, InvalidLabel};

/// Run-scoped tally of buffer creations and releases.
///
/// Both counters only grow; a balanced ledger after a run proves every buffer
/// was released.
#[derive(Debug, Default)]
pub struct AllocationLedger {
    allocated: AtomicU64,
    freed: AtomicU64,
}

impl AllocationLedger {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn allocated(&self) -> u64 {
        self.allocated.load(Ordering::Acquire)
    }

    pub fn freed(&self) -> u64 {
        self.freed.load(Ordering::Acquire)
    }

    pub fn balanced(&self) -> bool {
        self.allocated() == self.freed()
    }

    fn record_alloc(&self) {
        self.allocated.fetch_add(1, Ordering::AcqRel);
    }

    fn record_free(&self) {
        self.freed.fetch_add(1, Ordering::AcqRel);
    }
}

/// Buffer access or construction failure.
#[derive(Debug, Error)]
pub enum BufferError {
    #[error("read of {len} byte(s) at offset {offset} exceeds buffer length {available}")]
    OutOfBounds {
        offset: usize,
        len: usize,
        available: usize,
    },
    #[error("empty search pattern")]
    EmptyPattern,
    #[error("page length {page_len} exceeds buffer length {len}")]
    InvalidPageLen { page_len: usize, len: usize },
    #[error(transparent)]
    BadLabel(#[from] InvalidLabel),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

struct SBufCore {
    storage: Arc<Vec<u8>>,
    range: Range<usize>,
    path: ForensicPath,
    page_len: usize,
    parent: Option<Arc<SBufCore>>,
    children: AtomicUsize,
    hash: OnceLock<[u8; 20]>,
    hash_computes: AtomicU32,
    ledger: Arc<AllocationLedger>,
}

impl SBufCore {
    fn data(&self) -> &[u8] {
        &self.storage[self.range.clone()]
    }
}

impl Drop for SBufCore {
    fn drop(&mut self) {
        if let Some(parent) = &self.parent {
            parent.children.fetch_sub(1, Ordering::AcqRel);
        }
        self.ledger.record_free();
    }
}

/// Immutable byte region with provenance. See the module docs.
///
/// `SBuf` is a unique handle: it moves with its work item and is dropped when
/// scanning completes. Children created from it keep the underlying storage
/// alive on their own.
pub struct SBuf {
    core: Arc<SBufCore>,
}

impl std::fmt::Debug for SBuf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SBuf")
            .field("path", &self.core.path.to_string())
            .field("len", &self.len())
            .field("page_len", &self.core.page_len)
            .field("children", &self.child_count())
            .finish()
    }
}

impl SBuf {
    fn new_core(
        storage: Arc<Vec<u8>>,
        range: Range<usize>,
        path: ForensicPath,
        page_len: usize,
        parent: Option<Arc<SBufCore>>,
        ledger: Arc<AllocationLedger>,
    ) -> SBuf {
        ledger.record_alloc();
        if let Some(p) = &parent {
            p.children.fetch_add(1, Ordering::AcqRel);
        }
        SBuf {
            core: Arc::new(SBufCore {
                storage,
                range,
                path,
                page_len,
                parent,
                children: AtomicUsize::new(0),
                hash: OnceLock::new(),
                hash_computes: AtomicU32::new(0),
                ledger,
            }),
        }
    }

    /// Maps a whole file as a root buffer at path `0`. The file is opened
    /// here, never by the caller.
    pub fn map_file(file: &Path, ledger: &Arc<AllocationLedger>) -> Result<SBuf, BufferError> {
        let bytes = fs::read(file).map_err(|source| BufferError::Io {
            path: file.to_path_buf(),
            source,
        })?;
        let page_len = bytes.len();
        Self::from_vec(bytes, ForensicPath::root(), page_len, ledger)
    }

    /// Wraps owned bytes as a root buffer. `page_len` splits page-proper bytes
    /// from trailing margin.
    pub fn from_vec(
        bytes: Vec<u8>,
        path: ForensicPath,
        page_len: usize,
        ledger: &Arc<AllocationLedger>,
    ) -> Result<SBuf, BufferError> {
        if page_len > bytes.len() {
            return Err(BufferError::InvalidPageLen {
                page_len,
                len: bytes.len(),
            });
        }
        let len = bytes.len();
        Ok(Self::new_core(
            Arc::new(bytes),
            0..len,
            path,
            page_len,
            None,
            Arc::clone(ledger),
        ))
    }

    /// Child sharing this buffer's storage; the path advances by `offset`.
    pub fn slice(&self, offset: usize, len: usize) -> Result<SBuf, BufferError> {
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= self.len())
            .ok_or(BufferError::OutOfBounds {
                offset,
                len,
                available: self.len(),
            })?;
        // The page/margin boundary is preserved where it falls inside the slice.
        let page_len = if offset < self.core.page_len {
            (self.core.page_len - offset).min(len)
        } else {
            0
        };
        Ok(Self::new_core(
            Arc::clone(&self.core.storage),
            self.core.range.start + offset..self.core.range.start + end,
            self.core.path.advanced(offset as u64),
            page_len,
            Some(Arc::clone(&self.core)),
            Arc::clone(&self.core.ledger),
        ))
    }

    /// Child owning freshly decoded bytes; the path advances to `anchor` and
    /// gains a decoder hop.
    pub fn decoded_child(
        &self,
        anchor: usize,
        label: &str,
        decoded: Vec<u8>,
    ) -> Result<SBuf, BufferError> {
        if anchor >= self.len() {
            return Err(BufferError::OutOfBounds {
                offset: anchor,
                len: 0,
                available: self.len(),
            });
        }
        let path = self.core.path.advanced(anchor as u64).extended(label)?;
        let len = decoded.len();
        Ok(Self::new_core(
            Arc::new(decoded),
            0..len,
            path,
            len,
            Some(Arc::clone(&self.core)),
            Arc::clone(&self.core.ledger),
        ))
    }

    /// Child sharing storage but addressed as a decoded stream (used for
    /// container members stored without compression).
    pub fn labeled_slice(
        &self,
        anchor: usize,
        len: usize,
        label: &str,
    ) -> Result<SBuf, BufferError> {
        let end = anchor
            .checked_add(len)
            .filter(|&e| e <= self.len())
            .ok_or(BufferError::OutOfBounds {
                offset: anchor,
                len,
                available: self.len(),
            })?;
        let path = self.core.path.advanced(anchor as u64).extended(label)?;
        Ok(Self::new_core(
            Arc::clone(&self.core.storage),
            self.core.range.start + anchor..self.core.range.start + end,
            path,
            len,
            Some(Arc::clone(&self.core)),
            Arc::clone(&self.core.ledger),
        ))
    }

    pub fn len(&self) -> usize {
        self.core.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[u8] {
        self.core.data()
    }

    /// Forensic path of byte 0.
    pub fn path(&self) -> &ForensicPath {
        &self.core.path
    }

    /// Forensic path of the byte at `offset`.
    pub fn path_at(&self, offset: usize) -> ForensicPath {
        self.core.path.advanced(offset as u64)
    }

    /// Recursion depth: number of decoder hops in this buffer's path.
    pub fn depth(&self) -> u32 {
        self.core.path.depth()
    }

    /// Bytes that belong to this page proper; anything beyond is margin.
    pub fn page_len(&self) -> usize {
        self.core.page_len
    }

    /// Number of live children of this buffer.
    pub fn child_count(&self) -> usize {
        self.core.children.load(Ordering::Acquire)
    }

    pub fn ledger(&self) -> &Arc<AllocationLedger> {
        &self.core.ledger
    }

    pub fn read_u8(&self, offset: usize) -> Result<u8, BufferError> {
        self.check(offset, 1)?;
        Ok(self.data()[offset])
    }

    pub fn read_u16le(&self, offset: usize) -> Result<u16, BufferError> {
        self.check(offset, 2)?;
        let d = self.data();
        Ok(u16::from_le_bytes([d[offset], d[offset + 1]]))
    }

    pub fn read_u16be(&self, offset: usize) -> Result<u16, BufferError> {
        self.check(offset, 2)?;
        let d = self.data();
        Ok(u16::from_be_bytes([d[offset], d[offset + 1]]))
    }

    pub fn read_u32le(&self, offset: usize) -> Result<u32, BufferError> {
        self.check(offset, 4)?;
        let d = self.data();
        Ok(u32::from_le_bytes([
            d[offset],
            d[offset + 1],
            d[offset + 2],
            d[offset + 3],
        ]))
    }

    fn check(&self, offset: usize, len: usize) -> Result<(), BufferError> {
        if offset.checked_add(len).is_none_or(|e| e > self.len()) {
            return Err(BufferError::OutOfBounds {
                offset,
                len,
                available: self.len(),
            });
        }
        Ok(())
    }

    /// Smallest offset `>= start` where `pattern` occurs wholly inside the
    /// buffer. Arguments are validated once; the inner search is memchr-backed.
    pub fn find_bytes(
        &self,
        pattern: &[u8],
        start: usize,
    ) -> Result<Option<usize>, BufferError> {
        if pattern.is_empty() {
            return Err(BufferError::EmptyPattern);
        }
        if start >= self.len() {
            return Ok(None);
        }
        Ok(memchr::memmem::find(&self.data()[start..], pattern).map(|pos| pos + start))
    }

    /// SHA-1 of the full byte sequence, computed at most once and cached.
    pub fn hash_sha1(&self) -> [u8; 20] {
        *self.core.hash.get_or_init(|| {
            self.core.hash_computes.fetch_add(1, Ordering::AcqRel);
            let mut hasher = Sha1::new();
            hasher.update(self.data());
            hasher.finalize().into()
        })
    }

    pub fn hash_sha1_hex(&self) -> String {
        to_hex(&self.hash_sha1())
    }

    /// How many times the hash was actually computed (0 or 1).
    pub fn hash_compute_count(&self) -> u32 {
        self.core.hash_computes.load(Ordering::Acquire)
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
