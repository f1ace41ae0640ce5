//! Input enumeration and page planning.
//!
//! Evidence is bytes, not a filesystem: a single raw image and a directory of
//! files are handled the same way. Enumerated files are concatenated into one
//! logical evidence stream (deterministic lexicographic order), and every
//! forensic path offset is an offset into that stream. Each file is split
//! into fixed-size pages read with a trailing margin so artifacts spanning a
//! page boundary are still seen whole by exactly one page.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::path::EvidenceSource;

/// Default page size.
pub const DEFAULT_PAGE_SIZE: usize = 16 * 1024 * 1024;
/// Default margin read past each page.
pub const DEFAULT_MARGIN: usize = 4 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("input {0} does not exist")]
    Missing(PathBuf),
    #[error("{0} is a directory; pass -r to scan directories recursively")]
    IsDirectory(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// One enumerated input file and its place in the logical evidence stream.
#[derive(Debug, Clone)]
pub struct InputFile {
    pub path: PathBuf,
    pub len: u64,
    /// Offset of this file's byte 0 in the logical evidence stream.
    pub global_offset: u64,
}

/// The enumerated evidence: ordered files with global offsets.
#[derive(Debug, Default)]
pub struct EvidenceLayout {
    pub files: Vec<InputFile>,
    pub total_len: u64,
    /// Unreadable directory entries skipped during enumeration.
    pub skipped: u64,
}

/// Enumerates the evidence under `root`. A single file is itself; a directory
/// (with `recursive`) yields every regular file below it, ordered
/// lexicographically by full path. Unreadable entries are skipped and counted.
pub fn enumerate_inputs(root: &Path, recursive: bool) -> Result<EvidenceLayout, InputError> {
    let meta = std::fs::metadata(root).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            InputError::Missing(root.to_path_buf())
        } else {
            InputError::Io {
                path: root.to_path_buf(),
                source: e,
            }
        }
    })?;

    let mut skipped = 0u64;
    let mut paths: Vec<(PathBuf, u64)> = Vec::new();
    if meta.is_dir() {
        if !recursive {
            return Err(InputError::IsDirectory(root.to_path_buf()));
        }
        for entry in walkdir::WalkDir::new(root) {
            match entry {
                Ok(e) if e.file_type().is_file() => match e.metadata() {
                    Ok(m) => paths.push((e.into_path(), m.len())),
                    Err(err) => {
                        log::warn!("skipping {}: {err}", e.path().display());
                        skipped += 1;
                    }
                },
                Ok(_) => {}
                Err(err) => {
                    log::warn!("skipping unreadable entry under {}: {err}", root.display());
                    skipped += 1;
                }
            }
        }
        paths.sort_by(|a, b| a.0.as_os_str().cmp(b.0.as_os_str()));
    } else {
        paths.push((root.to_path_buf(), meta.len()));
    }

    let mut files = Vec::with_capacity(paths.len());
    let mut global = 0u64;
    for (path, len) in paths {
        files.push(InputFile {
            path,
            len,
            global_offset: global,
        });
        global += len;
    }
    Ok(EvidenceLayout {
        files,
        total_len: global,
        skipped,
    })
}

impl EvidenceLayout {
    /// File containing the given global offset, with the local offset inside
    /// it. Zero-length files never own an offset.
    pub fn locate(&self, global: u64) -> Option<(&InputFile, u64)> {
        let idx = self
            .files
            .partition_point(|f| f.global_offset <= global)
            .checked_sub(1)?;
        let file = &self.files[idx];
        let local = global - file.global_offset;
        (local < file.len).then_some((file, local))
    }
}

impl EvidenceSource for EvidenceLayout {
    fn len(&self) -> u64 {
        self.total_len
    }

    /// Reads from the file containing `offset`; reads never span into the
    /// next file (decoded streams do not straddle file boundaries).
    fn read_at(&self, offset: u64, max: usize) -> io::Result<Vec<u8>> {
        let Some((file, local)) = self.locate(offset) else {
            return Ok(Vec::new());
        };
        let take = ((file.len - local) as usize).min(max);
        let mut f = File::open(&file.path)?;
        f.seek(SeekFrom::Start(local))?;
        let mut buf = vec![0u8; take];
        f.read_exact(&mut buf)?;
        Ok(buf)
    }
}

/// One page of one file: `page_len` bytes of page proper at `local_offset`,
/// plus up to `margin_len` extra bytes read past it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PagePlan {
    pub file_index: usize,
    pub local_offset: u64,
    pub page_len: usize,
    pub margin_len: usize,
    /// Evidence-stream offset of the page's first byte: the root of every
    /// forensic path derived from this page.
    pub global_offset: u64,
    pub ordinal: u64,
}

/// Tiles every file into `ceil(len / page_size)` pages. Margins are clipped
/// at each file's end; zero-length files yield no pages.
pub fn plan_pages(layout: &EvidenceLayout, page_size: usize, margin: usize) -> Vec<PagePlan> {
    assert!(page_size > 0, "page size must be positive");
    let mut plans = Vec::new();
    let mut ordinal = 0u64;
    for (file_index, file) in layout.files.iter().enumerate() {
        let mut local = 0u64;
        while local < file.len {
            let page_len = (file.len - local).min(page_size as u64) as usize;
            let margin_len = (file.len - local - page_len as u64).min(margin as u64) as usize;
            plans.push(PagePlan {
                file_index,
                local_offset: local,
                page_len,
                margin_len,
                global_offset: file.global_offset + local,
                ordinal,
            });
            ordinal += 1;
            local += page_len as u64;
        }
    }
    plans
}

/// Reads a planned page (page proper + margin) from disk.
pub fn read_page(layout: &EvidenceLayout, plan: &PagePlan) -> io::Result<Vec<u8>> {
    let file = &layout.files[plan.file_index];
    let mut f = File::open(&file.path)?;
    f.seek(SeekFrom::Start(plan.local_offset))?;
    let mut buf = vec![0u8; plan.page_len + plan.margin_len];
    f.read_exact(&mut buf)?;
    Ok(buf)
}
