//! Feature recorders: tab-separated UTF-8 feature files, carved objects, and
//! normalized histograms.
//!
//! Each recorder owns one append-only feature file. A row is
//! `PATH \t FEATURE \t CONTEXT \n` where the feature and context columns are
//! hex-escaped into valid UTF-8. Features recognized as UTF-16 are converted
//! to UTF-8 in the feature column but stay escaped UTF-16 in the context
//! column. Carved objects land under `<outdir>/<recorder>/`, named by their
//! full forensic path. Histograms are a post-pass over the finished feature
//! file: case-fold, count, sort by count (ties by value).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::path::ForensicPath;
use crate::sbuf::{to_hex, SBuf};
use crate::{FORMAT_VERSION, TOOL_NAME, TOOL_VERSION};

/// Findings must never be lost silently: any recorder I/O failure is fatal to
/// the run.
#[derive(Debug, Error)]
#[error("feature storage failure on {path}: {source}")]
pub struct StorageError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

fn storage_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError {
        path: path.to_path_buf(),
        source,
    }
}

// --------------------------
// Escaping
// --------------------------

fn push_escaped_byte(out: &mut String, b: u8) {
    out.push_str(&format!("\\x{b:02X}"));
}

fn needs_escape(b: u8) -> bool {
    b < 0x20 || b == 0x7F || b == b'\\'
}

/// Escapes arbitrary bytes into valid UTF-8. Well-formed UTF-8 passes through,
/// except control bytes, DEL, and backslash, which become `\xHH` (uppercase
/// hex) along with every byte of an invalid UTF-8 run. The result decodes
/// unambiguously back to the input via [`unescape_bytes`].
pub fn escape_bytes(raw: &[u8]) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    loop {
        match std::str::from_utf8(rest) {
            Ok(valid) => {
                push_escaped_str(&mut out, valid);
                return out;
            }
            Err(e) => {
                let (valid, bad) = rest.split_at(e.valid_up_to());
                // SAFETY: valid_up_to marks the end of the well-formed prefix
                push_escaped_str(&mut out, unsafe { std::str::from_utf8_unchecked(valid) });
                let bad_len = e.error_len().unwrap_or(bad.len()).max(1);
                for &b in &bad[..bad_len] {
                    push_escaped_byte(&mut out, b);
                }
                rest = &bad[bad_len..];
            }
        }
    }
}

fn push_escaped_str(out: &mut String, s: &str) {
    for ch in s.chars() {
        if ch.is_ascii() && needs_escape(ch as u8) {
            push_escaped_byte(out, ch as u8);
        } else {
            out.push(ch);
        }
    }
}

/// Inverse of [`escape_bytes`]. Malformed escapes pass through literally.
pub fn unescape_bytes(escaped: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(escaped.len());
    let bytes = escaped.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\'
            && i + 3 < bytes.len()
            && bytes[i + 1] == b'x'
            && bytes[i + 2].is_ascii_hexdigit()
            && bytes[i + 3].is_ascii_hexdigit()
        {
            let hi = (bytes[i + 2] as char).to_digit(16).unwrap() as u8;
            let lo = (bytes[i + 3] as char).to_digit(16).unwrap() as u8;
            out.push(hi << 4 | lo);
            i += 4;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    out
}

// --------------------------
// UTF-16 feature conversion
// --------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Utf16Endianness {
    Le,
    Be,
}

/// Recognizes zero-interleaved UTF-16 text: even length, at least two code
/// units, and more than 90% of units with a consistently zero high (LE) or low
/// (BE) byte while the text lane is nonzero.
pub fn detect_utf16(bytes: &[u8]) -> Option<Utf16Endianness> {
    if bytes.len() < 4 || !bytes.len().is_multiple_of(2) {
        return None;
    }
    let units = bytes.len() / 2;
    let mut le_like = 0usize;
    let mut be_like = 0usize;
    for pair in bytes.chunks_exact(2) {
        if pair[1] == 0 && pair[0] != 0 {
            le_like += 1;
        } else if pair[0] == 0 && pair[1] != 0 {
            be_like += 1;
        }
    }
    if le_like * 10 > units * 9 {
        Some(Utf16Endianness::Le)
    } else if be_like * 10 > units * 9 {
        Some(Utf16Endianness::Be)
    } else {
        None
    }
}

pub fn utf16_to_string(bytes: &[u8], endianness: Utf16Endianness) -> String {
    let units: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|p| match endianness {
            Utf16Endianness::Le => u16::from_le_bytes([p[0], p[1]]),
            Utf16Endianness::Be => u16::from_be_bytes([p[0], p[1]]),
        })
        .collect();
    String::from_utf16_lossy(&units)
}

// --------------------------
// Recorders
// --------------------------

/// When carved objects are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CarveMode {
    /// Never write.
    #[default]
    Never,
    /// Always write.
    Always,
    /// Write only objects found inside decoded streams (depth > 0).
    DecodedOnly,
}

impl CarveMode {
    pub fn from_level(level: u8) -> Option<CarveMode> {
        match level {
            0 => Some(CarveMode::Never),
            1 => Some(CarveMode::Always),
            2 => Some(CarveMode::DecodedOnly),
            _ => None,
        }
    }

    pub fn level(self) -> u8 {
        match self {
            CarveMode::Never => 0,
            CarveMode::Always => 1,
            CarveMode::DecodedOnly => 2,
        }
    }
}

/// Histogram built from a recorder's feature column after the run.
#[derive(Debug, Clone)]
pub struct HistogramDef {
    pub case_fold: bool,
}

/// Declares one recorder of a [`FeatureRecorderSet`].
#[derive(Debug, Clone)]
pub struct RecorderSpec {
    pub name: &'static str,
    pub carve_mode: CarveMode,
    pub histogram: Option<HistogramDef>,
}

/// One named feature file plus its carve directory.
pub struct FeatureRecorder {
    name: String,
    feature_file: PathBuf,
    carve_dir: PathBuf,
    writer: Mutex<BufWriter<File>>,
    count: AtomicU64,
    carve_mode: CarveMode,
    histogram: Option<HistogramDef>,
}

impl FeatureRecorder {
    fn create(outdir: &Path, spec: &RecorderSpec) -> Result<FeatureRecorder, StorageError> {
        let feature_file = outdir.join(format!("{}.txt", spec.name));
        let file = File::create(&feature_file).map_err(storage_err(&feature_file))?;
        let mut writer = BufWriter::new(file);
        write!(
            writer,
            "# {TOOL_NAME} {TOOL_VERSION}\n# feature-file-format: {FORMAT_VERSION}\n# recorder: {}\n",
            spec.name
        )
        .map_err(storage_err(&feature_file))?;
        Ok(FeatureRecorder {
            name: spec.name.to_string(),
            carve_dir: outdir.join(spec.name),
            feature_file,
            writer: Mutex::new(writer),
            count: AtomicU64::new(0),
            carve_mode: spec.carve_mode,
            histogram: spec.histogram.clone(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Acquire)
    }

    pub fn carve_mode(&self) -> CarveMode {
        self.carve_mode
    }

    /// Appends one row. The feature column is converted to UTF-8 when the raw
    /// feature looks like UTF-16; the context column always keeps the escaped
    /// raw bytes.
    pub fn record(
        &self,
        path: &ForensicPath,
        feature: &[u8],
        context: &[u8],
    ) -> Result<(), StorageError> {
        let feature_col = match detect_utf16(feature) {
            Some(endianness) => escape_bytes(utf16_to_string(feature, endianness).as_bytes()),
            None => escape_bytes(feature),
        };
        let row = format!("{path}\t{feature_col}\t{}\n", escape_bytes(context));
        {
            let mut w = self.writer.lock().expect("recorder writer poisoned");
            w.write_all(row.as_bytes())
                .map_err(storage_err(&self.feature_file))?;
        }
        self.count.fetch_add(1, Ordering::AcqRel);
        Ok(())
    }

    /// Copies `sbuf[start, start+len)` to a carved file when the carve mode
    /// admits it, and appends a row naming the carved object. Returns the
    /// written path, if any.
    pub fn carve(
        &self,
        sbuf: &SBuf,
        start: usize,
        len: usize,
        extension: &str,
    ) -> Result<Option<PathBuf>, StorageError> {
        match self.carve_mode {
            CarveMode::Never => return Ok(None),
            CarveMode::DecodedOnly if sbuf.depth() == 0 => return Ok(None),
            _ => {}
        }
        let Some(end) = start.checked_add(len).filter(|&e| e <= sbuf.len()) else {
            log::error!(
                "carve range [{start}, {start}+{len}) out of bounds for {} byte buffer",
                sbuf.len()
            );
            return Ok(None);
        };
        let path = sbuf.path_at(start);
        let bytes = &sbuf.data()[start..end];
        fs::create_dir_all(&self.carve_dir).map_err(storage_err(&self.carve_dir))?;
        let file_name = format!("{path}.{extension}");
        let out_path = self.carve_dir.join(&file_name);
        fs::write(&out_path, bytes).map_err(storage_err(&out_path))?;

        use sha1::{Digest, Sha1};
        let digest = to_hex(&Sha1::digest(bytes));
        let rel = format!("{}/{}", self.name, file_name);
        self.record(&path, rel.as_bytes(), digest.as_bytes())?;
        Ok(Some(out_path))
    }

    fn flush(&self) -> Result<(), StorageError> {
        self.writer
            .lock()
            .expect("recorder writer poisoned")
            .flush()
            .map_err(storage_err(&self.feature_file))
    }
}

/// All recorders of a run, keyed by name.
pub struct FeatureRecorderSet {
    outdir: PathBuf,
    recorders: BTreeMap<String, FeatureRecorder>,
}

impl FeatureRecorderSet {
    pub fn create(outdir: &Path, specs: &[RecorderSpec]) -> Result<FeatureRecorderSet, StorageError> {
        fs::create_dir_all(outdir).map_err(storage_err(outdir))?;
        let mut recorders = BTreeMap::new();
        for spec in specs {
            recorders.insert(spec.name.to_string(), FeatureRecorder::create(outdir, spec)?);
        }
        Ok(FeatureRecorderSet {
            outdir: outdir.to_path_buf(),
            recorders,
        })
    }

    pub fn get(&self, name: &str) -> Option<&FeatureRecorder> {
        self.recorders.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.recorders.keys().map(|s| s.as_str())
    }

    /// Feature counts per recorder, for the run report.
    pub fn counts(&self) -> BTreeMap<String, u64> {
        self.recorders
            .iter()
            .map(|(name, rec)| (name.clone(), rec.count()))
            .collect()
    }

    pub fn flush_all(&self) -> Result<(), StorageError> {
        for rec in self.recorders.values() {
            rec.flush()?;
        }
        Ok(())
    }

    /// Post-pass after all scanning: re-reads each recorder's rows, folds and
    /// counts the feature column, and writes `<name>_histogram.txt` sorted by
    /// count descending, ties lexicographic by value.
    pub fn finalize_histograms(&self) -> Result<(), StorageError> {
        self.flush_all()?;
        for rec in self.recorders.values() {
            let Some(def) = &rec.histogram else { continue };
            let text =
                fs::read_to_string(&rec.feature_file).map_err(storage_err(&rec.feature_file))?;
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for line in text.lines() {
                if line.starts_with('#') || line.is_empty() {
                    continue;
                }
                let Some(feature) = line.split('\t').nth(1) else {
                    continue;
                };
                let value = if def.case_fold {
                    feature.to_lowercase()
                } else {
                    feature.to_string()
                };
                *counts.entry(value).or_insert(0) += 1;
            }
            let mut rows: Vec<(String, u64)> = counts.into_iter().collect();
            rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

            let hist_path = self.outdir.join(format!("{}_histogram.txt", rec.name));
            let file = File::create(&hist_path).map_err(storage_err(&hist_path))?;
            let mut w = BufWriter::new(file);
            write!(
                w,
                "# {TOOL_NAME} {TOOL_VERSION}\n# histogram of: {}{}\n",
                rec.name,
                if def.case_fold { " (case-folded)" } else { "" }
            )
            .map_err(storage_err(&hist_path))?;
            for (value, n) in rows {
                writeln!(w, "n={n}\t{value}").map_err(storage_err(&hist_path))?;
            }
            w.flush().map_err(storage_err(&hist_path))?;
        }
        Ok(())
    }
}
