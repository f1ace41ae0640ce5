//! Shared fixture builders for the integration and acceptance suites.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bulkscan::engine::{RunConfig, RunReport};
use flate2::write::{DeflateEncoder, GzEncoder};
use flate2::Compression;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Structurally complete 1x1 JPEG used as the carving reference.
pub const REF_JPEG: &[u8] = include_bytes!("../../testdata/ref1x1.jpg");

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bytes with every accidental scanner magic knocked out, so planted
/// artifacts stay the only decodable streams.
pub fn inert_random(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut buf = vec![0u8; len];
    rng.fill_bytes(&mut buf);
    for magic in [&[0x1F, 0x8B, 0x08][..], b"PK\x03\x04", &[0xFF, 0xD8, 0xFF][..]] {
        while let Some(pos) = memchr::memmem::find(&buf, magic) {
            buf[pos] ^= 0x55;
        }
    }
    // no '@' or "://" so the lexical scanners stay quiet too
    for b in buf.iter_mut() {
        if *b == b'@' || *b == b':' {
            *b ^= 0x01;
        }
    }
    buf
}

pub fn gz(data: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(data).unwrap();
    enc.finish().unwrap()
}

pub fn deflate(data: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(data).unwrap();
    enc.finish().unwrap()
}

/// ZIP compression methods used by fixtures.
pub const ZIP_STORED: u16 = 0;
pub const ZIP_DEFLATE: u16 = 8;

/// One ZIP local member: 30-byte header, name, extra, then member data.
/// `data` must already be compressed per `method`.
pub fn zip_local_member(
    name: &[u8],
    extra: &[u8],
    method: u16,
    data: &[u8],
    uncompressed_len: u32,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"PK\x03\x04");
    out.extend_from_slice(&20u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&method.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&uncompressed_len.to_le_bytes());
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(&(extra.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(extra);
    out.extend_from_slice(data);
    out
}

/// MIME-style base64 body: 76-column CRLF lines with a header block before it.
pub fn mime_base64(payload: &[u8]) -> (Vec<u8>, usize) {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    let encoded = STANDARD.encode(payload);
    let mut body = b"Content-Type: image/jpeg\r\nContent-Transfer-Encoding: base64\r\n\r\n".to_vec();
    let anchor = body.len();
    let wrapped: Vec<String> = encoded
        .as_bytes()
        .chunks(76)
        .map(|c| String::from_utf8(c.to_vec()).unwrap())
        .collect();
    body.extend(wrapped.join("\r\n").into_bytes());
    body.extend_from_slice(b"\r\n\r\n--frontier--\r\n");
    (body, anchor)
}

/// Parsed feature-file row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub path: String,
    pub feature: String,
    pub context: String,
}

pub fn read_rows(outdir: &Path, recorder: &str) -> Vec<Row> {
    let text = fs::read_to_string(outdir.join(format!("{recorder}.txt"))).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let mut cols = l.split('\t');
            Row {
                path: cols.next().unwrap().to_string(),
                feature: cols.next().unwrap().to_string(),
                context: cols.next().unwrap_or_default().to_string(),
            }
        })
        .collect()
}

pub fn read_report(outdir: &Path) -> RunReport {
    let text = fs::read_to_string(outdir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Single-threaded deterministic scan with small pages; tweak via `adjust`.
pub fn scan(input: &Path, outdir: &Path, adjust: impl FnOnce(&mut RunConfig)) -> RunReport {
    let mut config = RunConfig::new(input.to_path_buf(), outdir.to_path_buf());
    config.threads = 1;
    adjust(&mut config);
    bulkscan::engine::run(&config).expect("scan failed")
}

/// Sorted data rows of every feature file, for cross-run comparison.
pub fn sorted_feature_files(outdir: &Path) -> BTreeMap<String, Vec<String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(outdir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().to_string();
        if !name.ends_with(".txt") || name.ends_with("_histogram.txt") {
            continue;
        }
        let mut rows: Vec<String> = fs::read_to_string(entry.path())
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .map(|l| l.to_string())
            .collect();
        rows.sort();
        out.insert(name, rows);
    }
    out
}

pub fn write_input(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}
