//! Forensic paths: recursive addresses of bytes through decode chains.
//!
//! A forensic path names a byte in the evidence by the chain of decoders that
//! produced the stream it lives in. `456596-ZIP-1255117` reads "1255117 bytes
//! into the stream inflated from the data that starts 456596 bytes into the
//! evidence". The textual form alternates byte offsets and decoder labels and
//! always ends with an offset.
//!
//! [`path_print`] is the inverse operation: it re-opens the evidence, replays
//! the decode chain, and returns the addressed bytes. It decodes from scratch
//! on every call and never consults scan output.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use thiserror::Error;

/// Default decode-chain depth limit, shared with the engine's recursion limit.
pub const DEFAULT_MAX_DEPTH: u32 = 7;

/// One decode step: the stream produced by applying `label` to the bytes that
/// begin `offset` bytes into the enclosing stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DecodeHop {
    pub offset: u64,
    pub label: String,
}

/// Address of a byte through zero or more decode hops.
///
/// `hops` is the decode chain from the raw evidence inward; `offset` is the
/// byte offset within the innermost stream. A path with no hops addresses raw
/// evidence directly.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ForensicPath {
    hops: Vec<DecodeHop>,
    offset: u64,
}

/// Decoder label validation failure.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid decoder label {0:?}: labels are nonempty uppercase [A-Z0-9]")]
pub struct InvalidLabel(pub String);

/// Path text that does not parse, with the byte position of the defect.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid forensic path at byte {pos}: {reason}")]
pub struct PathParseError {
    pub pos: usize,
    pub reason: String,
}

fn is_valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

impl ForensicPath {
    /// Path of byte 0 of the raw evidence.
    pub fn root() -> Self {
        Self::at_offset(0)
    }

    /// Path of the given byte of the raw evidence (no decode hops).
    pub fn at_offset(offset: u64) -> Self {
        ForensicPath {
            hops: Vec::new(),
            offset,
        }
    }

    /// Same stream, final offset moved forward by `delta`.
    pub fn advanced(&self, delta: u64) -> Self {
        ForensicPath {
            hops: self.hops.clone(),
            offset: self.offset + delta,
        }
    }

    /// Enter the stream decoded at the current offset: the offset becomes a
    /// labeled hop and the new final offset is 0.
    pub fn extended(&self, label: &str) -> Result<Self, InvalidLabel> {
        if !is_valid_label(label) {
            return Err(InvalidLabel(label.to_string()));
        }
        let mut hops = self.hops.clone();
        hops.push(DecodeHop {
            offset: self.offset,
            label: label.to_string(),
        });
        Ok(ForensicPath { hops, offset: 0 })
    }

    /// Number of decode hops (0 = raw evidence).
    pub fn depth(&self) -> u32 {
        self.hops.len() as u32
    }

    pub fn hops(&self) -> &[DecodeHop] {
        &self.hops
    }

    /// Final offset within the innermost stream.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Offset of the first segment: the raw-evidence anchor of the whole
    /// chain, or the final offset itself when there are no hops.
    pub fn first_segment_offset(&self) -> u64 {
        self.hops.first().map(|h| h.offset).unwrap_or(self.offset)
    }
}

impl fmt::Display for ForensicPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for hop in &self.hops {
            write!(f, "{}-{}-", hop.offset, hop.label)?;
        }
        write!(f, "{}", self.offset)
    }
}

impl FromStr for ForensicPath {
    type Err = PathParseError;

    fn from_str(text: &str) -> Result<Self, PathParseError> {
        parse_path(text)
    }
}

/// Parses the canonical hyphen-joined path text.
///
/// Tokens alternate offset, label, offset, ...; the grammar is positional, so
/// all-digit decoder labels stay unambiguous. Offsets are canonical base-10
/// (no leading zeros), labels are `[A-Z0-9]+`.
pub fn parse_path(text: &str) -> Result<ForensicPath, PathParseError> {
    if text.is_empty() {
        return Err(PathParseError {
            pos: 0,
            reason: "empty path".to_string(),
        });
    }
    let mut hops = Vec::new();
    let mut pending_offset: Option<u64> = None;
    let mut pos = 0usize;
    for (i, token) in text.split('-').enumerate() {
        if token.is_empty() {
            return Err(PathParseError {
                pos,
                reason: "empty segment (doubled or trailing separator)".to_string(),
            });
        }
        if i % 2 == 0 {
            // offset position
            if !token.bytes().all(|b| b.is_ascii_digit()) {
                return Err(PathParseError {
                    pos,
                    reason: format!("expected decimal offset, got {token:?}"),
                });
            }
            if token.len() > 1 && token.starts_with('0') {
                return Err(PathParseError {
                    pos,
                    reason: format!("offset {token:?} has a leading zero"),
                });
            }
            let value: u64 = token.parse().map_err(|_| PathParseError {
                pos,
                reason: format!("offset {token:?} out of range"),
            })?;
            pending_offset = Some(value);
        } else {
            // label position
            if !is_valid_label(token) {
                return Err(PathParseError {
                    pos,
                    reason: format!("expected decoder label [A-Z0-9]+, got {token:?}"),
                });
            }
            hops.push(DecodeHop {
                offset: pending_offset.take().expect("offset precedes label"),
                label: token.to_string(),
            });
        }
        pos += token.len() + 1;
    }
    match pending_offset {
        Some(offset) => Ok(ForensicPath { hops, offset }),
        None => Err(PathParseError {
            pos: text.len(),
            reason: "path must end with a byte offset".to_string(),
        }),
    }
}

/// Canonical text of a path. Inverse of [`parse_path`].
pub fn format_path(path: &ForensicPath) -> String {
    path.to_string()
}

// --------------------------
// Path printing (dereference)
// --------------------------

/// Read access to the raw evidence for the path printer.
pub trait EvidenceSource {
    /// Total evidence length in bytes.
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads up to `max` bytes starting at `offset`. Short reads at the end
    /// of the evidence are expected; `offset` past the end yields empty.
    fn read_at(&self, offset: u64, max: usize) -> io::Result<Vec<u8>>;
}

/// Failure while decoding a stream for the path printer.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct DecodeFailure(pub String);

/// A registered stream decoder, keyed by its path label.
///
/// `decode` receives the enclosing stream from the anchored byte onward and
/// returns the decoded child stream (possibly truncated at the decoder's
/// output cap).
pub trait StreamDecoder: Send + Sync {
    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, DecodeFailure>;
}

impl<F> StreamDecoder for F
where
    F: Fn(&[u8]) -> Result<Vec<u8>, DecodeFailure> + Send + Sync,
{
    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, DecodeFailure> {
        self(input)
    }
}

/// Label-to-decoder map used by [`path_print`].
#[derive(Default)]
pub struct DecoderRegistry {
    decoders: BTreeMap<String, Box<dyn StreamDecoder>>,
}

impl DecoderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, label: &str, decoder: Box<dyn StreamDecoder>) {
        self.decoders.insert(label.to_string(), decoder);
    }

    pub fn get(&self, label: &str) -> Option<&dyn StreamDecoder> {
        self.decoders.get(label).map(|d| d.as_ref())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.decoders.keys().map(|s| s.as_str())
    }
}

/// Dereference failure, naming the failing segment.
#[derive(Debug, Error)]
pub enum PathPrintError {
    #[error("segment {segment}: no decoder registered for label {label:?}")]
    UnknownLabel { segment: usize, label: String },
    #[error("segment {segment}: anchor {offset} is beyond the {stream_len}-byte stream")]
    AnchorBeyondStream {
        segment: usize,
        offset: u64,
        stream_len: u64,
    },
    #[error("segment {segment}: {label} decode at offset {offset} failed: {source}")]
    DecodeFailed {
        segment: usize,
        label: String,
        offset: u64,
        source: DecodeFailure,
    },
    #[error("final offset {offset} is beyond the {stream_len}-byte stream")]
    OffsetBeyondStream { offset: u64, stream_len: u64 },
    #[error("evidence read failed: {0}")]
    Io(#[from] io::Error),
}

/// How much enclosing stream a decoder gets to look at.
const DECODE_INPUT_WINDOW: usize = 256 * 1024 * 1024;

/// Re-opens the evidence, replays each decode hop in order, and returns
/// `length` bytes starting at the path's final offset. A short read at the end
/// of the innermost stream is not an error.
pub fn path_print(
    evidence: &dyn EvidenceSource,
    path: &ForensicPath,
    length: usize,
    decoders: &DecoderRegistry,
) -> Result<Vec<u8>, PathPrintError> {
    let hops = path.hops();
    if hops.is_empty() {
        let total = evidence.len();
        if path.offset() > total {
            return Err(PathPrintError::OffsetBeyondStream {
                offset: path.offset(),
                stream_len: total,
            });
        }
        return Ok(evidence.read_at(path.offset(), length)?);
    }

    // Decode hop by hop. Hop 0 reads a bounded window of raw evidence; later
    // hops slice the previously decoded stream.
    let mut current: Vec<u8> = Vec::new();
    for (segment, hop) in hops.iter().enumerate() {
        let input: &[u8] = if segment == 0 {
            if hop.offset >= evidence.len() {
                return Err(PathPrintError::AnchorBeyondStream {
                    segment,
                    offset: hop.offset,
                    stream_len: evidence.len(),
                });
            }
            current = evidence.read_at(hop.offset, DECODE_INPUT_WINDOW)?;
            &current
        } else {
            if hop.offset >= current.len() as u64 {
                return Err(PathPrintError::AnchorBeyondStream {
                    segment,
                    offset: hop.offset,
                    stream_len: current.len() as u64,
                });
            }
            &current[hop.offset as usize..]
        };
        let decoder = decoders
            .get(&hop.label)
            .ok_or_else(|| PathPrintError::UnknownLabel {
                segment,
                label: hop.label.clone(),
            })?;
        let decoded = decoder
            .decode(input)
            .map_err(|source| PathPrintError::DecodeFailed {
                segment,
                label: hop.label.clone(),
                offset: hop.offset,
                source,
            })?;
        current = decoded;
    }

    let start = path.offset();
    if start > current.len() as u64 {
        return Err(PathPrintError::OffsetBeyondStream {
            offset: start,
            stream_len: current.len() as u64,
        });
    }
    let start = start as usize;
    let end = start.saturating_add(length).min(current.len());
    Ok(current[start..end].to_vec())
}

/// Classic 16-bytes-per-line hexdump, offsets based at `base`.
pub fn hexdump(base: u64, bytes: &[u8]) -> String {
    let mut out = String::new();
    for (i, line) in bytes.chunks(16).enumerate() {
        let addr = base + (i * 16) as u64;
        out.push_str(&format!("{addr:08x}  "));
        for col in 0..16 {
            match line.get(col) {
                Some(b) => out.push_str(&format!("{b:02x} ")),
                None => out.push_str("   "),
            }
            if col == 7 {
                out.push(' ');
            }
        }
        out.push(' ');
        out.push('|');
        for &b in line {
            out.push(if (0x20..0x7f).contains(&b) { b as char } else { '.' });
        }
        out.push_str("|\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_segment_path() {
        let p = parse_path("456536-ZIP-1255117").unwrap();
        assert_eq!(p.hops().len(), 1);
        assert_eq!(p.hops()[0].offset, 456536);
        assert_eq!(p.hops()[0].label, "ZIP");
        assert_eq!(p.offset(), 1255117);
    }

    #[test]
    fn parses_root_byte_zero() {
        let p = parse_path("0").unwrap();
        assert_eq!(p, ForensicPath::root());
        assert_eq!(p.depth(), 0);
    }

    #[test]
    fn parses_nested_chain() {
        let p = parse_path("100-ZIP-7-GZIP-3").unwrap();
        assert_eq!(p.hops().len(), 2);
        assert_eq!(p.hops()[0].offset, 100);
        assert_eq!(p.hops()[0].label, "ZIP");
        assert_eq!(p.hops()[1].offset, 7);
        assert_eq!(p.hops()[1].label, "GZIP");
        assert_eq!(p.offset(), 3);
        assert_eq!(format_path(&p), "100-ZIP-7-GZIP-3");
    }

    #[test]
    fn formats_fig_style_path() {
        let p = ForensicPath::at_offset(456596)
            .extended("ZIP")
            .unwrap()
            .advanced(1255117);
        assert_eq!(format_path(&p), "456596-ZIP-1255117");
    }

    #[test]
    fn rejects_malformed_text() {
        assert!(parse_path("").is_err());
        assert!(parse_path("abc").is_err());
        assert!(parse_path("12x").is_err());
        assert!(parse_path("100-zip-5").is_err());
        assert!(parse_path("100-ZIP-").is_err());
        assert!(parse_path("100-ZIP").is_err());
        assert!(parse_path("-100").is_err());
        assert!(parse_path("007").is_err());
        assert!(parse_path("1--2").is_err());
        // error position points at the offending token
        let err = parse_path("100-ZIP-00").unwrap_err();
        assert_eq!(err.pos, 8);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(ForensicPath::root().extended("").is_err());
        assert!(ForensicPath::root().extended("zip").is_err());
        assert!(ForensicPath::root().extended("Z IP").is_err());
        assert!(ForensicPath::root().extended("BASE64").is_ok());
    }

    #[test]
    fn advance_then_extend_composes() {
        let p = ForensicPath::root()
            .advanced(100)
            .extended("ZIP")
            .unwrap()
            .advanced(7)
            .extended("GZIP")
            .unwrap();
        assert_eq!(format_path(&p.advanced(3)), "100-ZIP-7-GZIP-3");
    }

    fn arb_path() -> impl Strategy<Value = ForensicPath> {
        let label = proptest::string::string_regex("[A-Z0-9]{1,8}").unwrap();
        let hop = (0u64..1u64 << 48, label).prop_map(|(offset, label)| DecodeHop { offset, label });
        (proptest::collection::vec(hop, 0..6), 0u64..1u64 << 48)
            .prop_map(|(hops, offset)| ForensicPath { hops, offset })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn parse_format_round_trip(p in arb_path()) {
            let text = format_path(&p);
            let back = parse_path(&text).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    struct MemEvidence(Vec<u8>);

    impl EvidenceSource for MemEvidence {
        fn len(&self) -> u64 {
            self.0.len() as u64
        }
        fn read_at(&self, offset: u64, max: usize) -> io::Result<Vec<u8>> {
            let start = (offset as usize).min(self.0.len());
            let end = start.saturating_add(max).min(self.0.len());
            Ok(self.0[start..end].to_vec())
        }
    }

    #[test]
    fn path_print_raw_bytes() {
        let ev = MemEvidence(b"abcdefghijklmnop".to_vec());
        let got = path_print(&ev, &parse_path("0").unwrap(), 16, &DecoderRegistry::new()).unwrap();
        assert_eq!(got, b"abcdefghijklmnop");
        // short read at stream end
        let got = path_print(&ev, &parse_path("10").unwrap(), 16, &DecoderRegistry::new()).unwrap();
        assert_eq!(got, b"klmnop");
    }

    #[test]
    fn path_print_errors_name_the_segment() {
        let ev = MemEvidence(b"plain".to_vec());
        let p = parse_path("2-GZIP-0").unwrap();
        let err = path_print(&ev, &p, 4, &DecoderRegistry::new()).unwrap_err();
        assert!(matches!(err, PathPrintError::UnknownLabel { segment: 0, .. }));

        let mut reg = DecoderRegistry::new();
        reg.register(
            "GZIP",
            Box::new(|_input: &[u8]| Err(DecodeFailure("not a stream".to_string()))),
        );
        let err = path_print(&ev, &p, 4, &reg).unwrap_err();
        assert!(matches!(err, PathPrintError::DecodeFailed { segment: 0, .. }));

        let err = path_print(&ev, &parse_path("9").unwrap(), 1, &reg).unwrap_err();
        assert!(matches!(err, PathPrintError::OffsetBeyondStream { .. }));
    }

    #[test]
    fn hexdump_single_line() {
        let dump = hexdump(0, b"abcdefghijklmnop");
        assert_eq!(
            dump,
            "00000000  61 62 63 64 65 66 67 68  69 6a 6b 6c 6d 6e 6f 70  |abcdefghijklmnop|\n"
        );
    }
}
