//! Capped stream decoders shared by the recursing scanners and the path
//! printer, so a recorded path and its later dereference always go through the
//! same decode routine.

use std::io::Read;

use base64::engine::{DecodePaddingMode, Engine, GeneralPurpose, GeneralPurposeConfig};
use base64::alphabet;

use crate::path::{DecodeFailure, DecoderRegistry, StreamDecoder};

/// Per-stream decompression output cap. Guards against decompression bombs.
pub const STREAM_OUTPUT_CAP: usize = 256 * 1024 * 1024;

/// Minimum run of encoded characters before a base64 region is decoded.
pub const BASE64_MIN_RUN: usize = 128;

fn read_capped<R: Read>(mut reader: R, cap: usize) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    let mut chunk = [0u8; 64 * 1024];
    loop {
        match reader.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                let take = n.min(cap - out.len());
                out.extend_from_slice(&chunk[..take]);
                if out.len() >= cap {
                    break;
                }
            }
            // Keep whatever decoded before the stream went bad; scanners treat
            // a truncated stream as still worth analyzing.
            Err(_) => break,
        }
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

/// RFC 1952 decode of the gzip member starting at `input[0]`.
/// Returns `None` unless at least one byte decodes.
pub fn gzip_capped(input: &[u8], cap: usize) -> Option<Vec<u8>> {
    read_capped(flate2::read::GzDecoder::new(input), cap)
}

/// Raw DEFLATE decode of the stream starting at `input[0]`.
pub fn inflate_raw_capped(input: &[u8], cap: usize) -> Option<Vec<u8>> {
    read_capped(flate2::read::DeflateDecoder::new(input), cap)
}

/// A base64 region: `end` is one past the last byte of the run in the source,
/// `encoded` counts alphabet characters (line breaks excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Base64Run {
    pub end: usize,
    pub encoded: usize,
    pub lines_consistent: bool,
}

pub fn is_base64_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'+' || b == b'/' || b == b'='
}

/// Measures the base64 run starting at `data[start]` (which must be an
/// alphabet character). The run may be broken by single CR/LF/CRLF line
/// breaks as long as every full line has the same length; a blank line ends
/// the run, and `=` is only accepted as trailing padding.
pub fn base64_run(data: &[u8], start: usize) -> Base64Run {
    let mut i = start;
    let mut encoded = 0usize;
    let mut line_len = 0usize;
    let mut first_line: Option<usize> = None;
    let mut lines_consistent = true;
    let mut padding = 0usize;

    while i < data.len() {
        let b = data[i];
        if b == b'\r' || b == b'\n' {
            // one break is CRLF, CR, or LF
            let mut j = i + 1;
            if b == b'\r' && j < data.len() && data[j] == b'\n' {
                j += 1;
            }
            // a second break right after is a blank line: the run is over
            if j < data.len() && (data[j] == b'\r' || data[j] == b'\n') {
                break;
            }
            let continues = j < data.len() && is_base64_char(data[j]);
            match first_line {
                None => first_line = Some(line_len),
                Some(fl) => {
                    // only the final line may be shorter; longer is ragged
                    if line_len > fl || (line_len < fl && continues) {
                        lines_consistent = false;
                    }
                }
            }
            line_len = 0;
            i = j;
            continue;
        }
        if !is_base64_char(b) {
            break;
        }
        if b == b'=' {
            padding += 1;
            if padding > 2 {
                break;
            }
        } else if padding > 0 {
            // data after padding ends the run
            break;
        }
        encoded += 1;
        line_len += 1;
        i += 1;
    }
    // final (partial) line may be shorter but never longer than the others
    if let Some(fl) = first_line {
        if line_len > fl {
            lines_consistent = false;
        }
    }
    Base64Run {
        end: i,
        encoded,
        lines_consistent,
    }
}

const B64_ENGINE: GeneralPurpose = GeneralPurpose::new(
    &alphabet::STANDARD,
    GeneralPurposeConfig::new().with_decode_padding_mode(DecodePaddingMode::Indifferent),
);

/// Decodes a measured run, tolerating missing padding. `None` on any decode
/// failure or empty output.
pub fn base64_decode_run(run_bytes: &[u8]) -> Option<Vec<u8>> {
    let stripped: Vec<u8> = run_bytes
        .iter()
        .copied()
        .filter(|&b| b != b'\r' && b != b'\n')
        .collect();
    let stripped = match stripped.iter().position(|&b| b == b'=') {
        Some(pad) => &stripped[..pad],
        None => &stripped[..],
    };
    // length ≡ 1 (mod 4) can never decode
    let usable = stripped.len() - (stripped.len() % 4 == 1) as usize;
    let out = B64_ENGINE.decode(&stripped[..usable]).ok()?;
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

struct GzipStream;

impl StreamDecoder for GzipStream {
    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, DecodeFailure> {
        gzip_capped(input, STREAM_OUTPUT_CAP)
            .ok_or_else(|| DecodeFailure("no decodable gzip stream at anchor".to_string()))
    }
}

struct ZipStream;

impl StreamDecoder for ZipStream {
    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, DecodeFailure> {
        // ZIP children are anchored at the member's data start, past the local
        // header. DEFLATE members raw-inflate from there; STORED members are
        // the bytes themselves, so a failed inflate falls back to identity.
        match inflate_raw_capped(input, STREAM_OUTPUT_CAP) {
            Some(out) => Ok(out),
            None => Ok(input[..input.len().min(STREAM_OUTPUT_CAP)].to_vec()),
        }
    }
}

struct Base64Stream;

impl StreamDecoder for Base64Stream {
    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, DecodeFailure> {
        if input.is_empty() || !is_base64_char(input[0]) {
            return Err(DecodeFailure("no base64 run at anchor".to_string()));
        }
        let run = base64_run(input, 0);
        base64_decode_run(&input[..run.end])
            .ok_or_else(|| DecodeFailure("base64 run does not decode".to_string()))
    }
}

/// Registry with the GZIP, ZIP, and BASE64 decoders the built-in scanners emit.
pub fn builtin_decoders() -> DecoderRegistry {
    let mut reg = DecoderRegistry::new();
    reg.register("GZIP", Box::new(GzipStream));
    reg.register("ZIP", Box::new(ZipStream));
    reg.register("BASE64", Box::new(Base64Stream));
    reg
}
