//! Recursing ZIP scanner.
//!
//! Walks every `PK\x03\x04` local-file-header signature, parses the 30-byte
//! header, and records the member to the `zip` recorder. DEFLATE members are
//! raw-inflated and STORED members sliced; either way the child is anchored
//! at the member's data start (header offset + 30 + name length + extra
//! length), not at the header, so a feature k bytes into the inflated stream
//! prints back from exactly `<data_start>-ZIP-<k>`.

use crate::decode::{inflate_raw_capped, STREAM_OUTPUT_CAP};
use crate::scanner::{ScanError, Scanner, ScannerFlags, ScanParams, ScannerSpec};

pub struct ZipScanner;

const ZIP_LOCAL_MAGIC: &[u8] = b"PK\x03\x04";
/// Fixed portion of the ZIP local file header.
pub const LOCAL_HEADER_LEN: usize = 30;

const METHOD_STORED: u16 = 0;
const METHOD_DEFLATE: u16 = 8;

impl Scanner for ZipScanner {
    fn spec(&self) -> ScannerSpec {
        ScannerSpec {
            name: "zip",
            description: "parses ZIP local file headers, records members, and re-analyzes their data",
            default_enabled: true,
            flags: ScannerFlags::NO_DUPLICATES | ScannerFlags::NO_NGRAM_PAGES,
            config_defaults: &[("max_output_mib", "256")],
        }
    }

    fn scan(&self, params: &ScanParams<'_>) -> Result<(), ScanError> {
        let sbuf = params.sbuf;
        let cap = params
            .config
            .usize_or("max_output_mib", STREAM_OUTPUT_CAP >> 20)
            .saturating_mul(1 << 20);
        let mut from = 0usize;
        while let Some(off) = sbuf.find_bytes(ZIP_LOCAL_MAGIC, from)? {
            from = off + 4;
            // full fixed header present?
            let Ok(method) = sbuf.read_u16le(off + 8) else { continue };
            let Ok(compressed_size) = sbuf.read_u32le(off + 18) else { continue };
            let Ok(uncompressed_size) = sbuf.read_u32le(off + 22) else { continue };
            let Ok(name_len) = sbuf.read_u16le(off + 26) else { continue };
            let Ok(extra_len) = sbuf.read_u16le(off + 28) else { continue };

            let data_start = off + LOCAL_HEADER_LEN + name_len as usize + extra_len as usize;
            if data_start > sbuf.len() {
                continue;
            }
            if name_len > 0 {
                let name_off = off + LOCAL_HEADER_LEN;
                let meta = format!(
                    "method={method} compressed={compressed_size} uncompressed={uncompressed_size}"
                );
                params.record_feature_with_context(
                    "zip",
                    name_off,
                    name_len as usize,
                    meta.as_bytes(),
                )?;
            }

            match method {
                METHOD_DEFLATE => {
                    if let Some(decoded) = inflate_raw_capped(&sbuf.data()[data_start..], cap) {
                        params.recurse(sbuf.decoded_child(data_start, "ZIP", decoded)?);
                    }
                }
                METHOD_STORED => {
                    let avail = sbuf.len() - data_start;
                    let len = (compressed_size as usize).min(avail);
                    if len > 0 {
                        params.recurse(sbuf.labeled_slice(data_start, len, "ZIP")?);
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}
