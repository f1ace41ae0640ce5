//! Recursing base64 scanner: finds long runs of the base64 alphabet
//! (optionally broken by CR/LF with consistent line lengths), decodes them,
//! and hands the bytes back for re-analysis anchored at the run start.

use crate::decode::{base64_decode_run, base64_run, is_base64_char, BASE64_MIN_RUN};
use crate::scanner::{ScanError, Scanner, ScannerFlags, ScanParams, ScannerSpec};

pub struct Base64Scanner;

impl Scanner for Base64Scanner {
    fn spec(&self) -> ScannerSpec {
        ScannerSpec {
            name: "base64",
            description: "decodes long base64 runs (e.g. MIME attachments) and re-analyzes them",
            default_enabled: true,
            flags: ScannerFlags::NO_DUPLICATES | ScannerFlags::NO_NGRAM_PAGES,
            config_defaults: &[("min_run", "128")],
        }
    }

    fn scan(&self, params: &ScanParams<'_>) -> Result<(), ScanError> {
        let sbuf = params.sbuf;
        let data = sbuf.data();
        let min_run = params.config.usize_or("min_run", BASE64_MIN_RUN);
        let mut i = 0usize;
        while i < data.len() {
            if !is_base64_char(data[i]) || (i > 0 && is_base64_char(data[i - 1])) {
                i += 1;
                continue;
            }
            let run = base64_run(data, i);
            if run.encoded >= min_run && run.lines_consistent {
                if let Some(decoded) = base64_decode_run(&data[i..run.end]) {
                    params.recurse(sbuf.decoded_child(i, "BASE64", decoded)?);
                }
            }
            i = run.end.max(i + 1);
        }
        Ok(())
    }
}
