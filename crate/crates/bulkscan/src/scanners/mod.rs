//! The built-in scanners: lexical recognizers (email, url), recursing
//! decoders (gzip, zip, base64), and the jpeg carver.
//!
//! All of them follow the same offset-taking loop: locate a magic or an
//! anchor with the buffer's own search, validate at that offset without
//! constructing intermediate buffers, and only build a child buffer on a
//! confirmed hit.

mod base64;
mod email;
mod gzip;
mod jpeg;
mod url;
mod zip;

pub use base64::Base64Scanner;
pub use email::find_emails;
pub use url::find_urls;
pub use email::EmailScanner;
pub use gzip::GzipScanner;
pub use jpeg::JpegScanner;
pub use url::UrlScanner;
pub use zip::ZipScanner;

use crate::scanner::Scanner;

/// All built-in scanners, ready for registration.
pub fn builtins() -> Vec<Box<dyn Scanner>> {
    vec![
        Box::new(EmailScanner),
        Box::new(UrlScanner),
        Box::new(GzipScanner),
        Box::new(ZipScanner),
        Box::new(Base64Scanner),
        Box::new(JpegScanner),
    ]
}

// --------------------------
// Zero-interleaved text detection shared by the lexical scanners
// --------------------------

/// A region of the buffer that looks like UTF-16 text: one lane carries
/// characters, the other is (almost entirely) zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Utf16Region {
    pub start: usize,
    pub end: usize,
    pub big_endian: bool,
}

const UTF16_WINDOW: usize = 32;

/// Finds regions where alternating zero bytes exceed 90% over 32-byte
/// windows. Half-overlapping windows are classified independently and merged.
pub(crate) fn utf16_regions(data: &[u8]) -> Vec<Utf16Region> {
    if data.len() < UTF16_WINDOW {
        return Vec::new();
    }
    let step = UTF16_WINDOW / 2;
    let mut regions: Vec<Utf16Region> = Vec::new();
    let mut pos = 0;
    while pos + UTF16_WINDOW <= data.len() {
        let w = &data[pos..pos + UTF16_WINDOW];
        let mut odd_zero = 0u32;
        let mut even_zero = 0u32;
        for (i, &b) in w.iter().enumerate() {
            if b == 0 {
                if i % 2 == 0 {
                    even_zero += 1;
                } else {
                    odd_zero += 1;
                }
            }
        }
        let lane = UTF16_WINDOW as u32 / 2;
        // >90% of one lane zero, the text lane mostly populated
        let le_like = odd_zero * 10 > lane * 9 && even_zero * 10 < lane * 5;
        let be_like = even_zero * 10 > lane * 9 && odd_zero * 10 < lane * 5;
        if le_like || be_like {
            let big_endian = be_like;
            match regions.last_mut() {
                Some(last) if last.big_endian == big_endian && last.end >= pos => {
                    last.end = pos + UTF16_WINDOW;
                }
                _ => regions.push(Utf16Region {
                    start: pos,
                    end: pos + UTF16_WINDOW,
                    big_endian,
                }),
            }
        }
        pos += step;
    }
    regions
}

/// Runs an ASCII matcher over the de-interleaved text lane of every UTF-16
/// region, reporting matches as raw-buffer `(start, byte_len)` spans covering
/// the full two-byte code units.
pub(crate) fn scan_utf16_lanes(
    data: &[u8],
    mut matcher: impl FnMut(&[u8], &mut dyn FnMut(usize, usize)),
    mut on_match: impl FnMut(usize, usize),
) {
    for region in utf16_regions(data) {
        let lane_offset = if region.big_endian { 1 } else { 0 };
        let shadow: Vec<u8> = data[region.start..region.end]
            .iter()
            .skip(lane_offset)
            .step_by(2)
            .copied()
            .collect();
        matcher(&shadow, &mut |start, len| {
            on_match(region.start + 2 * start, 2 * len);
        });
    }
}
