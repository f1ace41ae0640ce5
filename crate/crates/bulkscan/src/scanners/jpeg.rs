//! JPEG carver: finds `FF D8 FF` + a plausible marker, walks the marker
//! segments (including entropy-coded scans) to the terminating `FF D9`, and
//! carves the extent through the `jpeg` recorder's carve mode.

use crate::scanner::{ScanError, Scanner, ScannerFlags, ScanParams, ScannerSpec};

pub struct JpegScanner;

const JPEG_MAGIC: &[u8] = &[0xFF, 0xD8, 0xFF];
/// Largest JPEG extent the segment walk will chase.
const JPEG_MAX_LEN: usize = 64 * 1024 * 1024;

fn plausible_first_marker(m: u8) -> bool {
    matches!(m, 0xE0..=0xEF | 0xDB | 0xC0..=0xCF)
}

/// Walks marker segments from the SOI at `start`. Returns the end offset (one
/// past `FF D9`) only when a complete image structure is present.
fn jpeg_extent(data: &[u8], start: usize) -> Option<usize> {
    let bound = data.len().min(start + JPEG_MAX_LEN);
    let mut pos = start + 2;
    loop {
        if pos + 2 > bound || data[pos] != 0xFF {
            return None;
        }
        // fill bytes before a marker
        while pos + 1 < bound && data[pos + 1] == 0xFF {
            pos += 1;
        }
        if pos + 2 > bound {
            return None;
        }
        let marker = data[pos + 1];
        match marker {
            0xD9 => return Some(pos + 2), // EOI
            0x01 | 0xD0..=0xD7 => pos += 2,
            0x00 | 0xD8 => return None, // stuffing or nested SOI outside a scan
            0xDA => {
                // SOS: skip its header, then the entropy-coded data
                let seg_len = read_u16be(data, pos + 2)? as usize;
                if seg_len < 2 {
                    return None;
                }
                pos += 2 + seg_len;
                pos = skip_entropy(data, pos, bound)?;
            }
            _ => {
                let seg_len = read_u16be(data, pos + 2)? as usize;
                if seg_len < 2 {
                    return None;
                }
                pos += 2 + seg_len;
            }
        }
    }
}

fn read_u16be(data: &[u8], pos: usize) -> Option<u16> {
    if pos + 2 > data.len() {
        return None;
    }
    Some(u16::from_be_bytes([data[pos], data[pos + 1]]))
}

/// Advances over entropy-coded bytes until the next real marker (anything but
/// stuffed 0xFF00 and restart markers).
fn skip_entropy(data: &[u8], mut pos: usize, bound: usize) -> Option<usize> {
    while pos < bound {
        let ff = memchr::memchr(0xFF, &data[pos..bound])?;
        let at = pos + ff;
        if at + 1 >= bound {
            return None;
        }
        match data[at + 1] {
            0x00 | 0xD0..=0xD7 => pos = at + 2,
            0xFF => pos = at + 1,
            _ => return Some(at),
        }
    }
    None
}

impl Scanner for JpegScanner {
    fn spec(&self) -> ScannerSpec {
        ScannerSpec {
            name: "jpeg",
            description: "carves JPEG images, including ones inside decoded streams",
            default_enabled: true,
            flags: ScannerFlags::NO_DUPLICATES | ScannerFlags::NO_NGRAM_PAGES,
            config_defaults: &[],
        }
    }

    fn scan(&self, params: &ScanParams<'_>) -> Result<(), ScanError> {
        let sbuf = params.sbuf;
        let data = sbuf.data();
        let mut from = 0usize;
        while let Some(off) = sbuf.find_bytes(JPEG_MAGIC, from)? {
            from = off + 3;
            let Ok(next) = sbuf.read_u8(off + 3) else { continue };
            if !plausible_first_marker(next) {
                continue;
            }
            if let Some(end) = jpeg_extent(data, off) {
                params.carve("jpeg", off, end - off, "jpg")?;
            }
        }
        Ok(())
    }
}
