//! Recursing gzip scanner: every `1F 8B 08` offset is tried as an RFC 1952
//! stream; whatever inflates (even partially) becomes a decoded child
//! anchored at the magic offset.

use crate::decode::{gzip_capped, STREAM_OUTPUT_CAP};
use crate::scanner::{ScanError, Scanner, ScannerFlags, ScanParams, ScannerSpec};

pub struct GzipScanner;

const GZIP_MAGIC: &[u8] = &[0x1F, 0x8B, 0x08];

impl Scanner for GzipScanner {
    fn spec(&self) -> ScannerSpec {
        ScannerSpec {
            name: "gzip",
            description: "decodes gzip streams and re-analyzes their contents",
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
        while let Some(off) = sbuf.find_bytes(GZIP_MAGIC, from)? {
            if let Some(decoded) = gzip_capped(&sbuf.data()[off..], cap) {
                params.recurse(sbuf.decoded_child(off, "GZIP", decoded)?);
            }
            from = off + 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::format_path;
    use crate::scanners::testutil::Harness;
    use crate::scanners::EmailScanner;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn gz(data: &[u8]) -> Vec<u8> {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(data).unwrap();
        enc.finish().unwrap()
    }

    #[test]
    fn decoded_child_is_anchored_at_magic() {
        let h = Harness::new();
        let payload = b"send: hello@example.com world";
        let page = h.page(&gz(payload));
        h.scan(&GzipScanner, &page);

        let children = h.sink.children.lock().unwrap();
        assert_eq!(children.len(), 1);
        assert_eq!(children[0].data(), payload);
        assert_eq!(format_path(children[0].path()), "0-GZIP-0");

        // the email inside lands at the offset an independent decompress-and-
        // search finds it at
        let independent = memchr::memmem::find(payload, b"hello@example.com").unwrap();
        assert_eq!(independent, 6);
        h.scan(&EmailScanner, &children[0]);
        let feats = h.features("email");
        assert_eq!(feats[0].0, format!("0-GZIP-{independent}"));
    }

    #[test]
    fn magic_followed_by_garbage_is_silent() {
        let h = Harness::new();
        let mut bytes = vec![0x1F, 0x8B, 0x08];
        bytes.extend([0xFF, 0xFE, 0xFD, 0x00, 0x01]);
        let page = h.page(&bytes);
        h.scan(&GzipScanner, &page);
        assert!(h.sink.children.lock().unwrap().is_empty());
    }

    #[test]
    fn stream_at_nonzero_offset() {
        let h = Harness::new();
        let mut bytes = vec![0xAA; 137];
        bytes.extend(gz(b"payload text"));
        bytes.extend(vec![0xBB; 64]);
        let page = h.page(&bytes);
        h.scan(&GzipScanner, &page);
        let children = h.sink.children.lock().unwrap();
        assert_eq!(children.len(), 1);
        assert_eq!(format_path(children[0].path()), "137-GZIP-0");
        assert_eq!(children[0].data(), b"payload text");
    }

    #[test]
    fn nested_gzip_decodes_level_by_level() {
        let h = Harness::new();
        let inner = gz(b"innermost secret@mail.net text");
        let outer = gz(&inner);
        let page = h.page(&outer);
        h.scan(&GzipScanner, &page);
        // The inner stream is incompressible, so its bytes (magic included)
        // pass through the outer deflate as literals and may decode as a
        // second, coincidental stream. The child anchored at the outer magic
        // must reproduce the inner stream exactly.
        let first = h.sink.children.lock().unwrap().remove(0);
        assert_eq!(format_path(first.path()), "0-GZIP-0");
        assert_eq!(first.data(), &inner[..]);
        // scan that child: the nested stream anchors at its own magic
        h.scan(&GzipScanner, &first);
        let children = h.sink.children.lock().unwrap();
        let deepest = children
            .iter()
            .find(|c| format_path(c.path()) == "0-GZIP-0-GZIP-0")
            .expect("nested child");
        assert_eq!(deepest.data(), b"innermost secret@mail.net text");
    }
}
