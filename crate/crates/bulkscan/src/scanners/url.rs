//! URL recognizer: `http://`, `https://`, and `ftp://` followed by an
//! RFC 3986-style host and path charset, terminating at whitespace, quotes,
//! or angle brackets. UTF-16 variants are scanned like email.

use memchr::memmem;

use crate::scanner::{ScanError, Scanner, ScannerFlags, ScanParams, ScannerSpec};
use crate::scanners::scan_utf16_lanes;

pub struct UrlScanner;

const SCHEMES: [&[u8]; 3] = [b"https", b"http", b"ftp"];

/// RFC 3986 unreserved + reserved + '%', minus both quote characters so
/// quoted attributes terminate the match.
fn is_url_char(b: u8) -> bool {
    b.is_ascii_alphanumeric()
        || matches!(
            b,
            b'-' | b'.'
                | b'_'
                | b'~'
                | b':'
                | b'/'
                | b'?'
                | b'#'
                | b'['
                | b']'
                | b'@'
                | b'!'
                | b'$'
                | b'&'
                | b'('
                | b')'
                | b'*'
                | b'+'
                | b','
                | b';'
                | b'='
                | b'%'
        )
}

/// Reports every `(start, len)` URL in `data`, non-overlapping, in order.
pub fn find_urls(data: &[u8], on_match: &mut dyn FnMut(usize, usize)) {
    let mut resume = 0usize;
    for sep in memmem::find_iter(data, b"://") {
        let Some(scheme) = SCHEMES
            .iter()
            .find(|s| sep >= s.len() && data[sep - s.len()..sep] == ***s)
        else {
            continue;
        };
        let start = sep - scheme.len();
        if start < resume {
            continue;
        }
        // host must begin with an alphanumeric character
        let host = sep + 3;
        if host >= data.len() || !data[host].is_ascii_alphanumeric() {
            continue;
        }
        let mut end = host + 1;
        while end < data.len() && is_url_char(data[end]) {
            end += 1;
        }
        // boundary before the scheme must not be alphanumeric; a rejected
        // match still consumes its span
        if start == 0 || !data[start - 1].is_ascii_alphanumeric() {
            on_match(start, end - start);
        }
        resume = end;
    }
}

impl Scanner for UrlScanner {
    fn spec(&self) -> ScannerSpec {
        ScannerSpec {
            name: "url",
            description: "http/https/ftp URLs in raw bytes and UTF-16 text",
            default_enabled: true,
            flags: ScannerFlags::NO_DUPLICATES | ScannerFlags::NO_NGRAM_PAGES,
            config_defaults: &[("context_window", "16")],
        }
    }

    fn scan(&self, params: &ScanParams<'_>) -> Result<(), ScanError> {
        let data = params.sbuf.data();
        let mut result = Ok(());
        let mut record = |start: usize, len: usize| {
            if result.is_ok() {
                result = params.record_feature("url", start, len);
            }
        };
        find_urls(data, &mut record);
        scan_utf16_lanes(data, |shadow, emit| find_urls(shadow, emit), record);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanners::testutil::Harness;

    fn matches(data: &[u8]) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        find_urls(data, &mut |s, l| out.push(data[s..s + l].to_vec()));
        out
    }

    #[test]
    fn quoted_href_terminates_at_quote() {
        let m = matches(b"<a href=\"http://example.com/a?b=1\">");
        assert_eq!(m, vec![b"http://example.com/a?b=1".to_vec()]);
    }

    #[test]
    fn url_at_buffer_end_is_found() {
        let m = matches(b"https://x.y");
        assert_eq!(m, vec![b"https://x.y".to_vec()]);
    }

    #[test]
    fn scheme_needs_non_alnum_boundary() {
        assert!(matches(b"xhttp://a.b ").is_empty());
        assert_eq!(matches(b"(http://a.b)").len(), 1);
        assert_eq!(matches(b"(http://a.b) x").first().unwrap(), b"http://a.b)");
    }

    #[test]
    fn empty_or_bad_host_is_skipped() {
        assert!(matches(b"http:// nope").is_empty());
        assert!(matches(b"http:///path").is_empty());
        assert!(matches(b"mailto://x.y").is_empty());
    }

    #[test]
    fn whitespace_and_angles_terminate() {
        assert_eq!(matches(b"<http://a.b/c> tail").first().unwrap(), b"http://a.b/c");
        assert_eq!(matches(b"ftp://h.d/file txt").first().unwrap(), b"ftp://h.d/file");
    }

    #[test]
    fn utf16_url_is_found() {
        let h = Harness::new();
        let bytes: Vec<u8> = "padding padding see https://example.org/path now"
            .bytes()
            .flat_map(|b| [0, b])
            .collect();
        let page = h.page(&bytes);
        h.scan(&UrlScanner, &page);
        let feats = h.features("url");
        assert_eq!(feats.len(), 1);
        assert_eq!(feats[0].1, "https://example.org/path");
    }
}
