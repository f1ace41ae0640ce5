//! Email address recognizer over raw bytes and zero-interleaved UTF-16.
//!
//! Matches `local@label(.label)+` where the local part draws from
//! `[A-Za-z0-9._%+-]`, domain labels from `[A-Za-z0-9-]`, and the final label
//! is 2-16 letters. Match boundaries must not be alphanumeric; the start and
//! end of the buffer count as boundaries, which is what finds addresses cut
//! off by a page edge or a decode window.

use memchr::memchr_iter;

use crate::scanner::{ScanError, Scanner, ScannerFlags, ScanParams, ScannerSpec};
use crate::scanners::scan_utf16_lanes;

pub struct EmailScanner;

const TLD_MAX: usize = 16;

fn is_local(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'%' | b'+' | b'-')
}

fn is_domain(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'-' || b == b'.'
}

enum Domain {
    /// Pattern match ending here, boundary rule satisfied.
    Valid(usize),
    /// Pattern matched greedily but the byte after it is alphanumeric; the
    /// match is dropped whole and scanning resumes after it.
    Rejected(usize),
    NoMatch,
}

/// Reports every `(start, len)` address in `data`. Matches never overlap and
/// come out in buffer order, exactly as a reference regex with non-overlapping
/// leftmost-greedy semantics plus a non-alphanumeric-boundary filter would
/// produce them.
pub fn find_emails(data: &[u8], on_match: &mut dyn FnMut(usize, usize)) {
    let mut resume = 0usize;
    for at in memchr_iter(b'@', data) {
        if at < resume {
            continue;
        }
        // local part: scan left, never into a previously consumed match
        let mut start = at;
        while start > resume && is_local(data[start - 1]) {
            start -= 1;
        }
        if start == at {
            continue;
        }
        // domain run: scan right over labels and dots
        let mut run_end = at + 1;
        while run_end < data.len() && is_domain(data[run_end]) {
            run_end += 1;
        }
        match validate_domain(data, at + 1, run_end) {
            Domain::Valid(end) => {
                // left boundary can only be alphanumeric when clamped by an
                // earlier match; the rejected match still consumes its span
                if start > 0 && data[start - 1].is_ascii_alphanumeric() {
                    resume = end;
                } else {
                    on_match(start, end - start);
                    resume = end;
                }
            }
            Domain::Rejected(end) => resume = end,
            Domain::NoMatch => {}
        }
    }
}

/// Validates the domain run `[domain_start, run_end)`: at least one dotted
/// label, then a final label whose leading 2-16 letters form the TLD.
fn validate_domain(data: &[u8], domain_start: usize, mut run_end: usize) -> Domain {
    while run_end > domain_start && matches!(data[run_end - 1], b'.' | b'-') {
        run_end -= 1;
    }
    if run_end <= domain_start {
        return Domain::NoMatch;
    }
    // label boundaries within the trimmed run
    let mut label_starts = vec![domain_start];
    for (i, &b) in data.iter().enumerate().take(run_end).skip(domain_start) {
        if b == b'.' {
            label_starts.push(i + 1);
        }
    }
    // Try the rightmost final label first and drop labels until one yields a
    // valid TLD run; labels that precede the TLD must all be nonempty.
    'candidate: for idx in (1..label_starts.len()).rev() {
        for w in label_starts[..=idx].windows(2) {
            if w[1] - w[0] <= 1 {
                continue 'candidate;
            }
        }
        let label_start = label_starts[idx];
        let label_end = if idx + 1 < label_starts.len() {
            label_starts[idx + 1] - 1
        } else {
            run_end
        };
        let mut alpha = label_start;
        while alpha < label_end && data[alpha].is_ascii_alphabetic() {
            alpha += 1;
        }
        let tld_len = (alpha - label_start).min(TLD_MAX);
        if tld_len < 2 {
            continue;
        }
        let end = label_start + tld_len;
        if end < data.len() && data[end].is_ascii_alphanumeric() {
            // Greedy TLD ends against an alphanumeric byte: the match is
            // dropped whole, not re-derived shorter.
            return Domain::Rejected(end);
        }
        return Domain::Valid(end);
    }
    Domain::NoMatch
}

impl Scanner for EmailScanner {
    fn spec(&self) -> ScannerSpec {
        ScannerSpec {
            name: "email",
            description: "email addresses in raw bytes and UTF-16 text",
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
                result = params.record_feature("email", start, len);
            }
        };
        find_emails(data, &mut record);
        scan_utf16_lanes(data, |shadow, emit| find_emails(shadow, emit), record);
        result
    }
}
