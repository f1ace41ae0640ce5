//! High-throughput bulk-data feature extraction.
//!
//! bulkscan reads evidence (raw images, files, directory trees) in parallel
//! fixed-size pages, runs every registered scanner over every buffer,
//! recursively re-analyzes whatever decodes (gzip, zip, base64), and persists
//! findings as forensic-path-addressed feature files, carved objects, and
//! normalized histograms.
//!
//! The crate is organized around a few pieces:
//! - [`sbuf`]: immutable scan buffers with provenance and leak accounting.
//! - [`path`]: forensic paths, their text form, and the path printer.
//! - [`scanner`]: the scanner registry, phases, and dispatch rules.
//! - [`recorder`]: feature files, carving, and histograms.
//! - [`scanners`]: the built-in email/url/gzip/zip/base64/jpeg scanners.
//! - [`media`]: input enumeration and page planning.
//! - [`engine`]: the worker pool that ties it all together.
//! - [`cli`]: the `bulkscan` command-line interface.

pub mod cli;
pub mod decode;
pub mod engine;
pub mod media;
pub mod path;
pub mod recorder;
pub mod sbuf;
pub mod scanner;
pub mod scanners;

pub const TOOL_NAME: &str = "bulkscan";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version of the feature-file format written by the recorders.
pub const FORMAT_VERSION: u32 = 1;

pub use engine::{run, RunConfig, RunError, RunReport};
pub use path::{format_path, parse_path, path_print, ForensicPath};
pub use recorder::{escape_bytes, unescape_bytes, FeatureRecorderSet};
pub use sbuf::{AllocationLedger, SBuf};
pub use scanner::{Scanner, ScannerSet, ScanParams};
