//! Scanner registry, lifecycle phases, dispatch, and per-scanner timing.
//!
//! Scanners register before the INIT phase, are dispatched concurrently from
//! worker threads over read-only registry state, and are torn down in the
//! SHUTDOWN phase. A scanner that fails is logged and contained; only feature
//! storage failures abort the run.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use bitflags::bitflags;
use thiserror::Error;

use crate::recorder::{FeatureRecorderSet, StorageError};
use crate::sbuf::{BufferError, SBuf};

bitflags! {
    /// Dispatch-eligibility flags carried by a scanner's spec.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct ScannerFlags: u8 {
        /// Only meaningful on raw evidence; never called on decoded data.
        const DEPTH0_ONLY = 1 << 0;
        /// Skipped on buffers whose content hash was already seen.
        const NO_DUPLICATES = 1 << 1;
        /// Skipped on pages that are a repeating n-gram.
        const NO_NGRAM_PAGES = 1 << 2;
    }
}

impl std::fmt::Display for ScannerFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut names = Vec::new();
        if self.contains(ScannerFlags::DEPTH0_ONLY) {
            names.push("DEPTH0_ONLY");
        }
        if self.contains(ScannerFlags::NO_DUPLICATES) {
            names.push("NO_DUPLICATES");
        }
        if self.contains(ScannerFlags::NO_NGRAM_PAGES) {
            names.push("NO_NGRAM_PAGES");
        }
        write!(f, "{}", names.join("|"))
    }
}

/// Scanner identity and defaults, provided by each scanner implementation.
#[derive(Debug, Clone)]
pub struct ScannerSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub default_enabled: bool,
    pub flags: ScannerFlags,
    /// Name/value configuration defaults; overridable per run.
    pub config_defaults: &'static [(&'static str, &'static str)],
}

/// Per-scanner name/value configuration with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct ScannerConfig {
    values: BTreeMap<String, String>,
}

impl ScannerConfig {
    fn from_defaults(defaults: &[(&str, &str)]) -> ScannerConfig {
        ScannerConfig {
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Config preloaded with a spec's declared defaults.
    pub fn from_spec(spec: &ScannerSpec) -> ScannerConfig {
        Self::from_defaults(spec.config_defaults)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get_usize(&self, key: &str) -> Option<usize> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    /// Parsed value, or `default` when the key is absent or malformed.
    pub fn usize_or(&self, key: &str, default: usize) -> usize {
        self.get_usize(key).unwrap_or(default)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Call and wall-time counters, updated around every scan invocation.
#[derive(Debug, Default)]
pub struct ScannerStats {
    calls: AtomicU64,
    nanoseconds: AtomicU64,
}

impl ScannerStats {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Acquire)
    }

    pub fn nanoseconds(&self) -> u64 {
        self.nanoseconds.load(Ordering::Acquire)
    }
}

/// Snapshot of one scanner's counters for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ScannerCounters {
    pub calls: u64,
    pub nanoseconds: u64,
}

/// Scanner-raised failure. `Storage` aborts the run; everything else is
/// logged and contained so one bad scanner cannot take down the analysis.
#[derive(Debug, Error)]
pub enum ScanError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("buffer access: {0}")]
    Buffer(#[from] BufferError),
    #[error("unknown feature recorder {0:?}")]
    UnknownRecorder(String),
    #[error("{0}")]
    Failed(String),
}

/// Registry and phase misuse.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("scanner {0:?} is already registered")]
    DuplicateScanner(String),
    #[error("unknown scanner {name:?}; valid scanners: {valid}")]
    UnknownScanner { name: String, valid: String },
    #[error("scanner {scanner:?} has no config variable {key:?}")]
    UnknownConfigKey { scanner: String, key: String },
    #[error("phase error: {0}")]
    Phase(String),
}

/// Receives decoded children that scanners want re-analyzed.
pub trait RecursionSink: Sync {
    fn recurse(&self, child: SBuf);
}

/// Sink that drops all recursion; useful where recursion is meaningless
/// (e.g. the path printer's decoders or scanner smoke tests).
pub struct NullSink;

impl RecursionSink for NullSink {
    fn recurse(&self, _child: SBuf) {}
}

/// Everything a scan invocation may touch. Handed to the scan hook per
/// invocation; scanners keep no other state.
pub struct ScanParams<'a> {
    pub sbuf: &'a SBuf,
    /// Recursion depth; equals the number of decoder hops in `sbuf`'s path.
    pub depth: u32,
    pub recorders: &'a FeatureRecorderSet,
    pub config: &'a ScannerConfig,
    sink: &'a dyn RecursionSink,
}

impl<'a> ScanParams<'a> {
    pub fn new(
        sbuf: &'a SBuf,
        recorders: &'a FeatureRecorderSet,
        config: &'a ScannerConfig,
        sink: &'a dyn RecursionSink,
    ) -> ScanParams<'a> {
        ScanParams {
            sbuf,
            depth: sbuf.depth(),
            recorders,
            config,
            sink,
        }
    }

    /// True when a depth-0 feature at `start` belongs to the page margin and
    /// is therefore the next page's responsibility.
    fn in_margin(&self, start: usize) -> bool {
        self.depth == 0 && start >= self.sbuf.page_len()
    }

    /// Records the feature at `[start, start+len)` with a surrounding context
    /// window (config `context_window`, default 16 bytes each side). Features
    /// starting in the page margin are suppressed.
    pub fn record_feature(
        &self,
        recorder: &str,
        start: usize,
        len: usize,
    ) -> Result<(), ScanError> {
        let end = self.check_range(start, len)?;
        let window = self.config.usize_or("context_window", 16);
        let lo = start.saturating_sub(window);
        let hi = end.saturating_add(window).min(self.sbuf.len());
        let context = &self.sbuf.data()[lo..hi];
        self.record_feature_with_context(recorder, start, len, context)
    }

    fn check_range(&self, start: usize, len: usize) -> Result<usize, ScanError> {
        match start.checked_add(len) {
            Some(end) if len > 0 && end <= self.sbuf.len() => Ok(end),
            _ => Err(ScanError::Buffer(BufferError::OutOfBounds {
                offset: start,
                len,
                available: self.sbuf.len(),
            })),
        }
    }

    /// Like [`ScanParams::record_feature`] but with caller-supplied context
    /// bytes (used where the context is synthesized metadata).
    pub fn record_feature_with_context(
        &self,
        recorder: &str,
        start: usize,
        len: usize,
        context: &[u8],
    ) -> Result<(), ScanError> {
        let end = self.check_range(start, len)?;
        if self.in_margin(start) {
            return Ok(());
        }
        let rec = self
            .recorders
            .get(recorder)
            .ok_or_else(|| ScanError::UnknownRecorder(recorder.to_string()))?;
        let feature = &self.sbuf.data()[start..end];
        rec.record(&self.sbuf.path_at(start), feature, context)?;
        Ok(())
    }

    /// Carves `[start, start+len)` through the named recorder under its carve
    /// mode. Margin-originating carves are suppressed like features.
    pub fn carve(
        &self,
        recorder: &str,
        start: usize,
        len: usize,
        extension: &str,
    ) -> Result<(), ScanError> {
        if self.in_margin(start) {
            return Ok(());
        }
        let rec = self
            .recorders
            .get(recorder)
            .ok_or_else(|| ScanError::UnknownRecorder(recorder.to_string()))?;
        rec.carve(self.sbuf, start, len, extension)?;
        Ok(())
    }

    /// Hands a decoded child back for recursive re-analysis.
    pub fn recurse(&self, child: SBuf) {
        self.sink.recurse(child);
    }
}

/// A content recognizer or decoder. Implementations are stateless between
/// calls; all per-invocation state flows through [`ScanParams`], so concurrent
/// invocations on distinct buffers are safe.
pub trait Scanner: Send + Sync {
    fn spec(&self) -> ScannerSpec;

    fn init(&self, _config: &ScannerConfig) -> Result<(), ScanError> {
        Ok(())
    }

    fn scan(&self, params: &ScanParams<'_>) -> Result<(), ScanError>;

    fn shutdown(&self) -> Result<(), ScanError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Registering,
    Ready,
    Shutdown,
}

struct Entry {
    scanner: Box<dyn Scanner>,
    spec: ScannerSpec,
    config: ScannerConfig,
    enabled: bool,
    stats: ScannerStats,
}

/// Classification of the buffer being dispatched, used against scanner flags.
pub struct DispatchClass {
    /// Content hash already seen this run.
    pub duplicate: bool,
    /// Page is a repeating n-gram.
    pub ngram_page: bool,
}

impl DispatchClass {
    pub fn fresh() -> DispatchClass {
        DispatchClass {
            duplicate: false,
            ngram_page: false,
        }
    }
}

/// One line of `--help-scanners` / `list-scanners` output.
#[derive(Debug, Clone)]
pub struct ScannerInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub enabled: bool,
    pub default_enabled: bool,
    pub flags: ScannerFlags,
    pub config: Vec<(String, String)>,
}

/// The set of registered scanners. Mutable only until INIT; read-only and
/// shareable during scanning.
#[derive(Default)]
pub struct ScannerSet {
    entries: Vec<Entry>,
    phase: Option<Phase>,
}

impl ScannerSet {
    pub fn new() -> ScannerSet {
        ScannerSet {
            entries: Vec::new(),
            phase: Some(Phase::Registering),
        }
    }

    fn phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::Registering)
    }

    fn valid_names(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.spec.name)
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut Entry, ConfigError> {
        let valid = self.valid_names();
        self.entries
            .iter_mut()
            .find(|e| e.spec.name == name)
            .ok_or(ConfigError::UnknownScanner {
                name: name.to_string(),
                valid,
            })
    }

    pub fn register(&mut self, scanner: Box<dyn Scanner>) -> Result<(), ConfigError> {
        if self.phase() != Phase::Registering {
            return Err(ConfigError::Phase(
                "scanners must be registered before INIT".to_string(),
            ));
        }
        let spec = scanner.spec();
        if self.entries.iter().any(|e| e.spec.name == spec.name) {
            return Err(ConfigError::DuplicateScanner(spec.name.to_string()));
        }
        let config = ScannerConfig::from_defaults(spec.config_defaults);
        let enabled = spec.default_enabled;
        self.entries.push(Entry {
            scanner,
            spec,
            config,
            enabled,
            stats: ScannerStats::default(),
        });
        Ok(())
    }

    pub fn enable(&mut self, name: &str) -> Result<(), ConfigError> {
        self.entry_mut(name)?.enabled = true;
        Ok(())
    }

    pub fn disable(&mut self, name: &str) -> Result<(), ConfigError> {
        self.entry_mut(name)?.enabled = false;
        Ok(())
    }

    pub fn is_enabled(&self, name: &str) -> Option<bool> {
        self.entries
            .iter()
            .find(|e| e.spec.name == name)
            .map(|e| e.enabled)
    }

    /// Overrides one scanner config variable. The key must exist among the
    /// scanner's declared defaults.
    pub fn set_config(&mut self, scanner: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let entry = self.entry_mut(scanner)?;
        if entry.config.get(key).is_none() {
            return Err(ConfigError::UnknownConfigKey {
                scanner: scanner.to_string(),
                key: key.to_string(),
            });
        }
        entry.config.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// INIT phase: calls every enabled scanner's init hook. A failing init
    /// disables that scanner and the run continues.
    pub fn run_init(&mut self) -> Result<(), ConfigError> {
        if self.phase() != Phase::Registering {
            return Err(ConfigError::Phase("INIT may only follow registration".to_string()));
        }
        for entry in &mut self.entries {
            if !entry.enabled {
                continue;
            }
            if let Err(e) = entry.scanner.init(&entry.config) {
                log::warn!("scanner {} failed to initialize, disabling: {e}", entry.spec.name);
                entry.enabled = false;
            }
        }
        self.phase = Some(Phase::Ready);
        Ok(())
    }

    /// SHUTDOWN phase: calls shutdown hooks of enabled scanners. Failures are
    /// logged and do not stop the teardown.
    pub fn run_shutdown(&mut self) -> Result<(), ConfigError> {
        if self.phase() != Phase::Ready {
            return Err(ConfigError::Phase(
                "SHUTDOWN requires a completed INIT".to_string(),
            ));
        }
        for entry in &mut self.entries {
            if !entry.enabled {
                continue;
            }
            if let Err(e) = entry.scanner.shutdown() {
                log::warn!("scanner {} failed to shut down: {e}", entry.spec.name);
            }
        }
        self.phase = Some(Phase::Shutdown);
        Ok(())
    }

    /// Invokes every enabled scanner whose flags admit this buffer, exactly
    /// once each, timing each invocation. Scanner failures are logged against
    /// the scanner name and buffer path and counted in `errors`; only storage
    /// failures propagate.
    pub fn dispatch(
        &self,
        sbuf: &SBuf,
        class: &DispatchClass,
        recorders: &FeatureRecorderSet,
        sink: &dyn RecursionSink,
        errors: &AtomicU64,
    ) -> Result<(), StorageError> {
        debug_assert_eq!(self.phase(), Phase::Ready, "dispatch outside INIT..SHUTDOWN");
        let depth = sbuf.depth();
        for entry in &self.entries {
            if !entry.enabled {
                continue;
            }
            let flags = entry.spec.flags;
            if flags.contains(ScannerFlags::DEPTH0_ONLY) && depth > 0 {
                continue;
            }
            if flags.contains(ScannerFlags::NO_DUPLICATES) && class.duplicate {
                continue;
            }
            if flags.contains(ScannerFlags::NO_NGRAM_PAGES) && class.ngram_page {
                continue;
            }
            let params = ScanParams::new(sbuf, recorders, &entry.config, sink);
            let started = Instant::now();
            let result = entry.scanner.scan(&params);
            let elapsed = started.elapsed().as_nanos() as u64;
            entry.stats.calls.fetch_add(1, Ordering::AcqRel);
            entry.stats.nanoseconds.fetch_add(elapsed, Ordering::AcqRel);
            match result {
                Ok(()) => {}
                Err(ScanError::Storage(e)) => return Err(e),
                Err(e) => {
                    errors.fetch_add(1, Ordering::AcqRel);
                    log::warn!("scanner {} failed on {}: {e}", entry.spec.name, sbuf.path());
                }
            }
        }
        Ok(())
    }

    /// Scanners sorted by name, with their effective state.
    pub fn list(&self) -> Vec<ScannerInfo> {
        let mut infos: Vec<ScannerInfo> = self
            .entries
            .iter()
            .map(|e| ScannerInfo {
                name: e.spec.name,
                description: e.spec.description,
                enabled: e.enabled,
                default_enabled: e.spec.default_enabled,
                flags: e.spec.flags,
                config: e
                    .config
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect(),
            })
            .collect();
        infos.sort_by_key(|i| i.name);
        infos
    }

    /// Per-scanner counter snapshot for the run report.
    pub fn stats(&self) -> BTreeMap<String, ScannerCounters> {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.spec.name.to_string(),
                    ScannerCounters {
                        calls: e.stats.calls(),
                        nanoseconds: e.stats.nanoseconds(),
                    },
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::ForensicPath;
    use crate::recorder::{CarveMode, RecorderSpec};
    use crate::sbuf::AllocationLedger;
    use std::sync::atomic::AtomicUsize;
    use std::sync::{Arc, Mutex};

    struct TestScanner {
        name: &'static str,
        default_enabled: bool,
        flags: ScannerFlags,
        scans: AtomicUsize,
        fail: bool,
        inits: AtomicUsize,
        shutdowns: AtomicUsize,
        init_buf: Mutex<Option<SBuf>>,
        ledger: Option<Arc<AllocationLedger>>,
    }

    impl TestScanner {
        fn simple(name: &'static str) -> TestScanner {
            TestScanner {
                name,
                default_enabled: true,
                flags: ScannerFlags::empty(),
                scans: AtomicUsize::new(0),
                fail: false,
                inits: AtomicUsize::new(0),
                shutdowns: AtomicUsize::new(0),
                init_buf: Mutex::new(None),
                ledger: None,
            }
        }
    }

    impl Scanner for Arc<TestScanner> {
        fn spec(&self) -> ScannerSpec {
            ScannerSpec {
                name: self.name,
                description: "test scanner",
                default_enabled: self.default_enabled,
                flags: self.flags,
                config_defaults: &[("context_window", "16")],
            }
        }

        fn init(&self, _config: &ScannerConfig) -> Result<(), ScanError> {
            self.inits.fetch_add(1, Ordering::AcqRel);
            if let Some(ledger) = &self.ledger {
                // allocate working state in INIT, released in SHUTDOWN
                let buf = SBuf::from_vec(vec![0u8; 32], ForensicPath::root(), 32, ledger).unwrap();
                *self.init_buf.lock().unwrap() = Some(buf);
            }
            Ok(())
        }

        fn scan(&self, _params: &ScanParams<'_>) -> Result<(), ScanError> {
            self.scans.fetch_add(1, Ordering::AcqRel);
            if self.fail {
                return Err(ScanError::Failed("synthetic fault".to_string()));
            }
            Ok(())
        }

        fn shutdown(&self) -> Result<(), ScanError> {
            self.shutdowns.fetch_add(1, Ordering::AcqRel);
            *self.init_buf.lock().unwrap() = None;
            Ok(())
        }
    }

    fn recorders() -> (tempfile::TempDir, FeatureRecorderSet) {
        let dir = tempfile::tempdir().unwrap();
        let set = FeatureRecorderSet::create(
            dir.path(),
            &[RecorderSpec {
                name: "email",
                carve_mode: CarveMode::Never,
                histogram: None,
            }],
        )
        .unwrap();
        (dir, set)
    }

    fn buf_at_depth(depth: u32) -> (SBuf, Arc<AllocationLedger>) {
        let ledger = AllocationLedger::new();
        let root = SBuf::from_vec(vec![1u8; 64], ForensicPath::root(), 64, &ledger).unwrap();
        let buf = if depth > 0 {
            root.decoded_child(0, "GZIP", vec![2u8; 64]).unwrap()
        } else {
            root
        };
        (buf, ledger)
    }

    #[test]
    fn register_lists_sorted_and_rejects_duplicates() {
        let mut set = ScannerSet::new();
        for name in ["zip", "email", "gzip"] {
            set.register(Box::new(Arc::new(TestScanner::simple(name)))).unwrap();
        }
        let listed: Vec<&str> = set.list().iter().map(|i| i.name).collect();
        assert_eq!(listed, vec!["email", "gzip", "zip"]);
        assert!(matches!(
            set.register(Box::new(Arc::new(TestScanner::simple("zip")))),
            Err(ConfigError::DuplicateScanner(_))
        ));
    }

    #[test]
    fn unknown_scanner_error_lists_valid_names() {
        let mut set = ScannerSet::new();
        set.register(Box::new(Arc::new(TestScanner::simple("email")))).unwrap();
        let err = set.disable("nope").unwrap_err();
        assert!(err.to_string().contains("email"));
    }

    #[test]
    fn disabled_scanner_is_not_dispatched() {
        let mut set = ScannerSet::new();
        let sc = Arc::new(TestScanner::simple("email"));
        set.register(Box::new(Arc::clone(&sc))).unwrap();
        set.disable("email").unwrap();
        set.run_init().unwrap();
        let (_dir, recs) = recorders();
        let (buf, _l) = buf_at_depth(0);
        let errors = AtomicU64::new(0);
        set.dispatch(&buf, &DispatchClass::fresh(), &recs, &NullSink, &errors)
            .unwrap();
        assert_eq!(sc.scans.load(Ordering::Acquire), 0);

        // re-enabling restores dispatch
        let mut set = ScannerSet::new();
        let sc = Arc::new(TestScanner::simple("email"));
        set.register(Box::new(Arc::clone(&sc))).unwrap();
        set.disable("email").unwrap();
        set.enable("email").unwrap();
        set.run_init().unwrap();
        set.dispatch(&buf, &DispatchClass::fresh(), &recs, &NullSink, &errors)
            .unwrap();
        assert_eq!(sc.scans.load(Ordering::Acquire), 1);
    }

    #[test]
    fn default_disabled_scanner_needs_explicit_enable() {
        let mut set = ScannerSet::new();
        let mut sc = TestScanner::simple("experimental");
        sc.default_enabled = false;
        let sc = Arc::new(sc);
        set.register(Box::new(Arc::clone(&sc))).unwrap();
        set.run_init().unwrap();
        let (_dir, recs) = recorders();
        let (buf, _l) = buf_at_depth(0);
        let errors = AtomicU64::new(0);
        set.dispatch(&buf, &DispatchClass::fresh(), &recs, &NullSink, &errors)
            .unwrap();
        assert_eq!(sc.scans.load(Ordering::Acquire), 0);
        assert_eq!(sc.inits.load(Ordering::Acquire), 0, "disabled: no init hook");
    }

    #[test]
    fn depth0_only_scanner_skips_decoded_buffers() {
        let mut set = ScannerSet::new();
        let mut sc = TestScanner::simple("windirs");
        sc.flags = ScannerFlags::DEPTH0_ONLY;
        let sc = Arc::new(sc);
        set.register(Box::new(Arc::clone(&sc))).unwrap();
        set.run_init().unwrap();
        let (_dir, recs) = recorders();
        let errors = AtomicU64::new(0);

        let (decoded, _l) = buf_at_depth(1);
        set.dispatch(&decoded, &DispatchClass::fresh(), &recs, &NullSink, &errors)
            .unwrap();
        assert_eq!(sc.scans.load(Ordering::Acquire), 0);

        let (raw, _l) = buf_at_depth(0);
        set.dispatch(&raw, &DispatchClass::fresh(), &recs, &NullSink, &errors)
            .unwrap();
        assert_eq!(sc.scans.load(Ordering::Acquire), 1);
    }

    #[test]
    fn duplicate_and_ngram_flags_suppress() {
        let mut set = ScannerSet::new();
        let mut sc = TestScanner::simple("email");
        sc.flags = ScannerFlags::NO_DUPLICATES | ScannerFlags::NO_NGRAM_PAGES;
        let sc = Arc::new(sc);
        set.register(Box::new(Arc::clone(&sc))).unwrap();
        set.run_init().unwrap();
        let (_dir, recs) = recorders();
        let (buf, _l) = buf_at_depth(0);
        let errors = AtomicU64::new(0);

        let dup = DispatchClass {
            duplicate: true,
            ngram_page: false,
        };
        let ngram = DispatchClass {
            duplicate: false,
            ngram_page: true,
        };
        set.dispatch(&buf, &dup, &recs, &NullSink, &errors).unwrap();
        set.dispatch(&buf, &ngram, &recs, &NullSink, &errors).unwrap();
        assert_eq!(sc.scans.load(Ordering::Acquire), 0);
        assert_eq!(set.stats()["email"].calls, 0);
    }

    #[test]
    fn each_enabled_scanner_called_once_with_stats() {
        let mut set = ScannerSet::new();
        let scanners: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|n| Arc::new(TestScanner::simple(n)))
            .collect();
        for sc in &scanners {
            set.register(Box::new(Arc::clone(sc))).unwrap();
        }
        set.run_init().unwrap();
        let (_dir, recs) = recorders();
        let (buf, _l) = buf_at_depth(0);
        let errors = AtomicU64::new(0);
        set.dispatch(&buf, &DispatchClass::fresh(), &recs, &NullSink, &errors)
            .unwrap();
        for sc in &scanners {
            assert_eq!(sc.scans.load(Ordering::Acquire), 1);
        }
        let stats = set.stats();
        assert!(stats.values().all(|s| s.calls == 1));
    }

    #[test]
    fn scanner_fault_is_contained() {
        let mut set = ScannerSet::new();
        let mut bad = TestScanner::simple("bad");
        bad.fail = true;
        let bad = Arc::new(bad);
        let good = Arc::new(TestScanner::simple("good"));
        set.register(Box::new(Arc::clone(&bad))).unwrap();
        set.register(Box::new(Arc::clone(&good))).unwrap();
        set.run_init().unwrap();
        let (_dir, recs) = recorders();
        let (buf, _l) = buf_at_depth(0);
        let errors = AtomicU64::new(0);
        set.dispatch(&buf, &DispatchClass::fresh(), &recs, &NullSink, &errors)
            .unwrap();
        assert_eq!(good.scans.load(Ordering::Acquire), 1);
        assert_eq!(errors.load(Ordering::Acquire), 1);
    }

    #[test]
    fn storage_failure_escapes_dispatch() {
        struct StorageFault;
        impl Scanner for StorageFault {
            fn spec(&self) -> ScannerSpec {
                ScannerSpec {
                    name: "fault",
                    description: "raises a storage error",
                    default_enabled: true,
                    flags: ScannerFlags::empty(),
                    config_defaults: &[],
                }
            }
            fn scan(&self, _params: &ScanParams<'_>) -> Result<(), ScanError> {
                Err(ScanError::Storage(StorageError {
                    path: "/dev/full".into(),
                    source: std::io::Error::other("no space"),
                }))
            }
        }
        let mut set = ScannerSet::new();
        set.register(Box::new(StorageFault)).unwrap();
        set.run_init().unwrap();
        let (_dir, recs) = recorders();
        let (buf, _l) = buf_at_depth(0);
        let errors = AtomicU64::new(0);
        let result = set.dispatch(&buf, &DispatchClass::fresh(), &recs, &NullSink, &errors);
        assert!(result.is_err(), "storage loss must abort, not be contained");
        assert_eq!(errors.load(Ordering::Acquire), 0);
    }

    #[test]
    fn phase_ordering_is_enforced() {
        let mut set = ScannerSet::new();
        assert!(matches!(set.run_shutdown(), Err(ConfigError::Phase(_))));
        set.run_init().unwrap();
        assert!(matches!(set.run_init(), Err(ConfigError::Phase(_))));
        set.run_shutdown().unwrap();
        assert!(matches!(set.run_shutdown(), Err(ConfigError::Phase(_))));
    }

    #[test]
    fn init_allocations_released_by_shutdown_balance_ledger() {
        let ledger = AllocationLedger::new();
        let mut sc = TestScanner::simple("alloc");
        sc.ledger = Some(Arc::clone(&ledger));
        let sc = Arc::new(sc);
        let mut set = ScannerSet::new();
        set.register(Box::new(Arc::clone(&sc))).unwrap();
        set.run_init().unwrap();
        assert_eq!(ledger.allocated(), 1);
        assert!(!ledger.balanced());
        set.run_shutdown().unwrap();
        assert!(ledger.balanced());
        assert_eq!(sc.shutdowns.load(Ordering::Acquire), 1);
    }

    #[test]
    fn set_config_validates_scanner_and_key() {
        let mut set = ScannerSet::new();
        set.register(Box::new(Arc::new(TestScanner::simple("email")))).unwrap();
        set.set_config("email", "context_window", "32").unwrap();
        assert!(matches!(
            set.set_config("email", "bogus", "1"),
            Err(ConfigError::UnknownConfigKey { .. })
        ));
        assert!(matches!(
            set.set_config("nope", "context_window", "1"),
            Err(ConfigError::UnknownScanner { .. })
        ));
    }

    #[test]
    fn margin_features_are_suppressed() {
        let ledger = AllocationLedger::new();
        // 8 page bytes + 8 margin bytes
        let sbuf = SBuf::from_vec(b"aaaaaaaabbbbbbbb".to_vec(), ForensicPath::root(), 8, &ledger)
            .unwrap();
        let (_dir, recs) = recorders();
        let config = ScannerConfig::from_defaults(&[("context_window", "4")]);
        let params = ScanParams::new(&sbuf, &recs, &config, &NullSink);
        params.record_feature("email", 2, 4).unwrap(); // in page
        params.record_feature("email", 8, 4).unwrap(); // starts in margin: dropped
        params.record_feature("email", 12, 4).unwrap(); // margin: dropped
        assert_eq!(recs.get("email").unwrap().count(), 1);
    }
}
