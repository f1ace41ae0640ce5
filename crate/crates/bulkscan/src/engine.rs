//! Run orchestration: a producer-consumer worker pool over page and
//! recursion work items, content-hash dedup, repeating-n-gram page
//! suppression, media hashing, and the final machine-readable report.
//!
//! # Shape of a run
//! 1. INIT phase over the scanner set; recorders open.
//! 2. The evidence is hashed (streaming SHA-1 per file) and tiled into pages.
//! 3. The coordinator enqueues page plans; workers read each page into a scan
//!    buffer and dispatch the scanners over it. Scanners hand decoded
//!    children back: small ones are re-analyzed inline on the same thread,
//!    large ones go back onto the queue. Workers prefer recursion items over
//!    new pages, which bounds the amount of decoded data alive at once.
//! 4. When the queue drains and every in-flight item has completed, workers
//!    exit; SHUTDOWN runs, histograms are finalized, and `report.json` is
//!    written. The allocation ledger must balance exactly at that point.
//!
//! Scanner faults are contained per invocation. A feature-storage failure
//! aborts the run with partial outputs preserved.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs::File;
use std::io::Read;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::media::{self, EvidenceLayout, PagePlan};
use crate::path::{ForensicPath, DEFAULT_MAX_DEPTH};
use crate::recorder::{
    CarveMode, FeatureRecorderSet, HistogramDef, RecorderSpec, StorageError,
};
use crate::sbuf::{to_hex, AllocationLedger, SBuf};
use crate::scanner::{ConfigError, DispatchClass, RecursionSink, ScannerCounters, ScannerSet};
use crate::scanners;
use crate::{TOOL_NAME, TOOL_VERSION};

/// Children shorter than this are re-analyzed inline; longer ones are queued
/// to another thread.
pub const DEFAULT_RECURSE_INLINE_MAX: usize = 4096;
/// Decoded children at least this long participate in dedup.
pub const DEDUP_MIN_CHILD: usize = 512;
/// Longest repeating pattern considered by the n-gram page test.
pub const NGRAM_MAX: usize = 20;

/// Everything a run needs to know. `new` fills in the defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub recursive: bool,
    pub page_size: usize,
    pub margin: usize,
    pub max_depth: u32,
    pub recurse_inline_max: usize,
    /// Carve mode per recorder name; unlisted recorders never carve.
    pub carve_modes: BTreeMap<String, u8>,
    pub enable: Vec<String>,
    pub disable: Vec<String>,
    /// `(scanner, key, value)` config overrides.
    pub scanner_config: Vec<(String, String, String)>,
}

impl RunConfig {
    pub fn new(input: PathBuf, output_dir: PathBuf) -> RunConfig {
        RunConfig {
            inputs: vec![input],
            output_dir,
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            recursive: false,
            page_size: media::DEFAULT_PAGE_SIZE,
            margin: media::DEFAULT_MARGIN,
            max_depth: DEFAULT_MAX_DEPTH,
            recurse_inline_max: DEFAULT_RECURSE_INLINE_MAX,
            carve_modes: BTreeMap::from([("jpeg".to_string(), 1u8)]),
            enable: Vec::new(),
            disable: Vec::new(),
            scanner_config: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Input(#[from] media::InputError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("read failure during scan: {0}")]
    Read(std::io::Error),
}

impl RunError {
    /// Process exit status: 1 for usage/input problems, 2 for storage loss.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Storage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MediaHash {
    pub path: String,
    pub sha1: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct PageStats {
    pub total: u64,
    pub deduped: u64,
    pub ngram_skipped: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct SbufStats {
    pub allocated: u64,
    pub freed: u64,
}

/// The machine-readable run summary written to `<outdir>/report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub media_hashes: Vec<MediaHash>,
    pub scanners: BTreeMap<String, ScannerCounters>,
    pub pages: PageStats,
    pub sbufs: SbufStats,
    pub features: BTreeMap<String, u64>,
    pub wall_seconds: f64,
    pub depth_limited: u64,
    pub scanner_errors: u64,
    pub skipped_inputs: u64,
}

// --------------------------
// Suppression primitives
// --------------------------

/// Smallest period `p <= max_n` such that the buffer is that pattern tiled at
/// least twice, i.e. `data[i] == data[i mod p]` everywhere.
pub fn repeating_ngram_period(data: &[u8], max_n: usize) -> Option<usize> {
    for p in 1..=max_n.min(data.len() / 2) {
        if data[p..] == data[..data.len() - p] {
            return Some(p);
        }
    }
    None
}

/// Content-addressed dedup: true iff this buffer's hash was already seen.
/// First sight inserts and returns false.
pub fn should_skip_duplicate(sbuf: &SBuf, seen: &Mutex<HashSet<[u8; 20]>>) -> bool {
    let digest = sbuf.hash_sha1();
    !seen.lock().expect("dedup set poisoned").insert(digest)
}

/// Streaming SHA-1 of each input file.
pub fn hash_media(layout: &EvidenceLayout) -> Result<Vec<MediaHash>, RunError> {
    let mut out = Vec::with_capacity(layout.files.len());
    for file in &layout.files {
        let mut f = File::open(&file.path).map_err(RunError::Read)?;
        let mut hasher = Sha1::new();
        let mut buf = vec![0u8; 1 << 20];
        loop {
            let n = f.read(&mut buf).map_err(RunError::Read)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        out.push(MediaHash {
            path: file.path.display().to_string(),
            sha1: to_hex(&hasher.finalize()),
            bytes: file.len,
        });
    }
    Ok(out)
}

// --------------------------
// Work queue
// --------------------------

enum WorkItem {
    Page(PagePlan),
    Child(SBuf),
}

struct QueueState {
    children: VecDeque<SBuf>,
    pages: VecDeque<PagePlan>,
    in_flight: usize,
    closed: bool,
    aborted: bool,
}

/// Two-lane blocking queue: recursion children drain before new pages, and
/// the page lane applies back-pressure to the producer.
struct WorkQueue {
    state: Mutex<QueueState>,
    work_ready: Condvar,
    space_ready: Condvar,
    page_capacity: usize,
}

impl WorkQueue {
    fn new(page_capacity: usize) -> WorkQueue {
        WorkQueue {
            state: Mutex::new(QueueState {
                children: VecDeque::new(),
                pages: VecDeque::new(),
                in_flight: 0,
                closed: false,
                aborted: false,
            }),
            work_ready: Condvar::new(),
            space_ready: Condvar::new(),
            page_capacity,
        }
    }

    /// Blocks while the page lane is full. Returns false once aborted.
    fn push_page(&self, plan: PagePlan) -> bool {
        let mut st = self.state.lock().expect("queue poisoned");
        while st.pages.len() >= self.page_capacity && !st.aborted {
            st = self.space_ready.wait(st).expect("queue poisoned");
        }
        if st.aborted {
            return false;
        }
        st.pages.push_back(plan);
        drop(st);
        self.work_ready.notify_one();
        true
    }

    fn push_child(&self, child: SBuf) {
        let mut st = self.state.lock().expect("queue poisoned");
        if st.aborted {
            return;
        }
        st.children.push_back(child);
        drop(st);
        self.work_ready.notify_one();
    }

    /// Next item, children first. Returns `None` when the run is complete
    /// (closed, drained, nothing in flight) or aborted.
    fn pop(&self) -> Option<WorkItem> {
        let mut st = self.state.lock().expect("queue poisoned");
        loop {
            if st.aborted {
                return None;
            }
            if let Some(child) = st.children.pop_front() {
                st.in_flight += 1;
                return Some(WorkItem::Child(child));
            }
            if let Some(plan) = st.pages.pop_front() {
                st.in_flight += 1;
                drop(st);
                self.space_ready.notify_one();
                return Some(WorkItem::Page(plan));
            }
            if st.closed && st.in_flight == 0 {
                return None;
            }
            st = self.work_ready.wait(st).expect("queue poisoned");
        }
    }

    /// Marks one popped item complete; wakes idle workers when that makes the
    /// run quiescent.
    fn item_done(&self) {
        let mut st = self.state.lock().expect("queue poisoned");
        st.in_flight -= 1;
        let quiescent =
            st.in_flight == 0 && st.children.is_empty() && st.pages.is_empty() && st.closed;
        drop(st);
        if quiescent {
            self.work_ready.notify_all();
        }
    }

    fn close(&self) {
        self.state.lock().expect("queue poisoned").closed = true;
        self.work_ready.notify_all();
    }

    fn abort(&self) {
        let mut st = self.state.lock().expect("queue poisoned");
        st.aborted = true;
        st.children.clear();
        st.pages.clear();
        drop(st);
        self.work_ready.notify_all();
        self.space_ready.notify_all();
    }
}

// --------------------------
// Run context and recursion
// --------------------------

struct Counters {
    pages_total: AtomicU64,
    pages_deduped: AtomicU64,
    pages_ngram: AtomicU64,
    depth_limited: AtomicU64,
    scanner_errors: AtomicU64,
}

struct RunContext<'a> {
    config: &'a RunConfig,
    set: &'a ScannerSet,
    recorders: &'a FeatureRecorderSet,
    layout: &'a EvidenceLayout,
    ledger: std::sync::Arc<AllocationLedger>,
    seen: Mutex<HashSet<[u8; 20]>>,
    queue: WorkQueue,
    counters: Counters,
    fatal: Mutex<Option<RunError>>,
}

impl<'a> RunContext<'a> {
    fn record_fatal(&self, err: RunError) {
        let mut slot = self.fatal.lock().expect("fatal slot poisoned");
        if slot.is_none() {
            *slot = Some(err);
        }
        drop(slot);
        self.queue.abort();
    }

    fn worker_loop(&self) {
        while let Some(item) = self.queue.pop() {
            match item {
                WorkItem::Page(plan) => match media::read_page(self.layout, &plan) {
                    Ok(bytes) => {
                        self.counters.pages_total.fetch_add(1, Ordering::AcqRel);
                        let path = ForensicPath::at_offset(plan.global_offset);
                        match SBuf::from_vec(bytes, path, plan.page_len, &self.ledger) {
                            Ok(sbuf) => self.process(sbuf, true),
                            Err(e) => log::error!("page {}: {e}", plan.ordinal),
                        }
                    }
                    Err(e) => self.record_fatal(RunError::Read(e)),
                },
                WorkItem::Child(sbuf) => self.process(sbuf, false),
            }
            self.queue.item_done();
        }
    }

    /// Classifies, dispatches, and releases one buffer.
    fn process(&self, sbuf: SBuf, is_page: bool) {
        // n-gram first: cheaper than hashing, and a repeating page needs no
        // dedup bookkeeping
        let ngram_page = is_page && repeating_ngram_period(sbuf.data(), NGRAM_MAX).is_some();
        if ngram_page {
            self.counters.pages_ngram.fetch_add(1, Ordering::AcqRel);
        }
        let duplicate = if ngram_page {
            false
        } else if is_page || sbuf.len() >= DEDUP_MIN_CHILD {
            let dup = should_skip_duplicate(&sbuf, &self.seen);
            if dup && is_page {
                self.counters.pages_deduped.fetch_add(1, Ordering::AcqRel);
            }
            dup
        } else {
            false
        };

        let class = DispatchClass {
            duplicate,
            ngram_page,
        };
        let sink = WorkerSink {
            ctx: self,
            page_margin_start: (sbuf.depth() == 0)
                .then(|| sbuf.path().offset() + sbuf.page_len() as u64),
        };
        if let Err(e) = self.set.dispatch(
            &sbuf,
            &class,
            self.recorders,
            &sink,
            &self.counters.scanner_errors,
        ) {
            self.record_fatal(RunError::Storage(e));
        }
    }
}

/// Per-buffer recursion sink: applies the depth limit and the margin rule,
/// then either re-analyzes inline or queues the child.
struct WorkerSink<'a, 'b> {
    ctx: &'a RunContext<'b>,
    /// Absolute evidence offset where this page's margin begins (depth-0
    /// buffers only). Children anchored at or past it belong to the next page.
    page_margin_start: Option<u64>,
}

impl RecursionSink for WorkerSink<'_, '_> {
    fn recurse(&self, child: SBuf) {
        if child.depth() > self.ctx.config.max_depth {
            self.ctx.counters.depth_limited.fetch_add(1, Ordering::AcqRel);
            return;
        }
        if let Some(margin_start) = self.page_margin_start {
            // the whole decode chain starts in the margin: next page's find
            if child.path().first_segment_offset() >= margin_start {
                return;
            }
        }
        if child.len() > self.ctx.config.recurse_inline_max {
            self.ctx.queue.push_child(child);
        } else {
            self.ctx.process(child, false);
        }
    }
}

// --------------------------
// Run entry point
// --------------------------

/// Built-in recorder set: which recorder exists, whether it carves, and which
/// histograms are produced.
fn recorder_specs(carve_modes: &BTreeMap<String, u8>) -> Result<Vec<RecorderSpec>, RunError> {
    let mode = |name: &str, default: CarveMode| -> Result<CarveMode, RunError> {
        match carve_modes.get(name) {
            Some(&level) => CarveMode::from_level(level).ok_or_else(|| {
                RunError::Usage(format!("carve mode for {name} must be 0, 1, or 2"))
            }),
            None => Ok(default),
        }
    };
    Ok(vec![
        RecorderSpec {
            name: "email",
            carve_mode: mode("email", CarveMode::Never)?,
            histogram: Some(HistogramDef { case_fold: true }),
        },
        RecorderSpec {
            name: "url",
            carve_mode: mode("url", CarveMode::Never)?,
            histogram: Some(HistogramDef { case_fold: false }),
        },
        RecorderSpec {
            name: "zip",
            carve_mode: mode("zip", CarveMode::Never)?,
            histogram: None,
        },
        RecorderSpec {
            name: "jpeg",
            // carving on by default for the jpeg recorder
            carve_mode: mode("jpeg", CarveMode::Always)?,
            histogram: None,
        },
    ])
}

/// Builds the scanner set with built-ins registered and the run's
/// enable/disable and config overrides applied.
pub fn build_scanner_set(config: &RunConfig) -> Result<ScannerSet, RunError> {
    let mut set = ScannerSet::new();
    for scanner in scanners::builtins() {
        set.register(scanner)?;
    }
    for name in &config.enable {
        set.enable(name)?;
    }
    for name in &config.disable {
        set.disable(name)?;
    }
    for (scanner, key, value) in &config.scanner_config {
        set.set_config(scanner, key, value)?;
    }
    Ok(set)
}

/// Runs a full scan. The output directory must not already contain files.
pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    if config.threads == 0 {
        return Err(RunError::Usage("thread count must be at least 1".to_string()));
    }
    match std::fs::read_dir(&config.output_dir) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                return Err(RunError::Usage(format!(
                    "output directory {} is not empty",
                    config.output_dir.display()
                )));
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => {
            return Err(RunError::Storage(StorageError {
                path: config.output_dir.clone(),
                source: e,
            }))
        }
    }

    let mut layout = EvidenceLayout::default();
    for input in &config.inputs {
        let part = media::enumerate_inputs(input, config.recursive)?;
        let base = layout.total_len;
        layout.skipped += part.skipped;
        for mut f in part.files {
            f.global_offset += base;
            layout.total_len += f.len;
            layout.files.push(f);
        }
    }
    let media_hashes = hash_media(&layout)?;

    let mut set = build_scanner_set(config)?;
    set.run_init()?;
    let recorders = FeatureRecorderSet::create(&config.output_dir, &recorder_specs(&config.carve_modes)?)?;

    let plans = media::plan_pages(&layout, config.page_size, config.margin);
    let ctx = RunContext {
        config,
        set: &set,
        recorders: &recorders,
        layout: &layout,
        ledger: AllocationLedger::new(),
        seen: Mutex::new(HashSet::new()),
        queue: WorkQueue::new(config.threads.saturating_mul(4).max(4)),
        counters: Counters {
            pages_total: AtomicU64::new(0),
            pages_deduped: AtomicU64::new(0),
            pages_ngram: AtomicU64::new(0),
            depth_limited: AtomicU64::new(0),
            scanner_errors: AtomicU64::new(0),
        },
        fatal: Mutex::new(None),
    };

    std::thread::scope(|scope| {
        for _ in 0..config.threads {
            scope.spawn(|| ctx.worker_loop());
        }
        for plan in plans {
            if !ctx.queue.push_page(plan) {
                break;
            }
        }
        ctx.queue.close();
    });

    let fatal = ctx.fatal.lock().expect("fatal slot poisoned").take();
    let pages = PageStats {
        total: ctx.counters.pages_total.load(Ordering::Acquire),
        deduped: ctx.counters.pages_deduped.load(Ordering::Acquire),
        ngram_skipped: ctx.counters.pages_ngram.load(Ordering::Acquire),
    };
    let depth_limited = ctx.counters.depth_limited.load(Ordering::Acquire);
    let scanner_errors = ctx.counters.scanner_errors.load(Ordering::Acquire);
    let ledger = std::sync::Arc::clone(&ctx.ledger);
    drop(ctx);
    if let Some(err) = fatal {
        return Err(err);
    }

    set.run_shutdown()?;
    recorders.finalize_histograms()?;

    if !ledger.balanced() {
        log::error!(
            "scan buffer leak: allocated {} freed {}",
            ledger.allocated(),
            ledger.freed()
        );
        debug_assert!(ledger.balanced(), "scan buffer ledger must balance");
    }

    let report = RunReport {
        tool: TOOL_NAME.to_string(),
        version: TOOL_VERSION.to_string(),
        media_hashes,
        scanners: set.stats(),
        pages,
        sbufs: SbufStats {
            allocated: ledger.allocated(),
            freed: ledger.freed(),
        },
        features: recorders.counts(),
        wall_seconds: started.elapsed().as_secs_f64(),
        depth_limited,
        scanner_errors,
        skipped_inputs: layout.skipped,
    };

    let report_path = config.output_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, json).map_err(|source| StorageError {
        path: report_path,
        source,
    })?;
    Ok(report)
}
