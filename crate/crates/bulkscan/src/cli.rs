//! Command-line interface: `scan`, `print-path`, `list-scanners`, `version`.
//!
//! Argument parsing is reentrant and keeps no process-global state, so it can
//! be exercised directly from tests. Exit codes: 0 for a completed run (even
//! with contained scanner errors), 1 for usage/input problems, 2 for feature
//! storage failures.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::engine::{self, RunConfig};
use crate::media;
use crate::path::{hexdump, parse_path, path_print};
use crate::{decode, FORMAT_VERSION, TOOL_NAME, TOOL_VERSION};

#[derive(Parser, Debug, PartialEq)]
#[command(
    name = "bulkscan",
    version,
    about = "Bulk-data feature extraction: scans evidence in parallel pages, \
             recursively decodes embedded streams, and records findings with \
             forensic-path provenance",
    disable_version_flag = true
)]
struct Cli {
    /// List scanners with their flags and configuration, then exit.
    #[arg(long = "help-scanners", global = true)]
    help_scanners: bool,

    /// Print tool and feature-file format versions, then exit.
    #[arg(long = "version")]
    show_version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, PartialEq)]
enum Command {
    /// Scan evidence and write feature files to an output directory.
    Scan(ScanArgs),
    /// Decode the evidence at a forensic path and hexdump it.
    PrintPath(PrintPathArgs),
    /// List scanners with their flags and configuration.
    ListScanners,
    /// Print tool and feature-file format versions.
    Version,
}

#[derive(Args, Debug, PartialEq)]
struct ScanArgs {
    /// Evidence: a raw image, a file, or (with -r) a directory.
    input: PathBuf,

    /// Output directory (must be absent or empty).
    #[arg(short = 'o', long = "output", value_name = "DIR")]
    output: PathBuf,

    /// Worker threads (default: all hardware threads).
    #[arg(short = 'j', long = "threads", value_name = "N")]
    threads: Option<usize>,

    /// Recurse into directories.
    #[arg(short = 'r', long = "recurse")]
    recurse: bool,

    /// Enable a scanner (repeatable).
    #[arg(short = 'e', long = "enable", value_name = "NAME")]
    enable: Vec<String>,

    /// Disable a scanner (repeatable).
    #[arg(short = 'x', long = "disable", value_name = "NAME")]
    disable: Vec<String>,

    /// Override scanner configuration (repeatable), e.g. email.context_window=32.
    #[arg(short = 'S', long = "set", value_name = "SCANNER.KEY=VALUE")]
    set: Vec<String>,

    /// Carve mode for the email recorder: 0 never, 1 always, 2 decoded-only.
    #[arg(long = "carve-email", value_name = "0|1|2")]
    carve_email: Option<u8>,

    /// Carve mode for the url recorder.
    #[arg(long = "carve-url", value_name = "0|1|2")]
    carve_url: Option<u8>,

    /// Carve mode for the zip recorder.
    #[arg(long = "carve-zip", value_name = "0|1|2")]
    carve_zip: Option<u8>,

    /// Carve mode for the jpeg recorder (default 1).
    #[arg(long = "carve-jpeg", value_name = "0|1|2")]
    carve_jpeg: Option<u8>,

    /// Page size in bytes.
    #[arg(long = "page-size", value_name = "BYTES")]
    page_size: Option<usize>,

    /// Margin read past each page, in bytes.
    #[arg(long = "margin", value_name = "BYTES")]
    margin: Option<usize>,

    /// Recursion depth limit.
    #[arg(long = "max-depth", value_name = "N")]
    max_depth: Option<u32>,

    /// Largest decoded child re-analyzed inline instead of queued.
    #[arg(long = "inline-max", value_name = "BYTES")]
    inline_max: Option<usize>,
}

#[derive(Args, Debug, PartialEq)]
struct PrintPathArgs {
    /// Evidence: a raw image, a file, or a directory.
    image: PathBuf,

    /// Forensic path, e.g. 456596-ZIP-1255117.
    path: String,

    /// Bytes to print.
    #[arg(long = "length", default_value_t = 64)]
    length: usize,
}

/// A parsed and validated invocation, ready to execute.
#[derive(Debug, PartialEq)]
pub enum CliInvocation {
    Scan(RunConfig),
    PrintPath {
        image: PathBuf,
        path: String,
        length: usize,
    },
    ListScanners,
    Version,
    /// Help or version text already fully rendered by the parser.
    Rendered(String),
}

impl PartialEq for RunConfig {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs
            && self.output_dir == other.output_dir
            && self.threads == other.threads
            && self.recursive == other.recursive
            && self.page_size == other.page_size
            && self.margin == other.margin
            && self.max_depth == other.max_depth
            && self.recurse_inline_max == other.recurse_inline_max
            && self.carve_modes == other.carve_modes
            && self.enable == other.enable
            && self.disable == other.disable
            && self.scanner_config == other.scanner_config
    }
}

/// Usage problem: message plus the exit status to use.
#[derive(Debug)]
pub struct UsageError {
    pub message: String,
}

/// Parses argv (including argv[0]). Pure: no globals, no environment.
pub fn parse_args<I, T>(argv: I) -> Result<CliInvocation, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            return Err(UsageError {
                message: e.to_string(),
            })
        }
        // --help and clap-rendered output exit successfully
        Err(e) => return Ok(CliInvocation::Rendered(e.to_string())),
    };
    if cli.help_scanners {
        return Ok(CliInvocation::ListScanners);
    }
    if cli.show_version {
        return Ok(CliInvocation::Version);
    }
    let Some(command) = cli.command else {
        return Err(UsageError {
            message: "a subcommand is required: scan, print-path, list-scanners, version"
                .to_string(),
        });
    };
    match command {
        Command::Scan(args) => Ok(CliInvocation::Scan(scan_config(args)?)),
        Command::PrintPath(args) => Ok(CliInvocation::PrintPath {
            image: args.image,
            path: args.path,
            length: args.length,
        }),
        Command::ListScanners => Ok(CliInvocation::ListScanners),
        Command::Version => Ok(CliInvocation::Version),
    }
}

fn scan_config(args: ScanArgs) -> Result<RunConfig, UsageError> {
    for name in &args.enable {
        if args.disable.contains(name) {
            return Err(UsageError {
                message: format!("scanner {name:?} is both enabled (-e) and disabled (-x)"),
            });
        }
    }
    let mut config = RunConfig::new(args.input, args.output);
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(UsageError {
                message: "-j must be at least 1".to_string(),
            });
        }
        config.threads = threads;
    }
    config.recursive = args.recurse;
    config.enable = args.enable;
    config.disable = args.disable;
    if let Some(page_size) = args.page_size {
        if page_size == 0 {
            return Err(UsageError {
                message: "--page-size must be positive".to_string(),
            });
        }
        config.page_size = page_size;
    }
    if let Some(margin) = args.margin {
        config.margin = margin;
    }
    if let Some(depth) = args.max_depth {
        config.max_depth = depth;
    }
    if let Some(inline_max) = args.inline_max {
        config.recurse_inline_max = inline_max;
    }

    let mut carve_modes = BTreeMap::from([("jpeg".to_string(), 1u8)]);
    for (name, mode) in [
        ("email", args.carve_email),
        ("url", args.carve_url),
        ("zip", args.carve_zip),
        ("jpeg", args.carve_jpeg),
    ] {
        if let Some(mode) = mode {
            if mode > 2 {
                return Err(UsageError {
                    message: format!("--carve-{name} must be 0, 1, or 2"),
                });
            }
            carve_modes.insert(name.to_string(), mode);
        }
    }
    config.carve_modes = carve_modes;

    for item in &args.set {
        let Some((target, value)) = item.split_once('=') else {
            return Err(UsageError {
                message: format!("-S expects SCANNER.KEY=VALUE, got {item:?}"),
            });
        };
        let Some((scanner, key)) = target.split_once('.') else {
            return Err(UsageError {
                message: format!("-S expects SCANNER.KEY=VALUE, got {item:?}"),
            });
        };
        config
            .scanner_config
            .push((scanner.to_string(), key.to_string(), value.to_string()));
    }
    Ok(config)
}

/// Renders the scanner listing: name, enabled state, flags, config, purpose.
pub fn render_scanner_list() -> String {
    let set = match engine::build_scanner_set(&RunConfig::new(PathBuf::new(), PathBuf::new())) {
        Ok(set) => set,
        Err(e) => return format!("failed to build scanner set: {e}\n"),
    };
    let mut out = String::new();
    for info in set.list() {
        let config: Vec<String> = info
            .config
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        out.push_str(&format!(
            "{:<8} {:<9} [{}] {:<26} {}\n",
            info.name,
            if info.default_enabled { "enabled" } else { "disabled" },
            info.flags,
            config.join(","),
            info.description,
        ));
    }
    out
}

/// Executes a parsed invocation and returns the process exit status.
pub fn execute(invocation: CliInvocation) -> i32 {
    match invocation {
        CliInvocation::Rendered(text) => {
            println!("{text}");
            0
        }
        CliInvocation::Version => {
            println!("{TOOL_NAME} {TOOL_VERSION} (feature-file format {FORMAT_VERSION})");
            0
        }
        CliInvocation::ListScanners => {
            print!("{}", render_scanner_list());
            0
        }
        CliInvocation::PrintPath {
            image,
            path,
            length,
        } => {
            let parsed = match parse_path(&path) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{TOOL_NAME}: {e}");
                    return 1;
                }
            };
            let is_dir = image.is_dir();
            let layout = match media::enumerate_inputs(&image, is_dir) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("{TOOL_NAME}: {e}");
                    return 1;
                }
            };
            match path_print(&layout, &parsed, length, &decode::builtin_decoders()) {
                Ok(bytes) => {
                    print!("{}", hexdump(parsed.offset(), &bytes));
                    0
                }
                Err(e) => {
                    eprintln!("{TOOL_NAME}: {e}");
                    1
                }
            }
        }
        CliInvocation::Scan(config) => match engine::run(&config) {
            Ok(report) => {
                println!("{TOOL_NAME} {TOOL_VERSION}: scan complete");
                for h in &report.media_hashes {
                    println!("  media {}  sha1 {}  ({} bytes)", h.path, h.sha1, h.bytes);
                }
                println!(
                    "  pages {} (deduped {}, ngram-skipped {})",
                    report.pages.total, report.pages.deduped, report.pages.ngram_skipped
                );
                for (name, count) in &report.features {
                    println!("  {name}: {count} feature(s)");
                }
                println!(
                    "  sbufs allocated {} freed {}",
                    report.sbufs.allocated, report.sbufs.freed
                );
                println!("  wall time {:.2}s", report.wall_seconds);
                if report.scanner_errors > 0 {
                    println!("  scanner errors (contained): {}", report.scanner_errors);
                }
                0
            }
            Err(e) => {
                eprintln!("{TOOL_NAME}: {e}");
                e.exit_code()
            }
        },
    }
}

/// Full CLI entry: parse then execute.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_args(argv) {
        Ok(invocation) => execute(invocation),
        Err(e) => {
            eprintln!("{}", e.message);
            1
        }
    }
}

/// Every documented flag, for the help/accepted round-trip check.
pub fn scan_flag_table() -> Vec<String> {
    let cmd = Cli::command();
    let scan = cmd
        .get_subcommands()
        .find(|c| c.get_name() == "scan")
        .expect("scan subcommand");
    scan.get_arguments()
        .filter(|a| !a.is_positional())
        .map(|a| a.get_id().to_string())
        .collect()
}
