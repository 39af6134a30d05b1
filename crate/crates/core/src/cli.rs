//! Command-line frontend: `scan`, `pathfind`, `fuzz`, `campaign`, `report`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::callgraph::{merge, parse_dot, parse_edgelist, CallGraph};
use crate::coverage::DEFAULT_MAP_SIZE;
use crate::evalstats::{aggregate_report, render_table, samples_from_trials, CensorRule, StatReport};
use crate::fuzzer::{run_campaign, run_trial, Arm, CampaignConfig, Clock, TrialConfig, TrialResult};
use crate::harness::{list_targets, target_by_name, TargetProgram};
use crate::pathfinder::{
    compute_with_summary, parse_blocklist, write_blocklist, BlockListFormat, BlockMode, PathfindSummary,
};
use crate::unsafescan::{load_manifest, scan_source, SymbolMap};

pub const MAP_SIZE_ENV: &str = "UF_MAP_SIZE";

#[derive(Debug, Parser)]
#[command(name = "unsafe-focus", version, about = "Fuzz unsafe code regions with call-graph block lists")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutFormat {
    Plain,
    AflDenylist,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Censor {
    Duration,
    MaxRank,
}

impl From<Censor> for CensorRule {
    fn from(c: Censor) -> Self {
        match c {
            Censor::Duration => CensorRule::Duration,
            Censor::MaxRank => CensorRule::TiedMaxRank,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan Rust sources and write the unsafe-function manifest.
    Scan {
        #[arg(long = "src", required = true, num_args = 1..)]
        src: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the block list from call graphs and a manifest.
    Pathfind {
        #[arg(long = "callgraph", required = true, num_args = 1..)]
        callgraph: Vec<PathBuf>,
        #[arg(long = "unsafe")]
        unsafe_manifest: PathBuf,
        /// `plain<TAB>symbol` lines mapping manifest names to graph symbols.
        #[arg(long)]
        symbol_map: Option<PathBuf>,
        #[arg(long)]
        conservative_indirect: bool,
        #[arg(long, value_enum, default_value = "plain")]
        format: OutFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one fuzzing trial against a bundled target.
    Fuzz {
        #[arg(long)]
        target: String,
        #[arg(long)]
        blocklist: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        duration_ms: u64,
        #[arg(long)]
        rng_seed: u64,
        /// Directory of seed files; the target's bundled seeds when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        wall_clock: bool,
    },
    /// Run paired full/partial trials and compare them.
    Campaign {
        #[arg(long)]
        target: String,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        duration_ms: u64,
        #[arg(long)]
        rng_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: u64,
        /// Give the partial arm an empty block list as well.
        #[arg(long)]
        ab_identical: bool,
        #[arg(long)]
        conservative_indirect: bool,
        #[arg(long, value_enum, default_value = "duration")]
        censor: Censor,
    },
    /// Render a campaign file as a table or JSON summary.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        #[arg(long, value_enum, default_value = "duration")]
        censor: Censor,
    },
    /// List bundled targets.
    Targets,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

/// Campaign file written by `campaign` and read by `report`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CampaignDocument {
    pub target: String,
    pub trials: usize,
    pub duration_ms: u64,
    pub rng_seed: u64,
    pub ab_identical: bool,
    pub pathfind: PathfindCounts,
    pub results: Vec<TrialResult>,
    pub report: StatReport,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PathfindCounts {
    pub total_nodes: usize,
    pub unsafe_nodes: usize,
    pub blocked_nodes: usize,
    pub blocked_fraction: f64,
}

impl From<&PathfindSummary> for PathfindCounts {
    fn from(s: &PathfindSummary) -> Self {
        Self {
            total_nodes: s.total_nodes,
            unsafe_nodes: s.unsafe_nodes,
            blocked_nodes: s.blocked_nodes,
            blocked_fraction: s.blocked_fraction,
        }
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| input_err(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Map size from `UF_MAP_SIZE`, or the default.
pub fn map_size_from_env() -> Result<usize, CliError> {
    match std::env::var(MAP_SIZE_ENV) {
        Err(_) => Ok(DEFAULT_MAP_SIZE),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| input_err(format!("{MAP_SIZE_ENV}={v:?} is not a number")))?;
            if !n.is_power_of_two() || n < crate::coverage::MIN_MAP_SIZE {
                return Err(input_err(format!("{MAP_SIZE_ENV}={n} must be a power of two >= 256")));
            }
            Ok(n)
        }
    }
}

fn collect_rust_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    if meta.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_rust_files(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "rs") {
            out.push(p);
        }
    }
    Ok(())
}

pub fn load_callgraph(path: &Path) -> Result<CallGraph, CliError> {
    let text = read_text(path)?;
    let looks_dot = path.extension().is_some_and(|e| e == "dot" || e == "gv") || {
        let head = text.trim_start();
        head.starts_with("digraph") || head.starts_with("strict")
    };
    let parsed = if looks_dot { parse_dot(&text) } else { parse_edgelist(&text) };
    parsed.map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn target(name: &str) -> Result<TargetProgram, CliError> {
    target_by_name(name).ok_or_else(|| {
        let known: Vec<String> = list_targets().iter().map(|t| t.name().to_string()).collect();
        input_err(format!("unknown target {name:?} (known: {})", known.join(", ")))
    })
}

fn read_corpus(dir: &Path) -> Result<Vec<Vec<u8>>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    files.retain(|p| p.is_file());
    files.sort();
    files.iter().map(|p| fs::read(p).map_err(io_err(p))).collect()
}

pub fn cmd_scan(src: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut files = Vec::new();
    for p in src {
        collect_rust_files(p, &mut files)?;
    }
    let sources: Vec<(String, String)> = files
        .iter()
        .map(|p| Ok((p.display().to_string(), read_text(p)?)))
        .collect::<Result<_, CliError>>()?;
    let report = scan_source(sources.iter().map(|(p, s)| (p.as_str(), s.as_str()))).map_err(input_err)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for t in &report.toplevel {
        eprintln!("warning: unsafe outside functions recorded as {t}");
    }
    write_atomic(out, report.manifest.to_text().as_bytes())?;
    println!(
        "scanned {} file(s): {} unsafe function(s), {} warning(s)",
        files.len(),
        report.manifest.len(),
        report.warnings.len()
    );
    Ok(())
}

pub fn cmd_pathfind(
    callgraphs: &[PathBuf],
    manifest: &Path,
    symbol_map: Option<&Path>,
    mode: BlockMode,
    format: BlockListFormat,
    out: &Path,
) -> Result<PathfindSummary, CliError> {
    let graphs: Vec<CallGraph> = callgraphs.iter().map(|p| load_callgraph(p)).collect::<Result<_, _>>()?;
    let g = merge(&graphs);
    let mut m = load_manifest(&read_text(manifest)?).map_err(|e| input_err(format!("{}: {e}", manifest.display())))?;
    if let Some(p) = symbol_map {
        let map = SymbolMap::parse(&read_text(p)?).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
        m = m.renamed(&map);
    }
    if m.is_empty() {
        eprintln!("WARNING: the unsafe manifest is empty; every function will be blocked");
    }
    let (bl, summary) = compute_with_summary(&g, &m, mode);
    for sym in &summary.missing_unsafe {
        eprintln!("warning: unsafe function {sym} is not in the call graph");
    }
    write_atomic(out, write_blocklist(&bl, format).as_bytes())?;
    print!("{summary}");
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_fuzz(
    target_name: &str,
    blocklist: Option<&Path>,
    duration_ms: u64,
    rng_seed: u64,
    corpus: Option<&Path>,
    out: &Path,
    wall_clock: bool,
    map_size: usize,
) -> Result<TrialResult, CliError> {
    let t = target(target_name)?;
    let mut cfg = TrialConfig::new(&t, rng_seed, duration_ms);
    cfg.map_size = map_size;
    if wall_clock {
        cfg.clock = Clock::WallClock;
    }
    if let Some(dir) = corpus {
        cfg.initial_corpus = read_corpus(dir)?;
        if cfg.initial_corpus.is_empty() {
            return Err(input_err(format!("{}: corpus directory has no seed files", dir.display())));
        }
    }
    if let Some(p) = blocklist {
        cfg.blocklist = Some(parse_blocklist(&read_text(p)?).map_err(|e| input_err(format!("{}: {e}", p.display())))?);
        cfg.arm = Arm::Partial;
    }
    let result = run_trial(&t, &cfg).map_err(input_err)?;
    write_atomic(out, (result.to_json() + "\n").as_bytes())?;
    println!(
        "{} executions, {} corpus entries, {} unique crash(es)",
        result.executions, result.corpus_size, result.crashes
    );
    for (id, hit) in &result.first_hit {
        match hit {
            Some(ms) => println!("  {id:<20} {ms} ms"),
            None => println!("  {id:<20} not reached"),
        }
    }
    Ok(result)
}

pub struct CampaignArgs {
    pub target: String,
    pub trials: usize,
    pub duration_ms: u64,
    pub rng_seed: u64,
    pub jobs: usize,
    pub ab_identical: bool,
    pub block_mode: BlockMode,
    pub censor: CensorRule,
    pub map_size: usize,
}

pub fn build_campaign(args: &CampaignArgs) -> Result<CampaignDocument, CliError> {
    let t = target(&args.target)?;
    let mut cfg = CampaignConfig::new(args.trials, args.duration_ms, args.rng_seed);
    cfg.jobs = args.jobs;
    cfg.ab_identical = args.ab_identical;
    cfg.block_mode = args.block_mode;
    cfg.map_size = args.map_size;
    let res = run_campaign(&t, &cfg).map_err(input_err)?;
    let full = samples_from_trials(&res.full, args.duration_ms, args.censor).map_err(input_err)?;
    let partial = samples_from_trials(&res.partial, args.duration_ms, args.censor).map_err(input_err)?;
    let report = aggregate_report(&full, &partial).map_err(input_err)?;
    let mut results = res.full;
    results.extend(res.partial);
    Ok(CampaignDocument {
        target: t.name().to_string(),
        trials: args.trials,
        duration_ms: args.duration_ms,
        rng_seed: args.rng_seed,
        ab_identical: args.ab_identical,
        pathfind: PathfindCounts::from(&res.pathfind),
        results,
        report,
    })
}

pub fn cmd_campaign(args: &CampaignArgs, out: &Path) -> Result<CampaignDocument, CliError> {
    let doc = build_campaign(args)?;
    let json = serde_json::to_string_pretty(&doc).map_err(input_err)?;
    write_atomic(out, (json + "\n").as_bytes())?;
    print!("{}", render_table(&doc.target, &doc.report));
    Ok(doc)
}

/// Recomputes the statistics of a campaign file from its trial results.
pub fn report_from_document(text: &str, censor: CensorRule) -> Result<(String, StatReport), CliError> {
    let doc: CampaignDocument = serde_json::from_str(text).map_err(|e| input_err(format!("invalid campaign file: {e}")))?;
    if doc.results.is_empty() {
        return Err(input_err("campaign file contains no results"));
    }
    let (full, partial): (Vec<TrialResult>, Vec<TrialResult>) =
        doc.results.iter().cloned().partition(|r| r.arm == Arm::Full);
    if full.is_empty() || partial.is_empty() {
        return Err(input_err("campaign file needs results for both arms"));
    }
    let full = samples_from_trials(&full, doc.duration_ms, censor).map_err(input_err)?;
    let partial = samples_from_trials(&partial, doc.duration_ms, censor).map_err(input_err)?;
    let report = aggregate_report(&full, &partial).map_err(input_err)?;
    Ok((doc.target, report))
}

pub fn cmd_report(input: &Path, format: ReportFormat, censor: CensorRule) -> Result<String, CliError> {
    let (target, report) = report_from_document(&read_text(input)?, censor)?;
    Ok(match format {
        ReportFormat::Table => render_table(&target, &report),
        ReportFormat::Json => serde_json::to_string_pretty(&report).map_err(input_err)? + "\n",
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Scan { src, out } => cmd_scan(&src, &out),
        Command::Pathfind {
            callgraph,
            unsafe_manifest,
            symbol_map,
            conservative_indirect,
            format,
            out,
        } => {
            let mode = if conservative_indirect {
                BlockMode::ConservativeIndirect
            } else {
                BlockMode::Standard
            };
            let format = match format {
                OutFormat::Plain => BlockListFormat::Plain,
                OutFormat::AflDenylist => BlockListFormat::AflDenylist,
            };
            cmd_pathfind(&callgraph, &unsafe_manifest, symbol_map.as_deref(), mode, format, &out).map(|_| ())
        }
        Command::Fuzz {
            target,
            blocklist,
            duration_ms,
            rng_seed,
            corpus,
            out,
            wall_clock,
        } => cmd_fuzz(
            &target,
            blocklist.as_deref(),
            duration_ms,
            rng_seed,
            corpus.as_deref(),
            &out,
            wall_clock,
            map_size_from_env()?,
        )
        .map(|_| ()),
        Command::Campaign {
            target,
            trials,
            duration_ms,
            rng_seed,
            out,
            jobs,
            ab_identical,
            conservative_indirect,
            censor,
        } => {
            if trials < 2 {
                return Err(input_err("--trials must be at least 2"));
            }
            let args = CampaignArgs {
                target,
                trials: trials as usize,
                duration_ms,
                rng_seed,
                jobs: jobs as usize,
                ab_identical,
                block_mode: if conservative_indirect {
                    BlockMode::ConservativeIndirect
                } else {
                    BlockMode::Standard
                },
                censor: censor.into(),
                map_size: map_size_from_env()?,
            };
            cmd_campaign(&args, &out).map(|_| ())
        }
        Command::Report { input, format, censor } => {
            print!("{}", cmd_report(&input, format, censor.into())?);
            Ok(())
        }
        Command::Targets => {
            for t in list_targets() {
                let (_, s) = compute_with_summary(t.callgraph(), t.manifest(), BlockMode::Standard);
                println!(
                    "{:<14} {:>3} functions  {:>2} oracles  {:>6.2}% blocked",
                    t.name(),
                    t.functions().len(),
                    t.oracles().len(),
                    s.blocked_fraction * 100.0
                );
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command. Exit status 0 on success, 2 on any
/// error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
