//! `commit-pulse` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O failure (missing input, unwritable output) |
//! | 2 | parse failure (bad arguments, malformed commit file or manifest, all batch repos failed) |
//! | 3 | degenerate span (`--span-days` below 30) |
//! | 4 | remote failure (unknown repository, HTTP/transport error, rate-limit budget exhausted) |
//! | 5 | remote authentication failure |

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::ingest::{
    check_selection_criteria, parse_commit_jsonl, parse_git_log, parse_timestamp,
    write_commit_jsonl, CommitRecord, FilterOptions, RepoMetadata, DEFAULT_BOT_PATTERN,
};
use crate::remote::{RateBudget, RemoteConfig, RemoteError, RemoteFetcher, DEFAULT_API_BASE};
use crate::report::{
    emit_cohort_markdown, emit_json, emit_repo_csv, parse_json, ConfigEcho, ReportBundle,
    ReportError,
};
use crate::series::{AnalysisSpan, SECONDS_PER_DAY};
use crate::stability::{assess_repo, RepoAssessment};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SPAN: i32 = 3;
pub const EXIT_NETWORK: i32 = 4;
pub const EXIT_AUTH: i32 = 5;

/// Smallest span holding one monthly bucket.
pub const MIN_SPAN_DAYS: u32 = 30;

#[derive(Debug, Parser)]
#[command(
    name = "commit-pulse",
    version,
    about = "Commit-rhythm stability analytics for git histories"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fetch a repository's commits from the remote API into canonical JSONL.
    Ingest(IngestArgs),
    /// Assess one repository's commit history.
    Analyze(AnalyzeArgs),
    /// Assess every repository listed in a manifest and summarize the cohort.
    Batch(BatchArgs),
    /// Merge JSON reports and recompute cohort statistics.
    Cohort(CohortArgs),
}

#[derive(Debug, Clone, Args)]
struct SpanArgs {
    /// Length of the analysis window in days.
    #[arg(long, default_value_t = crate::series::DEFAULT_SPAN_DAYS)]
    span_days: u32,
    /// Exclusive end of the window: YYYY-MM-DD, RFC 3339 or epoch seconds.
    /// Defaults to midnight UTC today.
    #[arg(long)]
    span_end: Option<String>,
}

#[derive(Debug, Clone, Args)]
struct FilterArgs {
    #[arg(long)]
    exclude_merges: bool,
    /// Drop commits whose author matches --bot-pattern.
    #[arg(long)]
    exclude_bots: bool,
    #[arg(long, default_value = DEFAULT_BOT_PATTERN)]
    bot_pattern: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum InputFormat {
    Jsonl,
    GitLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
    Md,
}

impl OutputFormat {
    fn file_name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "repos.csv",
            OutputFormat::Json => "report.json",
            OutputFormat::Md => "cohort.md",
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Repository as owner/name.
    #[arg(long)]
    repo: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = DEFAULT_API_BASE)]
    api_url: String,
    #[command(flatten)]
    span: SpanArgs,
    /// Longest total time to sleep on rate limits before giving up.
    #[arg(long, default_value_t = 3600)]
    max_wait_secs: u64,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Commit file: canonical JSONL or git log export.
    #[arg(long)]
    input: PathBuf,
    /// Repository id; defaults to the id in the JSONL or the file stem.
    #[arg(long)]
    repo: Option<String>,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    input_format: Option<InputFormat>,
    #[command(flatten)]
    span: SpanArgs,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// JSONL manifest of {repo, commits_path, metadata?} objects.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    span: SpanArgs,
    #[command(flatten)]
    filter: FilterArgs,
    /// Write only this report; all three when omitted.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct CohortArgs {
    /// JSON report produced by `analyze` or `batch`; repeatable.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "md")]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Span(String),
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    Auth(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Span(_) => EXIT_SPAN,
            CliError::Network(_) => EXIT_NETWORK,
            CliError::Auth(_) => EXIT_AUTH,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

impl From<RemoteError> for CliError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Auth { .. } => CliError::Auth(e.to_string()),
            _ => CliError::Network(e.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Batch(a) => cmd_batch(&a),
        Command::Cohort(a) => cmd_cohort(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn midnight_today() -> i64 {
    let now = Utc::now().timestamp();
    now - now.rem_euclid(SECONDS_PER_DAY)
}

fn resolve_span(args: &SpanArgs) -> Result<AnalysisSpan, CliError> {
    if args.span_days < MIN_SPAN_DAYS {
        return Err(CliError::Span(format!(
            "--span-days {} is below the minimum of {MIN_SPAN_DAYS}",
            args.span_days
        )));
    }
    let end = match &args.span_end {
        None => midnight_today(),
        Some(text) => parse_span_end(text)
            .ok_or_else(|| CliError::Parse(format!("unparseable --span-end {text:?}")))?,
    };
    AnalysisSpan::new(end, args.span_days).map_err(|e| CliError::Span(e.to_string()))
}

fn parse_span_end(text: &str) -> Option<i64> {
    if let Ok(date) = NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d") {
        return Some(date.and_hms_opt(0, 0, 0)?.and_utc().timestamp());
    }
    parse_timestamp(text)
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time.
fn generated_at() -> i64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| Utc::now().timestamp())
}

fn filter_options(args: &FilterArgs, span: AnalysisSpan) -> FilterOptions {
    FilterOptions {
        exclude_merges: args.exclude_merges,
        exclude_bot_authors: args.exclude_bots,
        bot_pattern: args.bot_pattern.clone(),
        span: span.range(),
    }
}

fn config_echo(span: AnalysisSpan, filter: &FilterArgs) -> ConfigEcho {
    ConfigEcho::new(
        span.end_utc(),
        span.length_days(),
        filter.exclude_merges,
        filter.exclude_bots,
        &filter.bot_pattern,
    )
}

fn guess_format(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json" | "ndjson") => InputFormat::Jsonl,
        _ => InputFormat::GitLog,
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "repo".to_owned())
}

/// Reads a commit file; returns the repository id and the records.
fn load_commits(
    path: &Path,
    format: Option<InputFormat>,
    repo: Option<&str>,
) -> Result<(String, Vec<CommitRecord>), CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let reader = BufReader::new(file);
    let parse_err = |e: crate::ingest::IngestError| match e {
        crate::ingest::IngestError::Io(source) => CliError::io(path, source),
        other => CliError::Parse(format!("{}: {other}", path.display())),
    };
    match format.unwrap_or_else(|| guess_format(path)) {
        InputFormat::Jsonl => {
            let records = parse_commit_jsonl(reader).map_err(parse_err)?;
            let id = repo
                .map(str::to_owned)
                .or_else(|| records.first().map(|r| r.repo_id().to_owned()))
                .unwrap_or_else(|| file_stem(path));
            Ok((id, records))
        }
        InputFormat::GitLog => {
            let id = repo.map(str::to_owned).unwrap_or_else(|| file_stem(path));
            let records = parse_git_log(&id, reader).map_err(parse_err)?;
            Ok((id, records))
        }
    }
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so the final path never holds a partial file.
fn write_atomic<F>(path: &Path, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<(), CliError>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn report_err(path: &Path) -> impl Fn(ReportError) -> CliError + '_ {
    move |e| match e {
        ReportError::Io(source) => CliError::io(path, source),
        ReportError::Csv(e) if e.is_io_error() => {
            CliError::io(path, io::Error::other(e.to_string()))
        }
        other => CliError::Parse(other.to_string()),
    }
}

fn emit<W: Write>(bundle: &ReportBundle, format: OutputFormat, sink: W) -> Result<(), ReportError> {
    match format {
        OutputFormat::Csv => emit_repo_csv(bundle, sink),
        OutputFormat::Json => emit_json(bundle, sink),
        OutputFormat::Md => emit_cohort_markdown(bundle, sink),
    }
}

fn write_report(
    bundle: &ReportBundle,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<(), CliError> {
    match out {
        Some(path) => write_atomic(path, |w| emit(bundle, format, w).map_err(report_err(path))),
        None => {
            let stdout = io::stdout();
            emit(bundle, format, stdout.lock()).map_err(report_err(Path::new("<stdout>")))
        }
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let span = resolve_span(&args.span)?;
    let (repo_id, records) = load_commits(&args.input, args.input_format, args.repo.as_deref())?;
    let filter = filter_options(&args.filter, span);
    let assessment = assess_repo(&repo_id, &records, span, &filter)
        .map_err(|e| CliError::Span(e.to_string()))?;

    println!("repo: {}", assessment.repo_id);
    println!("profile: {}", assessment.profile);
    println!(
        "phi: daily={:.6} weekly={:.6} monthly={:.6}",
        assessment.daily.phi, assessment.weekly.phi, assessment.monthly.phi
    );

    let bundle = ReportBundle::new(
        config_echo(span, &args.filter),
        vec![assessment],
        BTreeMap::new(),
        Vec::new(),
        generated_at(),
    )
    .map_err(|e| CliError::Parse(e.to_string()))?;
    write_report(&bundle, args.format, args.out.as_deref())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    repo: String,
    commits_path: PathBuf,
    #[serde(default)]
    format: Option<InputFormat>,
    #[serde(default)]
    metadata: Option<ManifestMetadata>,
}

#[derive(Debug, Default, Deserialize)]
struct ManifestMetadata {
    created_at: Option<serde_json::Value>,
    stars: Option<u64>,
    forks: Option<u64>,
    #[serde(default)]
    archived: bool,
    #[serde(default)]
    educational: bool,
    domain_tag: Option<String>,
}

impl ManifestMetadata {
    /// Full metadata when creation time, stars and forks are all present.
    fn to_repo_metadata(&self, repo_id: &str) -> Result<Option<RepoMetadata>, String> {
        let (Some(created), Some(stars), Some(forks)) = (&self.created_at, self.stars, self.forks)
        else {
            return Ok(None);
        };
        let created_at_utc = match created {
            serde_json::Value::Number(n) => n.as_i64(),
            serde_json::Value::String(s) => parse_timestamp(s),
            _ => None,
        }
        .ok_or_else(|| format!("{repo_id}: unparseable created_at {created}"))?;
        Ok(Some(RepoMetadata {
            repo_id: repo_id.to_owned(),
            created_at_utc,
            stars,
            forks,
            archived: self.archived,
            educational: self.educational,
            domain_tag: self.domain_tag.clone(),
        }))
    }
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| CliError::Parse(format!("{}: line {}: {e}", path.display(), idx + 1)))?;
        if !seen.insert(entry.repo.clone()) {
            return Err(CliError::Parse(format!(
                "{}: line {}: repository {} listed twice",
                path.display(),
                idx + 1,
                entry.repo
            )));
        }
        if entry.commits_path.is_relative() {
            entry.commits_path = base.join(&entry.commits_path);
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(CliError::Parse(format!(
            "{}: manifest lists no repositories",
            path.display()
        )));
    }
    Ok(entries)
}

fn assess_entry(
    entry: &ManifestEntry,
    span: AnalysisSpan,
    filter: &FilterOptions,
) -> Result<RepoAssessment, CliError> {
    let (_, records) = load_commits(&entry.commits_path, entry.format, Some(&entry.repo))?;
    assess_repo(&entry.repo, &records, span, filter).map_err(|e| CliError::Span(e.to_string()))
}

fn cmd_batch(args: &BatchArgs) -> Result<(), CliError> {
    let span = resolve_span(&args.span)?;
    let entries = read_manifest(&args.manifest)?;
    let filter = filter_options(&args.filter, span);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Parse(e.to_string()))?;
    let results: Vec<Result<RepoAssessment, CliError>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| assess_entry(e, span, &filter))
            .collect()
    });

    let mut assessments = Vec::new();
    let mut failures = Vec::new();
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok(a) => assessments.push(a),
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", entry.repo);
                failures.push(entry.repo.clone());
            }
        }
    }
    if assessments.is_empty() {
        return Err(CliError::Parse(format!(
            "all {} repositories failed",
            entries.len()
        )));
    }

    let assessed: HashSet<&str> = assessments.iter().map(|a| a.repo_id.as_str()).collect();
    let mut domain_tags = BTreeMap::new();
    let mut eligibility = Vec::new();
    for entry in entries
        .iter()
        .filter(|e| assessed.contains(e.repo.as_str()))
    {
        let Some(meta) = &entry.metadata else {
            continue;
        };
        if let Some(tag) = &meta.domain_tag {
            domain_tags.insert(entry.repo.clone(), tag.clone());
        }
        match meta.to_repo_metadata(&entry.repo) {
            Ok(Some(full)) => match check_selection_criteria(&full, span.end_utc()) {
                Ok(report) => eligibility.push(report),
                Err(e) => eprintln!("warning: {e}"),
            },
            Ok(None) => {}
            Err(e) => eprintln!("warning: {e}"),
        }
    }

    let bundle = ReportBundle::new(
        config_echo(span, &args.filter),
        assessments,
        domain_tags,
        eligibility,
        generated_at(),
    )
    .map_err(|e| CliError::Parse(e.to_string()))?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let formats = match args.format {
        Some(f) => vec![f],
        None => vec![OutputFormat::Csv, OutputFormat::Md, OutputFormat::Json],
    };
    for f in formats {
        write_report(&bundle, f, Some(&args.out.join(f.file_name())))?;
    }
    println!(
        "assessed {} of {} repositories into {}",
        bundle.repos.len(),
        entries.len(),
        args.out.display()
    );
    if !failures.is_empty() {
        println!("failed: {}", failures.join(", "));
    }
    Ok(())
}

fn cmd_cohort(args: &CohortArgs) -> Result<(), CliError> {
    let mut config = None;
    let mut repos = Vec::new();
    let mut tags = BTreeMap::new();
    let mut eligibility = Vec::new();
    let mut seen = HashSet::new();
    for path in &args.input {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let bundle = parse_json(BufReader::new(file)).map_err(|e| match e {
            ReportError::Io(source) => CliError::io(path, source),
            other => CliError::Parse(format!("{}: {other}", path.display())),
        })?;
        for r in &bundle.repos {
            if !seen.insert(r.repo_id.clone()) {
                return Err(CliError::Parse(format!(
                    "repository {} appears in several reports",
                    r.repo_id
                )));
            }
        }
        config.get_or_insert(bundle.config);
        repos.extend(bundle.repos);
        tags.extend(bundle.domain_tags);
        eligibility.extend(bundle.eligibility);
    }
    let config = config.ok_or_else(|| CliError::Parse("no input reports".into()))?;
    let bundle = ReportBundle::new(config, repos, tags, eligibility, generated_at())
        .map_err(|e| CliError::Parse(e.to_string()))?;
    write_report(&bundle, args.format, args.out.as_deref())
}

fn cmd_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let span = resolve_span(&args.span)?;
    let config = RemoteConfig {
        api_base: args.api_url.clone(),
        ..RemoteConfig::from_env()
    };
    let budget = Arc::new(RateBudget::new(Duration::from_secs(args.max_wait_secs)));
    let fetcher = RemoteFetcher::new(config, budget);
    let mut records = fetcher.fetch_commits(&args.repo, span.range())?;
    records.sort_by(|a, b| {
        a.timestamp_utc()
            .cmp(&b.timestamp_utc())
            .then_with(|| a.commit_hash().cmp(b.commit_hash()))
    });
    write_atomic(&args.out, |w| {
        write_commit_jsonl(&records, w).map_err(|e| CliError::io(&args.out, e))
    })?;
    println!(
        "wrote {} commits for {} to {}",
        records.len(),
        args.repo,
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_end_formats() {
        assert_eq!(parse_span_end("2020-01-01"), Some(1_577_836_800));
        assert_eq!(parse_span_end("2020-01-01T00:00:00Z"), Some(1_577_836_800));
        assert_eq!(parse_span_end("1577836800"), Some(1_577_836_800));
        assert_eq!(parse_span_end("soon"), None);
    }

    #[test]
    fn short_span_is_rejected() {
        let err = resolve_span(&SpanArgs {
            span_days: 7,
            span_end: Some("2020-01-01".into()),
        })
        .unwrap_err();
        assert_eq!(err.code(), EXIT_SPAN);
    }

    #[test]
    fn default_span_end_is_midnight() {
        let span = resolve_span(&SpanArgs {
            span_days: 30,
            span_end: None,
        })
        .unwrap();
        assert_eq!(span.end_utc() % SECONDS_PER_DAY, 0);
    }

    #[test]
    fn format_guess() {
        assert_eq!(guess_format(Path::new("x/a.jsonl")), InputFormat::Jsonl);
        assert_eq!(guess_format(Path::new("x/a.log")), InputFormat::GitLog);
    }

    #[test]
    fn remote_errors_map_to_exit_codes() {
        assert_eq!(
            CliError::from(RemoteError::UnknownRepo("a/b".into())).code(),
            EXIT_NETWORK
        );
        let auth = RemoteError::Auth {
            status: 401,
            message: String::new(),
        };
        assert_eq!(CliError::from(auth).code(), EXIT_AUTH);
        let budget = RemoteError::BudgetExceeded {
            needed: Duration::from_secs(5),
            remaining: Duration::ZERO,
        };
        assert_eq!(CliError::from(budget).code(), EXIT_NETWORK);
    }
}
