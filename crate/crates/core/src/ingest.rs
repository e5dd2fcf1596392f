//! Commit history acquisition and normalization.
//!
//! Two local formats are understood: the canonical commit JSONL and a
//! unit-separator delimited `git log` export. Both produce [`CommitRecord`]s
//! with UTC epoch-second timestamps taken from the committer date.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Field delimiter of the `git log` export (ASCII unit separator).
pub const GIT_LOG_SEPARATOR: char = '\x1f';

/// The `git log` invocation whose output [`parse_git_log`] accepts.
pub const GIT_LOG_FORMAT: &str =
    "git log --no-show-signature --pretty=format:%h%x1f%cI%x1f%ae%x1f%P";

/// Default substring marking automation accounts.
pub const DEFAULT_BOT_PATTERN: &str = "[bot]";

const SECONDS_PER_DAY: i64 = 86_400;

/// Minimum repository age for selection: ten 365.25-day years, in seconds.
pub const MIN_AGE_SECS: i64 = 3_652 * SECONDS_PER_DAY + SECONDS_PER_DAY / 2;
pub const MIN_STARS_EXCLUSIVE: u64 = 10_000;
pub const MIN_FORKS_EXCLUSIVE: u64 = 9_000;

const MIN_HASH_LEN: usize = 7;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: field `{field}` holds an unparseable timestamp {value:?}")]
    Timestamp {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: expected 4 fields separated by 0x1F, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: {source}")]
    InvalidRecord {
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("invalid repository metadata for {repo_id}: {reason}")]
    InvalidMetadata { repo_id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Violations of the [`CommitRecord`] invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("repository id is empty")]
    EmptyRepo,
    #[error("commit hash {0:?} is not a hex string of at least 7 characters")]
    BadHash(String),
    #[error("timestamp {0} is not after the Unix epoch")]
    NonPositiveTimestamp(i64),
}

/// One commit event.
///
/// The hash is stored lower-cased so that deduplication is case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommitRecord {
    repo_id: String,
    commit_hash: String,
    timestamp_utc: i64,
    author_id: String,
    is_merge: bool,
}

impl CommitRecord {
    pub fn new(
        repo_id: impl Into<String>,
        commit_hash: &str,
        timestamp_utc: i64,
        author_id: impl Into<String>,
        is_merge: bool,
    ) -> Result<Self, RecordError> {
        let repo_id = repo_id.into();
        if repo_id.is_empty() {
            return Err(RecordError::EmptyRepo);
        }
        if commit_hash.len() < MIN_HASH_LEN || !commit_hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(RecordError::BadHash(commit_hash.to_owned()));
        }
        if timestamp_utc <= 0 {
            return Err(RecordError::NonPositiveTimestamp(timestamp_utc));
        }
        Ok(Self {
            repo_id,
            commit_hash: commit_hash.to_ascii_lowercase(),
            timestamp_utc,
            author_id: author_id.into(),
            is_merge,
        })
    }

    pub fn repo_id(&self) -> &str {
        &self.repo_id
    }

    pub fn commit_hash(&self) -> &str {
        &self.commit_hash
    }

    pub fn timestamp_utc(&self) -> i64 {
        self.timestamp_utc
    }

    pub fn author_id(&self) -> &str {
        &self.author_id
    }

    pub fn is_merge(&self) -> bool {
        self.is_merge
    }
}

/// Half-open UTC interval `[start_utc, end_utc)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    start_utc: i64,
    end_utc: i64,
}

impl TimeRange {
    /// Returns `None` unless `start_utc < end_utc`.
    pub fn new(start_utc: i64, end_utc: i64) -> Option<Self> {
        (start_utc < end_utc).then_some(Self { start_utc, end_utc })
    }

    pub fn start_utc(&self) -> i64 {
        self.start_utc
    }

    pub fn end_utc(&self) -> i64 {
        self.end_utc
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start_utc <= ts && ts < self.end_utc
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOptions {
    pub exclude_merges: bool,
    pub exclude_bot_authors: bool,
    pub bot_pattern: String,
    pub span: TimeRange,
}

impl FilterOptions {
    /// Keeps everything inside `span`: merges and bot commits included.
    pub fn new(span: TimeRange) -> Self {
        Self {
            exclude_merges: false,
            exclude_bot_authors: false,
            bot_pattern: DEFAULT_BOT_PATTERN.to_owned(),
            span,
        }
    }

    fn keeps(&self, record: &CommitRecord) -> bool {
        if !self.span.contains(record.timestamp_utc) {
            return false;
        }
        if self.exclude_merges && record.is_merge {
            return false;
        }
        !(self.exclude_bot_authors && record.author_id.contains(self.bot_pattern.as_str()))
    }
}

/// Repository facts used by the selection criteria.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMetadata {
    pub repo_id: String,
    pub created_at_utc: i64,
    pub stars: u64,
    pub forks: u64,
    pub archived: bool,
    /// Asserted by the user; books, tutorials and course material.
    pub educational: bool,
    pub domain_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityReport {
    pub repo_id: String,
    pub age_ok: bool,
    pub stars_ok: bool,
    pub forks_ok: bool,
    pub active_ok: bool,
    pub dev_focus_ok: bool,
    pub eligible: bool,
}

/// Parses an ISO-8601 timestamp with zone offset, or integer epoch seconds.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit()) {
        return text.parse().ok();
    }
    DateTime::parse_from_rfc3339(text)
        .ok()
        .map(|dt| dt.with_timezone(&Utc).timestamp())
}

/// Renders epoch seconds as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_timestamp(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| ts.to_string())
}

#[derive(Deserialize)]
struct JsonlLine {
    repo: String,
    hash: String,
    timestamp: serde_json::Value,
    author: String,
    #[serde(default)]
    is_merge: bool,
}

#[derive(Serialize)]
struct JsonlOut<'a> {
    repo: &'a str,
    hash: &'a str,
    timestamp: String,
    author: &'a str,
    is_merge: bool,
}

/// Reads canonical commit JSONL. Blank lines are skipped; repeated
/// `(repo, hash)` pairs keep their first occurrence.
pub fn parse_commit_jsonl<R: BufRead>(reader: R) -> Result<Vec<CommitRecord>, IngestError> {
    let mut dedup = Deduplicator::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IngestError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonlLine = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let ts = match &raw.timestamp {
            serde_json::Value::Number(n) => n.as_i64(),
            serde_json::Value::String(s) => parse_timestamp(s),
            _ => None,
        }
        .ok_or_else(|| IngestError::Timestamp {
            line: line_no,
            field: "timestamp",
            value: raw.timestamp.to_string(),
        })?;
        let record = CommitRecord::new(raw.repo, &raw.hash, ts, raw.author, raw.is_merge).map_err(
            |source| IngestError::InvalidRecord {
                line: line_no,
                source,
            },
        )?;
        dedup.push(record);
    }
    Ok(dedup.finish())
}

/// Writes records as canonical JSONL with ISO-8601 UTC timestamps.
pub fn write_commit_jsonl<W: Write>(records: &[CommitRecord], mut sink: W) -> std::io::Result<()> {
    for r in records {
        let line = JsonlOut {
            repo: &r.repo_id,
            hash: &r.commit_hash,
            timestamp: format_timestamp(r.timestamp_utc),
            author: &r.author_id,
            is_merge: r.is_merge,
        };
        serde_json::to_writer(&mut sink, &line)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

/// Reads a `git log` export produced by [`GIT_LOG_FORMAT`].
///
/// The fourth field is the parent count. The raw `%P` parent list is also
/// accepted and counted.
pub fn parse_git_log<R: BufRead>(
    repo_id: &str,
    reader: R,
) -> Result<Vec<CommitRecord>, IngestError> {
    let mut dedup = Deduplicator::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IngestError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(GIT_LOG_SEPARATOR).collect();
        let [hash, date, author, parents] = fields[..] else {
            return Err(IngestError::FieldCount {
                line: line_no,
                found: fields.len(),
            });
        };
        let ts = parse_timestamp(date).ok_or_else(|| IngestError::Timestamp {
            line: line_no,
            field: "committer-date",
            value: date.to_owned(),
        })?;
        let parent_count = parse_parent_count(parents).ok_or_else(|| IngestError::Malformed {
            line: line_no,
            reason: format!("parent field {parents:?} is neither a count nor a hash list"),
        })?;
        let record = CommitRecord::new(repo_id, hash.trim(), ts, author.trim(), parent_count >= 2)
            .map_err(|source| IngestError::InvalidRecord {
                line: line_no,
                source,
            })?;
        dedup.push(record);
    }
    Ok(dedup.finish())
}

fn parse_parent_count(field: &str) -> Option<usize> {
    let field = field.trim();
    if field.is_empty() {
        return Some(0);
    }
    // Short all-digit values are counts; anything else is a %P hash list.
    if field.len() < MIN_HASH_LEN && field.bytes().all(|b| b.is_ascii_digit()) {
        return field.parse().ok();
    }
    let mut n = 0;
    for token in field.split_whitespace() {
        if token.len() < MIN_HASH_LEN || !token.chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        n += 1;
    }
    Some(n)
}

#[derive(Default)]
struct Deduplicator {
    seen: HashSet<(String, String)>,
    out: Vec<CommitRecord>,
}

impl Deduplicator {
    fn push(&mut self, record: CommitRecord) {
        if self
            .seen
            .insert((record.repo_id.clone(), record.commit_hash.clone()))
        {
            self.out.push(record);
        }
    }

    fn finish(self) -> Vec<CommitRecord> {
        self.out
    }
}

/// Applies span, merge and bot filters, preserving order.
pub fn filter_commits(records: &[CommitRecord], options: &FilterOptions) -> Vec<CommitRecord> {
    records
        .iter()
        .filter(|r| options.keeps(r))
        .cloned()
        .collect()
}

/// Evaluates the repository selection criteria at `now_utc`.
pub fn check_selection_criteria(
    meta: &RepoMetadata,
    now_utc: i64,
) -> Result<EligibilityReport, IngestError> {
    if meta.created_at_utc <= 0 {
        return Err(IngestError::InvalidMetadata {
            repo_id: meta.repo_id.clone(),
            reason: format!(
                "created_at_utc {} is not after the epoch",
                meta.created_at_utc
            ),
        });
    }
    if now_utc <= meta.created_at_utc {
        return Err(IngestError::InvalidMetadata {
            repo_id: meta.repo_id.clone(),
            reason: format!(
                "evaluation time {now_utc} does not follow creation time {}",
                meta.created_at_utc
            ),
        });
    }
    let age_ok = now_utc - meta.created_at_utc >= MIN_AGE_SECS;
    let stars_ok = meta.stars > MIN_STARS_EXCLUSIVE;
    let forks_ok = meta.forks > MIN_FORKS_EXCLUSIVE;
    let active_ok = !meta.archived;
    let dev_focus_ok = !meta.educational;
    Ok(EligibilityReport {
        repo_id: meta.repo_id.clone(),
        age_ok,
        stars_ok,
        forks_ok,
        active_ok,
        dev_focus_ok,
        eligible: age_ok && stars_ok && forks_ok && active_ok && dev_focus_ok,
    })
}
