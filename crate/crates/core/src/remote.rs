//! Commit listing from a GitHub-style REST API.
//!
//! `GET {api_base}/repos/{owner}/{name}/commits?since=..&until=..&per_page=..&page=..`
//! is paged until a page is short or the `Link` header has no `rel="next"`.
//! Transient failures (transport errors, 5xx) are retried with exponential
//! backoff. Rate-limit responses park the caller until the advertised reset,
//! charged against a wall-clock budget shared by every fetcher holding the
//! same [`RateBudget`].

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use thiserror::Error;

use crate::ingest::{format_timestamp, parse_timestamp, CommitRecord, TimeRange};

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
/// Environment variable holding the API token.
pub const TOKEN_ENV: &str = "COMMIT_PULSE_TOKEN";
pub const DEFAULT_PER_PAGE: u32 = 100;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("unknown repository {0}")]
    UnknownRepo(String),
    #[error("authentication failed with HTTP {status}: {message}")]
    Auth { status: u16, message: String },
    #[error("rate limit wait of {needed:?} exceeds remaining budget of {remaining:?}")]
    BudgetExceeded {
        needed: Duration,
        remaining: Duration,
    },
    #[error("HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not decode response: {0}")]
    Decode(String),
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub api_base: String,
    pub token: Option<String>,
    pub per_page: u32,
    /// Retries per request for transient failures.
    pub max_retries: u32,
    /// First backoff delay; doubled after every retry.
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            api_base: DEFAULT_API_BASE.to_owned(),
            token: None,
            per_page: DEFAULT_PER_PAGE,
            max_retries: 5,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

impl RemoteConfig {
    /// Defaults with the token read from [`TOKEN_ENV`], if set and non-empty.
    pub fn from_env() -> Self {
        Self {
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Default)]
struct BudgetState {
    remaining: Option<u64>,
    reset_at: Option<u64>,
    waited: Duration,
}

/// Shared rate-limit bookkeeping. All updates go through one mutex, so
/// concurrent fetchers see a consistent view of the remaining quota and of
/// the wall-clock time already spent waiting.
#[derive(Debug)]
pub struct RateBudget {
    max_wait: Duration,
    state: Mutex<BudgetState>,
}

impl RateBudget {
    pub fn new(max_wait: Duration) -> Self {
        Self {
            max_wait,
            state: Mutex::new(BudgetState::default()),
        }
    }

    pub fn waited(&self) -> Duration {
        self.state.lock().expect("budget lock").waited
    }

    /// Blocks until the quota has reset, if it is known to be exhausted.
    fn acquire(&self) -> Result<(), RemoteError> {
        let wait = {
            let mut st = self.state.lock().expect("budget lock");
            let now = unix_now();
            let wait = match (st.remaining, st.reset_at) {
                (Some(0), Some(reset)) if reset > now => Duration::from_secs(reset - now),
                _ => Duration::ZERO,
            };
            if wait.is_zero() {
                return Ok(());
            }
            let remaining = self.max_wait.saturating_sub(st.waited);
            if wait > remaining {
                return Err(RemoteError::BudgetExceeded {
                    needed: wait,
                    remaining,
                });
            }
            st.waited += wait;
            st.remaining = None;
            wait
        };
        log::info!("rate limit exhausted, sleeping {wait:?}");
        thread::sleep(wait);
        Ok(())
    }

    fn observe(&self, remaining: Option<u64>, reset_at: Option<u64>) {
        let mut st = self.state.lock().expect("budget lock");
        if remaining.is_some() {
            st.remaining = remaining;
        }
        if reset_at.is_some() {
            st.reset_at = reset_at;
        }
    }
}

impl Default for RateBudget {
    fn default() -> Self {
        Self::new(Duration::from_secs(3600))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Deserialize)]
struct ApiCommit {
    sha: String,
    commit: ApiCommitDetail,
    #[serde(default)]
    parents: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct ApiCommitDetail {
    author: Option<ApiSignature>,
    committer: Option<ApiSignature>,
}

#[derive(Deserialize)]
struct ApiSignature {
    email: Option<String>,
    date: Option<String>,
}

struct Page {
    commits: Vec<ApiCommit>,
    has_next: Option<bool>,
}

pub struct RemoteFetcher {
    agent: ureq::Agent,
    config: RemoteConfig,
    budget: Arc<RateBudget>,
}

impl RemoteFetcher {
    pub fn new(config: RemoteConfig, budget: Arc<RateBudget>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .user_agent(concat!("commit-pulse/", env!("CARGO_PKG_VERSION")))
            .build()
            .into();
        Self {
            agent,
            config,
            budget,
        }
    }

    /// Every commit whose committer date lies in `range`, newest first as
    /// served by the API.
    pub fn fetch_commits(
        &self,
        repo_id: &str,
        range: TimeRange,
    ) -> Result<Vec<CommitRecord>, RemoteError> {
        if !is_valid_repo_id(repo_id) {
            return Err(RemoteError::UnknownRepo(repo_id.to_owned()));
        }
        let url = format!(
            "{}/repos/{}/commits",
            self.config.api_base.trim_end_matches('/'),
            repo_id
        );
        let per_page = self.config.per_page.max(1);
        let mut out = Vec::new();
        for page_no in 1.. {
            let page = self.get_page(&url, repo_id, range, page_no, per_page)?;
            let count = page.commits.len();
            for c in page.commits {
                if let Some(record) = to_record(repo_id, c)? {
                    if range.contains(record.timestamp_utc()) {
                        out.push(record);
                    }
                }
            }
            let more = page.has_next.unwrap_or(count >= per_page as usize);
            if !more || count == 0 {
                break;
            }
        }
        Ok(out)
    }

    fn get_page(
        &self,
        url: &str,
        repo_id: &str,
        range: TimeRange,
        page_no: u32,
        per_page: u32,
    ) -> Result<Page, RemoteError> {
        let mut attempt = 0;
        loop {
            self.budget.acquire()?;
            let mut req = self
                .agent
                .get(url)
                .header("Accept", "application/vnd.github+json")
                .query("since", format_timestamp(range.start_utc()))
                .query("until", format_timestamp(range.end_utc()))
                .query("per_page", per_page.to_string())
                .query("page", page_no.to_string());
            if let Some(token) = &self.config.token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            let mut resp = match req.call() {
                Ok(resp) => resp,
                Err(e) if attempt < self.config.max_retries => {
                    log::warn!("request to {url} failed ({e}), retrying");
                    self.backoff(&mut attempt);
                    continue;
                }
                Err(e) => return Err(RemoteError::Transport(e.to_string())),
            };

            let header = |name: &str| {
                resp.headers()
                    .get(name)
                    .and_then(|v| v.to_str().ok())
                    .map(str::to_owned)
            };
            let remaining = header("x-ratelimit-remaining").and_then(|v| v.trim().parse().ok());
            let mut reset_at = header("x-ratelimit-reset").and_then(|v| v.trim().parse().ok());
            let retry_after: Option<u64> =
                header("retry-after").and_then(|v| v.trim().parse().ok());
            let link = header("link");
            let status = resp.status().as_u16();

            let rate_limited =
                matches!(status, 403 | 429) && (remaining == Some(0) || retry_after.is_some());
            if rate_limited {
                if let Some(secs) = retry_after {
                    reset_at = Some(unix_now() + secs.max(1));
                }
                // Never retry sooner than one second, even if the reset has passed.
                let reset = reset_at.unwrap_or(0).max(unix_now() + 1);
                self.budget.observe(Some(0), Some(reset));
                continue;
            }
            self.budget.observe(remaining, reset_at);

            let body = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| RemoteError::Transport(e.to_string()));
            match status {
                200..=299 => {
                    let commits: Vec<ApiCommit> = serde_json::from_str(&body?)
                        .map_err(|e| RemoteError::Decode(e.to_string()))?;
                    return Ok(Page {
                        commits,
                        has_next: link.map(|l| l.contains("rel=\"next\"")),
                    });
                }
                // Empty repositories answer 409 Conflict.
                409 => {
                    return Ok(Page {
                        commits: Vec::new(),
                        has_next: Some(false),
                    })
                }
                404 => return Err(RemoteError::UnknownRepo(repo_id.to_owned())),
                401 | 403 => {
                    return Err(RemoteError::Auth {
                        status,
                        message: body.unwrap_or_default(),
                    })
                }
                500..=599 if attempt < self.config.max_retries => {
                    log::warn!("HTTP {status} from {url}, retrying");
                    self.backoff(&mut attempt);
                }
                _ => {
                    return Err(RemoteError::Http {
                        status,
                        url: url.to_owned(),
                    })
                }
            }
        }
    }

    fn backoff(&self, attempt: &mut u32) {
        let delay = self
            .config
            .backoff_base
            .saturating_mul(1u32 << (*attempt).min(16));
        *attempt += 1;
        thread::sleep(delay);
    }
}

/// Convenience wrapper with default settings and a fresh budget.
pub fn fetch_commits_remote(
    repo_id: &str,
    auth_token: Option<&str>,
    range: TimeRange,
) -> Result<Vec<CommitRecord>, RemoteError> {
    let config = RemoteConfig {
        token: auth_token.map(str::to_owned),
        ..RemoteConfig::default()
    };
    RemoteFetcher::new(config, Arc::new(RateBudget::default())).fetch_commits(repo_id, range)
}

fn is_valid_repo_id(repo_id: &str) -> bool {
    let mut parts = repo_id.split('/');
    let valid = |s: &str| {
        !s.is_empty()
            && s != "."
            && s != ".."
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    };
    matches!((parts.next(), parts.next(), parts.next()), (Some(o), Some(n), None) if valid(o) && valid(n))
}

fn to_record(repo_id: &str, c: ApiCommit) -> Result<Option<CommitRecord>, RemoteError> {
    let date = c
        .commit
        .committer
        .as_ref()
        .and_then(|s| s.date.as_deref())
        .or_else(|| c.commit.author.as_ref().and_then(|s| s.date.as_deref()));
    let Some(date) = date else {
        log::warn!("commit {} has no date, skipping", c.sha);
        return Ok(None);
    };
    let ts = parse_timestamp(date)
        .ok_or_else(|| RemoteError::Decode(format!("bad date {date:?} on {}", c.sha)))?;
    let author = c.commit.author.and_then(|s| s.email).unwrap_or_default();
    CommitRecord::new(repo_id, &c.sha, ts, author, c.parents.len() >= 2)
        .map(Some)
        .map_err(|e| RemoteError::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repo_id_shape() {
        assert!(is_valid_repo_id("rust-lang/rust"));
        assert!(is_valid_repo_id("NixOS/nixpkgs"));
        assert!(!is_valid_repo_id("rust"));
        assert!(!is_valid_repo_id("a/b/c"));
        assert!(!is_valid_repo_id("a/"));
        assert!(!is_valid_repo_id("a b/c"));
        assert!(!is_valid_repo_id("../x"));
    }

    #[test]
    fn budget_refuses_waits_beyond_limit() {
        let budget = RateBudget::new(Duration::from_secs(10));
        budget.observe(Some(0), Some(unix_now() + 3600));
        assert!(matches!(
            budget.acquire(),
            Err(RemoteError::BudgetExceeded { .. })
        ));
        assert_eq!(budget.waited(), Duration::ZERO);
    }

    #[test]
    fn budget_passes_when_quota_left_or_reset_elapsed() {
        let budget = RateBudget::new(Duration::ZERO);
        budget.observe(Some(10), Some(unix_now() + 3600));
        assert!(budget.acquire().is_ok());
        budget.observe(Some(0), Some(unix_now().saturating_sub(5)));
        assert!(budget.acquire().is_ok());
    }

    #[test]
    fn invalid_repo_rejected_without_network() {
        let range = TimeRange::new(1, 2).unwrap();
        assert!(matches!(
            fetch_commits_remote("not a repo", None, range),
            Err(RemoteError::UnknownRepo(_))
        ));
    }
}
