//! CSV, markdown and JSON renderings of assessment results.
//!
//! All three emitters are deterministic: rows are ordered by repository id
//! and JSON keys follow struct declaration order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{rollup_by_tag, summarize, CohortError, CohortSummary, DomainRollup};
use crate::ingest::EligibilityReport;
use crate::stability::{
    ProfileLabel, RepoAssessment, NORMALIZER_TARGET, NORMALIZER_TOLERANCE, STABILITY_THRESHOLD,
};

pub const SCHEMA_VERSION: &str = "1";

pub const CSV_HEADER: [&str; 14] = [
    "repo",
    "daily_cv",
    "daily_stable",
    "daily_phi",
    "weekly_cv",
    "weekly_stable",
    "weekly_phi",
    "monthly_cv",
    "monthly_stable",
    "monthly_phi",
    "profile",
    "delta_dw",
    "delta_wm",
    "annual_commits",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0:?}")]
    Schema(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

/// Effective parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub span_end_utc: i64,
    pub span_days: u32,
    pub exclude_merges: bool,
    pub exclude_bots: bool,
    pub bot_pattern: String,
    pub alpha_c: f64,
    pub normalizer_target: f64,
    pub normalizer_tolerance: f64,
}

impl ConfigEcho {
    /// Echo with the built-in stability threshold and normalizer.
    pub fn new(
        span_end_utc: i64,
        span_days: u32,
        exclude_merges: bool,
        exclude_bots: bool,
        bot_pattern: &str,
    ) -> Self {
        Self {
            span_end_utc,
            span_days,
            exclude_merges,
            exclude_bots,
            bot_pattern: bot_pattern.to_owned(),
            alpha_c: STABILITY_THRESHOLD,
            normalizer_target: NORMALIZER_TARGET,
            normalizer_tolerance: NORMALIZER_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: String,
    pub tool_version: String,
    pub generated_at_utc: i64,
    pub config: ConfigEcho,
    pub repos: Vec<RepoAssessment>,
    /// Repository id → domain tag, for tagged repositories only.
    pub domain_tags: BTreeMap<String, String>,
    pub eligibility: Vec<EligibilityReport>,
    /// Absent when there are no repositories.
    pub cohort: Option<CohortSummary>,
    pub domains: Vec<DomainRollup>,
}

impl ReportBundle {
    /// Sorts the assessments and derives cohort statistics. Domain rollups
    /// are produced only when at least one repository is tagged.
    pub fn new(
        config: ConfigEcho,
        mut repos: Vec<RepoAssessment>,
        domain_tags: BTreeMap<String, String>,
        mut eligibility: Vec<EligibilityReport>,
        generated_at_utc: i64,
    ) -> Result<Self, ReportError> {
        repos.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
        eligibility.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
        let cohort = if repos.is_empty() {
            None
        } else {
            Some(summarize(&repos)?)
        };
        let domains = if domain_tags.is_empty() {
            Vec::new()
        } else {
            rollup_by_tag(&repos, |id| Some(domain_tags.get(id).map(String::as_str)))?
        };
        Ok(Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            generated_at_utc,
            config,
            repos,
            domain_tags,
            eligibility,
            cohort,
            domains,
        })
    }
}

/// Fixed six-decimal rendering; negative zero prints as zero.
fn fixed(v: f64) -> String {
    format!("{:.6}", v + 0.0)
}

fn signed(v: f64) -> String {
    let s = fixed(v);
    if s.starts_with('-') || s == "0.000000" {
        s
    } else {
        format!("+{s}")
    }
}

pub fn emit_repo_csv<W: Write>(bundle: &ReportBundle, sink: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(CSV_HEADER)?;
    let mut rows: Vec<&RepoAssessment> = bundle.repos.iter().collect();
    rows.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
    for r in rows {
        let mut record = vec![r.repo_id.clone()];
        for g in [&r.daily, &r.weekly, &r.monthly] {
            record.push(g.cv.map(fixed).unwrap_or_default());
            record.push(g.stable.to_string());
            record.push(fixed(g.phi));
        }
        record.push(r.profile.to_string());
        record.push(fixed(r.deltas.delta_dw));
        record.push(fixed(r.deltas.delta_wm));
        record.push(fixed(r.annual_throughput));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn profile_description(label: ProfileLabel) -> &'static str {
    match label {
        ProfileLabel::AllThree => "Stable at all three scales (daily-weekly-monthly)",
        ProfileLabel::WeeklyMonthly => "Stable at two scales (weekly-monthly)",
        ProfileLabel::MonthlyOnly => "Stable at one scale (monthly only)",
        ProfileLabel::Unstable => "Unstable at all three scales",
        ProfileLabel::NonHierarchical => "Other combinations (non-hierarchical)",
    }
}

fn percent(p: f64) -> String {
    format!("{:.1}%", p * 100.0)
}

pub fn emit_cohort_markdown<W: Write>(
    bundle: &ReportBundle,
    mut sink: W,
) -> Result<(), ReportError> {
    let w = &mut sink;
    writeln!(w, "# Commit stability report")?;
    writeln!(w)?;
    let Some(c) = &bundle.cohort else {
        writeln!(w, "No repositories assessed.")?;
        return Ok(w.flush()?);
    };
    writeln!(w, "- Repositories: {}", c.n_repos)?;
    writeln!(w, "- Daily-stable: {}", percent(c.pct_daily_stable))?;
    writeln!(w, "- Weekly-stable: {}", percent(c.pct_weekly_stable))?;
    writeln!(w, "- Monthly-stable: {}", percent(c.pct_monthly_stable))?;
    let rho = c
        .spearman_weekly_monthly_cv
        .map(fixed)
        .unwrap_or_else(|| "n/a".into());
    writeln!(
        w,
        "- Spearman rank correlation, weekly vs monthly CV: {rho}"
    )?;
    writeln!(w)?;

    writeln!(w, "## Stability profiles")?;
    writeln!(w)?;
    writeln!(w, "| Stability profile | Label | Repos |")?;
    writeln!(w, "|---|---|---:|")?;
    for label in ProfileLabel::ALL {
        let n = c.profile_counts.get(&label).copied().unwrap_or(0);
        writeln!(w, "| {} | {} | {} |", profile_description(label), label, n)?;
    }
    writeln!(w)?;

    let d = &c.delta_stats;
    writeln!(w, "## Weekly to monthly stability evolution")?;
    writeln!(w)?;
    writeln!(w, "| Metric | Value |")?;
    writeln!(w, "|---|---:|")?;
    if d.n_considered == 0 {
        writeln!(w, "| Weekly-stable repositories | n=0 |")?;
    } else {
        let n = d.n_considered;
        let share = |k: usize| format!("{k}/{n} ({})", percent(k as f64 / n as f64));
        writeln!(w, "| Stability improves | {} |", share(d.n_improved))?;
        writeln!(w, "| Stability degrades | {} |", share(d.n_degraded))?;
        writeln!(w, "| Stability unchanged | {} |", share(d.n_unchanged))?;
        let mean = d.mean_change.map(signed).unwrap_or_default();
        let median = d.median_change.map(signed).unwrap_or_default();
        writeln!(w, "| Mean / median change | {mean} / {median} |")?;
        let largest = |k: usize, v: f64| if k == 0 { "n/a".to_owned() } else { signed(v) };
        writeln!(
            w,
            "| Largest improvement | {} |",
            largest(d.n_improved, d.max_improvement)
        )?;
        writeln!(
            w,
            "| Largest degradation | {} |",
            largest(d.n_degraded, d.max_degradation)
        )?;
    }

    if !bundle.domains.is_empty() {
        writeln!(w)?;
        writeln!(w, "## Domains (monthly granularity)")?;
        writeln!(w)?;
        writeln!(w, "| Domain | Repos | Monthly-stable | Mean monthly phi |")?;
        writeln!(w, "|---|---:|---:|---:|")?;
        for r in &bundle.domains {
            writeln!(
                w,
                "| {} | {} | {} | {} |",
                r.domain_tag,
                r.n_repos,
                r.n_monthly_stable,
                fixed(r.mean_monthly_phi)
            )?;
        }
    }
    Ok(w.flush()?)
}

pub fn emit_json<W: Write>(bundle: &ReportBundle, mut sink: W) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut sink, bundle)?;
    sink.write_all(b"\n")?;
    Ok(sink.flush()?)
}

/// Reads a bundle written by [`emit_json`].
pub fn parse_json<R: Read>(source: R) -> Result<ReportBundle, ReportError> {
    let bundle: ReportBundle = serde_json::from_reader(source)?;
    if bundle.schema_version != SCHEMA_VERSION {
        return Err(ReportError::Schema(bundle.schema_version));
    }
    Ok(bundle)
}
