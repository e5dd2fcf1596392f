//! Cohort-level aggregation of repository assessments.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RepoMetadata;
use crate::series::Granularity;
use crate::stability::{ProfileLabel, RepoAssessment};

/// Rollup key for repositories without a domain tag.
pub const UNTAGGED: &str = "untagged";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CohortError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("repository {0} appears more than once")]
    DuplicateRepo(String),
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no metadata for repository {0}")]
    UnknownRepo(String),
}

/// Weekly→monthly score changes over weekly-stable repositories.
///
/// `max_improvement` and `max_degradation` are 0 when the corresponding
/// population (`n_improved` / `n_degraded`) is empty; mean and median are
/// `None` when nothing was considered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStats {
    pub n_considered: usize,
    pub n_improved: usize,
    pub n_degraded: usize,
    pub n_unchanged: usize,
    pub mean_change: Option<f64>,
    pub median_change: Option<f64>,
    pub max_improvement: f64,
    pub max_degradation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_repos: usize,
    pub profile_counts: BTreeMap<ProfileLabel, usize>,
    pub pct_daily_stable: f64,
    pub pct_weekly_stable: f64,
    pub pct_monthly_stable: f64,
    pub delta_stats: DeltaStats,
    /// Over repositories with both weekly and monthly CV defined.
    pub spearman_weekly_monthly_cv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRollup {
    pub domain_tag: String,
    pub n_repos: usize,
    pub n_monthly_stable: usize,
    pub mean_monthly_phi: f64,
}

pub fn summarize(assessments: &[RepoAssessment]) -> Result<CohortSummary, CohortError> {
    if assessments.is_empty() {
        return Err(CohortError::EmptyCohort);
    }
    let mut seen = HashSet::new();
    for a in assessments {
        if !seen.insert(a.repo_id.as_str()) {
            return Err(CohortError::DuplicateRepo(a.repo_id.clone()));
        }
    }

    let mut profile_counts: BTreeMap<ProfileLabel, usize> =
        ProfileLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for a in assessments {
        *profile_counts.entry(a.profile.label()).or_default() += 1;
    }

    let n = assessments.len();
    let pct =
        |g: Granularity| assessments.iter().filter(|a| a.at(g).stable).count() as f64 / n as f64;

    let (weekly_cv, monthly_cv): (Vec<f64>, Vec<f64>) = assessments
        .iter()
        .filter_map(|a| Some((a.weekly.cv?, a.monthly.cv?)))
        .unzip();

    Ok(CohortSummary {
        n_repos: n,
        profile_counts,
        pct_daily_stable: pct(Granularity::Daily),
        pct_weekly_stable: pct(Granularity::Weekly),
        pct_monthly_stable: pct(Granularity::Monthly),
        delta_stats: delta_statistics(assessments),
        spearman_weekly_monthly_cv: spearman_rank(&weekly_cv, &monthly_cv)?,
    })
}

pub fn delta_statistics(assessments: &[RepoAssessment]) -> DeltaStats {
    let mut changes: Vec<f64> = assessments
        .iter()
        .filter(|a| a.weekly.stable)
        .map(|a| a.deltas.delta_wm)
        .collect();
    let n = changes.len();
    let n_improved = changes.iter().filter(|&&d| d > 0.0).count();
    let n_degraded = changes.iter().filter(|&&d| d < 0.0).count();
    let max_improvement = changes
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(0.0, f64::max);
    let max_degradation = changes
        .iter()
        .copied()
        .filter(|&d| d < 0.0)
        .fold(0.0, f64::min);
    let mean_change = (n > 0).then(|| changes.iter().sum::<f64>() / n as f64);
    changes.sort_by(f64::total_cmp);
    let median_change = match n {
        0 => None,
        _ if n % 2 == 1 => Some(changes[n / 2]),
        _ => Some((changes[n / 2 - 1] + changes[n / 2]) / 2.0),
    };
    DeltaStats {
        n_considered: n,
        n_improved,
        n_degraded,
        n_unchanged: n - n_improved - n_degraded,
        mean_change,
        median_change,
        max_improvement,
        max_degradation,
    }
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len()
            && values[order[j + 1]].total_cmp(&values[order[i]]) == Ordering::Equal
        {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of average ranks. `None` for fewer
/// than two pairs or when either side is constant.
pub fn spearman_rank(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, CohortError> {
    if xs.len() != ys.len() {
        return Err(CohortError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Ok(None);
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    // Ranks average to (n + 1) / 2, an exact half-integer.
    let centre = (xs.len() + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - centre, b - centre);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Groups assessments by the domain tag in `metadata`.
pub fn domain_rollup(
    assessments: &[RepoAssessment],
    metadata: &[RepoMetadata],
) -> Result<Vec<DomainRollup>, CohortError> {
    let tags: HashMap<&str, Option<&str>> = metadata
        .iter()
        .map(|m| (m.repo_id.as_str(), m.domain_tag.as_deref()))
        .collect();
    rollup_by_tag(assessments, |repo| tags.get(repo).copied())
}

/// Groups assessments by `tag_of(repo_id)`: `None` means the repository is
/// unknown, `Some(None)` means it is untagged. Rollups are sorted by tag.
pub fn rollup_by_tag<'a, F>(
    assessments: &[RepoAssessment],
    tag_of: F,
) -> Result<Vec<DomainRollup>, CohortError>
where
    F: Fn(&str) -> Option<Option<&'a str>>,
{
    let mut groups: BTreeMap<&str, Vec<&RepoAssessment>> = BTreeMap::new();
    for a in assessments {
        let tag = tag_of(&a.repo_id).ok_or_else(|| CohortError::UnknownRepo(a.repo_id.clone()))?;
        groups.entry(tag.unwrap_or(UNTAGGED)).or_default().push(a);
    }
    Ok(groups
        .into_iter()
        .map(|(tag, members)| DomainRollup {
            domain_tag: tag.to_owned(),
            n_repos: members.len(),
            n_monthly_stable: members.iter().filter(|a| a.monthly.stable).count(),
            mean_monthly_phi: members.iter().map(|a| a.monthly.phi).sum::<f64>()
                / members.len() as f64,
        })
        .collect())
}
