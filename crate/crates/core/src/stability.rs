//! Stability classification and scoring per granularity.
//!
//! A series is stable when its coefficient of variation (population σ over
//! μ of the bucket counts) is at most [`STABILITY_THRESHOLD`]. Independently,
//! the CV is scored on `[0, 1]` by a triangular normalizer peaking at
//! [`NORMALIZER_TARGET`]. The two facts are reported separately: a CV of
//! exactly 0 or 0.5 is stable yet scores 0.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{filter_commits, CommitRecord, FilterOptions};
use crate::series::{
    annual_throughput, bucketize, frequency_series, AnalysisSpan, BucketSeries, Granularity,
    SeriesError,
};

/// Largest CV still classified stable (inclusive).
pub const STABILITY_THRESHOLD: f64 = 0.5;
/// CV receiving the maximum score of 1.
pub const NORMALIZER_TARGET: f64 = 0.25;
/// Distance from the target at which the score reaches 0.
pub const NORMALIZER_TOLERANCE: f64 = 0.25;

/// Scores are rounded to multiples of 2⁻⁴⁰. On this grid every score and
/// every difference of scores is exact in `f64`, so stepwise deltas
/// telescope without rounding error.
pub const SCORE_RESOLUTION: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("cannot compute dispersion of an empty series")]
    EmptySeries,
    #[error("score {value} for {granularity} lies outside [0, 1]")]
    ScoreOutOfRange {
        granularity: Granularity,
        value: f64,
    },
}

/// Snaps a score in `[0, 1]` onto the [`SCORE_RESOLUTION`] grid.
pub fn quantize_score(phi: f64) -> f64 {
    (phi / SCORE_RESOLUTION).round() * SCORE_RESOLUTION
}

fn mean_and_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population σ / μ of the counts; `None` when the mean is zero.
pub fn coefficient_of_variation(counts: &[u64]) -> Result<Option<f64>, StabilityError> {
    if counts.is_empty() {
        return Err(StabilityError::EmptySeries);
    }
    let (mean, std) = mean_and_std(counts.iter().map(|&c| c as f64));
    Ok((mean > 0.0).then(|| std / mean))
}

/// Same as [`coefficient_of_variation`] for real-valued rates, such as the
/// output of [`frequency_series`].
pub fn coefficient_of_variation_f64(values: &[f64]) -> Result<Option<f64>, StabilityError> {
    if values.is_empty() {
        return Err(StabilityError::EmptySeries);
    }
    let (mean, std) = mean_and_std(values.iter().copied());
    Ok((mean > 0.0).then(|| std / mean))
}

pub fn classify_stable(cv: Option<f64>) -> bool {
    matches!(cv, Some(cv) if cv <= STABILITY_THRESHOLD)
}

/// `1 − |cv − 0.25| / 0.25` inside the corridor `[0, 0.5]`, else 0.
pub fn triangular_normalizer(cv: Option<f64>) -> f64 {
    match cv {
        Some(cv) if (0.0..=NORMALIZER_TARGET + NORMALIZER_TOLERANCE).contains(&cv) => {
            let phi = 1.0 - (cv - NORMALIZER_TARGET).abs() / NORMALIZER_TOLERANCE;
            quantize_score(phi.clamp(0.0, 1.0))
        }
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityAssessment {
    pub granularity: Granularity,
    pub buckets: usize,
    /// Commits per bucket.
    pub mean: f64,
    pub std_dev: f64,
    pub cv: Option<f64>,
    pub stable: bool,
    pub phi: f64,
    /// Zero mean or a single bucket: no CV, unstable, score 0.
    pub degenerate: bool,
}

/// Assesses raw counts at one granularity.
pub fn assess_counts(granularity: Granularity, counts: &[u64]) -> GranularityAssessment {
    if counts.is_empty() {
        return GranularityAssessment {
            granularity,
            buckets: 0,
            mean: 0.0,
            std_dev: 0.0,
            cv: None,
            stable: false,
            phi: 0.0,
            degenerate: true,
        };
    }
    let (mean, std_dev) = mean_and_std(counts.iter().map(|&c| c as f64));
    let cv = if counts.len() < 2 || mean <= 0.0 {
        None
    } else {
        Some(std_dev / mean)
    };
    GranularityAssessment {
        granularity,
        buckets: counts.len(),
        mean,
        std_dev,
        cv,
        stable: classify_stable(cv),
        phi: triangular_normalizer(cv),
        degenerate: cv.is_none(),
    }
}

pub fn assess_granularity(series: &BucketSeries) -> GranularityAssessment {
    assess_counts(series.granularity(), series.counts())
}

/// Discrete `dc/dt`: first differences of the per-day frequency divided by
/// the window length. Order-sensitive; not used for classification.
pub fn derivative_diagnostic(series: &BucketSeries) -> Vec<f64> {
    let days = f64::from(series.granularity().window_days());
    frequency_series(series)
        .windows(2)
        .map(|w| (w[1] - w[0]) / days)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProfileLabel {
    AllThree,
    WeeklyMonthly,
    MonthlyOnly,
    Unstable,
    NonHierarchical,
}

impl ProfileLabel {
    pub const ALL: [ProfileLabel; 5] = [
        ProfileLabel::AllThree,
        ProfileLabel::WeeklyMonthly,
        ProfileLabel::MonthlyOnly,
        ProfileLabel::Unstable,
        ProfileLabel::NonHierarchical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileLabel::AllThree => "ALL_THREE",
            ProfileLabel::WeeklyMonthly => "WEEKLY_MONTHLY",
            ProfileLabel::MonthlyOnly => "MONTHLY_ONLY",
            ProfileLabel::Unstable => "UNSTABLE",
            ProfileLabel::NonHierarchical => "NON_HIERARCHICAL",
        }
    }
}

impl fmt::Display for ProfileLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The set of granularities a repository is stable at, and its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct StabilityProfile {
    stable_set: BTreeSet<Granularity>,
    label: ProfileLabel,
}

impl StabilityProfile {
    pub fn stable_set(&self) -> &BTreeSet<Granularity> {
        &self.stable_set
    }

    pub fn label(&self) -> ProfileLabel {
        self.label
    }

    pub fn is_stable_at(&self, g: Granularity) -> bool {
        self.stable_set.contains(&g)
    }
}

impl fmt::Display for StabilityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label.as_str())?;
        if self.label == ProfileLabel::NonHierarchical {
            let letters: Vec<&str> = self
                .stable_set
                .iter()
                .map(|g| match g {
                    Granularity::Daily => "D",
                    Granularity::Weekly => "W",
                    Granularity::Monthly => "M",
                })
                .collect();
            write!(f, "{{{}}}", letters.join(","))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    stable_set: Vec<Granularity>,
    label: ProfileLabel,
}

impl From<StabilityProfile> for RawProfile {
    fn from(p: StabilityProfile) -> Self {
        RawProfile {
            stable_set: p.stable_set.into_iter().collect(),
            label: p.label,
        }
    }
}

impl TryFrom<RawProfile> for StabilityProfile {
    type Error = String;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        let has = |g| raw.stable_set.contains(&g);
        let derived = derive_profile(
            has(Granularity::Daily),
            has(Granularity::Weekly),
            has(Granularity::Monthly),
        );
        if derived.label != raw.label {
            return Err(format!(
                "label {} does not match stable set (expected {})",
                raw.label, derived.label
            ));
        }
        Ok(derived)
    }
}

pub fn derive_profile(
    daily_stable: bool,
    weekly_stable: bool,
    monthly_stable: bool,
) -> StabilityProfile {
    let label = match (daily_stable, weekly_stable, monthly_stable) {
        (true, true, true) => ProfileLabel::AllThree,
        (false, true, true) => ProfileLabel::WeeklyMonthly,
        (false, false, true) => ProfileLabel::MonthlyOnly,
        (false, false, false) => ProfileLabel::Unstable,
        _ => ProfileLabel::NonHierarchical,
    };
    let stable_set = [
        (Granularity::Daily, daily_stable),
        (Granularity::Weekly, weekly_stable),
        (Granularity::Monthly, monthly_stable),
    ]
    .into_iter()
    .filter_map(|(g, s)| s.then_some(g))
    .collect();
    StabilityProfile { stable_set, label }
}

/// Score changes when widening the window: daily→weekly and weekly→monthly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPair {
    pub delta_dw: f64,
    pub delta_wm: f64,
}

/// Inputs are snapped to the score grid before subtracting.
pub fn compute_deltas(phi_d: f64, phi_w: f64, phi_m: f64) -> Result<DeltaPair, StabilityError> {
    for (granularity, value) in [
        (Granularity::Daily, phi_d),
        (Granularity::Weekly, phi_w),
        (Granularity::Monthly, phi_m),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(StabilityError::ScoreOutOfRange { granularity, value });
        }
    }
    let (d, w, m) = (
        quantize_score(phi_d),
        quantize_score(phi_w),
        quantize_score(phi_m),
    );
    Ok(DeltaPair {
        delta_dw: w - d,
        delta_wm: m - w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoAssessment {
    pub repo_id: String,
    pub daily: GranularityAssessment,
    pub weekly: GranularityAssessment,
    pub monthly: GranularityAssessment,
    pub profile: StabilityProfile,
    pub deltas: DeltaPair,
    /// Commits per year over the span, after filtering.
    pub annual_throughput: f64,
}

impl RepoAssessment {
    pub fn at(&self, g: Granularity) -> &GranularityAssessment {
        match g {
            Granularity::Daily => &self.daily,
            Granularity::Weekly => &self.weekly,
            Granularity::Monthly => &self.monthly,
        }
    }
}

/// Filters `records`, buckets them at all three granularities from the
/// span's end, and assesses each.
pub fn assess_repo(
    repo_id: &str,
    records: &[CommitRecord],
    span: AnalysisSpan,
    filter: &FilterOptions,
) -> Result<RepoAssessment, SeriesError> {
    let kept = filter_commits(records, filter);
    let daily = assess_granularity(&bucketize(&kept, Granularity::Daily, span)?);
    let weekly = assess_granularity(&bucketize(&kept, Granularity::Weekly, span)?);
    let monthly = assess_granularity(&bucketize(&kept, Granularity::Monthly, span)?);
    let profile = derive_profile(daily.stable, weekly.stable, monthly.stable);
    let deltas = compute_deltas(daily.phi, weekly.phi, monthly.phi)
        .expect("normalizer output lies in [0, 1]");
    Ok(RepoAssessment {
        repo_id: repo_id.to_owned(),
        daily,
        weekly,
        monthly,
        profile,
        deltas,
        annual_throughput: annual_throughput(&kept, span),
    })
}
