//! Tumbling-window commit count series.
//!
//! Buckets are anchored backward from the end of the analysis span, so the
//! newest bucket always ends exactly at `end_utc` and the three granularities
//! share boundaries wherever their windows line up.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CommitRecord, TimeRange};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Roughly five years.
pub const DEFAULT_SPAN_DAYS: u32 = 1_826;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error(
        "span of {span_days} days is shorter than one {granularity} window of {window_days} days"
    )]
    DegenerateSpan {
        granularity: Granularity,
        span_days: u32,
        window_days: u32,
    },
    #[error("analysis span must cover at least one day")]
    EmptySpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Granularity {
    Daily,
    Weekly,
    Monthly,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [
        Granularity::Daily,
        Granularity::Weekly,
        Granularity::Monthly,
    ];

    pub fn window_days(self) -> u32 {
        match self {
            Granularity::Daily => 1,
            Granularity::Weekly => 7,
            Granularity::Monthly => 30,
        }
    }

    pub fn window_secs(self) -> i64 {
        i64::from(self.window_days()) * SECONDS_PER_DAY
    }

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Daily => "daily",
            Granularity::Weekly => "weekly",
            Granularity::Monthly => "monthly",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The `length_days` days ending at `end_utc` (exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisSpan {
    end_utc: i64,
    length_days: u32,
}

impl AnalysisSpan {
    pub fn new(end_utc: i64, length_days: u32) -> Result<Self, SeriesError> {
        if length_days == 0 {
            return Err(SeriesError::EmptySpan);
        }
        Ok(Self {
            end_utc,
            length_days,
        })
    }

    pub fn end_utc(&self) -> i64 {
        self.end_utc
    }

    pub fn length_days(&self) -> u32 {
        self.length_days
    }

    pub fn start_utc(&self) -> i64 {
        self.end_utc - i64::from(self.length_days) * SECONDS_PER_DAY
    }

    pub fn range(&self) -> TimeRange {
        TimeRange::new(self.start_utc(), self.end_utc).expect("length_days >= 1")
    }
}

/// Commit counts per window, oldest bucket first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketSeries {
    granularity: Granularity,
    bucket_start_utc: Vec<i64>,
    counts: Vec<u64>,
    span: AnalysisSpan,
}

impl BucketSeries {
    /// Builds a series directly from counts whose newest bucket ends at
    /// `end_utc`. The span covers exactly the given buckets.
    pub fn from_counts(
        granularity: Granularity,
        end_utc: i64,
        counts: Vec<u64>,
    ) -> Result<Self, SeriesError> {
        let n = u32::try_from(counts.len()).map_err(|_| SeriesError::EmptySpan)?;
        let span = AnalysisSpan::new(end_utc, n * granularity.window_days())?;
        let origin = end_utc - i64::from(n) * granularity.window_secs();
        let bucket_start_utc = (0..i64::from(n))
            .map(|i| origin + i * granularity.window_secs())
            .collect();
        Ok(Self {
            granularity,
            bucket_start_utc,
            counts,
            span,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn bucket_start_utc(&self) -> &[i64] {
        &self.bucket_start_utc
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn span(&self) -> AnalysisSpan {
        self.span
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Start of the oldest retained bucket.
    pub fn covered_start_utc(&self) -> i64 {
        self.bucket_start_utc[0]
    }
}

/// Counts `records` into tumbling windows of `granularity` over `span`.
///
/// A leading partial window is dropped; records outside the retained
/// buckets are ignored.
pub fn bucketize(
    records: &[CommitRecord],
    granularity: Granularity,
    span: AnalysisSpan,
) -> Result<BucketSeries, SeriesError> {
    let n = span.length_days / granularity.window_days();
    if n == 0 {
        return Err(SeriesError::DegenerateSpan {
            granularity,
            span_days: span.length_days,
            window_days: granularity.window_days(),
        });
    }
    let window = granularity.window_secs();
    let origin = span.end_utc - i64::from(n) * window;
    let mut counts = vec![0u64; n as usize];
    for r in records {
        let ts = r.timestamp_utc();
        if ts >= origin && ts < span.end_utc {
            counts[((ts - origin) / window) as usize] += 1;
        }
    }
    Ok(BucketSeries {
        granularity,
        bucket_start_utc: (0..i64::from(n)).map(|i| origin + i * window).collect(),
        counts,
        span,
    })
}

/// Commits per day in each bucket: `count / window_days`.
pub fn frequency_series(series: &BucketSeries) -> Vec<f64> {
    let days = f64::from(series.granularity.window_days());
    series.counts.iter().map(|&c| c as f64 / days).collect()
}

/// Commits per 365.25-day year over the span.
pub fn annual_throughput(records: &[CommitRecord], span: AnalysisSpan) -> f64 {
    let range = span.range();
    let n = records
        .iter()
        .filter(|r| range.contains(r.timestamp_utc()))
        .count();
    annual_rate(n as u64, f64::from(span.length_days))
}

/// `commits × 365.25 / days`.
pub fn annual_rate(commits: u64, days: f64) -> f64 {
    commits as f64 * 365.25 / days
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DAY: i64 = SECONDS_PER_DAY;
    const DAY0: i64 = 1_600_041_600; // 2020-09-14T00:00:00Z

    fn at(ts: i64) -> CommitRecord {
        CommitRecord::new(
            "o/r",
            &format!("{:08x}", ts as u64 & 0xffff_ffff),
            ts,
            "dev",
            false,
        )
        .unwrap()
    }

    #[test]
    fn daily_hand_count() {
        let records = vec![
            at(DAY0 + 10 * 3600),
            at(DAY0 + 14 * 3600),
            at(DAY0 + 2 * DAY + 9 * 3600),
        ];
        let span = AnalysisSpan::new(DAY0 + 3 * DAY, 3).unwrap();
        let s = bucketize(&records, Granularity::Daily, span).unwrap();
        assert_eq!(s.counts(), &[2, 0, 1]);
        assert_eq!(s.bucket_start_utc(), &[DAY0, DAY0 + DAY, DAY0 + 2 * DAY]);
    }

    #[test]
    fn empty_monthly() {
        let span = AnalysisSpan::new(DAY0 + 30 * DAY, 30).unwrap();
        assert_eq!(
            bucketize(&[], Granularity::Monthly, span).unwrap().counts(),
            &[0]
        );
    }

    #[test]
    fn weekly_from_daily_commits() {
        let records: Vec<_> = (0..21).map(|d| at(DAY0 + d * DAY + 3600)).collect();
        let span = AnalysisSpan::new(DAY0 + 21 * DAY, 21).unwrap();
        assert_eq!(
            bucketize(&records, Granularity::Weekly, span)
                .unwrap()
                .counts(),
            &[7, 7, 7]
        );
    }

    #[test]
    fn partial_leading_window_dropped() {
        // 10 days -> one weekly bucket covering the last 7 days only.
        let records = vec![at(DAY0 + 3600), at(DAY0 + 5 * DAY)];
        let span = AnalysisSpan::new(DAY0 + 10 * DAY, 10).unwrap();
        let s = bucketize(&records, Granularity::Weekly, span).unwrap();
        assert_eq!(s.counts(), &[1]);
        assert_eq!(s.covered_start_utc(), DAY0 + 3 * DAY);
    }

    #[test]
    fn end_boundary_is_exclusive() {
        let span = AnalysisSpan::new(DAY0 + DAY, 1).unwrap();
        let s = bucketize(&[at(DAY0), at(DAY0 + DAY)], Granularity::Daily, span).unwrap();
        assert_eq!(s.counts(), &[1]);
    }

    #[test]
    fn span_shorter_than_window() {
        let span = AnalysisSpan::new(DAY0, 29).unwrap();
        assert!(matches!(
            bucketize(&[], Granularity::Monthly, span),
            Err(SeriesError::DegenerateSpan {
                window_days: 30,
                ..
            })
        ));
        assert_eq!(AnalysisSpan::new(DAY0, 0), Err(SeriesError::EmptySpan));
    }

    #[test]
    fn frequency_divides_by_window() {
        let weekly = BucketSeries::from_counts(Granularity::Weekly, DAY0, vec![7, 14]).unwrap();
        assert_eq!(frequency_series(&weekly), vec![1.0, 2.0]);
        let daily = BucketSeries::from_counts(Granularity::Daily, DAY0, vec![3]).unwrap();
        assert_eq!(frequency_series(&daily), vec![3.0]);
        let monthly = BucketSeries::from_counts(Granularity::Monthly, DAY0, vec![60]).unwrap();
        assert_eq!(frequency_series(&monthly), vec![2.0]);
    }

    #[test]
    fn annual_rate_examples() {
        assert_eq!(annual_rate(100, 730.5), 50.0);
        assert_eq!(annual_rate(0, 1826.0), 0.0);
        // 29,759 commits/yr × 1826.25 / 365.25 = 148,795 commits
        assert!((annual_rate(148_795, 1826.25) - 29_759.0).abs() < 1e-9);
    }

    #[test]
    fn annual_throughput_counts_only_span() {
        let span = AnalysisSpan::new(DAY0 + 730 * DAY, 730).unwrap();
        let records = vec![
            at(DAY0 - 1),
            at(DAY0),
            at(DAY0 + 100 * DAY),
            at(DAY0 + 730 * DAY),
        ];
        assert!((annual_throughput(&records, span) - 2.0 * 365.25 / 730.0).abs() < 1e-12);
    }

    fn arb_offsets(days: i64) -> impl Strategy<Value = Vec<i64>> {
        prop::collection::vec(-2 * DAY..(days + 2) * DAY, 0..300)
    }

    proptest! {
        #[test]
        fn conservation_and_permutation(offsets in arb_offsets(100), days in 30u32..100, seed in any::<u64>()) {
            let end = DAY0 + i64::from(days) * DAY;
            let span = AnalysisSpan::new(end, days).unwrap();
            let mut records: Vec<_> = offsets.iter().map(|o| at(DAY0 + o)).collect();
            for g in Granularity::ALL {
                let s = bucketize(&records, g, span).unwrap();
                let inside = records.iter().filter(|r| r.timestamp_utc() >= s.covered_start_utc() && r.timestamp_utc() < end).count();
                prop_assert_eq!(s.total(), inside as u64);
                for w in s.bucket_start_utc().windows(2) {
                    prop_assert_eq!(w[1] - w[0], g.window_secs());
                }
            }
            // deterministic shuffle
            let n = records.len();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                records.swap(i, (state >> 33) as usize % (i + 1));
            }
            let shuffled: Vec<_> = records.clone();
            let original: Vec<_> = offsets.iter().map(|o| at(DAY0 + o)).collect();
            for g in Granularity::ALL {
                prop_assert_eq!(bucketize(&shuffled, g, span).unwrap(), bucketize(&original, g, span).unwrap());
            }
        }

        #[test]
        fn frequency_scales_counts(counts in prop::collection::vec(0u64..1000, 1..50)) {
            for g in Granularity::ALL {
                let s = BucketSeries::from_counts(g, DAY0, counts.clone()).unwrap();
                let f = frequency_series(&s);
                for (c, v) in counts.iter().zip(&f) {
                    prop_assert_eq!(*v, *c as f64 / f64::from(g.window_days()));
                }
            }
        }
    }
}
