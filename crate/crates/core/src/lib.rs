//! Commit-rhythm stability analytics.
//!
//! Commit histories are bucketed into daily, weekly and monthly tumbling
//! windows; each series is classified stable when its coefficient of
//! variation is at most 0.5 and scored on `[0, 1]` by a triangular
//! normalizer centred on a CV of 0.25. Per-repository results roll up into
//! cohort profiles, weekly→monthly delta statistics and domain summaries.
//!
//! Pipeline: [`ingest`] → [`series`] → [`stability`] → [`cohort`] → [`report`].

pub mod cli;
pub mod cohort;
pub mod ingest;
pub mod remote;
pub mod report;
pub mod series;
pub mod stability;

pub use cohort::{summarize, CohortSummary, DeltaStats, DomainRollup};
pub use ingest::{CommitRecord, FilterOptions, RepoMetadata, TimeRange};
pub use series::{bucketize, AnalysisSpan, BucketSeries, Granularity};
pub use stability::{
    assess_repo, GranularityAssessment, ProfileLabel, RepoAssessment, StabilityProfile,
};
