//! Statistics engine: descriptive summaries, normality tests, rank
//! correlations and the per-cell depth/z analysis.

pub mod analysis;
pub mod describe;
pub mod normality;
pub mod rank;

use serde::{Deserialize, Serialize};

pub use analysis::{
    cell_table, correlation_report, depth_observations, significance_summary, subsample, trend_fit,
    write_cell_table, CellKey, CellStats, CellTable, CorrelationReport, DepthObservation,
    PairedSample, SignificanceSummary, SkippedCell, TrendFit, MODERATE_CORRELATION,
    SIGNIFICANCE_LEVELS,
};
pub use describe::{summarize, Histogram, SampleSummary};
pub use normality::{
    anderson_darling, dagostino_k2, normality_report, shapiro_wilk, shapiro_wilk_subsampled,
    AndersonDarling, NormalityReport, AD_CRITICAL_05, SHAPIRO_MAX_N,
};
pub use rank::{average_ranks, kendall_counts, kendall_tau, pearson, spearman, KendallCounts};

/// A test statistic with its p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}
