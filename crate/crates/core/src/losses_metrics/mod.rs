//! Training objectives and correlation metrics.

mod losses;
mod metrics;

pub use losses::{image2prompt_loss, regression_loss};
pub use metrics::{average_ranks, krcc, plcc, srcc, MetricSet, ScorePairSeries};
