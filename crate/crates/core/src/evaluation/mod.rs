//! Ground truth, retrieval metrics, baselines and the end-to-end pipeline.

mod baselines;
mod ground_truth;
mod metrics;
mod pipeline;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use baselines::{
    brute_force_baseline, random_baseline, random_baseline_over, BruteForceResult, KeypointMatcher, LocalMatcher,
    PrecomputedMatcher,
};
pub use ground_truth::{build_ground_truth, GroundTruthMatrix, EARTH_RADIUS_M};
pub use metrics::{pr_curve, recall_at_k, BestMatch, PrCurve, PrPoint, RecallCurve};
pub use pipeline::{
    ground_truth_for, prepare_features, run_pipeline, BaselineKind, Metrics, PipelineConfig, PipelineOutput, QueryOutcome,
    SideFeatures,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("query and database positions use different coordinate conventions")]
    MixedConventions,
    #[error("{side} side has no {what}")]
    MissingFeatures { side: String, what: String },
    #[error("invalid {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
}

/// Work done by one pipeline variant. Wall times are informational and are
/// not serialized, so that metric files stay byte-stable across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostCounters {
    pub global_descriptor_comparisons: u64,
    pub local_match_invocations: u64,
    #[serde(skip)]
    pub wall_time_s: BTreeMap<String, f64>,
}

impl CostCounters {
    pub fn add_time(&mut self, stage: &str, seconds: f64) {
        *self.wall_time_s.entry(stage.to_owned()).or_default() += seconds;
    }
}

/// Lock-free match counting from parallel workers.
#[derive(Debug, Default)]
pub(crate) struct AtomicCounters {
    local: AtomicU64,
}

impl AtomicCounters {
    pub(crate) fn add_local(&self, n: u64) {
        self.local.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self) -> CostCounters {
        CostCounters {
            global_descriptor_comparisons: 0,
            local_match_invocations: self.local.load(Ordering::Relaxed),
            wall_time_s: BTreeMap::new(),
        }
    }
}
