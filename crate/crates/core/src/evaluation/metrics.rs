use serde::{Deserialize, Serialize};

use super::GroundTruthMatrix;

/// Recall@K for `K = 1..=values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub values: Vec<f64>,
    /// Queries with at least one positive (the denominator).
    pub evaluated_queries: usize,
}

impl RecallCurve {
    /// Recall at `k` (1-based).
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn k_max(&self) -> usize {
        self.values.len()
    }
}

/// Fraction of queries (among those with a positive) whose first `K`
/// ranked database indices contain a positive. Rankings shorter than `K`
/// contribute what they have.
pub fn recall_at_k(rankings: &[Vec<usize>], gt: &GroundTruthMatrix, k_max: usize) -> RecallCurve {
    let mut hits = vec![0usize; k_max];
    let mut evaluated = 0;
    for (i, ranking) in rankings.iter().enumerate() {
        if !gt.has_positive(i) {
            continue;
        }
        evaluated += 1;
        if let Some(rank) = ranking.iter().take(k_max).position(|&j| gt.get(j, i)) {
            hits[rank..].iter_mut().for_each(|h| *h += 1);
        }
    }
    let values = hits
        .iter()
        .map(|&h| if evaluated == 0 { 0.0 } else { h as f64 / evaluated as f64 })
        .collect();
    RecallCurve {
        values,
        evaluated_queries: evaluated,
    }
}

/// A query's single best match and its confidence (higher = more sure).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub query_index: usize,
    pub database_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Thresholds descending (tightest first).
    pub points: Vec<PrPoint>,
    /// Set when no query has a positive, so recall is undefined.
    pub undefined: bool,
}

/// Best-single-match precision-recall sweep.
///
/// Thresholds are the distinct scores, descending; at each, the predictions
/// are the best matches scoring at least the threshold. Only queries with a
/// positive take part. Queries missing from `best` make no prediction.
pub fn pr_curve(best: &[BestMatch], gt: &GroundTruthMatrix) -> PrCurve {
    let positives = gt.queries_with_positives();
    if positives == 0 {
        return PrCurve {
            points: Vec::new(),
            undefined: true,
        };
    }
    let mut preds: Vec<(f64, bool)> = best
        .iter()
        .filter(|b| gt.has_positive(b.query_index) && !b.score.is_nan())
        .map(|b| (b.score, gt.get(b.database_index, b.query_index)))
        .collect();
    preds.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    let mut idx = 0;
    while idx < preds.len() {
        let threshold = preds[idx].0;
        while idx < preds.len() && preds[idx].0 == threshold {
            tp += usize::from(preds[idx].1);
            n += 1;
            idx += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / n as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    PrCurve {
        points,
        undefined: false,
    }
}
