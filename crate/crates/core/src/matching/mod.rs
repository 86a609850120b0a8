//! Local refinement: keypoint correspondences per candidate pair and
//! reranking of the candidate set by inlier count.
//!
//! An inlier is a correspondence the matcher keeps under its acceptance
//! criteria. For the built-in matcher that is a mutual nearest neighbour
//! that also passes the ratio test in both directions. Externally produced
//! correspondences (`ULC1` files) are taken as already filtered.

mod features;
mod global;
mod matcher;

use std::cmp::Ordering;

use nalgebra::Point2;

use crate::retrieval::CandidateSet;

pub use features::{extract_features, FeatureConfig};
pub use global::{extract_global, GLOBAL_GRID};
pub use matcher::{match_descriptors, match_keypoints, DEFAULT_RATIO};

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("descriptor mismatch: {0}")]
    DescriptorMismatch(String),
}

/// One point pair in pixel coordinates of the two images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub query: Point2<f64>,
    pub database: Point2<f64>,
}

impl Correspondence {
    pub fn new(query: [f64; 2], database: [f64; 2]) -> Self {
        Self {
            query: Point2::new(query[0], query[1]),
            database: Point2::new(database[0], database[1]),
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            query: self.database,
            database: self.query,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub query_image_id: String,
    pub database_image_id: String,
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same pairs with the two images' roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            query_image_id: self.database_image_id.clone(),
            database_image_id: self.query_image_id.clone(),
            pairs: self.pairs.iter().map(Correspondence::swapped).collect(),
        }
    }
}

/// Best candidate for a query after reranking by inlier count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankedMatch {
    pub query_index: usize,
    pub database_index: usize,
    pub inlier_count: usize,
    pub global_distance: f64,
}

fn rerank_order(a: &RerankedMatch, b: &RerankedMatch) -> Ordering {
    b.inlier_count
        .cmp(&a.inlier_count)
        .then(a.global_distance.total_cmp(&b.global_distance))
        .then(a.database_index.cmp(&b.database_index))
}

/// Orders all candidates by descending inlier count, then ascending global
/// distance, then ascending database index. `inlier_counts[n]` belongs to
/// `candidates.entries[n]`.
pub fn rank_candidates(candidates: &CandidateSet, inlier_counts: &[usize]) -> Vec<RerankedMatch> {
    assert_eq!(
        candidates.entries.len(),
        inlier_counts.len(),
        "one inlier count per candidate"
    );
    let mut ranked: Vec<RerankedMatch> = candidates
        .entries
        .iter()
        .zip(inlier_counts)
        .map(|(&(database_index, global_distance), &inlier_count)| RerankedMatch {
            query_index: candidates.query_index,
            database_index,
            inlier_count,
            global_distance,
        })
        .collect();
    ranked.sort_by(rerank_order);
    ranked
}

/// The candidate with the most inliers. A query whose candidates all have
/// zero inliers still gets a best match so that later stages can reject it.
pub fn rerank(candidates: &CandidateSet, inlier_counts: &[usize]) -> Option<RerankedMatch> {
    rank_candidates(candidates, inlier_counts).into_iter().next()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cands(dists: &[f64]) -> CandidateSet {
        CandidateSet {
            query_index: 0,
            entries: dists.iter().copied().enumerate().collect(),
        }
    }

    #[test]
    fn argmax_then_distance() {
        let c = CandidateSet {
            query_index: 3,
            entries: vec![(10, 0.5), (11, 0.4), (12, 0.3)],
        };
        let best = rerank(&c, &[3, 9, 9]).unwrap();
        assert_eq!(best.database_index, 12);
        assert_eq!(best.inlier_count, 9);
        assert_eq!(best.query_index, 3);
    }

    #[test]
    fn single_and_all_zero() {
        assert_eq!(rerank(&cands(&[0.7]), &[0]).unwrap().database_index, 0);
        assert_eq!(rerank(&cands(&[1.0, 1.0]), &[0, 0]).unwrap().database_index, 0);
        assert!(rerank(&cands(&[]), &[]).is_none());
    }

    proptest! {
        #[test]
        fn rerank_ignores_candidate_order(
            items in prop::collection::vec((0usize..5, 0u8..4), 1..10),
            rot in 0usize..10,
        ) {
            let entries: Vec<(usize, f64)> =
                items.iter().enumerate().map(|(j, &(_, d))| (j, f64::from(d))).collect();
            let counts: Vec<usize> = items.iter().map(|&(c, _)| c).collect();
            let base = rerank(&CandidateSet { query_index: 0, entries: entries.clone() }, &counts);

            let mut perm: Vec<usize> = (0..entries.len()).collect();
            perm.rotate_left(rot % entries.len());
            perm.reverse();
            let shuffled = CandidateSet {
                query_index: 0,
                entries: perm.iter().map(|&p| entries[p]).collect(),
            };
            let shuffled_counts: Vec<usize> = perm.iter().map(|&p| counts[p]).collect();
            prop_assert_eq!(rerank(&shuffled, &shuffled_counts), base);
        }
    }
}
