use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{AtomicCounters, CostCounters, GroundTruthMatrix, RecallCurve};
use crate::dataio::KeypointSet;
use crate::matching::{match_keypoints, CorrespondenceSet, MatchError};
use crate::seed::derive_seed;

/// Source of correspondences for a (query, database) index pair.
pub trait LocalMatcher: Sync {
    fn correspondences(&self, query: usize, database: usize) -> Result<CorrespondenceSet, MatchError>;
}

/// Built-in mutual nearest neighbour matching over loaded keypoints.
pub struct KeypointMatcher<'a> {
    pub query: &'a [KeypointSet],
    pub database: &'a [KeypointSet],
    pub ratio: f32,
}

impl LocalMatcher for KeypointMatcher<'_> {
    fn correspondences(&self, query: usize, database: usize) -> Result<CorrespondenceSet, MatchError> {
        match_keypoints(&self.query[query], &self.database[database], self.ratio)
    }
}

/// Correspondences read from a file. Pairs absent from the file have none.
pub struct PrecomputedMatcher {
    query_ids: Vec<String>,
    database_ids: Vec<String>,
    pairs: HashMap<(String, String), CorrespondenceSet>,
}

impl PrecomputedMatcher {
    pub fn new(query_ids: Vec<String>, database_ids: Vec<String>, sets: Vec<CorrespondenceSet>) -> Self {
        let pairs = sets
            .into_iter()
            .map(|s| ((s.query_image_id.clone(), s.database_image_id.clone()), s))
            .collect();
        Self {
            query_ids,
            database_ids,
            pairs,
        }
    }
}

impl LocalMatcher for PrecomputedMatcher {
    fn correspondences(&self, query: usize, database: usize) -> Result<CorrespondenceSet, MatchError> {
        let key = (self.query_ids[query].clone(), self.database_ids[database].clone());
        Ok(self.pairs.get(&key).cloned().unwrap_or_else(|| CorrespondenceSet {
            query_image_id: key.0,
            database_image_id: key.1,
            pairs: Vec::new(),
        }))
    }
}

/// Monte Carlo random guesser: every trial draws `min(K_max, |D|)`
/// distinct database images uniformly without replacement, and recall at
/// `K` counts trials whose first `K` draws contain a positive.
///
/// The draw is a uniformly shuffled index sample, so each prefix is itself
/// a uniform `K`-subset. Each query has its own seeded stream.
pub fn random_baseline(gt: &GroundTruthMatrix, k_max: usize, n_trials: usize, seed: u64) -> RecallCurve {
    let all: Vec<usize> = (0..gt.rows()).collect();
    random_baseline_over(gt, k_max, n_trials, seed, |_| all.clone())
}

/// [`random_baseline`] drawing from a per-query pool of database indices.
pub fn random_baseline_over(
    gt: &GroundTruthMatrix,
    k_max: usize,
    n_trials: usize,
    seed: u64,
    pool: impl Fn(usize) -> Vec<usize> + Sync,
) -> RecallCurve {
    assert!(n_trials >= 1, "at least one trial per query");
    assert!(k_max >= 1, "K must be at least 1");
    let hits = (0..gt.cols())
        .into_par_iter()
        .filter(|&i| gt.has_positive(i))
        .map(|i| {
            let pool = pool(i);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["random", &i.to_string()]));
            let mut hits = vec![0u64; k_max];
            let draw = k_max.min(pool.len());
            for _ in 0..n_trials {
                let sample = rand::seq::index::sample(&mut rng, pool.len(), draw);
                if let Some(rank) = sample.iter().position(|s| gt.get(pool[s], i)) {
                    hits[rank..].iter_mut().for_each(|h| *h += 1);
                }
            }
            hits
        })
        .reduce(
            || vec![0u64; k_max],
            |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        );
    let evaluated = gt.queries_with_positives();
    let denom = (evaluated * n_trials) as f64;
    RecallCurve {
        values: hits
            .iter()
            .map(|&h| if evaluated == 0 { 0.0 } else { h as f64 / denom })
            .collect(),
        evaluated_queries: evaluated,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    /// Per query, database indices by descending inlier count, ties by index.
    pub rankings: Vec<Vec<usize>>,
    /// Per query, inlier count for each ranked entry.
    pub inlier_counts: Vec<Vec<usize>>,
    pub counters: CostCounters,
}

/// Local matching of every query against every database image.
/// `exclude(i, j)` skips a pair without invoking the matcher.
pub fn brute_force_baseline(
    n_queries: usize,
    n_database: usize,
    matcher: &dyn LocalMatcher,
    exclude: impl Fn(usize, usize) -> bool + Sync,
) -> Result<BruteForceResult, MatchError> {
    let counters = AtomicCounters::default();
    let per_query: Vec<Vec<(usize, usize)>> = (0..n_queries)
        .into_par_iter()
        .map(|i| {
            let mut scored = Vec::with_capacity(n_database);
            for j in (0..n_database).filter(|&j| !exclude(i, j)) {
                counters.add_local(1);
                scored.push((j, matcher.correspondences(i, j)?.len()));
            }
            scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            Ok(scored)
        })
        .collect::<Result<_, MatchError>>()?;
    Ok(BruteForceResult {
        rankings: per_query.iter().map(|r| r.iter().map(|e| e.0).collect()).collect(),
        inlier_counts: per_query.iter().map(|r| r.iter().map(|e| e.1).collect()).collect(),
        counters: counters.snapshot(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Descriptors;

    fn hypergeometric_miss(d: usize, g: usize, k: usize) -> f64 {
        // C(d - g, k) / C(d, k) as a running product
        (0..k).map(|t| (d - g - t) as f64 / (d - t) as f64).product()
    }

    #[test]
    fn all_true_and_all_false() {
        let t = GroundTruthMatrix::from_fn(6, 4, 1.0, |_, _| true);
        assert!(random_baseline(&t, 3, 10, 1).values.iter().all(|&v| v == 1.0));
        let f = GroundTruthMatrix::from_fn(6, 4, 1.0, |_, _| false);
        let r = random_baseline(&f, 3, 10, 1);
        assert!(r.values.iter().all(|&v| v == 0.0));
        assert_eq!(r.evaluated_queries, 0);
    }

    #[test]
    fn matches_closed_form() {
        let (d, g, q, n) = (60usize, 3usize, 40usize, 200usize);
        let gt = GroundTruthMatrix::from_fn(d, q, 1.0, |j, i| (j + 7 * i) % d < g);
        let r = random_baseline(&gt, 10, n, 9);
        for k in 1..=10 {
            let p = 1.0 - hypergeometric_miss(d, g, k);
            let sigma = (p * (1.0 - p) / (q * n) as f64).sqrt();
            assert!((r.at(k) - p).abs() <= 3.0 * sigma, "K={k}: {} vs {p}", r.at(k));
        }
    }

    #[test]
    fn seeded_and_monotone() {
        let gt = GroundTruthMatrix::from_fn(30, 10, 1.0, |j, i| j == i);
        let a = random_baseline(&gt, 8, 20, 4);
        assert_eq!(a, random_baseline(&gt, 8, 20, 4));
        assert!(a.values.windows(2).all(|w| w[0] <= w[1]));
    }

    fn kp(id: &str, pts: &[[f32; 2]], rows: &[[f32; 2]]) -> KeypointSet {
        KeypointSet {
            image_id: id.into(),
            points: pts.to_vec(),
            descriptors: Descriptors::Float {
                width: 2,
                data: rows.concat(),
            },
        }
    }

    #[test]
    fn counts_every_pair_and_ranks_identity_first() {
        let pts = [[1.0, 1.0], [5.0, 2.0], [3.0, 7.0]];
        let base = [[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]];
        let q: Vec<KeypointSet> = (0..3).map(|i| kp(&format!("q{i}"), &pts, &base)).collect();
        let d = vec![
            kp("d0", &pts[..1], &[[0.0, -1.0]]),
            kp("d1", &pts, &base),
            kp("d2", &pts[..2], &[[-1.0, 0.0], [0.0, -1.0]]),
            kp("d3", &[], &[]),
        ];
        let m = KeypointMatcher {
            query: &q,
            database: &d,
            ratio: 0.8,
        };
        let bf = brute_force_baseline(3, 4, &m, |_, _| false).unwrap();
        assert_eq!(bf.counters.local_match_invocations, 12);
        assert!(bf.rankings.iter().all(|r| r[0] == 1));
        assert_eq!(bf.inlier_counts[0][0], 3);
    }

    #[test]
    fn precomputed_pairs_default_to_empty() {
        let m = PrecomputedMatcher::new(vec!["a".into()], vec!["b".into()], Vec::new());
        let c = m.correspondences(0, 0).unwrap();
        assert!(c.is_empty());
        assert_eq!((c.query_image_id.as_str(), c.database_image_id.as_str()), ("a", "b"));
    }
}
