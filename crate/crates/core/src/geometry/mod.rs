//! Homography estimation, bidirectional reprojection error, and the
//! reprojection-error filter.
//!
//! Homographies map database pixel coordinates to query pixel coordinates,
//! `p_q ~ H p_d`.

mod homography;
mod ransac;

use nalgebra::Point2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::matching::{Correspondence, CorrespondenceSet};

pub use homography::{dlt, project, Homography, MIN_HOMOGENEOUS_W};
pub use ransac::{estimate_homography, HomographyEstimate, RansacConfig};

/// Default rejection threshold on the bidirectional reprojection error, px.
pub const DEFAULT_CHI: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationStatus {
    Accepted,
    RejectedErrorAboveThreshold,
    RejectedInsufficientMatches,
    RejectedDegenerate,
}

/// Why a pair could not produce a homography at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RegistrationFailure {
    #[error("fewer than 4 correspondences")]
    InsufficientMatches,
    #[error("every minimal sample was degenerate")]
    Degenerate,
}

impl From<RegistrationFailure> for RegistrationStatus {
    fn from(f: RegistrationFailure) -> Self {
        match f {
            RegistrationFailure::InsufficientMatches => RegistrationStatus::RejectedInsufficientMatches,
            RegistrationFailure::Degenerate => RegistrationStatus::RejectedDegenerate,
        }
    }
}

fn finite_or_null<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_some(x),
        _ => s.serialize_none(),
    }
}

fn null_as_infinite<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    Ok(Some(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY)))
}

/// Outcome of registering one query with its best database match.
///
/// Serialized as one JSON object per line. An infinite error (a point
/// mapped to infinity) is written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub query_id: String,
    pub database_id: String,
    pub homography: Option<Homography>,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_infinite", default)]
    pub reprojection_error_px: Option<f64>,
    /// Correspondences retained by the matcher.
    pub inlier_count: usize,
    /// Correspondences in the RANSAC consensus.
    pub consensus_count: usize,
    pub status: RegistrationStatus,
}

impl RegistrationResult {
    pub fn is_accepted(&self) -> bool {
        self.status == RegistrationStatus::Accepted
    }
}

fn rmse(sq_errors: impl Iterator<Item = f64>, n: usize) -> f64 {
    (sq_errors.sum::<f64>() / n as f64).sqrt()
}

/// Bidirectional reprojection error over `pairs`:
///
/// `e_r = (RMSE ||p_q - pi(H p_d)|| + RMSE ||pi(H^-1 p_q) - p_d||) / 2`.
///
/// Infinite when any point maps to infinity or `pairs` is empty.
pub fn reprojection_error_pairs(h: &Homography, pairs: &[Correspondence]) -> f64 {
    if pairs.is_empty() {
        return f64::INFINITY;
    }
    let fwd = h.matrix();
    let inv = h.inverse_matrix();
    let mut forward = Vec::with_capacity(pairs.len());
    let mut backward = Vec::with_capacity(pairs.len());
    for c in pairs {
        let (Some(q), Some(d)) = (project(fwd, &c.database), project(&inv, &c.query)) else {
            return f64::INFINITY;
        };
        forward.push((c.query - q).norm_squared());
        backward.push((d - c.database).norm_squared());
    }
    0.5 * (rmse(forward.into_iter(), pairs.len()) + rmse(backward.into_iter(), pairs.len()))
}

/// [`reprojection_error_pairs`] over every pair of the set.
pub fn reprojection_error(h: &Homography, c: &CorrespondenceSet) -> f64 {
    reprojection_error_pairs(h, &c.pairs)
}

/// Applies `e_r <= chi` to one result. Results without a homography keep
/// their rejection status.
pub fn apply_threshold(r: &mut RegistrationResult, chi: f64) {
    if !matches!(
        r.status,
        RegistrationStatus::Accepted | RegistrationStatus::RejectedErrorAboveThreshold
    ) {
        return;
    }
    let ok = r.homography.is_some() && r.reprojection_error_px.is_some_and(|e| e <= chi);
    r.status = if ok {
        RegistrationStatus::Accepted
    } else {
        RegistrationStatus::RejectedErrorAboveThreshold
    };
}

/// Keeps exactly the results with `e_r <= chi` (inclusive).
pub fn filter_by_threshold(results: Vec<RegistrationResult>, chi: f64) -> Vec<RegistrationResult> {
    assert!(chi > 0.0, "chi must be positive");
    results
        .into_iter()
        .filter_map(|mut r| {
            apply_threshold(&mut r, chi);
            r.is_accepted().then_some(r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub ransac: RansacConfig,
    pub chi: f64,
    /// Compute `e_r` on the RANSAC consensus only instead of all pairs.
    pub inlier_only_error: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            chi: DEFAULT_CHI,
            inlier_only_error: false,
        }
    }
}

/// Estimates `H`, measures `e_r` and applies the threshold for one pair.
/// The RANSAC stream is seeded from `(seed, query_id, database_id)`.
pub fn register_pair(c: &CorrespondenceSet, cfg: &RegistrationConfig, seed: u64) -> RegistrationResult {
    let pair_seed = crate::seed::derive_seed(seed, &[&c.query_image_id, &c.database_image_id]);
    let mut result = RegistrationResult {
        query_id: c.query_image_id.clone(),
        database_id: c.database_image_id.clone(),
        homography: None,
        reprojection_error_px: None,
        inlier_count: c.len(),
        consensus_count: 0,
        status: RegistrationStatus::RejectedInsufficientMatches,
    };
    match estimate_homography(c, &cfg.ransac, pair_seed) {
        Err(f) => result.status = f.into(),
        Ok(est) => {
            let e = if cfg.inlier_only_error {
                let subset: Vec<Correspondence> = c
                    .pairs
                    .iter()
                    .zip(&est.inliers)
                    .filter(|(_, &keep)| keep)
                    .map(|(p, _)| *p)
                    .collect();
                reprojection_error_pairs(&est.homography, &subset)
            } else {
                reprojection_error(&est.homography, c)
            };
            result.homography = Some(est.homography);
            result.reprojection_error_px = Some(e);
            result.consensus_count = est.consensus_count();
            result.status = RegistrationStatus::Accepted;
            apply_threshold(&mut result, cfg.chi);
        }
    }
    result
}

/// Convenience for tests and examples.
pub fn pairs_from(h: &Homography, database_points: &[Point2<f64>]) -> Vec<Correspondence> {
    database_points
        .iter()
        .map(|p| Correspondence {
            query: h.apply(p).expect("finite mapping"),
            database: *p,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    fn set(pairs: Vec<Correspondence>) -> CorrespondenceSet {
        CorrespondenceSet {
            query_image_id: "q".into(),
            database_image_id: "d".into(),
            pairs,
        }
    }

    fn grid() -> Vec<Point2<f64>> {
        (0..5)
            .flat_map(|i| (0..4).map(move |j| Point2::new(20.0 + 30.0 * f64::from(i), 15.0 + 25.0 * f64::from(j))))
            .collect()
    }

    #[test]
    fn identity_gives_zero() {
        let pairs: Vec<_> = grid().into_iter().map(|p| Correspondence { query: p, database: p }).collect();
        assert_eq!(reprojection_error(&Homography::identity(), &set(pairs)), 0.0);
    }

    #[test]
    fn single_offset_pair_hand_value() {
        let c = set(vec![Correspondence::new([13.0, 24.0], [10.0, 20.0])]);
        assert_eq!(reprojection_error(&Homography::identity(), &c), 5.0);
    }

    #[test]
    fn exact_pairs_give_zero_error() {
        let h = Homography::new(Matrix3::new(0.9, 0.1, 5.0, -0.05, 1.1, 3.0, 2e-4, 1e-4, 1.0)).unwrap();
        let c = set(pairs_from(&h, &grid()));
        assert!(reprojection_error(&h, &c) < 1e-6);
    }

    #[test]
    fn point_at_infinity_gives_infinite_error() {
        // w = 1 - x/100 vanishes at x = 100
        let h = Homography::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.01, 0.0, 1.0)).unwrap();
        let c = set(vec![Correspondence::new([1.0, 1.0], [100.0, 5.0])]);
        assert!(reprojection_error(&h, &c).is_infinite());
    }

    fn result_with(e: f64) -> RegistrationResult {
        RegistrationResult {
            query_id: "q".into(),
            database_id: "d".into(),
            homography: Some(Homography::identity()),
            reprojection_error_px: Some(e),
            inlier_count: 10,
            consensus_count: 10,
            status: RegistrationStatus::Accepted,
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let kept = filter_by_threshold(
            vec![result_with(2.0), result_with(10.0), result_with(10.01), result_with(f64::INFINITY)],
            DEFAULT_CHI,
        );
        let errs: Vec<f64> = kept.iter().map(|r| r.reprojection_error_px.unwrap()).collect();
        assert_eq!(errs, [2.0, 10.0]);
        assert!(filter_by_threshold(Vec::new(), DEFAULT_CHI).is_empty());

        let mut r = result_with(f64::NAN);
        apply_threshold(&mut r, DEFAULT_CHI);
        assert_eq!(r.status, RegistrationStatus::RejectedErrorAboveThreshold);
    }

    #[test]
    fn register_pair_statuses() {
        let cfg = RegistrationConfig::default();
        let three = set(vec![Correspondence::new([1.0, 1.0], [1.0, 1.0]); 3]);
        assert_eq!(register_pair(&three, &cfg, 42).status, RegistrationStatus::RejectedInsufficientMatches);

        let line: Vec<_> = (0..8)
            .map(|i| Correspondence::new([f64::from(i), 0.0], [f64::from(i), 0.0]))
            .collect();
        assert_eq!(register_pair(&set(line), &cfg, 42).status, RegistrationStatus::RejectedDegenerate);

        let h = Homography::similarity(1.05, 0.1, 4.0, -3.0);
        let ok = register_pair(&set(pairs_from(&h, &grid())), &cfg, 42);
        assert_eq!(ok.status, RegistrationStatus::Accepted);
        assert!(ok.reprojection_error_px.unwrap() < 1e-6);
        assert_eq!(ok.consensus_count, 20);
    }

    #[test]
    fn registration_json_round_trips() {
        let mut r = result_with(f64::INFINITY);
        r.status = RegistrationStatus::RejectedErrorAboveThreshold;
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"reprojection_error_px\":null"), "{s}");
        assert!(s.contains("rejected_error_above_threshold"));
        assert_eq!(serde_json::from_str::<RegistrationResult>(&s).unwrap(), r);
    }

    fn random_h() -> impl Strategy<Value = Homography> {
        (0.7f64..1.4, -0.5f64..0.5, -30f64..30.0, -30f64..30.0, -5e-4f64..5e-4, -5e-4f64..5e-4)
            .prop_filter_map("invertible", |(s, a, tx, ty, g, h)| {
                let m = Homography::similarity(s, a, tx, ty).matrix() + Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, g, h, 0.0);
                Homography::new(m)
            })
    }

    proptest! {
        #[test]
        fn error_is_symmetric_under_inversion(
            h in random_h(),
            pts in prop::collection::vec((0f64..200.0, 0f64..150.0, 0f64..200.0, 0f64..150.0), 1..20),
        ) {
            let c = set(pts.iter().map(|&(a, b, x, y)| Correspondence::new([a, b], [x, y])).collect());
            let e = reprojection_error(&h, &c);
            let e_swapped = reprojection_error(&h.inverse().unwrap(), &c.swapped());
            prop_assert!(e >= 0.0);
            prop_assert!((e - e_swapped).abs() <= 1e-9 * e.max(1.0), "{} vs {}", e, e_swapped);
        }
    }
}
