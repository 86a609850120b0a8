use nalgebra::{Matrix3, Point2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::homography::{dlt, project, Homography};
use super::RegistrationFailure;
use crate::matching::CorrespondenceSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// A pair is consistent when both its forward and backward transfer
    /// errors are within this many pixels.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 3.0,
            confidence: 0.995,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyEstimate {
    pub homography: Homography,
    /// Consensus membership, parallel to the input pairs.
    pub inliers: Vec<bool>,
}

impl HomographyEstimate {
    pub fn consensus_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn twice_area(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// True when any three of the four points are (nearly) collinear.
fn degenerate_quad(p: &[Point2<f64>; 4]) -> bool {
    let extent = p
        .iter()
        .flat_map(|a| p.iter().map(move |b| (a - b).norm_squared()))
        .fold(0.0, f64::max);
    if extent <= 0.0 {
        return true;
    }
    let tol = 1e-6 * extent;
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| twice_area(&p[t[0]], &p[t[1]], &p[t[2]]).abs() <= tol)
}

/// Forward and backward transfer distances, or `None` at infinity.
fn transfer(fwd: &Matrix3<f64>, inv: &Matrix3<f64>, q: &Point2<f64>, d: &Point2<f64>) -> Option<(f64, f64)> {
    let qh = project(fwd, d)?;
    let dh = project(inv, q)?;
    Some(((q - qh).norm(), (d - dh).norm()))
}

fn consensus(h: &Homography, q: &[Point2<f64>], d: &[Point2<f64>], threshold: f64) -> Vec<bool> {
    let fwd = h.matrix();
    let inv = h.inverse_matrix();
    q.iter()
        .zip(d)
        .map(|(q, d)| transfer(fwd, &inv, q, d).is_some_and(|(f, b)| f <= threshold && b <= threshold))
        .collect()
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 {
        return 1;
    }
    if w4 <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Robust homography `p_q ~ H p_d` from a correspondence set.
///
/// Normalized DLT on random four-point samples inside RANSAC (adaptive
/// iteration count, capped), then a DLT refit on the best consensus. The
/// sampler is a ChaCha8 stream seeded with `seed`.
pub fn estimate_homography(
    c: &CorrespondenceSet,
    cfg: &RansacConfig,
    seed: u64,
) -> Result<HomographyEstimate, RegistrationFailure> {
    let n = c.pairs.len();
    if n < 4 {
        return Err(RegistrationFailure::InsufficientMatches);
    }
    let q: Vec<Point2<f64>> = c.pairs.iter().map(|p| p.query).collect();
    let d: Vec<Point2<f64>> = c.pairs.iter().map(|p| p.database).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<(Homography, Vec<bool>, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let pick = |v: &[Point2<f64>]| -> [Point2<f64>; 4] {
            [v[idx.index(0)], v[idx.index(1)], v[idx.index(2)], v[idx.index(3)]]
        };
        let (sq, sd) = (pick(&q), pick(&d));
        if degenerate_quad(&sq) || degenerate_quad(&sd) {
            continue;
        }
        let Some(h) = dlt(&sd, &sq) else { continue };
        let inl = consensus(&h, &q, &d, cfg.threshold_px);
        let count = inl.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            needed = required_iterations(count as f64 / n as f64, cfg.confidence, cfg.max_iterations);
            best = Some((h, inl, count));
        }
    }

    let (h, inliers, count) = best.ok_or(RegistrationFailure::Degenerate)?;
    if count < 4 {
        return Ok(HomographyEstimate {
            homography: h,
            inliers,
        });
    }
    let (cq, cd): (Vec<_>, Vec<_>) = q
        .iter()
        .zip(&d)
        .zip(&inliers)
        .filter(|(_, &keep)| keep)
        .map(|((a, b), _)| (*a, *b))
        .unzip();
    match dlt(&cd, &cq) {
        Some(refit) => {
            let refit_inliers = consensus(&refit, &q, &d, cfg.threshold_px);
            if refit_inliers.iter().filter(|&&b| b).count() >= count {
                return Ok(HomographyEstimate {
                    homography: refit,
                    inliers: refit_inliers,
                });
            }
            Ok(HomographyEstimate {
                homography: h,
                inliers,
            })
        }
        None => Ok(HomographyEstimate {
            homography: h,
            inliers,
        }),
    }
}
