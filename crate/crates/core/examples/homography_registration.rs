//! Robust homography estimation, bidirectional reprojection error and the
//! acceptance threshold, on planted correspondences with outliers.

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use underloc::geometry::{pairs_from, register_pair, RegistrationConfig};
use underloc::matching::CorrespondenceSet;
use underloc::Homography;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = Homography::similarity(1.05, 0.2, 30.0, -12.0);
    let points: Vec<Point2<f64>> = (0..80)
        .map(|_| Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0)))
        .collect();
    let mut pairs = pairs_from(&truth, &points);
    for p in pairs.iter_mut().take(20) {
        p.query += Vector2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
    }
    let mut set = CorrespondenceSet {
        query_image_id: "query".into(),
        database_image_id: "reference".into(),
        pairs,
    };

    for inlier_only_error in [false, true] {
        let cfg = RegistrationConfig {
            inlier_only_error,
            ..RegistrationConfig::default()
        };
        let r = register_pair(&set, &cfg, 42);
        println!(
            "error over {}: consensus {}/{}, e_r = {:.3} px, {:?}",
            if inlier_only_error { "consensus" } else { "all pairs" },
            r.consensus_count,
            r.inlier_count,
            r.reprojection_error_px.unwrap_or(f64::INFINITY),
            r.status,
        );
    }

    set.pairs.truncate(3);
    println!("three pairs: {:?}", register_pair(&set, &RegistrationConfig::default(), 42).status);
}
