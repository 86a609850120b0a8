//! Radius ground truth from geodetic positions and Recall@K for a ranking.

use underloc::evaluation::{build_ground_truth, recall_at_k};
use underloc::GeoPosition;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // database track heading east along 43 S, one image every 2 m
    let lat: f64 = -43.0;
    let m_per_deg_lon = 111_195.0 * lat.to_radians().cos();
    let database: Vec<GeoPosition> = (0..40)
        .map(|j| GeoPosition::geodetic(lat, 147.0 + 2.0 * j as f64 / m_per_deg_lon))
        .collect();
    // revisit offset by 0.7 m
    let queries: Vec<GeoPosition> = (0..10)
        .map(|i| GeoPosition::geodetic(lat, 147.0 + (8.0 * i as f64 + 0.7) / m_per_deg_lon))
        .collect();

    let gt = build_ground_truth(&queries, &database, 1.0, false)?;
    println!("queries with a positive within 1 m: {}/{}", gt.queries_with_positives(), gt.cols());

    // a noisy ranking: the right image lands at rank i % 4
    let rankings: Vec<Vec<usize>> = (0..10)
        .map(|i| {
            let truth = 4 * i;
            let mut r: Vec<usize> = (0..40).filter(|&j| j != truth).take(5).collect();
            r.insert(i % 4, truth);
            r
        })
        .collect();
    let curve = recall_at_k(&rankings, &gt, 5);
    for k in 1..=5 {
        println!("R@{k} = {:.2}", curve.at(k));
    }
    Ok(())
}
