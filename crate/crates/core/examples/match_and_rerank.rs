//! Keypoint matching and inlier-count reranking of retrieval candidates.

use underloc::matching::{extract_features, extract_global, match_keypoints, rank_candidates, FeatureConfig, DEFAULT_RATIO};
use underloc::retrieval::{compute_similarity, top_k};
use underloc::synth::{generate_survey, SurveyParams};
use underloc::DescriptorSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let survey = generate_survey(&SurveyParams {
        n_views: 16,
        revisit_jitter_px: 8.0,
        ..SurveyParams::default()
    })?;
    let cfg = FeatureConfig::default();
    let (d_range, q_range) = (survey.database_range(), survey.query_range());
    let keypoints: Vec<_> = survey
        .views
        .iter()
        .map(|v| extract_features(&v.record.image_id, &v.image, &cfg))
        .collect();
    let global = |r: std::ops::Range<usize>| {
        DescriptorSet::new(survey.views[r].iter().map(|v| extract_global(&v.record.image_id, &v.image)).collect())
    };
    let s = compute_similarity(&global(q_range.clone())?, &global(d_range.clone())?)?;

    let qi = 5;
    let candidates = top_k(&s, qi, 6);
    let query_kp = &keypoints[q_range.start + qi];
    println!("query {} has {} keypoints", query_kp.image_id, query_kp.len());
    let counts: Vec<usize> = candidates
        .entries
        .iter()
        .map(|&(j, _)| match_keypoints(query_kp, &keypoints[d_range.start + j], DEFAULT_RATIO).map(|c| c.len()))
        .collect::<Result<_, _>>()?;
    for m in rank_candidates(&candidates, &counts) {
        println!(
            "  {:>8}  inliers {:>4}  global distance {:.3}  true overlap {:.2}",
            survey.views[m.database_index].record.image_id,
            m.inlier_count,
            m.global_distance,
            survey.overlap(q_range.start + qi, m.database_index),
        );
    }
    Ok(())
}
