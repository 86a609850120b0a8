//! Global-descriptor retrieval: L2 distance matrix and top-K candidates.
//!
//! Renders a small survey, computes the built-in thumbnail descriptors and
//! lists the nearest database views for a few queries.

use underloc::matching::extract_global;
use underloc::retrieval::{compute_similarity, top_k};
use underloc::synth::{generate_survey, SurveyParams};
use underloc::DescriptorSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let survey = generate_survey(&SurveyParams {
        n_views: 25,
        revisit_jitter_px: 6.0,
        ..SurveyParams::default()
    })?;
    let describe = |range: std::ops::Range<usize>| {
        DescriptorSet::new(
            survey.views[range]
                .iter()
                .map(|v| extract_global(&v.record.image_id, &v.image))
                .collect(),
        )
    };
    let database = describe(survey.database_range())?;
    let queries = describe(survey.query_range())?;

    let s = compute_similarity(&queries, &database)?;
    println!("similarity matrix: {} database x {} queries", s.rows(), s.cols());
    for i in [0, 7, 18] {
        let c = top_k(&s, i, 5);
        let listed: Vec<String> = c
            .entries
            .iter()
            .map(|&(j, d)| format!("{} ({d:.3})", database.ids()[j]))
            .collect();
        println!("{} -> {}", queries.ids()[i], listed.join(", "));
    }
    Ok(())
}
