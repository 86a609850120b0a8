//! Full pipeline on a rendered survey: export, retrieval, reranking,
//! registration, mask IoU and both baselines.
//!
//! `cargo run --release --example synth_survey_pipeline -- [views] [out_dir]`

use underloc::dataio::load_manifest;
use underloc::evaluation::{run_pipeline, BaselineKind, PipelineConfig};
use underloc::synth::{export_dataset, generate_survey, Perturbation, SurveyParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let views = args.next().map(|v| v.parse()).transpose()?.unwrap_or(64);
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("underloc_survey"), Into::into);

    let params = SurveyParams {
        n_views: views,
        revisit_jitter_px: 8.0,
        perturbation: Perturbation {
            brightness_gain: 0.8,
            additive_noise_sigma: 0.02,
            haze_strength: 0.1,
        },
        ..SurveyParams::default()
    };
    let survey = generate_survey(&params)?;
    let files = export_dataset(&survey, &out, Some(&Default::default()))?;
    println!("dataset written to {}", out.display());

    let query = load_manifest(&files.query_manifest)?;
    let database = load_manifest(&files.database_manifest)?;
    let cfg = PipelineConfig {
        baselines: vec![BaselineKind::Random, BaselineKind::Bruteforce],
        ..PipelineConfig::default()
    };
    let result = run_pipeline(&query, &database, None, &cfg)?;
    let metrics = result.metrics();

    println!("{:<13} {:>6} {:>6} {:>6}", "series", "R@1", "R@5", "R@10");
    for (name, curve) in &result.recall {
        println!("{name:<13} {:>6.3} {:>6.3} {:>6.3}", curve.at(1), curve.at(5), curve.at(10));
    }
    println!("registrations: {:?}", metrics.registrations);
    if let Some(iou) = metrics.mean_iou {
        println!("mean mask IoU over {} accepted pairs: {iou:.3}", metrics.iou_pairs);
    }
    for (name, c) in &result.counters {
        println!("{name}: {} local match invocations", c.local_match_invocations);
    }
    Ok(())
}
