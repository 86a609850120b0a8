//! Mask warping into the database frame and pixel IoU. Writes an overlay
//! image to the system temp directory.

use underloc::maskops::{mask_iou, warp_mask, OverlayColors, WarpedOverlay};
use underloc::synth::{generate_survey, SurveyParams};
use underloc::{BinaryMask, Homography};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let disc = |cx: f64, cy: f64, r: f64| {
        BinaryMask::from_fn(64, 48, |c, y| (c as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r)
    };
    let (a, b) = (disc(30.0, 24.0, 12.0), disc(36.0, 24.0, 12.0));
    println!("two discs 6 px apart: IoU {:.3}", mask_iou(&a, &b)?);
    // the database disc seen from a query shifted by 6 px
    let warped = warp_mask(&a, &Homography::translation(-6.0, 0.0), 64, 48);
    println!("after warping by the shift: IoU {:.3}", mask_iou(&warped, &b)?);

    let survey = generate_survey(&SurveyParams {
        n_views: 9,
        revisit_jitter_px: 10.0,
        ..SurveyParams::default()
    })?;
    let (q, d) = (survey.query_range().start + 4, survey.database_range().start + 4);
    let overlay = WarpedOverlay::new(&survey.views[q].mask, survey.views[d].mask.clone(), &survey.homography(d, q));
    let path = std::env::temp_dir().join("underloc_overlay.ppm");
    overlay.write_ppm(&path, &OverlayColors::default())?;
    println!(
        "survey views {} / {}: overlap {:.2}, mask IoU {:.3}, overlay at {}",
        survey.views[q].record.image_id,
        survey.views[d].record.image_id,
        survey.overlap(q, d),
        overlay.iou,
        path.display()
    );
    Ok(())
}
