//! Seeded synthetic seafloor surveys with exactly known geometry.
//!
//! A procedural world (value noise plus elliptical organisms) is viewed
//! along lawnmower or transect trajectories. Every view is a similarity
//! transform of the world plane, so the homography between any two views
//! is known exactly, and the organisms double as ground-truth masks.

mod export;
mod survey;
mod world;

pub use export::{export_dataset, ExportedDataset, TrueHomography};
pub use survey::{generate_survey, Pattern, Perturbation, SurveyParams, SyntheticSurvey, SyntheticView, ViewPose};
pub use world::{Bounds, Organism, World};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid survey parameters: {0}")]
    InvalidParameters(String),
    #[error("view {view} falls outside the world bounds")]
    OutsideWorld { view: usize },
}
