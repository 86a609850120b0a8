//! Hierarchical place recognition and image registration for sequential
//! survey imagery.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`retrieval`]: global descriptors are compared with the L2 norm and the
//!    `K` nearest database images are kept for every query.
//! 2. [`matching`]: keypoint correspondences are computed for each candidate
//!    and the candidates are reranked by inlier count.
//! 3. [`geometry`]: a homography is fitted to the best pair and the pair is
//!    kept only when its bidirectional reprojection RMSE is within `chi`.
//! 4. [`maskops`]: segmentation masks are warped into the database frame and
//!    compared with pixel IoU.
//!
//! [`evaluation`] builds radius-based ground truth and computes Recall@K,
//! best-match precision-recall curves and the random / brute-force
//! baselines. [`synth`] renders seeded surveys with exactly known geometry,
//! and [`dataio`] holds the on-disk interchange formats.

pub mod cli;
pub mod dataio;
pub mod evaluation;
pub mod geometry;
pub mod maskops;
pub mod matching;
pub mod raster;
pub mod retrieval;
pub mod synth;

mod seed;

pub use dataio::{
    BinaryMask, CoordinateConvention, DataError, DatasetManifest, DatasetRole, DescriptorSet,
    Descriptors, GeoPosition, GlobalDescriptor, ImageRecord, KeypointSet,
};
pub use evaluation::{
    CostCounters, GroundTruthMatrix, PipelineConfig, PipelineOutput, PrCurve, RecallCurve,
};
pub use geometry::{Homography, RegistrationResult, RegistrationStatus};
pub use matching::{CorrespondenceSet, RerankedMatch};
pub use raster::GrayRaster;
pub use retrieval::{CandidateSet, SimilarityMatrix};

/// Crate-level error used by the pipeline and the command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Retrieval(#[from] retrieval::RetrievalError),
    #[error(transparent)]
    Matching(#[from] matching::MatchError),
    #[error(transparent)]
    Mask(#[from] maskops::MaskError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvalError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
