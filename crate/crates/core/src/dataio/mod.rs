//! Dataset model and interchange formats.
//!
//! Everything produced outside the engine (global descriptors, keypoints,
//! correspondences, segmentation masks) enters through the files defined
//! here. All binary formats are little-endian.

mod binary;
mod manifest;
mod mask;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use binary::{
    read_correspondences, read_descriptors, read_keypoints, write_correspondences,
    write_descriptors, write_keypoints, DESCRIPTOR_MAGIC, KEYPOINT_MAGIC, CORRESPONDENCE_MAGIC,
};
pub use manifest::{load_manifest, write_manifest, ManifestHeader, ManifestRecord};
pub use mask::{load_mask, load_mask_checked, write_mask, write_pgm, BinaryMask};

/// Largest frame the resize policy lets through.
pub const MAX_WIDTH: u32 = 640;
pub const MAX_HEIGHT: u32 = 480;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("consistency error in {record}: {message}")]
    Consistency { record: String, message: String },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn consistency(record: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::Consistency {
            record: record.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Query,
    Database,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateConvention {
    /// WGS84 latitude / longitude in degrees.
    Geodetic,
    /// Metric `x` / `y` in a dataset-local frame.
    Local,
}

/// Where an image was captured. `depth` is meters below the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeoPosition {
    Geodetic {
        latitude: f64,
        longitude: f64,
        depth: Option<f64>,
    },
    Local {
        x: f64,
        y: f64,
        depth: Option<f64>,
    },
}

impl GeoPosition {
    pub fn local(x: f64, y: f64) -> Self {
        GeoPosition::Local { x, y, depth: None }
    }

    pub fn geodetic(latitude: f64, longitude: f64) -> Self {
        GeoPosition::Geodetic {
            latitude,
            longitude,
            depth: None,
        }
    }

    pub fn convention(&self) -> CoordinateConvention {
        match self {
            GeoPosition::Geodetic { .. } => CoordinateConvention::Geodetic,
            GeoPosition::Local { .. } => CoordinateConvention::Local,
        }
    }

    pub fn depth(&self) -> Option<f64> {
        match *self {
            GeoPosition::Geodetic { depth, .. } | GeoPosition::Local { depth, .. } => depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub sequence_id: String,
    /// Seconds since the UTC epoch.
    pub timestamp: f64,
    pub position: GeoPosition,
    pub width_px: u32,
    pub height_px: u32,
    /// Resolved against the manifest directory on load.
    pub mask_path: Option<PathBuf>,
}

/// A validated dataset side. Records keep manifest order; descriptors and
/// keypoints, when declared, are reordered to match it.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub role: DatasetRole,
    pub localization_radius_m: f64,
    pub convention: CoordinateConvention,
    pub records: Vec<ImageRecord>,
    pub descriptor_file: Option<PathBuf>,
    pub keypoint_file: Option<PathBuf>,
    pub image_dir: Option<PathBuf>,
    pub descriptors: Option<DescriptorSet>,
    pub keypoints: Option<Vec<KeypointSet>>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positions(&self) -> Vec<GeoPosition> {
        self.records.iter().map(|r| r.position).collect()
    }

    pub fn index_of(&self, image_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.image_id == image_id)
    }

    /// Image file for a record when the manifest declares an `image_dir`:
    /// `<image_dir>/<image_id>.pgm`.
    pub fn image_path(&self, index: usize) -> Option<PathBuf> {
        self.image_dir
            .as_ref()
            .map(|dir| dir.join(format!("{}.pgm", self.records[index].image_id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub image_id: String,
    pub values: Vec<f32>,
}

/// Global descriptors of one dataset side, stored row-contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    ids: Vec<String>,
    values: Vec<f32>,
}

impl DescriptorSet {
    /// Builds a set, rejecting mixed dimensions and non-finite values.
    pub fn new(descriptors: Vec<GlobalDescriptor>) -> Result<Self, DataError> {
        let dim = descriptors.first().map_or(0, |d| d.values.len());
        let mut ids = Vec::with_capacity(descriptors.len());
        let mut values = Vec::with_capacity(descriptors.len() * dim);
        for d in descriptors {
            if d.values.len() != dim {
                return Err(DataError::consistency(
                    &d.image_id,
                    format!("descriptor dimension {} differs from {dim}", d.values.len()),
                ));
            }
            if d.values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::consistency(&d.image_id, "non-finite descriptor value"));
            }
            ids.push(d.image_id);
            values.extend_from_slice(&d.values);
        }
        Ok(Self { dim, ids, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> GlobalDescriptor {
        GlobalDescriptor {
            image_id: self.ids[i].clone(),
            values: self.row(i).to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Returns the descriptors reordered to `order`; every id must be present.
    pub fn reordered<'a>(
        &self,
        order: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, DataError> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut out = Vec::new();
        for id in order {
            let &i = index
                .get(id)
                .ok_or_else(|| DataError::consistency(id, "no global descriptor for image"))?;
            out.push(self.get(i));
        }
        if out.is_empty() {
            return Ok(Self {
                dim: self.dim,
                ids: Vec::new(),
                values: Vec::new(),
            });
        }
        Self::new(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptorKind {
    Float,
    Binary,
}

/// Local descriptors, one per keypoint. For binary descriptors `width` is
/// the number of packed bytes (8 bits each).
#[derive(Debug, Clone, PartialEq)]
pub enum Descriptors {
    Float { width: usize, data: Vec<f32> },
    Binary { width: usize, data: Vec<u8> },
}

impl Descriptors {
    pub fn empty(kind: DescriptorKind, width: usize) -> Self {
        match kind {
            DescriptorKind::Float => Descriptors::Float {
                width,
                data: Vec::new(),
            },
            DescriptorKind::Binary => Descriptors::Binary {
                width,
                data: Vec::new(),
            },
        }
    }

    pub fn kind(&self) -> DescriptorKind {
        match self {
            Descriptors::Float { .. } => DescriptorKind::Float,
            Descriptors::Binary { .. } => DescriptorKind::Binary,
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            Descriptors::Float { width, .. } | Descriptors::Binary { width, .. } => width,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Descriptors::Float { width, data } => data.len().checked_div(*width).unwrap_or(0),
            Descriptors::Binary { width, data } => data.len().checked_div(*width).unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keypoints of one image in pixel coordinates (pixel centers at `+0.5`).
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub image_id: String,
    pub points: Vec<[f32; 2]>,
    pub descriptors: Descriptors,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn validate(&self, width: u32, height: u32) -> Result<(), DataError> {
        if self.descriptors.width() > 0 && self.points.len() != self.descriptors.len() {
            return Err(DataError::consistency(
                &self.image_id,
                format!(
                    "{} keypoints but {} descriptors",
                    self.points.len(),
                    self.descriptors.len()
                ),
            ));
        }
        for (i, &[x, y]) in self.points.iter().enumerate() {
            let inside = x >= 0.0 && y >= 0.0 && x < width as f32 && y < height as f32;
            if !inside {
                return Err(DataError::consistency(
                    &self.image_id,
                    format!("keypoint {i} at ({x}, {y}) outside {width}x{height}"),
                ));
            }
        }
        Ok(())
    }
}

/// Fits `width x height` inside 640x480 keeping the aspect ratio.
///
/// Frames that already fit are returned unchanged. Otherwise the limiting
/// side is set exactly to its bound and the other side is scaled and
/// rounded half-up, never below one pixel.
pub fn resize_policy(width: u32, height: u32) -> (u32, u32) {
    if width <= MAX_WIDTH && height <= MAX_HEIGHT {
        return (width, height);
    }
    let sx = f64::from(MAX_WIDTH) / f64::from(width);
    let sy = f64::from(MAX_HEIGHT) / f64::from(height);
    let round = |v: f64| (v + 0.5).floor() as u32;
    if sx <= sy {
        let h = round(f64::from(height) * sx).clamp(1, MAX_HEIGHT);
        (MAX_WIDTH, h)
    } else {
        let w = round(f64::from(width) * sy).clamp(1, MAX_WIDTH);
        (w, MAX_HEIGHT)
    }
}
