//! JSON-Lines manifests: one header object, then one object per image.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    read_descriptors, read_keypoints, CoordinateConvention, DataError, DatasetManifest,
    DatasetRole, GeoPosition, ImageRecord, KeypointSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub name: String,
    pub role: DatasetRole,
    pub localization_radius_m: f64,
    pub coordinates: CoordinateConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint_file: Option<String>,
    /// Directory holding `<image_id>.pgm` rasters for built-in extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_id: String,
    pub sequence_id: String,
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

impl ManifestRecord {
    fn position(&self, convention: CoordinateConvention) -> Result<GeoPosition, String> {
        if let Some(d) = self.depth {
            if !(d.is_finite() && d >= 0.0) {
                return Err(format!("depth {d} must be finite and >= 0"));
            }
        }
        match convention {
            CoordinateConvention::Geodetic => {
                if self.x.is_some() || self.y.is_some() {
                    return Err("x/y given in a geodetic dataset".into());
                }
                let (Some(lat), Some(lon)) = (self.lat, self.lon) else {
                    return Err("geodetic record needs lat and lon".into());
                };
                if !(-90.0..=90.0).contains(&lat) {
                    return Err(format!("latitude {lat} outside [-90, 90]"));
                }
                if !(-180.0..=180.0).contains(&lon) {
                    return Err(format!("longitude {lon} outside [-180, 180]"));
                }
                Ok(GeoPosition::Geodetic {
                    latitude: lat,
                    longitude: lon,
                    depth: self.depth,
                })
            }
            CoordinateConvention::Local => {
                if self.lat.is_some() || self.lon.is_some() {
                    return Err("lat/lon given in a local-frame dataset".into());
                }
                let (Some(x), Some(y)) = (self.x, self.y) else {
                    return Err("local record needs x and y".into());
                };
                if !(x.is_finite() && y.is_finite()) {
                    return Err("x/y must be finite".into());
                }
                Ok(GeoPosition::Local {
                    x,
                    y,
                    depth: self.depth,
                })
            }
        }
    }

    pub fn from_image_record(record: &ImageRecord, mask_path: Option<String>) -> Self {
        let (lat, lon, x, y) = match record.position {
            GeoPosition::Geodetic {
                latitude,
                longitude,
                ..
            } => (Some(latitude), Some(longitude), None, None),
            GeoPosition::Local { x, y, .. } => (None, None, Some(x), Some(y)),
        };
        Self {
            image_id: record.image_id.clone(),
            sequence_id: record.sequence_id.clone(),
            timestamp: record.timestamp,
            lat,
            lon,
            x,
            y,
            depth: record.position.depth(),
            width_px: record.width_px,
            height_px: record.height_px,
            mask_path,
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and fully validates a manifest.
///
/// When the header names a descriptor or keypoint file, it is loaded too;
/// every entry must resolve to a record and every record must be covered.
/// Both come back in manifest order.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file = path.display().to_string();

    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| DataError::parse(&file, "empty manifest"))?;
    let header: ManifestHeader = serde_json::from_str(header_line)
        .map_err(|e| DataError::parse(format!("{file}:1"), format!("header: {e}")))?;
    if !(header.localization_radius_m.is_finite() && header.localization_radius_m > 0.0) {
        return Err(DataError::consistency(
            "header",
            format!(
                "localization_radius_m must be > 0, got {}",
                header.localization_radius_m
            ),
        ));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines {
        let loc = format!("{file}:{}", lineno + 1);
        let raw: ManifestRecord =
            serde_json::from_str(line).map_err(|e| DataError::parse(&loc, e.to_string()))?;
        let id = raw.image_id.clone();
        if !seen.insert(id.clone()) {
            return Err(DataError::consistency(&id, format!("duplicate image_id ({loc})")));
        }
        if raw.width_px == 0 || raw.height_px == 0 {
            return Err(DataError::consistency(&id, "image dimensions must be >= 1"));
        }
        if !raw.timestamp.is_finite() {
            return Err(DataError::consistency(&id, "timestamp must be finite"));
        }
        let position = raw
            .position(header.coordinates)
            .map_err(|m| DataError::consistency(&id, m))?;
        let mask_path = raw.mask_path.as_deref().map(|p| resolve(&base, p));
        if let Some(mp) = &mask_path {
            let (w, h) = image::image_dimensions(mp).map_err(|e| {
                DataError::consistency(&id, format!("mask {}: {e}", mp.display()))
            })?;
            if (w, h) != (raw.width_px, raw.height_px) {
                return Err(DataError::consistency(
                    &id,
                    format!(
                        "mask is {w}x{h}, image is {}x{}",
                        raw.width_px, raw.height_px
                    ),
                ));
            }
        }
        records.push(ImageRecord {
            image_id: raw.image_id,
            sequence_id: raw.sequence_id,
            timestamp: raw.timestamp,
            position,
            width_px: raw.width_px,
            height_px: raw.height_px,
            mask_path,
        });
    }

    let descriptor_file = header.descriptor_file.as_deref().map(|p| resolve(&base, p));
    let keypoint_file = header.keypoint_file.as_deref().map(|p| resolve(&base, p));
    let image_dir = header.image_dir.as_deref().map(|p| resolve(&base, p));

    let descriptors = match &descriptor_file {
        Some(p) => {
            let set = read_descriptors(p)?;
            for id in set.ids() {
                if !seen.contains(id) {
                    return Err(DataError::consistency(
                        id,
                        format!("descriptor in {} has no manifest record", p.display()),
                    ));
                }
            }
            if set.ids().len() != set.ids().iter().collect::<HashSet<_>>().len() {
                return Err(DataError::consistency(
                    p.display().to_string(),
                    "duplicate image_id in descriptor file",
                ));
            }
            Some(set.reordered(records.iter().map(|r| r.image_id.as_str()))?)
        }
        None => None,
    };

    let keypoints = match &keypoint_file {
        Some(p) => Some(order_keypoints(read_keypoints(p)?, &records, p)?),
        None => None,
    };

    Ok(DatasetManifest {
        name: header.name,
        role: header.role,
        localization_radius_m: header.localization_radius_m,
        convention: header.coordinates,
        records,
        descriptor_file,
        keypoint_file,
        image_dir,
        descriptors,
        keypoints,
    })
}

fn order_keypoints(
    sets: Vec<KeypointSet>,
    records: &[ImageRecord],
    path: &Path,
) -> Result<Vec<KeypointSet>, DataError> {
    let by_id: HashMap<&str, &ImageRecord> =
        records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut slots: HashMap<String, KeypointSet> = HashMap::with_capacity(sets.len());
    for set in sets {
        let rec = by_id.get(set.image_id.as_str()).ok_or_else(|| {
            DataError::consistency(
                &set.image_id,
                format!("keypoints in {} have no manifest record", path.display()),
            )
        })?;
        set.validate(rec.width_px, rec.height_px)?;
        let id = set.image_id.clone();
        if slots.insert(id.clone(), set).is_some() {
            return Err(DataError::consistency(id, "duplicate keypoint record"));
        }
    }
    records
        .iter()
        .map(|r| {
            slots
                .remove(&r.image_id)
                .ok_or_else(|| DataError::consistency(&r.image_id, "no keypoints for image"))
        })
        .collect()
}

/// Writes a manifest as JSON-Lines.
pub fn write_manifest(
    path: &Path,
    header: &ManifestHeader,
    records: &[ManifestRecord],
) -> Result<(), DataError> {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{write_descriptors, DescriptorSet, GlobalDescriptor};

    fn header(descriptor_file: Option<&str>) -> ManifestHeader {
        ManifestHeader {
            name: "test".into(),
            role: DatasetRole::Database,
            localization_radius_m: 5.0,
            coordinates: CoordinateConvention::Local,
            descriptor_file: descriptor_file.map(Into::into),
            keypoint_file: None,
            image_dir: None,
        }
    }

    fn record(id: &str, x: f64) -> ManifestRecord {
        ManifestRecord {
            image_id: id.into(),
            sequence_id: "s".into(),
            timestamp: 1.0,
            lat: None,
            lon: None,
            x: Some(x),
            y: Some(0.0),
            depth: None,
            width_px: 64,
            height_px: 48,
            mask_path: None,
        }
    }

    #[test]
    fn loads_three_records_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = vec![record("c", 0.0), record("a", 1.0), record("b", 2.0)];
        write_manifest(&p, &header(None), &recs).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.localization_radius_m, 5.0);
        let ids: Vec<_> = m.records.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &header(None), &[record("a", 0.0), record("a", 1.0)]).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, DataError::Consistency { ref record, .. } if record == "a"));
    }

    #[test]
    fn mixed_conventions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut bad = record("geo", 0.0);
        bad.x = None;
        bad.y = None;
        bad.lat = Some(10.0);
        bad.lon = Some(10.0);
        write_manifest(&p, &header(None), &[record("a", 0.0), bad]).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, DataError::Consistency { ref record, .. } if record == "geo"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut text = serde_json::to_string(&header(None)).unwrap();
        text.push_str("\n{\"image_id\": \"a\", \"oops\n");
        fs::write(&p, text).unwrap();
        match load_manifest(&p).unwrap_err() {
            DataError::Parse { location, .. } => assert!(location.ends_with(":2"), "{location}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_radius_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut h = header(None);
        h.localization_radius_m = 0.0;
        write_manifest(&p, &h, &[record("a", 0.0)]).unwrap();
        assert!(matches!(load_manifest(&p), Err(DataError::Consistency { .. })));
    }

    #[test]
    fn descriptors_are_reordered_and_dangling_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = DescriptorSet::new(vec![
            GlobalDescriptor { image_id: "b".into(), values: vec![2.0, 0.0] },
            GlobalDescriptor { image_id: "a".into(), values: vec![1.0, 0.0] },
        ])
        .unwrap();
        write_descriptors(&dir.path().join("d.uld"), &d).unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &header(Some("d.uld")), &[record("a", 0.0), record("b", 1.0)]).unwrap();
        let m = load_manifest(&p).unwrap();
        let set = m.descriptors.unwrap();
        assert_eq!(set.ids(), ["a", "b"]);
        assert_eq!(set.row(1), &[2.0, 0.0]);

        write_manifest(&p, &header(Some("d.uld")), &[record("a", 0.0)]).unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, DataError::Consistency { ref record, .. } if record == "b"));
    }

    #[test]
    fn loading_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &header(None), &[record("x", 0.5), record("y", 1.5)]).unwrap();
        let a = load_manifest(&p).unwrap();
        let b = load_manifest(&p).unwrap();
        assert_eq!(a.records, b.records);
    }
}
