use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SyntheticSurvey;
use crate::dataio::{
    write_descriptors, write_keypoints, write_manifest, write_mask, CoordinateConvention, DataError, DatasetRole,
    DescriptorSet, ManifestHeader, ManifestRecord,
};
use crate::geometry::Homography;
use crate::matching::{extract_features, extract_global, FeatureConfig};
use crate::raster::GrayRaster;

/// Known geometry between a revisit view and a reference view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueHomography {
    pub query_id: String,
    pub database_id: String,
    /// `p_q = H p_d`.
    pub homography: Homography,
    /// Fraction of the query view seen by the database view.
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedDataset {
    pub query_manifest: PathBuf,
    pub database_manifest: PathBuf,
    pub homographies: PathBuf,
}

fn mkdir(path: &Path) -> Result<(), DataError> {
    fs::create_dir_all(path).map_err(|e| DataError::io(path, e))
}

impl SyntheticSurvey {
    /// Every (query, database) pair with nonzero overlap.
    pub fn true_homographies(&self) -> Vec<TrueHomography> {
        let d = self.database_range();
        self.query_range()
            .into_par_iter()
            .flat_map_iter(|q| {
                d.clone().filter_map(move |j| {
                    let overlap = self.overlap(q, j);
                    (overlap > 0.0).then(|| TrueHomography {
                        query_id: self.views[q].record.image_id.clone(),
                        database_id: self.views[j].record.image_id.clone(),
                        homography: self.homography(j, q),
                        overlap,
                    })
                })
            })
            .collect()
    }
}

/// Writes the survey as a dataset: two manifests, PGM images and masks,
/// the true-homography sidecar and, when `features` is given, built-in
/// global descriptors and keypoints computed from the written 8-bit images.
///
/// Layout under `dir`: `database.jsonl`, `query.jsonl`, `images/`,
/// `masks/`, `features/`, `true_homographies.json`, `survey.json`.
pub fn export_dataset(
    survey: &SyntheticSurvey,
    dir: &Path,
    features: Option<&FeatureConfig>,
) -> Result<ExportedDataset, crate::Error> {
    for sub in ["images", "masks", "features"] {
        mkdir(&dir.join(sub))?;
    }
    survey.views.par_iter().try_for_each(|v| -> Result<(), DataError> {
        let id = &v.record.image_id;
        v.image.save_pgm(&dir.join("images").join(format!("{id}.pgm")))?;
        write_mask(&v.mask, &dir.join("masks").join(format!("{id}.pgm")))
    })?;

    let radius = survey.params.radius();
    let sides = [
        ("database", DatasetRole::Database, survey.database_range()),
        ("query", DatasetRole::Query, survey.query_range()),
    ];
    let mut manifests = Vec::new();
    for (name, role, range) in sides {
        let views = &survey.views[range];
        let (descriptor_file, keypoint_file) = match features {
            Some(cfg) => {
                let extracted: Vec<_> = views
                    .par_iter()
                    .map(|v| {
                        let img = GrayRaster::from_gray8(&v.image.to_gray8());
                        let id = &v.record.image_id;
                        (extract_global(id, &img), extract_features(id, &img, cfg))
                    })
                    .collect();
                let (g, k): (Vec<_>, Vec<_>) = extracted.into_iter().unzip();
                let (uld, ulk) = (format!("features/{name}.uld"), format!("features/{name}.ulk"));
                write_descriptors(&dir.join(&uld), &DescriptorSet::new(g)?)?;
                write_keypoints(&dir.join(&ulk), &k)?;
                (Some(uld), Some(ulk))
            }
            None => (None, None),
        };
        let header = ManifestHeader {
            name: format!("synthetic-{name}"),
            role,
            localization_radius_m: radius,
            coordinates: CoordinateConvention::Local,
            descriptor_file,
            keypoint_file,
            image_dir: Some("images".into()),
        };
        let records: Vec<ManifestRecord> = views
            .iter()
            .map(|v| ManifestRecord::from_image_record(&v.record, Some(format!("masks/{}.pgm", v.record.image_id))))
            .collect();
        let path = dir.join(format!("{name}.jsonl"));
        write_manifest(&path, &header, &records)?;
        manifests.push(path);
    }

    let homographies = dir.join("true_homographies.json");
    let json = serde_json::to_string_pretty(&survey.true_homographies())?;
    fs::write(&homographies, json).map_err(|e| DataError::io(&homographies, e))?;
    let params = dir.join("survey.json");
    fs::write(&params, serde_json::to_string_pretty(&survey.params)?).map_err(|e| DataError::io(&params, e))?;

    let query_manifest = manifests.pop().expect("two sides");
    let database_manifest = manifests.pop().expect("two sides");
    Ok(ExportedDataset {
        query_manifest,
        database_manifest,
        homographies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::load_manifest;
    use crate::synth::{generate_survey, SurveyParams};

    #[test]
    fn exported_dataset_loads_back() {
        let s = generate_survey(&SurveyParams {
            n_views: 4,
            ..SurveyParams::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = export_dataset(&s, dir.path(), Some(&FeatureConfig::default())).unwrap();
        let db = load_manifest(&out.database_manifest).unwrap();
        let q = load_manifest(&out.query_manifest).unwrap();
        assert_eq!((db.len(), q.len()), (4, 4));
        assert_eq!(db.descriptors.as_ref().unwrap().len(), 4);
        assert!(q.keypoints.as_ref().unwrap().iter().all(|k| !k.is_empty()));
        let loaded = GrayRaster::load(&db.image_path(0).unwrap()).unwrap();
        assert_eq!(loaded, GrayRaster::from_gray8(&s.views[0].image.to_gray8()));
        let th: Vec<TrueHomography> = serde_json::from_str(&fs::read_to_string(out.homographies).unwrap()).unwrap();
        let same = th.iter().find(|t| t.query_id == "p1_0000" && t.database_id == "p0_0000").unwrap();
        assert_eq!(same.homography, Homography::identity());
    }
}
