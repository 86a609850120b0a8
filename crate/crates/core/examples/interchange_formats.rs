//! Round trip of the binary descriptor, keypoint and correspondence files
//! and the JSON-Lines manifest that external feature extractors produce.

use underloc::dataio::{
    load_manifest, read_correspondences, read_descriptors, read_keypoints, write_correspondences, write_descriptors,
    write_keypoints, write_manifest, ManifestHeader, ManifestRecord,
};
use underloc::matching::{Correspondence, CorrespondenceSet};
use underloc::{CoordinateConvention, DatasetRole, DescriptorSet, Descriptors, GeoPosition, GlobalDescriptor, ImageRecord, KeypointSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("underloc_formats");
    std::fs::create_dir_all(&dir)?;
    let ids = ["img_a", "img_b"];

    let global = DescriptorSet::new(
        ids.iter()
            .enumerate()
            .map(|(n, id)| GlobalDescriptor {
                image_id: (*id).into(),
                values: (0..8).map(|k| ((n * 8 + k) as f32).sin()).collect(),
            })
            .collect(),
    )?;
    write_descriptors(&dir.join("global.uld"), &global)?;

    let keypoints: Vec<KeypointSet> = ids
        .iter()
        .map(|id| KeypointSet {
            image_id: (*id).into(),
            points: vec![[10.5, 20.5], [30.5, 5.5]],
            descriptors: Descriptors::Binary {
                width: 4,
                data: vec![0b1010_1010, 1, 2, 3, 255, 254, 253, 252],
            },
        })
        .collect();
    write_keypoints(&dir.join("local.ulk"), &keypoints)?;

    let corr = vec![CorrespondenceSet {
        query_image_id: "img_b".into(),
        database_image_id: "img_a".into(),
        pairs: vec![Correspondence::new([10.5, 20.5], [11.5, 20.5])],
    }];
    write_correspondences(&dir.join("pairs.ulc"), &corr)?;

    let header = ManifestHeader {
        name: "demo".into(),
        role: DatasetRole::Database,
        localization_radius_m: 5.0,
        coordinates: CoordinateConvention::Geodetic,
        descriptor_file: Some("global.uld".into()),
        keypoint_file: Some("local.ulk".into()),
        image_dir: None,
    };
    let records: Vec<ManifestRecord> = ids
        .iter()
        .enumerate()
        .map(|(n, id)| {
            let rec = ImageRecord {
                image_id: (*id).into(),
                sequence_id: "dive1".into(),
                timestamp: 1_700_000_000.0 + n as f64,
                position: GeoPosition::geodetic(-43.1, 147.3 + 1e-5 * n as f64),
                width_px: 64,
                height_px: 48,
                mask_path: None,
            };
            ManifestRecord::from_image_record(&rec, None)
        })
        .collect();
    write_manifest(&dir.join("database.jsonl"), &header, &records)?;

    let manifest = load_manifest(&dir.join("database.jsonl"))?;
    assert_eq!(read_descriptors(&dir.join("global.uld"))?, global);
    assert_eq!(read_keypoints(&dir.join("local.ulk"))?, keypoints);
    assert_eq!(read_correspondences(&dir.join("pairs.ulc"))?, corr);
    println!(
        "manifest {:?}: {} records, {}-d global descriptors, {} keypoint sets; files in {}",
        manifest.name,
        manifest.len(),
        manifest.descriptors.as_ref().map_or(0, DescriptorSet::dim),
        manifest.keypoints.as_ref().map_or(0, Vec::len),
        dir.display()
    );
    println!("{}", std::fs::read_to_string(dir.join("database.jsonl"))?);
    Ok(())
}
