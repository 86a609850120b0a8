use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Point2;

use super::{DataError, DescriptorKind, DescriptorSet, Descriptors, GlobalDescriptor, KeypointSet};
use crate::matching::{Correspondence, CorrespondenceSet};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"ULD1";
pub const KEYPOINT_MAGIC: &[u8; 4] = b"ULK1";
pub const CORRESPONDENCE_MAGIC: &[u8; 4] = b"ULC1";

type Le = LittleEndian;

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    file: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Self {
            cur: Cursor::new(bytes),
            file: path.display().to_string(),
        }
    }

    fn location(&self) -> String {
        format!("{} byte {}", self.file, self.cur.position())
    }

    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), DataError> {
        let mut buf = [0u8; 4];
        self.cur
            .read_exact(&mut buf)
            .map_err(|_| DataError::parse(self.location(), "file shorter than header"))?;
        if &buf != expected {
            return Err(DataError::parse(
                &self.file,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&buf),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let loc = self.location();
        self.cur
            .read_u32::<Le>()
            .map_err(|_| DataError::parse(loc, "unexpected end of file"))
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        let loc = self.location();
        self.cur
            .read_u8()
            .map_err(|_| DataError::parse(loc, "unexpected end of file"))
    }

    fn string(&mut self) -> Result<String, DataError> {
        let len = self.u32()? as usize;
        if len > self.remaining() {
            return Err(DataError::parse(self.location(), "id length past end of file"));
        }
        let mut buf = vec![0u8; len];
        self.cur.read_exact(&mut buf).expect("length checked");
        String::from_utf8(buf).map_err(|_| DataError::parse(self.location(), "id is not UTF-8"))
    }

    /// Reads `n` floats for the record `id`. A short payload means the
    /// record does not carry the declared number of values.
    fn f32s(&mut self, n: usize, id: &str, what: &str) -> Result<Vec<f32>, DataError> {
        if n.saturating_mul(4) > self.remaining() {
            return Err(DataError::consistency(
                id,
                format!(
                    "{what}: expected {n} float32 values, only {} remain in {}",
                    self.remaining() / 4,
                    self.file
                ),
            ));
        }
        let mut out = vec![0f32; n];
        self.cur.read_f32_into::<Le>(&mut out).expect("length checked");
        Ok(out)
    }

    fn bytes(&mut self, n: usize, id: &str, what: &str) -> Result<Vec<u8>, DataError> {
        if n > self.remaining() {
            return Err(DataError::consistency(
                id,
                format!("{what}: expected {n} bytes, only {} remain", self.remaining()),
            ));
        }
        let mut out = vec![0u8; n];
        self.cur.read_exact(&mut out).expect("length checked");
        Ok(out)
    }

    fn finish(&self, last_id: Option<&str>) -> Result<(), DataError> {
        if self.remaining() != 0 {
            return Err(DataError::consistency(
                last_id.unwrap_or(&self.file),
                format!("{} trailing bytes after the last record", self.remaining()),
            ));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| DataError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<Le>(s.len() as u32).unwrap();
    out.write_all(s.as_bytes()).unwrap();
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for &v in values {
        out.write_f32::<Le>(v).unwrap();
    }
}

/// Reads a `ULD1` global descriptor file.
pub fn read_descriptors(path: &Path) -> Result<DescriptorSet, DataError> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(DESCRIPTOR_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let image_id = r.string()?;
        let values = r.f32s(dim, &image_id, "descriptor")?;
        out.push(GlobalDescriptor { image_id, values });
    }
    r.finish(out.last().map(|d| d.image_id.as_str()))?;
    if out.is_empty() {
        return DescriptorSet::new(Vec::new());
    }
    DescriptorSet::new(out)
}

pub fn write_descriptors(path: &Path, set: &DescriptorSet) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(12 + set.len() * (8 + 4 * set.dim()));
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    out.write_u32::<Le>(set.len() as u32).unwrap();
    out.write_u32::<Le>(set.dim() as u32).unwrap();
    for (id, values) in set.iter() {
        put_string(&mut out, id);
        put_f32s(&mut out, values);
    }
    write_file(path, &out)
}

/// Reads a `ULK1` keypoint file. Binary descriptors are `width` packed bytes.
pub fn read_keypoints(path: &Path) -> Result<Vec<KeypointSet>, DataError> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(KEYPOINT_MAGIC)?;
    let count = r.u32()? as usize;
    let width = r.u32()? as usize;
    let kind = match r.u8()? {
        0 => DescriptorKind::Float,
        1 => DescriptorKind::Binary,
        other => {
            return Err(DataError::parse(
                r.location(),
                format!("unknown descriptor kind {other}"),
            ))
        }
    };
    let mut sets = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let image_id = r.string()?;
        let n = r.u32()? as usize;
        let xy = r.f32s(2 * n, &image_id, "keypoint coordinates")?;
        let points = xy.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let descriptors = match kind {
            DescriptorKind::Float => Descriptors::Float {
                width,
                data: r.f32s(n * width, &image_id, "keypoint descriptors")?,
            },
            DescriptorKind::Binary => Descriptors::Binary {
                width,
                data: r.bytes(n * width, &image_id, "keypoint descriptors")?,
            },
        };
        sets.push(KeypointSet {
            image_id,
            points,
            descriptors,
        });
    }
    r.finish(sets.last().map(|s| s.image_id.as_str()))?;
    Ok(sets)
}

/// Writes a `ULK1` file. All sets must share descriptor kind and width.
pub fn write_keypoints(path: &Path, sets: &[KeypointSet]) -> Result<(), DataError> {
    let (kind, width) = sets
        .first()
        .map_or((DescriptorKind::Float, 0), |s| (s.descriptors.kind(), s.descriptors.width()));
    let mut out = Vec::new();
    out.extend_from_slice(KEYPOINT_MAGIC);
    out.write_u32::<Le>(sets.len() as u32).unwrap();
    out.write_u32::<Le>(width as u32).unwrap();
    out.write_u8(match kind {
        DescriptorKind::Float => 0,
        DescriptorKind::Binary => 1,
    })
    .unwrap();
    for set in sets {
        if set.descriptors.kind() != kind || set.descriptors.width() != width {
            return Err(DataError::consistency(
                &set.image_id,
                "descriptor kind or width differs from the first keypoint set",
            ));
        }
        if set.descriptors.len() != set.points.len() {
            return Err(DataError::consistency(
                &set.image_id,
                "keypoint and descriptor counts differ",
            ));
        }
        put_string(&mut out, &set.image_id);
        out.write_u32::<Le>(set.points.len() as u32).unwrap();
        for p in &set.points {
            put_f32s(&mut out, p);
        }
        match &set.descriptors {
            Descriptors::Float { data, .. } => put_f32s(&mut out, data),
            Descriptors::Binary { data, .. } => out.extend_from_slice(data),
        }
    }
    write_file(path, &out)
}

/// Reads a `ULC1` correspondence file.
pub fn read_correspondences(path: &Path) -> Result<Vec<CorrespondenceSet>, DataError> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(CORRESPONDENCE_MAGIC)?;
    let count = r.u32()? as usize;
    let mut sets = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let query_image_id = r.string()?;
        let database_image_id = r.string()?;
        let n = r.u32()? as usize;
        let label = format!("{query_image_id}/{database_image_id}");
        let raw = r.f32s(4 * n, &label, "correspondences")?;
        let pairs = raw
            .chunks_exact(4)
            .map(|c| Correspondence {
                query: Point2::new(f64::from(c[0]), f64::from(c[1])),
                database: Point2::new(f64::from(c[2]), f64::from(c[3])),
            })
            .collect();
        sets.push(CorrespondenceSet {
            query_image_id,
            database_image_id,
            pairs,
        });
    }
    r.finish(None)?;
    Ok(sets)
}

/// Writes a `ULC1` file. Coordinates are stored as float32.
pub fn write_correspondences(path: &Path, sets: &[CorrespondenceSet]) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(CORRESPONDENCE_MAGIC);
    out.write_u32::<Le>(sets.len() as u32).unwrap();
    for set in sets {
        put_string(&mut out, &set.query_image_id);
        put_string(&mut out, &set.database_image_id);
        out.write_u32::<Le>(set.pairs.len() as u32).unwrap();
        for c in &set.pairs {
            put_f32s(
                &mut out,
                &[
                    c.query.x as f32,
                    c.query.y as f32,
                    c.database.x as f32,
                    c.database.y as f32,
                ],
            );
        }
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desc(id: &str, values: Vec<f32>) -> GlobalDescriptor {
        GlobalDescriptor {
            image_id: id.into(),
            values,
        }
    }

    #[test]
    fn short_record_is_a_consistency_error() {
        // header declares d=256 but the second record only carries 128 values
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.uld");
        let mut out = Vec::new();
        out.extend_from_slice(DESCRIPTOR_MAGIC);
        out.write_u32::<Le>(2).unwrap();
        out.write_u32::<Le>(256).unwrap();
        put_string(&mut out, "a");
        put_f32s(&mut out, &[0.5; 256]);
        put_string(&mut out, "b");
        put_f32s(&mut out, &[0.5; 128]);
        fs::write(&path, out).unwrap();
        let err = read_descriptors(&path).unwrap_err();
        assert!(matches!(err, DataError::Consistency { ref record, .. } if record == "b"), "{err}");
    }

    #[test]
    fn bad_magic_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.uld");
        fs::write(&path, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_descriptors(&path), Err(DataError::Parse { .. })));
    }

    #[test]
    fn empty_keypoint_record_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.ulk");
        let sets = vec![KeypointSet {
            image_id: "blank".into(),
            points: vec![],
            descriptors: Descriptors::empty(DescriptorKind::Float, 256),
        }];
        write_keypoints(&path, &sets).unwrap();
        assert_eq!(read_keypoints(&path).unwrap(), sets);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn descriptor_files_round_trip(
            rows in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 5), 0..6)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.uld");
            let set = DescriptorSet::new(
                rows.into_iter().enumerate().map(|(i, v)| desc(&format!("img{i}"), v)).collect(),
            ).unwrap();
            write_descriptors(&path, &set).unwrap();
            let bytes = fs::read(&path).unwrap();
            let back = read_descriptors(&path).unwrap();
            write_descriptors(&path, &back).unwrap();
            prop_assert_eq!(fs::read(&path).unwrap(), bytes);
            if !set.is_empty() {
                prop_assert_eq!(back, set);
            }
        }

        #[test]
        fn keypoint_and_correspondence_files_round_trip(
            pts in prop::collection::vec((0f32..100.0, 0f32..100.0, any::<[u8; 4]>()), 0..12)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let kp = KeypointSet {
                image_id: "ä-image".into(),
                points: pts.iter().map(|&(x, y, _)| [x, y]).collect(),
                descriptors: Descriptors::Binary {
                    width: 4,
                    data: pts.iter().flat_map(|p| p.2).collect(),
                },
            };
            let kpath = dir.path().join("k.ulk");
            write_keypoints(&kpath, std::slice::from_ref(&kp)).unwrap();
            prop_assert_eq!(read_keypoints(&kpath).unwrap(), vec![kp]);

            let cs = CorrespondenceSet {
                query_image_id: "q".into(),
                database_image_id: "d".into(),
                pairs: pts.iter().map(|&(x, y, _)| Correspondence {
                    query: Point2::new(f64::from(x), f64::from(y)),
                    database: Point2::new(f64::from(y), f64::from(x)),
                }).collect(),
            };
            let cpath = dir.path().join("c.ulc");
            write_correspondences(&cpath, std::slice::from_ref(&cs)).unwrap();
            prop_assert_eq!(read_correspondences(&cpath).unwrap(), vec![cs]);
        }
    }
}
