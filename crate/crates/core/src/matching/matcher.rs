use nalgebra::Point2;

use super::{Correspondence, CorrespondenceSet, MatchError};
use crate::dataio::{Descriptors, KeypointSet};

pub const DEFAULT_RATIO: f32 = 0.8;

/// Squared descriptor distances, row-major `a.len() x b.len()`.
fn distance_table(a: &Descriptors, b: &Descriptors) -> Result<Vec<f32>, MatchError> {
    match (a, b) {
        (Descriptors::Float { width: wa, data: da }, Descriptors::Float { width: wb, data: db }) => {
            if wa != wb {
                return Err(MatchError::DescriptorMismatch(format!(
                    "float widths {wa} and {wb}"
                )));
            }
            let w = *wa;
            if w == 0 {
                return Ok(Vec::new());
            }
            let mut out = Vec::with_capacity(a.len() * b.len());
            for ra in da.chunks_exact(w) {
                for rb in db.chunks_exact(w) {
                    out.push(ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum());
                }
            }
            Ok(out)
        }
        (Descriptors::Binary { width: wa, data: da }, Descriptors::Binary { width: wb, data: db }) => {
            if wa != wb {
                return Err(MatchError::DescriptorMismatch(format!(
                    "binary widths {wa} and {wb}"
                )));
            }
            let w = *wa;
            if w == 0 {
                return Ok(Vec::new());
            }
            let mut out = Vec::with_capacity(a.len() * b.len());
            for ra in da.chunks_exact(w) {
                for rb in db.chunks_exact(w) {
                    let bits: u32 = ra.iter().zip(rb).map(|(x, y)| (x ^ y).count_ones()).sum();
                    let d = bits as f32;
                    out.push(d * d);
                }
            }
            Ok(out)
        }
        _ => Err(MatchError::DescriptorMismatch(
            "float descriptors cannot be matched against binary ones".into(),
        )),
    }
}

#[derive(Clone, Copy)]
struct Nearest {
    index: usize,
    best: f32,
    second: f32,
}

impl Nearest {
    const NONE: Nearest = Nearest {
        index: usize::MAX,
        best: f32::INFINITY,
        second: f32::INFINITY,
    };

    fn offer(&mut self, index: usize, d: f32) {
        if d < self.best {
            self.second = self.best;
            self.best = d;
            self.index = index;
        } else if d < self.second {
            self.second = d;
        }
    }

    /// Lowe's ratio test, `best < ratio * second` on plain distances.
    fn distinctive(&self, ratio: f64) -> bool {
        self.second.is_infinite()
            || f64::from(self.best).sqrt() < ratio * f64::from(self.second).sqrt()
    }
}

/// Mutual nearest neighbours that pass the ratio test from both sides.
///
/// Returns `(index_in_a, index_in_b)` sorted by `index_in_a`. Distances are
/// Euclidean for float descriptors and Hamming for binary ones.
pub fn match_descriptors(
    a: &Descriptors,
    b: &Descriptors,
    ratio: f32,
) -> Result<Vec<(usize, usize)>, MatchError> {
    let table = distance_table(a, b)?;
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return Ok(Vec::new());
    }
    let mut from_a = vec![Nearest::NONE; na];
    let mut from_b = vec![Nearest::NONE; nb];
    for i in 0..na {
        let row = &table[i * nb..(i + 1) * nb];
        for (j, &d) in row.iter().enumerate() {
            from_a[i].offer(j, d);
            from_b[j].offer(i, d);
        }
    }
    let ratio = f64::from(ratio);
    Ok((0..na)
        .filter_map(|i| {
            let fa = from_a[i];
            let j = fa.index;
            let fb = from_b[j];
            (fb.index == i && fa.distinctive(ratio) && fb.distinctive(ratio)).then_some((i, j))
        })
        .collect())
}

/// Matches two keypoint sets; the result is one-to-one by construction.
pub fn match_keypoints(
    query: &KeypointSet,
    database: &KeypointSet,
    ratio: f32,
) -> Result<CorrespondenceSet, MatchError> {
    let pairs = match_descriptors(&query.descriptors, &database.descriptors, ratio)?;
    let point = |p: [f32; 2]| Point2::new(f64::from(p[0]), f64::from(p[1]));
    Ok(CorrespondenceSet {
        query_image_id: query.image_id.clone(),
        database_image_id: database.image_id.clone(),
        pairs: pairs
            .into_iter()
            .map(|(i, j)| Correspondence {
                query: point(query.points[i]),
                database: point(database.points[j]),
            })
            .collect(),
    })
}
