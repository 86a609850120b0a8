//! Global retrieval: L2 distances between global descriptors and per-query
//! top-K candidate selection.
//!
//! Distances are stored as-is ("most similar" means smallest distance).
//! Descriptors are never re-normalized here.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use rayon::prelude::*;

use crate::dataio::{DataError, DescriptorSet};

pub const MATRIX_MAGIC: &[u8; 4] = b"ULS1";

/// Dense matrices above this many entries are not materialized by
/// [`retrieve`]; columns are streamed instead.
pub const DEFAULT_DENSE_CAP: usize = 100_000 * 100_000;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("descriptor dimension mismatch: queries have {query}, database has {database}")]
    DimensionMismatch { query: usize, database: usize },
}

/// `|D| x |Q|` matrix of L2 distances. Row = database index, column = query
/// index. Stored column-contiguous so each query's distances are a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    columns: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Distance between database `j` and query `i`.
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.columns[i * self.rows + j]
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i * self.rows..(i + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        let mut columns = Vec::with_capacity(self.columns.len());
        for j in 0..self.rows {
            for i in 0..self.cols {
                columns.push(self.get(j, i));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            columns,
        }
    }

    /// Writes the `ULS1` dump: row-major float32.
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut out = Vec::with_capacity(12 + 4 * self.columns.len());
        out.write_all(MATRIX_MAGIC).unwrap();
        out.write_u32::<LittleEndian>(self.rows as u32).unwrap();
        out.write_u32::<LittleEndian>(self.cols as u32).unwrap();
        for j in 0..self.rows {
            for i in 0..self.cols {
                out.write_f32::<LittleEndian>(self.get(j, i) as f32).unwrap();
            }
        }
        fs::write(path, out).map_err(|e| DataError::io(path, e))
    }
}

/// Euclidean distance accumulated in f64.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_dims(queries: &DescriptorSet, database: &DescriptorSet) -> Result<(), RetrievalError> {
    if queries.is_empty() || database.is_empty() || queries.dim() == database.dim() {
        Ok(())
    } else {
        Err(RetrievalError::DimensionMismatch {
            query: queries.dim(),
            database: database.dim(),
        })
    }
}

fn distance_column(query: &[f32], database: &DescriptorSet) -> Vec<f64> {
    (0..database.len()).map(|j| l2_distance(database.row(j), query)).collect()
}

/// Computes the full distance matrix, one query column per task.
pub fn compute_similarity(
    queries: &DescriptorSet,
    database: &DescriptorSet,
) -> Result<SimilarityMatrix, RetrievalError> {
    check_dims(queries, database)?;
    let columns: Vec<Vec<f64>> = (0..queries.len())
        .into_par_iter()
        .map(|i| distance_column(queries.row(i), database))
        .collect();
    Ok(SimilarityMatrix {
        rows: database.len(),
        cols: queries.len(),
        columns: columns.concat(),
    })
}

/// The `min(K, |D|)` closest database images for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query_index: usize,
    /// `(database_index, distance)`, ascending by distance then index.
    pub entries: Vec<(usize, f64)>,
}

impl CandidateSet {
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn by_distance_then_index(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Selects the `k` smallest entries of a distance column, ties broken by
/// ascending database index. `exclude` drops indices from consideration.
pub fn top_k_column(
    column: &[f64],
    query_index: usize,
    k: usize,
    exclude: impl Fn(usize) -> bool,
) -> CandidateSet {
    assert!(k >= 1, "K must be at least 1");
    let mut all: Vec<(usize, f64)> = column
        .iter()
        .copied()
        .enumerate()
        .filter(|&(j, _)| !exclude(j))
        .collect();
    let k = k.min(all.len());
    if k > 0 && k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
        all.truncate(k);
    }
    all.sort_by(by_distance_then_index);
    CandidateSet {
        query_index,
        entries: all,
    }
}

pub fn top_k(s: &SimilarityMatrix, query_index: usize, k: usize) -> CandidateSet {
    top_k_column(s.column(query_index), query_index, k, |_| false)
}

/// Per-query candidate sets. Uses the dense matrix when `|D|·|Q| <= dense_cap`,
/// otherwise computes and discards one column at a time. Both routes give
/// identical results. `exclude(i, j)` removes database `j` from query `i`.
pub fn retrieve(
    queries: &DescriptorSet,
    database: &DescriptorSet,
    k: usize,
    dense_cap: usize,
    exclude: impl Fn(usize, usize) -> bool + Sync,
) -> Result<(Option<SimilarityMatrix>, Vec<CandidateSet>), RetrievalError> {
    check_dims(queries, database)?;
    if queries.len().saturating_mul(database.len()) <= dense_cap {
        let s = compute_similarity(queries, database)?;
        let sets = (0..s.cols())
            .into_par_iter()
            .map(|i| top_k_column(s.column(i), i, k, |j| exclude(i, j)))
            .collect();
        Ok((Some(s), sets))
    } else {
        let sets = (0..queries.len())
            .into_par_iter()
            .map(|i| {
                let col = distance_column(queries.row(i), database);
                top_k_column(&col, i, k, |j| exclude(i, j))
            })
            .collect();
        Ok((None, sets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::GlobalDescriptor;
    use proptest::prelude::*;

    fn set(rows: &[&[f32]]) -> DescriptorSet {
        DescriptorSet::new(
            rows.iter()
                .enumerate()
                .map(|(i, v)| GlobalDescriptor {
                    image_id: format!("i{i}"),
                    values: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn column_matrix(col: &[f64]) -> SimilarityMatrix {
        SimilarityMatrix {
            rows: col.len(),
            cols: 1,
            columns: col.to_vec(),
        }
    }

    #[test]
    fn three_four_five() {
        let s = compute_similarity(&set(&[&[0.0, 0.0]]), &set(&[&[3.0, 4.0]])).unwrap();
        assert_eq!(s.get(0, 0), 5.0);
        let s = compute_similarity(&set(&[&[0.25, 7.0]]), &set(&[&[0.25, 7.0]])).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn small_table_matches_hand_computed_distances() {
        let q = set(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let d = set(&[&[3.0, 4.0], &[1.0, 1.0], &[-2.0, 1.0]]);
        let s = compute_similarity(&q, &d).unwrap();
        // hand table: rows = database, cols = queries
        let expected = [
            [5.0, 13f64.sqrt()],
            [2f64.sqrt(), 0.0],
            [5f64.sqrt(), 3.0],
        ];
        for (j, row) in expected.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                assert!((s.get(j, i) - v).abs() < 1e-12, "({j},{i})");
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let err = compute_similarity(&set(&[&[0.0, 0.0]]), &set(&[&[0.0, 0.0, 0.0]]));
        assert!(matches!(err, Err(RetrievalError::DimensionMismatch { query: 2, database: 3 })));
    }

    #[test]
    fn top_k_examples() {
        let s = column_matrix(&[4.0, 1.0, 3.0]);
        assert_eq!(top_k(&s, 0, 2).indices(), [1, 2]);
        assert_eq!(top_k(&s, 0, 3).indices(), [1, 2, 0]);
        assert_eq!(top_k(&s, 0, 10).indices(), [1, 2, 0]);
        let flat = column_matrix(&[2.0, 2.0, 2.0]);
        assert_eq!(top_k(&flat, 0, 2).indices(), [0, 1]);
    }

    #[test]
    fn streaming_and_dense_routes_agree() {
        let q = set(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, -1.0]]);
        let d = set(&[&[3.0, 4.0], &[1.0, 1.0], &[-2.0, 1.0], &[0.5, 0.5]]);
        let (dense, a) = retrieve(&q, &d, 2, usize::MAX, |_, _| false).unwrap();
        let (none, b) = retrieve(&q, &d, 2, 0, |_, _| false).unwrap();
        assert!(dense.is_some() && none.is_none());
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_dump_is_row_major() {
        let q = set(&[&[0.0], &[1.0]]);
        let d = set(&[&[0.0], &[3.0], &[5.0]]);
        let s = compute_similarity(&q, &d).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        s.write(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], MATRIX_MAGIC);
        let floats: Vec<f32> = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(floats, [0.0, 1.0, 3.0, 2.0, 5.0, 4.0]);
    }

    fn descriptor_sets() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        (1usize..5).prop_flat_map(|dim| {
            (
                prop::collection::vec(prop::collection::vec(-10f32..10.0, dim), 1..6),
                prop::collection::vec(prop::collection::vec(-10f32..10.0, dim), 1..8),
            )
        })
    }

    fn owned(rows: &[Vec<f32>]) -> DescriptorSet {
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        set(&refs)
    }

    proptest! {
        #[test]
        fn distances_are_symmetric((a, b) in descriptor_sets()) {
            let (a, b) = (owned(&a), owned(&b));
            let ab = compute_similarity(&a, &b).unwrap();
            let ba = compute_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab.transpose(), ba);
            for i in 0..ab.cols() {
                for j in 0..ab.rows() {
                    let v = ab.get(j, i);
                    prop_assert!(v.is_finite() && v >= 0.0);
                    prop_assert_eq!(v == 0.0, a.row(i) == b.row(j));
                }
            }
        }

        #[test]
        fn top_k_is_nested_and_transform_invariant(
            col in prop::collection::vec(0f64..5.0, 1..30),
            k in 1usize..30,
        ) {
            let s = column_matrix(&col);
            let small = top_k(&s, 0, k);
            let big = top_k(&s, 0, k + 1);
            prop_assert_eq!(&big.entries[..small.len()], &small.entries[..]);
            prop_assert_eq!(small.len(), k.min(col.len()));
            for w in small.entries.windows(2) {
                prop_assert_eq!(by_distance_then_index(&w[0], &w[1]), Ordering::Less);
            }
            // brute-force oracle: full sort
            let mut sorted: Vec<(usize, f64)> = col.iter().copied().enumerate().collect();
            sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            prop_assert_eq!(&small.entries[..], &sorted[..small.len()]);
            let warped = column_matrix(&col.iter().map(|d| (d * 3.0).exp()).collect::<Vec<_>>());
            prop_assert_eq!(top_k(&warped, 0, k).indices(), small.indices());
        }
    }
}
