use serde::Serialize;

use super::EvalError;
use crate::dataio::{CoordinateConvention, GeoPosition};

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// `|D| x |Q|` "same place" labels. Row = database, column = query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthMatrix {
    rows: usize,
    cols: usize,
    /// Column-contiguous.
    labels: Vec<bool>,
    pub radius_m: f64,
}

impl GroundTruthMatrix {
    pub fn from_fn(rows: usize, cols: usize, radius_m: f64, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut labels = Vec::with_capacity(rows * cols);
        for i in 0..cols {
            for j in 0..rows {
                labels.push(f(j, i));
            }
        }
        Self {
            rows,
            cols,
            labels,
            radius_m,
        }
    }

    /// Database count.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Query count.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, j: usize, i: usize) -> bool {
        self.labels[i * self.rows + j]
    }

    pub fn set(&mut self, j: usize, i: usize, value: bool) {
        self.labels[i * self.rows + j] = value;
    }

    pub fn column(&self, i: usize) -> &[bool] {
        &self.labels[i * self.rows..(i + 1) * self.rows]
    }

    pub fn positives(&self, i: usize) -> usize {
        self.column(i).iter().filter(|&&b| b).count()
    }

    pub fn has_positive(&self, i: usize) -> bool {
        self.column(i).iter().any(|&b| b)
    }

    /// Number of queries with at least one positive.
    pub fn queries_with_positives(&self) -> usize {
        (0..self.cols).filter(|&i| self.has_positive(i)).count()
    }

    /// CSV with one row per database image and one column per query.
    pub fn to_csv(&self, database_ids: &[String], query_ids: &[String]) -> String {
        let mut out = String::from("database_id");
        for q in query_ids {
            out.push(',');
            out.push_str(q);
        }
        out.push('\n');
        for (j, d) in database_ids.iter().enumerate() {
            out.push_str(d);
            for i in 0..self.cols {
                out.push_str(if self.get(j, i) { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

/// Positions projected to a metric frame: `(east, north, depth)`.
fn project_positions(
    queries: &[GeoPosition],
    database: &[GeoPosition],
) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>), EvalError> {
    let all = queries.iter().chain(database);
    let mut conventions = all.clone().map(GeoPosition::convention);
    let Some(first) = conventions.next() else {
        return Ok((Vec::new(), Vec::new()));
    };
    if conventions.any(|c| c != first) {
        return Err(EvalError::MixedConventions);
    }
    let project: Box<dyn Fn(&GeoPosition) -> [f64; 3]> = match first {
        CoordinateConvention::Local => Box::new(|p| match *p {
            GeoPosition::Local { x, y, depth } => [x, y, depth.unwrap_or(0.0)],
            GeoPosition::Geodetic { .. } => unreachable!("conventions checked"),
        }),
        CoordinateConvention::Geodetic => {
            // equirectangular ENU about the centroid of both sides
            let n = (queries.len() + database.len()) as f64;
            let (mut lat0, mut lon0) = (0.0, 0.0);
            for p in all {
                if let GeoPosition::Geodetic {
                    latitude,
                    longitude,
                    ..
                } = *p
                {
                    lat0 += latitude / n;
                    lon0 += longitude / n;
                }
            }
            let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
            let cos0 = lat0.to_radians().cos();
            Box::new(move |p| match *p {
                GeoPosition::Geodetic {
                    latitude,
                    longitude,
                    depth,
                } => [
                    k * (longitude - lon0) * cos0,
                    k * (latitude - lat0),
                    depth.unwrap_or(0.0),
                ],
                GeoPosition::Local { .. } => unreachable!("conventions checked"),
            })
        }
    };
    Ok((
        queries.iter().map(&project).collect(),
        database.iter().map(&project).collect(),
    ))
}

/// Labels `(j, i)` true iff the distance between database `j` and query `i`
/// is strictly below `radius_m`. Horizontal distance unless `use_depth`.
pub fn build_ground_truth(
    queries: &[GeoPosition],
    database: &[GeoPosition],
    radius_m: f64,
    use_depth: bool,
) -> Result<GroundTruthMatrix, EvalError> {
    let (q, d) = project_positions(queries, database)?;
    Ok(GroundTruthMatrix::from_fn(d.len(), q.len(), radius_m, |j, i| {
        let dz = if use_depth { q[i][2] - d[j][2] } else { 0.0 };
        let dist = ((q[i][0] - d[j][0]).powi(2) + (q[i][1] - d[j][1]).powi(2) + dz * dz).sqrt();
        dist < radius_m
    }))
}
