use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Below this `|w|` a mapped point is treated as sent to infinity.
pub const MIN_HOMOGENEOUS_W: f64 = 1e-12;
const MIN_DET: f64 = 1e-12;

/// Invertible planar projective map, normalized so `h[2][2] = 1`.
///
/// Applied with perspective division: `p' = pi(H (x, y, 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Normalizes `m` by its bottom-right entry. Returns `None` when that
    /// entry vanishes, the matrix is not finite, or the normalized
    /// determinant is below `1e-12`.
    pub fn new(m: Matrix3<f64>) -> Option<Self> {
        let s = m[(2, 2)];
        if !s.is_finite() || s.abs() < 1e-15 {
            return None;
        }
        let m = m / s;
        if m.iter().any(|v| !v.is_finite()) || m.determinant().abs() <= MIN_DET {
            return None;
        }
        Some(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` and uniform `scale` about the origin, then
    /// translation.
    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(
            scale * c,
            -scale * s,
            tx,
            scale * s,
            scale * c,
            ty,
            0.0,
            0.0,
            1.0,
        ))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row-major entries.
    pub fn entries(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_entries(e: [f64; 9]) -> Option<Self> {
        Self::new(Matrix3::from_row_slice(&e))
    }

    /// Inverse matrix without re-normalization; fine for point mapping.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        self.0.try_inverse().expect("determinant checked at construction")
    }

    /// Normalized inverse, if its bottom-right entry does not vanish.
    pub fn inverse(&self) -> Option<Self> {
        Self::new(self.inverse_matrix())
    }

    /// `self` after `first`: maps `p` to `self(first(p))`.
    pub fn compose(&self, first: &Homography) -> Option<Self> {
        Self::new(self.0 * first.0)
    }

    pub fn apply(&self, p: &Point2<f64>) -> Option<Point2<f64>> {
        project(&self.0, p)
    }

    pub fn apply_inverse(&self, p: &Point2<f64>) -> Option<Point2<f64>> {
        project(&self.inverse_matrix(), p)
    }
}

/// `pi(m (x, y, 1))`, or `None` when `|w| < 1e-12`.
pub fn project(m: &Matrix3<f64>, p: &Point2<f64>) -> Option<Point2<f64>> {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < MIN_HOMOGENEOUS_W {
        return None;
    }
    Some(Point2::new(v.x / v.z, v.y / v.z))
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.entries().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let e = <[f64; 9]>::deserialize(d)?;
        Homography::from_entries(e)
            .ok_or_else(|| serde::de::Error::custom("homography is singular or not normalizable"))
    }
}

/// Hartley normalization: translate to the centroid and scale so the mean
/// distance to it is `sqrt(2)`.
fn normalizing_transform(points: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist.is_finite() && mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Least-squares DLT with isotropic normalization of both point sets.
/// Finds `H` with `dst ~ H src`. Needs at least four pairs.
pub fn dlt(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Option<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return None;
    }
    let ts = normalizing_transform(src)?;
    let td = normalizing_transform(dst)?;
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = project(&ts, s)?;
        let d = project(&td, d)?;
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::from_row_slice(&[h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]]);
    let td_inv = td.try_inverse()?;
    Homography::new(td_inv * hn * ts)
}
