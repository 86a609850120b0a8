//! Built-in Harris corners with normalized patch descriptors.
//!
//! A desk-scale local feature so the engine runs end-to-end without any
//! external model. Not rotation or scale invariant.

use serde::{Deserialize, Serialize};

use crate::dataio::{Descriptors, KeypointSet};
use crate::raster::GrayRaster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Harris sensitivity `k` in `det(M) - k tr(M)^2`.
    pub harris_k: f32,
    /// Half-size of the non-maximum suppression window, pixels.
    pub nms_radius: usize,
    pub max_keypoints: usize,
    /// Side of the square descriptor patch; corners closer than half of it
    /// to the border are dropped.
    pub patch_size: usize,
    /// Responses below this fraction of the strongest one are ignored.
    pub relative_threshold: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            harris_k: 0.04,
            nms_radius: 4,
            max_keypoints: 512,
            patch_size: 16,
            relative_threshold: 0.01,
        }
    }
}

impl FeatureConfig {
    pub fn descriptor_width(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

/// Harris response with Sobel gradients and a 3x3 box-summed structure
/// tensor. Border pixels (one-pixel ring of the gradient and the window)
/// get zero.
fn harris_response(img: &GrayRaster, k: f32) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let mut ixx = vec![0f32; w * h];
    let mut iyy = vec![0f32; w * h];
    let mut ixy = vec![0f32; w * h];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let p = |dc: isize, dr: isize| {
                img.get((c as isize + dc) as usize, (r as isize + dr) as usize)
            };
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1))
                / 8.0;
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1))
                / 8.0;
            let i = r * w + c;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let mut resp = vec![0f32; w * h];
    for r in 2..h.saturating_sub(2) {
        for c in 2..w.saturating_sub(2) {
            let (mut a, mut b, mut d) = (0f32, 0f32, 0f32);
            for rr in r - 1..=r + 1 {
                for cc in c - 1..=c + 1 {
                    let i = rr * w + cc;
                    a += ixx[i];
                    b += ixy[i];
                    d += iyy[i];
                }
            }
            let tr = a + d;
            resp[r * w + c] = a * d - b * b - k * tr * tr;
        }
    }
    resp
}

/// No neighbour within `radius` has a strictly larger response.
fn is_local_max(resp: &[f32], w: usize, h: usize, c: usize, r: usize, radius: usize) -> bool {
    let v = resp[r * w + c];
    let r0 = r.saturating_sub(radius);
    let r1 = (r + radius).min(h - 1);
    let c0 = c.saturating_sub(radius);
    let c1 = (c + radius).min(w - 1);
    (r0..=r1).all(|rr| (c0..=c1).all(|cc| resp[rr * w + cc] <= v))
}

/// Vertex offset of the parabola through three samples, clamped to half a
/// pixel.
fn parabolic_offset(left: f32, center: f32, right: f32) -> f32 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < f32::EPSILON {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

fn patch_descriptor(img: &GrayRaster, c: usize, r: usize, size: usize) -> Option<Vec<f32>> {
    let half = size / 2;
    let mut v = Vec::with_capacity(size * size);
    for rr in r - half..r - half + size {
        for cc in c - half..c - half + size {
            v.push(f64::from(img.get(cc, rr)));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    Some(v.into_iter().map(|x| (x / norm) as f32).collect())
}

/// Detects Harris corners and describes each with a zero-mean, unit-norm
/// intensity patch.
///
/// Keypoints are the strongest `max_keypoints` non-maximum-suppressed
/// responses, refined to subpixel precision, reported at pixel centers
/// (`c + 0.5`, `r + 0.5`) plus the refinement offset.
pub fn extract_features(image_id: &str, img: &GrayRaster, cfg: &FeatureConfig) -> KeypointSet {
    let (w, h) = (img.width(), img.height());
    let width = cfg.descriptor_width();
    let empty = KeypointSet {
        image_id: image_id.to_string(),
        points: Vec::new(),
        descriptors: Descriptors::Float {
            width,
            data: Vec::new(),
        },
    };
    let border = cfg.patch_size / 2;
    if w < 2 * border + 1 || h < 2 * border + 1 || w < 5 || h < 5 {
        return empty;
    }
    let resp = harris_response(img, cfg.harris_k);
    let max = resp.iter().copied().fold(0f32, f32::max);
    if max <= 1e-12 {
        return empty;
    }
    let threshold = max * cfg.relative_threshold;

    let lo = border.max(2);
    let mut corners: Vec<(f32, usize, usize)> = Vec::new();
    for r in lo..h - border {
        for c in lo..w - border {
            let v = resp[r * w + c];
            if v > threshold && is_local_max(&resp, w, h, c, r, cfg.nms_radius) {
                corners.push((v, c, r));
            }
        }
    }
    corners.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));

    // greedy pass resolves equal responses within the radius
    let rad = cfg.nms_radius;
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut points = Vec::new();
    let mut data = Vec::new();
    for (_, c, r) in corners {
        if points.len() == cfg.max_keypoints {
            break;
        }
        if taken.iter().any(|&(tc, tr)| tc.abs_diff(c) <= rad && tr.abs_diff(r) <= rad) {
            continue;
        }
        let Some(desc) = patch_descriptor(img, c, r, cfg.patch_size) else {
            continue;
        };
        taken.push((c, r));
        let at = |cc: usize, rr: usize| resp[rr * w + cc];
        let dx = parabolic_offset(at(c - 1, r), at(c, r), at(c + 1, r));
        let dy = parabolic_offset(at(c, r - 1), at(c, r), at(c, r + 1));
        points.push([c as f32 + 0.5 + dx, r as f32 + 0.5 + dy]);
        data.extend(desc);
    }
    KeypointSet {
        image_id: image_id.to_string(),
        points,
        descriptors: Descriptors::Float { width, data },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(size: usize, lo: usize, hi: usize) -> GrayRaster {
        GrayRaster::from_fn(size, size, |c, r| {
            if (lo..hi).contains(&c) && (lo..hi).contains(&r) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let kp = extract_features("flat", &GrayRaster::filled(64, 48, 0.4), &FeatureConfig::default());
        assert!(kp.is_empty());
        assert_eq!(kp.descriptors.len(), 0);
    }

    #[test]
    fn white_square_gives_its_four_corners() {
        // square occupies pixels [20, 44); its corners are at 20 and 44 in
        // continuous coordinates
        let kp = extract_features("sq", &square(64, 20, 44), &FeatureConfig::default());
        assert_eq!(kp.len(), 4, "{:?}", kp.points);
        for corner in [[20.0, 20.0], [44.0, 20.0], [20.0, 44.0], [44.0, 44.0]] {
            let hit = kp
                .points
                .iter()
                .any(|p| (p[0] - corner[0]).abs() <= 2.0 && (p[1] - corner[1]).abs() <= 2.0);
            assert!(hit, "no keypoint near {corner:?}: {:?}", kp.points);
        }
    }

    #[test]
    fn descriptors_are_unit_norm_and_points_in_bounds() {
        let img = GrayRaster::from_fn(96, 80, |c, r| {
            let (x, y) = (c as f32, r as f32);
            ((x * 0.37).sin() * (y * 0.23).cos() + ((x + y) * 0.11).sin()).abs()
        });
        let cfg = FeatureConfig::default();
        let kp = extract_features("tex", &img, &cfg);
        assert!(!kp.is_empty());
        let Descriptors::Float { width, data } = &kp.descriptors else {
            unreachable!()
        };
        assert_eq!(*width, 256);
        for d in data.chunks_exact(*width) {
            let n: f64 = d.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "norm {n}");
        }
        for p in &kp.points {
            assert!(p[0] >= 8.0 && p[0] < 96.0 - 7.0 && p[1] >= 8.0 && p[1] < 80.0 - 7.0);
        }
    }

    #[test]
    fn keypoint_budget_is_respected() {
        let img = GrayRaster::from_fn(128, 128, |c, r| if (c / 4 + r / 4) % 2 == 0 { 1.0 } else { 0.0 });
        let cfg = FeatureConfig {
            max_keypoints: 10,
            ..FeatureConfig::default()
        };
        assert_eq!(extract_features("cb", &img, &cfg).len(), 10);
    }
}
