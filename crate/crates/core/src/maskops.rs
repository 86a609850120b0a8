//! Mask merging, homography warping and pixel IoU.
//!
//! IoU is measured in the database frame. Query mask content that maps
//! outside the database image is dropped.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::dataio::{BinaryMask, DataError};
use crate::geometry::{project, Homography};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
}

/// Pixelwise OR of instance masks. An empty list yields an all-false mask
/// of the given size.
pub fn merge_masks(instances: &[BinaryMask], width: usize, height: usize) -> Result<BinaryMask, MaskError> {
    let mut out = BinaryMask::empty(width, height);
    for m in instances {
        if m.dims() != (width, height) {
            return Err(MaskError::DimensionMismatch(m.dims(), (width, height)));
        }
        for r in 0..height {
            for c in 0..width {
                if m.get(c, r) {
                    out.set(c, r, true);
                }
            }
        }
    }
    Ok(out)
}

/// Warps a query-frame mask into the database frame.
///
/// `h` maps database coordinates to query coordinates, so each target pixel
/// center `(x + 0.5, y + 0.5)` is pushed through `h` and the query mask is
/// read with nearest-neighbour lookup. Samples outside the query mask are
/// false.
pub fn warp_mask(m: &BinaryMask, h: &Homography, target_width: usize, target_height: usize) -> BinaryMask {
    let mat = h.matrix();
    BinaryMask::from_fn(target_width, target_height, |x, y| {
        let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
        match project(mat, &p) {
            Some(s) if s.x >= 0.0 && s.y >= 0.0 => {
                let (c, r) = (s.x.floor() as usize, s.y.floor() as usize);
                c < m.width() && r < m.height() && m.get(c, r)
            }
            _ => false,
        }
    })
}

/// `|a & b| / |a | b|`, zero when the union is empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    if a.dims() != b.dims() {
        return Err(MaskError::DimensionMismatch(a.dims(), b.dims()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Database mask, warped query mask and their IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedOverlay {
    pub database: BinaryMask,
    pub warped_query: BinaryMask,
    pub iou: f64,
}

impl WarpedOverlay {
    pub fn new(query: &BinaryMask, database: BinaryMask, h: &Homography) -> Self {
        let warped_query = warp_mask(query, h, database.width(), database.height());
        let iou = mask_iou(&database, &warped_query).expect("same dimensions by construction");
        Self {
            database,
            warped_query,
            iou,
        }
    }

    pub fn render(&self, colors: &OverlayColors) -> RgbImage {
        RgbImage::from_fn(self.database.width() as u32, self.database.height() as u32, |c, r| {
            let (c, r) = (c as usize, r as usize);
            match (self.database.get(c, r), self.warped_query.get(c, r)) {
                (true, true) => Rgb(colors.intersection),
                (true, false) => Rgb(colors.database_only),
                (false, true) => Rgb(colors.query_only),
                (false, false) => Rgb(colors.background),
            }
        })
    }

    /// Writes the overlay as binary PPM.
    pub fn write_ppm(&self, path: &Path, colors: &OverlayColors) -> Result<(), DataError> {
        self.render(colors)
            .save_with_format(path, image::ImageFormat::Pnm)
            .map_err(|e| DataError::parse(path.display().to_string(), e.to_string()))
    }
}

/// Overlay palette: blue database-only, orange query-only, green overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayColors {
    pub database_only: [u8; 3],
    pub query_only: [u8; 3],
    pub intersection: [u8; 3],
    pub background: [u8; 3],
}

impl Default for OverlayColors {
    fn default() -> Self {
        Self {
            database_only: [31, 119, 180],
            query_only: [255, 127, 14],
            intersection: [44, 160, 44],
            background: [0, 0, 0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, c0: usize, r0: usize, c1: usize, r1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |c, r| (c0..c1).contains(&c) && (r0..r1).contains(&r))
    }

    #[test]
    fn merge_examples() {
        let a = rect(10, 10, 0, 0, 5, 1); // 5 px
        let b = rect(10, 10, 0, 5, 7, 6); // 7 px
        assert_eq!(merge_masks(&[a.clone(), b], 10, 10).unwrap().popcount(), 12);
        assert_eq!(merge_masks(&[a.clone(), a.clone()], 10, 10).unwrap(), a);
        assert_eq!(merge_masks(&[], 4, 3).unwrap(), BinaryMask::empty(4, 3));
        assert!(merge_masks(&[a], 9, 10).is_err());
    }

    #[test]
    fn identity_warp_is_exact() {
        let m = BinaryMask::from_fn(23, 17, |c, r| (c * 3 + r * 5) % 7 < 3);
        assert_eq!(warp_mask(&m, &Homography::identity(), 23, 17), m);
    }

    #[test]
    fn translation_shifts_against_the_map() {
        // H maps database -> query with q = d + (10, 0): target pixel x reads
        // query pixel x + 10, so content moves 10 px to the left.
        let mut m = BinaryMask::empty(40, 5);
        m.set(25, 2, true);
        let out = warp_mask(&m, &Homography::translation(10.0, 0.0), 40, 5);
        assert_eq!(out.popcount(), 1);
        assert!(out.get(15, 2));

        let full = BinaryMask::from_fn(40, 5, |_, _| true);
        let shifted = warp_mask(&full, &Homography::translation(10.0, 0.0), 40, 5);
        for r in 0..5 {
            for c in 0..40 {
                assert_eq!(shifted.get(c, r), c < 30, "({c},{r})");
            }
        }
    }

    #[test]
    fn uniform_scale_matches_analytic_area() {
        // disk radius 20 centered in a 100x100 query frame; H(d) = 0.5 d + 25
        // maps the database frame so that the disk appears twice as large.
        let (w, h) = (100usize, 100usize);
        let disk = BinaryMask::from_fn(w, h, |c, r| {
            let (x, y) = (c as f64 + 0.5 - 50.0, r as f64 + 0.5 - 50.0);
            x * x + y * y <= 400.0
        });
        let hm = Homography::similarity(0.5, 0.0, 25.0, 25.0);
        let out = warp_mask(&disk, &hm, w, h);
        let analytic = std::f64::consts::PI * 40.0 * 40.0;
        let rel = (out.popcount() as f64 - analytic).abs() / analytic;
        assert!(rel < 0.05, "relative area error {rel}");
    }

    #[test]
    fn iou_examples() {
        let a = rect(20, 20, 0, 0, 10, 10);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &rect(20, 20, 10, 10, 20, 20)).unwrap(), 0.0);
        let small = rect(20, 20, 0, 0, 5, 5);
        assert_eq!(mask_iou(&small, &a).unwrap(), 0.25);
        let e = BinaryMask::empty(20, 20);
        assert_eq!(mask_iou(&e, &e).unwrap(), 0.0);
        assert!(mask_iou(&a, &BinaryMask::empty(5, 5)).is_err());
    }

    #[test]
    fn round_trip_warp_keeps_interior_masks() {
        let (w, h) = (120usize, 90usize);
        let m = BinaryMask::from_fn(w, h, |c, r| {
            let (x, y) = (c as f64 - 60.0, r as f64 - 45.0);
            (x * x) / 900.0 + (y * y) / 400.0 <= 1.0
        });
        let hm = Homography::similarity(1.1, 0.15, -4.0, 3.0);
        let there = warp_mask(&m, &hm.inverse().unwrap(), w, h);
        let back = warp_mask(&there, &hm, w, h);
        assert!(mask_iou(&m, &back).unwrap() >= 0.95);
    }

    #[test]
    fn overlay_colors() {
        let db = rect(4, 1, 0, 0, 2, 1);
        let q = rect(4, 1, 1, 0, 3, 1);
        let ov = WarpedOverlay::new(&q, db, &Homography::identity());
        assert!((ov.iou - 1.0 / 3.0).abs() < 1e-12);
        let img = ov.render(&OverlayColors::default());
        let c = OverlayColors::default();
        assert_eq!(img.get_pixel(0, 0).0, c.database_only);
        assert_eq!(img.get_pixel(1, 0).0, c.intersection);
        assert_eq!(img.get_pixel(2, 0).0, c.query_only);
        assert_eq!(img.get_pixel(3, 0).0, c.background);
    }

    fn masks() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            (
                prop::collection::vec(any::<bool>(), w * h),
                prop::collection::vec(any::<bool>(), w * h),
            )
                .prop_map(move |(a, b)| (BinaryMask::new(w, h, a), BinaryMask::new(w, h, b)))
        })
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded((a, b) in masks()) {
            let ab = mask_iou(&a, &b).unwrap();
            prop_assert_eq!(ab, mask_iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn merge_is_commutative_associative_idempotent((a, b) in masks(), flip in any::<bool>()) {
            let (w, h) = a.dims();
            let c = BinaryMask::from_fn(w, h, |x, y| a.get(x, y) ^ flip);
            let ab = merge_masks(&[a.clone(), b.clone()], w, h).unwrap();
            prop_assert_eq!(&ab, &merge_masks(&[b.clone(), a.clone()], w, h).unwrap());
            let left = merge_masks(&[ab.clone(), c.clone()], w, h).unwrap();
            let bc = merge_masks(&[b.clone(), c.clone()], w, h).unwrap();
            prop_assert_eq!(left, merge_masks(&[a.clone(), bc], w, h).unwrap());
            prop_assert_eq!(merge_masks(&[a.clone(), a.clone()], w, h).unwrap(), a);
        }
    }
}
