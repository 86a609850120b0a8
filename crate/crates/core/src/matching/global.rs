use crate::dataio::GlobalDescriptor;
use crate::raster::GrayRaster;

/// Side of the thumbnail the built-in global descriptor is computed from.
pub const GLOBAL_GRID: usize = 16;

/// Built-in global descriptor: a 16x16 box-averaged thumbnail, zero-meaned
/// and L2-normalized (256 values). Constant images map to the zero vector,
/// and any positive affine change of intensity leaves it unchanged.
pub fn extract_global(image_id: &str, img: &GrayRaster) -> GlobalDescriptor {
    let (w, h) = (img.width(), img.height());
    let bin = |i: usize, n: usize| {
        let start = (i * n / GLOBAL_GRID).min(n - 1);
        let end = ((i + 1) * n / GLOBAL_GRID).max(start + 1).min(n);
        start..end
    };
    let mut cells = Vec::with_capacity(GLOBAL_GRID * GLOBAL_GRID);
    for gy in 0..GLOBAL_GRID {
        let rows = bin(gy, h);
        for gx in 0..GLOBAL_GRID {
            let cols = bin(gx, w);
            let mut sum = 0f64;
            for r in rows.clone() {
                for c in cols.clone() {
                    sum += f64::from(img.get(c, r));
                }
            }
            cells.push(sum / (rows.len() * cols.len()) as f64);
        }
    }
    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    cells.iter_mut().for_each(|v| *v -= mean);
    let norm = cells.iter().map(|v| v * v).sum::<f64>().sqrt();
    // relative floor: rounding residue of a constant image is not signal
    let scale = mean.abs().max(1.0);
    let values = if norm <= 1e-9 * scale {
        vec![0.0; cells.len()]
    } else {
        cells.iter().map(|v| (v / norm) as f32).collect()
    };
    GlobalDescriptor {
        image_id: image_id.to_string(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::l2_distance;

    fn texture(w: usize, h: usize) -> GrayRaster {
        GrayRaster::from_fn(w, h, |c, r| {
            0.5 + 0.4 * ((c as f32 * 0.21).sin() * (r as f32 * 0.13).cos())
        })
    }

    #[test]
    fn constant_image_is_zero() {
        let d = extract_global("c", &GrayRaster::filled(100, 70, 0.3));
        assert_eq!(d.values.len(), 256);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let img = texture(97, 61);
        let a = extract_global("a", &img);
        let b = extract_global("b", &img);
        assert_eq!(l2_distance(&a.values, &b.values), 0.0);
        let n: f64 = a.values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invariant_to_affine_intensity() {
        let img = texture(120, 90);
        let base = extract_global("a", &img);
        for (gain, offset) in [(0.5f32, 0.0f32), (2.0, 0.1), (0.7, -0.2)] {
            let other = extract_global("b", &img.map(|v| gain * v + offset));
            let d = l2_distance(&base.values, &other.values);
            assert!(d < 1e-6, "gain {gain} offset {offset}: {d}");
        }
    }

    #[test]
    fn tiny_images_still_work() {
        let d = extract_global("t", &GrayRaster::from_fn(3, 2, |c, r| (c + r) as f32));
        assert_eq!(d.values.len(), 256);
        let n: f64 = d.values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}
