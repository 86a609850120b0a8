use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder};

use super::DataError;

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask buffer size mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(c, r));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize) -> bool {
        self.bits[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, value: bool) {
        self.bits[r * self.width + c] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
        .expect("buffer size matches")
    }
}

/// Writes an 8-bit image as binary PGM (`P5`, maxval 255).
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let enc = PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .map_err(|e| DataError::parse(path.display().to_string(), e.to_string()))
}

/// Loads a `P5` mask with maxval 255; any nonzero pixel is set.
pub fn load_mask(path: &Path) -> Result<BinaryMask, DataError> {
    let loc = path.display().to_string();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let dec = PnmDecoder::new(BufReader::new(file))
        .map_err(|e| DataError::parse(&loc, format!("malformed header: {e}")))?;
    let header = dec.header();
    if header.subtype() != PnmSubtype::Graymap(SampleEncoding::Binary) {
        return Err(DataError::parse(&loc, "mask must be binary PGM (P5)"));
    }
    if header.maximal_sample() != 255 {
        return Err(DataError::parse(
            &loc,
            format!("mask maxval must be 255, got {}", header.maximal_sample()),
        ));
    }
    let img = DynamicImage::from_decoder(dec)
        .map_err(|e| DataError::parse(&loc, e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let bits = img.into_raw().into_iter().map(|v| v > 0).collect();
    Ok(BinaryMask::new(w as usize, h as usize, bits))
}

/// Loads a mask and checks it against the image size declared in a manifest.
pub fn load_mask_checked(path: &Path, width: u32, height: u32) -> Result<BinaryMask, DataError> {
    let m = load_mask(path)?;
    if m.dims() != (width as usize, height as usize) {
        return Err(DataError::consistency(
            path.display().to_string(),
            format!(
                "mask is {}x{}, expected {width}x{height}",
                m.width(),
                m.height()
            ),
        ));
    }
    Ok(m)
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<(), DataError> {
    write_pgm(&mask.to_gray8(), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round_trip(m: &BinaryMask) -> BinaryMask {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_mask(m, &p).unwrap();
        load_mask(&p).unwrap()
    }

    #[test]
    fn fixed_patterns_round_trip() {
        assert_eq!(round_trip(&BinaryMask::empty(4, 4)).popcount(), 0);
        assert_eq!(round_trip(&BinaryMask::from_fn(4, 4, |_, _| true)).popcount(), 16);
        let checker = BinaryMask::from_fn(4, 4, |c, r| (c + r) % 2 == 0);
        assert_eq!(round_trip(&checker), checker);
    }

    #[test]
    fn header_is_plain_p5() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_mask(&BinaryMask::empty(3, 2), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert!(bytes.ends_with(&[0u8; 6]));
        assert!(load_mask(&p).is_ok());
    }

    #[test]
    fn nonzero_pixels_read_as_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        std::fs::write(&p, b"P5\n3 1\n255\n\x00\x01\xff").unwrap();
        assert_eq!(load_mask(&p).unwrap().bits(), &[false, true, true]);
    }

    #[test]
    fn wrong_maxval_and_dims_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        std::fs::write(&p, b"P5\n2 1\n15\n\x00\x01").unwrap();
        assert!(matches!(load_mask(&p), Err(DataError::Parse { .. })));
        std::fs::write(&p, b"P6\n1 1\n255\n\x00\x01\x02").unwrap();
        assert!(matches!(load_mask(&p), Err(DataError::Parse { .. })));
        write_mask(&BinaryMask::empty(4, 4), &p).unwrap();
        assert!(matches!(
            load_mask_checked(&p, 5, 4),
            Err(DataError::Consistency { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn masks_round_trip_bit_exactly(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let m = BinaryMask::from_fn(w, h, |c, r| (seed >> ((c * 7 + r * 3) % 64)) & 1 == 1);
            prop_assert_eq!(round_trip(&m), m);
        }
    }
}
