use super::IngestError;
use crate::model::FRAME;

/// A raw grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(height * width, pixels.len());
        Self { height, width, pixels }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// A 518×518 slice with every pixel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSlice {
    pixels: Vec<f64>,
}

impl PreparedSlice {
    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self, IngestError> {
        if pixels.len() != FRAME * FRAME {
            return Err(IngestError::Format(format!("expected {} pixels, got {}", FRAME * FRAME, pixels.len())));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(IngestError::Format("pixel outside [0, 1]".into()));
        }
        Ok(Self { pixels })
    }

    pub fn side(&self) -> usize {
        FRAME
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * FRAME + x]
    }

    pub fn into_raw(self) -> RawImage {
        RawImage::new(FRAME, FRAME, self.pixels)
    }
}

/// Bilinear resize with the half-pixel-centre convention: output pixel `i`
/// samples source coordinate `(i + 0.5)·in/out − 0.5`, clamped to the
/// image, without antialiasing.
pub fn bilinear_resize(img: &RawImage, out_h: usize, out_w: usize) -> RawImage {
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let taps = |i: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| taps(x, sx, img.width)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = taps(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
            let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    RawImage::new(out_h, out_w, out)
}

/// Normalised values are snapped to multiples of 2⁻⁴⁰ so that preparing an
/// already prepared slice, at any positive scale, reproduces it exactly.
const LEVELS: f64 = (1u64 << 40) as f64;

/// Resize to 518×518 and min-max normalise to `[0, 1]`.
///
/// Non-finite pixels are replaced by the smallest finite value before
/// resizing. A constant image maps to all zeros.
pub fn prepare_slice(raw: &RawImage) -> Result<PreparedSlice, IngestError> {
    if raw.height == 0 || raw.width == 0 {
        return Err(IngestError::EmptyImage);
    }
    let floor = raw
        .pixels
        .iter()
        .copied()
        .filter(|p| p.is_finite())
        .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.min(p))))
        .ok_or(IngestError::EmptyImage)?;
    let cleaned;
    let src = if raw.pixels.iter().all(|p| p.is_finite()) {
        raw
    } else {
        cleaned =
            RawImage { pixels: raw.pixels.iter().map(|&p| if p.is_finite() { p } else { floor }).collect(), ..*raw };
        &cleaned
    };
    let resized = bilinear_resize(src, FRAME, FRAME);
    let (lo, hi) =
        resized.pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let pixels = if hi > lo {
        let range = hi - lo;
        resized.pixels.iter().map(|&p| (((p - lo) / range).clamp(0.0, 1.0) * LEVELS).round() / LEVELS).collect()
    } else {
        vec![0.0; FRAME * FRAME]
    };
    Ok(PreparedSlice { pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256;

    #[test]
    fn reprepare_is_exact_under_rescale() {
        let mut rng = Xoshiro256::seed_from_u64(12);
        let raw = RawImage::new(40, 70, (0..2800).map(|_| rng.uniform(-5.0, 4000.0)).collect());
        let once = prepare_slice(&raw).unwrap();
        for scale in [1e-3, 0.7, 3.0, 977.25, 1e6] {
            let again = RawImage::new(FRAME, FRAME, once.pixels().iter().map(|p| p * scale).collect());
            assert_eq!(prepare_slice(&again).unwrap().pixels(), once.pixels());
        }
    }

    #[test]
    fn constant_image_is_zero() {
        let raw = RawImage::new(3, 5, vec![1000.0; 15]);
        assert!(prepare_slice(&raw).unwrap().pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn two_by_two_endpoints() {
        let raw = RawImage::new(2, 2, vec![0.0, 4095.0, 0.0, 4095.0]);
        let p = prepare_slice(&raw).unwrap();
        let max = p.pixels().iter().cloned().fold(f64::MIN, f64::max);
        let min = p.pixels().iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!((min, max), (0.0, 1.0));
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(prepare_slice(&RawImage::new(0, 0, vec![])), Err(IngestError::EmptyImage)));
        let nan = RawImage::new(1, 2, vec![f64::NAN, f64::INFINITY]);
        assert!(matches!(prepare_slice(&nan), Err(IngestError::EmptyImage)));
    }

    #[test]
    fn non_finite_pixels_are_floored() {
        let raw = RawImage::new(1, 3, vec![f64::NAN, 2.0, 4.0]);
        let p = prepare_slice(&raw).unwrap();
        assert!(p.pixels().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let mut rng = Xoshiro256::seed_from_u64(4);
        let img = RawImage::new(9, 7, (0..63).map(|_| rng.normal()).collect());
        assert_eq!(bilinear_resize(&img, 9, 7), img);
    }

    #[test]
    fn exact_downsample_by_two_averages_pairs() {
        // Half-pixel centres put every output sample midway between two
        // source pixels when the factor is exactly 2.
        let img = RawImage::new(2, 4, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]);
        let out = bilinear_resize(&img, 1, 2);
        assert_eq!(out.pixels, vec![5.0, 9.0]);
    }
}
