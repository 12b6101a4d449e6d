//! In-memory image types: RGB images on the unit interval, depth images with
//! validity masks, and binary masks.

use crate::error::{CoreError, Result};

/// Row-major H x W x 3 image with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = ImageRgb::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] = px[0];
        self.data[i + 1] = px[1];
        self.data[i + 2] = px[2];
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height * 3 {
            return Err(CoreError::DimensionMismatch(format!(
                "rgb data length {} != {}x{}x3",
                self.data.len(),
                self.width,
                self.height
            )));
        }
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CoreError::InvalidInput(
                "rgb channel value outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel depth in scene units plus a validity mask. Invalid pixels carry
/// a placeholder value and are reconstructed by preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub z: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            z: vec![0.0; width * height],
            valid: vec![true; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.z.len() != n || self.valid.len() != n {
            return Err(CoreError::DimensionMismatch(format!(
                "depth buffers {}x{} vs {} values / {} flags",
                self.width,
                self.height,
                self.z.len(),
                self.valid.len()
            )));
        }
        for (i, &v) in self.valid.iter().enumerate() {
            if v && !self.z[i].is_finite() {
                return Err(CoreError::InvalidInput(format!(
                    "non-finite depth at valid pixel {}",
                    i
                )));
            }
        }
        Ok(())
    }
}

/// Binary pixel mask (foreground masks, ground-truth masks, anomaly masks).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        let i = self.idx(x, y);
        self.bits[i] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn intersect(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.bits.len(), other.bits.len(), "mask dims");
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Intersection over union; 1.0 when both masks are empty.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}
