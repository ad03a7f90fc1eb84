use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary per-pixel label map, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

/// Per-pixel label confidence in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl HardMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0; height * width] }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::dim("hard_mask", "values", height * width, values.len()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Value("hard mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, values })
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let values = (0..height * width).map(|i| f(i / width, i % width) as u8).collect();
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.values[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn same_shape(&self, other: &HardMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.values.iter().map(|&v| v as f32).collect())
            .expect("mask dims are positive")
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask { height: self.height, width: self.width, values: self.values.iter().map(|&v| v as f32).collect() }
    }

    pub fn hflip(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }
}

impl SoftMask {
    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::dim("soft_mask", "values", height * width, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Value(format!("soft mask value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, values })
    }

    /// Reads an `H×W` (or `1×H×W`) tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match t.shape() {
            &[h, w] | &[1, h, w] | &[1, 1, h, w] => (h, w),
            s => return Err(Error::dim("soft_mask", "shape", "[H, W]", format!("{s:?}"))),
        };
        Self::from_values(h, w, t.data().to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.values.clone()).expect("mask dims are positive")
    }

    /// `1` where the value is strictly above `t`.
    pub fn threshold(&self, t: f32) -> HardMask {
        HardMask {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| (v > t) as u8).collect(),
        }
    }
}
