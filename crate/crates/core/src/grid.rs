//! Dense row-major grids shared by every pipeline stage.
//!
//! [`ImageGrid`] holds interleaved `f32` channels (photographs, normal
//! buffers, level-set fields); [`BinaryGrid`] holds masks; [`IdGrid`] holds
//! 16-bit part identifiers with `0` reserved for background. Pixel `(x, y)`
//! of channel `c` lives at index `(y * width + x) * channels + c`.

use alloc::vec;
use alloc::vec::Vec;

/// Errors raised when constructing grids from untrusted buffers.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("buffer length {got} does not match {width}x{height}x{channels}")]
    LengthMismatch {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("non-finite sample at flat index {index}")]
    NonFinite { index: usize },
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
}

/// A `width * height` grid of interleaved `f32` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageGrid {
    /// Zero-filled grid. Dimensions and channel count must be positive.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(
            width > 0 && height > 0 && channels > 0,
            "ImageGrid dimensions must be positive, got {width}x{height}x{channels}"
        );
        ImageGrid {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Wraps an existing buffer, validating length and finiteness.
    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(GridError::EmptyDimensions { width, height });
        }
        if data.len() != width * height * channels {
            return Err(GridError::LengthMismatch {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(ImageGrid {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// One full row of interleaved samples.
    #[inline]
    pub fn row(&self, y: usize) -> &[f32] {
        let i = y * self.width * self.channels;
        &self.data[i..i + self.width * self.channels]
    }

    /// Mutable access to one full row of interleaved samples.
    #[inline]
    pub fn row_mut(&mut self, y: usize) -> &mut [f32] {
        let i = y * self.width * self.channels;
        let n = self.width * self.channels;
        &mut self.data[i..i + n]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    pub fn fill(&mut self, value: f32) {
        self.data.fill(value);
    }

    /// Replicate-clamped sample: coordinates outside the grid read the
    /// nearest edge pixel.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc, c)
    }

    /// True when every sample is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A boolean mask over the pixel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(
            width > 0 && height > 0,
            "BinaryGrid dimensions must be positive, got {width}x{height}"
        );
        BinaryGrid {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut g = BinaryGrid::new(width, height);
        for y in 0..height {
            for x in 0..width {
                g.data[y * width + x] = f(x, y);
            }
        }
        g
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background (`false`).
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            false
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    pub fn complemented(&self) -> BinaryGrid {
        BinaryGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn same_shape(&self, other: &BinaryGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixels set in `self` but sitting 4-adjacent to an unset pixel or the
    /// image edge — the inner one-pixel boundary of the mask.
    pub fn inner_boundary(&self) -> BinaryGrid {
        BinaryGrid::from_fn(self.width, self.height, |x, y| {
            if !self.get(x, y) {
                return false;
            }
            let (xi, yi) = (x as isize, y as isize);
            !self.get_or_false(xi - 1, yi)
                || !self.get_or_false(xi + 1, yi)
                || !self.get_or_false(xi, yi - 1)
                || !self.get_or_false(xi, yi + 1)
        })
    }

    /// Number of pixels on which the two masks disagree.
    pub fn count_differing(&self, other: &BinaryGrid) -> usize {
        assert!(self.same_shape(other), "mask shapes differ");
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// A grid of 16-bit identifiers; `0` means background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdGrid {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl IdGrid {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(
            width > 0 && height > 0,
            "IdGrid dimensions must be positive, got {width}x{height}"
        );
        IdGrid {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background (`0`).
    #[inline]
    pub fn get_or_zero(&self, x: isize, y: isize) -> u16 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u16) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    /// Mask of pixels equal to `id`.
    pub fn equals_mask(&self, id: u16) -> BinaryGrid {
        BinaryGrid::from_fn(self.width, self.height, |x, y| self.get(x, y) == id)
    }
}
