//! Binary masks and their raster encoding.

use std::fmt;
use std::io::{Seek, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};

use crate::error::{Error, Result};

/// 8-bit luminance values strictly above this are foreground.
pub const FOREGROUND_THRESHOLD: u8 = 127;

/// A 2-D grid of foreground/background pixels stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    pixels: Vec<bool>,
}

impl BinaryMask {
    /// An all-background mask.
    pub fn new(width: u32, height: u32) -> Result<Self> {
        Self::filled(width, height, false)
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds a mask from rows of 0/1 values. Mostly useful in tests.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.as_ref().len()) as u32;
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width as usize {
                return Err(Error::InvalidArgument("ragged mask rows".into()));
            }
            pixels.extend(row.iter().map(|&v| v != 0));
        }
        Self::from_pixels(width, height, pixels)
    }

    /// Thresholds an 8-bit grayscale image at [`FOREGROUND_THRESHOLD`].
    pub fn from_luma(image: &GrayImage) -> Result<Self> {
        let (width, height) = image.dimensions();
        check_dims(width, height)?;
        let pixels = image
            .pixels()
            .map(|p| p.0[0] > FOREGROUND_THRESHOLD)
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn to_luma(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    /// Always false: masks have at least one pixel.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.pixels[self.index(x, y)]
    }

    /// Like [`get`](Self::get) but returns `false` outside the grid.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < i64::from(self.width)
            && y < i64::from(self.height)
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.pixels[i] = value;
    }

    pub fn row(&self, y: u32) -> &[bool] {
        let start = y as usize * self.width as usize;
        &self.pixels[start..start + self.width as usize]
    }

    pub fn count_foreground(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// True when no pixel is foreground.
    pub fn is_blank(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
            && self
                .pixels
                .iter()
                .zip(&other.pixels)
                .all(|(&a, &b)| !a || b)
    }

    /// Coordinates of all foreground pixels in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub(crate) fn ensure_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dimensions() != other.dimensions() {
            return Err(Error::DimensionMismatch {
                left: self.dimensions(),
                right: other.dimensions(),
            });
        }
        Ok(())
    }

    /// Encodes the mask as an 8-bit grayscale PNG (foreground 255).
    pub fn write_png<W: Write + Seek>(&self, writer: &mut W) -> image::ImageResult<()> {
        self.to_luma().write_to(writer, ImageFormat::Png)
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.width, self.height)?;
        if self.len() <= 64 * 64 {
            for y in 0..self.height {
                let line: String = self
                    .row(y)
                    .iter()
                    .map(|&p| if p { '#' } else { '.' })
                    .collect();
                writeln!(f, "{line}")?;
            }
        }
        Ok(())
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyMask { width, height });
    }
    Ok(())
}

/// Reads a raster image and binarizes it on luminance.
///
/// Colour images are converted to 8-bit luminance first; pixels strictly
/// brighter than 127 become foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let image = image::open(path).map_err(|source| Error::ImageRead {
        path: path.to_owned(),
        source,
    })?;
    BinaryMask::from_luma(&image.to_luma8())
}

/// Writes the mask as an 8-bit single-channel PNG, foreground 255 and
/// background 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask.to_luma()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::ImageWrite {
            path: path.to_owned(),
            source,
        })
}
