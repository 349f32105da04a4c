//! Raster primitives shared by every stage of the pipeline.
//!
//! Everything here is immutable once built. The distance transform is the
//! exact Euclidean one, so chamfer scores are true average pixel distances.

mod dt;
pub mod io;

pub use dt::{distance_transform, DistanceField};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    BadDimensions { width: usize, height: usize },
    #[error("pixel buffer has {got} entries, expected {expected}")]
    BadBuffer { expected: usize, got: usize },
    #[error("distance transform needs at least one set pixel")]
    EmptyMask,
    #[error("image too small to downsample ({width}x{height})")]
    TooSmall { width: usize, height: usize },
    #[error("crop window {0:?} does not intersect the image")]
    OutOfBounds(Rect),
}

/// Integer pixel position, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PixelCoord {
    pub x: i32,
    pub y: i32,
}

impl PixelCoord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn dist2(self, other: PixelCoord) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }
}

/// Axis-aligned pixel rectangle `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x0: i32, y0: i32, w: i32, h: i32) -> Self {
        Self { x0, y0, w, h }
    }

    /// Square window of side `2 * half + 1` centred on `c`.
    pub fn centered(c: PixelCoord, half: i32) -> Self {
        Self::new(c.x - half, c.y - half, 2 * half + 1, 2 * half + 1)
    }

    pub fn x1(&self) -> i32 {
        self.x0 + self.w
    }

    pub fn y1(&self) -> i32 {
        self.y0 + self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w <= 0 || self.h <= 0
    }

    pub fn area(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            self.w as i64 * self.h as i64
        }
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.x >= self.x0 && p.x < self.x1() && p.y >= self.y0 && p.y < self.y1()
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        Rect::new(x0, y0, (x1 - x0).max(0), (y1 - y0).max(0))
    }

    pub fn expand(&self, by: i32) -> Rect {
        Rect::new(self.x0 - by, self.y0 - by, self.w + 2 * by, self.h + 2 * by)
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Rect {
        Rect::new(self.x0 + dx, self.y0 + dy, self.w, self.h)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }

    /// Bounding box of a non-empty point set.
    pub fn bounding(points: &[PixelCoord]) -> Option<Rect> {
        let first = points.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Some(Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

/// 8-bit grayscale image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::BadDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            data: vec![fill; width * height],
        })
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::BadDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::BadBuffer {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        let mut img = Self::new(width, height, 0)?;
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        Ok(img)
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

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width as i32, self.height as i32)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel value at a signed coordinate, `None` outside the image.
    pub fn at(&self, p: PixelCoord) -> Option<u8> {
        if p.x < 0 || p.y < 0 || p.x as usize >= self.width || p.y as usize >= self.height {
            None
        } else {
            Some(self.data[p.y as usize * self.width + p.x as usize])
        }
    }

    /// Per-pixel `255 - v`; swaps dark-on-light and light-on-dark structure.
    pub fn inverted(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| 255 - v).collect(),
        }
    }
}

/// One boolean per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn at(&self, x: i32, y: i32) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_disjoint(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !(*a && *b))
    }

    /// Foreground pixels with a 4-neighbour outside the foreground.
    /// Pixels on the mask border count as boundary.
    pub fn boundary(&self) -> BinaryMask {
        let (w, h) = (self.width as i32, self.height as i32);
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            if !self.get(x, y) {
                return false;
            }
            let (x, y) = (x as i32, y as i32);
            [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                .iter()
                .any(|&(nx, ny)| nx < 0 || ny < 0 || nx >= w || ny >= h || !self.at(nx, ny))
        })
    }
}

/// 2x2 box mean with floor; odd trailing rows/columns average what exists.
pub fn downsample2(img: &GrayImage) -> Result<GrayImage, ImageError> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(ImageError::TooSmall { width: w, height: h });
    }
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    GrayImage::from_fn(ow, oh, |ox, oy| {
        let mut sum = 0u32;
        let mut n = 0u32;
        for y in (2 * oy)..(2 * oy + 2).min(h) {
            for x in (2 * ox)..(2 * ox + 2).min(w) {
                sum += img.get(x, y) as u32;
                n += 1;
            }
        }
        (sum / n) as u8
    })
}

/// Copies the part of `r` that lies inside the image; also returns the
/// rectangle that was actually used.
pub fn crop(img: &GrayImage, r: Rect) -> Result<(GrayImage, Rect), ImageError> {
    let eff = r.intersect(&img.bounds());
    if eff.is_empty() {
        return Err(ImageError::OutOfBounds(r));
    }
    let out = GrayImage::from_fn(eff.w as usize, eff.h as usize, |x, y| {
        img.get(eff.x0 as usize + x, eff.y0 as usize + y)
    })?;
    Ok((out, eff))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_examples() {
        let img = GrayImage::from_vec(2, 2, vec![0, 0, 255, 255]).unwrap();
        assert_eq!(downsample2(&img).unwrap().data(), &[127]);

        let checker = GrayImage::from_fn(4, 4, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 }).unwrap();
        let d = downsample2(&checker).unwrap();
        assert_eq!(d.dims(), (2, 2));
        assert!(d.data().iter().all(|&v| v == 127));

        let odd = GrayImage::from_fn(5, 3, |x, _| x as u8 * 10).unwrap();
        let d = downsample2(&odd).unwrap();
        assert_eq!(d.dims(), (3, 2));
        // last column block only has x = 4
        assert_eq!(d.get(2, 0), 40);
        assert_eq!(d.get(0, 1), 5);
    }

    #[test]
    fn downsample_rejects_tiny() {
        let img = GrayImage::new(1, 5, 0).unwrap();
        assert!(matches!(downsample2(&img), Err(ImageError::TooSmall { .. })));
    }

    #[test]
    fn constant_survives_two_downsamples() {
        let img = GrayImage::new(13, 9, 77).unwrap();
        let d = downsample2(&downsample2(&img).unwrap()).unwrap();
        assert_eq!(d.dims(), (4, 3));
        assert!(d.data().iter().all(|&v| v == 77));
    }

    #[test]
    fn crop_clamps_and_reports() {
        let img = GrayImage::from_fn(30, 20, |x, y| (x + y) as u8).unwrap();
        let (full, r) = crop(&img, img.bounds()).unwrap();
        assert_eq!(full, img);
        assert_eq!(r, img.bounds());

        let (c, r) = crop(&img, Rect::new(25, 2, 10, 4)).unwrap();
        assert_eq!(r, Rect::new(25, 2, 5, 4));
        assert_eq!(c.dims(), (5, 4));
        assert_eq!(c.get(0, 0), img.get(25, 2));

        // 41x41 window around a point 5 px from the left/top border
        let img = GrayImage::new(100, 100, 1).unwrap();
        let (_, r) = crop(&img, Rect::centered(PixelCoord::new(5, 5), 20)).unwrap();
        assert_eq!(r, Rect::new(0, 0, 26, 26));

        assert!(matches!(
            crop(&img, Rect::new(200, 0, 5, 5)),
            Err(ImageError::OutOfBounds(_))
        ));
    }

    #[test]
    fn bad_buffers() {
        assert!(GrayImage::from_vec(0, 3, vec![]).is_err());
        assert_eq!(
            GrayImage::from_vec(2, 2, vec![1, 2, 3]),
            Err(ImageError::BadBuffer { expected: 4, got: 3 })
        );
    }

    #[test]
    fn mask_boundary() {
        let m = BinaryMask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y));
        let b = m.boundary();
        assert_eq!(b.count(), 8);
        assert!(!b.get(2, 2));
    }
}
