//! Image and mask containers plus their file encodings.
//!
//! Intensities are kept as unit-interval `f32` so that gamma and bilinear
//! arithmetic never has to round-trip through bytes. Masks are written as
//! single-channel 8-bit PNG with background 0 and melt pool 255.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Luma, RgbImage};

use crate::error::{Error, Result};

/// Multi-channel image with row-major, interleaved intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Dimensions {
                width,
                height,
                channels,
            });
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "raster {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "raster intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Constant-valued raster. `value` is clamped into `[0, 1]`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        let v = value.clamp(0.0, 1.0);
        Self::new(width, height, channels, vec![v; width * height * channels])
    }

    /// Builds a single-channel raster from a closure over `(x, y)`.
    pub fn from_fn_gray(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, 1, data)
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

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Applies `f` to every intensity, clamping the result back into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            Raster {
                width: w as usize,
                height: h as usize,
                channels: 3,
                data: rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
            }
        } else {
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            Raster {
                width: w as usize,
                height: h as usize,
                channels: 1,
                data: gray.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
            }
        }
    }

    /// Decodes any supported image encoding held in memory.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|source| Error::Decode {
            path: "<memory>".into(),
            source,
        })?;
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::Dimensions {
                width: img.width() as usize,
                height: img.height() as usize,
                channels: 0,
            });
        }
        Ok(Self::from_dynamic(&img))
    }

    fn to_bytes_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Encodes as an 8-bit PNG (gray or RGB depending on channel count).
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let bytes = self.to_bytes_u8();
        let dynamic = if self.channels == 1 {
            DynamicImage::ImageLuma8(
                GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .expect("raster length checked at construction"),
            )
        } else {
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .expect("raster length checked at construction"),
            )
        };
        let mut out = Cursor::new(Vec::new());
        dynamic
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|source| Error::Encode {
                path: "<memory>".into(),
                source,
            })?;
        Ok(out.into_inner())
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Per-pixel melt-pool membership, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Like [`get`](Self::get) but treats out-of-bounds coordinates as background.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a || b)
                .collect(),
        })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| !v).collect(),
        }
    }

    /// True when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Iterates over `(x, y)` of foreground pixels in row-major order.
    pub fn iter_foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Horizontal mirror image.
    pub fn flip_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    fn to_gray_image(&self) -> GrayImage {
        let bytes = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("mask length checked at construction")
    }

    /// Bit-exact PNG encoding: 8-bit gray, 0 background, 255 melt pool.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_gray_image()
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|source| Error::Encode {
                path: "<memory>".into(),
                source,
            })?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|source| Error::Decode {
            path: "<memory>".into(),
            source,
        })?;
        decode_mask(img, Path::new("<memory>"))
    }
}

/// Loads a PNG, TIFF, JPEG or BMP image.
///
/// Grayscale sources give a 1-channel raster, everything with color gives 3
/// channels (alpha is dropped). Intensities are `byte / 255`.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::MaskFormat {
            path: path.to_path_buf(),
            found: "empty image".into(),
        });
    }
    Ok(Raster::from_dynamic(&img))
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = mask.to_png_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a mask written by [`save_mask`]. Any value other than 0 or 255 is
/// rejected with the coordinate of the first offending pixel.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    decode_mask(img, path)
}

fn decode_mask(img: DynamicImage, path: &Path) -> Result<BinaryMask> {
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::MaskFormat {
                path: path.to_path_buf(),
                found: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for (x, y, Luma([v])) in gray.enumerate_pixels() {
        match *v {
            0 => data.push(false),
            255 => data.push(true),
            value => {
                return Err(Error::NonBinaryMask {
                    path: path.to_path_buf(),
                    x: x as usize,
                    y: y as usize,
                    value,
                })
            }
        }
    }
    BinaryMask::new(w as usize, h as usize, data)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_raster(image: &Raster, width: usize, height: usize) -> Result<Raster> {
    if width == 0 || height == 0 {
        return Err(Error::Dimensions {
            width,
            height,
            channels: image.channels,
        });
    }
    if width == image.width && height == image.height {
        return Ok(image.clone());
    }
    let sx = image.width as f64 / width as f64;
    let sy = image.height as f64 / height as f64;
    let ch = image.channels;
    let mut data = Vec::with_capacity(width * height * ch);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (image.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(image.height - 1);
        let ty = (fy - y0 as f64) as f32;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (image.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(image.width - 1);
            let tx = (fx - x0 as f64) as f32;
            for c in 0..ch {
                let top = image.get(x0, y0, c) * (1.0 - tx) + image.get(x1, y0, c) * tx;
                let bottom = image.get(x0, y1, c) * (1.0 - tx) + image.get(x1, y1, c) * tx;
                data.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
            }
        }
    }
    Raster::new(width, height, ch, data)
}

/// Nearest-neighbour resize; source index is `floor((dst + 0.5) * scale)`.
pub fn resize_mask(mask: &BinaryMask, width: usize, height: usize) -> Result<BinaryMask> {
    if width == 0 || height == 0 || mask.width == 0 || mask.height == 0 {
        return Err(Error::Dimensions {
            width,
            height,
            channels: 1,
        });
    }
    let sx = mask.width as f64 / width as f64;
    let sy = mask.height as f64 / height as f64;
    Ok(BinaryMask::from_fn(width, height, |x, y| {
        let src_x = (((x as f64 + 0.5) * sx) as usize).min(mask.width - 1);
        let src_y = (((y as f64 + 0.5) * sy) as usize).min(mask.height - 1);
        mask.get(src_x, src_y)
    }))
}

/// Rescales an image (bilinear) and optionally its mask (nearest-neighbour)
/// to `side x side`. Aspect ratio is not preserved.
pub fn resize_pair(
    image: &Raster,
    mask: Option<&BinaryMask>,
    side: usize,
) -> Result<(Raster, Option<BinaryMask>)> {
    if side < 16 {
        return Err(Error::InvalidParameter(format!(
            "resize side must be at least 16, got {side}"
        )));
    }
    if let Some(m) = mask {
        if m.width != image.width || m.height != image.height {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} vs mask {}x{}",
                image.width, image.height, m.width, m.height
            )));
        }
    }
    let resized = resize_raster(image, side, side)?;
    let mask = mask.map(|m| resize_mask(m, side, side)).transpose()?;
    Ok((resized, mask))
}

/// ITU-R 601 luminance weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

pub fn to_grayscale(image: &Raster) -> Raster {
    if image.channels == 1 {
        return image.clone();
    }
    let data = image
        .data
        .chunks_exact(3)
        .map(|px| {
            (px[0] * LUMA_WEIGHTS[0] + px[1] * LUMA_WEIGHTS[1] + px[2] * LUMA_WEIGHTS[2])
                .clamp(0.0, 1.0)
        })
        .collect();
    Raster {
        width: image.width,
        height: image.height,
        channels: 1,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_gray_png(path: &Path, w: u32, h: u32, bytes: Vec<u8>) {
        GrayImage::from_raw(w, h, bytes).unwrap().save(path).unwrap();
    }

    #[test]
    fn load_white_and_black_png() {
        let dir = tempfile::tempdir().unwrap();
        let white = dir.path().join("white.png");
        let black = dir.path().join("black.png");
        write_gray_png(&white, 2, 2, vec![255; 4]);
        write_gray_png(&black, 2, 2, vec![0; 4]);

        let r = load_raster(&white).unwrap();
        assert_eq!((r.width(), r.height(), r.channels()), (2, 2, 1));
        assert!(r.data().iter().all(|&v| v == 1.0));
        let r = load_raster(&black).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn byte_128_scales_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mid.png");
        write_gray_png(&p, 1, 1, vec![128]);
        let r = load_raster(&p).unwrap();
        assert!((r.data()[0] - 0.501_960_8).abs() < 1e-6);
    }

    #[test]
    fn color_source_gives_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.bmp");
        RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap().save(&p).unwrap();
        let r = load_raster(&p).unwrap();
        assert_eq!(r.channels(), 3);
        assert_eq!(r.pixel(0, 0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_and_corrupt_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        let err = load_raster(&missing).unwrap_err().to_string();
        assert!(err.contains("nope.png"), "{err}");

        let corrupt = dir.path().join("corrupt.png");
        std::fs::write(&corrupt, b"definitely not an image").unwrap();
        let err = load_raster(&corrupt).unwrap_err().to_string();
        assert!(err.contains("corrupt.png"), "{err}");
    }

    #[test]
    fn mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let empty = BinaryMask::empty(5, 4);
        save_mask(&empty, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), empty);

        let mut single = BinaryMask::empty(5, 4);
        single.set(3, 2, true);
        save_mask(&single, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), single);
    }

    #[test]
    fn mask_file_is_eight_bit_gray_zero_or_255() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mut m = BinaryMask::empty(3, 1);
        m.set(1, 0, true);
        save_mask(&m, &p).unwrap();
        let img = image::open(&p).unwrap();
        let gray = img.as_luma8().expect("8-bit gray");
        assert_eq!(gray.as_raw(), &vec![0, 255, 0]);
    }

    #[test]
    fn non_binary_value_rejected_with_coordinate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        // Row-major: first bad byte is at index 5 -> (x=1, y=1) in a 4-wide image.
        let mut bytes = vec![0u8; 8];
        bytes[2] = 255;
        bytes[5] = 17;
        bytes[7] = 3;
        write_gray_png(&p, 4, 2, bytes);
        match load_mask(&p).unwrap_err() {
            Error::NonBinaryMask { x, y, value, .. } => assert_eq!((x, y, value), (1, 1, 17)),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn resize_dimension_contract() {
        let img = Raster::filled(1024, 1024, 1, 0.25).unwrap();
        let (r, m) = resize_pair(&img, None, 512).unwrap();
        assert_eq!((r.width(), r.height()), (512, 512));
        assert!(m.is_none());
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn resize_rejects_small_side() {
        let img = Raster::filled(8, 8, 1, 0.0).unwrap();
        assert!(resize_pair(&img, None, 15).is_err());
    }

    #[test]
    fn checkerboard_nearest_neighbour_downsample() {
        let m = BinaryMask::from_fn(4, 4, |x, y| (x + y) % 2 == 0);
        // dst 0 -> floor(0.5 * 2) = 1, dst 1 -> floor(1.5 * 2) = 3.
        let r = resize_mask(&m, 2, 2).unwrap();
        let expected = BinaryMask::from_fn(2, 2, |x, y| {
            let (sx, sy) = ([1, 3][x], [1, 3][y]);
            (sx + sy) % 2 == 0
        });
        assert_eq!(r, expected);
        assert!(r.data().iter().all(|&v| v));
    }

    #[test]
    fn grayscale_weights() {
        let red = Raster::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((to_grayscale(&red).data()[0] - 0.299).abs() < 1e-6);
        let white = Raster::filled(2, 2, 3, 1.0).unwrap();
        assert!(to_grayscale(&white).data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let gray = Raster::filled(2, 2, 1, 0.3).unwrap();
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn rejects_bad_raster_invariants() {
        assert!(Raster::new(0, 1, 1, vec![]).is_err());
        assert!(Raster::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Raster::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Raster::new(2, 1, 1, vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn mask_png_round_trip(w in 1usize..24, h in 1usize..24, bits in proptest::collection::vec(any::<bool>(), 576)) {
            let m = BinaryMask::new(w, h, bits[..w * h].to_vec()).unwrap();
            let back = BinaryMask::from_png_bytes(&m.to_png_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn resize_to_same_side_is_identity(side in 16usize..40, seed in any::<u64>()) {
            let mut s = seed;
            let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 40) as f32 / (1u64 << 24) as f32 };
            let img = Raster::from_fn_gray(side, side, |_, _| next()).unwrap();
            let mask = BinaryMask::from_fn(side, side, |x, y| (x * 7 + y * 3) % 5 == 0);
            let (r, m) = resize_pair(&img, Some(&mask), side).unwrap();
            prop_assert_eq!(r, img);
            prop_assert_eq!(m.unwrap(), mask);
        }

        #[test]
        fn grayscale_stays_in_unit_interval(px in proptest::collection::vec(0.0f32..=1.0, 3..=3)) {
            let r = Raster::new(1, 1, 3, px).unwrap();
            let g = to_grayscale(&r).data()[0];
            prop_assert!((0.0..=1.0).contains(&g));
        }
    }
}
