//! Raster containers and their on-disk formats.
//!
//! Masks and visualisations are 8-bit grayscale PNG. Real-valued tensors use
//! the `BSNT` container:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BSNT"
//! 4       2     version (u16 LE) = 1
//! 6       2     dtype   (u16 LE) = 0 (f32)
//! 8       4     height  (u32 LE)
//! 12      4     width   (u32 LE)
//! 16      4     channels(u32 LE)
//! 20      ...   planar row-major f32 LE payload
//! ```
//!
//! The fixed header is 20 bytes, so a `1x1x1` tensor file is 24 bytes.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use image::codecs::png::PngDecoder;
use image::{ExtendedColorType, ImageDecoder, ImageFormat};

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimensions(format!(
            "zero-sized raster {width}x{height}"
        )));
    }
    Ok(())
}

fn check_len(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Dimensions("raster size overflows".into()))?;
    if expected != len {
        return Err(Error::Dimensions(format!(
            "{width}x{height}x{channels} raster needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

/// Per-pixel foreground/background labels, row-major. `true` is foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 1, data.len())?;
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, foreground: bool) -> Result<Self> {
        check_dims(width, height)?;
        Ok(BinaryMask {
            width,
            height,
            data: vec![foreground; width * height],
        })
    }

    /// Builds a mask from `f(row, col)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, foreground: bool) {
        self.data[row * self.width + col] = foreground;
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&fg| fg).count()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&fg| !fg).collect(),
        }
    }
}

/// A single real-valued plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T = f64> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> ScalarField<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_dims(width, height)?;
        check_len(width, height, 1, data.len())?;
        Ok(ScalarField {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        check_dims(width, height)?;
        Ok(ScalarField {
            width,
            height,
            data: vec![value; width * height],
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Ok(ScalarField {
            width,
            height,
            data,
        })
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> ScalarField<U> {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Wraps the plane as a one-channel tensor.
    pub fn to_tensor(&self) -> TensorField<T> {
        TensorField {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

/// A multi-channel real-valued raster stored planar (channel-major).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField<T = f32> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> TensorField<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        check_dims(width, height)?;
        if channels == 0 {
            return Err(Error::Dimensions("tensor with zero channels".into()));
        }
        check_len(width, height, channels, data.len())?;
        Ok(TensorField {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        check_dims(width, height)?;
        if channels == 0 {
            return Err(Error::Dimensions("tensor with zero channels".into()));
        }
        Ok(TensorField {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    /// Stacks equally sized planes into one tensor.
    pub fn from_planes(planes: &[&ScalarField<T>]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or(Error::Empty("no planes to stack"))?;
        let (width, height) = first.dims();
        let mut data = Vec::with_capacity(width * height * planes.len());
        for plane in planes {
            if plane.dims() != (width, height) {
                return Err(Error::dims("plane", (width, height), plane.dims()));
            }
            data.extend_from_slice(plane.data());
        }
        TensorField::new(width, height, planes.len(), data)
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> T {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: T) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    pub fn channel(&self, channel: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn channel_mut(&mut self, channel: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane(&self, channel: usize) -> ScalarField<T> {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.channel(channel).to_vec(),
        }
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> TensorField<U> {
        TensorField {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// PNG masks

/// Decodes an 8-bit single-channel PNG. Values `>= 128` are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let (width, height, pixels) = decode_gray8(bytes)?;
    BinaryMask::new(width, height, pixels.into_iter().map(|v| v >= 128).collect())
}

/// Decodes an 8-bit single-channel PNG into `(width, height, pixels)`.
pub fn decode_gray8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if image::guess_format(bytes).ok() != Some(ImageFormat::Png) {
        return Err(Error::Format("not a PNG file".into()));
    }
    let decoder = PngDecoder::new(Cursor::new(bytes))
        .map_err(|e| Error::Format(format!("PNG decode failed: {e}")))?;
    let original = decoder.original_color_type();
    if original != ExtendedColorType::L8 {
        return Err(Error::Format(format!(
            "expected 8-bit single-channel PNG, found {original:?}"
        )));
    }
    let (w, h) = decoder.dimensions();
    let total = decoder.total_bytes();
    if total != u64::from(w) * u64::from(h) {
        return Err(Error::Format("unexpected PNG payload size".into()));
    }
    let mut pixels = vec![0u8; total as usize];
    decoder
        .read_image(&mut pixels)
        .map_err(|e| Error::Format(format!("PNG decode failed: {e}")))?;
    Ok((w as usize, h as usize, pixels))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes).map_err(|e| e.in_file(path))
}

/// Encodes a mask as 8-bit grayscale PNG, foreground 255, background 0.
pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let pixels = mask.data().iter().map(|&fg| if fg { 255 } else { 0 }).collect();
    encode_gray8(mask.width(), mask.height(), pixels)
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_mask(mask)?)
}

pub fn encode_gray8(width: usize, height: usize, pixels: Vec<u8>) -> Result<Vec<u8>> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::Dimensions("pixel buffer does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG encode failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn save_gray8(width: usize, height: usize, pixels: Vec<u8>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_gray8(width, height, pixels)?)
}

/// Loads an 8-bit RGB (or gray, replicated) PNG as a 3-channel tensor in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<TensorField<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rgb(&bytes).map_err(|e| e.in_file(path))
}

pub fn decode_rgb(bytes: &[u8]) -> Result<TensorField<f32>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG decode failed: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut field = TensorField::filled(w, h, 3, 0.0f32)?;
    for (col, row, px) in img.enumerate_pixels() {
        for c in 0..3 {
            field.set(c, row as usize, col as usize, f32::from(px[c]) / 255.0);
        }
    }
    Ok(field)
}

pub fn save_rgb(field: &TensorField<f32>, path: impl AsRef<Path>) -> Result<()> {
    if field.channels() != 3 {
        return Err(Error::Dimensions(format!(
            "RGB export needs 3 channels, found {}",
            field.channels()
        )));
    }
    let (w, h) = field.dims();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |col, row| {
        let px = |c| (field.get(c, row as usize, col as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG encode failed: {e}")))?;
    write_file(path.as_ref(), &out.into_inner())
}

/// Min-max scales a field to `[0, 255]` (round half up). A constant field maps to 0.
pub fn field_to_gray8(field: &ScalarField<f64>) -> Vec<u8> {
    let (lo, hi) = field
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    field
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn field_to_png(field: &ScalarField<f64>, path: impl AsRef<Path>) -> Result<()> {
    if field.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("cannot visualise a non-finite field".into()));
    }
    save_gray8(field.width(), field.height(), field_to_gray8(field), path)
}

// ---------------------------------------------------------------------------
// BSNT tensors

pub const TENSOR_MAGIC: &[u8; 4] = b"BSNT";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 0;
pub const TENSOR_HEADER_LEN: usize = 20;

pub fn encode_tensor(field: &TensorField<f32>) -> Result<Vec<u8>> {
    if field.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("tensor contains non-finite values".into()));
    }
    let dim = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Dimensions(format!("{what} {n} exceeds u32")))
    };
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + 4 * field.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&dim(field.height(), "height")?.to_le_bytes());
    out.extend_from_slice(&dim(field.width(), "width")?.to_le_bytes());
    out.extend_from_slice(&dim(field.channels(), "channels")?.to_le_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_tensor_to(field: &TensorField<f32>, mut writer: impl Write) -> Result<()> {
    let bytes = encode_tensor(field)?;
    writer
        .write_all(&bytes)
        .map_err(|e| Error::io("<stream>", e))
}

pub fn write_tensor(field: &TensorField<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(field)?)
}

/// Parses a complete `BSNT` buffer. Trailing bytes are rejected.
pub fn decode_tensor(bytes: &[u8]) -> Result<TensorField<f32>> {
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} of {TENSOR_HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::Format("bad magic, expected BSNT".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = u16_at(6);
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    let height = u32_at(8) as usize;
    let width = u32_at(12) as usize;
    let channels = u32_at(16) as usize;
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::Format(format!(
            "zero dimension {height}x{width}x{channels}"
        )));
    }
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = &bytes[TENSOR_HEADER_LEN..];
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format("non-finite value in payload".into()));
        }
        data.push(v);
    }
    TensorField::new(width, height, channels, data)
}

pub fn read_tensor_from(mut reader: impl Read) -> Result<TensorField<f32>> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<stream>", e))?;
    decode_tensor(&bytes)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorField<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| e.in_file(path))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_png(width: u32, height: u32, pixels: Vec<u8>) -> Vec<u8> {
        encode_gray8(width as usize, height as usize, pixels).unwrap()
    }

    #[test]
    fn threshold_at_128() {
        let mask = decode_mask(&gray_png(4, 1, vec![0, 127, 128, 255])).unwrap();
        assert_eq!(mask.data(), &[false, false, true, true]);
        assert!(decode_mask(&gray_png(3, 2, vec![255; 6])).unwrap().data().iter().all(|&v| v));
        assert_eq!(decode_mask(&gray_png(3, 2, vec![0; 6])).unwrap().count_foreground(), 0);
    }

    #[test]
    fn rejects_non_gray8() {
        let rgb = image::RgbImage::new(2, 2);
        let mut buf = Cursor::new(Vec::new());
        rgb.write_to(&mut buf, ImageFormat::Png).unwrap();
        assert!(matches!(decode_mask(buf.get_ref()), Err(Error::Format(_))));

        let wide = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![65535u16]).unwrap();
        let mut buf = Cursor::new(Vec::new());
        wide.write_to(&mut buf, ImageFormat::Png).unwrap();
        assert!(matches!(decode_mask(buf.get_ref()), Err(Error::Format(_))));

        assert!(matches!(decode_mask(b"GIF89a...."), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_mask("/nonexistent/definitely/missing.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("missing.png"));
    }

    #[test]
    fn save_mask_pixel_values() {
        let one = BinaryMask::filled(1, 1, true).unwrap();
        let (_, _, px) = decode_gray8(&encode_mask(&one).unwrap()).unwrap();
        assert_eq!(px, vec![255]);

        let checker = BinaryMask::from_fn(2, 2, |r, c| (r + c) % 2 == 0).unwrap();
        let (_, _, px) = decode_gray8(&encode_mask(&checker).unwrap()).unwrap();
        assert_eq!(px, vec![255, 0, 0, 255]);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = BinaryMask::from_fn(5, 3, |r, c| r * c % 3 == 1).unwrap();
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn field_png_scaling() {
        let constant = ScalarField::filled(3, 2, 0.7).unwrap();
        assert_eq!(field_to_gray8(&constant), vec![0; 6]);
        let two = ScalarField::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(field_to_gray8(&two), vec![0, 255]);
        let three = ScalarField::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(field_to_gray8(&three), vec![0, 128, 255]);
    }

    #[test]
    fn tensor_header_size() {
        let t = TensorField::new(1, 1, 1, vec![0.0f32]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(bytes.len(), TENSOR_HEADER_LEN + 4);
        assert_eq!(&bytes[..4], b"BSNT");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..20], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn tensor_header_order_is_height_width_channels() {
        let t = TensorField::new(3, 2, 5, vec![1.5f32; 30]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 5);
    }

    #[test]
    fn tensor_corruption_is_rejected() {
        let t = TensorField::new(2, 2, 1, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let good = encode_tensor(&t).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_tensor(&bad).unwrap_err().to_string().contains("magic"));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode_tensor(&bad).unwrap_err().to_string().contains("version"));

        let mut bad = good.clone();
        bad[6] = 1;
        assert!(decode_tensor(&bad).unwrap_err().to_string().contains("dtype"));

        assert!(decode_tensor(&good[..good.len() - 1])
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        assert!(decode_tensor(&good[..10]).is_err());

        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_tensor(&bad).is_err());
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(BinaryMask::filled(0, 3, true).is_err());
        assert!(ScalarField::filled(3, 0, 0.0).is_err());
        assert!(TensorField::filled(1, 1, 0, 0.0f32).is_err());
        assert!(TensorField::new(2, 2, 1, vec![0.0f32; 3]).is_err());
    }

    #[test]
    fn planar_layout() {
        let t = TensorField::new(2, 1, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 0, 1), 2.0);
        assert_eq!(t.get(1, 0, 0), 3.0);
        assert_eq!(t.channel(1), &[3.0, 4.0]);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |d| BinaryMask::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn mask_png_round_trip(mask in arb_mask()) {
            prop_assert_eq!(decode_mask(&encode_mask(&mask).unwrap()).unwrap(), mask);
        }

        #[test]
        fn tensor_round_trip_bitwise(
            (w, h, c, data) in (1usize..9, 1usize..9, 1usize..4).prop_flat_map(|(w, h, c)| {
                (Just(w), Just(h), Just(c),
                 proptest::collection::vec(-1e30f32..1e30f32, w * h * c))
            })
        ) {
            let t = TensorField::new(w, h, c, data).unwrap();
            let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            prop_assert_eq!(back.channels(), t.channels());
            let bits = |f: &TensorField<f32>| f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&t));
        }

        #[test]
        fn tensor_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_tensor(&bytes);
            let mut framed = b"BSNT\x01\x00\x00\x00".to_vec();
            framed.extend_from_slice(&bytes);
            let _ = decode_tensor(&framed);
        }
    }
}
