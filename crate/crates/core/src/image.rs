//! Real-valued grayscale images plus the small amount of I/O the pipeline
//! needs: PGM (P2/P5) and 8-bit grayscale PNG in, binary PGM out.

use std::fmt;
use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};

/// A grayscale image with `f64` pixels stored row-major.
///
/// Row `i` runs over `0..height`, column `j` over `0..width`. Decoded 8-bit
/// sources land in `[0, 255]`, but intermediate images (normalized output,
/// feature maps) are free to hold any finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(pos) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite pixel at index {pos}"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                pixels.push(f(i, j));
            }
        }
        GrayImage::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    /// Internal constructor for results of pixel-wise operations whose
    /// finiteness is established by construction.
    pub(crate) fn from_parts(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    /// Applies `f` to every pixel. The result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GrayImage> {
        GrayImage::new(self.width, self.height, self.pixels.iter().map(|&p| f(p)).collect())
    }

    /// Linearly rescales the pixel range onto `[0, 255]` for viewing.
    /// A flat image maps to all zeros.
    pub fn rescaled_for_display(&self) -> GrayImage {
        let (lo, hi) = self
            .pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let span = hi - lo;
        let pixels = if span > 0.0 {
            self.pixels.iter().map(|&p| (p - lo) / span * 255.0).collect()
        } else {
            vec![0.0; self.pixels.len()]
        };
        GrayImage::from_parts(self.width, self.height, pixels)
    }
}

/// A rectangle inside an image, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    /// Face-region crop for 256x256 JAFFE frames: 101 columns by 114 rows,
    /// horizontally centred and shifted down toward the face.
    pub const JAFFE_DEFAULT: CropRect = CropRect {
        top: 70,
        left: 78,
        height: 114,
        width: 101,
    };

    pub const fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        CropRect {
            top,
            left,
            height,
            width,
        }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.height >= 1
            && self.width >= 1
            && self.top.checked_add(self.height).is_some_and(|b| b <= height)
            && self.left.checked_add(self.width).is_some_and(|r| r <= width)
    }
}

impl fmt::Display for CropRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.top, self.left, self.height, self.width)
    }
}

/// Copies the region `rect` out of `img`.
pub fn crop(img: &GrayImage, rect: CropRect) -> Result<GrayImage> {
    if !rect.fits(img.width, img.height) {
        return Err(Error::OutOfBounds {
            rect: rect.to_string(),
            width: img.width,
            height: img.height,
        });
    }
    let mut pixels = Vec::with_capacity(rect.width * rect.height);
    for i in rect.top..rect.top + rect.height {
        pixels.extend_from_slice(&img.row(i)[rect.left..rect.left + rect.width]);
    }
    Ok(GrayImage::from_parts(rect.width, rect.height, pixels))
}

/// Returns `gain * p + offset` for every pixel, without clamping.
pub fn affine_intensity(img: &GrayImage, gain: f64, offset: f64) -> Result<GrayImage> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::InvalidGain(gain));
    }
    img.map(|p| gain * p + offset)
}

/// Reads a PGM (P2 or P5, maxval <= 255) or 8-bit grayscale PNG file.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    decode_image(&bytes)
}

/// Decodes an in-memory PGM or PNG, dispatching on the magic bytes.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' {
        decode_pgm(bytes)
    } else {
        Err(Error::UnsupportedFormat("unknown magic number".into()))
    }
}

/// Writes `img` as a binary (P5) PGM, clamping to `[0, 255]` and rounding
/// half up.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.pixels.iter().map(|&p| quantize(p)));
    out
}

fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let binary = match &bytes[..2] {
        b"P5" => true,
        b"P2" => false,
        b"P1" | b"P4" => return Err(Error::UnsupportedFormat("bitmap (PBM) input".into())),
        b"P3" | b"P6" => return Err(Error::UnsupportedFormat("color (PPM) input".into())),
        b"P7" => return Err(Error::UnsupportedFormat("PAM input".into())),
        _ => return Err(Error::UnsupportedFormat("unknown magic number".into())),
    };
    let mut header = HeaderReader { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::CorruptData(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 {
        return Err(Error::CorruptData("maxval is zero".into()));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("16-bit PGM (maxval {maxval})")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::CorruptData("image dimensions overflow".into()))?;

    let pixels = if binary {
        // exactly one whitespace byte separates maxval from the raster
        let start = header.pos + 1;
        let raster = bytes
            .get(start..start.saturating_add(count))
            .filter(|r| r.len() == count)
            .ok_or_else(|| {
                Error::CorruptData(format!(
                    "expected {count} raster bytes, found {}",
                    bytes.len().saturating_sub(start)
                ))
            })?;
        raster.iter().map(|&b| f64::from(b)).collect::<Vec<_>>()
    } else {
        let mut pixels = Vec::with_capacity(count);
        for k in 0..count {
            let v = header.number("sample").map_err(|_| {
                Error::CorruptData(format!("expected {count} samples, found {k}"))
            })?;
            if v > maxval {
                return Err(Error::CorruptData(format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f64);
        }
        pixels
    };
    if binary && pixels.iter().any(|&p| p > maxval as f64) {
        return Err(Error::CorruptData(format!("sample exceeds maxval {maxval}")));
    }
    GrayImage::new(width, height, pixels)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::CorruptData(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptData(format!("{what} out of range")))
    }
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    let mut reader = decoder.read_info().map_err(png_error)?;
    let info = reader.info();
    match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => {}
        (png::ColorType::Grayscale, depth) => {
            return Err(Error::UnsupportedFormat(format!("{depth:?} grayscale PNG")))
        }
        (color, _) => return Err(Error::UnsupportedFormat(format!("{color:?} PNG"))),
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::CorruptData("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_error)?;
    let stride = frame.line_size;
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf.chunks(stride).take(height) {
        pixels.extend(row[..width].iter().map(|&b| f64::from(b)));
    }
    GrayImage::new(width, height, pixels)
}

fn png_error(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::CorruptData("truncated PNG".into())
        }
        other => Error::CorruptData(other.to_string()),
    }
}
