//! Raster ingestion (portable graymap/pixmap), intensity extraction and
//! rotation.
//!
//! Coordinates: `x` grows rightward, `y` grows downward, the origin is the
//! centre of the top-left pixel. Angles are counter-clockwise in the
//! mathematical plane, i.e. with `y` negated; visually this is also a
//! counter-clockwise turn of the picture.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed image at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported image at byte {offset}: {reason}")]
    Unsupported { offset: usize, reason: String },
    #[error("invalid image dimensions {width}x{height}x{channels}")]
    Dimensions {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("sample count {got} does not match {expected}")]
    SampleCount { expected: usize, got: usize },
    #[error("intensity {value} at index {index} outside [0, 255]")]
    OutOfRange { index: usize, value: f64 },
}

/// A subpixel position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// 8-bit raster, 1 (gray) or 3 (RGB) interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::Dimensions {
                width,
                height,
                channels,
            });
        }
        let expected = width * height * channels;
        if samples.len() != expected {
            return Err(ImageError::SampleCount {
                expected,
                got: samples.len(),
            });
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Quantizes an intensity map to a single-channel raster (round half away
    /// from zero).
    pub fn from_intensity(map: &IntensityMap) -> Self {
        let samples = map
            .values()
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        RasterImage {
            width: map.width(),
            height: map.height(),
            channels: 1,
            samples,
        }
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

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }
}

/// Row-major floating grid. Used for gradients, tensor components and
/// responses, where values are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Dimensions {
                width,
                height,
                channels: 1,
            });
        }
        if values.len() != width * height {
            return Err(ImageError::SampleCount {
                expected: width * height,
                got: values.len(),
            });
        }
        Ok(Grid {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Sample with replicated-edge extension.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.values[yc * self.width + xc]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Pixel intensities in [0, 255]; the domain of all image math.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap(Grid);

impl IntensityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        Self::from_grid(Grid::new(width, height, values)?)
    }

    pub fn from_grid(grid: Grid) -> Result<Self, ImageError> {
        if let Some((index, &value)) = grid
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=255.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(IntensityMap(grid))
    }

    /// Constant map.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        IntensityMap(Grid::filled(width, height, value.clamp(0.0, 255.0)))
    }

    /// Builds a map from a pixel function; values are clamped into [0, 255].
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        IntensityMap(Grid::from_fn(width, height, |x, y| {
            f(x, y).clamp(0.0, 255.0)
        }))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    /// True if the point lies in `[0, width) x [0, height)`.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width() as f64 && p.y < self.height() as f64
    }
}

/// Green channel for RGB, the samples themselves for gray.
pub fn to_intensity(img: &RasterImage) -> IntensityMap {
    let values = match img.channels {
        3 => img.samples.chunks_exact(3).map(|px| px[1] as f64).collect(),
        _ => img.samples.iter().map(|&s| s as f64).collect(),
    };
    IntensityMap(Grid {
        width: img.width,
        height: img.height,
        values,
    })
}

/// Rotates the map content by `angle_deg` (counter-clockwise) about `center`.
///
/// Each output pixel is bilinearly sampled at the source position obtained by
/// rotating it by `-angle_deg`; taps that fall outside the map contribute 0.
pub fn rotate_about(map: &IntensityMap, center: Point, angle_deg: f64) -> IntensityMap {
    let angle = angle_deg.rem_euclid(360.0);
    if angle == 0.0 {
        return map.clone();
    }
    let (sin, cos) = angle.to_radians().sin_cos();
    let (w, h) = (map.width(), map.height());
    let src = map.grid();
    let tap = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            src.get(x as usize, y as usize)
        }
    };
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let out = Grid::from_fn(w, h, |x, y| {
        let dx = x as f64 - center.x;
        let dy = y as f64 - center.y;
        let sx = snap(center.x + dx * cos - dy * sin);
        let sy = snap(center.y + dx * sin + dy * cos);
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
        let bottom = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 255.0)
    });
    IntensityMap(out)
}

/// Lossless quarter turn counter-clockwise: `(x, y)` moves to
/// `(y, width - 1 - x)` and the output is `height x width`.
pub fn rotate90(map: &IntensityMap) -> IntensityMap {
    let (w, h) = (map.width(), map.height());
    let mut out = Grid::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            out.set(y, w - 1 - x, map.get(x, y));
        }
    }
    IntensityMap(out)
}

/// Reads a P2/P3/P5/P6 file with maximum sample value 255.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pnm(&bytes)
}

/// Writes binary P5 (gray) or P6 (RGB).
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_pnm(img: &RasterImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let header = format!("{magic} {} {} 255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.samples.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.samples);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
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

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::Malformed {
                offset: start,
                reason: format!("expected {what}"),
            });
        }
        if let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_whitespace() && b != b'#' {
                return Err(ImageError::Malformed {
                    offset: self.pos,
                    reason: format!("unexpected byte 0x{b:02x} in {what}"),
                });
            }
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Malformed {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

/// Decodes an in-memory portable graymap/pixmap.
pub fn decode_pnm(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(ImageError::Unsupported {
            offset: 0,
            reason: "missing portable anymap magic".into(),
        });
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        other => {
            return Err(ImageError::Unsupported {
                offset: 1,
                reason: format!("magic P{}", other as char),
            })
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maximum sample value")?;
    if maxval != 255 {
        return Err(ImageError::Unsupported {
            offset: maxval_at,
            reason: format!("maximum sample value {maxval} (only 255 is supported)"),
        });
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Malformed {
            offset: maxval_at,
            reason: format!("zero dimension {width}x{height}"),
        });
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::Malformed {
            offset: maxval_at,
            reason: "dimensions overflow".into(),
        })?;

    let samples = if binary {
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => {
                return Err(ImageError::Malformed {
                    offset: cur.pos,
                    reason: "missing whitespace after header".into(),
                })
            }
        }
        let raster = &bytes[cur.pos..];
        if raster.len() < expected {
            return Err(ImageError::Malformed {
                offset: bytes.len(),
                reason: format!("raster truncated: {} of {expected} bytes", raster.len()),
            });
        }
        raster[..expected].to_vec()
    } else {
        let mut samples = Vec::with_capacity(expected);
        for _ in 0..expected {
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > 255 {
                return Err(ImageError::Malformed {
                    offset: at,
                    reason: format!("sample {v} exceeds 255"),
                });
            }
            samples.push(v as u8);
        }
        samples
    };
    RasterImage::new(width, height, channels, samples)
}
