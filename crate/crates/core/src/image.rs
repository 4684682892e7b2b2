//! Linear sensor images, camera profiles and their on-disk formats.
//!
//! Images are binary PPM (`P6`, maxval 65535, big-endian 16-bit samples, RGB
//! interleaved) holding linear digital counts. Each image has a JSON sidecar
//! with the same basename and a `.meta.json` extension:
//!
//! ```json
//! {"camera_id": "canon5d", "black_level": 129, "bit_depth": 12, "saturation_level": 3300}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_file, write_atomic};

pub const DEFAULT_BIT_DEPTH: u32 = 12;
pub const DEFAULT_SATURATION_LEVEL: f64 = 3300.0;

/// An RGB triple in digital counts or normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelRgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl PixelRgb {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        PixelRgb { r, g, b }
    }

    pub fn splat(v: f64) -> Self {
        PixelRgb::new(v, v, v)
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        PixelRgb::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn dot(self, o: PixelRgb) -> f64 {
        self.r * o.r + self.g * o.g + self.b * o.b
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sum(self) -> f64 {
        self.r + self.g + self.b
    }

    pub fn cross(self, o: PixelRgb) -> PixelRgb {
        PixelRgb::new(
            self.g * o.b - self.b * o.g,
            self.b * o.r - self.r * o.b,
            self.r * o.g - self.g * o.r,
        )
    }

    pub fn scale(self, s: f64) -> PixelRgb {
        PixelRgb::new(self.r * s, self.g * s, self.b * s)
    }

    pub fn offset(self, d: f64) -> PixelRgb {
        PixelRgb::new(self.r + d, self.g + d, self.b + d)
    }

    pub fn is_zero(self) -> bool {
        self.r == 0.0 && self.g == 0.0 && self.b == 0.0
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }
}

/// Channel-wise product.
impl std::ops::Mul for PixelRgb {
    type Output = PixelRgb;

    fn mul(self, o: PixelRgb) -> PixelRgb {
        PixelRgb::new(self.r * o.r, self.g * o.g, self.b * o.b)
    }
}

/// Channel-wise quotient.
impl std::ops::Div for PixelRgb {
    type Output = PixelRgb;

    fn div(self, o: PixelRgb) -> PixelRgb {
        PixelRgb::new(self.r / o.r, self.g / o.g, self.b / o.b)
    }
}

/// Scales an illuminant to unit Euclidean norm.
///
/// Only the direction of the light is recoverable, so estimates and ground
/// truths are compared after this normalization.
pub fn normalize_estimate(v: PixelRgb) -> Result<PixelRgb> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateIlluminant);
    }
    Ok(v.scale(1.0 / n))
}

/// Per-camera sensor constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub camera_id: String,
    /// Dark offset in counts, applied to all three channels.
    pub black_level: f64,
    /// Samples above this raw count disqualify a patch.
    #[serde(default = "default_saturation")]
    pub saturation_level: f64,
}

fn default_saturation() -> f64 {
    DEFAULT_SATURATION_LEVEL
}

impl CameraProfile {
    pub fn new(camera_id: impl Into<String>, black_level: f64, saturation_level: f64) -> Result<Self> {
        let p = CameraProfile {
            camera_id: camera_id.into(),
            black_level,
            saturation_level,
        };
        p.validate()?;
        Ok(p)
    }

    /// Canon 1D as used in the ColorChecker re-processing: no dark offset.
    pub fn canon_1d() -> Self {
        CameraProfile {
            camera_id: "canon1d".into(),
            black_level: 0.0,
            saturation_level: DEFAULT_SATURATION_LEVEL,
        }
    }

    /// Canon 5D: dark offset of 129 counts.
    pub fn canon_5d() -> Self {
        CameraProfile {
            camera_id: "canon5d".into(),
            black_level: 129.0,
            saturation_level: DEFAULT_SATURATION_LEVEL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.black_level >= 0.0) || !self.black_level.is_finite() {
            return Err(Error::InvalidMetadata(format!(
                "black_level must be >= 0, got {}",
                self.black_level
            )));
        }
        if !(self.saturation_level > self.black_level) {
            return Err(Error::InvalidMetadata(format!(
                "saturation_level {} must exceed black_level {}",
                self.saturation_level, self.black_level
            )));
        }
        Ok(())
    }
}

/// Sidecar `.meta.json` contents. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub camera_id: String,
    pub black_level: f64,
    pub bit_depth: u32,
    pub saturation_level: f64,
}

impl ImageMeta {
    pub fn camera(&self) -> Result<CameraProfile> {
        CameraProfile::new(self.camera_id.clone(), self.black_level, self.saturation_level)
    }
}

/// A demosaiced linear image, row-major with interleaved RGB samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    bit_depth: u32,
    data: Vec<f64>,
    camera: Option<CameraProfile>,
}

impl LinearImage {
    /// Builds an image from interleaved RGB data. Values must be finite and nonnegative.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty dimensions {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidImage(format!("sample {v} is negative or not finite")));
        }
        Ok(LinearImage {
            width,
            height,
            bit_depth: DEFAULT_BIT_DEPTH,
            data,
            camera: None,
        })
    }

    pub fn filled(width: usize, height: usize, px: PixelRgb) -> Result<Self> {
        let data = std::iter::repeat_n(px.to_array(), width * height)
            .flatten()
            .collect();
        LinearImage::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> PixelRgb,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y).to_array());
            }
        }
        LinearImage::new(width, height, data)
    }

    pub fn with_bit_depth(mut self, bit_depth: u32) -> Self {
        self.bit_depth = bit_depth;
        self
    }

    pub fn with_camera(mut self, camera: CameraProfile) -> Self {
        self.camera = Some(camera);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn camera(&self) -> Option<&CameraProfile> {
        self.camera.as_ref()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> PixelRgb {
        let i = (y * self.width + x) * 3;
        PixelRgb::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, px: PixelRgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px.to_array());
    }

    /// Extracts one channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub(crate) fn from_channels(
        width: usize,
        height: usize,
        planes: [Vec<f64>; 3],
        template: &LinearImage,
    ) -> LinearImage {
        let mut data = Vec::with_capacity(width * height * 3);
        for ((r, g), b) in planes[0].iter().zip(&planes[1]).zip(&planes[2]) {
            data.extend([*r, *g, *b]);
        }
        LinearImage {
            width,
            height,
            bit_depth: template.bit_depth,
            data,
            camera: template.camera.clone(),
        }
    }

    pub(crate) fn map_values(&self, f: impl Fn(f64) -> f64) -> LinearImage {
        LinearImage {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Multiplies every sample by `alpha` (> 0), as a change of exposure would.
    pub fn scaled(&self, alpha: f64) -> LinearImage {
        self.map_values(|v| v * alpha)
    }

    /// Copies the rectangle `[x0, x0+w) x [y0, y0+h)` into a new image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<LinearImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidImage("crop outside image".into()));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let s = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[s..s + w * 3]);
        }
        Ok(LinearImage {
            width: w,
            height: h,
            data,
            ..self.clone()
        })
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Subtracts a scalar dark offset from every sample, clamping at zero.
pub fn subtract_black_level(img: &LinearImage, level: f64) -> LinearImage {
    debug_assert!(level >= 0.0);
    if level == 0.0 {
        return img.clone();
    }
    img.map_values(|v| (v - level).max(0.0))
}

/// Path of the `.meta.json` sidecar for an image path.
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn read_meta(path: &Path) -> Result<ImageMeta> {
    if !path.exists() {
        return Err(Error::MissingSidecar(path.to_path_buf()));
    }
    let bytes = read_file(path)?;
    let meta: ImageMeta = serde_json::from_slice(&bytes)
        .map_err(|e| Error::InvalidMetadata(format!("{}: {e}", path.display())))?;
    if meta.bit_depth == 0 || meta.bit_depth > 16 {
        return Err(Error::InvalidMetadata(format!(
            "bit_depth {} outside 1..=16",
            meta.bit_depth
        )));
    }
    meta.camera()?;
    Ok(meta)
}

pub fn write_meta(path: &Path, meta: &ImageMeta) -> Result<()> {
    let mut s = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::InvalidMetadata(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Loads a 16-bit PPM together with its sidecar metadata.
pub fn load_image(path: &Path) -> Result<LinearImage> {
    let meta = read_meta(&sidecar_path(path))?;
    let bytes = read_file(path)?;
    let (width, height, data) = decode_ppm16(&bytes)?;
    let max = ((1u64 << meta.bit_depth) - 1) as f64;
    if let Some(&v) = data.iter().find(|&&v| v > max) {
        return Err(Error::ValueExceedsBitDepth { value: v, max });
    }
    let camera = meta.camera()?;
    Ok(LinearImage::new(width, height, data)?
        .with_bit_depth(meta.bit_depth)
        .with_camera(camera))
}

/// Writes the image as a 16-bit PPM plus its sidecar.
///
/// Samples are rounded to the nearest integer count; integer-valued images
/// round-trip exactly through [`load_image`].
pub fn save_image(img: &LinearImage, path: &Path) -> Result<()> {
    let camera = img.camera.clone().unwrap_or_else(CameraProfile::canon_1d);
    let meta = ImageMeta {
        camera_id: camera.camera_id,
        black_level: camera.black_level,
        bit_depth: img.bit_depth,
        saturation_level: camera.saturation_level,
    };
    write_atomic(path, &encode_ppm16(img)?)?;
    write_meta(&sidecar_path(path), &meta)
}

pub fn encode_ppm16(img: &LinearImage) -> Result<Vec<u8>> {
    let header = format!("P6\n{} {}\n65535\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len() * 2);
    out.extend_from_slice(header.as_bytes());
    for &v in &img.data {
        let q = v.round();
        if !(0.0..=65535.0).contains(&q) {
            return Err(Error::InvalidImage(format!("sample {v} does not fit 16 bits")));
        }
        out.extend_from_slice(&(q as u16).to_be_bytes());
    }
    Ok(out)
}

/// Decodes a binary `P6` PPM with 16-bit samples.
pub fn decode_ppm16(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::MalformedHeader(format!(
            "expected magic P6, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_header_int(next_token(bytes, &mut pos)?, "width")?;
    let height = parse_header_int(next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_header_int(next_token(bytes, &mut pos)?, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    if !(256..=65535).contains(&maxval) {
        return Err(Error::MalformedHeader(format!(
            "maxval {maxval} is not a 16-bit maxval"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedHeader("missing whitespace after maxval".into())),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(6))
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::MalformedHeader(format!(
            "raster truncated: {} of {expected} bytes",
            raster.len()
        )));
    }
    let data = raster[..expected]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
        .collect();
    Ok((width, height, data))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&c) = bytes.get(*pos) {
                    *pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(Error::MalformedHeader("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while let Some(c) = bytes.get(*pos) {
        if c.is_ascii_whitespace() || *c == b'#' {
            break;
        }
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_int(tok: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::MalformedHeader(format!("bad {what} {:?}", String::from_utf8_lossy(tok)))
        })
}
