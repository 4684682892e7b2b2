//! Statistical illuminant estimators in the (n, p, sigma) framework.
//!
//! For each channel the image is smoothed with a Gaussian of scale `sigma`,
//! reduced to the magnitude of its order-`n` derivatives, and pooled with a
//! Minkowski `p`-norm over the masked pixels. Grey-World, White-Patch,
//! Shades-of-Grey, general Grey-World and the Grey-Edge variants are points
//! in that space.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{ChartCorners, Point2};
use crate::image::{normalize_estimate, LinearImage, PixelRgb};
use crate::util::{csv_bytes, csv_reader, csv_writer, fmt_sig9, parse_f64, read_file, write_atomic};

pub const ESTIMATES_HEADER: [&str; 8] = ["image_id", "algorithm", "n", "p", "sigma", "R", "G", "B"];

/// One member of the (n, p, sigma) family.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub name: String,
    /// Derivative order, 0..=2.
    pub n: u8,
    /// Minkowski norm, `>= 1` or `f64::INFINITY` for the maximum.
    pub p: f64,
    /// Gaussian pre-smoothing scale in pixels.
    pub sigma: f64,
}

impl EstimatorSpec {
    pub fn new(name: impl Into<String>, n: u8, p: f64, sigma: f64) -> Result<Self> {
        let s = EstimatorSpec {
            name: name.into(),
            n,
            p,
            sigma,
        };
        s.validate()?;
        Ok(s)
    }

    /// An unnamed spec, labelled from its parameters.
    pub fn custom(n: u8, p: f64, sigma: f64) -> Result<Self> {
        let mut s = EstimatorSpec::new("", n, p, sigma)?;
        s.name = label_for(n, p, sigma);
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n > 2 {
            return Err(Error::InvalidEstimatorSpec(format!("derivative order {} not in 0..=2", self.n)));
        }
        if !(self.p >= 1.0) {
            return Err(Error::InvalidEstimatorSpec(format!("Minkowski norm p = {} must be >= 1", self.p)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidEstimatorSpec(format!("sigma = {} must be >= 0", self.sigma)));
        }
        Ok(())
    }

    pub fn grey_world() -> Self {
        EstimatorSpec::new("grey-world", 0, 1.0, 0.0).unwrap()
    }

    pub fn white_patch() -> Self {
        EstimatorSpec::new("white-patch", 0, f64::INFINITY, 0.0).unwrap()
    }

    pub fn shades_of_grey(p: f64) -> Result<Self> {
        EstimatorSpec::new(format!("shades-of-grey(p={})", fmt_sig9(p)), 0, p, 0.0)
    }

    pub fn general_grey_world(p: f64, sigma: f64) -> Result<Self> {
        EstimatorSpec::custom(0, p, sigma)
    }

    pub fn grey_edge(order: u8, p: f64, sigma: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidEstimatorSpec("grey-edge needs order 1 or 2".into()));
        }
        EstimatorSpec::custom(order, p, sigma)
    }

    /// Parses a preset name or an explicit `n=..,p=..,sigma=..` triple.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if let Some(p) = presets().into_iter().find(|p| p.name == t) {
            return Ok(p);
        }
        if !t.contains('=') {
            return Err(Error::UnknownEstimator(t.to_string()));
        }
        let (mut n, mut p, mut sigma) = (None, None, None);
        for part in t.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidEstimatorSpec(format!("expected key=value, got {part:?}")))?;
            let v = v.trim();
            let num = || {
                parse_f64(v, k).map_err(|_| Error::InvalidEstimatorSpec(format!("bad value {v:?} for {k}")))
            };
            match k.trim() {
                "n" => {
                    n = Some(v.parse::<u8>().map_err(|_| {
                        Error::InvalidEstimatorSpec(format!("bad derivative order {v:?}"))
                    })?)
                }
                "p" => p = Some(num()?),
                "sigma" | "s" => sigma = Some(num()?),
                other => return Err(Error::InvalidEstimatorSpec(format!("unknown key {other:?}"))),
            }
        }
        EstimatorSpec::custom(n.unwrap_or(0), p.unwrap_or(1.0), sigma.unwrap_or(0.0))
    }
}

fn label_for(n: u8, p: f64, sigma: f64) -> String {
    let family = match n {
        0 => "general-grey-world",
        1 => "grey-edge-1",
        _ => "grey-edge-2",
    };
    format!("{family}(p={},s={})", fmt_sig9(p), fmt_sig9(sigma))
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (n={}, p={}, sigma={})", self.name, self.n, fmt_sig9(self.p), fmt_sig9(self.sigma))
    }
}

/// The preset catalog. Preset p and sigma values are defaults, not tuned optima.
pub fn presets() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::grey_world(),
        EstimatorSpec::white_patch(),
        EstimatorSpec::new("shades-of-grey", 0, 6.0, 0.0).unwrap(),
        EstimatorSpec::new("general-grey-world", 0, 6.0, 2.0).unwrap(),
        EstimatorSpec::new("grey-edge-1", 1, 6.0, 2.0).unwrap(),
        EstimatorSpec::new("grey-edge-2", 2, 6.0, 2.0).unwrap(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlluminantEstimate {
    pub image_id: String,
    pub algorithm: String,
    /// Unit-norm illuminant direction.
    pub rgb: PixelRgb,
}

/// Per-pixel inclusion mask for pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn all(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        PixelMask { width, height, bits }
    }

    /// Only the rectangle `[x0, x0+w) x [y0, y0+h)` is included.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        PixelMask::from_fn(width, height, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
    }

    /// Excludes the chart quadrilateral dilated by `dilation` pixels.
    pub fn without_chart(width: usize, height: usize, corners: &ChartCorners, dilation: f64) -> Self {
        PixelMask::from_fn(width, height, |x, y| {
            !corners.contains(Point2::new(x as f64, y as f64), dilation)
        })
    }

    /// Excludes pixels where any channel is at or above `level`.
    pub fn without_saturated(img: &LinearImage, level: f64) -> Self {
        PixelMask::from_fn(img.width(), img.height(), |x, y| {
            let p = img.pixel(x, y);
            p.r < level && p.g < level && p.b < level
        })
    }

    pub fn and(&self, other: &PixelMask) -> PixelMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        PixelMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized discrete Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_plane(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * row[reflect(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Separable Gaussian smoothing with reflect padding; `sigma == 0` is the identity.
pub fn gaussian_smooth(img: &LinearImage, sigma: f64) -> LinearImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (img.width(), img.height());
    let planes = [0, 1, 2].map(|c| convolve_plane(&img.channel(c), w, h, &kernel));
    LinearImage::from_channels(w, h, planes, img)
}

/// Per-channel derivative magnitude of the smoothed image.
///
/// Order 1 is the gradient norm, order 2 the Frobenius norm of the Hessian
/// `sqrt(fxx^2 + 2 fxy^2 + fyy^2)`, both from central differences.
pub fn derivative_magnitude(img: &LinearImage, n: u8, sigma: f64) -> LinearImage {
    let smooth = gaussian_smooth(img, sigma);
    if n == 0 {
        return smooth;
    }
    let (w, h) = (img.width(), img.height());
    let planes = [0, 1, 2].map(|c| {
        let f = smooth.channel(c);
        let at = |x: isize, y: isize| f[reflect(y, h) * w + reflect(x, w)];
        let mut out = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                out[y as usize * w + x as usize] = if n == 1 {
                    let fx = 0.5 * (at(x + 1, y) - at(x - 1, y));
                    let fy = 0.5 * (at(x, y + 1) - at(x, y - 1));
                    fx.hypot(fy)
                } else {
                    let c0 = at(x, y);
                    let fxx = at(x + 1, y) - 2.0 * c0 + at(x - 1, y);
                    let fyy = at(x, y + 1) - 2.0 * c0 + at(x, y - 1);
                    let fxy = 0.25
                        * (at(x + 1, y + 1) - at(x + 1, y - 1) - at(x - 1, y + 1) + at(x - 1, y - 1));
                    (fxx * fxx + 2.0 * fxy * fxy + fyy * fyy).sqrt()
                };
            }
        }
        out
    });
    LinearImage::from_channels(w, h, planes, img)
}

/// Minkowski mean `((1/N) sum v^p)^(1/p)` over masked values, or the
/// maximum when `p` is infinite.
pub fn minkowski_pool(values: &[f64], p: f64, mask: &[bool]) -> Result<f64> {
    debug_assert_eq!(values.len(), mask.len());
    let picked = || values.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v);
    let count = picked().count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let max = picked().fold(0.0f64, f64::max);
    if p.is_infinite() {
        return Ok(max);
    }
    if p == 1.0 {
        return Ok(picked().sum::<f64>() / count as f64);
    }
    if max == 0.0 {
        return Ok(0.0);
    }
    // scaled by the maximum so large p cannot overflow
    let mean = picked().map(|v| (v / max).powf(p)).sum::<f64>() / count as f64;
    Ok(max * mean.powf(1.0 / p))
}

pub fn estimate(
    image_id: &str,
    img: &LinearImage,
    spec: &EstimatorSpec,
    mask: &PixelMask,
) -> Result<IlluminantEstimate> {
    spec.validate()?;
    if mask.dims() != (img.width(), img.height()) {
        return Err(Error::InvalidImage(format!(
            "mask {:?} does not match image {}x{}",
            mask.dims(),
            img.width(),
            img.height()
        )));
    }
    let mag = derivative_magnitude(img, spec.n, spec.sigma);
    let mut e = [0.0; 3];
    for (c, ec) in e.iter_mut().enumerate() {
        *ec = minkowski_pool(&mag.channel(c), spec.p, mask.bits())?;
    }
    if e.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateEstimate);
    }
    Ok(IlluminantEstimate {
        image_id: image_id.to_string(),
        algorithm: spec.name.clone(),
        rgb: normalize_estimate(PixelRgb::from_array(e))?,
    })
}

/// Signature of an externally supplied estimator.
pub type ExternalFn = dyn Fn(&LinearImage, &PixelMask) -> Result<PixelRgb> + Send + Sync;

#[derive(Clone)]
pub enum Estimator {
    Statistical(EstimatorSpec),
    External(Arc<ExternalFn>),
}

impl fmt::Debug for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Statistical(s) => f.debug_tuple("Statistical").field(s).finish(),
            Estimator::External(_) => f.write_str("External(..)"),
        }
    }
}

/// Named estimators. Filled during setup and shared read-only afterwards.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, Estimator>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    pub fn with_presets() -> Self {
        let mut r = Registry::empty();
        for p in presets() {
            r.entries.insert(p.name.clone(), Estimator::Statistical(p));
        }
        r
    }

    pub fn list_presets(&self) -> Vec<&EstimatorSpec> {
        self.entries
            .values()
            .filter_map(|e| match e {
                Estimator::Statistical(s) => Some(s),
                Estimator::External(_) => None,
            })
            .collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn register(&mut self, spec: EstimatorSpec) -> Result<()> {
        spec.validate()?;
        self.insert(spec.name.clone(), Estimator::Statistical(spec))
    }

    pub fn register_external<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(&LinearImage, &PixelMask) -> Result<PixelRgb> + Send + Sync + 'static,
    {
        self.insert(name.to_string(), Estimator::External(Arc::new(f)))
    }

    fn insert(&mut self, name: String, e: Estimator) -> Result<()> {
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateEstimator(name));
        }
        self.entries.insert(name, e);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Estimator> {
        self.entries.get(name)
    }

    pub fn estimate(
        &self,
        name: &str,
        image_id: &str,
        img: &LinearImage,
        mask: &PixelMask,
    ) -> Result<IlluminantEstimate> {
        match self.get(name).ok_or_else(|| Error::UnknownEstimator(name.to_string()))? {
            Estimator::Statistical(spec) => estimate(image_id, img, spec, mask),
            Estimator::External(f) => {
                let rgb = f(img, mask)?;
                if rgb.r < 0.0 || rgb.g < 0.0 || rgb.b < 0.0 {
                    return Err(Error::DegenerateEstimate);
                }
                Ok(IlluminantEstimate {
                    image_id: image_id.to_string(),
                    algorithm: name.to_string(),
                    rgb: normalize_estimate(rgb)?,
                })
            }
        }
    }
}

/// A row of the estimates CSV. External estimators carry no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub estimate: IlluminantEstimate,
    pub params: Option<(u8, f64, f64)>,
}

pub fn estimates_to_csv(rows: &[EstimateRow]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(ESTIMATES_HEADER)?;
    for r in rows {
        let (n, p, s) = match r.params {
            Some((n, p, s)) => (n.to_string(), fmt_sig9(p), fmt_sig9(s)),
            None => Default::default(),
        };
        let e = &r.estimate;
        w.write_record([
            e.image_id.clone(),
            e.algorithm.clone(),
            n,
            p,
            s,
            fmt_sig9(e.rgb.r),
            fmt_sig9(e.rgb.g),
            fmt_sig9(e.rgb.b),
        ])?;
    }
    csv_bytes(w)
}

pub fn estimates_from_csv(bytes: &[u8]) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv_reader(bytes);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ESTIMATES_HEADER {
        return Err(Error::MalformedCsv(format!(
            "expected header {}",
            ESTIMATES_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != ESTIMATES_HEADER.len() {
            return Err(Error::MalformedCsv(format!("row has {} fields", row.len())));
        }
        let params = if row[2].is_empty() && row[3].is_empty() && row[4].is_empty() {
            None
        } else {
            let n = row[2]
                .parse::<u8>()
                .map_err(|_| Error::MalformedCsv(format!("bad n {:?}", &row[2])))?;
            Some((n, parse_f64(&row[3], "p")?, parse_f64(&row[4], "sigma")?))
        };
        let rgb = PixelRgb::new(
            parse_f64(&row[5], "R")?,
            parse_f64(&row[6], "G")?,
            parse_f64(&row[7], "B")?,
        );
        if !rgb.is_finite() {
            return Err(Error::MalformedCsv("non-finite estimate".into()));
        }
        out.push(EstimateRow {
            estimate: IlluminantEstimate {
                image_id: row[0].to_string(),
                algorithm: row[1].to_string(),
                rgb,
            },
            params,
        });
    }
    Ok(out)
}

pub fn write_estimates(rows: &[EstimateRow], path: &Path) -> Result<()> {
    write_atomic(path, &estimates_to_csv(rows)?)
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    estimates_from_csv(&read_file(path)?)
}
