//! Synthetic chart scenes with a known illuminant.
//!
//! A flat-spectrum 24-patch chart is placed in the image through a
//! homography from canonical chart space, where the chart covers
//! `[0, 6] x [0, 4]` and patch `(row, col)` sits inside the unit cell
//! `[col, col+1] x [row, row+1]`. Each sample is
//!
//! ```text
//! clip(illuminant_c * reflectance_c * exposure + black_level + noise, 0, clip_level)
//! ```
//!
//! The default reflectances are toolkit values for a flat-spectrum chart, not
//! measurements of a physical ColorChecker.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_homography, ChartCorners, ChartLayout, Homography, Point2, CHART_COLS, CHART_ROWS, PATCH_COUNT};
use crate::image::{save_image, sidecar_path, CameraProfile, LinearImage, PixelRgb, DEFAULT_BIT_DEPTH, DEFAULT_SATURATION_LEVEL};
use crate::util::write_atomic;

/// Inset of each patch inside its unit cell, in chart units.
pub const PATCH_MARGIN: f64 = 0.1;
/// Reflectance of the chart body between patches.
pub const FRAME_REFLECTANCE: f64 = 0.04;
pub const ACHROMATIC_REFLECTANCES: [f64; 6] = [0.90, 0.59, 0.36, 0.20, 0.09, 0.03];

pub fn default_reflectances() -> Vec<[f64; 3]> {
    let mut t = vec![
        [0.17, 0.09, 0.06],
        [0.55, 0.33, 0.25],
        [0.13, 0.20, 0.33],
        [0.10, 0.15, 0.06],
        [0.23, 0.21, 0.42],
        [0.14, 0.50, 0.41],
        [0.69, 0.20, 0.03],
        [0.07, 0.11, 0.36],
        [0.54, 0.09, 0.12],
        [0.10, 0.04, 0.14],
        [0.34, 0.50, 0.05],
        [0.75, 0.36, 0.02],
        [0.03, 0.05, 0.28],
        [0.07, 0.30, 0.07],
        [0.42, 0.03, 0.04],
        [0.83, 0.58, 0.01],
        [0.51, 0.09, 0.30],
        [0.01, 0.24, 0.38],
    ];
    t.extend(ACHROMATIC_REFLECTANCES.iter().map(|&v| [v, v, v]));
    t
}

/// Chart placement: a matrix from chart space to image pixels, or the image
/// positions of the four outer chart corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pose {
    Matrix { matrix: [[f64; 3]; 3] },
    Corners { corners: [[f64; 2]; 4] },
}

impl Pose {
    pub fn from_corners(c: [Point2; 4]) -> Self {
        Pose::Corners {
            corners: c.map(|p| [p.x, p.y]),
        }
    }

    pub fn homography(&self) -> Result<Homography> {
        match self {
            Pose::Matrix { matrix } => Homography::from_matrix(*matrix),
            Pose::Corners { corners } => {
                fit_homography(&chart_space_corners(), &corners.map(|c| Point2::new(c[0], c[1])))
            }
        }
        .map_err(|e| Error::InvalidScene(format!("bad pose: {e}")))
    }
}

/// Outer corners of the chart in chart space, in canonical order.
pub fn chart_space_corners() -> [Point2; 4] {
    let (w, h) = (CHART_COLS as f64, CHART_ROWS as f64);
    [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ]
}

/// A fronto-parallel chart spanning half the image width, centered.
pub fn centered_pose(width: usize, height: usize) -> Pose {
    let cw = width as f64 / 2.0;
    let ch = cw * CHART_ROWS as f64 / CHART_COLS as f64;
    let x0 = (width as f64 - cw) / 2.0;
    let y0 = (height as f64 - ch) / 2.0;
    Pose::from_corners([
        Point2::new(x0, y0),
        Point2::new(x0 + cw, y0),
        Point2::new(x0 + cw, y0 + ch),
        Point2::new(x0, y0 + ch),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Constant { rgb: [f64; 3] },
    /// Independent uniform draws per pixel and channel.
    Uniform { low: f64, high: f64 },
    /// Explicit row-major reflectances, one per pixel.
    Field { values: Vec<[f64; 3]> },
}

impl Default for Background {
    fn default() -> Self {
        Background::Uniform { low: 0.05, high: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub bit_depth: u32,
    pub camera_id: String,
    pub saturation_level: f64,
    /// Light color in counts per unit reflectance and exposure.
    pub illuminant: [f64; 3],
    pub exposure: f64,
    /// Defaults to [`centered_pose`].
    pub pose: Option<Pose>,
    pub reflectances: Vec<[f64; 3]>,
    pub background: Background,
    pub black_level: f64,
    pub noise_sigma: f64,
    /// Defaults to `2^bit_depth - 1`.
    pub clip_level: Option<f64>,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_id: "scene".into(),
            width: 640,
            height: 480,
            bit_depth: DEFAULT_BIT_DEPTH,
            camera_id: "synthetic".into(),
            saturation_level: DEFAULT_SATURATION_LEVEL,
            illuminant: [3000.0, 2500.0, 1700.0],
            exposure: 1.0,
            pose: None,
            reflectances: default_reflectances(),
            background: Background::default(),
            black_level: 0.0,
            noise_sigma: 0.0,
            clip_level: None,
            rng_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn clip(&self) -> f64 {
        self.clip_level
            .unwrap_or(((1u64 << self.bit_depth.min(16)) - 1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if self.width == 0 || self.height == 0 {
            return bad("empty image".into());
        }
        if self.bit_depth == 0 || self.bit_depth > 16 {
            return bad(format!("bit_depth {} outside 1..=16", self.bit_depth));
        }
        if self.illuminant.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("illuminant must be positive in every channel".into());
        }
        if !(self.exposure > 0.0) || !self.exposure.is_finite() {
            return bad("exposure must be positive".into());
        }
        if !(self.black_level >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("black_level and noise_sigma must be >= 0".into());
        }
        if !(self.clip() > self.black_level) {
            return bad("clip_level must exceed black_level".into());
        }
        if self.reflectances.len() != PATCH_COUNT {
            return bad(format!("need {PATCH_COUNT} reflectances, got {}", self.reflectances.len()));
        }
        if self.reflectances.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("reflectances must lie in [0, 1]".into());
        }
        let greys = &self.reflectances[18..];
        if greys.iter().any(|g| g[0] != g[1] || g[1] != g[2]) {
            return bad("achromatic patches must have R = G = B".into());
        }
        if greys.windows(2).any(|w| !(w[0][0] > w[1][0])) {
            return bad("achromatic reflectances must strictly decrease from white".into());
        }
        if let Background::Field { values } = &self.background {
            if values.len() != self.width * self.height {
                return bad("background field size does not match the image".into());
            }
        }
        CameraProfile::new(self.camera_id.clone(), self.black_level, self.saturation_level)
            .map_err(|e| Error::InvalidScene(e.to_string()))?;
        Ok(())
    }

    pub fn pose_or_default(&self) -> Pose {
        self.pose
            .clone()
            .unwrap_or_else(|| centered_pose(self.width, self.height))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub image_id: String,
    pub image: LinearImage,
    pub true_illuminant: PixelRgb,
    pub chart: ChartLayout,
    pub camera: CameraProfile,
}

/// Reflectance at a chart-space point, or `None` off the chart.
fn chart_reflectance(q: Point2, table: &[[f64; 3]]) -> Option<[f64; 3]> {
    let (w, h) = (CHART_COLS as f64, CHART_ROWS as f64);
    if !(q.x >= 0.0 && q.y >= 0.0 && q.x <= w && q.y <= h) {
        return None;
    }
    let col = (q.x.floor() as usize).min(CHART_COLS - 1);
    let row = (q.y.floor() as usize).min(CHART_ROWS - 1);
    let (fx, fy) = (q.x - col as f64, q.y - row as f64);
    let inside = |f: f64| (PATCH_MARGIN..=1.0 - PATCH_MARGIN).contains(&f);
    if inside(fx) && inside(fy) {
        Some(table[row * CHART_COLS + col])
    } else {
        Some([FRAME_REFLECTANCE; 3])
    }
}

/// Reflectance of every pixel, row-major.
fn reflectance_field(spec: &SceneSpec, pose: &Homography) -> Result<Vec<[f64; 3]>> {
    let back = pose.inverse()?;
    let mut bg_rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut out = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let i = y * spec.width + x;
            let bg = match &spec.background {
                Background::Constant { rgb } => *rgb,
                Background::Uniform { low, high } => {
                    std::array::from_fn(|_| bg_rng.random_range(*low..=*high))
                }
                Background::Field { values } => values[i],
            };
            let q = back.project(Point2::new(x as f64, y as f64));
            out.push(chart_reflectance(q, &spec.reflectances).unwrap_or(bg));
        }
    }
    Ok(out)
}

fn chart_layout(spec: &SceneSpec, pose: &Homography) -> Result<ChartLayout> {
    let corners = chart_space_corners().map(|p| pose.project(p));
    ChartCorners(corners)
        .validate(spec.width, spec.height)
        .map_err(|e| Error::InvalidScene(format!("pose places chart outside image: {e}")))?;
    Ok(ChartLayout::new(corners))
}

fn render_field(spec: &SceneSpec, field: &[[f64; 3]], layout: ChartLayout) -> Result<RenderedScene> {
    let clip = spec.clip();
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidScene(e.to_string()))?)
    } else {
        None
    };
    // noise uses its own stream so it does not shift the background draws
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ 0x6e6f_6973_655f_7374);
    let mut data = Vec::with_capacity(field.len() * 3);
    for rho in field {
        for (l, r) in spec.illuminant.iter().zip(rho) {
            let mut v = l * r * spec.exposure + spec.black_level;
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            data.push(v.clamp(0.0, clip));
        }
    }
    let camera = CameraProfile::new(spec.camera_id.clone(), spec.black_level, spec.saturation_level)?;
    let image = LinearImage::new(spec.width, spec.height, data)?
        .with_bit_depth(spec.bit_depth)
        .with_camera(camera.clone());
    Ok(RenderedScene {
        image_id: spec.image_id.clone(),
        image,
        true_illuminant: PixelRgb::from_array(spec.illuminant),
        chart: layout,
        camera,
    })
}

pub fn render(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let pose = spec.pose_or_default().homography()?;
    let layout = chart_layout(spec, &pose)?;
    let field = reflectance_field(spec, &pose)?;
    render_field(spec, &field, layout)
}

/// A noise-free scene whose spatial mean reflectance is exactly neutral, so
/// the per-channel image means are parallel to the illuminant.
pub fn make_grayworld_scene(illuminant: PixelRgb, size: (usize, usize), rng_seed: u64) -> Result<RenderedScene> {
    let spec = SceneSpec {
        image_id: format!("grayworld-{rng_seed}"),
        width: size.0,
        height: size.1,
        illuminant: illuminant.to_array(),
        background: Background::Uniform { low: 0.05, high: 0.6 },
        rng_seed,
        // unclipped, so the balance survives exactly
        clip_level: Some(f64::MAX),
        ..SceneSpec::default()
    };
    spec.validate()?;
    let pose = spec.pose_or_default().homography()?;
    let layout = chart_layout(&spec, &pose)?;
    let mut field = reflectance_field(&spec, &pose)?;
    let back = pose.inverse()?;
    let is_bg: Vec<bool> = (0..spec.height)
        .flat_map(|y| (0..spec.width).map(move |x| (x, y)))
        .map(|(x, y)| chart_reflectance(back.project(Point2::new(x as f64, y as f64)), &spec.reflectances).is_none())
        .collect();
    let n_bg = is_bg.iter().filter(|b| **b).count();
    if n_bg == 0 {
        return Err(Error::InvalidScene("no background pixels to balance".into()));
    }
    let mut sums = [0.0f64; 3];
    for rho in &field {
        for c in 0..3 {
            sums[c] += rho[c];
        }
    }
    let target = sums.iter().copied().fold(0.0, f64::max);
    let shift: [f64; 3] = std::array::from_fn(|c| (target - sums[c]) / n_bg as f64);
    for (rho, bg) in field.iter_mut().zip(&is_bg) {
        if *bg {
            for c in 0..3 {
                rho[c] += shift[c];
            }
        }
    }
    render_field(&spec, &field, layout)
}

impl RenderedScene {
    /// Writes `<id>.ppm`, `<id>.meta.json` and `<id>.chart` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ppm = dir.join(format!("{}.ppm", self.image_id));
        save_image(&self.image, &ppm)?;
        let chart = dir.join(format!("{}.chart", self.image_id));
        write_atomic(&chart, self.chart.to_text().as_bytes())?;
        let meta = sidecar_path(&ppm);
        Ok([ppm, meta, chart])
    }
}
