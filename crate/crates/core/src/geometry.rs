//! ColorChecker geometry: 4-point homographies, chart rectification and the
//! 6x4 patch grid.
//!
//! Pixel `(x, y)` of an image has its center at integer coordinates `(x, y)`.
//! A rectified chart of size `out_w x out_h` spans `[0, out_w-1] x [0, out_h-1]`
//! with the chart's top-left corner at the origin and the achromatic row at the
//! bottom.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{LinearImage, PixelRgb};
use crate::util::fmt_sig9;

pub const CHART_COLS: usize = 6;
pub const CHART_ROWS: usize = 4;
pub const PATCH_COUNT: usize = CHART_COLS * CHART_ROWS;
/// Patch indices of the achromatic row, white first.
pub const ACHROMATIC_PATCHES: std::ops::Range<usize> = 18..24;
pub const WHITE_PATCH: usize = 18;
pub const BLACK_PATCH: usize = 23;

pub const DEFAULT_RECT_WIDTH: usize = 600;
pub const DEFAULT_RECT_HEIGHT: usize = 400;
pub const DEFAULT_HALF_SIZE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    let (u, v) = (a.sub(o), b.sub(o));
    u.x * v.y - u.y * v.x
}

fn extent(pts: &[Point2]) -> f64 {
    let mut s: f64 = 0.0;
    for a in pts {
        for b in pts {
            s = s.max(a.dist(*b));
        }
    }
    s
}

/// True when any three of the four points are (numerically) collinear.
fn has_collinear_triple(pts: &[Point2; 4]) -> bool {
    let scale = extent(pts);
    if scale == 0.0 || !scale.is_finite() {
        return true;
    }
    let tol = 1e-10 * scale * scale;
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| cross(pts[t[0]], pts[t[1]], pts[t[2]]).abs() <= tol)
}

/// A projective map of the plane, stored with `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Wraps a matrix, rescaling it so the bottom-right entry is 1.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let s = m[2][2];
        if s == 0.0 || !s.is_finite() {
            return Err(Error::DegenerateCorrespondence);
        }
        let mut out = m;
        for row in &mut out {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let h = Homography { m: out };
        if h.det() == 0.0 || !h.det().is_finite() {
            return Err(Error::DegenerateCorrespondence);
        }
        Ok(h)
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn project(&self, p: Point2) -> Point2 {
        let m = &self.m;
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        Point2::new(
            (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        )
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Homography> {
        let (a, b) = (&self.m, &first.m);
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Homography::from_matrix(m)
    }

    pub fn inverse(&self) -> Result<Homography> {
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Homography::from_matrix(adj)
    }
}

/// Fits the homography taking each `src[i]` to `dst[i]` by solving the
/// 8-equation direct linear transform system with `h22` fixed to 1.
pub fn fit_homography(src: &[Point2; 4], dst: &[Point2; 4]) -> Result<Homography> {
    if has_collinear_triple(src) || has_collinear_triple(dst) {
        return Err(Error::DegenerateCorrespondence);
    }
    let mut a = [[0.0f64; 8]; 8];
    let mut b = [0.0f64; 8];
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u];
        b[2 * i] = u;
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v];
        b[2 * i + 1] = v;
    }
    let mut h = solve8(&a, &b).ok_or(Error::DegenerateCorrespondence)?;
    // one round of iterative refinement against the original system
    let mut resid = [0.0f64; 8];
    for i in 0..8 {
        resid[i] = b[i] - (0..8).map(|j| a[i][j] * h[j]).sum::<f64>();
    }
    if let Some(dh) = solve8(&a, &resid) {
        for i in 0..8 {
            h[i] += dh[i];
        }
    }
    let m = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]];
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCorrespondence);
    }
    Homography::from_matrix(m)
}

/// Gaussian elimination with partial pivoting.
fn solve8(a: &[[f64; 8]; 8], b: &[f64; 8]) -> Option<[f64; 8]> {
    let mut m = *a;
    let mut rhs = *b;
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..8 {
        let piv = (col..8).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..8 {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                let pivot_row = m[col];
                for (v, p) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *v -= f * p;
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = [0.0f64; 8];
    for row in (0..8).rev() {
        let s: f64 = (row + 1..8).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    Some(x)
}

/// The four outer chart corners in source pixels: top-left, top-right,
/// bottom-right, bottom-left with the achromatic row at the bottom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartCorners(pub [Point2; 4]);

impl ChartCorners {
    /// Checks that the quadrilateral is non-degenerate, convex and inside a
    /// `width x height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let p = &self.0;
        if p.iter().any(|q| !q.x.is_finite() || !q.y.is_finite()) {
            return Err(Error::InvalidChart("non-finite corner".into()));
        }
        if has_collinear_triple(p) {
            return Err(Error::InvalidChart("collinear corners".into()));
        }
        let turns: Vec<f64> = (0..4).map(|i| cross(p[i], p[(i + 1) % 4], p[(i + 2) % 4])).collect();
        if !(turns.iter().all(|&t| t > 0.0) || turns.iter().all(|&t| t < 0.0)) {
            return Err(Error::InvalidChart("corners do not form a convex quadrilateral".into()));
        }
        let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
        if p.iter().any(|q| q.x < 0.0 || q.y < 0.0 || q.x > xmax || q.y > ymax) {
            return Err(Error::InvalidChart(format!(
                "corner outside the {width}x{height} image"
            )));
        }
        Ok(())
    }

    /// Point-in-polygon test, with `margin` pixels of dilation.
    pub fn contains(&self, p: Point2, margin: f64) -> bool {
        let q = &self.0;
        let signs: Vec<f64> = (0..4).map(|i| cross(q[i], q[(i + 1) % 4], p)).collect();
        if signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0) {
            return true;
        }
        margin > 0.0 && (0..4).any(|i| segment_distance(p, q[i], q[(i + 1) % 4]) <= margin)
    }
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0)
    };
    p.dist(Point2::new(a.x + t * ab.x, a.y + t * ab.y))
}

/// Corners of a rectified chart image of the given size.
pub fn rect_corners(out_w: usize, out_h: usize) -> [Point2; 4] {
    let (w, h) = ((out_w - 1) as f64, (out_h - 1) as f64);
    [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ]
}

/// Bilinear sample of all three channels; points outside the image give zero.
pub fn sample_bilinear(img: &LinearImage, p: Point2) -> PixelRgb {
    const EDGE_TOL: f64 = 1e-6;
    let (xmax, ymax) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
    if !(p.x >= -EDGE_TOL && p.y >= -EDGE_TOL && p.x <= xmax + EDGE_TOL && p.y <= ymax + EDGE_TOL) {
        return PixelRgb::default();
    }
    let x = p.x.clamp(0.0, xmax);
    let y = p.y.clamp(0.0, ymax);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
        let bot = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    PixelRgb::from_array(out)
}

/// Warps the chart quadrilateral to a fronto-parallel `out_w x out_h` image.
pub fn rectify_chart(
    img: &LinearImage,
    corners: &ChartCorners,
    out_w: usize,
    out_h: usize,
) -> Result<LinearImage> {
    if out_w < CHART_COLS || out_h < CHART_ROWS {
        return Err(Error::InvalidChart(format!(
            "rectified size {out_w}x{out_h} is smaller than the patch grid"
        )));
    }
    // maps output pixels back into the source
    let back = fit_homography(&rect_corners(out_w, out_h), &corners.0)?;
    LinearImage::from_fn(out_w, out_h, |u, v| {
        sample_bilinear(img, back.project(Point2::new(u as f64, v as f64)))
    })
    .map(|r| {
        let r = r.with_bit_depth(img.bit_depth());
        match img.camera() {
            Some(c) => r.with_camera(c.clone()),
            None => r,
        }
    })
}

/// Centers of the 24 patches in rectified coordinates, row-major from the
/// top-left patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    centers: [Point2; PATCH_COUNT],
    half_size: usize,
}

impl PatchGrid {
    pub fn centers(&self) -> &[Point2; PATCH_COUNT] {
        &self.centers
    }

    pub fn center(&self, row: usize, col: usize) -> Point2 {
        self.centers[row * CHART_COLS + col]
    }

    pub fn half_size(&self) -> usize {
        self.half_size
    }
}

/// Cell centers of the canonical grid for a rectified chart of this size, in
/// the order patch 0, patch 5, patch 23, patch 18.
pub fn default_corner_patch_centers(out_w: usize, out_h: usize) -> [Point2; 4] {
    let cw = (out_w - 1) as f64 / CHART_COLS as f64;
    let ch = (out_h - 1) as f64 / CHART_ROWS as f64;
    let c = |r: usize, col: usize| Point2::new((col as f64 + 0.5) * cw, (r as f64 + 0.5) * ch);
    [c(0, 0), c(0, 5), c(3, 5), c(3, 0)]
}

/// Replicates a sample square over all patches by bilinear interpolation of
/// the four corner-patch centers (given as patch 0, 5, 23, 18).
pub fn patch_centers(corner_centers: &[Point2; 4], half_size: usize) -> Result<PatchGrid> {
    for i in 0..4 {
        for j in i + 1..4 {
            if corner_centers[i].dist(corner_centers[j]) < 1e-9 {
                return Err(Error::InvalidChart("coincident corner patch centers".into()));
            }
        }
    }
    let [p0, p5, p23, p18] = *corner_centers;
    let mut centers = [Point2::default(); PATCH_COUNT];
    for r in 0..CHART_ROWS {
        let v = r as f64 / (CHART_ROWS - 1) as f64;
        for c in 0..CHART_COLS {
            let u = c as f64 / (CHART_COLS - 1) as f64;
            let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), u * v, (1.0 - u) * v];
            centers[r * CHART_COLS + c] = Point2::new(
                w[0] * p0.x + w[1] * p5.x + w[2] * p23.x + w[3] * p18.x,
                w[0] * p0.y + w[1] * p5.y + w[2] * p23.y + w[3] * p18.y,
            );
        }
    }
    let grid = PatchGrid { centers, half_size };
    // neighbouring squares must stay disjoint
    let reach = 2 * half_size as i64;
    for r in 0..CHART_ROWS {
        for c in 0..CHART_COLS {
            let a = round_center(grid.center(r, c));
            let neighbours = [(r, c + 1), (r + 1, c)];
            for (nr, nc) in neighbours {
                if nr < CHART_ROWS && nc < CHART_COLS {
                    let b = round_center(grid.center(nr, nc));
                    if (a.0 - b.0).abs() <= reach && (a.1 - b.1).abs() <= reach {
                        return Err(Error::InvalidChart(format!(
                            "sample squares of half-size {half_size} overlap between neighbouring patches"
                        )));
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn round_center(p: Point2) -> (i64, i64) {
    (p.x.round() as i64, p.y.round() as i64)
}

/// All pixels of the closed square `center ± half_size`, row-major.
///
/// The center is rounded to the nearest pixel.
pub fn sample_patch(img: &LinearImage, center: Point2, half_size: usize) -> Result<Vec<PixelRgb>> {
    if !center.x.is_finite() || !center.y.is_finite() {
        return Err(Error::SampleOutOfBounds);
    }
    let (cx, cy) = round_center(center);
    let h = half_size as i64;
    if cx - h < 0 || cy - h < 0 || cx + h >= img.width() as i64 || cy + h >= img.height() as i64 {
        return Err(Error::SampleOutOfBounds);
    }
    let mut out = Vec::with_capacity((2 * half_size + 1).pow(2));
    for y in (cy - h)..=(cy + h) {
        for x in (cx - h)..=(cx + h) {
            out.push(img.pixel(x as usize, y as usize));
        }
    }
    Ok(out)
}

/// Contents of a `.chart` coordinate file.
///
/// ```text
/// corners: x0 y0 x1 y1 x2 y2 x3 y3
/// corner_patch_centers: ...   (optional, 8 numbers, rectified coordinates)
/// half_size: N                (optional)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ChartLayout {
    pub corners: ChartCorners,
    pub corner_patch_centers: Option<[Point2; 4]>,
    pub half_size: Option<usize>,
}

impl ChartLayout {
    pub fn new(corners: [Point2; 4]) -> Self {
        ChartLayout {
            corners: ChartCorners(corners),
            corner_patch_centers: None,
            half_size: None,
        }
    }

    /// Patch grid for a rectified chart of the given size, applying defaults.
    pub fn grid(&self, out_w: usize, out_h: usize) -> Result<PatchGrid> {
        let centers = self
            .corner_patch_centers
            .unwrap_or_else(|| default_corner_patch_centers(out_w, out_h));
        patch_centers(&centers, self.half_size.unwrap_or(DEFAULT_HALF_SIZE))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("corners:");
        for p in &self.corners.0 {
            let _ = write!(s, " {} {}", fmt_sig9(p.x), fmt_sig9(p.y));
        }
        s.push('\n');
        if let Some(c) = &self.corner_patch_centers {
            s.push_str("corner_patch_centers:");
            for p in c {
                let _ = write!(s, " {} {}", fmt_sig9(p.x), fmt_sig9(p.y));
            }
            s.push('\n');
        }
        if let Some(h) = self.half_size {
            let _ = writeln!(s, "half_size: {h}");
        }
        s
    }
}

fn parse_points(rest: &str, key: &str) -> Result<[Point2; 4]> {
    let nums: Vec<f64> = rest
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MalformedChartFile(format!("bad number {t:?} in {key}")))
        })
        .collect::<Result<_>>()?;
    if nums.len() != 8 {
        return Err(Error::MalformedChartFile(format!(
            "{key} needs 8 numbers, found {}",
            nums.len()
        )));
    }
    Ok(std::array::from_fn(|i| Point2::new(nums[2 * i], nums[2 * i + 1])))
}

impl FromStr for ChartLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut corners = None;
        let mut centers = None;
        let mut half = None;
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::MalformedChartFile(format!("line without key: {line:?}")))?;
            match key.trim() {
                "corners" => corners = Some(parse_points(rest, "corners")?),
                "corner_patch_centers" => centers = Some(parse_points(rest, "corner_patch_centers")?),
                "half_size" => {
                    half = Some(rest.trim().parse::<usize>().map_err(|_| {
                        Error::MalformedChartFile(format!("bad half_size {:?}", rest.trim()))
                    })?)
                }
                other => {
                    return Err(Error::MalformedChartFile(format!("unknown key {other:?}")));
                }
            }
        }
        let corners = corners.ok_or_else(|| Error::MalformedChartFile("missing corners line".into()))?;
        Ok(ChartLayout {
            corners: ChartCorners(corners),
            corner_patch_centers: centers,
            half_size: half,
        })
    }
}
