//! Ground-truth illuminants from the achromatic row of a ColorChecker.
//!
//! The chart is rectified, a sample square is replicated over all 24 patches
//! and the per-channel median of the brightest achromatic patch that has no
//! sample above the saturation level becomes the illuminant. All three
//! channels always come from that one patch.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    rectify_chart, sample_patch, ChartLayout, ACHROMATIC_PATCHES, DEFAULT_RECT_HEIGHT,
    DEFAULT_RECT_WIDTH, PATCH_COUNT,
};
use crate::image::{CameraProfile, LinearImage, PixelRgb};
use crate::util::{csv_bytes, csv_reader, csv_writer, fmt_sig9, median, parse_f64, read_file, write_atomic};

pub const GT_HEADER: [&str; 7] = [
    "image_id",
    "R",
    "G",
    "B",
    "patch_index",
    "camera_id",
    "black_level_subtracted",
];

/// Summary of one patch's sample square, in raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStats {
    pub patch_index: usize,
    pub median_rgb: PixelRgb,
    /// Largest single count over all samples and channels.
    pub max_sample: f64,
    /// Mean over all samples of all three channels.
    pub brightness: f64,
}

pub fn patch_stats(samples: &[PixelRgb], patch_index: usize) -> Result<PatchStats> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut chan: [Vec<f64>; 3] = Default::default();
    let mut sum = 0.0;
    let mut max_sample = f64::NEG_INFINITY;
    for s in samples {
        for (c, v) in s.to_array().into_iter().enumerate() {
            chan[c].push(v);
            sum += v;
            max_sample = max_sample.max(v);
        }
    }
    let [r, g, b] = chan;
    let (mut r, mut g, mut b) = (r, g, b);
    Ok(PatchStats {
        patch_index,
        median_rgb: PixelRgb::new(median(&mut r), median(&mut g), median(&mut b)),
        max_sample,
        brightness: sum / (3 * samples.len()) as f64,
    })
}

/// Picks the brightest achromatic patch with no sample strictly above
/// `saturation_level`. Equal brightness resolves to the lower (whiter) index.
pub fn select_achromatic_patch(stats: &[PatchStats], saturation_level: f64) -> Result<usize> {
    stats
        .iter()
        .filter(|s| ACHROMATIC_PATCHES.contains(&s.patch_index))
        .filter(|s| s.max_sample <= saturation_level)
        .min_by(|a, b| {
            b.brightness
                .total_cmp(&a.brightness)
                .then(a.patch_index.cmp(&b.patch_index))
        })
        .map(|s| s.patch_index)
        .ok_or(Error::NoValidAchromaticPatch)
}

/// One image's reference illuminant, unnormalized counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub illuminant: PixelRgb,
    /// Achromatic patch the three channels were read from.
    pub patch_index: usize,
    pub camera_id: String,
    pub black_level_subtracted: bool,
}

impl GroundTruthRecord {
    fn validate(&self) -> Result<()> {
        if !ACHROMATIC_PATCHES.contains(&self.patch_index) {
            return Err(Error::MalformedCsv(format!(
                "{}: patch_index {} is not in the achromatic row",
                self.image_id, self.patch_index
            )));
        }
        let px = self.illuminant;
        if !px.is_finite() || px.r <= 0.0 || px.g <= 0.0 || px.b <= 0.0 {
            return Err(Error::MalformedCsv(format!(
                "{}: illuminant components must be positive",
                self.image_id
            )));
        }
        if self.image_id.is_empty() {
            return Err(Error::MalformedCsv("empty image_id".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub rect_width: usize,
    pub rect_height: usize,
    /// When false the raw patch median is kept, as in sets built without
    /// removing the dark offset.
    pub subtract_black_level: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            rect_width: DEFAULT_RECT_WIDTH,
            rect_height: DEFAULT_RECT_HEIGHT,
            subtract_black_level: true,
        }
    }
}

/// Per-patch statistics for all 24 patches of a chart.
pub fn chart_patch_stats(img: &LinearImage, layout: &ChartLayout, opts: &ExtractOptions) -> Result<Vec<PatchStats>> {
    layout.corners.validate(img.width(), img.height())?;
    let rect = rectify_chart(img, &layout.corners, opts.rect_width, opts.rect_height)?;
    let grid = layout.grid(opts.rect_width, opts.rect_height)?;
    (0..PATCH_COUNT)
        .map(|i| {
            let samples = sample_patch(&rect, grid.centers()[i], grid.half_size())?;
            patch_stats(&samples, i)
        })
        .collect()
}

pub fn compute_ground_truth(
    image_id: &str,
    img: &LinearImage,
    layout: &ChartLayout,
    camera: &CameraProfile,
    opts: &ExtractOptions,
) -> Result<GroundTruthRecord> {
    camera.validate()?;
    let stats = chart_patch_stats(img, layout, opts)?;
    let chosen = select_achromatic_patch(&stats[ACHROMATIC_PATCHES], camera.saturation_level)?;
    let raw = stats[chosen].median_rgb;
    let illuminant = if opts.subtract_black_level {
        let level = camera.black_level;
        PixelRgb::new(
            (raw.r - level).max(0.0),
            (raw.g - level).max(0.0),
            (raw.b - level).max(0.0),
        )
    } else {
        raw
    };
    if illuminant.r <= 0.0 || illuminant.g <= 0.0 || illuminant.b <= 0.0 {
        return Err(Error::DegenerateGroundTruth);
    }
    Ok(GroundTruthRecord {
        image_id: image_id.to_string(),
        illuminant,
        patch_index: chosen,
        camera_id: camera.camera_id.clone(),
        black_level_subtracted: opts.subtract_black_level,
    })
}

pub fn gt_to_csv(records: &[GroundTruthRecord]) -> Result<Vec<u8>> {
    let mut sorted: Vec<&GroundTruthRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    for w in sorted.windows(2) {
        if w[0].image_id == w[1].image_id {
            return Err(Error::DuplicateImageId(w[0].image_id.clone()));
        }
    }
    let mut w = csv_writer();
    w.write_record(GT_HEADER)?;
    for r in sorted {
        r.validate()?;
        w.write_record([
            r.image_id.clone(),
            fmt_sig9(r.illuminant.r),
            fmt_sig9(r.illuminant.g),
            fmt_sig9(r.illuminant.b),
            r.patch_index.to_string(),
            r.camera_id.clone(),
            r.black_level_subtracted.to_string(),
        ])?;
    }
    csv_bytes(w)
}

pub fn gt_from_csv(bytes: &[u8]) -> Result<Vec<GroundTruthRecord>> {
    let mut rdr = csv_reader(bytes);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != GT_HEADER {
        return Err(Error::MalformedCsv(format!(
            "expected header {:?}, found {:?}",
            GT_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut by_id = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != GT_HEADER.len() {
            return Err(Error::MalformedCsv(format!("row has {} fields", row.len())));
        }
        let flag = match &row[6] {
            "true" => true,
            "false" => false,
            other => return Err(Error::MalformedCsv(format!("bad flag {other:?}"))),
        };
        let rec = GroundTruthRecord {
            image_id: row[0].to_string(),
            illuminant: PixelRgb::new(
                parse_f64(&row[1], "R")?,
                parse_f64(&row[2], "G")?,
                parse_f64(&row[3], "B")?,
            ),
            patch_index: row[4]
                .parse()
                .map_err(|_| Error::MalformedCsv(format!("bad patch_index {:?}", &row[4])))?,
            camera_id: row[5].to_string(),
            black_level_subtracted: flag,
        };
        rec.validate()?;
        if by_id.contains_key(&rec.image_id) {
            return Err(Error::DuplicateImageId(rec.image_id));
        }
        by_id.insert(rec.image_id.clone(), rec);
    }
    Ok(by_id.into_values().collect())
}

pub fn write_gt(records: &[GroundTruthRecord], path: &Path) -> Result<()> {
    write_atomic(path, &gt_to_csv(records)?)
}

pub fn read_gt(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    gt_from_csv(&read_file(path)?)
}
