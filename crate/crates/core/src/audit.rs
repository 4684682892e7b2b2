//! Ground-truth forensics: comparing divergent ground-truth sets for the same
//! images, testing the "black level was not subtracted" explanation, and
//! finding records whose R, G and B were read from different patches.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::groundtruth::GroundTruthRecord;
use crate::image::PixelRgb;
use crate::metrics::recovery_error;
use crate::util::{csv_bytes, csv_reader, csv_writer, fmt_sig9, median, parse_f64, read_file, write_atomic};

pub const DEFAULT_OUTLIER_THRESHOLD_DEG: f64 = 0.25;
/// Residual below which an offset hypothesis counts as explaining an image.
pub const OFFSET_MATCH_DEG: f64 = 0.1;
pub const OFFSET_SCAN_MAX: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chromaticity {
    pub r: f64,
    pub g: f64,
}

pub fn chromaticity(v: PixelRgb) -> Result<Chromaticity> {
    let s = v.sum();
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::ZeroSum);
    }
    Ok(Chromaticity { r: v.r / s, g: v.g / s })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtEntry {
    pub rgb: PixelRgb,
    /// Patch each of R, G and B was read from, when the file says.
    pub patches: Option<[usize; 3]>,
}

/// A named ground-truth set keyed by image id. Accepts legacy files that
/// carry only `image_id,R,G,B`.
#[derive(Debug, Clone, PartialEq)]
pub struct GtSet {
    pub name: String,
    pub entries: BTreeMap<String, GtEntry>,
}

impl GtSet {
    pub fn from_records(name: impl Into<String>, records: &[GroundTruthRecord]) -> Self {
        GtSet {
            name: name.into(),
            entries: records
                .iter()
                .map(|r| {
                    (
                        r.image_id.clone(),
                        GtEntry {
                            rgb: r.illuminant,
                            patches: Some([r.patch_index; 3]),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_pairs(name: impl Into<String>, pairs: impl IntoIterator<Item = (String, PixelRgb)>) -> Self {
        GtSet {
            name: name.into(),
            entries: pairs
                .into_iter()
                .map(|(k, rgb)| (k, GtEntry { rgb, patches: None }))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses a ground-truth CSV. Required columns: `image_id,R,G,B`.
    /// Optional: `patch_index`, or per-channel
    /// `patch_index_R,patch_index_G,patch_index_B`. Other columns are ignored.
    pub fn from_csv(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv_reader(bytes);
        let header = rdr.headers()?.clone();
        let col = |n: &str| header.iter().position(|h| h == n);
        let need = |n: &str| col(n).ok_or_else(|| Error::MalformedCsv(format!("missing column {n}")));
        let (id, r, g, b) = (need("image_id")?, need("R")?, need("G")?, need("B")?);
        let per_channel = match (col("patch_index_R"), col("patch_index_G"), col("patch_index_B")) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            (None, None, None) => None,
            _ => return Err(Error::MalformedCsv("incomplete per-channel patch columns".into())),
        };
        let single = col("patch_index");
        let mut entries = BTreeMap::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |i: usize| {
                row.get(i)
                    .ok_or_else(|| Error::MalformedCsv(format!("row {} is too short", line + 2)))
            };
            let parse_idx = |i: usize| -> Result<usize> {
                let f = field(i)?;
                f.parse()
                    .map_err(|_| Error::MalformedCsv(format!("row {}: bad patch index {f:?}", line + 2)))
            };
            let rgb = PixelRgb::new(
                parse_f64(field(r)?, "R")?,
                parse_f64(field(g)?, "G")?,
                parse_f64(field(b)?, "B")?,
            );
            if !rgb.is_finite() || rgb.r < 0.0 || rgb.g < 0.0 || rgb.b < 0.0 {
                return Err(Error::MalformedCsv(format!("row {}: invalid RGB", line + 2)));
            }
            let patches = match (per_channel, single) {
                (Some(cols), _) => Some([parse_idx(cols[0])?, parse_idx(cols[1])?, parse_idx(cols[2])?]),
                (None, Some(c)) => Some([parse_idx(c)?; 3]),
                (None, None) => None,
            };
            let key = field(id)?.to_string();
            if entries.insert(key.clone(), GtEntry { rgb, patches }).is_some() {
                return Err(Error::DuplicateImageId(key));
            }
        }
        Ok(GtSet {
            name: name.into(),
            entries,
        })
    }

    pub fn read(name: impl Into<String>, path: &Path) -> Result<Self> {
        GtSet::from_csv(name, &read_file(path)?)
    }

    fn common<'a>(&'a self, other: &'a GtSet) -> Vec<(&'a str, PixelRgb, PixelRgb)> {
        self.entries
            .iter()
            .filter_map(|(k, a)| other.entries.get(k).map(|b| (k.as_str(), a.rgb, b.rgb)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetFit {
    pub offset: f64,
    /// Share of common images whose residual is within [`OFFSET_MATCH_DEG`].
    pub fraction_within: f64,
    pub median_residual_deg: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub name_a: String,
    pub name_b: String,
    pub threshold_deg: f64,
    /// Angle between the two sets' vectors, per common image, by image id.
    pub per_image: Vec<(String, f64)>,
    pub outliers: Vec<String>,
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
    pub offset_fit: Option<OffsetFit>,
}

impl DivergenceReport {
    pub fn matched(&self) -> usize {
        self.per_image.len()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv_writer();
        w.write_record(["image_id", "status", "degrees", "outlier"])?;
        for (id, d) in &self.per_image {
            let out = self.outliers.binary_search(id).is_ok();
            w.write_record([id.as_str(), "matched", &fmt_sig9(*d), if out { "true" } else { "false" }])?;
        }
        for id in &self.only_a {
            w.write_record([id.as_str(), "only_a", "", ""])?;
        }
        for id in &self.only_b {
            w.write_record([id.as_str(), "only_b", "", ""])?;
        }
        csv_bytes(w)
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let diffs: Vec<f64> = self.per_image.iter().map(|p| p.1).collect();
        let mut sorted = diffs.clone();
        let med = if sorted.is_empty() { 0.0 } else { median(&mut sorted) };
        let max = diffs.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(s, "compared {} vs {}", self.name_a, self.name_b);
        let _ = writeln!(s, "matched images: {}", self.matched());
        let _ = writeln!(s, "only in {}: {}", self.name_a, self.only_a.len());
        let _ = writeln!(s, "only in {}: {}", self.name_b, self.only_b.len());
        let _ = writeln!(s, "median difference: {med:.6} deg");
        let _ = writeln!(s, "max difference: {max:.6} deg");
        let _ = writeln!(
            s,
            "outliers (> {} deg): {}",
            fmt_sig9(self.threshold_deg),
            self.outliers.len()
        );
        for id in &self.outliers {
            let _ = writeln!(s, "  {id}");
        }
        if let Some(f) = &self.offset_fit {
            let _ = writeln!(
                s,
                "offset {}: {:.2}% within {} deg, median residual {:.6} deg",
                fmt_sig9(f.offset),
                100.0 * f.fraction_within,
                OFFSET_MATCH_DEG,
                f.median_residual_deg
            );
        }
        s
    }
}

pub fn diff_ground_truths(a: &GtSet, b: &GtSet, threshold_deg: f64) -> Result<DivergenceReport> {
    let common = a.common(b);
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let per_image: Vec<(String, f64)> = common
        .iter()
        .map(|(id, x, y)| Ok((id.to_string(), recovery_error(*x, *y)?)))
        .collect::<Result<_>>()?;
    let outliers = per_image
        .iter()
        .filter(|(_, d)| *d > threshold_deg)
        .map(|(id, _)| id.clone())
        .collect();
    let only = |x: &GtSet, y: &GtSet| {
        x.entries
            .keys()
            .filter(|k| !y.entries.contains_key(*k))
            .cloned()
            .collect()
    };
    Ok(DivergenceReport {
        name_a: a.name.clone(),
        name_b: b.name.clone(),
        threshold_deg,
        per_image,
        outliers,
        only_a: only(a, b),
        only_b: only(b, a),
        offset_fit: None,
    })
}

/// Tests the hypothesis that `b` is `a` with `offset` counts added to every
/// channel, i.e. `a` had a black level subtracted and `b` did not.
pub fn explain_offset(a: &GtSet, b: &GtSet, offset: f64) -> Result<OffsetFit> {
    let common = a.common(b);
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let mut residuals: Vec<f64> = common
        .iter()
        .map(|(_, x, y)| recovery_error(x.offset(offset), *y))
        .collect::<Result<_>>()?;
    let within = residuals.iter().filter(|r| **r <= OFFSET_MATCH_DEG).count();
    Ok(OffsetFit {
        offset,
        fraction_within: within as f64 / residuals.len() as f64,
        median_residual_deg: median(&mut residuals),
        count: residuals.len(),
    })
}

/// Sweeps integer offsets `0..=max_offset` and returns the one with the
/// smallest median residual (lowest offset on ties).
pub fn scan_offset(a: &GtSet, b: &GtSet, max_offset: u32) -> Result<OffsetFit> {
    let mut best: Option<OffsetFit> = None;
    for k in 0..=max_offset {
        let fit = explain_offset(a, b, k as f64)?;
        if best
            .as_ref()
            .is_none_or(|bf| fit.median_residual_deg < bf.median_residual_deg)
        {
            best = Some(fit);
        }
    }
    best.ok_or(Error::EmptyIntersection)
}

/// Image ids whose R, G and B come from different patches. `None` when the
/// set carries no patch annotations at all.
pub fn check_same_patch(set: &GtSet) -> Option<Vec<String>> {
    if set.entries.values().all(|e| e.patches.is_none()) {
        return None;
    }
    Some(
        set.entries
            .iter()
            .filter(|(_, e)| matches!(e.patches, Some([r, g, b]) if r != g || g != b))
            .map(|(k, _)| k.clone())
            .collect(),
    )
}

/// CSV `set_name,image_id,r,g`, grouped by set in the given order and sorted
/// by image id within each set.
pub fn chromaticity_scatter_csv(sets: &[GtSet]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["set_name", "image_id", "r", "g"])?;
    for s in sets {
        for (id, e) in &s.entries {
            let c = chromaticity(e.rgb)?;
            w.write_record([s.name.as_str(), id, &fmt_sig9(c.r), &fmt_sig9(c.g)])?;
        }
    }
    csv_bytes(w)
}

pub fn emit_chromaticity_scatter(sets: &[GtSet], path: &Path) -> Result<()> {
    write_atomic(path, &chromaticity_scatter_csv(sets)?)
}
