//! Angular error metrics, corpus summaries and rankings.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::PixelRgb;
use crate::util::{csv_bytes, csv_reader, csv_writer, fmt_sig9, parse_f64, read_file, write_atomic};

pub const ERRORS_HEADER: [&str; 4] = ["image_id", "algorithm", "metric", "degrees"];
pub const RANKING_HEADER: [&str; 8] = [
    "rank", "algorithm", "mean", "median", "trimean", "q95", "best25", "worst25",
];

/// Angle in degrees between two vectors, via `atan2(|a x b|, a . b)`.
///
/// Numerically this is the same angle as `acos` of the normalized dot
/// product, without the loss of precision near 0 degrees.
fn angle_deg(a: PixelRgb, b: PixelRgb) -> f64 {
    let d = a.dot(b);
    let c = a.cross(b).norm();
    c.atan2(d).to_degrees()
}

/// Angle between the estimated and true illuminant directions.
pub fn recovery_error(estimate: PixelRgb, truth: PixelRgb) -> Result<f64> {
    if estimate.is_zero() || truth.is_zero() {
        return Err(Error::ZeroVector);
    }
    Ok(angle_deg(estimate, truth))
}

/// Angle between the channel-wise ratio `truth / estimate` and neutral
/// `(1, 1, 1)`: how far from white a white surface ends up after correcting
/// with the estimate.
pub fn reproduction_error(estimate: PixelRgb, truth: PixelRgb) -> Result<f64> {
    if estimate.r <= 0.0 || estimate.g <= 0.0 || estimate.b <= 0.0 {
        return Err(Error::ZeroChannel);
    }
    if truth.is_zero() {
        return Err(Error::ZeroVector);
    }
    let r = truth / estimate;
    let white = PixelRgb::splat(1.0);
    Ok(angle_deg(r, white))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Recovery,
    Reproduction,
}

impl Metric {
    pub fn error(self, estimate: PixelRgb, truth: PixelRgb) -> Result<f64> {
        match self {
            Metric::Recovery => recovery_error(estimate, truth),
            Metric::Reproduction => reproduction_error(estimate, truth),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Recovery => "recovery",
            Metric::Reproduction => "reproduction",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recovery" => Ok(Metric::Recovery),
            "reproduction" => Ok(Metric::Reproduction),
            other => Err(Error::MalformedCsv(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngularError {
    pub image_id: String,
    pub algorithm: String,
    pub metric: Metric,
    pub degrees: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
    pub q95: f64,
    pub best25_mean: f64,
    pub worst25_mean: f64,
    pub count: usize,
}

/// Linear interpolation between order statistics at position `(n-1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(errors: &[f64]) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::EmptyErrors);
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mean = s.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    let q25 = quantile_sorted(&s, 0.25);
    let q75 = quantile_sorted(&s, 0.75);
    let k = n.div_ceil(4);
    Ok(ErrorSummary {
        mean,
        median,
        trimean: (q25 + 2.0 * median + q75) / 4.0,
        q95: quantile_sorted(&s, 0.95),
        best25_mean: s[..k].iter().sum::<f64>() / k as f64,
        worst25_mean: s[n - k..].iter().sum::<f64>() / k as f64,
        count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Statistic {
    Mean,
    #[default]
    Median,
    Trimean,
    Q95,
    Best25,
    Worst25,
}

impl Statistic {
    pub fn of(self, s: &ErrorSummary) -> f64 {
        match self {
            Statistic::Mean => s.mean,
            Statistic::Median => s.median,
            Statistic::Trimean => s.trimean,
            Statistic::Q95 => s.q95,
            Statistic::Best25 => s.best25_mean,
            Statistic::Worst25 => s.worst25_mean,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Trimean => "trimean",
            Statistic::Q95 => "q95",
            Statistic::Best25 => "best25",
            Statistic::Worst25 => "worst25",
        }
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => Statistic::Mean,
            "median" => Statistic::Median,
            "trimean" => Statistic::Trimean,
            "q95" => Statistic::Q95,
            "best25" => Statistic::Best25,
            "worst25" => Statistic::Worst25,
            other => return Err(Error::InvalidEstimatorSpec(format!("unknown statistic {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingRow {
    pub rank: usize,
    pub algorithm: String,
    pub summary: ErrorSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingTable {
    pub key: Statistic,
    pub rows: Vec<RankingRow>,
}

/// Sorts algorithms ascending by `key`; ties fall back to the mean, then the name.
pub fn rank(summaries: &BTreeMap<String, ErrorSummary>, key: Statistic) -> Result<RankingTable> {
    if summaries.is_empty() {
        return Err(Error::EmptyRanking);
    }
    let mut entries: Vec<(&String, &ErrorSummary)> = summaries.iter().collect();
    entries.sort_by(|a, b| {
        key.of(a.1)
            .total_cmp(&key.of(b.1))
            .then(a.1.mean.total_cmp(&b.1.mean))
            .then_with(|| a.0.cmp(b.0))
    });
    Ok(RankingTable {
        key,
        rows: entries
            .into_iter()
            .enumerate()
            .map(|(i, (name, s))| RankingRow {
                rank: i + 1,
                algorithm: name.clone(),
                summary: *s,
            })
            .collect(),
    })
}

impl RankingTable {
    pub fn rank_of(&self, algorithm: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.algorithm == algorithm).map(|r| r.rank)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv_writer();
        w.write_record(RANKING_HEADER)?;
        for r in &self.rows {
            let s = &r.summary;
            w.write_record([
                r.rank.to_string(),
                r.algorithm.clone(),
                fmt_sig9(s.mean),
                fmt_sig9(s.median),
                fmt_sig9(s.trimean),
                fmt_sig9(s.q95),
                fmt_sig9(s.best25_mean),
                fmt_sig9(s.worst25_mean),
            ])?;
        }
        csv_bytes(w)
    }

    /// Reads a table written by [`RankingTable::to_csv`]. The CSV does not
    /// carry group sizes, so `count` is 0 on every row.
    pub fn from_csv(bytes: &[u8], key: Statistic) -> Result<Self> {
        let mut rdr = csv_reader(bytes);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != RANKING_HEADER {
            return Err(Error::MalformedCsv(format!("expected header {}", RANKING_HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != RANKING_HEADER.len() {
                return Err(Error::MalformedCsv(format!("row has {} fields", row.len())));
            }
            let rank = row[0]
                .parse::<usize>()
                .map_err(|_| Error::MalformedCsv(format!("bad rank {:?}", &row[0])))?;
            let f = |i: usize| parse_f64(&row[i], RANKING_HEADER[i]);
            rows.push(RankingRow {
                rank,
                algorithm: row[1].to_string(),
                summary: ErrorSummary {
                    mean: f(2)?,
                    median: f(3)?,
                    trimean: f(4)?,
                    q95: f(5)?,
                    best25_mean: f(6)?,
                    worst25_mean: f(7)?,
                    count: 0,
                },
            });
        }
        Ok(RankingTable { key, rows })
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.algorithm.len())
            .max()
            .unwrap_or(0)
            .max("algorithm".len());
        let mut out = format!(
            "{:>4}  {:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}\n",
            "rank", "algorithm", "mean", "median", "trimean", "q95", "best25", "worst25"
        );
        for r in &self.rows {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{:>4}  {:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}",
                r.rank, r.algorithm, s.mean, s.median, s.trimean, s.q95, s.best25_mean, s.worst25_mean
            );
        }
        out
    }
}

/// Groups errors by algorithm and summarizes each group.
pub fn summarize_by_algorithm(errors: &[AngularError]) -> Result<BTreeMap<String, ErrorSummary>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in errors {
        groups.entry(e.algorithm.clone()).or_default().push(e.degrees);
    }
    groups
        .into_iter()
        .map(|(k, v)| summarize(&v).map(|s| (k, s)))
        .collect()
}

/// Side-by-side ranks of the same algorithms under several ground-truth sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RankComparison {
    pub labels: Vec<String>,
    pub key: Statistic,
    /// Algorithm, then `(rank, statistic)` per label.
    pub rows: Vec<(String, Vec<(usize, f64)>)>,
}

impl RankComparison {
    /// Builds the comparison over algorithms present in every table,
    /// ordered by rank in the first table.
    pub fn new(labels: Vec<String>, tables: &[RankingTable]) -> Result<Self> {
        let first = tables.first().ok_or(Error::EmptyRanking)?;
        let key = first.key;
        let mut rows = Vec::new();
        for r in &first.rows {
            let cols: Option<Vec<(usize, f64)>> = tables
                .iter()
                .map(|t| {
                    t.rows
                        .iter()
                        .find(|x| x.algorithm == r.algorithm)
                        .map(|x| (x.rank, key.of(&x.summary)))
                })
                .collect();
            if let Some(cols) = cols {
                rows.push((r.algorithm.clone(), cols));
            }
        }
        Ok(RankComparison { labels, key, rows })
    }

    /// Algorithm pairs `(a, b)` with `a` ahead of `b` in the first table but
    /// behind it in table `other`.
    pub fn reversals(&self, other: usize) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, (a, ca)) in self.rows.iter().enumerate() {
            for (b, cb) in &self.rows[i + 1..] {
                let first = ca[0].0.cmp(&cb[0].0);
                let then = ca[other].0.cmp(&cb[other].0);
                if first == Ordering::Less && then == Ordering::Greater {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv_writer();
        let mut header = vec!["algorithm".to_string()];
        for l in &self.labels {
            header.push(format!("{l}_rank"));
            header.push(format!("{l}_{}", self.key.as_str()));
        }
        w.write_record(&header)?;
        for (alg, cols) in &self.rows {
            let mut rec = vec![alg.clone()];
            for (rank, v) in cols {
                rec.push(rank.to_string());
                rec.push(fmt_sig9(*v));
            }
            w.write_record(&rec)?;
        }
        csv_bytes(w)
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.0.len())
            .max()
            .unwrap_or(0)
            .max("algorithm".len());
        let col = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(16);
        let mut out = format!("{:<width$}", "algorithm");
        for l in &self.labels {
            let _ = write!(out, "  {l:>col$}");
        }
        out.push('\n');
        for (alg, cols) in &self.rows {
            let _ = write!(out, "{alg:<width$}");
            for (rank, v) in cols {
                let cell = format!("#{rank} ({v:.4})");
                let _ = write!(out, "  {cell:>col$}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn errors_to_csv(errors: &[AngularError]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(ERRORS_HEADER)?;
    for e in errors {
        w.write_record([
            e.image_id.clone(),
            e.algorithm.clone(),
            e.metric.as_str().to_string(),
            fmt_sig9(e.degrees),
        ])?;
    }
    csv_bytes(w)
}

pub fn errors_from_csv(bytes: &[u8]) -> Result<Vec<AngularError>> {
    let mut rdr = csv_reader(bytes);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ERRORS_HEADER {
        return Err(Error::MalformedCsv(format!("expected header {}", ERRORS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != ERRORS_HEADER.len() {
            return Err(Error::MalformedCsv(format!("row has {} fields", row.len())));
        }
        let degrees = parse_f64(&row[3], "degrees")?;
        if !(0.0..=180.0).contains(&degrees) {
            return Err(Error::MalformedCsv(format!("angle {degrees} outside [0, 180]")));
        }
        out.push(AngularError {
            image_id: row[0].to_string(),
            algorithm: row[1].to_string(),
            metric: row[2].parse()?,
            degrees,
        });
    }
    Ok(out)
}

pub fn write_errors(errors: &[AngularError], path: &Path) -> Result<()> {
    write_atomic(path, &errors_to_csv(errors)?)
}

pub fn read_errors(path: &Path) -> Result<Vec<AngularError>> {
    errors_from_csv(&read_file(path)?)
}
