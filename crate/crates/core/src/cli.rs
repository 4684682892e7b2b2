//! The `chromabench` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 partial data
//! failure (some images or rows failed; the rest were written).

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::audit::{
    check_same_patch, diff_ground_truths, emit_chromaticity_scatter, explain_offset, scan_offset,
    GtSet, DEFAULT_OUTLIER_THRESHOLD_DEG, OFFSET_SCAN_MAX,
};
use crate::error::Error;
use crate::estimators::{estimate, write_estimates, EstimateRow, EstimatorSpec, PixelMask};
use crate::geometry::ChartLayout;
use crate::groundtruth::{compute_ground_truth, write_gt, ExtractOptions, GroundTruthRecord};
use crate::image::{load_image, subtract_black_level};
use crate::metrics::{
    rank, read_errors, summarize_by_algorithm, write_errors, AngularError, Metric, RankComparison,
    RankingTable, Statistic,
};
use crate::estimators::read_estimates;
use crate::synth::{render, SceneSpec};
use crate::util::{read_file, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

/// Dilation of the chart quadrilateral when it is masked out of estimation.
pub const CHART_MASK_DILATION: f64 = 5.0;

#[derive(Debug, Parser)]
#[command(name = "chromabench", version, about = "Illuminant-estimation benchmark toolkit")]
pub struct Cli {
    /// Worker threads (defaults to available cores). Output does not depend on it.
    #[arg(long, global = true, env = "CHROMABENCH_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Recovery,
    Reproduction,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Recovery => Metric::Recovery,
            MetricArg::Reproduction => Metric::Reproduction,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatArg {
    Mean,
    Median,
    Trimean,
    Q95,
    Best25,
    Worst25,
}

impl From<StatArg> for Statistic {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::Mean => Statistic::Mean,
            StatArg::Median => Statistic::Median,
            StatArg::Trimean => Statistic::Trimean,
            StatArg::Q95 => Statistic::Q95,
            StatArg::Best25 => Statistic::Best25,
            StatArg::Worst25 => Statistic::Worst25,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract ground-truth illuminants from chart images.
    ExtractGt {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        charts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep the raw patch medians (the dark offset stays in the record).
        #[arg(long)]
        no_black_subtract: bool,
    },
    /// Run estimators over a directory of images.
    Estimate {
        #[arg(long)]
        images: PathBuf,
        /// Preset name or "n=..,p=..,sigma=..". Repeatable.
        #[arg(long = "algo", required = true, num_args = 1..)]
        algos: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Exclude the chart (dilated by 5 pixels) from pooling.
        #[arg(long)]
        mask_chart: bool,
        /// Directory of .chart files for --mask-chart (defaults to --images).
        #[arg(long)]
        charts: Option<PathBuf>,
        /// Include pixels at or above the camera saturation level.
        #[arg(long)]
        keep_saturated: bool,
        /// Estimate on raw counts without removing the dark offset.
        #[arg(long)]
        no_black_subtract: bool,
    },
    /// Angular errors of estimates against a ground-truth set.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[arg(long, value_enum, default_value = "recovery")]
        metric: MetricArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank algorithms by an error statistic, one table per error file.
    Rank {
        #[arg(long = "errors", required = true, num_args = 1..)]
        errors: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "median")]
        stat: StatArg,
        /// Column labels for the comparison table (defaults to file stems).
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two ground-truth sets.
    DiffGt {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Test "b = a + offset" for this offset in counts.
        #[arg(long, conflicts_with = "scan_offset")]
        offset: Option<f64>,
        /// Sweep integer offsets 0..=512 and report the best fit.
        #[arg(long)]
        scan_offset: bool,
        #[arg(long, default_value_t = DEFAULT_OUTLIER_THRESHOLD_DEG)]
        threshold: f64,
        /// Also write a chromaticity scatter CSV of both sets.
        #[arg(long)]
        scatter: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List images whose R, G and B were read from different patches.
    CheckPatches {
        #[arg(long, required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
    },
    /// Render a synthetic chart scene.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses arguments and runs one command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::ExtractGt {
            images,
            charts,
            out,
            no_black_subtract,
        } => extract_gt(&images, &charts, &out, !no_black_subtract),
        Command::Estimate {
            images,
            algos,
            out,
            mask_chart,
            charts,
            keep_saturated,
            no_black_subtract,
        } => {
            let charts = charts.unwrap_or_else(|| images.clone());
            estimate_cmd(&EstimateArgs {
                images: &images,
                algos: &algos,
                out: &out,
                charts: mask_chart.then_some(charts.as_path()),
                mask_saturated: !keep_saturated,
                subtract: !no_black_subtract,
            })
        }
        Command::Evaluate { gt, est, metric, out } => evaluate(&gt, &est, metric.into(), &out),
        Command::Rank {
            errors,
            stat,
            labels,
            out,
        } => rank_cmd(&errors, stat.into(), labels, &out),
        Command::DiffGt {
            a,
            b,
            offset,
            scan_offset,
            threshold,
            scatter,
            out,
        } => diff_gt(&a, &b, offset, scan_offset, threshold, scatter.as_deref(), &out),
        Command::CheckPatches { gt } => check_patches(&gt),
        Command::Synth { spec, out } => synth_cmd(&spec, &out),
    }
}

fn require_dir(p: &Path, what: &str) -> std::result::Result<(), Failure> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} directory {} does not exist", p.display())))
    }
}

fn require_file(p: &Path, what: &str) -> std::result::Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} file {} does not exist", p.display())))
    }
}

/// `(image_id, path)` for every `.ppm` in the directory, sorted by id.
fn list_images(dir: &Path) -> std::result::Result<Vec<(String, PathBuf)>, Failure> {
    let rd = std::fs::read_dir(dir).map_err(|e| Failure::Data(Error::io(dir, e)))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Failure::Data(Error::io(dir, e)))?.path();
        if path.extension().is_some_and(|x| x == "ppm") && path.is_file() {
            if let Some(stem) = path.file_stem() {
                out.push((stem.to_string_lossy().into_owned(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_chart(dir: &Path, id: &str) -> crate::Result<ChartLayout> {
    let p = dir.join(format!("{id}.chart"));
    if !p.is_file() {
        return Err(Error::MalformedChartFile(format!("missing chart file {}", p.display())));
    }
    let text = String::from_utf8(read_file(&p)?)
        .map_err(|_| Error::MalformedChartFile(format!("{} is not UTF-8", p.display())))?;
    text.parse()
}

fn report_failures(failures: &[(String, Error)]) {
    let mut err = std::io::stderr().lock();
    for (id, e) in failures {
        let _ = writeln!(err, "error: {id}: {e}");
    }
}

fn extract_gt(images: &Path, charts: &Path, out: &Path, subtract: bool) -> CmdResult {
    require_dir(images, "images")?;
    require_dir(charts, "charts")?;
    let list = list_images(images)?;
    let opts = ExtractOptions {
        subtract_black_level: subtract,
        ..ExtractOptions::default()
    };
    let results: Vec<(String, crate::Result<GroundTruthRecord>)> = list
        .par_iter()
        .map(|(id, path)| {
            let r = (|| {
                let layout = read_chart(charts, id)?;
                let img = load_image(path)?;
                let camera = img.camera().cloned().ok_or(Error::MissingSidecar(path.clone()))?;
                compute_ground_truth(id, &img, &layout, &camera, &opts)
            })();
            (id.clone(), r)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((id, e)),
        }
    }
    report_failures(&failures);
    write_gt(&records, out)?;
    eprintln!(
        "extract-gt: {} records written to {}, {} failed",
        records.len(),
        out.display(),
        failures.len()
    );
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

struct EstimateArgs<'a> {
    images: &'a Path,
    algos: &'a [String],
    out: &'a Path,
    charts: Option<&'a Path>,
    mask_saturated: bool,
    subtract: bool,
}

fn estimate_cmd(args: &EstimateArgs<'_>) -> CmdResult {
    require_dir(args.images, "images")?;
    if let Some(c) = args.charts {
        require_dir(c, "charts")?;
    }
    let specs: Vec<EstimatorSpec> = args
        .algos
        .iter()
        .map(|a| EstimatorSpec::parse(a).map_err(|e| Failure::Usage(e.to_string())))
        .collect::<std::result::Result<_, _>>()?;
    let list = list_images(args.images)?;
    let per_image: Vec<(String, crate::Result<Vec<crate::Result<EstimateRow>>>)> = list
        .par_iter()
        .map(|(id, path)| {
            let r = (|| {
                let raw = load_image(path)?;
                let camera = raw.camera().cloned().ok_or(Error::MissingSidecar(path.clone()))?;
                let mut mask = PixelMask::all(raw.width(), raw.height());
                if args.mask_saturated {
                    mask = mask.and(&PixelMask::without_saturated(&raw, camera.saturation_level));
                }
                if let Some(dir) = args.charts {
                    let layout = read_chart(dir, id)?;
                    mask = mask.and(&PixelMask::without_chart(
                        raw.width(),
                        raw.height(),
                        &layout.corners,
                        CHART_MASK_DILATION,
                    ));
                }
                if mask.count() == 0 {
                    return Err(Error::EmptyMask);
                }
                let img = if args.subtract {
                    subtract_black_level(&raw, camera.black_level)
                } else {
                    raw
                };
                Ok(specs
                    .iter()
                    .map(|s| {
                        estimate(id, &img, s, &mask).map(|e| EstimateRow {
                            estimate: e,
                            params: Some((s.n, s.p, s.sigma)),
                        })
                    })
                    .collect())
            })();
            (id.clone(), r)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in per_image {
        match r {
            Ok(list) => {
                for (spec, row) in specs.iter().zip(list) {
                    match row {
                        Ok(row) => rows.push(row),
                        Err(e) => failures.push((format!("{id} [{}]", spec.name), e)),
                    }
                }
            }
            Err(e) => failures.push((id, e)),
        }
    }
    report_failures(&failures);
    write_estimates(&rows, args.out)?;
    eprintln!("estimate: {} rows written to {}", rows.len(), args.out.display());
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn evaluate(gt_path: &Path, est_path: &Path, metric: Metric, out: &Path) -> CmdResult {
    require_file(gt_path, "ground-truth")?;
    require_file(est_path, "estimates")?;
    let gt = GtSet::read("gt", gt_path)?;
    let rows = read_estimates(est_path)?;
    let mut errors = Vec::new();
    let mut failures = Vec::new();
    let mut missing = 0usize;
    for r in &rows {
        let e = &r.estimate;
        let Some(truth) = gt.entries.get(&e.image_id) else {
            missing += 1;
            failures.push((e.image_id.clone(), Error::MalformedCsv("image_id not in ground truth".into())));
            continue;
        };
        match metric.error(e.rgb, truth.rgb) {
            Ok(d) => errors.push(AngularError {
                image_id: e.image_id.clone(),
                algorithm: e.algorithm.clone(),
                metric,
                degrees: d,
            }),
            Err(err) => failures.push((format!("{} [{}]", e.image_id, e.algorithm), err)),
        }
    }
    report_failures(&failures);
    if errors.is_empty() {
        return Err(Failure::Usage("no estimate could be evaluated against the ground truth".into()));
    }
    write_errors(&errors, out)?;
    eprintln!(
        "evaluate: {} errors written to {}, {} skipped ({} without ground truth)",
        errors.len(),
        out.display(),
        failures.len(),
        missing
    );
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn labels_for(paths: &[PathBuf], given: Vec<String>) -> std::result::Result<Vec<String>, Failure> {
    if !given.is_empty() {
        if given.len() != paths.len() {
            return Err(Failure::Usage(format!(
                "{} labels for {} error files",
                given.len(),
                paths.len()
            )));
        }
        return Ok(given);
    }
    let mut labels: Vec<String> = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("set{}", i + 1));
        let label = if labels.contains(&stem) {
            format!("{stem}{}", i + 1)
        } else {
            stem
        };
        labels.push(label);
    }
    Ok(labels)
}

fn sibling(out: &Path, label: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rank".into());
    out.with_file_name(format!("{stem}.{label}.csv"))
}

fn rank_cmd(paths: &[PathBuf], stat: Statistic, labels: Vec<String>, out: &Path) -> CmdResult {
    for p in paths {
        require_file(p, "errors")?;
    }
    let labels = labels_for(paths, labels)?;
    let mut sets = Vec::new();
    for p in paths {
        sets.push(summarize_by_algorithm(&read_errors(p)?)?);
    }
    // only algorithms present in every file are ranked
    let common: Vec<String> = sets[0]
        .keys()
        .filter(|k| sets.iter().all(|s| s.contains_key(*k)))
        .cloned()
        .collect();
    let mut code = EXIT_OK;
    if sets.iter().any(|s| s.len() != common.len()) {
        eprintln!(
            "warning: algorithm sets differ across error files; ranking the {} common algorithms",
            common.len()
        );
    }
    if common.is_empty() {
        return Err(Failure::Usage("no algorithm is common to all error files".into()));
    }
    let tables: Vec<RankingTable> = sets
        .iter()
        .map(|s| {
            let filtered = s
                .iter()
                .filter(|(k, _)| common.contains(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            rank(&filtered, stat)
        })
        .collect::<crate::Result<_>>()?;
    let mut stdout = std::io::stdout().lock();
    if tables.len() == 1 {
        write_atomic(out, &tables[0].to_csv()?)?;
        let _ = write!(stdout, "{}", tables[0].to_text());
        return Ok(code);
    }
    for (label, t) in labels.iter().zip(&tables) {
        write_atomic(&sibling(out, label), &t.to_csv()?)?;
        let _ = writeln!(stdout, "== {label} ({}) ==", stat.as_str());
        let _ = write!(stdout, "{}", t.to_text());
        let _ = writeln!(stdout);
    }
    let cmp = RankComparison::new(labels.clone(), &tables)?;
    write_atomic(out, &cmp.to_csv()?)?;
    let _ = writeln!(stdout, "== rank comparison ({}) ==", stat.as_str());
    let _ = write!(stdout, "{}", cmp.to_text());
    for (i, label) in labels.iter().enumerate().skip(1) {
        let rev = cmp.reversals(i);
        let _ = writeln!(stdout, "order reversals {} -> {label}: {}", labels[0], rev.len());
        for (a, b) in rev {
            let _ = writeln!(stdout, "  {a} ahead of {b} under {}, behind under {label}", labels[0]);
        }
    }
    if tables.iter().any(|t| t.rows.is_empty()) {
        code = EXIT_PARTIAL;
    }
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn diff_gt(
    a_path: &Path,
    b_path: &Path,
    offset: Option<f64>,
    scan: bool,
    threshold: f64,
    scatter: Option<&Path>,
    out: &Path,
) -> CmdResult {
    require_file(a_path, "ground-truth")?;
    require_file(b_path, "ground-truth")?;
    if !(threshold >= 0.0) {
        return Err(Failure::Usage("--threshold must be >= 0".into()));
    }
    let name = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let a = GtSet::read(name(a_path), a_path)?;
    let b = GtSet::read(name(b_path), b_path)?;
    let mut report = diff_ground_truths(&a, &b, threshold)?;
    if scan {
        report.offset_fit = Some(scan_offset(&a, &b, OFFSET_SCAN_MAX)?);
    } else if let Some(o) = offset {
        report.offset_fit = Some(explain_offset(&a, &b, o)?);
    }
    write_atomic(out, &report.to_csv()?)?;
    let mut text = report.summary_text();
    for set in [&a, &b] {
        match check_same_patch(set) {
            Some(v) => {
                text.push_str(&format!("same-patch violations in {}: {}\n", set.name, v.len()));
                for id in v {
                    text.push_str(&format!("  {id}\n"));
                }
            }
            None => eprintln!(
                "warning: {} has no patch annotations; same-patch check skipped",
                set.name
            ),
        }
    }
    if scan {
        if let Some(f) = &report.offset_fit {
            text.push_str(&format!("best offset: {}\n", f.offset));
        }
    }
    let summary_path = out.with_extension("txt");
    write_atomic(&summary_path, text.as_bytes())?;
    if let Some(p) = scatter {
        emit_chromaticity_scatter(&[a, b], p)?;
    }
    print!("{text}");
    Ok(EXIT_OK)
}

fn check_patches(paths: &[PathBuf]) -> CmdResult {
    let mut total = 0;
    for p in paths {
        require_file(p, "ground-truth")?;
        let set = GtSet::read(p.display().to_string(), p)?;
        match check_same_patch(&set) {
            Some(v) => {
                println!("{}: {} violation(s)", p.display(), v.len());
                for id in &v {
                    println!("  {id}");
                }
                total += v.len();
            }
            None => eprintln!("warning: {} has no patch annotations; skipped", p.display()),
        }
    }
    Ok(if total == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

fn synth_cmd(spec_path: &Path, out: &Path) -> CmdResult {
    require_file(spec_path, "scene spec")?;
    let bytes = read_file(spec_path)?;
    let spec: SceneSpec = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::Usage(format!("invalid scene spec: {e}")))?;
    let scene = render(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    let files = scene.write_to(out)?;
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    let l = scene.true_illuminant;
    println!("true illuminant: {} {} {}", l.r, l.g, l.b);
    Ok(EXIT_OK)
}
