//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chromabench::audit::{check_same_patch, diff_ground_truths, scan_offset, GtSet, OFFSET_SCAN_MAX};
use chromabench::estimators::{
    derivative_magnitude, estimate, estimates_from_csv, estimates_to_csv, gaussian_kernel, presets, EstimateRow,
    EstimatorSpec, IlluminantEstimate, PixelMask,
};
use chromabench::geometry::{
    fit_homography, rectify_chart, sample_patch, ChartCorners, Point2, DEFAULT_RECT_HEIGHT, DEFAULT_RECT_WIDTH,
    WHITE_PATCH,
};
use chromabench::groundtruth::{compute_ground_truth, gt_from_csv, gt_to_csv, read_gt, ExtractOptions, GroundTruthRecord};
use chromabench::image::{decode_ppm16, encode_ppm16, load_image, read_meta, save_image, sidecar_path, write_meta};
use chromabench::metrics::{
    errors_from_csv, errors_to_csv, quantile_sorted, rank, recovery_error, reproduction_error, summarize,
    summarize_by_algorithm, AngularError, Metric, RankingTable, Statistic,
};
use chromabench::synth::{render, Pose, SceneSpec};
use chromabench::{LinearImage, PixelRgb};
use common::{cli, integral_illuminant, p, real_illuminant, scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);
type Corpus = (PathBuf, PathBuf, BTreeMap<String, [f64; 3]>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn run_ok(args: &[String]) -> Result<common::Output, String> {
    let out = cli(args);
    ensure(out.code == 0, || format!("{args:?} exited {}: {}", out.code, out.stderr))?;
    Ok(out)
}

fn args(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn max_angle(records: &[GroundTruthRecord], truth: &BTreeMap<String, [f64; 3]>) -> Result<f64, String> {
    ensure(records.len() == truth.len(), || {
        format!("{} records for {} scenes", records.len(), truth.len())
    })?;
    let mut worst = 0.0f64;
    for r in records {
        let t = truth.get(&r.image_id).ok_or_else(|| format!("unexpected id {}", r.image_id))?;
        worst = worst.max(ok(recovery_error(r.illuminant, PixelRgb::from_array(*t)), "angle")?);
    }
    Ok(worst)
}

fn end_to_end_round_trip() -> Check {
    let start = Instant::now();
    let dir = tmp();
    let clean = dir.path().join("clean");
    let noisy = dir.path().join("noisy");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut truth_clean = BTreeMap::new();
    let mut truth_noisy = BTreeMap::new();
    let mut worst_memory = 0.0f64;
    for i in 0..20 {
        let black = if i % 2 == 0 { 0.0 } else { 129.0 };
        let id = format!("clean{i:02}");
        let light = integral_illuminant(&mut rng);
        let spec = scene(&id, &mut rng, light, black, 0.0);
        let s = ok(render(&spec), "render")?;
        ok(s.write_to(&clean), "write")?;
        truth_clean.insert(id, spec.illuminant);

        // same poses with arbitrary real illuminants, kept in memory
        let real = SceneSpec {
            illuminant: real_illuminant(&mut rng),
            ..spec.clone()
        };
        let s = ok(render(&real), "render")?;
        let gt = ok(
            compute_ground_truth("m", &s.image, &s.chart, &s.camera, &ExtractOptions::default()),
            "in-memory ground truth",
        )?;
        worst_memory = worst_memory.max(ok(recovery_error(gt.illuminant, s.true_illuminant), "angle")?);

        let id = format!("noisy{i:02}");
        let light = real_illuminant(&mut rng);
        let spec = scene(&id, &mut rng, light, black, 8.0);
        ok(ok(render(&spec), "render")?.write_to(&noisy), "write")?;
        truth_noisy.insert(id, spec.illuminant);
    }
    let gt_clean = dir.path().join("clean.csv");
    let gt_noisy = dir.path().join("noisy.csv");
    for (d, out) in [(&clean, &gt_clean), (&noisy, &gt_noisy)] {
        run_ok(&args(&["extract-gt", "--images", &p(d), "--charts", &p(d), "--out", &p(out)]))?;
    }
    let worst_clean = max_angle(&ok(read_gt(&gt_clean), "read gt")?, &truth_clean)?;
    let worst_noisy = max_angle(&ok(read_gt(&gt_noisy), "read gt")?, &truth_noisy)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "noise-free max {worst_clean:.3e} deg (in-memory {worst_memory:.3e}), sigma=8 max {worst_noisy:.4} deg, {secs:.1}s"
    );
    ensure(worst_clean <= 1e-6 && worst_memory <= 1e-6, || format!("noise-free too large: {detail}"))?;
    ensure(worst_noisy <= 0.3, || format!("noisy too large: {detail}"))?;
    ensure(secs < 30.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn saturation_boundary() -> Check {
    let dir = tmp();
    // one rectified pixel per source pixel
    let (x0, y0) = (20.0, 20.0);
    let (rw, rh) = (DEFAULT_RECT_WIDTH as f64, DEFAULT_RECT_HEIGHT as f64);
    let spec = SceneSpec {
        image_id: "sat".into(),
        width: 640,
        height: 440,
        illuminant: [3000.0, 2800.0, 2500.0],
        pose: Some(Pose::from_corners([
            Point2::new(x0, y0),
            Point2::new(x0 + rw - 1.0, y0),
            Point2::new(x0 + rw - 1.0, y0 + rh - 1.0),
            Point2::new(x0, y0 + rh - 1.0),
        ])),
        ..SceneSpec::default()
    };
    let mut s = ok(render(&spec), "render")?;
    let grid = ok(s.chart.grid(DEFAULT_RECT_WIDTH, DEFAULT_RECT_HEIGHT), "grid")?;
    let c = grid.centers()[WHITE_PATCH];
    let (sx, sy) = (c.x.round() as usize + 20, c.y.round() as usize + 20);
    let px = s.image.pixel(sx, sy);
    s.image.set_pixel(sx, sy, PixelRgb::new(3301.0, px.g, px.b));
    let ppm = ok(s.write_to(dir.path()), "write")?[0].clone();

    let img = ok(load_image(&ppm), "load")?;
    let rect = ok(rectify_chart(&img, &s.chart.corners, DEFAULT_RECT_WIDTH, DEFAULT_RECT_HEIGHT), "rectify")?;
    let samples = ok(sample_patch(&rect, c, grid.half_size()), "sample")?;
    let over: Vec<f64> = samples
        .iter()
        .flat_map(|q| q.to_array())
        .filter(|v| *v > 3300.0)
        .collect();
    ensure(over == [3301.0], || format!("white patch samples above 3300: {over:?}"))?;

    let extract = |name: &str| -> Result<usize, String> {
        let out = dir.path().join(name);
        run_ok(&args(&["extract-gt", "--images", &p(dir.path()), "--charts", &p(dir.path()), "--out", &p(&out)]))?;
        let gt = ok(read_gt(&out), "read gt")?;
        Ok(gt[0].patch_index)
    };
    let at_3300 = extract("gt3300.csv")?;
    let meta_path = sidecar_path(&ppm);
    let mut meta = ok(read_meta(&meta_path), "meta")?;
    meta.saturation_level = 3301.0;
    ok(write_meta(&meta_path, &meta), "meta")?;
    let at_3301 = extract("gt3301.csv")?;
    ensure(at_3300 == 19 && at_3301 == 18, || {
        format!("threshold 3300 chose {at_3300}, threshold 3301 chose {at_3301}")
    })?;
    Ok("threshold 3300 selects patch 19, threshold 3301 selects patch 18".into())
}

/// Renders the offset corpus and extracts both ground-truth sets.
fn offset_corpus(dir: &Path, n: usize) -> Result<Corpus, String> {
    let images = dir.join("images");
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut truth = BTreeMap::new();
    for i in 0..n {
        let id = format!("img{i:02}");
        let light = integral_illuminant(&mut rng);
        let mut spec = scene(&id, &mut rng, light, 129.0, 0.0);
        // a dim exposure so the dark offset matters
        spec.exposure = rng.random_range(0.1..0.3);
        ok(ok(render(&spec), "render")?.write_to(&images), "write")?;
        truth.insert(id, spec.illuminant);
    }
    let sub = dir.join("gt_sub.csv");
    let raw = dir.join("gt_raw.csv");
    let im = p(&images);
    run_ok(&args(&["extract-gt", "--images", &im, "--charts", &im, "--out", &p(&sub)]))?;
    run_ok(&args(&[
        "extract-gt",
        "--images",
        &im,
        "--charts",
        &im,
        "--out",
        &p(&raw),
        "--no-black-subtract",
    ]))?;
    Ok((sub, raw, truth))
}

fn black_level_divergence() -> Check {
    let dir = tmp();
    let (sub, raw, truth) = offset_corpus(dir.path(), 12)?;
    let report = dir.path().join("report.csv");
    let out = run_ok(&args(&[
        "diff-gt",
        "--a",
        &p(&sub),
        "--b",
        &p(&raw),
        "--scan-offset",
        "--threshold",
        "0.25",
        "--out",
        &p(&report),
    ]))?;
    let text = ok(std::fs::read_to_string(&report), "report")?;
    let rows: Vec<&str> = text.lines().skip(1).collect();
    ensure(rows.len() == truth.len(), || format!("{} report rows", rows.len()))?;
    let flagged = rows.iter().filter(|r| r.ends_with(",true")).count();
    ensure(flagged == truth.len(), || format!("{flagged}/{} flagged:\n{text}", truth.len()))?;
    ensure(out.stdout.contains("best offset: 129\n"), || format!("scan output:\n{}", out.stdout))?;
    let a = ok(GtSet::read("a", &sub), "read")?;
    let b = ok(GtSet::read("b", &raw), "read")?;
    let fit = ok(scan_offset(&a, &b, OFFSET_SCAN_MAX), "scan")?;
    ensure(fit.offset == 129.0, || format!("scan found {}", fit.offset))?;
    let min_div = ok(diff_ground_truths(&a, &b, 0.25), "diff")?
        .per_image
        .iter()
        .map(|x| x.1)
        .fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{flagged}/{} images divergent (smallest {min_div:.3} deg), scan offset {} with median residual {:.2e} deg",
        truth.len(),
        fit.offset,
        fit.median_residual_deg
    ))
}

fn ranking_reversal() -> Check {
    let dir = tmp();
    let (sub, raw, _) = offset_corpus(dir.path(), 12)?;
    let im = p(&dir.path().join("images"));
    let est = dir.path().join("est.csv");
    run_ok(&args(&[
        "estimate",
        "--images",
        &im,
        "--algo",
        "grey-world",
        "white-patch",
        "grey-edge-1",
        "--mask-chart",
        "--no-black-subtract",
        "--out",
        &p(&est),
    ]))?;
    let mut errs = Vec::new();
    for (gt, name) in [(&sub, "err_subtracted.csv"), (&raw, "err_offset.csv")] {
        let out = dir.path().join(name);
        run_ok(&args(&["evaluate", "--gt", &p(gt), "--est", &p(&est), "--metric", "recovery", "--out", &p(&out)]))?;
        errs.push(out);
    }
    let rank_out = dir.path().join("rank.csv");
    let out = run_ok(&args(&[
        "rank",
        "--errors",
        &p(&errs[0]),
        &p(&errs[1]),
        "--stat",
        "median",
        "--out",
        &p(&rank_out),
    ]))?;
    let cmp = ok(std::fs::read_to_string(&rank_out), "comparison")?;
    let line = out
        .stdout
        .lines()
        .find(|l| l.starts_with("order reversals"))
        .ok_or("no reversal line")?
        .to_string();
    let n: usize = line.rsplit(": ").next().and_then(|x| x.parse().ok()).ok_or("bad reversal line")?;
    ensure(n >= 1, || format!("no pair swapped order:\n{}", out.stdout))?;
    let swaps: Vec<&str> = out.stdout.lines().filter(|l| l.contains(" ahead of ")).map(str::trim).collect();
    ensure(
        cmp.starts_with("algorithm,err_subtracted_rank,err_subtracted_median,err_offset_rank,err_offset_median\n"),
        || format!("comparison table:\n{cmp}"),
    )?;
    Ok(format!("{n} swapped pair(s): {}", swaps.join("; ")))
}

fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut v = || PixelRgb::new(rng.random_range(1e-3..10.0), rng.random_range(1e-3..10.0), rng.random_range(1e-3..10.0));
    let mut pairs = Vec::new();
    for _ in 0..10_000 {
        pairs.push((v(), v()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut scale, mut dual, mut asym) = (0.0f64, 0.0f64, 0usize);
    for (e, g) in &pairs {
        let base = ok(recovery_error(*e, *g), "recovery")?;
        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let b = 10f64.powf(rng.random_range(-3.0..3.0));
        scale = scale.max((ok(recovery_error(e.scale(a), g.scale(b)), "recovery")? - base).abs());
        if ok(recovery_error(*g, *e), "recovery")? != base {
            asym += 1;
        }
        let rep = ok(reproduction_error(*e, *g), "reproduction")?;
        let via = ok(recovery_error(*g / *e, PixelRgb::splat(1.0)), "recovery")?;
        dual = dual.max((rep - via).abs());
        ensure(ok(recovery_error(*e, *e), "recovery")? == 0.0, || format!("recovery({e:?}, itself) != 0"))?;
        ensure(ok(reproduction_error(*e, *e), "reproduction")? == 0.0, || format!("reproduction({e:?}, itself) != 0"))?;
    }
    let hand = ok(recovery_error(PixelRgb::splat(1.0), PixelRgb::new(1.0, 2.0, 1.0)), "recovery")?;
    ensure(scale <= 1e-9, || format!("scale invariance off by {scale:e}"))?;
    ensure(asym == 0, || format!("{asym} asymmetric pairs"))?;
    ensure(dual <= 1e-9, || format!("duality off by {dual:e}"))?;
    ensure((hand - 19.4712).abs() <= 1e-3, || format!("hand value {hand}"))?;
    Ok(format!(
        "scale {scale:.1e} deg, symmetry exact, duality {dual:.1e} deg, identical inputs 0, hand value {hand:.4} deg"
    ))
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LinearImage {
    let light = [0; 3].map(|_| rng.random_range(200.0..4000.0));
    LinearImage::from_fn(w, h, |_, _| {
        PixelRgb::from_array(std::array::from_fn(|c| light[c] * rng.random_range(0.01..1.0)))
    })
    .expect("finite image")
}

fn estimator_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let images: Vec<LinearImage> = (0..100).map(|_| random_image(&mut rng, 48, 36)).collect();
    let mask = PixelMask::all(48, 36);
    let sog100 = ok(EstimatorSpec::shades_of_grey(100.0), "spec")?;
    let (mut gw_dev, mut sog_dev, mut expo_dev) = (0.0f64, 0.0f64, 0.0f64);
    for img in &images {
        let gw = ok(estimate("x", img, &EstimatorSpec::grey_world(), &mask), "grey-world")?.rgb;
        let n = img.pixel_count() as f64;
        let means: [f64; 3] = std::array::from_fn(|c| img.channel(c).iter().sum::<f64>() / n);
        let norm = means.iter().map(|m| m * m).sum::<f64>().sqrt();
        for (c, m) in means.iter().enumerate() {
            gw_dev = gw_dev.max((gw.to_array()[c] - m / norm).abs());
        }
        let wp = ok(estimate("x", img, &EstimatorSpec::white_patch(), &mask), "white-patch")?.rgb;
        let sog = ok(estimate("x", img, &sog100, &mask), "shades-of-grey")?.rgb;
        sog_dev = sog_dev.max(ok(recovery_error(sog, wp), "angle")?);
    }
    for img in images.iter().take(20) {
        let small = ok(img.crop(0, 0, 32, 24), "crop")?;
        let m = PixelMask::all(32, 24);
        for spec in presets() {
            let base = ok(estimate("x", &small, &spec, &m), "estimate")?.rgb;
            for alpha in [0.1, 3.0, 77.0] {
                let e = ok(estimate("x", &small.scaled(alpha), &spec, &m), "estimate")?.rgb;
                expo_dev = expo_dev.max(ok(recovery_error(e, base), "angle")?);
            }
        }
    }
    let mut ramp_dev = 0.0f64;
    for sigma in [0.0, 1.0, 2.0] {
        for _ in 0..10 {
            let coef: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.0..5.0)));
            let (w, h) = (40, 30);
            let img = ok(
                LinearImage::from_fn(w, h, |x, y| {
                    PixelRgb::from_array(std::array::from_fn(|c| {
                        100.0 + coef[c][0] + coef[c][1] * x as f64 + coef[c][2] * y as f64
                    }))
                }),
                "ramp",
            )?;
            let mag = derivative_magnitude(&img, 2, sigma);
            let border = if sigma > 0.0 { gaussian_kernel(sigma).len() / 2 + 1 } else { 1 };
            for y in border..h - border {
                for x in border..w - border {
                    for c in 0..3 {
                        ramp_dev = ramp_dev.max(mag.get(x, y, c).abs());
                    }
                }
            }
        }
    }
    let detail = format!(
        "grey-world {gw_dev:.1e}, p=100 vs max {sog_dev:.3} deg, exposure {expo_dev:.1e} deg, second-order ramp {ramp_dev:.1e}"
    );
    ensure(gw_dev <= 1e-12, || format!("grey-world off: {detail}"))?;
    ensure(sog_dev <= 0.5, || format!("shades-of-grey off: {detail}"))?;
    ensure(expo_dev <= 1e-9, || format!("exposure variance: {detail}"))?;
    ensure(ramp_dev <= 1e-9, || format!("ramp not flat: {detail}"))?;
    Ok(detail)
}

/// Brute-force statistics: selection by repeated minimum extraction and
/// interpolation written out from the order statistics.
fn oracle_stats(v: &[f64]) -> [f64; 6] {
    let n = v.len();
    let mut pool = v.to_vec();
    let mut ordered = Vec::with_capacity(n);
    while !pool.is_empty() {
        let (i, _) = pool
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, x)| if *x < best.1 { (i, *x) } else { best });
        ordered.push(pool.remove(i));
    }
    let q = |p: f64| {
        let h = (n as f64 - 1.0) * p;
        let lo = h.floor();
        let i = lo as usize;
        if i + 1 >= n {
            ordered[n - 1]
        } else {
            ordered[i] + (h - lo) * (ordered[i + 1] - ordered[i])
        }
    };
    let median = if n % 2 == 1 {
        ordered[n / 2]
    } else {
        (ordered[n / 2 - 1] + ordered[n / 2]) / 2.0
    };
    let k = n.div_ceil(4);
    let mean = v.iter().sum::<f64>() / n as f64;
    [
        mean,
        median,
        0.25 * q(0.25) + 0.5 * median + 0.25 * q(0.75),
        q(0.95),
        ordered[..k].iter().sum::<f64>() / k as f64,
        ordered[n - k..].iter().sum::<f64>() / k as f64,
    ]
}

fn statistics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..45.0)).collect();
        let s = ok(summarize(&v), "summarize")?;
        let got = [s.mean, s.median, s.trimean, s.q95, s.best25_mean, s.worst25_mean];
        for (a, b) in got.iter().zip(oracle_stats(&v)) {
            worst = worst.max((a - b).abs());
        }
    }
    let fixture: Vec<f64> = (0..100).map(f64::from).collect();
    let q95 = ok(summarize(&fixture), "summarize")?.q95;
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    ensure(q95 == 94.05, || format!("q95 of 0..99 is {q95:?}"))?;
    ensure(quantile_sorted(&fixture, 0.95) == 94.05, || "quantile_sorted fixture".into())?;
    Ok(format!("max deviation {worst:.1e} over 1000 arrays, q95(0..99) = {q95}"))
}

fn convex_quad(rng: &mut ChaCha8Rng) -> [Point2; 4] {
    loop {
        let c = (rng.random_range(200.0..800.0), rng.random_range(200.0..800.0));
        let r0 = rng.random_range(50.0..400.0);
        let start = rng.random_range(0.0..std::f64::consts::TAU);
        let q: [Point2; 4] = std::array::from_fn(|i| {
            let a = start + i as f64 * std::f64::consts::FRAC_PI_2 + rng.random_range(-0.6..0.6);
            let r = r0 * rng.random_range(0.5..1.5);
            Point2::new(c.0 + r * a.cos(), c.1 + r * a.sin())
        });
        if ChartCorners(q).validate(1001, 1001).is_ok() {
            return q;
        }
    }
}

/// Solves the same 8x8 system with an LU factorization from nalgebra.
fn oracle_homography(src: &[Point2; 4], dst: &[Point2; 4]) -> Option<nalgebra::Matrix3<f64>> {
    let mut a = nalgebra::SMatrix::<f64, 8, 8>::zeros();
    let mut b = nalgebra::SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y, u, v) = (src[i].x, src[i].y, dst[i].x, dst[i].y);
        let r1 = [x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u];
        let r2 = [0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v];
        for j in 0..8 {
            a[(2 * i, j)] = r1[j];
            a[(2 * i + 1, j)] = r2[j];
        }
        b[2 * i] = u;
        b[2 * i + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    Some(nalgebra::Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

fn homography_fit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut resid, mut vs_oracle) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let src = convex_quad(&mut rng);
        let dst = convex_quad(&mut rng);
        let h = ok(fit_homography(&src, &dst), "fit")?;
        let o = oracle_homography(&src, &dst).ok_or("oracle failed")?;
        for (s, d) in src.iter().zip(&dst) {
            resid = resid.max(h.project(*s).dist(*d));
            let q = o * nalgebra::Vector3::new(s.x, s.y, 1.0);
            vs_oracle = vs_oracle.max(h.project(*s).dist(Point2::new(q.x / q.z, q.y / q.z)));
        }
    }
    let unit = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)];
    let id = ok(fit_homography(&unit, &unit), "identity")?;
    ensure(id == chromabench::geometry::Homography::identity(), || format!("identity fit {:?}", id.matrix()))?;
    for (tx, ty) in [(5.0, 3.0), (-12.0, 40.0), (0.5, -0.25)] {
        let dst = unit.map(|q| Point2::new(q.x + tx, q.y + ty));
        let h = ok(fit_homography(&unit, &dst), "translation")?;
        for (s, d) in unit.iter().zip(&dst) {
            ensure(h.project(*s) == *d, || format!("translation ({tx},{ty}) maps {s:?} to {:?}", h.project(*s)))?;
        }
    }
    ensure(resid < 1e-9, || format!("residual {resid:e} px"))?;
    Ok(format!(
        "max residual {resid:.1e} px on 1000 quads (agrees with LU oracle to {vs_oracle:.1e} px), identity and translations exact"
    ))
}

fn sig9(v: f64) -> f64 {
    format!("{v:.8e}").parse().unwrap()
}

fn format_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let dir = tmp();
    for i in 0..50 {
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let depth = rng.random_range(9..=16u32);
        let max = ((1u32 << depth) - 1) as f64;
        let data: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0..=max as u32) as f64).collect();
        let img = ok(LinearImage::new(w, h, data), "image")?.with_bit_depth(depth);
        let (dw, dh, dd) = ok(decode_ppm16(&ok(encode_ppm16(&img), "encode")?), "decode")?;
        ensure((dw, dh) == (w, h) && dd == img.data(), || "PPM bytes round trip".into())?;
        let path = dir.path().join(format!("r{i}.ppm"));
        ok(save_image(&img, &path), "save")?;
        let back = ok(load_image(&path), "load")?;
        ensure(back.data() == img.data() && back.bit_depth() == depth, || "PPM file round trip".into())?;
    }

    let cameras = ["canon_1d", "canon_5d"];
    let gts: Vec<GroundTruthRecord> = (0..40)
        .map(|i| GroundTruthRecord {
            image_id: format!("im{i:03}"),
            illuminant: PixelRgb::from_array([0; 3].map(|_| sig9(rng.random_range(1.0..4000.0)))),
            patch_index: rng.random_range(18..24),
            camera_id: cameras[i % 2].to_string(),
            black_level_subtracted: rng.random(),
        })
        .collect();
    let bytes = ok(gt_to_csv(&gts), "gt csv")?;
    let back = ok(gt_from_csv(&bytes), "gt csv")?;
    ensure(back == gts, || "ground-truth records differ".into())?;
    ensure(ok(gt_to_csv(&back), "gt csv")? == bytes, || "ground-truth bytes differ".into())?;

    let specs = presets();
    let est: Vec<EstimateRow> = (0..60)
        .map(|i| {
            let s = &specs[i % specs.len()];
            let external = i % 7 == 0;
            EstimateRow {
                estimate: IlluminantEstimate {
                    image_id: format!("im{:03}", i / 3),
                    algorithm: if external { "external".into() } else { s.name.clone() },
                    rgb: PixelRgb::from_array([0; 3].map(|_| sig9(rng.random_range(0.01..1.0)))),
                },
                params: (!external).then_some((s.n, s.p, s.sigma)),
            }
        })
        .collect();
    let bytes = ok(estimates_to_csv(&est), "estimates csv")?;
    let back = ok(estimates_from_csv(&bytes), "estimates csv")?;
    ensure(back == est, || "estimate rows differ".into())?;
    ensure(ok(estimates_to_csv(&back), "estimates csv")? == bytes, || "estimate bytes differ".into())?;

    let errs: Vec<AngularError> = (0..60)
        .map(|i| AngularError {
            image_id: format!("im{:03}", i / 4),
            algorithm: format!("alg{}", i % 4),
            metric: if i % 2 == 0 { Metric::Recovery } else { Metric::Reproduction },
            degrees: sig9(rng.random_range(0.0..40.0)),
        })
        .collect();
    let bytes = ok(errors_to_csv(&errs), "errors csv")?;
    let back = ok(errors_from_csv(&bytes), "errors csv")?;
    ensure(back == errs, || "error rows differ".into())?;
    ensure(ok(errors_to_csv(&back), "errors csv")? == bytes, || "error bytes differ".into())?;

    let table = ok(rank(&ok(summarize_by_algorithm(&errs), "summaries")?, Statistic::Median), "rank")?;
    let bytes = ok(table.to_csv(), "ranking csv")?;
    let back = ok(RankingTable::from_csv(&bytes, Statistic::Median), "ranking csv")?;
    ensure(ok(back.to_csv(), "ranking csv")? == bytes, || "ranking bytes differ".into())?;
    ensure(
        back.rows.iter().zip(&table.rows).all(|(a, b)| {
            a.algorithm == b.algorithm && a.rank == b.rank && a.summary.median == sig9(b.summary.median)
        }),
        || "ranking rows differ".into(),
    )?;

    let golden = golden_pipeline()?;
    Ok(format!("PPM, ground-truth, estimates, errors and ranking CSVs lossless; {golden}"))
}

/// Runs the whole pipeline on a fixed corpus with one and four workers, twice,
/// and compares every output with the checked-in golden files.
fn golden_pipeline() -> Result<String, String> {
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let mut runs: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    for jobs in ["1", "4", "1", "4"] {
        let dir = tmp();
        let images = dir.path().join("images");
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for i in 0..4 {
            let light = integral_illuminant(&mut rng);
            let spec = scene(&format!("g{i}"), &mut rng, light, 129.0 * (i % 2) as f64, 2.0);
            ok(ok(render(&spec), "render")?.write_to(&images), "write")?;
        }
        let d = |n: &str| p(&dir.path().join(n));
        let im = p(&images);
        let j = ["--jobs", jobs];
        run_ok(&args(&[&j[..], &["extract-gt", "--images", &im, "--charts", &im, "--out", &d("gt.csv")]].concat()))?;
        run_ok(&args(
            &[&j[..], &["extract-gt", "--images", &im, "--charts", &im, "--out", &d("gt_raw.csv"), "--no-black-subtract"]]
                .concat(),
        ))?;
        run_ok(&args(
            &[
                &j[..],
                &[
                    "estimate", "--images", &im, "--algo", "grey-world", "white-patch", "shades-of-grey",
                    "general-grey-world", "grey-edge-1", "grey-edge-2", "--mask-chart", "--out", &d("est.csv"),
                ],
            ]
            .concat(),
        ))?;
        for (gt, err, metric) in [("gt.csv", "err.csv", "recovery"), ("gt_raw.csv", "err_raw.csv", "reproduction")] {
            run_ok(&args(
                &[&j[..], &["evaluate", "--gt", &d(gt), "--est", &d("est.csv"), "--metric", metric, "--out", &d(err)]]
                    .concat(),
            ))?;
        }
        run_ok(&args(
            &[&j[..], &["rank", "--errors", &d("err.csv"), &d("err_raw.csv"), "--stat", "trimean", "--out", &d("rank.csv")]]
                .concat(),
        ))?;
        run_ok(&args(
            &[
                &j[..],
                &["diff-gt", "--a", &d("gt.csv"), "--b", &d("gt_raw.csv"), "--offset", "129", "--out", &d("diff.csv")],
            ]
            .concat(),
        ))?;
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_file() {
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
        runs.push(files);
    }
    for r in &runs[1..] {
        ensure(r == &runs[0], || "outputs differ between runs or --jobs settings".into())?;
    }
    if std::env::var_os("CHROMABENCH_BLESS").is_some() {
        std::fs::create_dir_all(&golden_dir).map_err(|e| e.to_string())?;
        for (name, bytes) in &runs[0] {
            std::fs::write(golden_dir.join(name), bytes).map_err(|e| e.to_string())?;
        }
    }
    for (name, bytes) in &runs[0] {
        let want = std::fs::read(golden_dir.join(name)).map_err(|e| format!("golden {name}: {e}"))?;
        ensure(&want == bytes, || format!("{name} differs from golden copy"))?;
    }
    Ok(format!("{} golden files identical across 4 runs with --jobs 1 and 4", runs[0].len()))
}

fn audit_fixtures() -> Check {
    let dir = tmp();
    let mut csv = String::from("image_id,R,G,B,patch_index_R,patch_index_G,patch_index_B\n");
    let crafted = ["IMG_0103", "IMG_0117", "IMG_0131"];
    for i in 0..40 {
        let id = format!("IMG_{:04}", 100 + i);
        let (pr, pg, pb) = match crafted.iter().position(|c| *c == id) {
            Some(0) => (18, 19, 19),
            Some(1) => (19, 19, 18),
            Some(_) => (18, 18, 20),
            None => (18 + i % 3, 18 + i % 3, 18 + i % 3),
        };
        csv.push_str(&format!("{id},{},{},{},{pr},{pg},{pb}\n", 1000 + i, 900 + 2 * i, 600 + 3 * i));
    }
    let path = dir.path().join("legacy.csv");
    ok(std::fs::write(&path, &csv), "write")?;
    let set = ok(GtSet::read("legacy", &path), "read")?;
    let flagged = check_same_patch(&set).ok_or("no annotations found")?;
    ensure(flagged == crafted, || format!("flagged {flagged:?}"))?;
    let out = cli(&args(&["check-patches", "--gt", &p(&path)]));
    ensure(out.code == 2 && crafted.iter().all(|c| out.stdout.contains(c)), || {
        format!("check-patches exited {}:\n{}", out.code, out.stdout)
    })?;

    let self_diff = ok(diff_ground_truths(&set, &set, 0.25), "diff")?;
    ensure(
        self_diff.outliers.is_empty() && self_diff.per_image.iter().all(|x| x.1 == 0.0),
        || "self-diff not zero".into(),
    )?;
    let report = dir.path().join("self.csv");
    let out = run_ok(&args(&["diff-gt", "--a", &p(&path), "--b", &p(&path), "--out", &p(&report)]))?;
    ensure(out.stdout.contains("outliers (> 0.25 deg): 0\n"), || out.stdout.clone())?;
    Ok(format!(
        "flagged exactly {:?}; self-diff of {} images has zero divergence",
        flagged,
        set.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("end-to-end round trip", end_to_end_round_trip),
        ("saturation boundary", saturation_boundary),
        ("black-level divergence", black_level_divergence),
        ("ranking reversal", ranking_reversal),
        ("metric identities", metric_identities),
        ("estimator properties", estimator_properties),
        ("statistics oracle", statistics_oracle),
        ("homography", homography_fit),
        ("format round trips", format_round_trips),
        ("audit fixtures", audit_fixtures),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
