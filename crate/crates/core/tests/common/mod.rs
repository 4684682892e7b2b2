#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use chromabench::geometry::{ChartCorners, Point2};
use chromabench::metrics::recovery_error;
use chromabench::synth::{Pose, SceneSpec};
use chromabench::PixelRgb;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_chromabench"))
        .args(args)
        .env_remove("CHROMABENCH_JOBS")
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// A chart pose inside a `w x h` image: random scale, rotation, position and
/// mild perspective.
pub fn random_pose(rng: &mut ChaCha8Rng, w: usize, h: usize) -> [Point2; 4] {
    loop {
        let cw = rng.random_range(0.55..0.8) * w as f64;
        let ch = cw * 4.0 / 6.0;
        let theta = rng.random_range(-0.2..0.2f64);
        let (s, c) = theta.sin_cos();
        let cx = w as f64 / 2.0 + rng.random_range(-0.1..0.1) * w as f64;
        let cy = h as f64 / 2.0 + rng.random_range(-0.1..0.1) * h as f64;
        let jitter = 0.05 * cw;
        let base = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)];
        let corners = base.map(|(u, v)| {
            let (x, y) = (u * cw, v * ch);
            Point2::new(
                cx + c * x - s * y + rng.random_range(-jitter..jitter),
                cy + s * x + c * y + rng.random_range(-jitter..jitter),
            )
        });
        if ChartCorners(corners).validate(w, h).is_ok() {
            return corners;
        }
    }
}

/// A clearly non-neutral illuminant whose white and light-grey responses are
/// whole counts.
pub fn integral_illuminant(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let l = [0; 3].map(|_| 100.0 * rng.random_range(10..=36) as f64);
        if recovery_error(PixelRgb::from_array(l), PixelRgb::splat(1.0)).unwrap() > 5.0 {
            return l;
        }
    }
}

pub fn real_illuminant(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let l = [0; 3].map(|_| rng.random_range(900.0..3600.0));
        if recovery_error(PixelRgb::from_array(l), PixelRgb::splat(1.0)).unwrap() > 5.0 {
            return l;
        }
    }
}

pub fn scene(id: &str, rng: &mut ChaCha8Rng, illuminant: [f64; 3], black: f64, noise: f64) -> SceneSpec {
    let (w, h) = (480, 360);
    SceneSpec {
        image_id: id.to_string(),
        width: w,
        height: h,
        illuminant,
        black_level: black,
        noise_sigma: noise,
        pose: Some(Pose::from_corners(random_pose(rng, w, h))),
        rng_seed: rng.random(),
        ..SceneSpec::default()
    }
}
