//! Accuracy and speed measurements for normal estimators.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, NormalVector};
use crate::nim::estimate_normals_with;
use crate::normal_map::{Execution, NormalMap};
use crate::oracle::{plane_fit_normals_with, PlaneFitWindow};

/// Angular thresholds in degrees for the `pct_under` fractions.
pub const THRESHOLDS_DEG: [f64; 3] = [11.25, 22.5, 30.0];

/// Angular error statistics over mutually valid pixels. Statistics are `None`
/// when no pixel is valid in both maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularErrorReport {
    pub mean_deg: Option<f64>,
    pub median_deg: Option<f64>,
    pub rms_deg: Option<f64>,
    pub thresholds_deg: [f64; 3],
    /// Fraction of evaluated pixels with error strictly below each threshold.
    pub pct_under: Option<[f64; 3]>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

/// Angle between two unit vectors in degrees. Same value as
/// `acos(clamp(a·b, -1, 1))`, but exact for identical and antipodal inputs
/// where `acos` loses half the available precision.
pub fn angle_between_deg(a: NormalVector, b: NormalVector) -> f64 {
    let c = [
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    ];
    let sin = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    sin.atan2(a.dot(b)).to_degrees()
}

/// Per-pixel angle between two normal maps, in degrees, at mutually valid pixels.
pub fn angular_errors_deg(est: &NormalMap, gt: &NormalMap) -> Result<Vec<f64>> {
    if est.width() != gt.width() || est.height() != gt.height() {
        return Err(Error::Dimension(format!(
            "normal maps differ in size: {}x{} vs {}x{}",
            est.width(),
            est.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(est
        .normals()
        .iter()
        .zip(est.mask())
        .zip(gt.normals().iter().zip(gt.mask()))
        .filter(|((_, &a), (_, &b))| a && b)
        .map(|((n, _), (m, _))| angle_between_deg(*n, *m))
        .collect())
}

pub fn angular_error(est: &NormalMap, gt: &NormalMap) -> Result<AngularErrorReport> {
    let mut errors = angular_errors_deg(est, gt)?;
    let n = errors.len();
    let total = est.width() * est.height();
    let mut report = AngularErrorReport {
        mean_deg: None,
        median_deg: None,
        rms_deg: None,
        thresholds_deg: THRESHOLDS_DEG,
        pct_under: None,
        n_evaluated: n,
        n_skipped: total - n,
    };
    if n == 0 {
        return Ok(report);
    }
    let nf = n as f64;
    report.mean_deg = Some(errors.iter().sum::<f64>() / nf);
    report.rms_deg = Some((errors.iter().map(|e| e * e).sum::<f64>() / nf).sqrt());
    report.pct_under = Some(THRESHOLDS_DEG.map(|t| errors.iter().filter(|&&e| e < t).count() as f64 / nf));
    errors.sort_by(f64::total_cmp);
    report.median_deg = Some(if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    });
    Ok(report)
}

/// Normal estimators the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Estimator {
    Nim,
    PlaneFit { window: PlaneFitWindow },
}

impl Estimator {
    pub fn run(&self, depth: &DepthImage, k: &CameraIntrinsics, exec: Execution) -> Result<NormalMap> {
        match *self {
            Estimator::Nim => estimate_normals_with(depth, k, exec),
            Estimator::PlaneFit { window } => plane_fit_normals_with(depth, k, window, exec),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Nim => write!(f, "nim"),
            Estimator::PlaneFit { window } => {
                let side = 2 * window.half_size + 1;
                write!(f, "planefit{side}x{side}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub estimator: String,
    pub execution: Execution,
    pub frame_width: usize,
    pub frame_height: usize,
    pub iterations: usize,
    pub best_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    /// Megapixels per second at the median latency.
    pub mpix_per_s: f64,
    /// Hash of the last output, identical across runs for identical inputs.
    pub checksum: u64,
}

/// FNV-1a over the output bits and mask.
pub fn normal_map_checksum(map: &NormalMap) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for (n, &ok) in map.normals().iter().zip(map.mask()) {
        eat(ok as u64);
        if ok {
            eat(n.x.to_bits());
            eat(n.y.to_bits());
            eat(n.z.to_bits());
        }
    }
    h
}

/// Times `iterations` runs after one untimed warm-up.
pub fn benchmark(
    estimator: Estimator,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    iterations: usize,
    exec: Execution,
) -> Result<BenchReport> {
    if iterations < 3 {
        return Err(Error::InvalidInput(format!(
            "benchmark needs at least 3 iterations, got {iterations}"
        )));
    }
    let mut checksum = normal_map_checksum(&estimator.run(depth, k, exec)?);
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        let out = estimator.run(depth, k, exec)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        checksum = normal_map_checksum(std::hint::black_box(&out));
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let mean = times.iter().sum::<f64>() / n as f64;
    let mpix = (depth.width() * depth.height()) as f64 / 1e6;
    Ok(BenchReport {
        estimator: estimator.to_string(),
        execution: exec,
        frame_width: depth.width(),
        frame_height: depth.height(),
        iterations,
        best_ms: times[0],
        median_ms: median,
        mean_ms: mean,
        mpix_per_s: if median > 0.0 { mpix / (median / 1e3) } else { f64::INFINITY },
        checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> NormalMap {
        let mut m = NormalMap::invalid(w, h);
        for v in 0..h {
            for u in 0..w {
                if rng.gen_bool(0.8) {
                    let n = NormalVector::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                    .normalized();
                    m.set(u, v, n);
                }
            }
        }
        m
    }

    #[test]
    fn identical_maps_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 20, 10);
        let r = angular_error(&m, &m).unwrap();
        assert_eq!(r.mean_deg, Some(0.0));
        assert_eq!(r.median_deg, Some(0.0));
        assert_eq!(r.rms_deg, Some(0.0));
        assert_eq!(r.pct_under, Some([1.0; 3]));
        assert_eq!(r.n_evaluated, m.valid_count());
        assert_eq!(r.n_evaluated + r.n_skipped, 200);
    }

    #[test]
    fn antipodal_maps_are_180_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_map(&mut rng, 8, 8);
        let mut flipped = m.clone();
        for v in 0..8 {
            for u in 0..8 {
                flipped.set(u, v, m.get(u, v).map(|n| -n));
            }
        }
        let r = angular_error(&flipped, &m).unwrap();
        for s in [r.mean_deg, r.median_deg, r.rms_deg] {
            assert!((s.unwrap() - 180.0).abs() < 1e-6);
        }
        assert_eq!(r.pct_under, Some([0.0; 3]));
    }

    #[test]
    fn empty_intersection_is_flagged() {
        let a = NormalMap::invalid(4, 4);
        let r = angular_error(&a, &a).unwrap();
        assert_eq!(r.n_evaluated, 0);
        assert_eq!(r.n_skipped, 16);
        assert!(r.mean_deg.is_none() && r.pct_under.is_none());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let r = angular_error(&NormalMap::invalid(4, 4), &NormalMap::invalid(4, 5));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn report_matches_reference_loop_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (31, 17);
        let a = random_map(&mut rng, w, h);
        let b = random_map(&mut rng, w, h);
        let r = angular_error(&a, &b).unwrap();

        let mut errs = Vec::new();
        for v in 0..h {
            for u in 0..w {
                if let (Some(x), Some(y)) = (a.get(u, v), b.get(u, v)) {
                    let c = (x.x * y.x + x.y * y.y + x.z * y.z).max(-1.0).min(1.0);
                    errs.push(c.acos() * 180.0 / std::f64::consts::PI);
                }
            }
        }
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        errs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let m = errs.len();
        let median = if m % 2 == 1 { errs[m / 2] } else { (errs[m / 2 - 1] + errs[m / 2]) / 2.0 };
        assert!((r.mean_deg.unwrap() - mean).abs() < 1e-9);
        assert!((r.rms_deg.unwrap() - rms).abs() < 1e-9);
        assert!((r.median_deg.unwrap() - median).abs() < 1e-9);
        assert_eq!(r.n_evaluated, m);
        let pct = r.pct_under.unwrap();
        for (p, t) in pct.iter().zip(THRESHOLDS_DEG) {
            let expect = errs.iter().filter(|&&e| e < t).count() as f64 / n;
            assert!((p - expect).abs() < 1e-9);
        }
        assert!(pct[0] <= pct[1] && pct[1] <= pct[2]);
        assert!(r.mean_deg.unwrap() <= r.rms_deg.unwrap());

        let s = angular_error(&b, &a).unwrap();
        assert!((s.mean_deg.unwrap() - r.mean_deg.unwrap()).abs() < 1e-12);
        assert_eq!(s.n_evaluated, r.n_evaluated);
    }

    #[test]
    fn bench_small_frame() {
        let depth = DepthImage::filled(64, 48, 2.0).unwrap();
        let k = CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5).unwrap();
        let r = benchmark(Estimator::Nim, &depth, &k, 3, Execution::Sequential).unwrap();
        assert_eq!(r.iterations, 3);
        assert!(r.best_ms <= r.median_ms && r.best_ms <= r.mean_ms);
        assert_eq!(r.estimator, "nim");
        let again = benchmark(Estimator::Nim, &depth, &k, 3, Execution::Parallel { threads: 2 }).unwrap();
        assert_eq!(r.checksum, again.checksum);
        assert!(benchmark(Estimator::Nim, &depth, &k, 2, Execution::Sequential).is_err());
    }
}
