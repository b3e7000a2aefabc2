use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depth_normals::eval::{angular_error, AngularErrorReport, BenchReport};
use depth_normals::io::read_normal_map;
use tempfile::TempDir;

const PLANE: &str = r#"
width = 64
height = 48

[intrinsics]
fx = 60.0
fy = 60.0
u0 = 31.5
v0 = 23.5

[geometry]
kind = "plane"
normal = { x = 0.3, y = -0.2, z = -1.0 }
beta = 2.0
"#;

const SPHERE: &str = r#"
width = 64
height = 48

[intrinsics]
fx = 60.0
fy = 60.0
u0 = 31.5
v0 = 23.5

[geometry]
kind = "sphere"
center = { x = 0.0, y = 0.0, z = 3.0 }
radius = 1.2

[noise]
model = "gaussian_depth"
sigma = 0.001
seed = 7
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depth-normals"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    text.trim_end().to_string()
}

struct Scene {
    dir: TempDir,
    depth: PathBuf,
    truth: PathBuf,
    intrinsics: PathBuf,
}

fn synth(config: &str) -> Scene {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("scene.toml");
    std::fs::write(&cfg, config).unwrap();
    let depth = dir.path().join("depth.pfm");
    let truth = dir.path().join("truth.pfm");
    let intrinsics = dir.path().join("k.toml");
    let out = cli(&[
        "synth",
        "--config",
        s(&cfg),
        "--depth-out",
        s(&depth),
        "--normals-out",
        s(&truth),
        "--intrinsics-out",
        s(&intrinsics),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Scene {
        dir,
        depth,
        truth,
        intrinsics,
    }
}

fn estimate(scene: &Scene, name: &str, extra: &[&str]) -> PathBuf {
    let out_path = scene.dir.path().join(name);
    let mut args = vec![
        "estimate",
        "--depth",
        s(&scene.depth),
        "--intrinsics",
        s(&scene.intrinsics),
        "--out",
        s(&out_path),
    ];
    args.extend_from_slice(extra);
    let out = cli(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out_path
}

#[test]
fn estimate_writes_unit_camera_facing_normals() {
    let scene = synth(SPHERE);
    let path = estimate(&scene, "est.pfm", &["--method", "nim"]);
    let map = read_normal_map(&path).unwrap();
    let (fx, u0, v0) = (60.0, 31.5, 23.5);
    assert!(map.valid_count() > 500);
    for v in 0..map.height() {
        for u in 0..map.width() {
            if let Some(n) = map.get(u, v) {
                // Values were stored as f32.
                assert!((n.norm() - 1.0).abs() < 1e-6);
                let ray = [(u as f64 - u0) / fx, (v as f64 - v0) / fx, 1.0];
                assert!(n.x * ray[0] + n.y * ray[1] + n.z * ray[2] <= 0.0);
            }
        }
    }
}

#[test]
fn synthesized_plane_round_trips_through_estimate() {
    let scene = synth(PLANE);
    let est = estimate(&scene, "est.pfm", &[]);
    let a = read_normal_map(&est).unwrap();
    let b = read_normal_map(&scene.truth).unwrap();
    let report = angular_error(&a, &b).unwrap();
    // pfm3 stores f32; exactness is limited by that quantization.
    assert!(report.mean_deg.unwrap() < 1e-3, "{report:?}");
    assert_eq!(report.n_evaluated, 62 * 46);
}

#[test]
fn missing_intrinsics_flag_is_named() {
    let scene = synth(PLANE);
    let out_path = scene.dir.path().join("est.pfm");
    let out = cli(&["estimate", "--depth", s(&scene.depth), "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[usage]: "), "{line}");
    assert!(line.contains("--intrinsics"), "{line}");
    assert!(!out_path.exists());
}

#[test]
fn failed_estimate_leaves_no_output() {
    let scene = synth(PLANE);
    let bad = scene.dir.path().join("bad.toml");
    std::fs::write(&bad, "fx = -1.0\nfy = 60.0\nu0 = 0.0\nv0 = 0.0\n").unwrap();
    let out_path = scene.dir.path().join("est.pfm");
    let out = cli(&[
        "estimate",
        "--depth",
        s(&scene.depth),
        "--intrinsics",
        s(&bad),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[parse]: ") && line.contains("focal"), "{line}");
    assert!(!out_path.exists());
    let leftovers: Vec<_> = std::fs::read_dir(scene.dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".partial"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn malformed_scene_config_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("scene.toml");
    std::fs::write(&cfg, PLANE.replace("kind = \"plane\"", "kind = \"torus\"")).unwrap();
    let depth = dir.path().join("d.pfm");
    let out = cli(&[
        "synth",
        "--config",
        s(&cfg),
        "--depth-out",
        s(&depth),
        "--normals-out",
        s(&dir.path().join("n.pfm")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[parse]: "));
    assert!(!depth.exists());
}

fn eval_report(est: &Path, truth: &Path) -> AngularErrorReport {
    let out = cli(&["eval", "--estimate", s(est), "--truth", s(truth)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn eval_of_a_map_against_itself_is_zero() {
    let scene = synth(SPHERE);
    let report = eval_report(&scene.truth, &scene.truth);
    assert_eq!(report.mean_deg, Some(0.0));
    assert_eq!(report.median_deg, Some(0.0));
    assert_eq!(report.rms_deg, Some(0.0));
    assert_eq!(report.pct_under, Some([1.0; 3]));
}

#[test]
fn eval_matches_library() {
    let scene = synth(SPHERE);
    let est = estimate(&scene, "est.pfm", &[]);
    let report = eval_report(&est, &scene.truth);
    let lib = angular_error(
        &read_normal_map(&est).unwrap(),
        &read_normal_map(&scene.truth).unwrap(),
    )
    .unwrap();
    assert_eq!(report, lib);
}

#[test]
fn eval_dimension_mismatch_fails() {
    let a = synth(PLANE);
    let b = synth(&PLANE.replace("height = 48", "height = 40"));
    let out = cli(&["eval", "--estimate", s(&a.truth), "--truth", s(&b.truth)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[dimension]: "));
}

fn bench(args: &[&str]) -> BenchReport {
    let out = cli(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn bench_reports_ordered_timings_and_stable_checksum() {
    let scene = synth(SPHERE);
    let cfg = scene.dir.path().join("scene.toml");
    let a = bench(&["bench", "--config", s(&cfg), "--iterations", "5"]);
    let b = bench(&[
        "bench",
        "--depth",
        s(&scene.depth),
        "--intrinsics",
        s(&scene.intrinsics),
        "--iterations",
        "3",
    ]);
    assert!(a.best_ms <= a.median_ms && a.best_ms <= a.mean_ms);
    assert_eq!(a.iterations, 5);
    assert_eq!((a.frame_width, a.frame_height), (64, 48));
    let again = bench(&["bench", "--config", s(&cfg), "--iterations", "3"]);
    assert_eq!(a.checksum, again.checksum);
    // The depth file holds f32 values, so it need not match the f64 render.
    assert_eq!(b.checksum, bench(&[
        "bench",
        "--depth",
        s(&scene.depth),
        "--intrinsics",
        s(&scene.intrinsics),
        "--iterations",
        "3",
        "--threads",
        "4",
    ]).checksum);
}

#[test]
fn bench_rejects_too_few_iterations() {
    let scene = synth(PLANE);
    let cfg = scene.dir.path().join("scene.toml");
    let out = cli(&["bench", "--config", s(&cfg), "--iterations", "1"]);
    assert_eq!(out.status.code(), Some(1));
    stderr_line(&out);
}
