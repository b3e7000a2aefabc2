//! Per-pixel surface normal estimation from dense depth images under a
//! pinhole camera.
//!
//! The main entry point is [`estimate_normals`], a closed-form estimator that
//! derives up to four normal candidates per pixel from inverse-depth
//! gradients and aggregates them analytically. The crate also ships slower
//! reference estimators ([`oracle`]), synthetic scenes with exact ground
//! truth ([`synth`]), accuracy/latency measurement ([`eval`]) and the file
//! formats and CLI that tie them together ([`io`], [`cli`]).

pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod nim;
pub mod normal_map;
pub mod oracle;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{angular_error, benchmark, AngularErrorReport, BenchReport, Estimator};
pub use geometry::{
    angles_from_normal, back_project, normal_from_angles, project, CameraIntrinsics, CameraPoint,
    DepthImage, NormalVector, PixelCoord, SphericalAngles,
};
pub use nim::{
    aggregate_closed_form, candidate_normals, estimate_normals, estimate_normals_with,
    inverse_depth_gradients, CandidateNormal, CandidateSet, GradientField,
};
pub use normal_map::{Execution, NormalMap};
pub use oracle::{grid_search_angles, plane_fit_normals, PlaneFitWindow, PlaneModel};
pub use synth::{apply_noise, render_scene, NoiseModel, NoiseSpec, SceneGeometry, SceneSpec};
