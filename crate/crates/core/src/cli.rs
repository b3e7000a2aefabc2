//! Command-line front end. `run` never panics on bad input: every failure is
//! reported as one `error[<kind>]: <message>` line and exit status 1.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{angular_error, benchmark, Estimator};
use crate::geometry::{CameraIntrinsics, DepthImage};
use crate::io::{
    read_depth, read_normal_map, write_depth, write_normal_map, DepthFileSpec, DepthFormat,
    IntrinsicsConfig, NormalEncoding, SceneConfig, DEFAULT_PNG16_SCALE,
};
use crate::normal_map::Execution;
use crate::oracle::PlaneFitWindow;
use crate::synth::{apply_noise, render_scene};

#[derive(Debug, Parser)]
#[command(name = "depth-normals", version, about = "Surface normals from depth images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a normal map from a depth image.
    Estimate(EstimateArgs),
    /// Render a synthetic scene to depth and ground-truth normals.
    Synth(SynthArgs),
    /// Compare an estimated normal map (pfm3) against ground truth (pfm3).
    Eval(EvalArgs),
    /// Time an estimator on a depth file or synthetic scene.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Nim,
    Planefit,
}

#[derive(Debug, Args)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "nim")]
    method: Method,
    /// Plane-fit window radius; the window is (2R+1)x(2R+1).
    #[arg(long, default_value_t = 1)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl MethodArgs {
    fn estimator(&self) -> Result<Estimator> {
        Ok(match self.method {
            Method::Nim => Estimator::Nim,
            Method::Planefit => Estimator::PlaneFit {
                window: PlaneFitWindow::with_radius(self.window)?,
            },
        })
    }

    fn execution(&self) -> Result<Execution> {
        if self.threads == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        Ok(Execution::with_threads(self.threads))
    }
}

#[derive(Debug, Args)]
struct DepthInputArgs {
    /// Depth format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<DepthFormat>,
    /// Raw png16 units per meter.
    #[arg(long, default_value_t = DEFAULT_PNG16_SCALE)]
    scale: f64,
}

impl DepthInputArgs {
    fn spec(&self, path: &Path) -> Result<DepthFileSpec> {
        let format = self
            .format
            .or_else(|| DepthFormat::from_path(path))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "cannot infer depth format of {}; pass --format",
                    path.display()
                ))
            })?;
        Ok(match format {
            DepthFormat::Png16 => DepthFileSpec::png16(self.scale),
            DepthFormat::Pfm => DepthFileSpec::pfm(),
        })
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    input: DepthInputArgs,
    #[arg(long, value_enum, default_value = "pfm3")]
    encoding: NormalEncoding,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene description (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    depth_out: PathBuf,
    /// Ground-truth normals, written as pfm3.
    #[arg(long)]
    normals_out: PathBuf,
    /// Also write the scene intrinsics as a key-value document.
    #[arg(long)]
    intrinsics_out: Option<PathBuf>,
    #[command(flatten)]
    output: DepthInputArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    depth: Option<PathBuf>,
    #[arg(long, requires = "depth")]
    intrinsics: Option<PathBuf>,
    /// Synthetic scene to benchmark on instead of a depth file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: DepthInputArgs,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[command(flatten)]
    method: MethodArgs,
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                return 0;
            }
            let _ = writeln!(stderr, "error[usage]: {}", usage_message(&e));
            return 1;
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a, stdout),
        Command::Bench(a) => bench(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error[{}]: {msg}", e.kind());
            1
        }
    }
}

/// clap's rendered error on one line, without the usage/help trailer.
fn usage_message(e: &clap::Error) -> String {
    let rendered = e.render().to_string();
    let body: Vec<&str> = rendered
        .lines()
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    body.join(" ")
        .trim_start_matches("error:")
        .trim()
        .to_string()
}

fn load_depth_and_intrinsics(
    depth: &Path,
    intrinsics: &Path,
    input: &DepthInputArgs,
) -> Result<(DepthImage, CameraIntrinsics)> {
    let cfg = IntrinsicsConfig::load(intrinsics)?;
    let img = read_depth(depth, &input.spec(depth)?)?;
    cfg.check_size(img.width(), img.height())?;
    Ok((img, cfg.intrinsics()?))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let estimator = a.method.estimator()?;
    let exec = a.method.execution()?;
    let (img, k) = load_depth_and_intrinsics(&a.depth, &a.intrinsics, &a.input)?;
    let normals = estimator.run(&img, &k, exec)?;
    write_normal_map(&normals, &a.out, a.encoding)
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SceneConfig::load(&a.config)?;
    let spec = cfg.spec()?;
    let (clean, truth) = render_scene(&spec)?;
    let depth = apply_noise(&clean, &cfg.noise)?;
    let file_spec = a.output.spec(&a.depth_out)?;
    write_depth(&depth, &a.depth_out, &file_spec)?;
    write_normal_map(&truth, &a.normals_out, NormalEncoding::Pfm3)?;
    if let Some(path) = a.intrinsics_out {
        let mut k = IntrinsicsConfig::from(spec.intrinsics);
        k.width = Some(spec.width);
        k.height = Some(spec.height);
        let text = toml::to_string(&k).expect("intrinsics serialize");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn eval(a: EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let est = read_normal_map(&a.estimate)?;
    let gt = read_normal_map(&a.truth)?;
    let report = angular_error(&est, &gt)?;
    emit(stdout, &report)
}

fn bench(a: BenchArgs, stdout: &mut dyn Write) -> Result<()> {
    let estimator = a.method.estimator()?;
    let exec = a.method.execution()?;
    let (img, k) = match (&a.depth, &a.intrinsics, &a.config) {
        (Some(depth), Some(intr), _) => load_depth_and_intrinsics(depth, intr, &a.input)?,
        (Some(_), None, _) => {
            return Err(Error::InvalidInput(
                "--depth requires --intrinsics".into(),
            ))
        }
        (None, _, Some(cfg)) => {
            let cfg = SceneConfig::load(cfg)?;
            let spec = cfg.spec()?;
            let (clean, _) = render_scene(&spec)?;
            (apply_noise(&clean, &cfg.noise)?, spec.intrinsics)
        }
        (None, _, None) => unreachable!("clap requires --depth or --config"),
    };
    let report = benchmark(estimator, &img, &k, a.iterations, exec)?;
    emit(stdout, &report)
}

fn emit<T: serde::Serialize>(stdout: &mut dyn Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("reports serialize");
    writeln!(stdout, "{line}").map_err(|e| Error::io("<stdout>", e))
}
