use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mndt::io::{downsample_uniform, load_scan, load_transforms, save_transforms};
use mndt::synthetic::{generate, scene_diagonal, SyntheticConfig};
use mndt::{register, Error, ErrorReport, RegistrationConfig, RegistrationState};

/// Multi-view rigid registration of 3D scans.
#[derive(Parser)]
#[command(name = "mndt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register scans and write one transform per scan.
    Register(RegisterArgs),
    /// Compare measured transforms with ground truth.
    Eval(EvalArgs),
    /// Generate a seeded synthetic benchmark.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// Scan file (.xyz or ASCII .ply); repeat in scan order. The first scan is the reference.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Initial transforms; identity for every scan when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Where to write the registered transforms.
    #[arg(long)]
    output: PathBuf,
    /// Optional per-iteration CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long = "max-iters", default_value_t = 300)]
    max_iters: usize,
    /// Stop when the log-likelihood changes by less than this.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Cluster count; derived from the point count when omitted.
    #[arg(long)]
    k: Option<usize>,
    /// Covariance regularization.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Points kept per scan (0 keeps everything).
    #[arg(long, default_value_t = 2000)]
    downsample: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    measured: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Per-scan CSV report; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for scan_NNN.xyz, truth.txt and init.txt.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 5)]
    scans: usize,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Maximum initial rotation error, radians.
    #[arg(long = "perturb-rot", default_value_t = 0.03)]
    perturb_rot: f64,
    /// Maximum initial translation error; defaults to 2% of the scene diagonal.
    #[arg(long = "perturb-trans")]
    perturb_trans: Option<f64>,
    /// Standard deviation of Gaussian point noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure tagged with the stage it happened in.
struct Failure {
    stage: &'static str,
    error: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for mndt::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self.error {
            Error::InvalidInput(_) => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } | Error::LengthMismatch { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

fn write_text(path: &Path, text: &str) -> mndt::Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Like `load_transforms`, but a file the user named must exist.
fn load_named_transforms(path: &Path, expected: usize) -> mndt::Result<Vec<mndt::RigidTransform>> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        });
    }
    load_transforms(path, expected)
}

fn count_transform_lines(path: &Path) -> mndt::Result<usize> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .count())
}

/// Prints to stdout, ignoring a closed pipe (e.g. `mndt eval ... | head -1`).
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn trace_csv(state: &RegistrationState) -> String {
    let mut out = String::from("iter,log_likelihood,valid_clusters,max_step_norm\n");
    for r in &state.records {
        writeln!(
            out,
            "{},{:.16e},{},{:.16e}",
            r.iteration,
            r.log_likelihood,
            r.valid_clusters,
            r.max_step_norm()
        )
        .unwrap();
    }
    out
}

fn cmd_register(args: &RegisterArgs) -> Result<(), Failure> {
    if args.inputs.len() < 2 {
        return Err(Failure {
            stage: "arguments",
            error: Error::InvalidInput(format!(
                "registration needs at least 2 --input scans, got {}",
                args.inputs.len()
            )),
        });
    }
    let config = RegistrationConfig {
        max_iterations: args.max_iters,
        likelihood_tolerance: args.tol,
        k_override: args.k,
        epsilon_reg: args.epsilon,
    };
    config.validate().stage("arguments")?;

    let mut scans = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let scan = load_scan(path).stage("loading scans")?;
        let scan = if args.downsample > 0 {
            downsample_uniform(&scan, args.downsample)
        } else {
            scan
        };
        info!("{}: {} points", path.display(), scan.len());
        scans.push(scan);
    }
    let initial = match &args.init {
        Some(path) => load_named_transforms(path, scans.len()).stage("loading initial transforms")?,
        None => vec![mndt::RigidTransform::identity(); scans.len()],
    };

    let (transforms, state) = register(&scans, &initial, &config).stage("registration")?;
    save_transforms(&args.output, &transforms).stage("writing transforms")?;
    if let Some(path) = &args.trace {
        write_text(path, &trace_csv(&state)).stage("writing trace")?;
    }
    let last = state.likelihood_trace.last().copied().unwrap_or(f64::NAN);
    say(&format!("log-likelihood {last:.6e} after {} iterations\n", state.iteration));
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let count = count_transform_lines(&args.truth).stage("loading ground truth")?;
    let truth = load_named_transforms(&args.truth, count).stage("loading ground truth")?;
    let measured = load_named_transforms(&args.measured, count).stage("loading measured transforms")?;
    let report = ErrorReport::compute(&measured, &truth).stage("evaluation")?;
    say(&format!("e_R {:.6e}, e_t {:.6e}\n", report.rotation_error, report.translation_error));
    match &args.output {
        Some(path) => write_text(path, &report.to_csv()).stage("writing report")?,
        None => say(&report.to_csv()),
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let config = SyntheticConfig {
        scans: args.scans,
        points_per_scan: args.points,
        perturb_rot: args.perturb_rot,
        perturb_trans: args.perturb_trans.unwrap_or(0.02 * scene_diagonal()),
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let scene = generate(&config).stage("arguments")?;
    scene.write(&args.output).stage("writing benchmark")?;
    say(&format!(
        "wrote {} scans of {} points to {} (scene diagonal {:.6})\n",
        args.scans,
        args.points,
        args.output.display(),
        scene.diagonal
    ));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mndt: {}: {}", f.stage, f.error);
            ExitCode::from(f.exit_code())
        }
    }
}
