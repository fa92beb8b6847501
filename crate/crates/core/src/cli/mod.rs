//! Command-line front end: `simulate`, `reconstruct`, `evaluate`, `compare`.

pub mod config;
pub mod dataset;

pub use config::ConfigFile;
pub use dataset::{frame_name, load_dataset, write_dataset, LoadedDataset};

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::imaging::make_gaussian_psf;
use crate::io::{create_dir, load_image, save_image, trace_csv, write_motion, write_text};
use crate::metrics::{default_border_crop, evaluate, MetricReport};
use crate::simulate::{simulate_dataset, synthetic_scene, SimulationSpec};
use crate::solver::{run, Problem, Reconstruction, RunError, SolverConfig, SolverMode};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "jointsr", version, about = "Joint motion estimation and multi-frame super-resolution")]
pub struct Cli {
    /// Print per-iteration progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a low-resolution dataset from a ground-truth image.
    Simulate(SimulateArgs),
    /// Reconstruct the high-resolution image and motion of a dataset.
    Reconstruct(ReconstructArgs),
    /// Score an image against a reference and append a CSV row.
    Evaluate(EvaluateArgs),
    /// Run several solver modes on one dataset and export their curves.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth image; a built-in dead-leaves scene is used when omitted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SolverMode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Outer iteration budget.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Dataset directory written by `simulate` (or laid out the same way).
    pub dataset: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub image: PathBuf,
    pub reference: PathBuf,
    /// Border width excluded from scoring.
    #[arg(long, default_value_t = default_border_crop(2))]
    pub crop: usize,
    /// Dataset id written to the CSV row.
    #[arg(long, default_value = "")]
    pub dataset: String,
    /// Method name written to the CSV row.
    #[arg(long, default_value = "")]
    pub method: String,
    /// CSV file to append to.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Dataset directory; when omitted a dataset is simulated in memory
    /// from the config and seed.
    pub dataset: Option<PathBuf>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "lm,gn,fixed")]
    pub modes: Vec<SolverMode>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<SolverMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses the process arguments, runs the command and maps failures to
/// exit codes.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver { .. } => EXIT_SOLVER,
        _ => EXIT_USAGE,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Reconstruct(a) => cmd_reconstruct(a, cli.verbose),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a, cli.verbose),
    }
}

fn simulation_spec(file: &ConfigFile, seed: Option<u64>) -> Result<SimulationSpec> {
    let mut spec = SimulationSpec::default();
    file.apply_simulation(&mut spec);
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn ground_truth_image(path: Option<&Path>, file: &ConfigFile, spec: &SimulationSpec) -> Result<Image> {
    match path {
        Some(p) => load_image(p),
        None => {
            let side = file.scene_size.unwrap_or(128);
            Ok(synthetic_scene(side, side, spec.seed))
        }
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let file = ConfigFile::load_optional(a.config.as_deref())?;
    let spec = simulation_spec(&file, a.seed)?;
    let gt = ground_truth_image(a.image.as_deref(), &file, &spec)?;
    let ds = simulate_dataset(&gt, &spec)?;
    write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} frames of {}x{} to {} (seed {}, outlier frames {:?})",
        ds.stack.len(),
        ds.stack.width(),
        ds.stack.height(),
        a.out.display(),
        spec.seed,
        ds.outlier_frames.iter().map(|k| k + 1).collect::<Vec<_>>()
    );
    Ok(())
}

fn solver_config(args: &SolverArgs, file: &ConfigFile) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    file.apply_solver(&mut cfg)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(n) = args.iters {
        cfg.max_iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Imaging parameters: config file first, then the dataset's own spec,
/// then defaults.
fn imaging_params(file: &ConfigFile, spec: Option<&SimulationSpec>) -> (usize, f64) {
    let d = SimulationSpec::default();
    let factor = file.factor.or(spec.map(|s| s.factor)).unwrap_or(d.factor);
    let sigma = file.sigma_psf.or(spec.map(|s| s.sigma_psf)).unwrap_or(d.sigma_psf);
    (factor, sigma)
}

fn problem_for(ds: &LoadedDataset, file: &ConfigFile) -> Result<Problem> {
    let (factor, sigma) = imaging_params(file, ds.spec.as_ref());
    Problem::new(ds.stack.clone(), factor, make_gaussian_psf(sigma)?)
}

fn report_progress(r: &Reconstruction) {
    for rec in &r.trace.records {
        let psnr = rec.psnr.map(|p| format!(" psnr {p:.2} dB")).unwrap_or_default();
        eprintln!(
            "[{}] it {:2} energy {:.6} residual {:.6} mu {:e}{}",
            r.trace.mode, rec.iteration, rec.energy, rec.weighted_residual, rec.mu, psnr
        );
    }
}

pub fn cmd_reconstruct(a: &ReconstructArgs, verbose: bool) -> Result<()> {
    let file = ConfigFile::load_optional(a.solver.config.as_deref())?;
    let cfg = solver_config(&a.solver, &file)?;
    let ds = load_dataset(&a.dataset)?;
    let problem = problem_for(&ds, &file)?;
    if let Some(gt) = &ds.ground_truth {
        if gt.width() != problem.geometry.hr_width || gt.height() != problem.geometry.hr_height {
            return Err(Error::Dimension("ground truth does not match the reconstruction grid".into()));
        }
    }
    create_dir(&a.out)?;
    let result = run(&problem, &ds.theta_init, &cfg, ds.ground_truth.as_ref());
    let r = match result {
        Ok(r) => r,
        Err(RunError { error, trace }) => {
            write_text(&a.out.join("trace.csv"), &trace_csv(&trace))?;
            return Err(error);
        }
    };
    if verbose {
        report_progress(&r);
    }
    save_image(&a.out.join("sr.png"), &r.image)?;
    write_text(&a.out.join("trace.csv"), &trace_csv(&r.trace))?;
    write_motion(&a.out.join("motion_est.csv"), &r.motion)?;
    let (w, h) = (ds.stack.width(), ds.stack.height());
    for (k, beta) in r.confidence.beta.chunks(w * h).enumerate() {
        let map = Image::new(w, h, beta.to_vec())?;
        save_image(&a.out.join(format!("confidence_{:03}.png", k + 1)), &map)?;
    }
    let status = if r.trace.converged { "converged" } else { "iteration budget spent" };
    let psnr = r
        .trace
        .records
        .last()
        .and_then(|rec| rec.psnr)
        .map(|p| format!(", PSNR {p:.2} dB"))
        .unwrap_or_default();
    println!("{} after {} iterations ({status}){psnr}", r.trace.mode, r.trace.records.len());
    Ok(())
}

pub const EVALUATE_HEADER: &str = "dataset,method,psnr_db,ssim";

pub fn evaluate_row(dataset: &str, method: &str, m: &MetricReport) -> String {
    format!("{dataset},{method},{},{}", m.psnr_db, m.ssim)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let x = load_image(&a.image)?;
    let reference = load_image(&a.reference)?;
    let m = evaluate(&x, &reference, a.crop)?;
    println!("PSNR {:.3} dB, SSIM {:.4} (border crop {})", m.psnr_db, m.ssim, m.border_crop);
    if let Some(path) = &a.out {
        let fresh = !path.exists() || std::fs::metadata(path).map(|md| md.len() == 0).unwrap_or(true);
        let io = |source| Error::Io { path: path.clone(), source };
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if fresh {
            writeln!(f, "{EVALUATE_HEADER}").map_err(io)?;
        }
        writeln!(f, "{}", evaluate_row(&a.dataset, &a.method, &m)).map_err(io)?;
    }
    Ok(())
}

pub const CONVERGENCE_HEADER: &str = "mode,iteration,psnr,energy,mu";
pub const SUMMARY_HEADER: &str = "mode,status,iterations,psnr_db,ssim,median_translation_error";

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-form per-iteration rows and one summary row per mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompareOutput {
    pub convergence: String,
    pub summary: String,
    pub succeeded: usize,
}

/// Runs every mode on one dataset; failures are recorded and skipped.
pub fn compare_modes(
    ds: &LoadedDataset,
    problem: &Problem,
    base: &SolverConfig,
    modes: &[SolverMode],
    verbose: bool,
) -> CompareOutput {
    let mut out = CompareOutput {
        convergence: format!("{CONVERGENCE_HEADER}\n"),
        summary: format!("{SUMMARY_HEADER}\n"),
        succeeded: 0,
    };
    let crop = default_border_crop(problem.geometry.factor);
    for &mode in modes {
        let cfg = SolverConfig { mode, ..base.clone() };
        match run(problem, &ds.theta_init, &cfg, ds.ground_truth.as_ref()) {
            Ok(r) => {
                if verbose {
                    report_progress(&r);
                }
                for rec in &r.trace.records {
                    out.convergence
                        .push_str(&format!("{mode},{},{},{},{}\n", rec.iteration, opt(rec.psnr), rec.energy, rec.mu));
                }
                let metrics = ds.ground_truth.as_ref().and_then(|gt| evaluate(&r.image, gt, crop).ok());
                let terr = ds.theta_true.as_ref().map(|t| {
                    let e = r.motion.translation_errors(t);
                    median(if e.len() > 1 { &e[1..] } else { &e })
                });
                out.summary.push_str(&format!(
                    "{mode},ok,{},{},{},{}\n",
                    r.trace.records.len(),
                    opt(metrics.as_ref().map(|m| m.psnr_db)),
                    opt(metrics.as_ref().map(|m| m.ssim)),
                    opt(terr)
                ));
                out.succeeded += 1;
            }
            Err(e) => {
                eprintln!("{mode} failed: {e}");
                out.summary.push_str(&format!("{mode},failed,{},,,\n", e.trace.records.len()));
            }
        }
    }
    out
}

fn simulated(file: &ConfigFile, seed: Option<u64>) -> Result<LoadedDataset> {
    let spec = simulation_spec(file, seed)?;
    let gt = ground_truth_image(None, file, &spec)?;
    let ds = simulate_dataset(&gt, &spec)?;
    Ok(LoadedDataset {
        stack: ds.stack,
        theta_init: ds.theta_init,
        theta_true: Some(ds.theta_true),
        ground_truth: Some(ds.ground_truth),
        spec: Some(ds.spec),
    })
}

pub fn cmd_compare(a: &CompareArgs, verbose: bool) -> Result<()> {
    let file = ConfigFile::load_optional(a.solver.config.as_deref())?;
    let cfg = solver_config(&a.solver, &file)?;
    let ds = match &a.dataset {
        Some(dir) => load_dataset(dir)?,
        None => simulated(&file, a.seed)?,
    };
    if ds.ground_truth.is_none() {
        return Err(Error::Parameter("compare needs a dataset with ground_truth.png".into()));
    }
    let problem = problem_for(&ds, &file)?;
    create_dir(&a.out)?;
    let out = compare_modes(&ds, &problem, &cfg, &a.modes, verbose);
    write_text(&a.out.join("convergence.csv"), &out.convergence)?;
    write_text(&a.out.join("summary.csv"), &out.summary)?;
    print!("{}", out.summary);
    if out.succeeded == 0 {
        return Err(Error::Solver { iteration: 0, reason: "every mode failed".into() });
    }
    Ok(())
}

