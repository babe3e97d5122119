//! `ttr`: refine a displacement field for one image pair, and the plumbing
//! around it (warping, scoring, synthetic fixtures, gradient checks).
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ttr_core::loss::run_gradcheck;
use ttr_core::synth::{make_task, perturb_field, PhantomKind, PhantomSpec, TaskSpec};
use ttr_core::{
    evaluate, normalize_intensity, read_field, read_labels, read_volume, refine, warp, warp_labels, write_field,
    write_labels, write_volume, Dims, DisplacementField, Error, LossBreakdown, LossWeights, MetricsReport,
    StopReason, TtrConfig,
};

#[derive(Parser)]
#[command(name = "ttr", version, about = "Test-time refinement of deformable registration fields")]
struct Cli {
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true, env = "REG_TTR_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine an initial field by per-voxel Adam on the hybrid loss.
    Refine(Box<RefineArgs>),
    /// Pull-warp an image (trilinear) or a label map (nearest) by a field.
    Warp(WarpArgs),
    /// Dice, HD95 and SDlogJ of a field against label maps.
    Metrics(MetricsArgs),
    /// Write a seeded phantom pair with its ground-truth field.
    Synth(SynthArgs),
    /// Compare the analytic gradient with central differences on an 8^3 instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Preset {
    /// lr 0.1
    Abdomen,
    /// lr 0.025
    Cardiac,
    /// lr from --lr
    Custom,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    /// Starting field; zero (cold start) when omitted.
    #[arg(long)]
    init_field: Option<PathBuf>,
    #[arg(long, requires = "moving_labels")]
    fixed_labels: Option<PathBuf>,
    #[arg(long, requires = "fixed_labels")]
    moving_labels: Option<PathBuf>,
    #[arg(long)]
    out_field: Option<PathBuf>,
    #[arg(long)]
    out_warped: Option<PathBuf>,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Abdomen)]
    preset: Preset,
    #[arg(long, required_if_eq("preset", "custom"))]
    lr: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lambda_ncc: Option<f64>,
    #[arg(long)]
    lambda_ssim: Option<f64>,
    #[arg(long)]
    lambda_smooth: Option<f64>,
    #[arg(long)]
    ncc_window: Option<usize>,
    #[arg(long)]
    ssim_window: Option<usize>,
}

#[derive(Args)]
struct WarpArgs {
    /// Intensity image to warp.
    #[arg(long, required_unless_present = "labels")]
    moving: Option<PathBuf>,
    /// Label map to warp with nearest-neighbour lookup.
    #[arg(long, conflicts_with = "moving")]
    labels: Option<PathBuf>,
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    fixed_labels: PathBuf,
    #[arg(long)]
    moving_labels: PathBuf,
    /// Zero field when omitted.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Spheres,
    CheckerSmooth,
    GradientBlobs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge length of the cubic grid.
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, value_enum, default_value_t = Kind::Spheres)]
    kind: Kind,
    #[arg(long, default_value_t = 3)]
    num_objects: usize,
    /// Largest ground-truth displacement, voxels.
    #[arg(long, default_value_t = 2.0)]
    amplitude: f64,
    /// Ground-truth smoothing, voxels.
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Also write `init_field.mha`: ground truth plus uniform noise of this size.
    #[arg(long)]
    init_noise: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    lambda_ncc: f64,
    #[arg(long, default_value_t = 2.0)]
    lambda_ssim: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_smooth: f64,
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss(_) | Error::NonFiniteGradient | Error::AllFolded => Failure::Numerical(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

#[derive(Serialize)]
struct RunConfig {
    preset: Preset,
    #[serde(flatten)]
    ttr: TtrConfig,
}

#[derive(Serialize)]
struct RefineReport<'a> {
    config: RunConfig,
    loss_trace: &'a [LossBreakdown],
    stop_reason: StopReason,
    iters_run: usize,
    best_iter: usize,
    wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Refine(a) => cmd_refine(*a),
        Command::Warp(a) => cmd_warp(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn build_config(a: &RefineArgs) -> Result<TtrConfig, Failure> {
    let mut cfg = match a.preset {
        Preset::Abdomen | Preset::Custom => TtrConfig::abdomen(),
        Preset::Cardiac => TtrConfig::cardiac(),
    };
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(n) = a.max_iters {
        cfg.max_iters = n;
    }
    if let Some(n) = a.patience {
        cfg.patience = n;
    }
    cfg.weights = LossWeights {
        lambda_ncc: a.lambda_ncc.unwrap_or(cfg.weights.lambda_ncc),
        lambda_ssim: a.lambda_ssim.unwrap_or(cfg.weights.lambda_ssim),
        lambda_smooth: a.lambda_smooth.unwrap_or(cfg.weights.lambda_smooth),
    };
    if let Some(w) = a.ncc_window {
        cfg.ncc_window = w;
    }
    if let Some(w) = a.ssim_window {
        cfg.ssim_window = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_json(value: &impl Serialize, path: Option<&Path>) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    match path {
        Some(p) => fs::write(p, text + "\n").map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_refine(a: RefineArgs) -> CmdResult {
    let cfg = build_config(&a)?;
    let fixed_raw = read_volume(&a.fixed)?;
    let moving_raw = read_volume(&a.moving)?;
    let init = match &a.init_field {
        Some(p) => read_field(p)?,
        None => DisplacementField::zeros(fixed_raw.dims(), fixed_raw.spacing()),
    };
    let labels = match (&a.fixed_labels, &a.moving_labels) {
        (Some(f), Some(m)) => Some((read_labels(f)?, read_labels(m)?)),
        _ => None,
    };

    let fixed = normalize_intensity(&fixed_raw);
    let moving = normalize_intensity(&moving_raw);
    let result = refine(&fixed, &moving, &init, &cfg)?;

    if let Some(p) = &a.out_field {
        write_field(&result.field, p)?;
    }
    if let Some(p) = &a.out_warped {
        write_volume(&warp(&moving_raw, &result.field)?, p)?;
    }
    let metrics = match &labels {
        Some((f, m)) => Some(evaluate(f, m, &result.field, f.spacing())?),
        None => None,
    };
    let report = RefineReport {
        config: RunConfig { preset: a.preset, ttr: cfg },
        loss_trace: &result.loss_trace,
        stop_reason: result.stop_reason,
        iters_run: result.iters_run,
        best_iter: result.best_iter,
        wall_time_s: result.wall_time_s,
        metrics,
    };
    emit_json(&report, a.report.as_deref())
}

fn cmd_warp(a: WarpArgs) -> CmdResult {
    let field = read_field(&a.field)?;
    if let Some(p) = &a.labels {
        write_labels(&warp_labels(&read_labels(p)?, &field)?, &a.out)?;
    } else if let Some(p) = &a.moving {
        write_volume(&warp(&read_volume(p)?, &field)?, &a.out)?;
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> CmdResult {
    let fixed = read_labels(&a.fixed_labels)?;
    let moving = read_labels(&a.moving_labels)?;
    let field = match &a.field {
        Some(p) => read_field(p)?,
        None => DisplacementField::zeros(fixed.dims(), fixed.spacing()),
    };
    let report = evaluate(&fixed, &moving, &field, fixed.spacing())?;
    emit_json(&report, a.report.as_deref())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let kind = match a.kind {
        Kind::Spheres => PhantomKind::Spheres,
        Kind::CheckerSmooth => PhantomKind::CheckerSmooth,
        Kind::GradientBlobs => PhantomKind::GradientBlobs,
    };
    let spec = TaskSpec {
        phantom: PhantomSpec {
            dims: Dims::cube(a.dims),
            kind,
            num_objects: a.num_objects,
            seed: a.seed,
        },
        amplitude: a.amplitude,
        sigma: a.sigma,
    };
    let task = make_task(&spec)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Input(format!("{}: {e}", a.out_dir.display())))?;
    let out = |name: &str| a.out_dir.join(name);
    write_volume(&task.fixed, out("fixed.mha"))?;
    write_volume(&task.moving, out("moving.mha"))?;
    write_labels(&task.fixed_labels, out("fixed_labels.mha"))?;
    write_labels(&task.moving_labels, out("moving_labels.mha"))?;
    write_field(&task.ground_truth, out("gt_field.mha"))?;
    if let Some(noise) = a.init_noise {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Failure::Input(format!("--init-noise must be finite and >= 0, got {noise}")));
        }
        write_field(&perturb_field(&task.ground_truth, noise, a.seed + 100), out("init_field.mha"))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let weights = LossWeights::new(a.lambda_ncc, a.lambda_ssim, a.lambda_smooth)?;
    let report = run_gradcheck(a.seed, &weights)?;
    emit_json(&report, None)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "gradient check failed: max relative error {:.3e}, max absolute error {:.3e}",
            report.max_rel_error, report.max_abs_error
        )))
    }
}
