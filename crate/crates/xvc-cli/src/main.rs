use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xvc_cli::context::{CliOverrides, Context};
use xvc_cli::experiments::find;

/// Cross-view consistency experiment harness.
///
/// Every experiment ships a built-in configuration; `--config` overrides it
/// section by section, and the remaining flags patch individual keys. The
/// effective configuration's hash is stamped into every CSV, and a fixed
/// seed reproduces outputs byte for byte. `XVC_THREADS` caps sweep
/// parallelism.
#[derive(Parser)]
#[command(name = "xvc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Configuration file (key = value sections) overriding the built-in one
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `out/<experiment>`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every pseudo-random choice in the experiment
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep override, e.g. --sweep "dx=0,0.1,0.6" or
    /// --sweep "grids=20 20 24,40 40 24" (commas separate items, spaces
    /// separate vector components)
    #[arg(long)]
    sweep: Option<String>,
    /// Print the experiment's built-in configuration (the reference for
    /// every key a --config file may override) and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    common: Common,
    /// Predicted depth tensor file (with optional .mask.xvt sidecar)
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth depth tensor file
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Manifest of `pred gt motion|static` lines for split evaluation
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Maximum ground-truth depth in meters
    #[arg(long)]
    cap: Option<f64>,
    /// Rescale predictions by median(gt)/median(pred) before evaluating
    #[arg(long)]
    median_scale: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference checks on every registered differentiable op
    Gradcheck(Common),
    /// Photometric loss vulnerability study on ground-truth scene variants
    Photometric(Common),
    /// Object-displacement sweep comparing the cloud alignment losses
    Robustness(Common),
    /// Voxel-grid resolution sweep for the density loss
    Voxelsweep(Common),
    /// Weighted total loss with per-term breakdown
    Totalloss(Common),
    /// Depth metric suite over tensor-file pairs
    Metrics(MetricsArgs),
}

fn overrides_from(common: Common) -> (CliOverrides, bool) {
    (
        CliOverrides {
            config: common.config,
            out: common.out,
            seed: common.seed,
            sweep: common.sweep,
            extra: Vec::new(),
        },
        common.print_config,
    )
}

fn run(name: &str, overrides: CliOverrides, print_config: bool) -> ExitCode {
    let experiment = find(name).expect("subcommands mirror the registry");
    if print_config {
        print!("{}", experiment.default_config());
        return ExitCode::SUCCESS;
    }
    let ctx = match Context::build(name, experiment.default_config(), &overrides) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match experiment.run(&ctx) {
        Ok(report) => {
            report.print();
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Gradcheck(c) => {
            let (o, p) = overrides_from(c);
            run("gradcheck", o, p)
        }
        Command::Photometric(c) => {
            let (o, p) = overrides_from(c);
            run("photometric", o, p)
        }
        Command::Robustness(c) => {
            let (o, p) = overrides_from(c);
            run("robustness", o, p)
        }
        Command::Voxelsweep(c) => {
            let (o, p) = overrides_from(c);
            run("voxelsweep", o, p)
        }
        Command::Totalloss(c) => {
            let (o, p) = overrides_from(c);
            run("totalloss", o, p)
        }
        Command::Metrics(args) => {
            let (mut overrides, print_config) = overrides_from(args.common);
            let mut push = |key: &str, value: Option<String>| {
                if let Some(v) = value {
                    overrides.extra.push(("metrics".into(), key.into(), v));
                }
            };
            push("pred", args.pred.map(|p| p.display().to_string()));
            push("gt", args.gt.map(|p| p.display().to_string()));
            push("manifest", args.manifest.map(|p| p.display().to_string()));
            push("cap", args.cap.map(|v| v.to_string()));
            push("median_scale", args.median_scale.map(|v| v.to_string()));
            run("metrics", overrides, print_config)
        }
    }
}
