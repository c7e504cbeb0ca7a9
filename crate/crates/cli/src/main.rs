//! Command-line driver: every parameter lives in the run file, flags only
//! override it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lightflow::pipeline::{self, exit, Evaluation, RunConfig};
use lightflow::Result;

#[derive(Parser)]
#[command(name = "lightflow", version, about = "Depth from the motion blur of projected line patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run file (`key = value` text).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; defaults to the run file's `output`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the seed of the scene's sensor noise.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the per-pixel depth table and check its monotonicity.
    BuildLut,
    /// Render the configured scene with ground truth.
    Simulate,
    /// Recover depth from one captured frame.
    Reconstruct {
        /// PPM frame.
        #[arg(long)]
        frame: PathBuf,
        /// Prebuilt table; built from the rig when absent.
        #[arg(long)]
        lut: Option<PathBuf>,
    },
    /// Score a depth map by plane fit, or against a ground-truth depth.
    Evaluate {
        /// PFM depth map.
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Render and reconstruct over the configured exposures and sigmas.
    Sweep,
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| lightflow::Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let out = cli.out.unwrap_or_else(|| cfg.output.clone());
    let out = out.as_path();
    match cli.command {
        Command::BuildLut => build_lut(&cfg, out),
        Command::Simulate => {
            let r = pipeline::cmd_simulate(&cfg, out)?;
            println!(
                "frame {}x{}, surface pixels {}",
                r.frame.width,
                r.frame.height,
                r.truth_depth.valid_count()
            );
            Ok(())
        }
        Command::Reconstruct { frame, lut } => {
            let rec = pipeline::cmd_reconstruct(&cfg, &frame, lut.as_deref(), out)?;
            print!("{}", rec.diagnostics_text());
            Ok(())
        }
        Command::Evaluate { depth, truth } => {
            let eval = pipeline::cmd_evaluate(&cfg, &depth, truth.as_deref(), out)?;
            print!("{}", eval.to_text());
            if let Evaluation::Plane { fit, .. } = eval {
                eprintln!("plane rmse {:.4} mm", fit.rmse * 1e3);
            }
            Ok(())
        }
        Command::Sweep => {
            let rows = pipeline::cmd_sweep(&cfg, out)?;
            print!("{}", pipeline::sweep_table(&rows));
            Ok(())
        }
    }
}

fn build_lut(cfg: &RunConfig, out: &Path) -> Result<()> {
    let outcome = pipeline::cmd_build_lut(cfg, out);
    if let Ok(o) = &outcome {
        let r = &o.report;
        println!(
            "nodes {} valid {} degenerate {} nonmonotone {}",
            r.total(),
            r.valid_nodes,
            r.degenerate_nodes,
            r.nonmonotone_nodes
        );
    }
    outcome.map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
