//! Command-line front end for the tactile alignment pipeline.
//!
//! Every subcommand works inside one artifact directory (`--out`, or the
//! `TACTILE_ALIGN_OUT` environment variable) and exits with a code that
//! identifies the error category.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tactile_align::eval::SweepParam;
use tactile_align::pipeline::commands::{self, Workspace, OUT_DIR_ENV};
use tactile_align::pipeline::PipelineConfig;
use tactile_align::{Error, Result};

#[derive(Parser)]
#[command(name = "tactile-align", version, about = "Align human and robot tactile latent spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; may name a `preset` and override any of its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset when no config file is given.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<(PipelineConfig, Workspace)> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::preset(&self.preset)?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok((cfg, Workspace::new(&self.out)?))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic human/robot dataset.
    GenData(Common),
    /// Train the per-domain tactile encoders.
    TrainEncoders(Common),
    /// Mine pseudo-pairs from pose transitions.
    BuildPairs(Common),
    /// Train the velocity field on the pseudo-pairs.
    TrainFlow(Common),
    /// Transport every human trajectory into the robot latent space.
    Transport(Common),
    /// Measure alignment (EMD) and force transfer; export PCA coordinates.
    Eval(Common),
    /// Re-mine pairs and retrain the flow over a grid of λ or δ values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `lambda` or `delta`.
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Run the two-dimensional rewiring experiment.
    Toy2d(Common),
    /// Run every alignment stage in order.
    Run(Common),
    /// Print the resolved config as TOML.
    ShowConfig(Common),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let (cfg, ws) = c.load()?;
            commands::cmd_gen_data(&cfg, &ws)?;
        }
        Command::TrainEncoders(c) => {
            let (cfg, ws) = c.load()?;
            commands::cmd_train_encoders(&cfg, &ws)?;
        }
        Command::BuildPairs(c) => {
            let (cfg, ws) = c.load()?;
            commands::cmd_build_pairs(&cfg, &ws)?;
        }
        Command::TrainFlow(c) => {
            let (cfg, ws) = c.load()?;
            commands::cmd_train_flow(&cfg, &ws)?;
        }
        Command::Transport(c) => {
            let (cfg, ws) = c.load()?;
            commands::cmd_transport(&cfg, &ws)?;
        }
        Command::Eval(c) => {
            let (cfg, ws) = c.load()?;
            let (_, emd, force) = commands::cmd_eval(&cfg, &ws)?;
            println!(
                "emd before {:.4} after {:.4} reduction {:.1}%",
                emd.emd_before, emd.emd_after, emd.reduction_pct
            );
            print!("{}", force.to_table());
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let param: SweepParam = param.parse()?;
            let (cfg, ws) = common.load()?;
            commands::cmd_sweep(&cfg, &ws, param, values)?;
        }
        Command::Toy2d(c) => {
            let (cfg, ws) = c.load()?;
            let (_, report) = commands::cmd_toy2d(&cfg, &ws)?;
            println!(
                "guided agreement {:.3}, random agreement {:.3}",
                report.guided.correspondence_agreement, report.random.correspondence_agreement
            );
        }
        Command::Run(c) => {
            let (cfg, ws) = c.load()?;
            let (emd, _) = commands::cmd_run(&cfg, &ws)?;
            println!("reduction {:.1}%", emd.reduction_pct);
        }
        Command::ShowConfig(c) => {
            let (cfg, _) = c.load()?;
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(e.category().exit_code() as u8)
}
