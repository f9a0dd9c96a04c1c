use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parksim_core::config::SimConfig;
use parksim_core::error::SimError;
use parksim_core::strategies::StrategyKind;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "parksim", version, about = "On-street parking search simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration and write events and reports.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run strategies x demand scales x seeds and write a comparison.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Strategies to compare (comma separated); all four by default.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<StrategyKind>,
        /// Demand multipliers (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "1")]
        scales: Vec<f64>,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Fit the availability model on a history corpus.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Model output file (JSON).
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Re-render reports found in a run or sweep directory.
    Report {
        dir: PathBuf,
    },
    /// Check a configuration and its input files without running.
    Validate {
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Command-line equivalents of config keys; a flag wins over the file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long)]
    pub radius: Option<u32>,
    #[arg(long)]
    pub t_max: Option<u32>,
    #[arg(long)]
    pub horizon: Option<u32>,
    #[arg(long)]
    pub participant_share: Option<f64>,
    #[arg(long)]
    pub competitor_share: Option<f64>,
    #[arg(long)]
    pub demand_scale: Option<f64>,
    #[arg(long)]
    pub initial_occupancy: Option<f64>,
    #[arg(long)]
    pub day: Option<u32>,
    #[arg(long)]
    pub clip_reachable: Option<bool>,
    /// History corpus CSV for the predictor.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

impl Overrides {
    pub fn load(&self) -> anyhow::Result<SimConfig> {
        let mut c = SimConfig::load(&self.config)?;
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(v) = self.radius {
            c.radius = v;
        }
        if let Some(v) = self.t_max {
            c.t_max = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = v;
        }
        if let Some(v) = self.participant_share {
            c.participant_share = v;
        }
        if let Some(v) = self.competitor_share {
            c.competitor_share = v;
        }
        if let Some(v) = self.demand_scale {
            c.demand_scale = v;
        }
        if let Some(v) = self.initial_occupancy {
            c.initial_occupancy = v;
        }
        if let Some(v) = self.day {
            c.day = v;
        }
        if let Some(v) = self.clip_reachable {
            c.clip_reachable = v;
        }
        if let Some(p) = &self.history {
            c.predictor.history_file = Some(std::path::absolute(p)?);
        }
        Ok(c)
    }
}

/// 2 for bad input (config, files, schema), 1 for failures during a run.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Invariant { .. } | SimError::CapacityViolation { .. } | SimError::Contract(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<commands::InputError>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { overrides, out } => commands::run(&overrides, &out),
        Command::Sweep { overrides, strategies, scales, jobs, out } => {
            commands::sweep(&overrides, &strategies, &scales, jobs, &out)
        }
        Command::Train { overrides, out } => commands::train(&overrides, &out),
        Command::Report { dir } => commands::report(&dir),
        Command::Validate { overrides } => commands::validate(&overrides),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
