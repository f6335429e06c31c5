mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lagrank::windowing::{SmoothingConfig, WindowingConfig};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "lagrank", version, about = "Rank peripheral locations as lagged predictors and forecast a target")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank peripheral locations for the target and write ranking.csv.
    Rank(Opts),
    /// Train one forecaster per peripheral count 0..=n_max and write sweep.csv.
    Sweep(Opts),
    /// Forecast the test split with n_pic peripheral features.
    Predict(Opts),
    /// Allocate the target's next-window forecast over ranked locations as GeoJSON.
    Riskmap(Opts),
    /// Export the normalized feature matrix and manifest for external trainers.
    Export(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum Windowing {
    Fixed,
    Detect,
}

#[derive(Args)]
struct Opts {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_enum)]
    windowing: Option<Windowing>,
    /// Number of fixed windows.
    #[arg(long)]
    mf: Option<usize>,
    /// Detection threshold on the normalized series.
    #[arg(long)]
    imin: Option<f64>,
    /// Minimum detected window length in weeks.
    #[arg(long)]
    dmin: Option<usize>,
    #[arg(long)]
    theta_max: Option<usize>,
    #[arg(long)]
    theta_e: Option<usize>,
    #[arg(long)]
    npic: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write each peripheral location's correlation matrix.
    #[arg(long)]
    dump_matrices: bool,
}

impl Opts {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        let fixed_flags = self.mf.is_some();
        let detect_flags = self.imin.is_some() || self.dmin.is_some();
        let method = match self.windowing {
            Some(m) => Some(m),
            None if fixed_flags && detect_flags => {
                return Err(CliError::Usage("--mf cannot be combined with --imin/--dmin".into()))
            }
            None if fixed_flags => Some(Windowing::Fixed),
            None if detect_flags => Some(Windowing::Detect),
            None => None,
        };
        match method {
            Some(Windowing::Fixed) => {
                if detect_flags {
                    return Err(CliError::Usage("--imin/--dmin apply to detected windows only".into()));
                }
                let current = match cfg.windowing {
                    WindowingConfig::Fixed { count } => count,
                    _ => 20,
                };
                cfg.windowing = WindowingConfig::Fixed {
                    count: self.mf.unwrap_or(current),
                };
            }
            Some(Windowing::Detect) => {
                if fixed_flags {
                    return Err(CliError::Usage("--mf applies to fixed windows only".into()));
                }
                let (i_min, delta_min, smoothing) = match cfg.windowing {
                    WindowingConfig::Detect {
                        i_min,
                        delta_min,
                        smoothing,
                    } => (i_min, delta_min, smoothing),
                    _ => (0.05, 10, SmoothingConfig::default()),
                };
                cfg.windowing = WindowingConfig::Detect {
                    i_min: self.imin.unwrap_or(i_min),
                    delta_min: self.dmin.unwrap_or(delta_min),
                    smoothing,
                };
            }
            None => {}
        }
        if let Some(t) = &self.target {
            cfg.target = Some(t.clone());
        }
        if let Some(v) = self.theta_max {
            cfg.correlation.theta_max = v;
        }
        if let Some(v) = self.theta_e {
            cfg.correlation.theta_e = v;
        }
        if let Some(v) = self.npic {
            cfg.n_pic = v;
        }
        if let Some(v) = self.n_max {
            cfg.n_max = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        cfg.dump_matrices |= self.dump_matrices;
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (opts, cmd): (&Opts, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Rank(o) => (o, commands::cmd_rank),
        Command::Sweep(o) => (o, commands::cmd_sweep),
        Command::Predict(o) => (o, commands::cmd_predict),
        Command::Riskmap(o) => (o, commands::cmd_riskmap),
        Command::Export(o) => (o, commands::cmd_export),
    };
    let mut cfg = RunConfig::load(&opts.config)?;
    opts.apply(&mut cfg)?;
    log::debug!("effective config: {}", serde_json::to_string(&cfg).unwrap_or_default());
    cmd(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
