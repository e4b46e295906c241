use clap::{Args, Parser, Subcommand};
use egpd_calib::config::RunConfig;
use egpd_calib::run::{run, Command, Error};
use std::path::PathBuf;
use std::process::ExitCode;

/// Quantile-matching calibration of simulated station panels.
#[derive(Parser)]
#[command(name = "egpdcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Calibrate the simulated panel (marginal or hierarchical mode).
    Calibrate(Common),
    /// Fit the hierarchical model and write posterior draws and summaries.
    Fit(Common),
    /// Generate a synthetic network and panels from the model.
    Simulate(Common),
    /// Summarise a posterior draws file.
    Summarize(Common),
    /// Write density, station and boxplot data for one day.
    ExportFigures(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    stations: Option<String>,
    #[arg(long)]
    observed: Option<String>,
    #[arg(long)]
    simulated: Option<String>,
    #[arg(short, long)]
    output: Option<String>,
    #[arg(long)]
    posterior: Option<String>,
    #[arg(long)]
    run_dir: Option<String>,
    /// marginal-empirical, marginal-parametric or hierarchical.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    burn_in: Option<String>,
    #[arg(long)]
    thin: Option<String>,
    #[arg(long)]
    chains: Option<String>,
    /// sequential or parallel.
    #[arg(long)]
    execution: Option<String>,
    /// disc, spherical or exponential.
    #[arg(long)]
    correlation: Option<String>,
    /// Day for export-figures, YYYY-MM-DD.
    #[arg(long)]
    day: Option<String>,
    /// Also write an SVG rendering of the densities.
    #[arg(long)]
    svg: bool,
}

impl Common {
    fn into_config(self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_env()?;
        let flags = [
            ("stations", self.stations),
            ("observed", self.observed),
            ("simulated", self.simulated),
            ("output", self.output),
            ("posterior", self.posterior),
            ("run_dir", self.run_dir),
            ("mode", self.mode),
            ("seed", self.seed),
            ("iterations", self.iterations),
            ("burn_in", self.burn_in),
            ("thin", self.thin),
            ("chains", self.chains),
            ("execution", self.execution),
            ("correlation", self.correlation),
            ("day", self.day),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.svg {
            cfg.svg = true;
        }
        for kv in &self.set {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Calibrate(c) => (Command::Calibrate, c),
        Sub::Fit(c) => (Command::Fit, c),
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Summarize(c) => (Command::Summarize, c),
        Sub::ExportFigures(c) => (Command::ExportFigures, c),
    };
    let result = common.into_config().and_then(|cfg| run(command, &cfg));
    match result {
        Ok(report) => {
            println!("{}: wrote {} files to {}", command.name(), report.files.len(), report.output.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
