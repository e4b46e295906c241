//! Pipelines behind the command-line subcommands.
//!
//! Every command writes into a staging directory next to the output
//! directory and moves the files into place only after all of them were
//! written, so a failed run leaves no partial outputs behind.

use crate::calibration::{fit_egpd, CalibrationError, CalibrationMap, EmpiricalCdf, Law};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::grid::Grid;
use crate::io::{self, IoError};
use crate::latent::StationNetwork;
use crate::model::{run_mcmc, ModelError, PosteriorDraws, BLOCKS, GLOBAL_NAMES};
use crate::panel::{PanelData, PanelError};
use crate::predictive::{self, CalibratedField, FigureOptions, PredictiveError, SummaryRow};
use crate::rng::{self, Domain};
use crate::synthetic::{generate_synthetic, lattice_network};
use chrono::NaiveDate;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Observed values a station needs before it gets its own target law in
/// the marginal modes; below this the network-pooled observed law is used.
pub const MIN_STATION_OBSERVATIONS: usize = 3;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(#[from] IoError),
    #[error("panel: {0}")]
    Panel(#[from] PanelError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("predictive: {0}")]
    Predictive(#[from] PredictiveError),
    #[error("output: cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl Error {
    /// Process exit status: 1 usage, 2 data validation, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => 1,
            Self::Io(_) | Self::Panel(_) | Self::Output { .. } => 2,
            Self::Model(ModelError::Config(_)) => 1,
            Self::Model(ModelError::Panel(_) | ModelError::Latent(_)) => 2,
            Self::Model(_) => 3,
            Self::Calibration(CalibrationError::Input(_) | CalibrationError::EmptySample) => 2,
            Self::Calibration(_) => 3,
            Self::Predictive(PredictiveError::DayOutOfRange { .. }) => 1,
            Self::Predictive(_) => 3,
        }
    }
}

/// The five subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Calibrate,
    Fit,
    Simulate,
    Summarize,
    ExportFigures,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Calibrate => "calibrate",
            Self::Fit => "fit",
            Self::Simulate => "simulate",
            Self::Summarize => "summarize",
            Self::ExportFigures => "export-figures",
        }
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output: PathBuf,
    pub files: Vec<String>,
    pub wall_time: f64,
}

/// Output files collected in a sibling staging directory.
struct Staging {
    dir: PathBuf,
    target: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Staging {
    fn new(target: &Path) -> Result<Self, Error> {
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(Error::Output {
                path: target.into(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
            });
        }
        let dir = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|source| Error::Output { path: dir.clone(), source })?;
        }
        std::fs::create_dir(&dir).map_err(|source| Error::Output { path: dir.clone(), source })?;
        Ok(Self { dir, target: target.into(), files: Vec::new(), committed: false })
    }

    /// Path of a new file in the staging directory.
    fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn commit(mut self) -> Result<Vec<String>, Error> {
        let out = |source| Error::Output { path: self.target.clone(), source };
        std::fs::create_dir_all(&self.target).map_err(out)?;
        for name in &self.files {
            let (from, to) = (self.dir.join(name), self.target.join(name));
            if to.is_dir() {
                std::fs::remove_dir_all(&to).map_err(|source| Error::Output { path: to.clone(), source })?;
            }
            std::fs::rename(&from, &to).map_err(|source| Error::Output { path: to.clone(), source })?;
        }
        let _ = std::fs::remove_dir_all(&self.dir);
        self.committed = true;
        Ok(std::mem::take(&mut self.files))
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.dir);
        }
    }
}

/// Free-form lines written as `#` comments at the top of the manifest.
#[derive(Default)]
struct Notes(Vec<String>);

impl Notes {
    fn add(&mut self, line: impl Into<String>) {
        self.0.push(line.into());
    }
}

fn write_manifest(path: &Path, command: Command, cfg: &RunConfig, notes: &Notes, wall: f64) -> Result<(), Error> {
    let mut s = String::new();
    let _ = writeln!(s, "# egpdcal {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# command: {}", command.name());
    let _ = writeln!(s, "# rerun: egpdcal {} --config <this file>", command.name());
    let _ = writeln!(s, "# wall_time_s: {wall:.3}");
    for n in &notes.0 {
        let _ = writeln!(s, "# {n}");
    }
    s.push_str(&cfg.to_text());
    std::fs::write(path, s).map_err(|source| Error::Output { path: path.into(), source })
}

fn load_inputs(cfg: &RunConfig) -> Result<(StationNetwork, PanelData), Error> {
    let stations = cfg.require(&cfg.stations, "stations")?;
    let observed = cfg.require(&cfg.observed, "observed")?;
    let simulated = cfg.require(&cfg.simulated, "simulated")?;
    let net = io::read_stations(stations)?;
    let data = io::read_panels(observed, simulated, &net)?;
    Ok((net, data))
}

fn note_missing(notes: &mut Notes, data: &PanelData, net: &StationNetwork) {
    notes.add(format!("missing_fraction: {}", data.missing_fraction()));
    for (r, f) in data.missing_fractions().iter().enumerate() {
        notes.add(format!("missing_fraction.{}: {f}", net.ids()[data.observed_stations[r]]));
    }
}

fn note_acceptance(notes: &mut Notes, draws: &PosteriorDraws) {
    for c in &draws.chains {
        let rates: Vec<String> = BLOCKS.iter().map(|&b| format!("{}={:.3}", b.name(), c.acceptance.rate(b))).collect();
        notes.add(format!("acceptance chain {}: {}", c.chain, rates.join(" ")));
    }
}

/// Station-wise marginal calibration. Each station maps its own simulated
/// series onto its own observed series, or onto the pooled observed values
/// of the network when it has fewer than [`MIN_STATION_OBSERVATIONS`].
pub fn marginal_field(data: &PanelData, parametric: bool) -> Result<CalibratedField, Error> {
    let (ns, t) = data.simulated.shape();
    let law = |values: &[f64]| -> Result<Law, CalibrationError> {
        if parametric {
            Ok(Law::Egpd(fit_egpd(values)?))
        } else {
            Ok(Law::Empirical(EmpiricalCdf::new(values)?))
        }
    };
    let pooled: Vec<f64> = data.observed.present().collect();
    let pooled_law = law(&pooled)?;
    let mut own = vec![None; ns];
    for (r, &i) in data.observed_stations.iter().enumerate() {
        let v: Vec<f64> = data.observed.row(r).iter().copied().filter(|v| !v.is_nan()).collect();
        if v.len() >= MIN_STATION_OBSERVATIONS {
            own[i] = Some(law(&v)?);
        }
    }
    let mut values = Grid::filled(ns, t, 0.0);
    let mut upper = Grid::filled(ns, t, 0.0);
    let mut clamped = vec![false; ns * t];
    for i in 0..ns {
        let source = law(data.simulated.row(i))?;
        let target = own[i].clone().unwrap_or_else(|| pooled_law.clone());
        let top = source.upper();
        let map = CalibrationMap::new(source, target);
        for j in 0..t {
            let x = data.simulated.get(i, j);
            clamped[i * t + j] = x > top;
            values.set(i, j, map.apply(x.min(top)));
            upper.set(i, j, map.target.upper());
        }
    }
    Ok(CalibratedField { values, pred_sd: Grid::filled(ns, t, 0.0), upper, clamped })
}

fn fit_outputs(
    staging: &mut Staging,
    draws: &PosteriorDraws,
    data: &PanelData,
    net: &StationNetwork,
) -> Result<Vec<SummaryRow>, Error> {
    io::write_posterior(&staging.file("posterior.csv"), draws, net, &data.dates)?;
    let summary = predictive::summarize_posterior(draws)?;
    io::write_summary(&staging.file("summary.csv"), &summary)?;
    io::write_diagnostics(&staging.file("diagnostics.csv"), &draws.chains)?;
    io::write_trace(&staging.file("trace.csv"), &draws.chains)?;
    let (sy, sx) = draws.sigma_means();
    io::write_sigma_means(&staging.file("sigma_means.csv"), (&sy, &sx), &data.observed_stations, net, &data.dates)?;
    Ok(summary)
}

fn fit_model(
    cfg: &RunConfig,
    data: &PanelData,
    net: &StationNetwork,
    notes: &mut Notes,
) -> Result<PosteriorDraws, Error> {
    let draws = run_mcmc(data, net, cfg.spec, &cfg.mcmc)?;
    notes.add(format!("draws: {}", draws.len()));
    notes.add(format!("shift_y: {}", draws.shift_y));
    notes.add(format!("shift_x: {}", draws.shift_x));
    note_acceptance(notes, &draws);
    Ok(draws)
}

fn run_calibrate(cfg: &RunConfig, staging: &mut Staging, notes: &mut Notes) -> Result<(), Error> {
    let (net, data) = load_inputs(cfg)?;
    note_missing(notes, &data, &net);
    notes.add(format!("mode: {}", cfg.mode));
    let field = match cfg.mode {
        Mode::MarginalEmpirical => marginal_field(&data, false)?,
        Mode::MarginalParametric => marginal_field(&data, true)?,
        Mode::Hierarchical => {
            let draws = fit_model(cfg, &data, &net, notes)?;
            fit_outputs(staging, &draws, &data, &net)?;
            let seed = rng::child_seed(cfg.mcmc.seed, Domain::Predictive, 0);
            predictive::calibrate_field(&draws, &data.simulated, seed, cfg.mcmc.execution)?
        }
    };
    notes.add(format!("clamped_cells: {}", field.clamp_count()));
    io::write_calibrated(&staging.file("calibrated.csv"), &field, &data.simulated, &net, &data.dates)?;
    Ok(())
}

fn run_fit(cfg: &RunConfig, staging: &mut Staging, notes: &mut Notes) -> Result<(), Error> {
    let (net, data) = load_inputs(cfg)?;
    note_missing(notes, &data, &net);
    let draws = fit_model(cfg, &data, &net, notes)?;
    fit_outputs(staging, &draws, &data, &net)?;
    Ok(())
}

fn run_simulate(cfg: &RunConfig, staging: &mut Staging, notes: &mut Notes) -> Result<(), Error> {
    let s = &cfg.simulation;
    let seed = cfg.mcmc.seed;
    let net = lattice_network(s.n_stations, s.n_observed, s.spacing_km, seed);
    let syn = generate_synthetic(&s.truth, &net, s.days, seed, s.missing_rate)?;
    note_missing(notes, &syn.data, &net);
    io::write_stations(&staging.file("stations.csv"), &net)?;
    io::write_panels(&staging.file("observed.csv"), &staging.file("simulated.csv"), &syn.data, &net)?;
    let path = staging.file("truth.csv");
    let mut text = String::from("parameter,value\n");
    for (name, v) in GLOBAL_NAMES.iter().zip(syn.truth.globals()) {
        let _ = writeln!(text, "{name},{v}");
    }
    for (id, v) in net.ids().iter().zip(&syn.truth.w) {
        let _ = writeln!(text, "w.{id},{v}");
    }
    for (d, v) in syn.data.dates.iter().zip(&syn.truth.z) {
        let _ = writeln!(text, "z.{},{v}", io::format_date(*d));
    }
    let _ = writeln!(text, "shift_y,{}", s.truth.shift_y);
    let _ = writeln!(text, "shift_x,{}", s.truth.shift_x);
    std::fs::write(&path, text).map_err(|source| Error::Output { path, source })?;
    Ok(())
}

fn run_summarize(cfg: &RunConfig, staging: &mut Staging, notes: &mut Notes) -> Result<(), Error> {
    let path = cfg.require(&cfg.posterior, "posterior")?;
    let table = io::read_table(path)?;
    notes.add(format!("draws: {}", table.rows.len()));
    let rows = table
        .columns
        .iter()
        .filter(|c| !matches!(c.as_str(), "chain" | "iteration"))
        .map(|c| SummaryRow::from_values(c, &table.column(c).unwrap_or_default()))
        .collect::<Result<Vec<_>, _>>()?;
    io::write_summary(&staging.file("summary.csv"), &rows)?;
    Ok(())
}

fn run_export_figures(cfg: &RunConfig, staging: &mut Staging, notes: &mut Notes) -> Result<(), Error> {
    let (net, data) = load_inputs(cfg)?;
    let run_dir = cfg.require(&cfg.run_dir, "run_dir")?;
    let day_text = cfg.day.as_deref().ok_or(ConfigError::Missing("day"))?;
    let date = NaiveDate::parse_from_str(day_text, io::DATE_FORMAT)
        .map_err(|_| Error::Usage(format!("day '{day_text}' is not a YYYY-MM-DD date")))?;
    let day = data
        .dates
        .iter()
        .position(|d| *d == date)
        .ok_or_else(|| Error::Usage(format!("day {day_text} is not in the panel")))?;
    let (field, sim) = io::read_calibrated(&run_dir.join("calibrated.csv"), &net, &data.dates)?;
    if sim != data.simulated {
        return Err(Error::Usage(format!("{} was produced from a different simulated panel", run_dir.display())));
    }
    let sigma_path = run_dir.join("sigma_means.csv");
    let (sy, sx) = if sigma_path.exists() {
        io::read_sigma_means(&sigma_path, &data.observed_stations, &net, &data.dates)?
    } else {
        notes.add("sigma_means.csv not found; boxplot data left empty");
        (Grid::filled(0, 0, 0.0), Grid::filled(0, data.days(), 0.0))
    };
    let opts = FigureOptions { bandwidth: cfg.kde_bandwidth, grid_points: cfg.kde_points };
    let mut bundle = predictive::export_figures(&field, &data, (&sy, &sx), day, opts)?;
    if sx.rows() == 0 {
        bundle.sigma_box_x.clear();
    }
    notes.add(format!("day: {day_text}"));
    let dir_name = format!("figures-{day_text}");
    let dir = staging.file(&dir_name);
    io::write_figures(&dir, &bundle, &net, &data.dates, cfg.svg)?;
    Ok(())
}

/// Run one command end to end. Outputs land in `cfg.output` together with
/// `manifest.txt`, which echoes the full configuration and can be passed
/// back as `--config` to repeat the run.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunReport, Error> {
    let start = Instant::now();
    cfg.validate()?;
    let output = cfg.require(&cfg.output, "output")?.to_path_buf();
    for (path, key) in [(&cfg.stations, "stations"), (&cfg.observed, "observed"), (&cfg.simulated, "simulated")] {
        if command != Command::Simulate && command != Command::Summarize {
            let p = cfg.require(path, key)?;
            if !p.is_file() {
                return Err(IoError::Open {
                    path: p.into(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                }
                .into());
            }
        }
    }
    let mut staging = Staging::new(&output)?;
    let mut notes = Notes::default();
    match command {
        Command::Calibrate => run_calibrate(cfg, &mut staging, &mut notes)?,
        Command::Fit => run_fit(cfg, &mut staging, &mut notes)?,
        Command::Simulate => run_simulate(cfg, &mut staging, &mut notes)?,
        Command::Summarize => run_summarize(cfg, &mut staging, &mut notes)?,
        Command::ExportFigures => run_export_figures(cfg, &mut staging, &mut notes)?,
    }
    let wall = start.elapsed().as_secs_f64();
    let manifest = staging.file("manifest.txt");
    write_manifest(&manifest, command, cfg, &notes, wall)?;
    let files = staging.commit()?;
    log::info!("{} finished in {wall:.2}s, outputs in {}", command.name(), output.display());
    Ok(RunReport { output, files, wall_time: wall })
}
