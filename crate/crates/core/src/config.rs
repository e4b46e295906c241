//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are an
//! error. Path keys can be overridden from the environment:
//!
//! | key          | variable            |
//! |--------------|---------------------|
//! | `stations`   | `EGPDCAL_STATIONS`  |
//! | `observed`   | `EGPDCAL_OBSERVED`  |
//! | `simulated`  | `EGPDCAL_SIMULATED` |
//! | `output`     | `EGPDCAL_OUTPUT`    |
//! | `posterior`  | `EGPDCAL_POSTERIOR` |
//! | `run_dir`    | `EGPDCAL_RUN_DIR`   |

use crate::model::{McmcConfig, ModelSpec, ShiftRule};
use crate::synthetic::TruthParams;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: expected 'key = value', found '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}': {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("missing required setting '{0}'")]
    Missing(&'static str),
}

/// Calibration pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Station-wise empirical quantile mapping.
    MarginalEmpirical,
    /// Station-wise quantile mapping between fitted extended-GPD laws.
    MarginalParametric,
    /// Posterior predictive conditional mapping under the hierarchical model.
    #[default]
    Hierarchical,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marginal-empirical" => Ok(Self::MarginalEmpirical),
            "marginal-parametric" => Ok(Self::MarginalParametric),
            "hierarchical" => Ok(Self::Hierarchical),
            _ => Err("expected marginal-empirical, marginal-parametric or hierarchical".into()),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MarginalEmpirical => "marginal-empirical",
            Self::MarginalParametric => "marginal-parametric",
            Self::Hierarchical => "hierarchical",
        })
    }
}

/// Settings of the `simulate` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub n_stations: usize,
    pub n_observed: usize,
    pub days: usize,
    pub spacing_km: f64,
    pub missing_rate: f64,
    pub truth: TruthParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_stations: 16,
            n_observed: 10,
            days: 20,
            spacing_km: 50.0,
            missing_rate: 0.0,
            truth: TruthParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stations: Option<PathBuf>,
    pub observed: Option<PathBuf>,
    pub simulated: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Posterior draws file read by `summarize`.
    pub posterior: Option<PathBuf>,
    /// Output directory of an earlier `calibrate` run, read by
    /// `export-figures`.
    pub run_dir: Option<PathBuf>,
    pub mode: Mode,
    pub spec: ModelSpec,
    pub mcmc: McmcConfig,
    /// Day exported by `export-figures`, as `YYYY-MM-DD`.
    pub day: Option<String>,
    pub kde_bandwidth: Option<f64>,
    pub kde_points: usize,
    pub svg: bool,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stations: None,
            observed: None,
            simulated: None,
            output: None,
            posterior: None,
            run_dir: None,
            mode: Mode::default(),
            spec: ModelSpec::default(),
            mcmc: McmcConfig::default(),
            day: None,
            kde_bandwidth: None,
            kde_points: 512,
            svg: false,
            simulation: SimulationConfig::default(),
        }
    }
}

const PATH_ENV: [(&str, &str); 6] = [
    ("stations", "EGPDCAL_STATIONS"),
    ("observed", "EGPDCAL_OBSERVED"),
    ("simulated", "EGPDCAL_SIMULATED"),
    ("output", "EGPDCAL_OUTPUT"),
    ("posterior", "EGPDCAL_POSTERIOR"),
    ("run_dir", "EGPDCAL_RUN_DIR"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Value { key: key.into(), value: value.into(), reason: "expected true or false".into() }),
    }
}

impl RunConfig {
    /// Parse a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: k + 1, text: raw.to_string() })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Override path keys from `EGPDCAL_*` variables.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env_from(|name| std::env::var(name).ok())
    }

    pub fn apply_env_from(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for (key, var) in PATH_ENV {
            if let Some(v) = lookup(var).filter(|v| !v.is_empty()) {
                self.set(key, &v)?;
            }
        }
        Ok(())
    }

    /// Set one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let optional_path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "stations" => self.stations = optional_path(value),
            "observed" => self.observed = optional_path(value),
            "simulated" => self.simulated = optional_path(value),
            "output" => self.output = optional_path(value),
            "posterior" => self.posterior = optional_path(value),
            "run_dir" => self.run_dir = optional_path(value),
            "mode" => self.mode = parse(key, value)?,
            "correlation" => self.spec.family = parse(key, value)?,
            "shift" => {
                self.spec.shift = match value {
                    "panel-max" => ShiftRule::PanelMax,
                    "fixed" => match self.spec.shift {
                        ShiftRule::Fixed { .. } => self.spec.shift,
                        ShiftRule::PanelMax => ShiftRule::Fixed { observed: 0.0, simulated: 0.0 },
                    },
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected panel-max or fixed".into(),
                        })
                    }
                }
            }
            "shift_observed" | "shift_simulated" => {
                let v: f64 = parse(key, value)?;
                let (mut o, mut x) = match self.spec.shift {
                    ShiftRule::Fixed { observed, simulated } => (observed, simulated),
                    ShiftRule::PanelMax => (0.0, 0.0),
                };
                if key == "shift_observed" {
                    o = v;
                } else {
                    x = v;
                }
                self.spec.shift = ShiftRule::Fixed { observed: o, simulated: x };
            }
            "prior.beta_mean" => self.spec.priors.beta_mean = parse(key, value)?,
            "prior.beta_precision" => self.spec.priors.beta_precision = parse(key, value)?,
            "prior.kappa_shape" => self.spec.priors.kappa_shape = parse(key, value)?,
            "prior.kappa_rate" => self.spec.priors.kappa_rate = parse(key, value)?,
            "prior.xi_lower" => self.spec.priors.xi_lower = parse(key, value)?,
            "prior.xi_upper" => self.spec.priors.xi_upper = parse(key, value)?,
            "prior.tau_shape" => self.spec.priors.tau_shape = parse(key, value)?,
            "prior.tau_rate" => self.spec.priors.tau_rate = parse(key, value)?,
            "prior.alpha_lower" => self.spec.priors.alpha_lower = parse(key, value)?,
            "prior.alpha_upper" => self.spec.priors.alpha_upper = parse(key, value)?,
            "seed" => self.mcmc.seed = parse(key, value)?,
            "iterations" => self.mcmc.iterations = parse(key, value)?,
            "burn_in" => self.mcmc.burn_in = parse(key, value)?,
            "thin" => self.mcmc.thin = parse(key, value)?,
            "chains" => self.mcmc.chains = parse(key, value)?,
            "adapt_window" => self.mcmc.adapt_window = parse(key, value)?,
            "target_accept" => self.mcmc.target_accept = parse(key, value)?,
            "execution" => self.mcmc.execution = parse(key, value)?,
            "day" => self.day = if value.is_empty() { None } else { Some(value.to_string()) },
            "kde_bandwidth" => self.kde_bandwidth = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "kde_points" => self.kde_points = parse(key, value)?,
            "svg" => self.svg = parse_bool(key, value)?,
            "sim.n_stations" => self.simulation.n_stations = parse(key, value)?,
            "sim.n_observed" => self.simulation.n_observed = parse(key, value)?,
            "sim.days" => self.simulation.days = parse(key, value)?,
            "sim.spacing_km" => self.simulation.spacing_km = parse(key, value)?,
            "sim.missing_rate" => self.simulation.missing_rate = parse(key, value)?,
            "truth.beta_y" => self.simulation.truth.beta_y = parse(key, value)?,
            "truth.beta_x" => self.simulation.truth.beta_x = parse(key, value)?,
            "truth.kappa_y" => self.simulation.truth.kappa_y = parse(key, value)?,
            "truth.kappa_x" => self.simulation.truth.kappa_x = parse(key, value)?,
            "truth.xi_y" => self.simulation.truth.xi_y = parse(key, value)?,
            "truth.xi_x" => self.simulation.truth.xi_x = parse(key, value)?,
            "truth.alpha" => self.simulation.truth.alpha = parse(key, value)?,
            "truth.tau_w" => self.simulation.truth.tau_w = parse(key, value)?,
            "truth.tau_z" => self.simulation.truth.tau_z = parse(key, value)?,
            "truth.shift_y" => self.simulation.truth.shift_y = parse(key, value)?,
            "truth.shift_x" => self.simulation.truth.shift_x = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order; parsing the
    /// output of [`RunConfig::to_text`] gives back an equal config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let p = &self.spec.priors;
        let m = &self.mcmc;
        let s = &self.simulation;
        let mut e = vec![
            ("stations", path(&self.stations)),
            ("observed", path(&self.observed)),
            ("simulated", path(&self.simulated)),
            ("output", path(&self.output)),
            ("posterior", path(&self.posterior)),
            ("run_dir", path(&self.run_dir)),
            ("mode", self.mode.to_string()),
            ("correlation", self.spec.family.to_string()),
        ];
        match self.spec.shift {
            ShiftRule::PanelMax => e.push(("shift", "panel-max".into())),
            ShiftRule::Fixed { observed, simulated } => {
                e.push(("shift", "fixed".into()));
                e.push(("shift_observed", observed.to_string()));
                e.push(("shift_simulated", simulated.to_string()));
            }
        }
        let f = |v: f64| v.to_string();
        e.extend([
            ("prior.beta_mean", f(p.beta_mean)),
            ("prior.beta_precision", f(p.beta_precision)),
            ("prior.kappa_shape", f(p.kappa_shape)),
            ("prior.kappa_rate", f(p.kappa_rate)),
            ("prior.xi_lower", f(p.xi_lower)),
            ("prior.xi_upper", f(p.xi_upper)),
            ("prior.tau_shape", f(p.tau_shape)),
            ("prior.tau_rate", f(p.tau_rate)),
            ("prior.alpha_lower", f(p.alpha_lower)),
            ("prior.alpha_upper", f(p.alpha_upper)),
            ("seed", m.seed.to_string()),
            ("iterations", m.iterations.to_string()),
            ("burn_in", m.burn_in.to_string()),
            ("thin", m.thin.to_string()),
            ("chains", m.chains.to_string()),
            ("adapt_window", m.adapt_window.to_string()),
            ("target_accept", f(m.target_accept)),
            ("execution", m.execution.to_string()),
            ("day", self.day.clone().unwrap_or_default()),
            ("kde_bandwidth", self.kde_bandwidth.map(f).unwrap_or_default()),
            ("kde_points", self.kde_points.to_string()),
            ("svg", self.svg.to_string()),
            ("sim.n_stations", s.n_stations.to_string()),
            ("sim.n_observed", s.n_observed.to_string()),
            ("sim.days", s.days.to_string()),
            ("sim.spacing_km", f(s.spacing_km)),
            ("sim.missing_rate", f(s.missing_rate)),
            ("truth.beta_y", f(s.truth.beta_y)),
            ("truth.beta_x", f(s.truth.beta_x)),
            ("truth.kappa_y", f(s.truth.kappa_y)),
            ("truth.kappa_x", f(s.truth.kappa_x)),
            ("truth.xi_y", f(s.truth.xi_y)),
            ("truth.xi_x", f(s.truth.xi_x)),
            ("truth.alpha", f(s.truth.alpha)),
            ("truth.tau_w", f(s.truth.tau_w)),
            ("truth.tau_z", f(s.truth.tau_z)),
            ("truth.shift_y", f(s.truth.shift_y)),
            ("truth.shift_x", f(s.truth.shift_x)),
        ]);
        e
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Check the settings every command shares.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, value: String, reason: &str| {
            Err(ConfigError::Value { key: key.into(), value, reason: reason.into() })
        };
        if self.kde_points < 2 {
            return bad("kde_points", self.kde_points.to_string(), "at least 2 grid points");
        }
        if let Some(h) = self.kde_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad("kde_bandwidth", h.to_string(), "must be positive");
            }
        }
        let s = &self.simulation;
        if s.n_observed > s.n_stations || s.n_stations == 0 {
            return bad("sim.n_observed", s.n_observed.to_string(), "must not exceed sim.n_stations (> 0)");
        }
        if !(0.0..1.0).contains(&s.missing_rate) {
            return bad("sim.missing_rate", s.missing_rate.to_string(), "must lie in [0, 1)");
        }
        if self.spec.priors.validate().is_err() {
            return bad("prior", format!("{:?}", self.spec.priors), "inconsistent prior hyperparameters");
        }
        if let Err(e) = self.mcmc.validate() {
            return bad("iterations/burn_in/thin/chains/adapt_window", format!("{:?}", self.mcmc), &e.to_string());
        }
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &'static str) -> Result<&'a Path, ConfigError> {
        value.as_deref().ok_or(ConfigError::Missing(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nmode = marginal-empirical\nseed = 9\nshift_observed = 3.5\nprior.beta_precision = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::MarginalEmpirical);
        assert_eq!(c.mcmc.seed, 9);
        assert_eq!(c.spec.shift, ShiftRule::Fixed { observed: 3.5, simulated: 0.0 });
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn env_overrides_paths_only() {
        let mut c = RunConfig::default();
        c.set("output", "a").unwrap();
        c.apply_env_from(|v| (v == "EGPDCAL_OUTPUT").then(|| "b".to_string())).unwrap();
        assert_eq!(c.output, Some(PathBuf::from("b")));
    }

    #[test]
    fn errors() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("nonsense"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(c.set("colour", "red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("mode", "other"), Err(ConfigError::Value { .. })));
    }
}
