//! Posterior predictive calibration, posterior summaries and figure data.

use crate::calibration::conditional_calibrate_unchecked;
use crate::egpd::EgpdParams;
use crate::grid::Grid;
use crate::model::{PosteriorDraws, GLOBAL_NAMES};
use crate::panel::PanelData;
use crate::par::{self, Execution};
use crate::rng::{self, Domain};
use crate::stats;
use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictiveError {
    #[error("posterior draws are empty")]
    EmptyDraws,
    #[error("simulated panel is {got:?}, draws expect {expected:?}")]
    Shape { got: (usize, usize), expected: (usize, usize) },
    #[error("day index {day} out of range (panel has {days} days)")]
    DayOutOfRange { day: usize, days: usize },
    #[error("no values to summarise for '{0}'")]
    EmptySeries(String),
}

/// Calibrated values with their predictive spread.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedField {
    /// Posterior predictive mean of the calibrated value, stations by days.
    pub values: Grid,
    /// Predictive standard deviation across draws (divisor `M - 1`, zero for
    /// a single draw).
    pub pred_sd: Grid,
    /// Largest per-cell endpoint of the observed law over draws.
    pub upper: Grid,
    /// Cells where some draw had the simulated value above its source
    /// endpoint; those values were clamped to the endpoint.
    pub clamped: Vec<bool>,
}

impl CalibratedField {
    pub fn is_clamped(&self, i: usize, j: usize) -> bool {
        self.clamped[i * self.values.cols() + j]
    }

    pub fn clamp_count(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }
}

/// Map each simulated cell through every draw's conditional calibration and
/// average.
///
/// For a station with observations the observed-law endpoint of the draw is
/// used. For a simulator-only station, each draw contributes a fresh
/// endpoint from its shifted-exponential prior with rate
/// `exp(beta_y + w(i) + z(j))`; those draws come from a per-station stream of
/// `seed`, so the result does not depend on scheduling.
pub fn calibrate_field(
    draws: &PosteriorDraws,
    simulated: &Grid,
    seed: u64,
    exec: Execution,
) -> Result<CalibratedField, PredictiveError> {
    let first = &draws.draws.first().ok_or(PredictiveError::EmptyDraws)?.state;
    let expected = first.delta_x.shape();
    if simulated.shape() != expected {
        return Err(PredictiveError::Shape { got: simulated.shape(), expected });
    }
    let (ns, t) = expected;
    let mut obs_row = vec![None; ns];
    for (r, &i) in draws.observed_stations.iter().enumerate() {
        obs_row[i] = Some(r);
    }
    let m = draws.len() as f64;
    let rows = par::map_range(exec, ns, |i| {
        let mut rng = rng::stream(seed, Domain::Predictive, i as u64);
        let mut mean = vec![0.0; t];
        let mut m2 = vec![0.0; t];
        let mut upper = vec![0.0_f64; t];
        let mut clamped = vec![false; t];
        for (k, s) in draws.states().enumerate() {
            for j in 0..t {
                let delta_y = match obs_row[i] {
                    Some(r) => s.delta_y.get(r, j),
                    None => {
                        let rate = (s.beta_y + s.w[i] + s.z[j]).exp();
                        let e: f64 = rng.sample(Exp1);
                        draws.shift_y + e / rate
                    }
                };
                let source = EgpdParams { delta: s.delta_x.get(i, j), xi: s.xi_x, kappa: s.kappa_x };
                let target = EgpdParams { delta: delta_y, xi: s.xi_y, kappa: s.kappa_y };
                let c = conditional_calibrate_unchecked(simulated.get(i, j), &source, &target);
                clamped[j] |= c.clamped;
                upper[j] = upper[j].max(delta_y);
                // Welford update
                let n = (k + 1) as f64;
                let d = c.value - mean[j];
                mean[j] += d / n;
                m2[j] += d * (c.value - mean[j]);
            }
        }
        let sd: Vec<f64> = m2.iter().map(|&v| if m > 1.0 { (v / (m - 1.0)).max(0.0).sqrt() } else { 0.0 }).collect();
        (mean, sd, upper, clamped)
    });
    let mut values = Vec::with_capacity(ns * t);
    let mut sds = Vec::with_capacity(ns * t);
    let mut uppers = Vec::with_capacity(ns * t);
    let mut clamped = Vec::with_capacity(ns * t);
    for (mean, sd, upper, cl) in rows {
        values.extend(mean);
        sds.extend(sd);
        uppers.extend(upper);
        clamped.extend(cl);
    }
    Ok(CalibratedField {
        values: Grid::from_vec(ns, t, values),
        pred_sd: Grid::from_vec(ns, t, sds),
        upper: Grid::from_vec(ns, t, uppers),
        clamped,
    })
}

/// Column set of the posterior summary table.
pub const SUMMARY_COLUMNS: [&str; 7] = ["mean", "sd", "q2.5", "median", "q97.5", "min", "max"];

/// Marginal posterior summary of one scalar. Quantiles use the type 7 rule
/// (linear interpolation at `(n - 1) p`); `sd` uses divisor `n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn from_values(name: &str, values: &[f64]) -> Result<Self, PredictiveError> {
        if values.is_empty() {
            return Err(PredictiveError::EmptySeries(name.to_string()));
        }
        let s = stats::sorted(values);
        Ok(Self {
            name: name.to_string(),
            mean: stats::mean(values),
            sd: stats::std_dev(values),
            q025: stats::quantile_sorted(&s, 0.025),
            median: stats::quantile_sorted(&s, 0.5),
            q975: stats::quantile_sorted(&s, 0.975),
            min: s[0],
            max: s[s.len() - 1],
        })
    }

    /// Values in [`SUMMARY_COLUMNS`] order.
    pub fn columns(&self) -> [f64; 7] {
        [self.mean, self.sd, self.q025, self.median, self.q975, self.min, self.max]
    }

    /// Whether `value` lies in the central 95% interval.
    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

/// Summary of every global parameter, in table order.
pub fn summarize_posterior(draws: &PosteriorDraws) -> Result<Vec<SummaryRow>, PredictiveError> {
    if draws.is_empty() {
        return Err(PredictiveError::EmptyDraws);
    }
    GLOBAL_NAMES.iter().map(|name| SummaryRow::from_values(name, &draws.global(name))).collect()
}

/// Gaussian kernel density estimate on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl Kde {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid.windows(2).zip(self.density.windows(2)).map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1])).sum()
    }
}

/// Silverman's rule of thumb `0.9 min(sd, IQR / 1.34) n^(-1/5)`. When the
/// sample has no spread the bandwidth falls back to `0.1 max(|mean|, 1)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let sd = stats::std_dev(values);
    let s = stats::sorted(values);
    let iqr = if s.is_empty() { 0.0 } else { stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25) };
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        0.1 * stats::mean(values).abs().max(1.0)
    }
}

pub fn kde_on_grid(values: &[f64], bandwidth: f64, grid: &[f64]) -> Kde {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&g| {
            values
                .iter()
                .map(|&v| {
                    let u = (g - v) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Kde { bandwidth, grid: grid.to_vec(), density }
}

/// Evenly spaced grid covering every sample with `pad` on each side.
pub fn kde_grid(samples: &[&[f64]], pad: f64, points: usize) -> Vec<f64> {
    let (lo, hi) = samples
        .iter()
        .flat_map(|s| s.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = (lo - pad, hi + pad);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|k| lo + step * k as f64).collect()
}

/// One station on the exported day.
#[derive(Debug, Clone, PartialEq)]
pub struct StationDay {
    pub station: usize,
    pub observed: Option<f64>,
    pub simulated: f64,
    pub calibrated: f64,
}

/// Options for [`export_figures`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureOptions {
    /// Fixed bandwidth for all three densities; Silverman per sample when `None`.
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self { bandwidth: None, grid_points: 512 }
    }
}

/// Data behind the per-day figures.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureBundle {
    pub day: usize,
    /// Density of the day's observed values, `None` when all are missing.
    pub kde_observed: Option<Kde>,
    pub kde_simulated: Kde,
    pub kde_calibrated: Kde,
    pub stations: Vec<StationDay>,
    /// Five-number summaries of the posterior-mean `sigma_y` over stations,
    /// one per day.
    pub sigma_box_y: Vec<[f64; 5]>,
    pub sigma_box_x: Vec<[f64; 5]>,
}

pub fn export_figures(
    field: &CalibratedField,
    data: &PanelData,
    sigma_means: (&Grid, &Grid),
    day: usize,
    opts: FigureOptions,
) -> Result<FigureBundle, PredictiveError> {
    let days = data.days();
    if day >= days {
        return Err(PredictiveError::DayOutOfRange { day, days });
    }
    if field.values.shape() != data.simulated.shape() {
        return Err(PredictiveError::Shape { got: field.values.shape(), expected: data.simulated.shape() });
    }
    let observed: Vec<f64> = data.observed.column(day).into_iter().filter(|v| !v.is_nan()).collect();
    let simulated = data.simulated.column(day);
    let calibrated = field.values.column(day);
    let bw = |v: &[f64]| opts.bandwidth.unwrap_or_else(|| silverman_bandwidth(v));
    let (h_obs, h_sim, h_cal) =
        (if observed.is_empty() { 0.0 } else { bw(&observed) }, bw(&simulated), bw(&calibrated));
    let pad = 4.0 * h_obs.max(h_sim).max(h_cal);
    let grid = kde_grid(&[&observed, &simulated, &calibrated], pad, opts.grid_points.max(2));
    let mut obs_by_station = vec![None; data.n_stations()];
    for (r, &i) in data.observed_stations.iter().enumerate() {
        let v = data.observed.get(r, day);
        if !v.is_nan() {
            obs_by_station[i] = Some(v);
        }
    }
    let stations = (0..data.n_stations())
        .map(|i| StationDay {
            station: i,
            observed: obs_by_station[i],
            simulated: simulated[i],
            calibrated: calibrated[i],
        })
        .collect();
    let boxes = |g: &Grid| -> Vec<[f64; 5]> { (0..g.cols()).map(|j| stats::five_number(&g.column(j))).collect() };
    Ok(FigureBundle {
        day,
        kde_observed: (!observed.is_empty()).then(|| kde_on_grid(&observed, h_obs, &grid)),
        kde_simulated: kde_on_grid(&simulated, h_sim, &grid),
        kde_calibrated: kde_on_grid(&calibrated, h_cal, &grid),
        stations,
        sigma_box_y: if sigma_means.0.rows() > 0 { boxes(sigma_means.0) } else { Vec::new() },
        sigma_box_x: boxes(sigma_means.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_series_summary() {
        let r = SummaryRow::from_values("c", &[2.5; 10]).unwrap();
        assert_eq!((r.mean, r.median, r.min, r.max, r.sd), (2.5, 2.5, 2.5, 2.5, 0.0));
        assert!(SummaryRow::from_values("e", &[]).is_err());
    }

    #[test]
    fn one_to_hundred_quantiles() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let r = SummaryRow::from_values("u", &xs).unwrap();
        assert!(r.q025 > 3.0 && r.q025 < 4.0);
        assert_relative_eq!(r.q025, 3.475, epsilon = 1e-12);
        assert_relative_eq!(r.median, 50.5, epsilon = 1e-12);
        assert_relative_eq!(r.q975, 97.525, epsilon = 1e-12);
    }

    #[test]
    fn single_value_kde_is_one_bump() {
        let h = silverman_bandwidth(&[7.0]);
        assert_relative_eq!(h, 0.7);
        let grid = kde_grid(&[&[7.0]], 4.0 * h, 513);
        let k = kde_on_grid(&[7.0], h, &grid);
        let peak = k.density.iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(k.density[256], peak);
        assert_relative_eq!(k.grid[256], 7.0, epsilon = 1e-12);
        assert_relative_eq!(peak, 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt()), epsilon = 1e-12);
        assert!((k.integral() - 1.0).abs() < 1e-3);
    }
}
