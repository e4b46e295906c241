//! Hierarchical extended-GPD model for observed and simulated panels.
//!
//! Every observed cell `y(i,j)` follows an extended GPD with endpoint
//! `delta_y(i,j)`, shape `xi_y` and lower-tail shape `kappa_y`; simulated
//! cells follow the same construction with their own parameters. Each
//! endpoint is a shifted exponential,
//!
//! ```text
//! delta(i,j) - shift ~ Exp(lambda(i,j)),   log lambda(i,j) = beta + w(i) + z(j)
//! ```
//!
//! with the spatial field `w` shared across both panels (observed rows read
//! it at their network station) and the temporal RW1 field `z` shared too.

mod sampler;

pub use sampler::{
    initialize_state, run_mcmc, AcceptanceRates, Block, Chain, ChainDiagnostics, Draw, McmcConfig, PosteriorDraws,
    BLOCKS,
};

use crate::egpd::egpd_logpdf_unchecked;
use crate::grid::Grid;
use crate::latent::{rw1_logdensity, CorrelationFamily, LatentError, SpatialFactor, StationNetwork};
use crate::panel::{PanelData, PanelError};
use crate::par::{self, Execution};
use nalgebra::DMatrix;
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("non-finite log-posterior at initialisation: {0}")]
    NonFinite(String),
}

/// Hyperparameters of the prior. Normal priors are given by mean and
/// precision; gamma priors by shape and rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub beta_mean: f64,
    pub beta_precision: f64,
    pub kappa_shape: f64,
    pub kappa_rate: f64,
    pub xi_lower: f64,
    pub xi_upper: f64,
    pub tau_shape: f64,
    pub tau_rate: f64,
    pub alpha_lower: f64,
    pub alpha_upper: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            beta_mean: 0.0,
            beta_precision: 0.01,
            kappa_shape: 0.05,
            kappa_rate: 0.05,
            xi_lower: -0.5,
            xi_upper: 0.0,
            tau_shape: 1.0,
            tau_rate: 0.1,
            alpha_lower: 0.1,
            alpha_upper: 0.5,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.beta_mean.is_finite()
            && self.beta_precision > 0.0
            && self.kappa_shape > 0.0
            && self.kappa_rate > 0.0
            && self.tau_shape > 0.0
            && self.tau_rate > 0.0
            && self.xi_lower < self.xi_upper
            && self.xi_upper <= 0.0
            && self.alpha_lower > 0.0
            && self.alpha_lower < self.alpha_upper;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config(format!("invalid prior hyperparameters {self:?}")))
        }
    }

    pub fn log_beta(&self, beta: f64) -> f64 {
        log_normal(beta, self.beta_mean, self.beta_precision)
    }

    pub fn log_kappa(&self, kappa: f64) -> f64 {
        log_gamma_density(kappa, self.kappa_shape, self.kappa_rate)
    }

    pub fn log_tau(&self, tau: f64) -> f64 {
        log_gamma_density(tau, self.tau_shape, self.tau_rate)
    }

    pub fn log_xi(&self, xi: f64) -> f64 {
        log_uniform(xi, self.xi_lower, self.xi_upper)
    }

    pub fn log_alpha(&self, alpha: f64) -> f64 {
        log_uniform(alpha, self.alpha_lower, self.alpha_upper)
    }
}

/// Normal log-density parameterised by precision.
pub fn log_normal(x: f64, mean: f64, precision: f64) -> f64 {
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * (x - mean) * (x - mean)
}

/// Gamma(shape, rate) log-density; `-inf` for `x <= 0`.
pub fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Uniform log-density on the open interval `(lo, hi)`.
pub fn log_uniform(x: f64, lo: f64, hi: f64) -> f64 {
    if x > lo && x < hi {
        -(hi - lo).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Shifted exponential log-density `log(lambda) - lambda (delta - shift)`
/// for `delta > shift`.
#[inline]
pub fn log_shifted_exp(delta: f64, shift: f64, log_lambda: f64) -> f64 {
    let excess = delta - shift;
    if !(excess > 0.0) || !excess.is_finite() {
        return f64::NEG_INFINITY;
    }
    log_lambda - log_lambda.exp() * excess
}

/// Lanczos approximation of `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (k, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * LN_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

/// How the lower bound of the endpoint prior is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftRule {
    /// Global maximum of the respective panel.
    PanelMax,
    /// Explicit lower bounds for the observed and simulated endpoints.
    Fixed { observed: f64, simulated: f64 },
}

/// Static model choices that are not data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub priors: Priors,
    pub family: CorrelationFamily,
    pub shift: ShiftRule,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { priors: Priors::default(), family: CorrelationFamily::Disc, shift: ShiftRule::PanelMax }
    }
}

/// One point of the joint parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub beta_y: f64,
    pub beta_x: f64,
    pub kappa_y: f64,
    pub kappa_x: f64,
    pub xi_y: f64,
    pub xi_x: f64,
    pub alpha: f64,
    pub tau_w: f64,
    pub tau_z: f64,
    /// Spatial field over all network stations.
    pub w: Vec<f64>,
    /// Temporal field over days, sum-to-zero.
    pub z: Vec<f64>,
    /// Endpoints of the observed panel, observed stations by days.
    pub delta_y: Grid,
    /// Endpoints of the simulated panel, all stations by days.
    pub delta_x: Grid,
}

/// Names of the scalar global parameters, in summary-table order.
pub const GLOBAL_NAMES: [&str; 9] =
    ["alpha", "beta_y", "beta_x", "kappa_y", "kappa_x", "tau_w", "tau_z", "xi_y", "xi_x"];

impl ModelState {
    /// Global parameters in [`GLOBAL_NAMES`] order.
    pub fn globals(&self) -> [f64; 9] {
        [self.alpha, self.beta_y, self.beta_x, self.kappa_y, self.kappa_x, self.tau_w, self.tau_z, self.xi_y, self.xi_x]
    }

    pub fn global(&self, name: &str) -> Option<f64> {
        GLOBAL_NAMES.iter().position(|n| *n == name).map(|k| self.globals()[k])
    }

    /// GPD scales `sigma = -xi * delta` of the observed panel.
    pub fn sigma_y(&self) -> Grid {
        let xi = self.xi_y;
        self.delta_y.map(|d| -xi * d)
    }

    pub fn sigma_x(&self) -> Grid {
        let xi = self.xi_x;
        self.delta_x.map(|d| -xi * d)
    }
}

/// Data, network and static choices bound together; evaluates the posterior
/// kernel of a [`ModelState`].
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub data: &'a PanelData,
    pub spec: ModelSpec,
    pub shift_y: f64,
    pub shift_x: f64,
    scaled_distances: DMatrix<f64>,
    pub execution: Execution,
}

impl<'a> Model<'a> {
    pub fn new(data: &'a PanelData, network: &StationNetwork, spec: ModelSpec) -> Result<Self, ModelError> {
        spec.priors.validate()?;
        data.check_network(network.len(), &network.observed_indices())?;
        let (shift_y, shift_x) = match spec.shift {
            ShiftRule::PanelMax => {
                (data.observed.max_present().unwrap_or(0.0), data.simulated.max_present().unwrap_or(0.0))
            }
            ShiftRule::Fixed { observed, simulated } => (observed, simulated),
        };
        if !(shift_y.is_finite() && shift_y >= 0.0 && shift_x.is_finite() && shift_x >= 0.0) {
            return Err(ModelError::Config(format!(
                "endpoint shifts must be finite and >= 0, got {shift_y}, {shift_x}"
            )));
        }
        Ok(Self {
            data,
            spec,
            shift_y,
            shift_x,
            scaled_distances: network.scaled_distances(),
            execution: Execution::Sequential,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn priors(&self) -> &Priors {
        &self.spec.priors
    }

    pub fn scaled_distances(&self) -> &DMatrix<f64> {
        &self.scaled_distances
    }

    pub fn n_stations(&self) -> usize {
        self.data.n_stations()
    }

    pub fn n_observed(&self) -> usize {
        self.data.n_observed()
    }

    pub fn days(&self) -> usize {
        self.data.days()
    }

    pub fn spatial_factor(&self, alpha: f64) -> Result<SpatialFactor, LatentError> {
        SpatialFactor::new(&self.scaled_distances, alpha, self.spec.family)
    }

    /// Log-likelihood of observed row `r`.
    pub fn row_loglik_y(&self, state: &ModelState, r: usize) -> f64 {
        let y = self.data.observed.row(r);
        let d = state.delta_y.row(r);
        y.iter()
            .zip(d)
            .filter(|(v, _)| !v.is_nan())
            .map(|(&v, &delta)| egpd_logpdf_unchecked(v, delta, state.xi_y, state.kappa_y))
            .sum()
    }

    /// Log-likelihood of simulated row `i`.
    pub fn row_loglik_x(&self, state: &ModelState, i: usize) -> f64 {
        let x = self.data.simulated.row(i);
        let d = state.delta_x.row(i);
        x.iter().zip(d).map(|(&v, &delta)| egpd_logpdf_unchecked(v, delta, state.xi_x, state.kappa_x)).sum()
    }

    pub fn loglik_y(&self, state: &ModelState) -> f64 {
        par::ordered_sum(self.execution, self.n_observed(), |r| self.row_loglik_y(state, r))
    }

    pub fn loglik_x(&self, state: &ModelState) -> f64 {
        par::ordered_sum(self.execution, self.n_stations(), |i| self.row_loglik_x(state, i))
    }

    /// Sum of extended-GPD log-densities over observed (non-missing) and
    /// simulated cells.
    pub fn log_likelihood(&self, state: &ModelState) -> f64 {
        self.loglik_y(state) + self.loglik_x(state)
    }

    /// Endpoint prior of observed row `r`.
    pub fn row_delta_prior_y(&self, state: &ModelState, r: usize) -> f64 {
        let station = self.data.observed_stations[r];
        let base = state.beta_y + state.w[station];
        state.delta_y.row(r).iter().zip(&state.z).map(|(&d, &z)| log_shifted_exp(d, self.shift_y, base + z)).sum()
    }

    pub fn row_delta_prior_x(&self, state: &ModelState, i: usize) -> f64 {
        let base = state.beta_x + state.w[i];
        state.delta_x.row(i).iter().zip(&state.z).map(|(&d, &z)| log_shifted_exp(d, self.shift_x, base + z)).sum()
    }

    pub fn delta_prior_y(&self, state: &ModelState) -> f64 {
        par::ordered_sum(self.execution, self.n_observed(), |r| self.row_delta_prior_y(state, r))
    }

    pub fn delta_prior_x(&self, state: &ModelState) -> f64 {
        par::ordered_sum(self.execution, self.n_stations(), |i| self.row_delta_prior_x(state, i))
    }

    /// Log prior of the global parameters only.
    pub fn global_log_prior(&self, state: &ModelState) -> f64 {
        let p = &self.spec.priors;
        p.log_beta(state.beta_y)
            + p.log_beta(state.beta_x)
            + p.log_kappa(state.kappa_y)
            + p.log_kappa(state.kappa_x)
            + p.log_xi(state.xi_y)
            + p.log_xi(state.xi_x)
            + p.log_tau(state.tau_w)
            + p.log_tau(state.tau_z)
            + p.log_alpha(state.alpha)
    }

    /// Joint log prior: globals, both latent fields and every endpoint cell.
    /// Returns `-inf` outside the support (including a spatial correlation
    /// that cannot be factorised).
    pub fn log_prior(&self, state: &ModelState) -> f64 {
        let globals = self.global_log_prior(state);
        if globals == f64::NEG_INFINITY {
            return globals;
        }
        let spatial = match self.spatial_factor(state.alpha) {
            Ok(f) => f.log_density(&state.w, state.tau_w),
            Err(_) => return f64::NEG_INFINITY,
        };
        globals
            + spatial
            + rw1_logdensity(&state.z, state.tau_z)
            + self.delta_prior_y(state)
            + self.delta_prior_x(state)
    }

    pub fn log_posterior(&self, state: &ModelState) -> f64 {
        let prior = self.log_prior(state);
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        prior + self.log_likelihood(state)
    }

    /// Name the first non-finite component of the log-posterior.
    pub fn check_finite(&self, state: &ModelState) -> Result<(), ModelError> {
        let p = &self.spec.priors;
        let named = [
            ("prior beta_y", p.log_beta(state.beta_y)),
            ("prior beta_x", p.log_beta(state.beta_x)),
            ("prior kappa_y", p.log_kappa(state.kappa_y)),
            ("prior kappa_x", p.log_kappa(state.kappa_x)),
            ("prior xi_y", p.log_xi(state.xi_y)),
            ("prior xi_x", p.log_xi(state.xi_x)),
            ("prior tau_w", p.log_tau(state.tau_w)),
            ("prior tau_z", p.log_tau(state.tau_z)),
            ("prior alpha", p.log_alpha(state.alpha)),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(ModelError::NonFinite(name.to_string()));
            }
        }
        let factor = self.spatial_factor(state.alpha)?;
        if !factor.log_density(&state.w, state.tau_w).is_finite() {
            return Err(ModelError::NonFinite("spatial field w".into()));
        }
        if !rw1_logdensity(&state.z, state.tau_z).is_finite() {
            return Err(ModelError::NonFinite("temporal field z".into()));
        }
        for r in 0..self.n_observed() {
            if !self.row_delta_prior_y(state, r).is_finite() {
                return Err(ModelError::NonFinite(format!("endpoint prior delta_y, observed row {r}")));
            }
            if !self.row_loglik_y(state, r).is_finite() {
                return Err(ModelError::NonFinite(format!(
                    "observed likelihood, row {r} (values must lie strictly inside (0, delta))"
                )));
            }
        }
        for i in 0..self.n_stations() {
            if !self.row_delta_prior_x(state, i).is_finite() {
                return Err(ModelError::NonFinite(format!("endpoint prior delta_x, station {i}")));
            }
            if !self.row_loglik_x(state, i).is_finite() {
                return Err(ModelError::NonFinite(format!(
                    "simulated likelihood, station {i} (values must lie strictly inside (0, delta))"
                )));
            }
        }
        Ok(())
    }

    /// All box, positivity and endpoint constraints of a state.
    pub fn satisfies_constraints(&self, state: &ModelState) -> bool {
        let p = &self.spec.priors;
        state.kappa_y > 0.0
            && state.kappa_x > 0.0
            && state.tau_w > 0.0
            && state.tau_z > 0.0
            && state.xi_y > p.xi_lower
            && state.xi_y < p.xi_upper
            && state.xi_x > p.xi_lower
            && state.xi_x < p.xi_upper
            && state.alpha > p.alpha_lower
            && state.alpha < p.alpha_upper
            && state.delta_y.as_slice().iter().all(|&d| d > self.shift_y)
            && state.delta_x.as_slice().iter().all(|&d| d > self.shift_x)
            && state.w.iter().chain(&state.z).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(5.0), 24.0_f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
        // Gamma(0.05) = 19.4700853112555...
        assert_relative_eq!(ln_gamma(0.05), 19.470_085_311_255_51_f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn prior_densities() {
        let p = Priors::default();
        // Ga(1, 0.1) is exponential with rate 0.1
        assert_relative_eq!(p.log_tau(3.0), 0.1_f64.ln() - 0.3, epsilon = 1e-12);
        assert_eq!(p.log_xi(0.01), f64::NEG_INFINITY);
        assert_eq!(p.log_xi(-0.5), f64::NEG_INFINITY);
        assert_relative_eq!(p.log_xi(-0.1), 2.0_f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(p.log_alpha(0.3), -(0.4_f64.ln()), epsilon = 1e-12);
        // precision 0.01 means variance 100
        assert_relative_eq!(p.log_beta(10.0), -0.5 * (200.0 * std::f64::consts::PI).ln() - 0.5, epsilon = 1e-12);
        assert_eq!(p.log_kappa(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn shifted_exponential() {
        assert_relative_eq!(log_shifted_exp(3.5, 2.0, 0.0), -1.5);
        assert_eq!(log_shifted_exp(2.0, 2.0, 0.0), f64::NEG_INFINITY);
    }
}
