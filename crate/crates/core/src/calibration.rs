//! Quantile-matching maps `x -> F_target^-1(F_source(x))`.
//!
//! Two flavours are offered: a marginal map between two fixed laws (either
//! parametric extended-GPD laws or empirical distribution functions) and the
//! per-cell conditional map between two extended-GPD laws used by the
//! hierarchical model.

use crate::egpd::{
    egpd_cdf_unchecked, egpd_log_sf_unchecked, egpd_logpdf_unchecked, egpd_quantile_from_log_sf_unchecked,
    egpd_quantile_unchecked, endpoint_h, DomainError, EgpdParams,
};
use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("empirical distribution needs at least one finite value")]
    EmptySample,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("value {0} is not a valid input (must be finite and >= 0)")]
    Input(f64),
    #[error("extended-GPD fit needs at least {needed} positive values, got {got}")]
    TooFewForFit { needed: usize, got: usize },
    #[error("extended-GPD fit failed: {0}")]
    Fit(String),
}

/// Interpolation rule of an [`EmpiricalCdf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlottingPosition {
    /// Order statistic `k` (1-based) sits at probability `(k - 0.5) / n`.
    #[default]
    Hazen,
}

/// Piecewise-linear empirical distribution function.
///
/// The `k`-th order statistic `v_k` is placed at `p_k = (k - 0.5) / n` and
/// the function interpolates linearly between consecutive points. Below the
/// smallest value it is 0, above the largest it is 1; ties take the largest
/// position, so evaluation is right-continuous. The inverse is clamped to
/// `[v_1, v_n]` outside `[p_1, p_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
    rule: PlottingPosition,
    dropped: usize,
}

impl EmpiricalCdf {
    /// Build from a sample; non-finite entries (missing values) are dropped
    /// and counted.
    pub fn new(sample: &[f64]) -> Result<Self, CalibrationError> {
        let mut values: Vec<f64> = sample.iter().copied().filter(|v| v.is_finite()).collect();
        let dropped = sample.len() - values.len();
        if values.is_empty() {
            return Err(CalibrationError::EmptySample);
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values, rule: PlottingPosition::Hazen, dropped })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of missing entries excluded at construction.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn rule(&self) -> PlottingPosition {
        self.rule
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn position(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.values.len() as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let v = &self.values;
        let n = v.len();
        if x < v[0] {
            return 0.0;
        }
        if x > v[n - 1] {
            return 1.0;
        }
        // last index with v[k] <= x
        let k = v.partition_point(|&t| t <= x) - 1;
        if k + 1 == n || v[k] == x {
            return self.position(k);
        }
        let frac = (x - v[k]) / (v[k + 1] - v[k]);
        self.position(k) + frac / n as f64
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let v = &self.values;
        let n = v.len();
        let h = p * n as f64 - 0.5;
        if !(h > 0.0) {
            return v[0];
        }
        if h >= (n - 1) as f64 {
            return v[n - 1];
        }
        let k = h.floor() as usize;
        v[k] + (h - k as f64) * (v[k + 1] - v[k])
    }
}

/// A univariate law usable on either side of a calibration map.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Egpd(EgpdParams),
    Empirical(EmpiricalCdf),
}

impl Law {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Law::Egpd(p) => egpd_cdf_unchecked(x, p.delta, p.xi, p.kappa),
            Law::Empirical(e) => e.cdf(x),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Law::Egpd(p) => egpd_quantile_unchecked(u, p.delta, p.xi, p.kappa),
            Law::Empirical(e) => e.quantile(u),
        }
    }

    /// `ln(1 - F(x))`.
    pub fn log_sf(&self, x: f64) -> f64 {
        match self {
            Law::Egpd(p) => egpd_log_sf_unchecked(x, p.delta, p.xi, p.kappa),
            Law::Empirical(e) => (-e.cdf(x)).ln_1p(),
        }
    }

    /// Quantile at survival probability `exp(ln_s)`.
    pub fn quantile_from_log_sf(&self, ln_s: f64) -> f64 {
        match self {
            Law::Egpd(p) => egpd_quantile_from_log_sf_unchecked(ln_s, p.delta, p.xi, p.kappa),
            Law::Empirical(e) => e.quantile(-ln_s.exp_m1()),
        }
    }

    /// Upper end of the support (largest sample value for an empirical law).
    pub fn upper(&self) -> f64 {
        match self {
            Law::Egpd(p) => p.delta,
            Law::Empirical(e) => e.values[e.values.len() - 1],
        }
    }
}

/// Marginal quantile-matching map between a source and a target law.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMap {
    pub source: Law,
    pub target: Law,
}

impl CalibrationMap {
    pub fn new(source: Law, target: Law) -> Self {
        Self { source, target }
    }

    /// `F_target^-1(F_source(x))`; `NaN` passes through unchanged. Above the
    /// source median the map is evaluated as `S_target^-1(S_source(x))` with
    /// `S = 1 - F` in log space.
    pub fn apply(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let u = self.source.cdf(x);
        if u <= 0.5 {
            self.target.quantile(u)
        } else {
            self.target.quantile_from_log_sf(self.source.log_sf(x))
        }
    }
}

/// Element-wise marginal calibration. Missing (`NaN`) inputs stay missing.
pub fn marginal_calibrate(x: &[f64], map: &CalibrationMap) -> Vec<f64> {
    x.iter().map(|&v| map.apply(v)).collect()
}

/// Result of a conditional calibration of one value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibrated {
    pub value: f64,
    /// The input lay above the source endpoint and was clamped to it.
    pub clamped: bool,
}

/// Conditional calibration between two extended-GPD laws.
///
/// Inputs above the source endpoint are clamped to it and flagged; the
/// clamped value maps to the target endpoint.
pub fn conditional_calibrate(x: f64, source: &EgpdParams, target: &EgpdParams) -> Result<Calibrated, CalibrationError> {
    source.validate()?;
    target.validate()?;
    if !(x.is_finite() && x >= 0.0) {
        return Err(CalibrationError::Input(x));
    }
    Ok(conditional_calibrate_unchecked(x, source, target))
}

#[inline]
pub(crate) fn conditional_calibrate_unchecked(x: f64, source: &EgpdParams, target: &EgpdParams) -> Calibrated {
    let clamped = x > source.delta;
    let x = x.min(source.delta);
    let u = egpd_cdf_unchecked(x, source.delta, source.xi, source.kappa);
    let value = if u <= 0.5 {
        egpd_quantile_unchecked(u, target.delta, target.xi, target.kappa)
    } else {
        let ln_s = egpd_log_sf_unchecked(x, source.delta, source.xi, source.kappa);
        egpd_quantile_from_log_sf_unchecked(ln_s, target.delta, target.xi, target.kappa)
    };
    Calibrated { value, clamped }
}

/// Bounds of the shape parameter searched by [`fit_egpd`].
pub const FIT_XI_BOUNDS: (f64, f64) = (-0.5, -1e-6);

/// Profile negative log-likelihood over `(log(delta - max), logit xi)`;
/// `kappa` is maximised in closed form, `kappa = -n / sum(log H)`.
struct ProfileNll<'a> {
    sample: &'a [f64],
    max: f64,
}

impl ProfileNll<'_> {
    fn params(&self, p: &[f64]) -> (f64, f64, f64) {
        let (lo, hi) = FIT_XI_BOUNDS;
        let delta = self.max + p[0].exp();
        let xi = lo + (hi - lo) / (1.0 + (-p[1]).exp());
        let sum_log_h: f64 = self.sample.iter().map(|&y| endpoint_h(y, delta, xi).ln()).sum();
        let kappa = -(self.sample.len() as f64) / sum_log_h;
        (delta, xi, kappa)
    }
}

impl CostFunction for ProfileNll<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        let (delta, xi, kappa) = self.params(p);
        if !(kappa.is_finite() && kappa > 0.0 && delta.is_finite()) {
            return Ok(f64::MAX);
        }
        let ll: f64 = self.sample.iter().map(|&y| egpd_logpdf_unchecked(y, delta, xi, kappa)).sum();
        Ok(if ll.is_finite() { -ll } else { f64::MAX })
    }
}

/// Maximum-likelihood extended-GPD fit of a positive sample.
///
/// Zeros and non-finite entries are ignored. The shape is restricted to
/// [`FIT_XI_BOUNDS`], where the likelihood is bounded.
pub fn fit_egpd(sample: &[f64]) -> Result<EgpdParams, CalibrationError> {
    let ys: Vec<f64> = sample.iter().copied().filter(|v| v.is_finite() && *v > 0.0).collect();
    if ys.len() < 3 {
        return Err(CalibrationError::TooFewForFit { needed: 3, got: ys.len() });
    }
    let max = ys.iter().copied().fold(f64::MIN, f64::max);
    let spread = crate::stats::std_dev(&ys).max(1e-3 * max);
    let start = vec![spread.ln(), 0.0];
    let simplex = vec![start.clone(), vec![start[0] + 1.0, start[1]], vec![start[0], start[1] + 1.0]];
    let problem = ProfileNll { sample: &ys, max };
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10).map_err(|e| CalibrationError::Fit(e.to_string()))?;
    let res = Executor::new(ProfileNll { sample: &ys, max }, solver)
        .configure(|s| s.max_iters(2000))
        .run()
        .map_err(|e| CalibrationError::Fit(e.to_string()))?;
    let best = res.state().best_param.clone().ok_or_else(|| CalibrationError::Fit("no optimum".into()))?;
    let (delta, xi, kappa) = problem.params(&best);
    Ok(EgpdParams::new(delta, xi, kappa)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empirical_positions() {
        let e = EmpiricalCdf::new(&[3.0, 1.0, 2.0, f64::NAN]).unwrap();
        assert_eq!(e.dropped(), 1);
        assert_eq!(e.values(), &[1.0, 2.0, 3.0]);
        assert_relative_eq!(e.cdf(1.0), 0.5 / 3.0);
        assert_relative_eq!(e.cdf(1.5), 1.0 / 3.0);
        assert_relative_eq!(e.cdf(3.0), 2.5 / 3.0);
        assert_eq!(e.cdf(0.5), 0.0);
        assert_eq!(e.cdf(3.5), 1.0);
        assert_relative_eq!(e.quantile(1.0 / 3.0), 1.5);
        assert_eq!(e.quantile(0.01), 1.0);
        assert_eq!(e.quantile(0.99), 3.0);
        assert!(EmpiricalCdf::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn empirical_ties_are_right_continuous() {
        let e = EmpiricalCdf::new(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(e.cdf(2.0), 2.5 / 4.0);
    }

    #[test]
    fn empirical_identity() {
        let xs = [0.3, 1.7, 2.2, 5.0, 9.1];
        let e = EmpiricalCdf::new(&xs).unwrap();
        let map = CalibrationMap::new(Law::Empirical(e.clone()), Law::Empirical(e));
        for (&x, y) in xs.iter().zip(marginal_calibrate(&xs, &map)) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn nan_propagates_and_empty_is_empty() {
        let p = EgpdParams::new(10.0, -0.1, 2.0).unwrap();
        let map = CalibrationMap::new(Law::Egpd(p), Law::Egpd(p));
        assert!(marginal_calibrate(&[], &map).is_empty());
        let out = marginal_calibrate(&[1.0, f64::NAN], &map);
        assert!(out[1].is_nan());
    }

    #[test]
    fn conditional_pinned_value() {
        // 50-digit evaluation of the two closed forms
        let px = EgpdParams::new(20.0, -0.08, 18.0).unwrap();
        let py = EgpdParams::new(25.0, -0.07, 5.0).unwrap();
        let c = conditional_calibrate(10.0, &px, &py).unwrap();
        assert!(!c.clamped);
        assert_relative_eq!(c.value, 10.090_155_475_900_534, max_relative = 1e-10);
    }

    #[test]
    fn fit_recovers_generating_law() {
        let truth = EgpdParams::new(25.0, -0.1, 5.0).unwrap();
        let ys = truth.sample(20_000, 3).unwrap();
        let fit = fit_egpd(&ys).unwrap();
        assert!((fit.kappa - 5.0).abs() < 0.5, "{fit:?}");
        assert!((fit.xi + 0.1).abs() < 0.03, "{fit:?}");
        assert!(fit.delta > ys.iter().copied().fold(0.0, f64::max));
        assert!(fit_egpd(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn conditional_endpoint_and_clamp() {
        let px = EgpdParams::new(20.0, -0.08, 18.0).unwrap();
        let py = EgpdParams::new(25.0, -0.07, 5.0).unwrap();
        assert_eq!(conditional_calibrate(20.0, &px, &py).unwrap().value, 25.0);
        let c = conditional_calibrate(21.0, &px, &py).unwrap();
        assert!(c.clamped);
        assert_eq!(c.value, 25.0);
        assert!(conditional_calibrate(f64::NAN, &px, &py).is_err());
    }
}
