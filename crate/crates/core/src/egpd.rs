//! Extended generalized Pareto laws with a power-type lower tail.
//!
//! The extended law is the composition `F = G(H(.))` where `H` is a GPD
//! distribution function and `G(u) = u^kappa`. For a negative shape the GPD
//! has a finite upper endpoint `delta = -sigma / xi`, and the model works in
//! that endpoint form throughout:
//!
//! ```text
//! F(y | delta, xi, kappa) = (1 - (1 - y / delta)_+^(-1/xi))^kappa
//! ```
//!
//! Support is taken as the open interval `(0, delta)`. The log-density is
//! `-inf` outside it, including at both boundary points.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Below this magnitude of `xi` the GPD distribution function switches to
/// the exponential limit `1 - exp(-y / sigma)`.
pub const XI_EXPONENTIAL_SWITCH: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("scale sigma must be finite and > 0, got {0}")]
    Sigma(f64),
    #[error("shape xi must be finite, got {0}")]
    Xi(f64),
    #[error("endpoint form requires xi < 0, got {0}")]
    XiNotNegative(f64),
    #[error("endpoint delta must be finite and > 0, got {0}")]
    Delta(f64),
    #[error("lower-tail shape kappa must be finite and > 0, got {0}")]
    Kappa(f64),
    #[error("argument must be finite and >= 0, got {0}")]
    Argument(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("sample size must be >= 1")]
    EmptySample,
}

/// Generalized Pareto law in the usual (scale, shape) form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self, DomainError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(DomainError::Sigma(sigma));
        }
        if !xi.is_finite() {
            return Err(DomainError::Xi(xi));
        }
        Ok(Self { sigma, xi })
    }

    /// Upper end of the support; infinite for `xi >= 0`.
    pub fn upper_endpoint(&self) -> f64 {
        if self.xi < 0.0 {
            -self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }

    pub fn cdf(&self, y: f64) -> Result<f64, DomainError> {
        check_argument(y)?;
        Ok(gpd_cdf_unchecked(y, self.sigma, self.xi))
    }

    /// Log-density on the open support; `-inf` elsewhere.
    pub fn logpdf(&self, y: f64) -> f64 {
        if !(y > 0.0) || y >= self.upper_endpoint() {
            return f64::NEG_INFINITY;
        }
        let z = y / self.sigma;
        if self.xi.abs() < XI_EXPONENTIAL_SWITCH {
            -self.sigma.ln() - z
        } else {
            -self.sigma.ln() - (1.0 / self.xi + 1.0) * (self.xi * z).ln_1p()
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64, DomainError> {
        check_probability(u)?;
        if u == 1.0 {
            return Ok(self.upper_endpoint());
        }
        let ln_tail = (-u).ln_1p();
        Ok(if self.xi.abs() < XI_EXPONENTIAL_SWITCH {
            -self.sigma * ln_tail
        } else {
            self.sigma / self.xi * (-self.xi * ln_tail).exp_m1()
        })
    }
}

/// Family of the transform `G` applied on top of the GPD distribution
/// function. Only the power family is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[non_exhaustive]
pub enum TailFamily {
    /// `G(u) = u^kappa`.
    #[default]
    Power,
}

/// Extended GPD in endpoint form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgpdParams {
    pub delta: f64,
    pub xi: f64,
    pub kappa: f64,
}

impl EgpdParams {
    pub fn new(delta: f64, xi: f64, kappa: f64) -> Result<Self, DomainError> {
        let p = Self { delta, xi, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(DomainError::Delta(self.delta));
        }
        if !self.xi.is_finite() {
            return Err(DomainError::Xi(self.xi));
        }
        if !(self.xi < 0.0) {
            return Err(DomainError::XiNotNegative(self.xi));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(DomainError::Kappa(self.kappa));
        }
        Ok(())
    }

    pub fn family(&self) -> TailFamily {
        TailFamily::Power
    }

    /// Implied GPD scale `sigma = -xi * delta`.
    pub fn sigma(&self) -> f64 {
        -self.xi * self.delta
    }

    pub fn gpd(&self) -> GpdParams {
        GpdParams { sigma: self.sigma(), xi: self.xi }
    }

    pub fn cdf(&self, y: f64) -> Result<f64, DomainError> {
        check_argument(y)?;
        Ok(egpd_cdf_unchecked(y, self.delta, self.xi, self.kappa))
    }

    pub fn quantile(&self, u: f64) -> Result<f64, DomainError> {
        check_probability(u)?;
        Ok(egpd_quantile_unchecked(u, self.delta, self.xi, self.kappa))
    }

    /// `ln(1 - F(y))`, accurate where `F(y)` rounds to one.
    pub fn log_sf(&self, y: f64) -> Result<f64, DomainError> {
        check_argument(y)?;
        Ok(egpd_log_sf_unchecked(y, self.delta, self.xi, self.kappa))
    }

    /// Quantile at survival probability `exp(ln_s)`.
    pub fn quantile_from_log_sf(&self, ln_s: f64) -> Result<f64, DomainError> {
        if !(ln_s <= 0.0) {
            return Err(DomainError::Probability(ln_s.exp()));
        }
        Ok(egpd_quantile_from_log_sf_unchecked(ln_s, self.delta, self.xi, self.kappa))
    }

    /// `log[kappa h(y) H(y)^(kappa - 1)]` on `(0, delta)`, `-inf` elsewhere.
    pub fn logpdf(&self, y: f64) -> f64 {
        egpd_logpdf_unchecked(y, self.delta, self.xi, self.kappa)
    }

    /// Inverse-CDF draws using the supplied generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>, DomainError> {
        if n == 0 {
            return Err(DomainError::EmptySample);
        }
        Ok((0..n).map(|_| self.draw(rng)).collect())
    }

    /// Reproducible draws from a seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>, DomainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    /// One draw; the uniform is taken on the open unit interval so the value
    /// stays strictly inside the support except when it underflows.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        egpd_quantile_unchecked(u, self.delta, self.xi, self.kappa)
    }
}

fn check_argument(y: f64) -> Result<(), DomainError> {
    if y.is_finite() && y >= 0.0 {
        Ok(())
    } else {
        Err(DomainError::Argument(y))
    }
}

fn check_probability(u: f64) -> Result<(), DomainError> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(DomainError::Probability(u))
    }
}

pub fn gpd_cdf(y: f64, p: &GpdParams) -> Result<f64, DomainError> {
    GpdParams::new(p.sigma, p.xi)?.cdf(y)
}

pub fn egpd_cdf(y: f64, p: &EgpdParams) -> Result<f64, DomainError> {
    p.validate()?;
    p.cdf(y)
}

pub fn egpd_quantile(u: f64, p: &EgpdParams) -> Result<f64, DomainError> {
    p.validate()?;
    p.quantile(u)
}

pub fn egpd_logpdf(y: f64, p: &EgpdParams) -> Result<f64, DomainError> {
    p.validate()?;
    Ok(p.logpdf(y))
}

pub fn egpd_sample(n: usize, p: &EgpdParams, seed: u64) -> Result<Vec<f64>, DomainError> {
    p.validate()?;
    p.sample(n, seed)
}

pub(crate) fn gpd_cdf_unchecked(y: f64, sigma: f64, xi: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let z = y / sigma;
    if xi.abs() < XI_EXPONENTIAL_SWITCH {
        return -(-z).exp_m1();
    }
    let base = xi * z;
    if base <= -1.0 {
        return 1.0;
    }
    // 1 - (1 + xi z)^(-1/xi)
    (-((-base.ln_1p() / xi).exp_m1())).clamp(0.0, 1.0)
}

/// GPD distribution function in endpoint form, `1 - (1 - y/delta)_+^(-1/xi)`.
#[inline]
pub(crate) fn endpoint_h(y: f64, delta: f64, xi: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= delta {
        return 1.0;
    }
    // ln(1 - y/delta) is computed with ln_1p to keep precision near the origin.
    -((-y / delta).ln_1p() * (-1.0 / xi)).exp_m1()
}

#[inline]
pub(crate) fn egpd_cdf_unchecked(y: f64, delta: f64, xi: f64, kappa: f64) -> f64 {
    let h = endpoint_h(y, delta, xi);
    if h <= 0.0 {
        0.0
    } else if h >= 1.0 {
        1.0
    } else {
        (kappa * h.ln()).exp()
    }
}

#[inline]
pub(crate) fn egpd_quantile_unchecked(u: f64, delta: f64, xi: f64, kappa: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return delta;
    }
    // ln(1 - u^(1/kappa))
    let v = (u.ln() / kappa).exp();
    if v >= 1.0 {
        return delta;
    }
    endpoint_from_log_lower((-v).ln_1p(), delta, xi)
}

/// `delta * (1 - q^(-xi))` from `ln q`, where `q = (1 - y/delta)^(-1/xi)`.
#[inline]
fn endpoint_from_log_lower(ln_q: f64, delta: f64, xi: f64) -> f64 {
    if ln_q == f64::NEG_INFINITY {
        return delta;
    }
    (-delta * (-xi * ln_q).exp_m1()).clamp(0.0, delta)
}

/// Below this `q` the series forms of the survival function are used.
const SERIES_SWITCH: f64 = 1e-8;

/// Natural log of the survival function `1 - F(y)`, accurate far into the
/// upper tail where `F(y)` rounds to one.
#[inline]
pub(crate) fn egpd_log_sf_unchecked(y: f64, delta: f64, xi: f64, kappa: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= delta {
        return f64::NEG_INFINITY;
    }
    // q = 1 - H = (1 - y/delta)^(-1/xi);  S = 1 - (1 - q)^kappa
    let ln_q = (-y / delta).ln_1p() * (-1.0 / xi);
    let q = ln_q.exp();
    if q < SERIES_SWITCH {
        // S = kappa q (1 - (kappa - 1) q / 2 + O(q^2))
        kappa.ln() + ln_q + (-(kappa - 1.0) * q / 2.0).ln_1p()
    } else {
        (-(kappa * (-q).ln_1p()).exp_m1()).ln()
    }
}

/// Inverse of [`egpd_log_sf_unchecked`]: the `y` with `ln S(y) = ln_s`.
#[inline]
pub(crate) fn egpd_quantile_from_log_sf_unchecked(ln_s: f64, delta: f64, xi: f64, kappa: f64) -> f64 {
    if ln_s >= 0.0 {
        return 0.0;
    }
    if ln_s == f64::NEG_INFINITY {
        return delta;
    }
    let s = ln_s.exp();
    // q = 1 - (1 - S)^(1/kappa)
    let ln_q = if s < SERIES_SWITCH {
        ln_s - kappa.ln() + (-(1.0 / kappa - 1.0) * s / 2.0).ln_1p()
    } else {
        (-((-s).ln_1p() / kappa).exp_m1()).ln()
    };
    endpoint_from_log_lower(ln_q, delta, xi)
}

#[inline]
pub(crate) fn egpd_logpdf_unchecked(y: f64, delta: f64, xi: f64, kappa: f64) -> f64 {
    if !(y > 0.0 && y < delta) {
        return f64::NEG_INFINITY;
    }
    let shape = -1.0 / xi;
    let ln_survival_base = (-y / delta).ln_1p();
    // h(y) = (shape / delta) (1 - y/delta)^(shape - 1)
    let ln_h = shape.ln() - delta.ln() + (shape - 1.0) * ln_survival_base;
    let h_cdf = -(shape * ln_survival_base).exp_m1();
    if !(h_cdf > 0.0) {
        return f64::NEG_INFINITY;
    }
    kappa.ln() + ln_h + (kappa - 1.0) * h_cdf.ln()
}
