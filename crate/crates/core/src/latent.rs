//! Latent spatial field over stations and first-order random-walk field over
//! days.
//!
//! The spatial field is `W ~ MVN(0, Sigma_W / tau_w)`: `tau_w` is a
//! precision and `Sigma_W` a correlation matrix built from rescaled
//! inter-station distances. The temporal field is an intrinsic RW1 with
//! precision `tau_z`, kept on the sum-to-zero subspace.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter schedule applied to the diagonal when a Cholesky factorisation
/// fails: none first, then 1e-10 escalating by 10x up to 1e-6.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatentError {
    #[error("station network is empty")]
    EmptyNetwork,
    #[error("duplicate station id '{0}'")]
    DuplicateStation(String),
    #[error("station '{id}' has non-finite coordinates")]
    BadCoordinates { id: String },
    #[error("distance matrix is {rows}x{cols}, expected {n}x{n}")]
    DistanceShape { rows: usize, cols: usize, n: usize },
    #[error("distance matrix invalid at ({i}, {j}): {reason}")]
    Distance { i: usize, j: usize, reason: &'static str },
    #[error("range alpha must be finite and > 0, got {0}")]
    Alpha(f64),
    #[error("spatial correlation not positive definite for alpha = {alpha} even with jitter {jitter}")]
    NotPositiveDefinite { alpha: f64, jitter: f64 },
    #[error("field has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
}

/// Stations with planar coordinates and pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct StationNetwork {
    ids: Vec<String>,
    coords: Vec<(f64, f64)>,
    observed: Vec<bool>,
    distances: DMatrix<f64>,
}

impl StationNetwork {
    /// Build from coordinates in km; distances are Euclidean.
    pub fn new(ids: Vec<String>, coords: Vec<(f64, f64)>, observed: Vec<bool>) -> Result<Self, LatentError> {
        let n = ids.len();
        if n == 0 {
            return Err(LatentError::EmptyNetwork);
        }
        assert_eq!(coords.len(), n);
        assert_eq!(observed.len(), n);
        let mut seen = std::collections::HashSet::new();
        for (id, &(x, y)) in ids.iter().zip(&coords) {
            if !seen.insert(id.as_str()) {
                return Err(LatentError::DuplicateStation(id.clone()));
            }
            if !(x.is_finite() && y.is_finite()) {
                return Err(LatentError::BadCoordinates { id: id.clone() });
            }
        }
        let distances = DMatrix::from_fn(n, n, |i, j| {
            let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
            dx.hypot(dy)
        });
        Ok(Self { ids, coords, observed, distances })
    }

    /// Build from an explicit distance matrix, validating symmetry, zero
    /// diagonal and the triangle inequality.
    pub fn with_distances(
        ids: Vec<String>,
        coords: Vec<(f64, f64)>,
        observed: Vec<bool>,
        distances: DMatrix<f64>,
    ) -> Result<Self, LatentError> {
        let mut net = Self::new(ids, coords, observed)?;
        validate_distances(&distances)?;
        if distances.nrows() != net.len() {
            return Err(LatentError::DistanceShape { rows: distances.nrows(), cols: distances.ncols(), n: net.len() });
        }
        net.distances = distances;
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    /// Network indices of stations that carry observations, in network order.
    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.observed[i]).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    /// Distances in km.
    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }

    /// Distances divided by the largest pairwise distance, so they lie in
    /// `[0, 1]`. The range parameter `alpha` is expressed on this scale.
    pub fn scaled_distances(&self) -> DMatrix<f64> {
        let max = self.distances.max();
        if max > 0.0 {
            &self.distances / max
        } else {
            self.distances.clone()
        }
    }

    /// Same network with stations reordered by `perm` (new position `k` holds
    /// old station `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        assert_eq!(perm.len(), n);
        Self {
            ids: perm.iter().map(|&i| self.ids[i].clone()).collect(),
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
            observed: perm.iter().map(|&i| self.observed[i]).collect(),
            distances: DMatrix::from_fn(n, n, |a, b| self.distances[(perm[a], perm[b])]),
        }
    }
}

pub fn validate_distances(d: &DMatrix<f64>) -> Result<(), LatentError> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(LatentError::DistanceShape { rows: n, cols: d.ncols(), n });
    }
    let tol = 1e-9 * d.max().max(1.0);
    for i in 0..n {
        if d[(i, i)] != 0.0 {
            return Err(LatentError::Distance { i, j: i, reason: "non-zero diagonal" });
        }
        for j in 0..n {
            let v = d[(i, j)];
            if !(v.is_finite() && v >= 0.0) {
                return Err(LatentError::Distance { i, j, reason: "negative or non-finite" });
            }
            if (v - d[(j, i)]).abs() > tol {
                return Err(LatentError::Distance { i, j, reason: "not symmetric" });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if d[(i, j)] > d[(i, k)] + d[(k, j)] + tol {
                    return Err(LatentError::Distance { i, j, reason: "triangle inequality violated" });
                }
            }
        }
    }
    Ok(())
}

/// Isotropic correlation family `f(d; alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationFamily {
    /// Normalised overlap area of two discs of radius `alpha`; zero beyond `2 alpha`.
    #[default]
    Disc,
    /// Spherical model with range `alpha`.
    Spherical,
    /// `exp(-d / alpha)`.
    Exponential,
}

impl CorrelationFamily {
    pub fn correlation(self, d: f64, alpha: f64) -> f64 {
        if d <= 0.0 {
            return 1.0;
        }
        match self {
            CorrelationFamily::Disc => {
                let r = d / (2.0 * alpha);
                if r >= 1.0 {
                    0.0
                } else {
                    2.0 / PI * (r.acos() - r * (1.0 - r * r).sqrt())
                }
            }
            CorrelationFamily::Spherical => {
                let r = d / alpha;
                if r >= 1.0 {
                    0.0
                } else {
                    1.0 - 1.5 * r + 0.5 * r * r * r
                }
            }
            CorrelationFamily::Exponential => (-d / alpha).exp(),
        }
    }
}

impl std::str::FromStr for CorrelationFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "disc" => Ok(Self::Disc),
            "spherical" => Ok(Self::Spherical),
            "exponential" => Ok(Self::Exponential),
            other => Err(format!("unknown correlation family '{other}' (expected disc|spherical|exponential)")),
        }
    }
}

impl std::fmt::Display for CorrelationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Disc => "disc",
            Self::Spherical => "spherical",
            Self::Exponential => "exponential",
        })
    }
}

/// Correlation matrix `Sigma_W` with `Sigma_il = f(d_il; alpha)`.
pub fn spatial_correlation(
    d: &DMatrix<f64>,
    alpha: f64,
    family: CorrelationFamily,
) -> Result<DMatrix<f64>, LatentError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(LatentError::Alpha(alpha));
    }
    let n = d.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { family.correlation(d[(i, j)], alpha) }))
}

/// Cholesky factorisation of a spatial correlation matrix together with the
/// quantities the sampler needs repeatedly.
#[derive(Debug, Clone)]
pub struct SpatialFactor {
    pub alpha: f64,
    /// Jitter that was added to the diagonal (0 when none was needed).
    pub jitter: f64,
    /// `log det Sigma_W`.
    pub log_det: f64,
    /// `Sigma_W^-1`.
    pub inverse: DMatrix<f64>,
    pub chol_lower: DMatrix<f64>,
}

impl SpatialFactor {
    pub fn new(d: &DMatrix<f64>, alpha: f64, family: CorrelationFamily) -> Result<Self, LatentError> {
        let sigma = spatial_correlation(d, alpha, family)?;
        Self::from_correlation(sigma, alpha)
    }

    pub fn from_correlation(sigma: DMatrix<f64>, alpha: f64) -> Result<Self, LatentError> {
        let n = sigma.nrows();
        let mut jitter = 0.0;
        loop {
            let mut m = sigma.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                let l = ch.l();
                let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let inverse = ch.inverse();
                return Ok(Self { alpha, jitter, log_det, inverse, chol_lower: l });
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(LatentError::NotPositiveDefinite { alpha, jitter: jitter / 10.0 });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }

    /// `w' Sigma^-1 w`.
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        let v = DVector::from_column_slice(w);
        (v.transpose() * &self.inverse * &v)[(0, 0)]
    }

    /// `MVN(0, Sigma / tau)` log-density with all normalising terms.
    pub fn log_density(&self, w: &[f64], tau: f64) -> f64 {
        let n = w.len() as f64;
        -0.5 * n * LN_2PI + 0.5 * n * tau.ln() - 0.5 * self.log_det - 0.5 * tau * self.quadratic_form(w)
    }

    /// Change in `w' Sigma^-1 w` when `w[i]` moves by `step`.
    pub fn quadratic_delta(&self, w: &[f64], i: usize, step: f64) -> f64 {
        let row = self.inverse.row(i);
        let dot: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        2.0 * step * dot + step * step * self.inverse[(i, i)]
    }

    /// Draw from `MVN(0, Sigma / tau)`.
    pub fn sample<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = &self.chol_lower * e / tau.sqrt();
        w.iter().copied().collect()
    }
}

/// Exact `MVN(0, Sigma_W / tau_w)` log-density of `w`.
pub fn spatial_logdensity(
    w: &[f64],
    alpha: f64,
    tau_w: f64,
    d: &DMatrix<f64>,
    family: CorrelationFamily,
) -> Result<f64, LatentError> {
    if w.len() != d.nrows() {
        return Err(LatentError::Length { got: w.len(), expected: d.nrows() });
    }
    Ok(SpatialFactor::new(d, alpha, family)?.log_density(w, tau_w))
}

/// Sum of squared first differences.
pub fn rw1_increment_ss(z: &[f64]) -> f64 {
    z.windows(2).map(|p| (p[1] - p[0]) * (p[1] - p[0])).sum()
}

/// Intrinsic RW1 log-density on the sum-to-zero subspace:
/// `-(T-1)/2 log(2 pi) + (T-1)/2 log(tau) - tau/2 sum (z_{j+1} - z_j)^2`.
pub fn rw1_logdensity(z: &[f64], tau_z: f64) -> f64 {
    let rank = z.len().saturating_sub(1) as f64;
    -0.5 * rank * LN_2PI + 0.5 * rank * tau_z.ln() - 0.5 * tau_z * rw1_increment_ss(z)
}

/// Structure matrix of the RW1 prior: tridiagonal, rows summing to zero.
pub fn rw1_structure(t: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(t, t);
    for j in 0..t.saturating_sub(1) {
        r[(j, j)] += 1.0;
        r[(j + 1, j + 1)] += 1.0;
        r[(j, j + 1)] -= 1.0;
        r[(j + 1, j)] -= 1.0;
    }
    r
}

/// Draw from the sum-to-zero RW1 prior: independent `N(0, 1/tau)` increments,
/// cumulated and centred.
pub fn rw1_sample<R: Rng + ?Sized>(t: usize, tau_z: f64, rng: &mut R) -> Vec<f64> {
    let sd = 1.0 / tau_z.sqrt();
    let mut z = Vec::with_capacity(t);
    let mut acc = 0.0;
    for j in 0..t {
        if j > 0 {
            acc += sd * rng.sample::<f64, _>(StandardNormal);
        }
        z.push(acc);
    }
    center(&mut z);
    z
}

/// Subtract the mean in place.
pub fn center(z: &mut [f64]) {
    if z.is_empty() {
        return;
    }
    let m = z.iter().sum::<f64>() / z.len() as f64;
    z.iter_mut().for_each(|v| *v -= m);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn disc_values() {
        let f = CorrelationFamily::Disc;
        assert_eq!(f.correlation(0.0, 0.3), 1.0);
        assert_eq!(f.correlation(0.6, 0.3), 0.0);
        assert_eq!(f.correlation(0.9, 0.3), 0.0);
        for &a in &[0.1, 0.25, 0.5, 3.0] {
            assert_relative_eq!(f.correlation(a, a), 0.391_002_218_955_770_64, epsilon = 1e-14);
        }
    }

    #[test]
    fn families_monotone() {
        for fam in [CorrelationFamily::Disc, CorrelationFamily::Spherical, CorrelationFamily::Exponential] {
            let mut prev = 1.0;
            for k in 0..200 {
                let c = fam.correlation(k as f64 * 0.01, 0.4);
                assert!(c <= prev + 1e-15 && (0.0..=1.0).contains(&c));
                prev = c;
            }
        }
    }

    #[test]
    fn single_station_is_univariate_normal() {
        let d = DMatrix::zeros(1, 1);
        let lp = spatial_logdensity(&[0.7], 0.3, 4.0, &d, CorrelationFamily::Disc).unwrap();
        let expect = -0.5 * LN_2PI + 0.5 * 4.0_f64.ln() - 0.5 * 4.0 * 0.49;
        assert_relative_eq!(lp, expect, epsilon = 1e-13);
    }

    #[test]
    fn independent_stations_sum() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 5.0, 6.0, 5.0, 0.0, 4.0, 6.0, 4.0, 0.0]);
        let w = [0.1, -0.4, 1.2];
        let lp = spatial_logdensity(&w, 0.2, 2.5, &d, CorrelationFamily::Disc).unwrap();
        let expect: f64 = w.iter().map(|x| -0.5 * LN_2PI + 0.5 * 2.5_f64.ln() - 0.5 * 2.5 * x * x).sum();
        assert_relative_eq!(lp, expect, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_delta_matches_recompute() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 0.3, 0.5, 0.3, 0.0, 0.4, 0.5, 0.4, 0.0]);
        let f = SpatialFactor::new(&d, 0.4, CorrelationFamily::Disc).unwrap();
        let mut w = vec![0.2, -0.1, 0.5];
        let before = f.quadratic_form(&w);
        let delta = f.quadratic_delta(&w, 1, 0.37);
        w[1] += 0.37;
        assert_relative_eq!(f.quadratic_form(&w) - before, delta, epsilon = 1e-12);
    }

    #[test]
    fn coincident_stations_need_jitter_or_fail() {
        let d = DMatrix::zeros(2, 2);
        let f = SpatialFactor::new(&d, 0.3, CorrelationFamily::Disc).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= JITTER_MAX);
        assert!(spatial_correlation(&d, 0.0, CorrelationFamily::Disc).is_err());
    }

    #[test]
    fn rw1_examples() {
        assert_eq!(rw1_increment_ss(&[0.0; 5]), 0.0);
        let a = 0.8;
        let tau = 3.0;
        // quadratic part for T=2, z=(-a, a): tau (2a)^2 / 2
        let q = -(rw1_logdensity(&[-a, a], tau) - rw1_logdensity(&[0.0, 0.0], tau));
        assert_relative_eq!(q, tau * (2.0 * a) * (2.0 * a) / 2.0, epsilon = 1e-12);
        // shifting all values leaves increments and density unchanged
        let z = [0.3, -0.2, 0.1, 0.5];
        let shifted: Vec<f64> = z.iter().map(|v| v + 2.0).collect();
        assert_relative_eq!(rw1_logdensity(&z, tau), rw1_logdensity(&shifted, tau), epsilon = 1e-12);
    }

    #[test]
    fn rw1_structure_reproduces_quadratic_form() {
        let z = [0.3, -0.2, 0.1, 0.5, -0.7];
        let r = rw1_structure(5);
        for i in 0..5 {
            assert_relative_eq!(r.row(i).sum(), 0.0);
        }
        let v = DVector::from_column_slice(&z);
        let dense = (v.transpose() * r * &v)[(0, 0)];
        assert_relative_eq!(dense, rw1_increment_ss(&z), epsilon = 1e-10);
    }

    #[test]
    fn network_validation() {
        let ids = vec!["a".to_string(), "a".to_string()];
        assert!(StationNetwork::new(ids, vec![(0.0, 0.0), (1.0, 1.0)], vec![true, true]).is_err());
        let bad = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]);
        assert!(matches!(validate_distances(&bad), Err(LatentError::Distance { .. })));
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(validate_distances(&asym).is_err());
    }
}
