//! Forward simulation of the hierarchical model.

use crate::egpd::egpd_quantile_unchecked;
use crate::grid::Grid;
use crate::latent::{rw1_sample, CorrelationFamily, SpatialFactor, StationNetwork};
use crate::model::{ModelError, ModelState, Priors};
use crate::panel::PanelData;
use crate::rng::{self, Domain};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Normal};

/// Global parameters and endpoint shifts of a synthetic truth. Latent fields
/// and endpoints are drawn from the model given these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthParams {
    pub beta_y: f64,
    pub beta_x: f64,
    pub kappa_y: f64,
    pub kappa_x: f64,
    pub xi_y: f64,
    pub xi_x: f64,
    pub alpha: f64,
    pub tau_w: f64,
    pub tau_z: f64,
    pub shift_y: f64,
    pub shift_x: f64,
    pub family: CorrelationFamily,
}

impl Default for TruthParams {
    /// Values of the order seen for daily-maximum wind speed in m/s.
    fn default() -> Self {
        Self {
            beta_y: -1.09,
            beta_x: -0.85,
            kappa_y: 5.3,
            kappa_x: 18.6,
            xi_y: -0.07,
            xi_x: -0.08,
            alpha: 0.45,
            tau_w: 4.2,
            tau_z: 0.4,
            shift_y: 25.0,
            shift_x: 25.0,
            family: CorrelationFamily::Disc,
        }
    }
}

/// A synthetic data set with the state that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub data: PanelData,
    pub truth: ModelState,
    pub params: TruthParams,
}

/// Draw `w`, `z` and every endpoint given the global parameters.
pub fn draw_latents<R: Rng + ?Sized>(
    params: &TruthParams,
    network: &StationNetwork,
    days: usize,
    rng: &mut R,
) -> Result<ModelState, ModelError> {
    let factor = SpatialFactor::new(&network.scaled_distances(), params.alpha, params.family)?;
    let w = factor.sample(params.tau_w, rng);
    let z = rw1_sample(days, params.tau_z, rng);
    let obs = network.observed_indices();
    let mut delta_y = Grid::filled(obs.len(), days, 0.0);
    for (r, &i) in obs.iter().enumerate() {
        for j in 0..days {
            let e: f64 = rng.sample(Exp1);
            delta_y.set(r, j, params.shift_y + e / (params.beta_y + w[i] + z[j]).exp());
        }
    }
    let mut delta_x = Grid::filled(network.len(), days, 0.0);
    for i in 0..network.len() {
        for j in 0..days {
            let e: f64 = rng.sample(Exp1);
            delta_x.set(i, j, params.shift_x + e / (params.beta_x + w[i] + z[j]).exp());
        }
    }
    Ok(ModelState {
        beta_y: params.beta_y,
        beta_x: params.beta_x,
        kappa_y: params.kappa_y,
        kappa_x: params.kappa_x,
        xi_y: params.xi_y,
        xi_x: params.xi_x,
        alpha: params.alpha,
        tau_w: params.tau_w,
        tau_z: params.tau_z,
        w,
        z,
        delta_y,
        delta_x,
    })
}

/// Draw complete observed and simulated panels given a state.
pub fn draw_panels<R: Rng + ?Sized>(state: &ModelState, rng: &mut R) -> (Grid, Grid) {
    let draw = |delta: &Grid, xi: f64, kappa: f64, rng: &mut R| {
        let mut g = Grid::filled(delta.rows(), delta.cols(), 0.0);
        for (out, &d) in g.as_mut_slice().iter_mut().zip(delta.as_slice()) {
            let u: f64 = rng.sample(Open01);
            *out = egpd_quantile_unchecked(u, d, xi, kappa);
        }
        g
    };
    let y = draw(&state.delta_y, state.xi_y, state.kappa_y, rng);
    let x = draw(&state.delta_x, state.xi_x, state.kappa_x, rng);
    (y, x)
}

/// Draw global parameters from the prior.
pub fn draw_prior_params<R: Rng + ?Sized>(
    priors: &Priors,
    shift_y: f64,
    shift_x: f64,
    family: CorrelationFamily,
    rng: &mut R,
) -> TruthParams {
    let beta = Normal::new(priors.beta_mean, 1.0 / priors.beta_precision.sqrt()).expect("valid normal");
    let kappa = Gamma::new(priors.kappa_shape, 1.0 / priors.kappa_rate).expect("valid gamma");
    let tau = Gamma::new(priors.tau_shape, 1.0 / priors.tau_rate).expect("valid gamma");
    let uniform = |lo: f64, hi: f64, rng: &mut R| {
        let u: f64 = rng.sample(Open01);
        lo + (hi - lo) * u
    };
    TruthParams {
        beta_y: beta.sample(rng),
        beta_x: beta.sample(rng),
        kappa_y: kappa.sample(rng),
        kappa_x: kappa.sample(rng),
        xi_y: uniform(priors.xi_lower, priors.xi_upper, rng),
        xi_x: uniform(priors.xi_lower, priors.xi_upper, rng),
        alpha: uniform(priors.alpha_lower, priors.alpha_upper, rng),
        tau_w: tau.sample(rng),
        tau_z: tau.sample(rng),
        shift_y,
        shift_x,
        family,
    }
}

/// Simulate a full data set from the generative model. With
/// `missing_rate > 0` each observed cell is removed independently with that
/// probability.
pub fn generate_synthetic(
    params: &TruthParams,
    network: &StationNetwork,
    days: usize,
    seed: u64,
    missing_rate: f64,
) -> Result<Synthetic, ModelError> {
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(ModelError::Config(format!("missing rate must lie in [0, 1), got {missing_rate}")));
    }
    if days == 0 {
        return Err(ModelError::Config("at least one day is required".into()));
    }
    let mut rng = rng::stream(seed, Domain::Synthetic, 0);
    let truth = draw_latents(params, network, days, &mut rng)?;
    let (mut y, x) = draw_panels(&truth, &mut rng);
    if missing_rate > 0.0 {
        let mut holes = rng::stream(seed, Domain::Missingness, 0);
        for v in y.as_mut_slice() {
            let u: f64 = holes.random();
            if u < missing_rate {
                *v = f64::NAN;
            }
        }
    }
    let data = PanelData::from_grids(y, x, network.observed_indices())?;
    Ok(Synthetic { data, truth, params: *params })
}

/// Stations on a jittered square lattice of side `spacing_km`; the first
/// `n_observed` stations carry observations.
pub fn lattice_network(n_stations: usize, n_observed: usize, spacing_km: f64, seed: u64) -> StationNetwork {
    let side = (n_stations as f64).sqrt().ceil() as usize;
    let mut rng = rng::stream(seed, Domain::Synthetic, 1);
    let coords: Vec<(f64, f64)> = (0..n_stations)
        .map(|k| {
            let (a, b) = ((k % side) as f64, (k / side) as f64);
            let jx: f64 = rng.random::<f64>() - 0.5;
            let jy: f64 = rng.random::<f64>() - 0.5;
            (spacing_km * (a + 0.5 * jx), spacing_km * (b + 0.5 * jy))
        })
        .collect();
    let ids = (0..n_stations).map(|k| format!("S{:03}", k + 1)).collect();
    let observed = (0..n_stations).map(|k| k < n_observed).collect();
    StationNetwork::new(ids, coords, observed).expect("lattice network is valid")
}
