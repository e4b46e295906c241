//! Adaptive Metropolis-within-Gibbs sampler.
//!
//! One sweep updates, in this fixed order: `beta_y`, `beta_x`, `kappa_y`,
//! `kappa_x`, `xi_y`, `xi_x`, `alpha`, `tau_w`, `tau_z`, every `w[i]`, every
//! `z[j]`, then every observed endpoint `delta_y(r, j)` and every simulated
//! endpoint `delta_x(i, j)`.
//!
//! All proposals are Gaussian random walks on an unconstrained scale: raw for
//! `beta` and `w`, log for `kappa` and `tau`, logit of the prior box for `xi`
//! and `alpha`, and `log(delta - shift)` for endpoints. The Jacobian of each
//! transform enters the acceptance ratio. A `z[j]` proposal moves
//! `z + eps (e_j - 1/T)`, which stays on the sum-to-zero subspace and is
//! symmetric.
//!
//! Each sweep ends with rescaling moves that shift `beta`, a `w[i]` or a
//! `z[j]` by `eps` and multiply the endpoint excesses `delta - shift` whose
//! rate grows by `eps` by `exp(-eps)`. The endpoint prior and the Jacobian
//! then cancel except for the rates the centring touches.
//!
//! Proposal scales adapt during the first `adapt_window` sweeps by the
//! Robbins–Monro rule `log s += n^-0.6 (a - target)`, where `a` is the
//! acceptance probability of the proposal and `n` the sweep number, and are
//! frozen afterwards.
//!
//! Endpoint rows carry their own generator streams, so the endpoint block
//! runs row-parallel and still gives the same draws for any thread count.

use super::{Model, ModelError, ModelState};
use crate::egpd::egpd_logpdf_unchecked;
use crate::grid::Grid;
use crate::latent::{rw1_logdensity, SpatialFactor, StationNetwork};
use crate::panel::PanelData;
use crate::par::{self, Execution};
use crate::rng::{self, Domain};
use crate::stats;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ADAPT_EXPONENT: f64 = 0.6;
const LOG_SCALE_BOUNDS: (f64, f64) = (-12.0, 4.0);

/// Sampler settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    /// Total sweeps including burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Number of initial sweeps during which proposal scales adapt; at most
    /// `burn_in`.
    pub adapt_window: usize,
    pub target_accept: f64,
    pub execution: Execution,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            burn_in: 2000,
            thin: 2,
            chains: 1,
            seed: 1,
            adapt_window: 2000,
            target_accept: 0.44,
            execution: Execution::Parallel,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.iterations == 0 {
            if self.burn_in != 0 {
                return err("burn-in must be 0 for a zero-iteration run");
            }
        } else if self.burn_in >= self.iterations {
            return err("burn-in must be smaller than iterations");
        }
        if self.thin == 0 {
            return err("thinning must be >= 1");
        }
        if self.chains == 0 {
            return err("at least one chain is required");
        }
        if self.adapt_window > self.burn_in {
            return err("adaptation window must not exceed burn-in");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return err("target acceptance must lie in (0, 1)");
        }
        Ok(())
    }

    /// Number of retained draws per chain.
    pub fn retained(&self) -> usize {
        if self.iterations == 0 {
            1
        } else {
            (self.iterations - self.burn_in) / self.thin
        }
    }
}

/// Update blocks, in sweep order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    BetaY,
    BetaX,
    KappaY,
    KappaX,
    XiY,
    XiX,
    Alpha,
    TauW,
    TauZ,
    W,
    Z,
    DeltaY,
    DeltaX,
    Rescale,
}

pub const BLOCKS: [Block; 14] = [
    Block::BetaY,
    Block::BetaX,
    Block::KappaY,
    Block::KappaX,
    Block::XiY,
    Block::XiX,
    Block::Alpha,
    Block::TauW,
    Block::TauZ,
    Block::W,
    Block::Z,
    Block::DeltaY,
    Block::DeltaX,
    Block::Rescale,
];

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::BetaY => "beta_y",
            Block::BetaX => "beta_x",
            Block::KappaY => "kappa_y",
            Block::KappaX => "kappa_x",
            Block::XiY => "xi_y",
            Block::XiX => "xi_x",
            Block::Alpha => "alpha",
            Block::TauW => "tau_w",
            Block::TauZ => "tau_z",
            Block::W => "w",
            Block::Z => "z",
            Block::DeltaY => "delta_y",
            Block::DeltaX => "delta_x",
            Block::Rescale => "rescale",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Accepted / proposed counts per block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AcceptanceRates {
    pub accepted: [u64; 14],
    pub proposed: [u64; 14],
}

impl AcceptanceRates {
    pub fn rate(&self, block: Block) -> f64 {
        let k = block.index();
        if self.proposed[k] == 0 {
            f64::NAN
        } else {
            self.accepted[k] as f64 / self.proposed[k] as f64
        }
    }

    fn record(&mut self, block: Block, accepted: u64, proposed: u64) {
        self.accepted[block.index()] += accepted;
        self.proposed[block.index()] += proposed;
    }
}

/// Per-chain sampler output besides the retained states.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub chain: usize,
    /// Acceptance over post-burn-in sweeps (over all sweeps when there are
    /// none after burn-in).
    pub acceptance: AcceptanceRates,
    /// Log-posterior after every sweep; entry 0 is the initial state.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub chain: usize,
    /// Sweep after which the state was recorded (0 for the initial state).
    pub iteration: usize,
    pub log_posterior: f64,
    pub state: ModelState,
}

/// Retained draws of all chains, chain-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<Draw>,
    pub chains: Vec<ChainDiagnostics>,
    pub shift_y: f64,
    pub shift_x: f64,
    /// Network index of each observed row.
    pub observed_stations: Vec<usize>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &ModelState> {
        self.draws.iter().map(|d| &d.state)
    }

    /// Draws of one global parameter (see [`super::GLOBAL_NAMES`]).
    pub fn global(&self, name: &str) -> Vec<f64> {
        self.states().filter_map(|s| s.global(name)).collect()
    }

    /// Concatenate draws of several runs; a pure reduction.
    pub fn merge(parts: Vec<PosteriorDraws>) -> Option<PosteriorDraws> {
        let mut it = parts.into_iter();
        let mut first = it.next()?;
        for p in it {
            first.draws.extend(p.draws);
            first.chains.extend(p.chains);
        }
        Some(first)
    }

    /// Posterior mean of `sigma_y` and `sigma_x` per cell.
    pub fn sigma_means(&self) -> (Grid, Grid) {
        let first = &self.draws[0].state;
        let mut sy = Grid::filled(first.delta_y.rows(), first.delta_y.cols(), 0.0);
        let mut sx = Grid::filled(first.delta_x.rows(), first.delta_x.cols(), 0.0);
        let m = self.draws.len() as f64;
        for s in self.states() {
            for (acc, d) in sy.as_mut_slice().iter_mut().zip(s.delta_y.as_slice()) {
                *acc += -s.xi_y * d / m;
            }
            for (acc, d) in sx.as_mut_slice().iter_mut().zip(s.delta_x.as_slice()) {
                *acc += -s.xi_x * d / m;
            }
        }
        (sy, sx)
    }
}

/// Deterministic starting point: endpoints at `shift + sd(panel)`, `xi` at
/// -0.1 (moved inside the prior box if needed), `kappa = 1`, `beta = 0`,
/// zero latent fields, unit precisions and `alpha` at 0.3 (or the box
/// midpoint if 0.3 is outside it).
pub fn initialize_state(model: &Model) -> Result<ModelState, ModelError> {
    let data = model.data;
    let y: Vec<f64> = data.observed.present().collect();
    let x: Vec<f64> = data.simulated.present().collect();
    if y.len() < 2 {
        return Err(ModelError::Degenerate("observed panel has fewer than two values".into()));
    }
    let sd_y = stats::std_dev(&y);
    let sd_x = stats::std_dev(&x);
    if !(sd_y > 0.0) {
        return Err(ModelError::Degenerate("observed panel is constant".into()));
    }
    if !(sd_x > 0.0) {
        return Err(ModelError::Degenerate("simulated panel is constant".into()));
    }
    let max_y = data.observed.max_present().unwrap_or(0.0);
    let max_x = data.simulated.max_present().unwrap_or(0.0);
    let p = model.priors();
    let inside = |v: f64, lo: f64, hi: f64| if v > lo && v < hi { v } else { 0.5 * (lo + hi) };
    let state = ModelState {
        beta_y: 0.0,
        beta_x: 0.0,
        kappa_y: 1.0,
        kappa_x: 1.0,
        xi_y: inside(-0.1, p.xi_lower, p.xi_upper),
        xi_x: inside(-0.1, p.xi_lower, p.xi_upper),
        alpha: inside(0.3, p.alpha_lower, p.alpha_upper),
        tau_w: 1.0,
        tau_z: 1.0,
        w: vec![0.0; model.n_stations()],
        z: vec![0.0; model.days()],
        delta_y: Grid::filled(model.n_observed(), model.days(), model.shift_y.max(max_y) + sd_y),
        delta_x: Grid::filled(model.n_stations(), model.days(), model.shift_x.max(max_x) + sd_x),
    };
    model.check_finite(&state)?;
    Ok(state)
}

#[derive(Debug, Clone)]
struct RowTuning {
    log_scale: Vec<f64>,
    rng: ChaCha8Rng,
    accepted: u64,
    proposed: u64,
}

/// Which endpoint panel a row update works on.
#[derive(Clone, Copy)]
struct RowContext<'a> {
    data: &'a [f64],
    base: f64,
    z: &'a [f64],
    shift: f64,
    xi: f64,
    kappa: f64,
}

/// One Markov chain with its tuning state.
#[derive(Debug, Clone)]
pub struct Chain {
    pub state: ModelState,
    factor: SpatialFactor,
    rng: ChaCha8Rng,
    global_scales: [f64; 9],
    w_scales: Vec<f64>,
    z_scales: Vec<f64>,
    beta_rescale: [f64; 2],
    w_rescale: Vec<f64>,
    z_rescale: Vec<f64>,
    rows_y: Vec<RowTuning>,
    rows_x: Vec<RowTuning>,
    adapted: usize,
    pub counts: AcceptanceRates,
}

// indices into `global_scales`
const S_BETA_Y: usize = 0;
const S_BETA_X: usize = 1;
const S_KAPPA_Y: usize = 2;
const S_KAPPA_X: usize = 3;
const S_XI_Y: usize = 4;
const S_XI_X: usize = 5;
const S_ALPHA: usize = 6;
const S_TAU_W: usize = 7;
const S_TAU_Z: usize = 8;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Box transform `theta = lo + (hi - lo) logistic(eta)` and its log-Jacobian.
fn from_box(eta: f64, lo: f64, hi: f64) -> (f64, f64) {
    let p = logistic(eta);
    let theta = lo + (hi - lo) * p;
    (theta, (hi - lo).ln() + p.ln() + (1.0 - p).ln())
}

fn to_box(theta: f64, lo: f64, hi: f64) -> f64 {
    logit((theta - lo) / (hi - lo))
}

/// Metropolis accept/reject plus Robbins–Monro adaptation of `log_scale`.
#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64, log_scale: &mut f64, gain: Option<(f64, f64)>) -> bool {
    let ratio = if log_ratio.is_nan() { f64::NEG_INFINITY } else { log_ratio };
    let u: f64 = rng.random();
    let ok = u.ln() < ratio;
    if let Some((gamma, target)) = gain {
        let a = ratio.min(0.0).exp();
        *log_scale = (*log_scale + gamma * (a - target)).clamp(LOG_SCALE_BOUNDS.0, LOG_SCALE_BOUNDS.1);
    }
    ok
}

#[inline]
fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Change in the log-likelihood of datum `y` when its endpoint excess is
/// multiplied by `factor`; zero for a missing datum.
fn rescaled_loglik(y: f64, delta: f64, shift: f64, factor: f64, xi: f64, kappa: f64) -> f64 {
    if y.is_nan() {
        return 0.0;
    }
    let prop = shift + (delta - shift) * factor;
    if !(y < prop) {
        return f64::NEG_INFINITY;
    }
    egpd_logpdf_unchecked(y, prop, xi, kappa) - egpd_logpdf_unchecked(y, delta, xi, kappa)
}

/// Sweep over one endpoint row; returns nothing, counts live in `tuning`.
fn update_row(delta: &mut [f64], tuning: &mut RowTuning, ctx: RowContext<'_>, gain: Option<(f64, f64)>) {
    for j in 0..delta.len() {
        let lambda = (ctx.base + ctx.z[j]).exp();
        let datum = ctx.data[j];
        let target = |d: f64| -> f64 {
            let excess = d - ctx.shift;
            let mut lt = -lambda * excess + excess.ln();
            if !datum.is_nan() {
                lt += egpd_logpdf_unchecked(datum, d, ctx.xi, ctx.kappa);
            }
            lt
        };
        let current = delta[j];
        let eta = (current - ctx.shift).ln();
        let scale = tuning.log_scale[j].exp();
        let prop = ctx.shift + (eta + scale * normal(&mut tuning.rng)).exp();
        let log_ratio =
            if prop > ctx.shift && prop.is_finite() { target(prop) - target(current) } else { f64::NEG_INFINITY };
        tuning.proposed += 1;
        if accept(&mut tuning.rng, log_ratio, &mut tuning.log_scale[j], gain) {
            delta[j] = prop;
            tuning.accepted += 1;
        }
    }
}

impl Chain {
    /// Start a chain at `state`; `seed` is the chain's own seed.
    pub fn new(model: &Model, state: ModelState, seed: u64) -> Result<Self, ModelError> {
        let factor = model.spatial_factor(state.alpha)?;
        let t = model.days();
        let rows = |domain: Domain, n: usize, init: f64| -> Vec<RowTuning> {
            (0..n)
                .map(|r| RowTuning {
                    log_scale: vec![init; t],
                    rng: rng::stream(seed, domain, r as u64),
                    accepted: 0,
                    proposed: 0,
                })
                .collect()
        };
        Ok(Self {
            factor,
            rng: rng::stream(seed, Domain::Chain, 0),
            global_scales: [
                0.1_f64.ln(),
                0.1_f64.ln(),
                0.2_f64.ln(),
                0.2_f64.ln(),
                0.3_f64.ln(),
                0.3_f64.ln(),
                1.0_f64.ln(),
                0.5_f64.ln(),
                0.5_f64.ln(),
            ],
            w_scales: vec![0.3_f64.ln(); model.n_stations()],
            z_scales: vec![0.3_f64.ln(); t],
            beta_rescale: [0.05_f64.ln(); 2],
            w_rescale: vec![0.1_f64.ln(); model.n_stations()],
            z_rescale: vec![0.1_f64.ln(); t],
            rows_y: rows(Domain::DeltaRowY, model.n_observed(), 0.5_f64.ln()),
            rows_x: rows(Domain::DeltaRowX, model.n_stations(), 0.5_f64.ln()),
            adapted: 0,
            counts: AcceptanceRates::default(),
            state,
        })
    }

    /// Log-posterior of the current state using the cached spatial factor.
    pub fn log_posterior(&self, model: &Model) -> f64 {
        let s = &self.state;
        model.global_log_prior(s)
            + self.factor.log_density(&s.w, s.tau_w)
            + rw1_logdensity(&s.z, s.tau_z)
            + model.delta_prior_y(s)
            + model.delta_prior_x(s)
            + model.log_likelihood(s)
    }

    /// Proposal scales of the global parameters, in sweep order.
    pub fn global_scales(&self) -> [f64; 9] {
        self.global_scales.map(f64::exp)
    }

    /// One full sweep. With `adapt` the proposal scales move toward the
    /// target acceptance rate.
    pub fn sweep(&mut self, model: &Model, adapt: bool, target_accept: f64) {
        let gain = if adapt {
            self.adapted += 1;
            Some(((self.adapted as f64).powf(-ADAPT_EXPONENT), target_accept))
        } else {
            None
        };
        self.update_beta(model, true, gain);
        self.update_beta(model, false, gain);
        self.update_kappa(model, true, gain);
        self.update_kappa(model, false, gain);
        self.update_xi(model, true, gain);
        self.update_xi(model, false, gain);
        self.update_alpha(model, gain);
        self.update_tau_w(model, gain);
        self.update_tau_z(model, gain);
        self.update_w(model, gain);
        self.update_z(model, gain);
        self.update_deltas(model, gain);
        self.rescale_beta(model, true, gain);
        self.rescale_beta(model, false, gain);
        self.rescale_w(model, gain);
        self.rescale_z(model, gain);
    }

    fn excess_sum(&self, model: &Model, observed: bool) -> f64 {
        let s = &self.state;
        if observed {
            par::ordered_sum(model.execution, model.n_observed(), |r| {
                let wi = s.w[model.data.observed_stations[r]];
                s.delta_y.row(r).iter().zip(&s.z).map(|(&d, &z)| (wi + z).exp() * (d - model.shift_y)).sum()
            })
        } else {
            par::ordered_sum(model.execution, model.n_stations(), |i| {
                let wi = s.w[i];
                s.delta_x.row(i).iter().zip(&s.z).map(|(&d, &z)| (wi + z).exp() * (d - model.shift_x)).sum()
            })
        }
    }

    fn update_beta(&mut self, model: &Model, observed: bool, gain: Option<(f64, f64)>) {
        let a = self.excess_sum(model, observed);
        let cells = if observed { model.n_observed() } else { model.n_stations() } * model.days();
        let p = *model.priors();
        let target = |b: f64| p.log_beta(b) + cells as f64 * b - b.exp() * a;
        let (k, block) = if observed { (S_BETA_Y, Block::BetaY) } else { (S_BETA_X, Block::BetaX) };
        let current = if observed { self.state.beta_y } else { self.state.beta_x };
        let prop = current + self.global_scales[k].exp() * normal(&mut self.rng);
        let ok = accept(&mut self.rng, target(prop) - target(current), &mut self.global_scales[k], gain);
        self.counts.record(block, ok as u64, 1);
        if ok {
            if observed {
                self.state.beta_y = prop;
            } else {
                self.state.beta_x = prop;
            }
        }
    }

    /// `(count, sum log h, sum log H)` over the panel's cells for the given `xi`.
    fn shape_stats(&self, model: &Model, observed: bool, xi: f64) -> (f64, f64, f64) {
        let s = &self.state;
        let stats_row = |data: &[f64], delta: &[f64]| -> (f64, f64, f64) {
            let shape = -1.0 / xi;
            let mut acc = (0.0, 0.0, 0.0);
            for (&y, &d) in data.iter().zip(delta) {
                if y.is_nan() {
                    continue;
                }
                if !(y > 0.0 && y < d) {
                    return (1.0, f64::NEG_INFINITY, f64::NEG_INFINITY);
                }
                let ln_base = (-y / d).ln_1p();
                acc.0 += 1.0;
                acc.1 += shape.ln() - d.ln() + (shape - 1.0) * ln_base;
                acc.2 += (-(shape * ln_base).exp_m1()).ln();
            }
            acc
        };
        let parts = if observed {
            par::map_range(model.execution, model.n_observed(), |r| {
                stats_row(model.data.observed.row(r), s.delta_y.row(r))
            })
        } else {
            par::map_range(model.execution, model.n_stations(), |i| {
                stats_row(model.data.simulated.row(i), s.delta_x.row(i))
            })
        };
        parts.into_iter().fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
    }

    fn update_kappa(&mut self, model: &Model, observed: bool, gain: Option<(f64, f64)>) {
        let xi = if observed { self.state.xi_y } else { self.state.xi_x };
        let (n, sum_ln_h, sum_ln_cdf) = self.shape_stats(model, observed, xi);
        let p = *model.priors();
        let target = |kappa: f64| {
            if !(kappa > 0.0) || !kappa.is_finite() {
                return f64::NEG_INFINITY;
            }
            let lik = if n > 0.0 { n * kappa.ln() + sum_ln_h + (kappa - 1.0) * sum_ln_cdf } else { 0.0 };
            lik + p.log_kappa(kappa) + kappa.ln()
        };
        let (k, block) = if observed { (S_KAPPA_Y, Block::KappaY) } else { (S_KAPPA_X, Block::KappaX) };
        let current = if observed { self.state.kappa_y } else { self.state.kappa_x };
        let prop = (current.ln() + self.global_scales[k].exp() * normal(&mut self.rng)).exp();
        let ok = accept(&mut self.rng, target(prop) - target(current), &mut self.global_scales[k], gain);
        self.counts.record(block, ok as u64, 1);
        if ok {
            if observed {
                self.state.kappa_y = prop;
            } else {
                self.state.kappa_x = prop;
            }
        }
    }

    fn update_xi(&mut self, model: &Model, observed: bool, gain: Option<(f64, f64)>) {
        let p = *model.priors();
        let (lo, hi) = (p.xi_lower, p.xi_upper);
        let kappa = if observed { self.state.kappa_y } else { self.state.kappa_x };
        let current = if observed { self.state.xi_y } else { self.state.xi_x };
        let (k, block) = if observed { (S_XI_Y, Block::XiY) } else { (S_XI_X, Block::XiX) };
        let eta = to_box(current, lo, hi);
        let (prop, jac_prop) = from_box(eta + self.global_scales[k].exp() * normal(&mut self.rng), lo, hi);
        let (_, jac_cur) = from_box(eta, lo, hi);
        let loglik = |chain: &Self, xi: f64| {
            let (n, a, b) = chain.shape_stats(model, observed, xi);
            if n > 0.0 {
                n * kappa.ln() + a + (kappa - 1.0) * b
            } else {
                0.0
            }
        };
        let log_ratio = if prop > lo && prop < hi {
            loglik(self, prop) + p.log_xi(prop) + jac_prop - loglik(self, current) - p.log_xi(current) - jac_cur
        } else {
            f64::NEG_INFINITY
        };
        let ok = accept(&mut self.rng, log_ratio, &mut self.global_scales[k], gain);
        self.counts.record(block, ok as u64, 1);
        if ok {
            if observed {
                self.state.xi_y = prop;
            } else {
                self.state.xi_x = prop;
            }
        }
    }

    fn update_alpha(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let p = *model.priors();
        let (lo, hi) = (p.alpha_lower, p.alpha_upper);
        let current = self.state.alpha;
        let eta = to_box(current, lo, hi);
        let (prop, jac_prop) = from_box(eta + self.global_scales[S_ALPHA].exp() * normal(&mut self.rng), lo, hi);
        let (_, jac_cur) = from_box(eta, lo, hi);
        let candidate = if prop > lo && prop < hi { model.spatial_factor(prop).ok() } else { None };
        let log_ratio = match &candidate {
            Some(f) => {
                f.log_density(&self.state.w, self.state.tau_w) + p.log_alpha(prop) + jac_prop
                    - self.factor.log_density(&self.state.w, self.state.tau_w)
                    - p.log_alpha(current)
                    - jac_cur
            }
            None => f64::NEG_INFINITY,
        };
        let ok = accept(&mut self.rng, log_ratio, &mut self.global_scales[S_ALPHA], gain);
        self.counts.record(Block::Alpha, ok as u64, 1);
        if ok {
            self.state.alpha = prop;
            self.factor = candidate.expect("accepted proposal has a factor");
        }
    }

    fn update_tau_w(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let p = *model.priors();
        let n = self.state.w.len() as f64;
        let q = self.factor.quadratic_form(&self.state.w);
        let target = |tau: f64| p.log_tau(tau) + 0.5 * n * tau.ln() - 0.5 * tau * q + tau.ln();
        let current = self.state.tau_w;
        let prop = (current.ln() + self.global_scales[S_TAU_W].exp() * normal(&mut self.rng)).exp();
        let ok = accept(&mut self.rng, target(prop) - target(current), &mut self.global_scales[S_TAU_W], gain);
        self.counts.record(Block::TauW, ok as u64, 1);
        if ok {
            self.state.tau_w = prop;
        }
    }

    fn update_tau_z(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let p = *model.priors();
        let z = &self.state.z;
        let target = |tau: f64| p.log_tau(tau) + rw1_logdensity(z, tau) + tau.ln();
        let current = self.state.tau_z;
        let prop = (current.ln() + self.global_scales[S_TAU_Z].exp() * normal(&mut self.rng)).exp();
        let log_ratio = target(prop) - target(current);
        let ok = accept(&mut self.rng, log_ratio, &mut self.global_scales[S_TAU_Z], gain);
        self.counts.record(Block::TauZ, ok as u64, 1);
        if ok {
            self.state.tau_z = prop;
        }
    }

    /// `sum_j lambda(i, j) (delta(i, j) - shift) / exp(beta)` for one row.
    fn row_excess(row: &[f64], wi: f64, z: &[f64], shift: f64) -> f64 {
        row.iter().zip(z).map(|(&d, &zj)| (wi + zj).exp() * (d - shift)).sum()
    }

    fn update_w(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let t = model.days() as f64;
        // observed row of each network station, if any
        let mut obs_row = vec![None; model.n_stations()];
        for (r, &i) in model.data.observed_stations.iter().enumerate() {
            obs_row[i] = Some(r);
        }
        for i in 0..model.n_stations() {
            let s = &self.state;
            let wi = s.w[i];
            let mut excess = s.beta_x.exp() * Self::row_excess(s.delta_x.row(i), wi, &s.z, model.shift_x);
            let mut rows = 1.0;
            if let Some(r) = obs_row[i] {
                excess += s.beta_y.exp() * Self::row_excess(s.delta_y.row(r), wi, &s.z, model.shift_y);
                rows += 1.0;
            }
            let step = self.w_scales[i].exp() * normal(&mut self.rng);
            let spatial = -0.5 * s.tau_w * self.factor.quadratic_delta(&s.w, i, step);
            let endpoints = rows * t * step - step.exp_m1() * excess;
            let ok = accept(&mut self.rng, spatial + endpoints, &mut self.w_scales[i], gain);
            self.counts.record(Block::W, ok as u64, 1);
            if ok {
                self.state.w[i] += step;
            }
        }
    }

    fn update_z(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let t = model.days();
        if t < 2 {
            return;
        }
        let s = &self.state;
        let col_sums = |grid: &Grid, rows: &mut dyn Iterator<Item = (usize, f64)>, shift: f64| -> Vec<f64> {
            let mut c = vec![0.0; t];
            for (r, wi) in rows {
                for (j, (&d, &zj)) in grid.row(r).iter().zip(&s.z).enumerate() {
                    c[j] += (wi + zj).exp() * (d - shift);
                }
            }
            c
        };
        let by = s.beta_y.exp();
        let bx = s.beta_x.exp();
        let mut cy = col_sums(
            &s.delta_y,
            &mut model.data.observed_stations.iter().enumerate().map(|(r, &i)| (r, s.w[i])),
            model.shift_y,
        );
        let mut cx = col_sums(&s.delta_x, &mut (0..model.n_stations()).map(|i| (i, s.w[i])), model.shift_x);
        let mut total_y: f64 = cy.iter().sum();
        let mut total_x: f64 = cx.iter().sum();
        let mut proposal = vec![0.0; t];
        for j in 0..t {
            let eps = self.z_scales[j].exp() * normal(&mut self.rng);
            let shift_all = eps / t as f64;
            proposal.copy_from_slice(&self.state.z);
            proposal.iter_mut().for_each(|v| *v -= shift_all);
            proposal[j] += eps;
            let tau = self.state.tau_z;
            let rw = rw1_logdensity(&proposal, tau) - rw1_logdensity(&self.state.z, tau);
            let new_y = (-shift_all).exp() * (total_y + eps.exp_m1() * cy[j]);
            let new_x = (-shift_all).exp() * (total_x + eps.exp_m1() * cx[j]);
            // the sum of log-rates is unchanged by a centred move
            let endpoints = -by * (new_y - total_y) - bx * (new_x - total_x);
            let ok = accept(&mut self.rng, rw + endpoints, &mut self.z_scales[j], gain);
            self.counts.record(Block::Z, ok as u64, 1);
            if ok {
                self.state.z.copy_from_slice(&proposal);
                let scale = (-shift_all).exp();
                cy.iter_mut().for_each(|c| *c *= scale);
                cx.iter_mut().for_each(|c| *c *= scale);
                cy[j] *= eps.exp();
                cx[j] *= eps.exp();
                total_y = new_y;
                total_x = new_x;
            }
        }
    }

    fn rescale_beta(&mut self, model: &Model, observed: bool, gain: Option<(f64, f64)>) {
        let eps = self.beta_rescale[!observed as usize].exp() * normal(&mut self.rng);
        let factor = (-eps).exp();
        let s = &self.state;
        let (data, delta, shift, xi, kappa, beta) = if observed {
            (&model.data.observed, &s.delta_y, model.shift_y, s.xi_y, s.kappa_y, s.beta_y)
        } else {
            (&model.data.simulated, &s.delta_x, model.shift_x, s.xi_x, s.kappa_x, s.beta_x)
        };
        let lik = par::ordered_sum(model.execution, delta.rows(), |r| {
            let mut acc = 0.0;
            for (&y, &d) in data.row(r).iter().zip(delta.row(r)) {
                acc += rescaled_loglik(y, d, shift, factor, xi, kappa);
            }
            acc
        });
        let p = *model.priors();
        let log_ratio = lik + p.log_beta(beta + eps) - p.log_beta(beta);
        let ok = accept(&mut self.rng, log_ratio, &mut self.beta_rescale[!observed as usize], gain);
        self.counts.record(Block::Rescale, ok as u64, 1);
        if ok {
            let s = &mut self.state;
            if observed {
                s.beta_y += eps;
                s.delta_y.as_mut_slice().iter_mut().for_each(|d| *d = shift + (*d - shift) * factor);
            } else {
                s.beta_x += eps;
                s.delta_x.as_mut_slice().iter_mut().for_each(|d| *d = shift + (*d - shift) * factor);
            }
        }
    }

    fn rescale_w(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let mut obs_row = vec![None; model.n_stations()];
        for (r, &i) in model.data.observed_stations.iter().enumerate() {
            obs_row[i] = Some(r);
        }
        for i in 0..model.n_stations() {
            let eps = self.w_rescale[i].exp() * normal(&mut self.rng);
            let factor = (-eps).exp();
            let s = &self.state;
            let mut log_ratio = -0.5 * s.tau_w * self.factor.quadratic_delta(&s.w, i, eps);
            for (&y, &d) in model.data.simulated.row(i).iter().zip(s.delta_x.row(i)) {
                log_ratio += rescaled_loglik(y, d, model.shift_x, factor, s.xi_x, s.kappa_x);
            }
            if let Some(r) = obs_row[i] {
                for (&y, &d) in model.data.observed.row(r).iter().zip(s.delta_y.row(r)) {
                    log_ratio += rescaled_loglik(y, d, model.shift_y, factor, s.xi_y, s.kappa_y);
                }
            }
            let ok = accept(&mut self.rng, log_ratio, &mut self.w_rescale[i], gain);
            self.counts.record(Block::Rescale, ok as u64, 1);
            if ok {
                let s = &mut self.state;
                s.w[i] += eps;
                let shift = model.shift_x;
                s.delta_x.row_mut(i).iter_mut().for_each(|d| *d = shift + (*d - shift) * factor);
                if let Some(r) = obs_row[i] {
                    let shift = model.shift_y;
                    s.delta_y.row_mut(r).iter_mut().for_each(|d| *d = shift + (*d - shift) * factor);
                }
            }
        }
    }

    /// Column `j` excesses scale by `exp(-eps)`; the centring lowers every
    /// rate by `eps / T`, which only changes the `lambda * excess` terms.
    fn rescale_z(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let t = model.days();
        if t < 2 {
            return;
        }
        let cells_per_column = (model.n_observed() + model.n_stations()) as f64;
        let mut proposal = vec![0.0; t];
        for j in 0..t {
            let eps = self.z_rescale[j].exp() * normal(&mut self.rng);
            let factor = (-eps).exp();
            let shift_all = eps / t as f64;
            let s = &self.state;
            proposal.copy_from_slice(&s.z);
            proposal.iter_mut().for_each(|v| *v -= shift_all);
            proposal[j] += eps;
            let rw = rw1_logdensity(&proposal, s.tau_z) - rw1_logdensity(&s.z, s.tau_z);
            let rate_sum =
                s.beta_y.exp() * self.excess_sum(model, true) + s.beta_x.exp() * self.excess_sum(model, false);
            let mut log_ratio = rw - cells_per_column * eps - (-shift_all).exp_m1() * rate_sum;
            for r in 0..model.n_observed() {
                let y = model.data.observed.get(r, j);
                log_ratio += rescaled_loglik(y, s.delta_y.get(r, j), model.shift_y, factor, s.xi_y, s.kappa_y);
            }
            for i in 0..model.n_stations() {
                let y = model.data.simulated.get(i, j);
                log_ratio += rescaled_loglik(y, s.delta_x.get(i, j), model.shift_x, factor, s.xi_x, s.kappa_x);
            }
            let ok = accept(&mut self.rng, log_ratio, &mut self.z_rescale[j], gain);
            self.counts.record(Block::Rescale, ok as u64, 1);
            if ok {
                let s = &mut self.state;
                s.z.copy_from_slice(&proposal);
                for r in 0..model.n_observed() {
                    let d = s.delta_y.get(r, j);
                    s.delta_y.set(r, j, model.shift_y + (d - model.shift_y) * factor);
                }
                for i in 0..model.n_stations() {
                    let d = s.delta_x.get(i, j);
                    s.delta_x.set(i, j, model.shift_x + (d - model.shift_x) * factor);
                }
            }
        }
    }

    fn update_deltas(&mut self, model: &Model, gain: Option<(f64, f64)>) {
        let exec = model.execution;
        let s = &mut self.state;
        let (z, w) = (&s.z, &s.w);
        {
            let mut work: Vec<(&mut [f64], &mut RowTuning)> =
                s.delta_y.rows_mut().zip(self.rows_y.iter_mut()).collect();
            let (beta, xi, kappa) = (s.beta_y, s.xi_y, s.kappa_y);
            par::for_each_mut(exec, &mut work, |r, (delta, tuning)| {
                let ctx = RowContext {
                    data: model.data.observed.row(r),
                    base: beta + w[model.data.observed_stations[r]],
                    z,
                    shift: model.shift_y,
                    xi,
                    kappa,
                };
                update_row(delta, tuning, ctx, gain);
            });
        }
        {
            let mut work: Vec<(&mut [f64], &mut RowTuning)> =
                s.delta_x.rows_mut().zip(self.rows_x.iter_mut()).collect();
            let (beta, xi, kappa) = (s.beta_x, s.xi_x, s.kappa_x);
            par::for_each_mut(exec, &mut work, |i, (delta, tuning)| {
                let ctx = RowContext {
                    data: model.data.simulated.row(i),
                    base: beta + w[i],
                    z,
                    shift: model.shift_x,
                    xi,
                    kappa,
                };
                update_row(delta, tuning, ctx, gain);
            });
        }
        for (rows, block) in [(&mut self.rows_y, Block::DeltaY), (&mut self.rows_x, Block::DeltaX)] {
            for row in rows.iter_mut() {
                self.counts.record(block, row.accepted, row.proposed);
                row.accepted = 0;
                row.proposed = 0;
            }
        }
    }
}

struct ChainRun {
    draws: Vec<Draw>,
    diagnostics: ChainDiagnostics,
}

fn run_chain(model: &Model, init: &ModelState, cfg: &McmcConfig, chain: usize) -> Result<ChainRun, ModelError> {
    let seed = rng::child_seed(cfg.seed, Domain::Chain, chain as u64);
    let mut c = Chain::new(model, init.clone(), seed)?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let lp0 = c.log_posterior(model);
    trace.push(lp0);
    let mut draws = Vec::with_capacity(cfg.retained());
    if cfg.iterations == 0 {
        draws.push(Draw { chain, iteration: 0, log_posterior: lp0, state: c.state.clone() });
    }
    let mut burn_counts = AcceptanceRates::default();
    for it in 1..=cfg.iterations {
        c.sweep(model, it <= cfg.adapt_window, cfg.target_accept);
        let lp = c.log_posterior(model);
        trace.push(lp);
        if it == cfg.burn_in {
            burn_counts = c.counts;
            c.counts = AcceptanceRates::default();
        }
        if it > cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
            draws.push(Draw { chain, iteration: it, log_posterior: lp, state: c.state.clone() });
        }
    }
    let acceptance = if cfg.iterations > cfg.burn_in { c.counts } else { burn_counts };
    Ok(ChainRun { draws, diagnostics: ChainDiagnostics { chain, acceptance, trace } })
}

/// Fit the hierarchical model; chains run concurrently under
/// `cfg.execution` with independent seeds derived from `cfg.seed`.
pub fn run_mcmc(
    data: &PanelData,
    network: &StationNetwork,
    spec: super::ModelSpec,
    cfg: &McmcConfig,
) -> Result<PosteriorDraws, ModelError> {
    cfg.validate()?;
    let model = Model::new(data, network, spec)?.with_execution(cfg.execution);
    let init = initialize_state(&model)?;
    let runs = par::map_range(cfg.execution, cfg.chains, |c| run_chain(&model, &init, cfg, c));
    let mut draws = Vec::new();
    let mut chains = Vec::new();
    for r in runs {
        let r = r?;
        draws.extend(r.draws);
        chains.push(r.diagnostics);
    }
    Ok(PosteriorDraws {
        draws,
        chains,
        shift_y: model.shift_y,
        shift_x: model.shift_x,
        observed_stations: data.observed_stations.clone(),
    })
}
