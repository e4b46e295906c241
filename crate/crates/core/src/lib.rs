//! Calibration of simulated environmental fields against sparse station
//! observations by space-time quantile matching under an extended
//! generalized Pareto model.
//!
//! The observed and simulated laws at every station and day are extended
//! GPDs in endpoint form whose endpoints share a latent spatial field over
//! stations and a random-walk field over days. The model is fitted by an
//! adaptive Metropolis-within-Gibbs sampler and calibrated values are the
//! posterior predictive mean of `F_Y^-1(F_X(x))`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod config;
pub mod egpd;
pub mod grid;
pub mod io;
pub mod latent;
pub mod model;
pub mod panel;
pub mod par;
pub mod predictive;
pub mod rng;
pub mod run;
pub mod stats;
pub mod synthetic;

pub use calibration::{conditional_calibrate, fit_egpd, marginal_calibrate, CalibrationMap, EmpiricalCdf, Law};
pub use config::{Mode, RunConfig};
pub use egpd::{EgpdParams, GpdParams};
pub use grid::Grid;
pub use latent::{CorrelationFamily, StationNetwork};
pub use model::{run_mcmc, McmcConfig, Model, ModelSpec, ModelState, PosteriorDraws, Priors, ShiftRule};
pub use panel::PanelData;
pub use par::Execution;
pub use run::{run, Command, Error};
