//! Latent-field densities against dense evaluations, and invariance of the
//! model kernel under station relabelling.

mod common;

use approx::assert_relative_eq;
use egpd_calib::grid::Grid;
use egpd_calib::latent::{rw1_logdensity, rw1_sample, rw1_structure, spatial_logdensity, CorrelationFamily};
use egpd_calib::model::Model;
use egpd_calib::panel::PanelData;
use egpd_calib::rng::{self, Domain};
use egpd_calib::synthetic::lattice_network;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::f64::consts::PI;

fn dense_mvn(w: &[f64], cov: &DMatrix<f64>) -> f64 {
    let n = w.len() as f64;
    let x = DVector::from_column_slice(w);
    let lu = cov.clone().lu();
    let q = x.dot(&lu.solve(&x).unwrap());
    -0.5 * n * (2.0 * PI).ln() - 0.5 * lu.determinant().ln() - 0.5 * q
}

#[test]
fn spatial_density_matches_dense_for_each_family() {
    let net = lattice_network(9, 5, 30.0, 4);
    let d = net.scaled_distances();
    let w = [0.3, -0.2, 0.5, 0.1, -0.7, 0.0, 0.25, -0.4, 0.15];
    let tau = 2.7;
    type Rho = fn(f64, f64) -> f64;
    let cases: [(CorrelationFamily, Rho); 2] = [
        (CorrelationFamily::Exponential, |d, a| (-d / a).exp()),
        (CorrelationFamily::Spherical, |d, a| {
            let r = d / a;
            if r >= 1.0 {
                0.0
            } else {
                1.0 - 1.5 * r + 0.5 * r.powi(3)
            }
        }),
    ];
    for (family, rho) in cases {
        for alpha in [0.15, 0.3, 0.45] {
            let cov = DMatrix::from_fn(9, 9, |i, j| rho(d[(i, j)], alpha) / tau);
            let got = spatial_logdensity(&w, alpha, tau, &d, family).unwrap();
            assert_relative_eq!(got, dense_mvn(&w, &cov), max_relative = 1e-10);
        }
    }
}

#[test]
fn rw1_density_drops_only_the_pseudo_determinant_of_the_structure() {
    for t in [2usize, 3, 6, 20] {
        let mut r = rng::stream(9, Domain::Synthetic, t as u64);
        let z = rw1_sample(t, 1.7, &mut r);
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        let tau = 0.8;
        let prec = rw1_structure(t) * tau;
        let eig = SymmetricEigen::new(prec.clone());
        let ln_pdet: f64 = eig.eigenvalues.iter().filter(|&&l| l > 1e-9).map(|l| l.ln()).sum();
        let x = DVector::from_column_slice(&z);
        let proper = -0.5 * (t - 1) as f64 * (2.0 * PI).ln() + 0.5 * ln_pdet - 0.5 * x.dot(&(&prec * &x));
        // pseudo-determinant of the unscaled structure is T
        assert_relative_eq!(rw1_logdensity(&z, tau), proper - 0.5 * (t as f64).ln(), epsilon = 1e-10);
    }
}

#[test]
fn kernel_is_invariant_to_station_order() {
    let (data, net, spec, state) = common::toy_problem();
    let model = Model::new(&data, &net, spec).unwrap();
    let base = model.log_posterior(&state);

    let perm = [2usize, 0, 1];
    let mut inv = [0usize; 3];
    for (k, &i) in perm.iter().enumerate() {
        inv[i] = k;
    }
    let pnet = net.permuted(&perm);
    let rows_of =
        |g: &Grid, order: &[usize]| Grid::from_rows(&order.iter().map(|&i| g.row(i).to_vec()).collect::<Vec<_>>());
    // observed rows follow the new network order
    let mut obs: Vec<(usize, usize)> = data.observed_stations.iter().enumerate().map(|(r, &i)| (inv[i], r)).collect();
    obs.sort();
    let obs_rows: Vec<usize> = obs.iter().map(|&(_, r)| r).collect();
    let pdata = PanelData::from_grids(
        rows_of(&data.observed, &obs_rows),
        rows_of(&data.simulated, &perm),
        obs.iter().map(|&(k, _)| k).collect(),
    )
    .unwrap();
    let mut pstate = state.clone();
    pstate.delta_y = rows_of(&state.delta_y, &obs_rows);
    pstate.w = perm.iter().map(|&i| state.w[i]).collect();
    pstate.delta_x = rows_of(&state.delta_x, &perm);
    let pmodel = Model::new(&pdata, &pnet, spec).unwrap();
    assert_relative_eq!(pmodel.log_posterior(&pstate), base, max_relative = 1e-12);
}

#[test]
fn likelihood_and_prior_split_match_dense() {
    let (data, net, spec, state) = common::toy_problem();
    let model = Model::new(&data, &net, spec).unwrap();
    let (lik, prior) = common::dense_log_posterior(&data, &net, &spec, &state);
    assert_relative_eq!(model.log_likelihood(&state), lik, max_relative = 1e-10);
    assert_relative_eq!(model.log_prior(&state), prior, max_relative = 1e-10);
    assert!(model.satisfies_constraints(&state));
    assert!(model.check_finite(&state).is_ok());
}
