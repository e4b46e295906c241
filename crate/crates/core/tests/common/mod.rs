#![allow(dead_code)]

use egpd_calib::grid::Grid;
use egpd_calib::latent::{CorrelationFamily, StationNetwork};
use egpd_calib::model::{ModelSpec, ModelState, ShiftRule};
use egpd_calib::panel::PanelData;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, Exp, Gamma, Normal, Uniform};
use std::f64::consts::PI;

/// Disc correlation from the lens area of two discs of radius `alpha`.
fn disc_lens(d: f64, alpha: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    if d >= 2.0 * alpha {
        return 0.0;
    }
    let area = 2.0 * alpha * alpha * (d / (2.0 * alpha)).acos() - 0.5 * d * (4.0 * alpha * alpha - d * d).sqrt();
    area / (PI * alpha * alpha)
}

/// Extended-GPD log-density from the product form `kappa H^(kappa-1) h`.
pub fn dense_egpd_logpdf(y: f64, delta: f64, xi: f64, kappa: f64) -> f64 {
    let a = -1.0 / xi;
    let s = 1.0 - y / delta;
    let big_h = 1.0 - s.powf(a);
    let small_h = a / delta * s.powf(a - 1.0);
    (kappa * big_h.powf(kappa - 1.0) * small_h).ln()
}

/// Straight dense evaluation of the log-posterior kernel: statrs densities
/// for every prior, an LU-based Gaussian density for `w` and the RW1
/// structure matrix for `z`.
pub fn dense_log_posterior(data: &PanelData, net: &StationNetwork, spec: &ModelSpec, s: &ModelState) -> (f64, f64) {
    assert_eq!(spec.family, CorrelationFamily::Disc);
    let (shift_y, shift_x) = match spec.shift {
        ShiftRule::Fixed { observed, simulated } => (observed, simulated),
        ShiftRule::PanelMax => (data.observed.max_present().unwrap(), data.simulated.max_present().unwrap()),
    };
    let p = spec.priors;
    let beta = Normal::new(p.beta_mean, (1.0 / p.beta_precision).sqrt()).unwrap();
    let kappa = Gamma::new(p.kappa_shape, p.kappa_rate).unwrap();
    let tau = Gamma::new(p.tau_shape, p.tau_rate).unwrap();
    let xi = Uniform::new(p.xi_lower, p.xi_upper).unwrap();
    let alpha = Uniform::new(p.alpha_lower, p.alpha_upper).unwrap();
    let mut prior = beta.ln_pdf(s.beta_y)
        + beta.ln_pdf(s.beta_x)
        + kappa.ln_pdf(s.kappa_y)
        + kappa.ln_pdf(s.kappa_x)
        + xi.ln_pdf(s.xi_y)
        + xi.ln_pdf(s.xi_x)
        + tau.ln_pdf(s.tau_w)
        + tau.ln_pdf(s.tau_z)
        + alpha.ln_pdf(s.alpha);

    let n = net.len();
    let d = net.distances();
    let dmax = d.max();
    let sigma = DMatrix::from_fn(n, n, |i, j| disc_lens(d[(i, j)] / dmax, s.alpha));
    let lu = sigma.clone().lu();
    let inv = lu.try_inverse().unwrap();
    let det = sigma.lu().determinant();
    let w = DVector::from_column_slice(&s.w);
    let q = (w.transpose() * &inv * &w)[(0, 0)];
    prior += -0.5 * n as f64 * (2.0 * PI).ln() + 0.5 * n as f64 * s.tau_w.ln() - 0.5 * det.ln() - 0.5 * s.tau_w * q;

    let t = s.z.len();
    let mut r = DMatrix::<f64>::zeros(t, t);
    for j in 0..t - 1 {
        let mut e = DVector::<f64>::zeros(t);
        e[j] = -1.0;
        e[j + 1] = 1.0;
        r += &e * e.transpose();
    }
    let z = DVector::from_column_slice(&s.z);
    let qz = (z.transpose() * r * &z)[(0, 0)];
    let rank = (t - 1) as f64;
    prior += -0.5 * rank * (2.0 * PI).ln() + 0.5 * rank * s.tau_z.ln() - 0.5 * s.tau_z * qz;

    let mut lik = 0.0;
    for (row, &i) in data.observed_stations.iter().enumerate() {
        for j in 0..t {
            let rate = (s.beta_y + s.w[i] + s.z[j]).exp();
            let delta = s.delta_y.get(row, j);
            prior += Exp::new(rate).unwrap().ln_pdf(delta - shift_y);
            let y = data.observed.get(row, j);
            if !y.is_nan() {
                lik += dense_egpd_logpdf(y, delta, s.xi_y, s.kappa_y);
            }
        }
    }
    for i in 0..n {
        for j in 0..t {
            let rate = (s.beta_x + s.w[i] + s.z[j]).exp();
            let delta = s.delta_x.get(i, j);
            prior += Exp::new(rate).unwrap().ln_pdf(delta - shift_x);
            lik += dense_egpd_logpdf(data.simulated.get(i, j), delta, s.xi_x, s.kappa_x);
        }
    }
    (lik, prior)
}

/// Three stations (two observed) by four days with one missing observed
/// cell, and a state inside the support.
pub fn toy_problem() -> (PanelData, StationNetwork, ModelSpec, ModelState) {
    let net = StationNetwork::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![(0.0, 0.0), (30.0, 10.0), (12.0, 40.0)],
        vec![true, false, true],
    )
    .unwrap();
    let observed = Grid::from_rows(&[vec![3.1, 4.7, f64::NAN, 2.2], vec![5.5, 1.3, 2.8, 6.1]]);
    let simulated = Grid::from_rows(&[vec![4.0, 5.2, 3.3, 2.9], vec![2.5, 3.8, 4.4, 5.0], vec![6.2, 1.9, 3.0, 4.1]]);
    let data = PanelData::from_grids(observed, simulated, vec![0, 2]).unwrap();
    let spec = ModelSpec { shift: ShiftRule::Fixed { observed: 7.0, simulated: 6.5 }, ..ModelSpec::default() };
    let state = ModelState {
        beta_y: -0.8,
        beta_x: -0.4,
        kappa_y: 2.3,
        kappa_x: 4.1,
        xi_y: -0.12,
        xi_x: -0.21,
        alpha: 0.37,
        tau_w: 3.5,
        tau_z: 0.9,
        w: vec![0.3, -0.5, 0.1],
        z: vec![0.4, -0.1, -0.6, 0.3],
        delta_y: Grid::from_rows(&[vec![8.1, 9.4, 7.6, 11.0], vec![7.9, 8.8, 10.2, 7.3]]),
        delta_x: Grid::from_rows(&[vec![6.9, 9.1, 7.7, 12.5], vec![8.3, 6.6, 7.05, 9.9], vec![10.4, 7.2, 8.0, 6.8]]),
    };
    (data, net, spec, state)
}
