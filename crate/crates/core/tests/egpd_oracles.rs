//! Extended-GPD values pinned against 50-digit reference evaluations, plus
//! finite-difference and property checks.

#![allow(clippy::excessive_precision)]

use approx::assert_relative_eq;
use egpd_calib::egpd::{EgpdParams, GpdParams};
use proptest::prelude::*;

/// `(delta, xi, kappa, y, cdf, logpdf, log_sf)`
const PINNED: [(f64, f64, f64, f64, f64, f64, f64); 5] = [
    (10.0, -0.2, 2.5, 3.0, 0.63127263551771683, -1.4795666889144623, -0.99769775766703553),
    (25.0, -0.07, 5.0, 24.0, 1.0, -41.715242405893128, -44.374502442825906),
    (3.0, -0.45, 0.3, 0.01, 0.22942157784366344, 1.926961096011328, -0.26061384853647681),
    (120.0, -0.01, 18.6, 40.0, 0.99999999999999995, -37.400205678783072, -37.623349230097282),
    (0.5, -0.3, 1.0, 0.25, 0.90078743425198754, 0.2797765635793422, -2.3104906018664845),
];

/// `(delta, xi, kappa, u, quantile)`
const PINNED_QUANTILES: [(f64, f64, f64, f64, f64); 3] = [
    (10.0, -0.2, 2.5, 0.3, 1.7499241151482376),
    (25.0, -0.07, 5.0, 0.999, 11.227135543001413),
    (3.0, -0.45, 0.3, 1e-9, 1.3499999999999969e-30),
];

#[test]
fn pinned_cdf_logpdf_log_sf() {
    for (delta, xi, kappa, y, cdf, logpdf, log_sf) in PINNED {
        let p = EgpdParams::new(delta, xi, kappa).unwrap();
        assert_relative_eq!(p.cdf(y).unwrap(), cdf, max_relative = 1e-13);
        assert_relative_eq!(p.logpdf(y), logpdf, max_relative = 1e-11);
        assert_relative_eq!(p.log_sf(y).unwrap(), log_sf, max_relative = 1e-11);
    }
}

#[test]
fn pinned_quantiles() {
    for (delta, xi, kappa, u, q) in PINNED_QUANTILES {
        let p = EgpdParams::new(delta, xi, kappa).unwrap();
        assert_relative_eq!(p.quantile(u).unwrap(), q, max_relative = 1e-12);
    }
}

#[test]
fn density_is_derivative_of_cdf() {
    for (delta, xi, kappa, y, ..) in PINNED {
        let p = EgpdParams::new(delta, xi, kappa).unwrap();
        if p.cdf(y).unwrap() > 0.999 {
            continue;
        }
        let h = 1e-5 * y;
        let fd = (p.cdf(y + h).unwrap() - p.cdf(y - h).unwrap()) / (2.0 * h);
        assert_relative_eq!(p.logpdf(y).exp(), fd, max_relative = 1e-6);
    }
}

#[test]
fn gpd_special_case_and_endpoint() {
    let g = GpdParams::new(4.0, -0.25).unwrap();
    assert_relative_eq!(g.upper_endpoint(), 16.0);
    let e = EgpdParams::new(16.0, -0.25, 1.0).unwrap();
    for y in [0.5, 3.0, 9.0, 15.9] {
        assert_relative_eq!(e.cdf(y).unwrap(), g.cdf(y).unwrap(), max_relative = 1e-14);
        assert_relative_eq!(e.logpdf(y), g.logpdf(y), max_relative = 1e-12);
    }
    assert_eq!(e.cdf(16.0).unwrap(), 1.0);
    assert_eq!(e.cdf(0.0).unwrap(), 0.0);
    assert_eq!(e.quantile(1.0).unwrap(), 16.0);
}

fn params() -> impl Strategy<Value = EgpdParams> {
    (0.2f64..200.0, -0.5f64..-1e-3, 0.05f64..30.0).prop_map(|(d, xi, k)| EgpdParams::new(d, xi, k).unwrap())
}

proptest! {
    #[test]
    fn cdf_is_monotone(p in params(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p.cdf(lo * p.delta).unwrap() <= p.cdf(hi * p.delta).unwrap());
    }

    #[test]
    fn quantile_inverts_cdf(p in params(), u in 1e-6f64..0.999_999) {
        let y = p.quantile(u).unwrap();
        prop_assert!(y >= 0.0 && y <= p.delta);
        prop_assert!((p.cdf(y).unwrap() - u).abs() < 1e-9);
    }

    #[test]
    fn log_sf_roundtrip(p in params(), ln_s in -30.0f64..-1e-3) {
        let y = p.quantile_from_log_sf(ln_s).unwrap();
        let back = p.log_sf(y).unwrap();
        prop_assert!((back - ln_s).abs() < 1e-8 * ln_s.abs().max(1.0), "{back} vs {ln_s}");
    }

    #[test]
    fn tail_quantile_inverts_log_sf(p in params(), frac in 0.5f64..1.0) {
        let y = frac * p.delta;
        prop_assume!(y < p.delta);
        let back = p.quantile_from_log_sf(p.log_sf(y).unwrap()).unwrap();
        prop_assert!((back - y).abs() < 1e-10 * p.delta, "{back} vs {y}");
    }

    #[test]
    fn samples_stay_in_support(p in params(), seed in 0u64..1000) {
        for v in p.sample(50, seed).unwrap() {
            prop_assert!((0.0..=p.delta).contains(&v));
        }
    }
}
