//! Files written by the crate read back to the same values, bit for bit.

use egpd_calib::grid::Grid;
use egpd_calib::io;
use egpd_calib::model::{run_mcmc, McmcConfig, ModelSpec, GLOBAL_NAMES};
use egpd_calib::predictive::calibrate_field;
use egpd_calib::synthetic::{generate_synthetic, lattice_network, TruthParams};
use egpd_calib::Execution;

fn same_bits(a: &Grid, b: &Grid) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn synthetic_panels_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let net = lattice_network(7, 4, 25.0, 8);
    let syn = generate_synthetic(&TruthParams::default(), &net, 9, 13, 0.3).unwrap();
    let (sp, op, xp) = (dir.path().join("s.csv"), dir.path().join("o.csv"), dir.path().join("x.csv"));
    io::write_stations(&sp, &net).unwrap();
    io::write_panels(&op, &xp, &syn.data, &net).unwrap();

    let net2 = io::read_stations(&sp).unwrap();
    assert_eq!(net2.ids(), net.ids());
    assert_eq!(net2.coords(), net.coords());
    assert_eq!(net2.observed_mask(), net.observed_mask());
    let data2 = io::read_panels(&op, &xp, &net2).unwrap();
    assert_eq!(data2.dates, syn.data.dates);
    assert_eq!(data2.observed_stations, syn.data.observed_stations);
    assert!(same_bits(&data2.observed, &syn.data.observed));
    assert!(same_bits(&data2.simulated, &syn.data.simulated));
}

#[test]
fn posterior_calibrated_and_sigma_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let net = lattice_network(5, 3, 25.0, 8);
    let syn = generate_synthetic(&TruthParams::default(), &net, 6, 2, 0.0).unwrap();
    let cfg = McmcConfig { iterations: 60, burn_in: 30, adapt_window: 30, thin: 3, chains: 2, ..McmcConfig::default() };
    let draws = run_mcmc(&syn.data, &net, ModelSpec::default(), &cfg).unwrap();
    let dates = &syn.data.dates;

    let path = dir.path().join("posterior.csv");
    io::write_posterior(&path, &draws, &net, dates).unwrap();
    let table = io::read_table(&path).unwrap();
    assert_eq!(table.columns, io::posterior_header(&net, dates));
    assert_eq!(table.rows.len(), draws.len());
    for (k, name) in GLOBAL_NAMES.iter().enumerate() {
        let col = table.column(name).unwrap();
        assert!(col.iter().zip(draws.states()).all(|(a, s)| a.to_bits() == s.globals()[k].to_bits()));
    }
    let w0 = table.column(&format!("w.{}", net.ids()[0])).unwrap();
    assert!(w0.iter().zip(draws.states()).all(|(a, s)| a.to_bits() == s.w[0].to_bits()));

    let field = calibrate_field(&draws, &syn.data.simulated, 5, Execution::Parallel).unwrap();
    let path = dir.path().join("calibrated.csv");
    io::write_calibrated(&path, &field, &syn.data.simulated, &net, dates).unwrap();
    let (back, sim) = io::read_calibrated(&path, &net, dates).unwrap();
    assert!(same_bits(&sim, &syn.data.simulated));
    assert!(same_bits(&back.values, &field.values));
    assert!(same_bits(&back.pred_sd, &field.pred_sd));
    assert_eq!(back.clamped, field.clamped);

    let (sy, sx) = draws.sigma_means();
    let path = dir.path().join("sigma.csv");
    io::write_sigma_means(&path, (&sy, &sx), &syn.data.observed_stations, &net, dates).unwrap();
    let (sy2, sx2) = io::read_sigma_means(&path, &syn.data.observed_stations, &net, dates).unwrap();
    assert!(same_bits(&sy, &sy2) && same_bits(&sx, &sx2));
}

#[test]
fn missing_simulated_cell_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let net = lattice_network(2, 1, 25.0, 8);
    let sp = dir.path().join("s.csv");
    io::write_stations(&sp, &net).unwrap();
    let op = dir.path().join("o.csv");
    let xp = dir.path().join("x.csv");
    std::fs::write(&op, "station_id,date,value\nS001,2013-01-01,1.5\n").unwrap();
    std::fs::write(&xp, "station_id,date,value\nS001,2013-01-01,2.0\nS001,2013-01-02,2.5\nS002,2013-01-01,1.0\n")
        .unwrap();
    let err = io::read_panels(&op, &xp, &net).unwrap_err();
    assert!(matches!(err, io::IoError::MissingSimulated { .. }), "{err}");
}
