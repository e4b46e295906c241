//! The `egpdcal` binary end to end: outputs, reruns and exit codes.

use egpd_calib::io;
use egpd_calib::stats;
use std::path::Path;
use std::process::{Command, Output};

fn egpdcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egpdcal")).args(args).env_remove("RUST_LOG").output().expect("binary runs")
}

fn simulate(dir: &Path, extra: &[&str]) -> String {
    let out = dir.join("sim");
    let o = out.to_str().unwrap().to_string();
    let mut args = vec!["simulate", "-o", &o, "--seed", "3"];
    args.extend_from_slice(extra);
    let res = egpdcal(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    o
}

fn inputs(sim: &str) -> Vec<String> {
    ["stations", "observed", "simulated"].iter().flat_map(|k| [format!("--{k}"), format!("{sim}/{k}.csv")]).collect()
}

fn run_with_inputs(command: &str, sim: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![command.into(), "-o".into(), out.to_str().unwrap().into()];
    args.extend(inputs(sim));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    egpdcal(&refs)
}

#[test]
fn simulate_writes_inputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--set", "sim.n_stations=5", "--set", "sim.n_observed=3", "--set", "sim.days=4"]);
    for f in ["stations.csv", "observed.csv", "simulated.csv", "truth.csv", "manifest.txt"] {
        assert!(Path::new(&sim).join(f).is_file(), "{f}");
    }
    let manifest = std::fs::read_to_string(Path::new(&sim).join("manifest.txt")).unwrap();
    assert!(manifest.contains("sim.n_stations = 5"), "{manifest}");
    let staging: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("staging"))
        .collect();
    assert!(staging.is_empty());
}

#[test]
fn marginal_empirical_matches_each_station_law() {
    let dir = tempfile::tempdir().unwrap();
    let sim =
        simulate(dir.path(), &["--set", "sim.n_stations=6", "--set", "sim.n_observed=4", "--set", "sim.days=300"]);
    let out = dir.path().join("cal");
    let res = run_with_inputs("calibrate", &sim, &out, &["--mode", "marginal-empirical"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let net = io::read_stations(&Path::new(&sim).join("stations.csv")).unwrap();
    let data =
        io::read_panels(&Path::new(&sim).join("observed.csv"), &Path::new(&sim).join("simulated.csv"), &net).unwrap();
    let (field, _) = io::read_calibrated(&out.join("calibrated.csv"), &net, &data.dates).unwrap();
    for (r, &i) in data.observed_stations.iter().enumerate() {
        let obs: Vec<f64> = data.observed.row(r).iter().copied().filter(|v| !v.is_nan()).collect();
        let (_, p) = stats::ks_two_sample(field.values.row(i), &obs);
        assert!(p > 0.01, "station {i}: p = {p}");
    }
}

#[test]
fn hierarchical_run_summary_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--set", "sim.n_stations=4", "--set", "sim.n_observed=3", "--set", "sim.days=6"]);
    let out = dir.path().join("hier");
    let res = run_with_inputs(
        "calibrate",
        &sim,
        &out,
        &["--iterations", "200", "--burn-in", "100", "--set", "adapt_window=100", "--chains", "2"],
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in [
        "posterior.csv",
        "summary.csv",
        "diagnostics.csv",
        "trace.csv",
        "sigma_means.csv",
        "calibrated.csv",
        "manifest.txt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let summ = dir.path().join("summ");
    let post = out.join("posterior.csv");
    let res = egpdcal(&["summarize", "--posterior", post.to_str().unwrap(), "-o", summ.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = std::fs::read_to_string(summ.join("summary.csv")).unwrap();
    assert!(summary.starts_with("parameter,mean,sd,q2.5,median,q97.5,min,max\n"));
    assert!(summary.contains("\ntau_z,"));

    let figs = dir.path().join("figs");
    let res = run_with_inputs(
        "export-figures",
        &sim,
        &figs,
        &["--run-dir", out.to_str().unwrap(), "--day", "2013-01-03", "--svg"],
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["kde.csv", "stations.csv", "sigma_boxplot.csv", "kde.svg"] {
        assert!(figs.join("figures-2013-01-03").join(f).is_file(), "{f}");
    }

    let res =
        run_with_inputs("export-figures", &sim, &figs, &["--run-dir", out.to_str().unwrap(), "--day", "2031-01-01"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn manifest_reruns_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--set", "sim.n_stations=4", "--set", "sim.n_observed=2", "--set", "sim.days=5"]);
    let first = dir.path().join("first");
    let res = run_with_inputs(
        "calibrate",
        &sim,
        &first,
        &["--iterations", "120", "--burn-in", "60", "--set", "adapt_window=60", "--seed", "9"],
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let second = dir.path().join("second");
    let manifest = first.join("manifest.txt");
    let res = egpdcal(&["calibrate", "--config", manifest.to_str().unwrap(), "-o", second.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["posterior.csv", "calibrated.csv", "summary.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_config_path_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let missing = dir.path().join("nope.conf");
    let res = egpdcal(&["calibrate", "--config", missing.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    let res = egpdcal(&["calibrate", "-o", out.to_str().unwrap(), "--set", "no_such_key=1"]);
    assert_eq!(res.status.code(), Some(1));
    let res = egpdcal(&["calibrate", "-o", out.to_str().unwrap(), "--mode", "psychic"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn data_and_numerical_failures_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--set", "sim.n_stations=3", "--set", "sim.n_observed=2", "--set", "sim.days=4"]);

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "station_id,date,value\nS001,2013-01-01,-4\n").unwrap();
    let out = dir.path().join("out");
    let mut args: Vec<String> = vec!["calibrate".into(), "-o".into(), out.to_str().unwrap().into()];
    args.extend(inputs(&sim));
    let k = args.iter().position(|a| a == "--observed").unwrap();
    args[k + 1] = broken.to_str().unwrap().into();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let res = egpdcal(&refs);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());

    // a constant observed panel leaves nothing to fit
    let flat = dir.path().join("flat.csv");
    let text = std::fs::read_to_string(Path::new(&sim).join("observed.csv")).unwrap();
    let mut lines = text.lines();
    let mut flat_text = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let (head, _) = line.rsplit_once(',').unwrap();
        flat_text += &format!("{head},1.5\n");
    }
    std::fs::write(&flat, flat_text).unwrap();
    args[k + 1] = flat.to_str().unwrap().into();
    args.extend(["--iterations", "20", "--burn-in", "10", "--set", "adapt_window=10"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let res = egpdcal(&refs);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}
