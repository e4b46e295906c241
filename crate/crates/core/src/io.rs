//! CSV formats for stations, panels, posterior draws and run products.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces every value bit for bit.

use crate::grid::Grid;
use crate::latent::{LatentError, StationNetwork};
use crate::model::{ChainDiagnostics, PosteriorDraws, BLOCKS, GLOBAL_NAMES};
use crate::panel::{PanelData, PanelError};
use crate::predictive::{CalibratedField, FigureBundle, Kde, SummaryRow, SUMMARY_COLUMNS};
use chrono::NaiveDate;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: header must be '{expected}', found '{found}'")]
    Header { path: PathBuf, expected: String, found: String },
    #[error("{path} row {row}: {message}")]
    Row { path: PathBuf, row: usize, message: String },
    #[error("{path} row {row}: duplicate entry for station '{station}' on {date}")]
    Duplicate { path: PathBuf, row: usize, station: String, date: String },
    #[error("{path} row {row}: station '{station}' is not in the station network")]
    UnknownStation { path: PathBuf, row: usize, station: String },
    #[error("{path} row {row}: station '{station}' has observations but is not marked observed in the network")]
    NotObserved { path: PathBuf, row: usize, station: String },
    #[error("{path} row {row}: negative value {value}")]
    Negative { path: PathBuf, row: usize, value: f64 },
    #[error("{path} row {row}: date {date} does not occur in the simulated panel")]
    UnknownDate { path: PathBuf, row: usize, date: String },
    #[error("{path}: station '{station}' has no simulated value on {date}")]
    MissingSimulated { path: PathBuf, station: String, date: String },
    #[error("{path}: no rows")]
    Empty { path: PathBuf },
    #[error(transparent)]
    Network(#[from] LatentError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

fn reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    let file = File::open(path).map_err(|source| IoError::Open { path: path.into(), source })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<(), IoError> {
    let found = rdr.headers().map_err(|source| IoError::Csv { path: path.into(), source })?.clone();
    if found.iter().ne(expected.iter().copied()) {
        return Err(IoError::Header {
            path: path.into(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

/// Records with their 1-based file line (the header is line 1).
fn records(rdr: &mut csv::Reader<File>, path: &Path) -> Result<Vec<(usize, csv::StringRecord)>, IoError> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|source| IoError::Csv { path: path.into(), source })?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(out.len() + 2);
        out.push((row, rec));
    }
    Ok(out)
}

fn parse_f64(path: &Path, row: usize, field: &str, what: &str) -> Result<f64, IoError> {
    field.parse::<f64>().map_err(|_| IoError::Row {
        path: path.into(),
        row,
        message: format!("invalid {what} '{field}'"),
    })
}

fn parse_date(path: &Path, row: usize, field: &str) -> Result<NaiveDate, IoError> {
    NaiveDate::parse_from_str(field, DATE_FORMAT).map_err(|_| IoError::Row {
        path: path.into(),
        row,
        message: format!("invalid date '{field}', expected YYYY-MM-DD"),
    })
}

fn parse_bool(path: &Path, row: usize, field: &str) -> Result<bool, IoError> {
    match field {
        "1" | "true" | "TRUE" | "yes" => Ok(true),
        "0" | "false" | "FALSE" | "no" => Ok(false),
        _ => Err(IoError::Row { path: path.into(), row, message: format!("invalid flag '{field}', expected 0 or 1") }),
    }
}

pub fn format_date(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

/// Buffered CSV text writer. Values are joined by commas verbatim, so
/// callers must not pass fields containing commas or quotes (station ids
/// are checked on read).
struct Out {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl Out {
    fn create(path: &Path) -> Result<Self, IoError> {
        let file = File::create(path).map_err(|source| IoError::Write { path: path.into(), source })?;
        Ok(Self { path: path.into(), inner: BufWriter::new(file) })
    }

    fn line(&mut self, s: &str) -> Result<(), IoError> {
        writeln!(self.inner, "{s}").map_err(|source| IoError::Write { path: self.path.clone(), source })
    }

    fn finish(mut self) -> Result<(), IoError> {
        self.inner.flush().map_err(|source| IoError::Write { path: self.path.clone(), source })
    }
}

fn check_id(path: &Path, row: usize, id: &str) -> Result<(), IoError> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
        return Err(IoError::Row { path: path.into(), row, message: format!("invalid station id '{id}'") });
    }
    Ok(())
}

pub const STATIONS_HEADER: [&str; 4] = ["station_id", "x_km", "y_km", "observed"];
pub const PANEL_HEADER: [&str; 3] = ["station_id", "date", "value"];

/// Read `station_id,x_km,y_km,observed`.
pub fn read_stations(path: &Path) -> Result<StationNetwork, IoError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &STATIONS_HEADER)?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut observed = Vec::new();
    let mut seen = HashMap::new();
    for (row, rec) in records(&mut rdr, path)? {
        let id = rec[0].to_string();
        check_id(path, row, &id)?;
        if seen.insert(id.clone(), row).is_some() {
            return Err(IoError::Row { path: path.into(), row, message: format!("duplicate station '{id}'") });
        }
        let x = parse_f64(path, row, &rec[1], "x_km")?;
        let y = parse_f64(path, row, &rec[2], "y_km")?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(IoError::Row { path: path.into(), row, message: "coordinates must be finite".into() });
        }
        ids.push(id);
        coords.push((x, y));
        observed.push(parse_bool(path, row, &rec[3])?);
    }
    if ids.is_empty() {
        return Err(IoError::Empty { path: path.into() });
    }
    Ok(StationNetwork::new(ids, coords, observed)?)
}

pub fn write_stations(path: &Path, net: &StationNetwork) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line(&STATIONS_HEADER.join(","))?;
    for ((id, (x, y)), obs) in net.ids().iter().zip(net.coords()).zip(net.observed_mask()) {
        out.line(&format!("{id},{x},{y},{}", u8::from(*obs)))?;
    }
    out.finish()
}

struct LongRow {
    row: usize,
    station: usize,
    date: NaiveDate,
    value: f64,
}

fn read_long(path: &Path, net: &StationNetwork) -> Result<Vec<LongRow>, IoError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &PANEL_HEADER)?;
    let mut seen: HashMap<(usize, NaiveDate), usize> = HashMap::new();
    let mut out = Vec::new();
    for (row, rec) in records(&mut rdr, path)? {
        let id = &rec[0];
        let station = net.index_of(id).ok_or_else(|| IoError::UnknownStation {
            path: path.into(),
            row,
            station: id.to_string(),
        })?;
        let date = parse_date(path, row, &rec[1])?;
        let value = parse_f64(path, row, &rec[2], "value")?;
        if !value.is_finite() {
            return Err(IoError::Row { path: path.into(), row, message: format!("non-finite value '{}'", &rec[2]) });
        }
        if value < 0.0 {
            return Err(IoError::Negative { path: path.into(), row, value });
        }
        if seen.insert((station, date), row).is_some() {
            return Err(IoError::Duplicate {
                path: path.into(),
                row,
                station: id.to_string(),
                date: rec[1].to_string(),
            });
        }
        out.push(LongRow { row, station, date, value });
    }
    if out.is_empty() {
        return Err(IoError::Empty { path: path.into() });
    }
    Ok(out)
}

/// Read long-form observed and simulated panels aligned to `net`.
///
/// The date axis is the sorted set of simulated dates; the simulated panel
/// must cover every station on every date. Observed rows may be absent
/// (missing) but must refer to observed stations and simulated dates.
pub fn read_panels(observed: &Path, simulated: &Path, net: &StationNetwork) -> Result<PanelData, IoError> {
    let sim_rows = read_long(simulated, net)?;
    let dates: Vec<NaiveDate> = sim_rows.iter().map(|r| r.date).collect::<BTreeSet<_>>().into_iter().collect();
    let day: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(j, d)| (*d, j)).collect();
    let t = dates.len();
    let mut sim = Grid::filled(net.len(), t, f64::NAN);
    for r in &sim_rows {
        sim.set(r.station, day[&r.date], r.value);
    }
    for i in 0..net.len() {
        for (j, d) in dates.iter().enumerate() {
            if sim.get(i, j).is_nan() {
                return Err(IoError::MissingSimulated {
                    path: simulated.into(),
                    station: net.ids()[i].clone(),
                    date: format_date(*d),
                });
            }
        }
    }
    let obs_idx = net.observed_indices();
    let mut row_of = vec![None; net.len()];
    for (r, &i) in obs_idx.iter().enumerate() {
        row_of[i] = Some(r);
    }
    let mut obs = Grid::filled(obs_idx.len(), t, f64::NAN);
    for r in read_long(observed, net)? {
        let Some(row) = row_of[r.station] else {
            return Err(IoError::NotObserved {
                path: observed.into(),
                row: r.row,
                station: net.ids()[r.station].clone(),
            });
        };
        let Some(&j) = day.get(&r.date) else {
            return Err(IoError::UnknownDate { path: observed.into(), row: r.row, date: format_date(r.date) });
        };
        obs.set(row, j, r.value);
    }
    Ok(PanelData::new(obs, sim, dates, obs_idx)?)
}

/// Write a panel in long form; missing (`NaN`) cells are omitted.
pub fn write_panel(path: &Path, grid: &Grid, row_ids: &[&str], dates: &[NaiveDate]) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line(&PANEL_HEADER.join(","))?;
    let labels: Vec<String> = dates.iter().map(|d| format_date(*d)).collect();
    for (r, id) in row_ids.iter().enumerate() {
        for (j, date) in labels.iter().enumerate() {
            let v = grid.get(r, j);
            if !v.is_nan() {
                out.line(&format!("{id},{date},{v}"))?;
            }
        }
    }
    out.finish()
}

/// Write both panels of `data` to the two paths.
pub fn write_panels(observed: &Path, simulated: &Path, data: &PanelData, net: &StationNetwork) -> Result<(), IoError> {
    let ids: Vec<&str> = net.ids().iter().map(String::as_str).collect();
    let obs_ids: Vec<&str> = data.observed_stations.iter().map(|&i| ids[i]).collect();
    write_panel(observed, &data.observed, &obs_ids, &data.dates)?;
    write_panel(simulated, &data.simulated, &ids, &data.dates)
}

/// Column names of the posterior draws file.
pub fn posterior_header(net: &StationNetwork, dates: &[NaiveDate]) -> Vec<String> {
    let mut h: Vec<String> = ["chain", "iteration", "log_posterior"].iter().map(|s| s.to_string()).collect();
    h.extend(GLOBAL_NAMES.iter().map(|s| s.to_string()));
    h.extend(net.ids().iter().map(|id| format!("w.{id}")));
    h.extend(dates.iter().map(|d| format!("z.{}", format_date(*d))));
    h.push("delta_y_mean".into());
    h.push("delta_x_mean".into());
    h
}

/// One row per retained draw: chain, iteration, log-posterior, the global
/// parameters, the spatial and temporal fields and the panel means of both
/// endpoint grids.
pub fn write_posterior(
    path: &Path,
    draws: &PosteriorDraws,
    net: &StationNetwork,
    dates: &[NaiveDate],
) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line(&posterior_header(net, dates).join(","))?;
    let mean = |g: &Grid| {
        let n = g.as_slice().len();
        if n == 0 {
            f64::NAN
        } else {
            g.as_slice().iter().sum::<f64>() / n as f64
        }
    };
    let mut line = String::new();
    for d in &draws.draws {
        line.clear();
        let _ = write!(line, "{},{},{}", d.chain, d.iteration, d.log_posterior);
        for v in d.state.globals().iter().chain(&d.state.w).chain(&d.state.z) {
            let _ = write!(line, ",{v}");
        }
        let _ = write!(line, ",{},{}", mean(&d.state.delta_y), mean(&d.state.delta_x));
        out.line(&line)?;
    }
    out.finish()
}

/// A numeric table keyed by column name.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Read an all-numeric CSV such as the posterior draws file.
pub fn read_table(path: &Path) -> Result<Table, IoError> {
    let mut rdr = reader(path)?;
    let columns: Vec<String> =
        rdr.headers().map_err(|source| IoError::Csv { path: path.into(), source })?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (row, rec) in records(&mut rdr, path)? {
        let vals = rec.iter().map(|f| parse_f64(path, row, f, "number")).collect::<Result<Vec<_>, _>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(IoError::Empty { path: path.into() });
    }
    Ok(Table { columns, rows })
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line(&format!("parameter,{}", SUMMARY_COLUMNS.join(",")))?;
    for r in rows {
        let cols: Vec<String> = r.columns().iter().map(|v| v.to_string()).collect();
        out.line(&format!("{},{}", r.name, cols.join(",")))?;
    }
    out.finish()
}

/// Per-chain, per-block acceptance counts after burn-in.
pub fn write_diagnostics(path: &Path, chains: &[ChainDiagnostics]) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line("chain,block,accepted,proposed,rate")?;
    for c in chains {
        for b in BLOCKS {
            out.line(&format!(
                "{},{},{},{},{}",
                c.chain,
                b.name(),
                c.acceptance.accepted[b as usize],
                c.acceptance.proposed[b as usize],
                c.acceptance.rate(b)
            ))?;
        }
    }
    out.finish()
}

/// Log-posterior of every sweep of every chain, including burn-in.
pub fn write_trace(path: &Path, chains: &[ChainDiagnostics]) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line("chain,sweep,log_posterior")?;
    for c in chains {
        for (k, lp) in c.trace.iter().enumerate() {
            out.line(&format!("{},{k},{lp}", c.chain))?;
        }
    }
    out.finish()
}

pub const CALIBRATED_HEADER: [&str; 6] = ["station_id", "date", "x_sim", "x_calibrated", "pred_sd", "clamped"];

pub fn write_calibrated(
    path: &Path,
    field: &CalibratedField,
    simulated: &Grid,
    net: &StationNetwork,
    dates: &[NaiveDate],
) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line(&CALIBRATED_HEADER.join(","))?;
    let labels: Vec<String> = dates.iter().map(|d| format_date(*d)).collect();
    for (i, id) in net.ids().iter().enumerate() {
        for (j, date) in labels.iter().enumerate() {
            out.line(&format!(
                "{id},{date},{},{},{},{}",
                simulated.get(i, j),
                field.values.get(i, j),
                field.pred_sd.get(i, j),
                u8::from(field.is_clamped(i, j))
            ))?;
        }
    }
    out.finish()
}

/// Read a calibrated-field file back onto `net` and `dates`. The `upper`
/// grid is not stored and comes back as `NaN`.
pub fn read_calibrated(
    path: &Path,
    net: &StationNetwork,
    dates: &[NaiveDate],
) -> Result<(CalibratedField, Grid), IoError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &CALIBRATED_HEADER)?;
    let day: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(j, d)| (*d, j)).collect();
    let (ns, t) = (net.len(), dates.len());
    let mut sim = Grid::filled(ns, t, f64::NAN);
    let mut values = Grid::filled(ns, t, f64::NAN);
    let mut sd = Grid::filled(ns, t, f64::NAN);
    let mut clamped = vec![false; ns * t];
    for (row, rec) in records(&mut rdr, path)? {
        let i = net.index_of(&rec[0]).ok_or_else(|| IoError::UnknownStation {
            path: path.into(),
            row,
            station: rec[0].to_string(),
        })?;
        let date = parse_date(path, row, &rec[1])?;
        let j =
            *day.get(&date).ok_or_else(|| IoError::UnknownDate { path: path.into(), row, date: rec[1].to_string() })?;
        sim.set(i, j, parse_f64(path, row, &rec[2], "x_sim")?);
        values.set(i, j, parse_f64(path, row, &rec[3], "x_calibrated")?);
        sd.set(i, j, parse_f64(path, row, &rec[4], "pred_sd")?);
        clamped[i * t + j] = parse_bool(path, row, &rec[5])?;
    }
    for i in 0..ns {
        for j in 0..t {
            if values.get(i, j).is_nan() {
                return Err(IoError::MissingSimulated {
                    path: path.into(),
                    station: net.ids()[i].clone(),
                    date: format_date(dates[j]),
                });
            }
        }
    }
    let upper = Grid::filled(ns, t, f64::NAN);
    Ok((CalibratedField { values, pred_sd: sd, upper, clamped }, sim))
}

/// Posterior means of `sigma` per cell: `panel,station_id,date,sigma_mean`
/// with `panel` one of `y` (observed stations) or `x` (all stations).
pub fn write_sigma_means(
    path: &Path,
    sigma: (&Grid, &Grid),
    observed_stations: &[usize],
    net: &StationNetwork,
    dates: &[NaiveDate],
) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line("panel,station_id,date,sigma_mean")?;
    let labels: Vec<String> = dates.iter().map(|d| format_date(*d)).collect();
    for (r, &i) in observed_stations.iter().enumerate() {
        for (j, date) in labels.iter().enumerate() {
            out.line(&format!("y,{},{date},{}", net.ids()[i], sigma.0.get(r, j)))?;
        }
    }
    for (i, id) in net.ids().iter().enumerate() {
        for (j, date) in labels.iter().enumerate() {
            out.line(&format!("x,{id},{date},{}", sigma.1.get(i, j)))?;
        }
    }
    out.finish()
}

pub fn read_sigma_means(
    path: &Path,
    observed_stations: &[usize],
    net: &StationNetwork,
    dates: &[NaiveDate],
) -> Result<(Grid, Grid), IoError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &["panel", "station_id", "date", "sigma_mean"])?;
    let day: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(j, d)| (*d, j)).collect();
    let mut row_of = vec![None; net.len()];
    for (r, &i) in observed_stations.iter().enumerate() {
        row_of[i] = Some(r);
    }
    let mut sy = Grid::filled(observed_stations.len(), dates.len(), f64::NAN);
    let mut sx = Grid::filled(net.len(), dates.len(), f64::NAN);
    for (row, rec) in records(&mut rdr, path)? {
        let i = net.index_of(&rec[1]).ok_or_else(|| IoError::UnknownStation {
            path: path.into(),
            row,
            station: rec[1].to_string(),
        })?;
        let date = parse_date(path, row, &rec[2])?;
        let j =
            *day.get(&date).ok_or_else(|| IoError::UnknownDate { path: path.into(), row, date: rec[2].to_string() })?;
        let v = parse_f64(path, row, &rec[3], "sigma_mean")?;
        match &rec[0] {
            "y" => {
                let r = row_of[i].ok_or_else(|| IoError::NotObserved {
                    path: path.into(),
                    row,
                    station: rec[1].to_string(),
                })?;
                sy.set(r, j, v);
            }
            "x" => sx.set(i, j, v),
            other => {
                return Err(IoError::Row { path: path.into(), row, message: format!("unknown panel '{other}'") });
            }
        }
    }
    Ok((sy, sx))
}

fn write_kde(path: &Path, bundle: &FigureBundle) -> Result<(), IoError> {
    let mut out = Out::create(path)?;
    out.line("value,observed,simulated,calibrated")?;
    for (k, v) in bundle.kde_simulated.grid.iter().enumerate() {
        let obs = bundle.kde_observed.as_ref().map(|d| d.density[k].to_string()).unwrap_or_default();
        out.line(&format!("{v},{obs},{},{}", bundle.kde_simulated.density[k], bundle.kde_calibrated.density[k]))?;
    }
    out.finish()
}

fn polyline(kde: &Kde, x0: f64, x1: f64, ymax: f64, w: f64, h: f64) -> String {
    kde.grid
        .iter()
        .zip(&kde.density)
        .map(|(x, y)| format!("{:.2},{:.2}", (x - x0) / (x1 - x0) * w, h - y / ymax * h))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Line rendering of the three densities.
pub fn kde_svg(bundle: &FigureBundle) -> String {
    let (w, h) = (640.0, 400.0);
    let grid = &bundle.kde_simulated.grid;
    let (x0, x1) = (grid[0], grid[grid.len() - 1]);
    let mut curves: Vec<(&Kde, &str)> = vec![(&bundle.kde_simulated, "#1f77b4"), (&bundle.kde_calibrated, "#d62728")];
    if let Some(k) = &bundle.kde_observed {
        curves.push((k, "#000000"));
    }
    let ymax = curves.iter().flat_map(|(k, _)| k.density.iter().copied()).fold(f64::MIN_POSITIVE, f64::max);
    let mut s =
        format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    for (k, colour) in curves {
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>",
            polyline(k, x0, x1, ymax, w, h)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write `kde.csv`, `stations.csv`, `sigma_boxplot.csv` (and `kde.svg`
/// with `svg`) into `dir`.
pub fn write_figures(
    dir: &Path,
    bundle: &FigureBundle,
    net: &StationNetwork,
    dates: &[NaiveDate],
    svg: bool,
) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Write { path: dir.into(), source })?;
    write_kde(&dir.join("kde.csv"), bundle)?;

    let mut out = Out::create(&dir.join("stations.csv"))?;
    out.line("station_id,observed,simulated,calibrated")?;
    for s in &bundle.stations {
        let obs = s.observed.map(|v| v.to_string()).unwrap_or_default();
        out.line(&format!("{},{obs},{},{}", net.ids()[s.station], s.simulated, s.calibrated))?;
    }
    out.finish()?;

    let mut out = Out::create(&dir.join("sigma_boxplot.csv"))?;
    out.line("panel,date,min,q1,median,q3,max")?;
    for (panel, boxes) in [("y", &bundle.sigma_box_y), ("x", &bundle.sigma_box_x)] {
        for (j, b) in boxes.iter().enumerate() {
            out.line(&format!("{panel},{},{},{},{},{},{}", format_date(dates[j]), b[0], b[1], b[2], b[3], b[4]))?;
        }
    }
    out.finish()?;

    if svg {
        let path = dir.join("kde.svg");
        std::fs::write(&path, kde_svg(bundle)).map_err(|source| IoError::Write { path, source })?;
    }
    Ok(())
}
