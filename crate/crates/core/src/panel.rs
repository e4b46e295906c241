use crate::grid::Grid;
use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanelError {
    #[error("observed panel has {got} rows but the network marks {expected} stations as observed")]
    ObservedRows { got: usize, expected: usize },
    #[error("observed rows belong to stations {got:?} but the network's observed stations are {expected:?}")]
    ObservedStations { got: Vec<usize>, expected: Vec<usize> },
    #[error("simulated panel has {got} rows but the network has {expected} stations")]
    SimulatedRows { got: usize, expected: usize },
    #[error("panels have {observed} and {simulated} days, date axis has {dates}")]
    Days { observed: usize, simulated: usize, dates: usize },
    #[error("simulated panel is missing station {station} day {day}")]
    SimulatedMissing { station: usize, day: usize },
    #[error("{panel} panel has invalid value {value} at station {station} day {day}")]
    Value { panel: &'static str, value: f64, station: usize, day: usize },
    #[error("panel has no days")]
    Empty,
}

/// Observed and simulated station-by-day panels on a common date axis.
///
/// Row `r` of `observed` belongs to network station `observed_stations[r]`;
/// row `i` of `simulated` belongs to network station `i`. Missing observed
/// cells hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    pub observed: Grid,
    pub simulated: Grid,
    pub dates: Vec<NaiveDate>,
    pub observed_stations: Vec<usize>,
}

impl PanelData {
    pub fn new(
        observed: Grid,
        simulated: Grid,
        dates: Vec<NaiveDate>,
        observed_stations: Vec<usize>,
    ) -> Result<Self, PanelError> {
        let t = dates.len();
        if t == 0 {
            return Err(PanelError::Empty);
        }
        if observed.cols() != t || simulated.cols() != t {
            return Err(PanelError::Days { observed: observed.cols(), simulated: simulated.cols(), dates: t });
        }
        if observed.rows() != observed_stations.len() {
            return Err(PanelError::ObservedRows { got: observed.rows(), expected: observed_stations.len() });
        }
        for i in 0..simulated.rows() {
            for j in 0..t {
                let v = simulated.get(i, j);
                if v.is_nan() {
                    return Err(PanelError::SimulatedMissing { station: i, day: j });
                }
                if !(v.is_finite() && v >= 0.0) {
                    return Err(PanelError::Value { panel: "simulated", value: v, station: i, day: j });
                }
            }
        }
        for r in 0..observed.rows() {
            for j in 0..t {
                let v = observed.get(r, j);
                if !v.is_nan() && !(v.is_finite() && v >= 0.0) {
                    return Err(PanelError::Value { panel: "observed", value: v, station: r, day: j });
                }
            }
        }
        Ok(Self { observed, simulated, dates, observed_stations })
    }

    /// Panels without a calendar; days are numbered from 2013-01-01.
    pub fn from_grids(observed: Grid, simulated: Grid, observed_stations: Vec<usize>) -> Result<Self, PanelError> {
        let start = NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date");
        let dates = (0..simulated.cols()).map(|j| start + chrono::Days::new(j as u64)).collect();
        Self::new(observed, simulated, dates, observed_stations)
    }

    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.rows()
    }

    pub fn n_stations(&self) -> usize {
        self.simulated.rows()
    }

    /// Check agreement with a network of `n_stations` whose observed stations
    /// are `observed_indices`.
    pub fn check_network(&self, n_stations: usize, observed_indices: &[usize]) -> Result<(), PanelError> {
        if self.simulated.rows() != n_stations {
            return Err(PanelError::SimulatedRows { got: self.simulated.rows(), expected: n_stations });
        }
        if self.observed_stations != observed_indices {
            return Err(PanelError::ObservedStations {
                got: self.observed_stations.clone(),
                expected: observed_indices.to_vec(),
            });
        }
        Ok(())
    }

    /// Fraction of missing cells per observed station.
    pub fn missing_fractions(&self) -> Vec<f64> {
        let t = self.days() as f64;
        (0..self.observed.rows())
            .map(|r| self.observed.row(r).iter().filter(|v| v.is_nan()).count() as f64 / t)
            .collect()
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.observed.rows() * self.days();
        if total == 0 {
            return 0.0;
        }
        self.observed.count_missing() as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let obs = Grid::from_rows(&[vec![1.0, f64::NAN, 2.0]]);
        let sim = Grid::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5]]);
        let p = PanelData::from_grids(obs.clone(), sim.clone(), vec![1]).unwrap();
        assert_eq!(p.missing_fractions(), vec![1.0 / 3.0]);
        assert!(p.check_network(2, &[1]).is_ok());
        assert!(p.check_network(3, &[1]).is_err());

        let mut bad = sim.clone();
        bad.set(1, 1, f64::NAN);
        assert!(matches!(
            PanelData::from_grids(obs.clone(), bad, vec![1]),
            Err(PanelError::SimulatedMissing { station: 1, day: 1 })
        ));
        let neg = Grid::from_rows(&[vec![1.0, -1.0, 2.0]]);
        assert!(PanelData::from_grids(neg, sim, vec![1]).is_err());
    }
}
