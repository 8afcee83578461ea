//! Channels and the transmission block of the scattering matrix.
//!
//! In the eigenbasis of the target the transmission block reads
//!
//! ```text
//! S_T(E) = sqrt(v) * i g / ((1 - g) (E - E_n) - a Q + i g v) * sqrt(v)
//! ```
//!
//! with `g = (J0 / J)^2` the lead coupling, `a` the probe-target interaction
//! strength and `v_n = 2 J sin k_n` the lead velocity in channel `n`. The
//! linear system is restricted to open channels (`|E - E_n| < 2J`); closed
//! channels are dropped from the system altogether, which is exact when every
//! channel is open and a modelling choice otherwise.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterParams {
    /// Lead hopping `J`.
    pub hopping: f64,
    /// `(J0 / J)^2`.
    pub coupling: f64,
    /// Probe-target interaction strength.
    pub alpha: f64,
}

impl ScatterParams {
    pub fn new(hopping: f64, coupling: f64, alpha: f64) -> Result<Self> {
        if !(hopping > 0.0 && hopping.is_finite()) {
            return Err(Error::InvalidParameter(format!("lead hopping J must be positive, got {hopping}")));
        }
        if !(coupling > 0.0 && coupling <= 1.0) {
            return Err(Error::InvalidParameter(format!("coupling gamma must lie in (0, 1], got {coupling}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be non-negative, got {alpha}")));
        }
        Ok(Self { hopping, coupling, alpha })
    }

    /// Hopping `J0` between the central site and the leads.
    pub fn center_hopping(&self) -> f64 {
        self.hopping * self.coupling.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    /// Index of the target level.
    pub index: usize,
    pub level: f64,
    /// Probe kinetic energy `E - E_n`.
    pub kinetic: f64,
    /// `arccos(-kinetic / 2J)`, only for open channels.
    pub momentum: Option<f64>,
    /// `2J sin k`, zero for closed channels.
    pub velocity: f64,
}

impl Channel {
    pub fn is_open(&self) -> bool {
        self.momentum.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub energy: f64,
    pub channels: Vec<Channel>,
}

impl ChannelSet {
    pub fn open(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.is_open())
    }

    pub fn open_count(&self) -> usize {
        self.open().count()
    }

    pub fn get(&self, index: usize) -> Option<&Channel> {
        self.channels.get(index)
    }
}

/// Classify every target level at total energy `energy`.
pub fn channels(levels: &[f64], energy: f64, params: &ScatterParams) -> ChannelSet {
    let band = 2.0 * params.hopping;
    let channels = levels
        .iter()
        .enumerate()
        .map(|(index, &level)| {
            let kinetic = energy - level;
            // (2J - e)(2J + e) keeps accuracy near the band edges
            let v2 = (band - kinetic) * (band + kinetic);
            if kinetic.abs() < band && v2 > 0.0 {
                Channel { index, level, kinetic, momentum: Some((-kinetic / band).acos()), velocity: v2.sqrt() }
            } else {
                Channel { index, level, kinetic, momentum: None, velocity: 0.0 }
            }
        })
        .collect();
    ChannelSet { energy, channels }
}

/// Transmission amplitudes `[S_T]_nm` for all open `n` (rows) and a subset of
/// open incoming channels `m` (columns).
#[derive(Debug, Clone)]
pub struct SMatrixBlock {
    pub energy: f64,
    rows: Vec<usize>,
    cols: Vec<usize>,
    amplitudes: Mat<Complex64>,
}

impl SMatrixBlock {
    /// Open outgoing channel indices, ascending.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Incoming channel indices held by this block.
    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn amplitudes(&self) -> &Mat<Complex64> {
        &self.amplitudes
    }

    fn row_pos(&self, n: usize) -> Result<usize> {
        self.rows.binary_search(&n).map_err(|_| Error::ClosedChannel { index: n })
    }

    fn col_pos(&self, m: usize) -> Result<usize> {
        self.cols.iter().position(|&c| c == m).ok_or(Error::ClosedChannel { index: m })
    }

    pub fn amplitude(&self, n: usize, m: usize) -> Result<Complex64> {
        Ok(self.amplitudes[(self.row_pos(n)?, self.col_pos(m)?)])
    }

    /// `T_m = sum_n |S_nm|^2`.
    pub fn transmission(&self, m: usize) -> Result<f64> {
        let c = self.col_pos(m)?;
        Ok((0..self.rows.len()).map(|r| self.amplitudes[(r, c)].norm_sqr()).sum())
    }

    /// `sigma_nm = |S_nm|^2`.
    pub fn partial_cross_section(&self, n: usize, m: usize) -> Result<f64> {
        Ok(self.amplitude(n, m)?.norm_sqr())
    }

    /// `rho_in^m = 2 sum_{n != m} |S_nm|^2`.
    pub fn total_inelastic(&self, m: usize) -> Result<f64> {
        let c = self.col_pos(m)?;
        let off: f64 = self
            .rows
            .iter()
            .enumerate()
            .filter(|&(_, &n)| n != m)
            .map(|(r, _)| self.amplitudes[(r, c)].norm_sqr())
            .sum();
        Ok(2.0 * off)
    }
}

/// Full transmission block over all open channels.
pub fn s_transmission(q: &Mat<f64>, channels: &ChannelSet, params: &ScatterParams) -> Result<SMatrixBlock> {
    let open: Vec<usize> = channels.open().map(|c| c.index).collect();
    s_columns(q, channels, params, &open)
}

/// Columns `incoming` of the transmission block. Closed incoming channels are
/// skipped; the returned block lists the ones actually computed.
pub fn s_columns(q: &Mat<f64>, channels: &ChannelSet, params: &ScatterParams, incoming: &[usize]) -> Result<SMatrixBlock> {
    let dim = channels.channels.len();
    if q.nrows() != dim || q.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: q.nrows() });
    }
    let open: Vec<&Channel> = channels.open().collect();
    if open.is_empty() {
        return Err(Error::NoOpenChannels { energy: channels.energy });
    }
    let rows: Vec<usize> = open.iter().map(|c| c.index).collect();
    let mut cols = Vec::with_capacity(incoming.len());
    let mut col_pos = Vec::with_capacity(incoming.len());
    for &m in incoming {
        if let Ok(p) = rows.binary_search(&m) {
            if !cols.contains(&m) {
                cols.push(m);
                col_pos.push(p);
            }
        }
    }

    let g = params.coupling;
    let n = open.len();
    let m = Mat::<Complex64>::from_fn(n, n, |a, b| {
        let mut z = Complex64::new(-params.alpha * q[(rows[a], rows[b])], 0.0);
        if a == b {
            z += Complex64::new((1.0 - g) * open[a].kinetic, g * open[a].velocity);
        }
        z
    });
    let mut rhs = Mat::<Complex64>::zeros(n, cols.len());
    for (j, &p) in col_pos.iter().enumerate() {
        rhs[(p, j)] = Complex64::new(1.0, 0.0);
    }
    let x = m.partial_piv_lu().solve(&rhs);

    let sqrt_v: Vec<f64> = open.iter().map(|c| c.velocity.sqrt()).collect();
    let ig = Complex64::new(0.0, g);
    let mut amplitudes = Mat::<Complex64>::zeros(n, cols.len());
    for (j, &p) in col_pos.iter().enumerate() {
        for a in 0..n {
            let s = ig * x[(a, j)] * (sqrt_v[a] * sqrt_v[p]);
            if !(s.re.is_finite() && s.im.is_finite()) {
                return Err(Error::SingularSystem { energy: channels.energy });
            }
            amplitudes[(a, j)] = s;
        }
    }
    Ok(SMatrixBlock { energy: channels.energy, rows, cols, amplitudes })
}

/// Which observables an energy scan records at each grid point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanRequest {
    /// Incoming channels whose `T_m` and `rho_in^m` are recorded.
    pub incoming: Vec<usize>,
    /// `(n, m)` pairs whose `sigma_nm` is recorded.
    pub pairs: Vec<(usize, usize)>,
}

impl ScanRequest {
    fn columns(&self) -> Vec<usize> {
        let mut cols = self.incoming.clone();
        for &(_, m) in &self.pairs {
            if !cols.contains(&m) {
                cols.push(m);
            }
        }
        cols
    }
}

/// Observables at one energy. Closed incoming channels carry no flux and
/// record zero transmission and cross sections.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub energy: f64,
    pub open_channels: usize,
    pub transmission: Vec<f64>,
    pub inelastic: Vec<f64>,
    pub cross_sections: Vec<f64>,
}

impl ScanPoint {
    pub fn mean_transmission(&self) -> f64 {
        mean(&self.transmission)
    }

    pub fn mean_inelastic(&self) -> f64 {
        mean(&self.inelastic)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn scan_point(levels: &[f64], q: &Mat<f64>, params: &ScatterParams, energy: f64, request: &ScanRequest) -> Result<ScanPoint> {
    let set = channels(levels, energy, params);
    let block = s_columns(q, &set, params, &request.columns())?;
    let or_zero = |r: Result<f64>| match r {
        Err(Error::ClosedChannel { .. }) => Ok(0.0),
        other => other,
    };
    let transmission = request.incoming.iter().map(|&m| or_zero(block.transmission(m))).collect::<Result<Vec<_>>>()?;
    let inelastic = request.incoming.iter().map(|&m| or_zero(block.total_inelastic(m))).collect::<Result<Vec<_>>>()?;
    let cross_sections = request
        .pairs
        .iter()
        .map(|&(n, m)| or_zero(block.partial_cross_section(n, m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanPoint { energy, open_channels: block.rows().len(), transmission, inelastic, cross_sections })
}

/// Evaluate [`scan_point`] on every grid energy. Points are independent; a
/// failure at one energy is returned in its slot and does not stop the scan.
pub fn energy_scan(
    levels: &[f64],
    q: &Mat<f64>,
    params: &ScatterParams,
    grid: &[f64],
    request: &ScanRequest,
) -> Vec<Result<ScanPoint>> {
    let eval = |&e: &f64| scan_point(levels, q, params, e, request);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.par_iter().map(eval).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        grid.iter().map(eval).collect()
    }
}

/// `points` energies `start, start + step, ...`.
pub fn uniform_grid(start: f64, step: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| start + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn params(j: f64, g: f64, a: f64) -> ScatterParams {
        ScatterParams::new(j, g, a).unwrap()
    }

    #[test]
    fn validates_parameters() {
        assert!(ScatterParams::new(1.0, 0.0, 1.0).is_err());
        assert!(ScatterParams::new(1.0, 1.5, 1.0).is_err());
        assert!(ScatterParams::new(0.0, 0.5, 1.0).is_err());
        assert!(ScatterParams::new(1.0, 0.5, -1.0).is_err());
        assert_abs_diff_eq!(params(4.0, 0.25, 0.0).center_hopping(), 2.0);
    }

    #[test]
    fn band_center_and_edges() {
        let p = params(3.0, 0.1, 1.0);
        let set = channels(&[1.0, -5.0, 7.0, 8.0], 1.0, &p);
        let c = set.get(0).unwrap();
        assert_abs_diff_eq!(c.momentum.unwrap(), FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.velocity, 6.0, epsilon = 1e-14);
        // kinetic = +6 and -6: exactly on the band edges
        assert!(!set.get(1).unwrap().is_open());
        assert!(!set.get(2).unwrap().is_open());
        assert_eq!(set.get(2).unwrap().velocity, 0.0);
        assert!(!set.get(3).unwrap().is_open());
        assert_eq!(set.open_count(), 1);
    }

    #[test]
    fn dispersion_roundtrip() {
        let p = params(2.5, 0.3, 0.0);
        let levels: Vec<f64> = (0..50).map(|i| -4.9 + 0.2 * i as f64).collect();
        for c in channels(&levels, 0.0, &p).open() {
            let k = c.momentum.unwrap();
            assert!(c.velocity > 0.0);
            assert_abs_diff_eq!(-5.0 * k.cos(), c.kinetic, epsilon = 1e-12 * 5.0);
            assert_abs_diff_eq!(5.0 * k.sin(), c.velocity, epsilon = 1e-12 * 5.0);
        }
    }

    fn toy_q(dim: usize) -> Mat<f64> {
        Mat::from_fn(dim, dim, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()) + if i == j { 0.3 * i as f64 } else { 0.0 })
    }

    #[test]
    fn elastic_limit_is_diagonal() {
        let p = params(2.0, 0.2, 0.0);
        let levels = [-0.7, 0.1, 0.9];
        let set = channels(&levels, 0.3, &p);
        let s = s_transmission(&toy_q(3), &set, &p).unwrap();
        for c in set.open() {
            let expected = Complex64::new(0.0, 0.2 * c.velocity) / Complex64::new(0.8 * c.kinetic, 0.2 * c.velocity);
            let got = s.amplitude(c.index, c.index).unwrap();
            assert_abs_diff_eq!(got.re, expected.re, epsilon = 1e-14);
            assert_abs_diff_eq!(got.im, expected.im, epsilon = 1e-14);
            assert_eq!(s.total_inelastic(c.index).unwrap(), 0.0);
            for o in set.open().filter(|o| o.index != c.index) {
                assert_eq!(s.partial_cross_section(o.index, c.index).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn perfect_transmission_without_barrier() {
        let p = params(2.0, 1.0, 0.0);
        let set = channels(&[-1.0, 0.0, 0.5, 1.5], 0.2, &p);
        let s = s_transmission(&toy_q(4), &set, &p).unwrap();
        for m in 0..4 {
            assert_abs_diff_eq!(s.transmission(m).unwrap(), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(s.amplitude(m, m).unwrap().re, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn strong_interaction_reflects() {
        let p = params(2.0, 0.5, 1e6);
        let set = channels(&[-1.0, 0.0, 0.5, 1.5], 0.2, &p);
        let s = s_transmission(&toy_q(4), &set, &p).unwrap();
        for m in 0..4 {
            assert!(s.transmission(m).unwrap() < 1e-6);
            assert!(s.total_inelastic(m).unwrap() < 1e-6);
        }
    }

    #[test]
    fn closed_channels_are_reported() {
        let p = params(1.0, 0.5, 0.3);
        let set = channels(&[0.0, 10.0], 0.5, &p);
        let s = s_transmission(&toy_q(2), &set, &p).unwrap();
        assert_eq!(s.rows(), &[0]);
        assert!(matches!(s.transmission(1), Err(Error::ClosedChannel { index: 1 })));
        assert!(matches!(s.partial_cross_section(1, 0), Err(Error::ClosedChannel { .. })));
        let none = channels(&[10.0, 20.0], 0.0, &p);
        assert!(matches!(s_transmission(&toy_q(2), &none, &p), Err(Error::NoOpenChannels { .. })));
    }

    #[test]
    fn scan_records_closed_as_zero_and_errors_per_point() {
        let p = params(1.0, 0.5, 0.3);
        let levels = [0.0, 3.0];
        let req = ScanRequest { incoming: vec![0, 1], pairs: vec![(0, 1)] };
        let out = energy_scan(&levels, &toy_q(2), &p, &[0.5, 10.0], &req);
        let first = out[0].as_ref().unwrap();
        assert_eq!(first.open_channels, 1);
        assert_eq!(first.transmission[1], 0.0);
        assert_eq!(first.cross_sections[0], 0.0);
        assert!(matches!(out[1], Err(Error::NoOpenChannels { energy }) if energy == 10.0));
    }

    #[test]
    fn grid_helper() {
        assert_eq!(uniform_grid(1.0, 0.5, 3), vec![1.0, 1.5, 2.0]);
    }
}
