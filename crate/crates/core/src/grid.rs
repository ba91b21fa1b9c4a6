//! Uniform cell partition of `[0, m]` and the discrete state space
//! `L¹(0,m) ⊕ ℝ`.
//!
//! A state is stored as one coordinate vector `(u0, u_1, …, u_N)`: index 0 is
//! the boundary compartment (a mass), indices `1..=N` are cell averages
//! (densities). The pairing weights are `w = (1, h, …, h)`.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs m > 0 and N >= 2 (got m = {m}, N = {n})")]
    InvalidGrid { m: f64, n: usize },
    #[error("state has {got} bulk cells, grid has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tail index {index} out of range 0..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("state CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    m: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(m: f64, n: usize) -> Result<Self, GridError> {
        if !(m > 0.0 && m.is_finite()) || n < 2 {
            return Err(GridError::InvalidGrid { m, n });
        }
        Ok(Grid { m, n, h: m / n as f64 })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Number of bulk cells.
    pub fn cells(&self) -> usize {
        self.n
    }

    /// Length of the coordinate vector, `N + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Cell center `x_i` for `i` in `1..=N`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 - 0.5) * self.h
    }

    /// Interface `ξ_i` for `i` in `0..=N`. The last one is exactly `m`.
    pub fn interface(&self, i: usize) -> f64 {
        if i == self.n {
            self.m
        } else {
            i as f64 * self.h
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.dim()];
        w[0] = 1.0;
        w
    }

    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.h
        }
    }
}

/// Boundary mass plus bulk cell averages.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    values: Vec<f64>,
}

impl PopulationState {
    /// Build from the full coordinate vector `(u0, u_1, …, u_N)`.
    pub fn from_coords(values: Vec<f64>) -> Self {
        PopulationState { values }
    }

    pub fn new(u0: f64, bulk: &[f64]) -> Self {
        let mut values = Vec::with_capacity(bulk.len() + 1);
        values.push(u0);
        values.extend_from_slice(bulk);
        PopulationState { values }
    }

    pub fn zeros(grid: &Grid) -> Self {
        PopulationState {
            values: vec![0.0; grid.dim()],
        }
    }

    /// Constant density `c` in the bulk and mass `c0` in the boundary compartment.
    pub fn uniform(grid: &Grid, c0: f64, c: f64) -> Self {
        let mut values = vec![c; grid.dim()];
        values[0] = c0;
        PopulationState { values }
    }

    pub fn u0(&self) -> f64 {
        self.values[0]
    }

    pub fn bulk(&self) -> &[f64] {
        &self.values[1..]
    }

    pub fn coords(&self) -> &[f64] {
        &self.values
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.values
    }

    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        PopulationState {
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        PopulationState {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    fn check(&self, grid: &Grid) -> Result<(), GridError> {
        if self.cells() != grid.cells() {
            return Err(GridError::LengthMismatch {
                expected: grid.cells(),
                got: self.cells(),
            });
        }
        Ok(())
    }
}

/// `|u0| + Σ h|u_i|` over a raw coordinate slice.
pub(crate) fn weighted_norm(h: f64, coords: &[f64]) -> f64 {
    coords[0].abs() + h * coords[1..].iter().map(|v| v.abs()).sum::<f64>()
}

/// Discrete `L¹ ⊕ ℝ` norm; equals the total population for nonnegative states.
pub fn total_norm(s: &PopulationState, g: &Grid) -> Result<f64, GridError> {
    s.check(g)?;
    Ok(weighted_norm(g.h(), s.coords()))
}

/// Midpoint tail integral from cell center `x_j`:
/// `T_j = (h/2)·u_j + Σ_{k>j} h·u_k` for `j ≥ 1`, and `T_0 = Σ_k h·u_k`.
pub fn tail_integral(s: &PopulationState, g: &Grid, j: usize) -> Result<f64, GridError> {
    s.check(g)?;
    if j > g.cells() {
        return Err(GridError::IndexOutOfRange {
            index: j,
            n: g.cells(),
        });
    }
    Ok(tails(g.h(), s.coords())[j])
}

/// All tails `T_0..=T_N` in one backward sweep.
pub(crate) fn tails(h: f64, coords: &[f64]) -> Vec<f64> {
    let n = coords.len() - 1;
    let mut out = vec![0.0; n + 1];
    let mut beyond = 0.0;
    for j in (1..=n).rev() {
        out[j] = 0.5 * h * coords[j] + beyond;
        beyond += h * coords[j];
    }
    out[0] = beyond;
    out
}

/// Write a state as `x,u` CSV: the `boundary` row first, then one row per cell.
pub fn write_state_csv<W: Write>(s: &PopulationState, g: &Grid, out: W) -> Result<(), GridError> {
    s.check(g)?;
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| GridError::Csv(e.to_string());
    w.write_record(["x", "u"]).map_err(err)?;
    w.write_record(["boundary".to_string(), s.u0().to_string()])
        .map_err(err)?;
    for (i, u) in s.bulk().iter().enumerate() {
        w.write_record([g.center(i + 1).to_string(), u.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| GridError::Csv(e.to_string()))
}

/// Read a state written by [`write_state_csv`]. The number of cells must match `g`.
pub fn read_state_csv<R: Read>(input: R, g: &Grid) -> Result<PopulationState, GridError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers().map_err(|e| GridError::Csv(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "u" {
        return Err(GridError::Csv("header must be `x,u`".into()));
    }
    let mut values = Vec::with_capacity(g.dim());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| GridError::Csv(e.to_string()))?;
        if row == 0 && &rec[0] != "boundary" {
            return Err(GridError::Csv("first data row must be labeled `boundary`".into()));
        }
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| GridError::Csv(format!("row {}: bad value `{}`", row + 2, &rec[1])))?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(GridError::Csv("no data rows".into()));
    }
    let s = PopulationState::from_coords(values);
    s.check(g)?;
    Ok(s)
}
