//! Discrete operators on the coordinate vector `(u0, u_1, …, u_N)`.
//!
//! * transport: conservative finite-volume drift/diffusion with the boundary
//!   compartment coupled to cell 1 through a half-cell gradient, no flux at
//!   `x = m`. Mortality is kept separate.
//! * mortality: `diag(-μ(0), -μ(x_1), …, -μ(x_N))`.
//! * recruitment `K(v)`: the frozen-environment birth operator, so that
//!   `Ψ_v = transport + mortality + K(v)` and `F(u) = K(u)·u`.
//! * the Gâteaux derivative of `F` at zero and the Fréchet derivative `F'`
//!   at a positive equilibrium.

use std::io::Write;

use thiserror::Error;

use crate::grid::{self, Grid, GridError, PopulationState};
use crate::linalg::{DenseMatrix, Tridiagonal};
use crate::model::{sample_ingredients, ModelError, SampledIngredients, ValidatedModel};
use crate::par;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("environment has zero norm")]
    ZeroNorm,
    #[error("direction must be nonnegative and nonzero")]
    BadDirection,
    #[error("diffusion not positive at interface x={x} (d = {d})")]
    NonPositiveDiffusion { x: f64, d: f64 },
    #[error("sampled ingredients do not match the grid")]
    SampleMismatch,
    #[error("matrix dump: {0}")]
    Io(String),
}

/// Tolerance of the weighted column-sum test for the conservative flag.
pub const CONSERVATION_RTOL: f64 = 1e-12;

/// A square generator on the coordinate vector together with the pairing
/// weights `(1, h, …, h)` and its structural flags.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    matrix: DenseMatrix,
    weights: Vec<f64>,
    metzler: bool,
    conservative: bool,
}

impl GeneratorMatrix {
    pub fn new(matrix: DenseMatrix, weights: Vec<f64>) -> Self {
        assert_eq!(matrix.dim(), weights.len());
        let metzler = is_metzler(&matrix);
        let conservative = weighted_column_sums(&matrix, &weights)
            .iter()
            .zip(weighted_column_abs_sums(&matrix, &weights))
            .all(|(s, a)| s.abs() <= CONSERVATION_RTOL * a);
        GeneratorMatrix {
            matrix,
            weights,
            metzler,
            conservative,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn is_metzler(&self) -> bool {
        self.metzler
    }

    pub fn is_conservative(&self) -> bool {
        self.conservative
    }

    pub fn apply(&self, s: &PopulationState) -> PopulationState {
        PopulationState::from_coords(self.matrix.matvec(s.coords()))
    }

    pub fn column_sums(&self) -> Vec<f64> {
        weighted_column_sums(&self.matrix, &self.weights)
    }

    /// `self + other`, same weights.
    pub fn plus(&self, other: &GeneratorMatrix) -> GeneratorMatrix {
        GeneratorMatrix::new(self.matrix.add_scaled(1.0, &other.matrix), self.weights.clone())
    }

    pub fn minus(&self, other: &GeneratorMatrix) -> GeneratorMatrix {
        GeneratorMatrix::new(self.matrix.add_scaled(-1.0, &other.matrix), self.weights.clone())
    }

    /// Debug dump: row-major CSV, rows and columns labeled `boundary`, then
    /// the cell centers.
    pub fn write_csv<W: Write>(&self, grid: &Grid, out: W) -> Result<(), OpsError> {
        let mut w = csv::Writer::from_writer(out);
        let labels: Vec<String> = std::iter::once("boundary".to_string())
            .chain((1..=grid.cells()).map(|i| grid.center(i).to_string()))
            .collect();
        let io = |e: csv::Error| OpsError::Io(e.to_string());
        let mut header = vec![String::new()];
        header.extend(labels.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for (i, label) in labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.matrix.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| OpsError::Io(e.to_string()))
    }
}

pub fn is_metzler(m: &DenseMatrix) -> bool {
    let n = m.dim();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] >= 0.0))
}

/// `Σ_i w_i·L_ij` for every column `j`.
pub fn weighted_column_sums(m: &DenseMatrix, w: &[f64]) -> Vec<f64> {
    let n = m.dim();
    (0..n).map(|j| (0..n).map(|i| w[i] * m[(i, j)]).sum()).collect()
}

pub fn weighted_column_abs_sums(m: &DenseMatrix, w: &[f64]) -> Vec<f64> {
    let n = m.dim();
    (0..n).map(|j| (0..n).map(|i| w[i] * m[(i, j)].abs()).sum()).collect()
}

fn check_samples(si: &SampledIngredients, g: &Grid) -> Result<(), OpsError> {
    if si.grid != *g || si.mu_centers.len() != g.cells() {
        return Err(OpsError::SampleMismatch);
    }
    Ok(())
}

/// Transport (drift + diffusion + boundary coupling) as a tridiagonal matrix.
pub fn transport_bands(si: &SampledIngredients, g: &Grid) -> Result<Tridiagonal, OpsError> {
    check_samples(si, g)?;
    let n = g.cells();
    let h = g.h();
    let mut t = Tridiagonal::zeros(n + 1);
    // interface k joins node k and node k+1; interface N (x = m) carries no flux
    for k in 0..n {
        let (gamma, d) = (si.gamma_interfaces[k], si.d_interfaces[k]);
        if !(d > 0.0) {
            return Err(OpsError::NonPositiveDiffusion {
                x: g.interface(k),
                d,
            });
        }
        let dist = if k == 0 { 0.5 * h } else { h };
        // J = ca·u_k + cb·u_{k+1}
        let ca = gamma.max(0.0) + d / dist;
        let cb = gamma.min(0.0) - d / dist;
        let (wa, wb) = (g.weight(k), g.weight(k + 1));
        t.diag[k] -= ca / wa;
        t.upper[k] -= cb / wa;
        t.lower[k] += ca / wb;
        t.diag[k + 1] += cb / wb;
    }
    Ok(t)
}

pub fn mortality_diagonal(si: &SampledIngredients) -> Vec<f64> {
    std::iter::once(-si.mu_boundary)
        .chain(si.mu_centers.iter().map(|m| -m))
        .collect()
}

pub fn assemble_transport(si: &SampledIngredients, g: &Grid) -> Result<GeneratorMatrix, OpsError> {
    Ok(GeneratorMatrix::new(transport_bands(si, g)?.to_dense(), g.weights()))
}

pub fn assemble_mortality(si: &SampledIngredients, g: &Grid) -> Result<GeneratorMatrix, OpsError> {
    check_samples(si, g)?;
    let diag = mortality_diagonal(si);
    let mut m = DenseMatrix::zeros(g.dim());
    for (i, v) in diag.into_iter().enumerate() {
        m[(i, i)] = v;
    }
    Ok(GeneratorMatrix::new(m, g.weights()))
}

/// Shape-only part of the recruitment operator for environment `v`:
/// `kernel[i][j] = β₁(x_i, y_j)·β₂(T_j(v)/‖v‖)·h` (row 0 uses `β₁(0, y_j)`),
/// and the boundary fertility factor `b₂(T_0(v)/‖v‖)`. Both are invariant
/// under `v → α·v`, so `K(α·v) = β₀(α‖v‖)·kernel + b₀(α‖v‖)·b₂·e₀e₀ᵀ`.
#[derive(Debug, Clone)]
pub struct RecruitmentShape {
    pub kernel: DenseMatrix,
    pub boundary_b2: f64,
    pub norm: f64,
}

impl RecruitmentShape {
    pub fn new(si: &SampledIngredients, g: &Grid, v: &PopulationState) -> Result<Self, OpsError> {
        check_samples(si, g)?;
        let norm = grid::total_norm(v, g)?;
        if norm == 0.0 {
            return Err(OpsError::ZeroNorm);
        }
        let h = g.h();
        let n = g.cells();
        let t = grid::tails(h, v.coords());
        let b2cols = (1..=n)
            .map(|j| si.beta2.eval(t[j] / norm))
            .collect::<Result<Vec<_>, _>>()?;
        let mut kernel = DenseMatrix::zeros(n + 1);
        par::for_each_row(kernel.as_mut_slice(), n + 1, |i, row| {
            for j in 1..=n {
                let b1 = if i == 0 {
                    si.beta1_boundary[j - 1]
                } else {
                    si.beta1_at(i - 1, j - 1)
                };
                row[j] = b1 * b2cols[j - 1] * h;
            }
        });
        Ok(RecruitmentShape {
            kernel,
            boundary_b2: si.b2.eval(t[0] / norm)?,
            norm,
        })
    }

    /// `K` with given values of `β₀` and `b₀`.
    pub fn with_coefficients(&self, beta0: f64, b0: f64) -> DenseMatrix {
        let mut k = self.kernel.scale(beta0);
        k[(0, 0)] = b0 * self.boundary_b2;
        k
    }

    /// `K(α·v)`.
    pub fn at_scale(&self, si: &SampledIngredients, alpha: f64) -> Result<DenseMatrix, OpsError> {
        let r = alpha * self.norm;
        Ok(self.with_coefficients(si.beta0.eval(r)?, si.b0.eval(r)?))
    }
}

/// The fixed-environment recruitment operator `K(v)` (so `F(v) = K(v)·v`).
pub fn assemble_recruitment(
    si: &SampledIngredients,
    g: &Grid,
    v: &PopulationState,
) -> Result<GeneratorMatrix, OpsError> {
    let shape = RecruitmentShape::new(si, g, v)?;
    Ok(GeneratorMatrix::new(shape.at_scale(si, 1.0)?, g.weights()))
}

/// The nonlinearity: `F(0) = 0`, otherwise `F(u) = K(u)·u`.
pub fn apply_f(si: &SampledIngredients, g: &Grid, s: &PopulationState) -> Result<PopulationState, OpsError> {
    check_samples(si, g)?;
    grid::total_norm(s, g)?;
    if s.is_zero() {
        return Ok(PopulationState::zeros(g));
    }
    Ok(assemble_recruitment(si, g, s)?.apply(s))
}

/// Directional derivative of `F` at zero along a nonnegative `v`: the
/// recruitment operator with `β₀(0)`, `b₀(0)`, applied to `v`.
pub fn gateaux_at_zero(
    si: &SampledIngredients,
    g: &Grid,
    v: &PopulationState,
) -> Result<PopulationState, OpsError> {
    check_samples(si, g)?;
    if v.is_zero() || !v.is_nonnegative() {
        return Err(OpsError::BadDirection);
    }
    let shape = RecruitmentShape::new(si, g, v)?;
    let k = shape.with_coefficients(si.beta0.eval(0.0)?, si.b0.eval(0.0)?);
    Ok(PopulationState::from_coords(k.matvec(v.coords())))
}

/// Fréchet derivative `F'` of the nonlinearity at a nonzero state `u*`.
///
/// Realizes the four parts: the frozen kernel plus the `β₀'` rank-one term,
/// the `β₂'` tail terms, the `b`-block and the `b₂'` term on the boundary
/// row. Derivatives of the scalar ingredients are central differences.
pub fn assemble_linearization(
    si: &SampledIngredients,
    g: &Grid,
    ustar: &PopulationState,
) -> Result<GeneratorMatrix, OpsError> {
    check_samples(si, g)?;
    let n_norm = grid::total_norm(ustar, g)?;
    if n_norm == 0.0 {
        return Err(OpsError::ZeroNorm);
    }
    let n = g.cells();
    let h = g.h();
    let u = ustar.coords();
    let t = grid::tails(h, u);
    let a: Vec<f64> = t.iter().map(|tj| tj / n_norm).collect();
    // d‖u‖ along e_c
    let dnorm: Vec<f64> = (0..=n)
        .map(|c| g.weight(c) * if u[c] < 0.0 { -1.0 } else { 1.0 })
        .collect();

    let beta0 = si.beta0.eval(n_norm)?;
    let dbeta0 = si.beta0.derivative(n_norm)?;
    let b0 = si.b0.eval(n_norm)?;
    let db0 = si.b0.derivative(n_norm)?;
    let b2_0 = si.b2.eval(a[0])?;
    let db2_0 = si.b2.derivative(a[0])?;
    let beta2 = (1..=n).map(|j| si.beta2.eval(a[j])).collect::<Result<Vec<_>, _>>()?;
    let dbeta2 = (1..=n)
        .map(|j| si.beta2.derivative(a[j]))
        .collect::<Result<Vec<_>, _>>()?;

    let kernel = |i: usize, j: usize| {
        if i == 0 {
            si.beta1_boundary[j - 1]
        } else {
            si.beta1_at(i - 1, j - 1)
        }
    };

    let mut out = DenseMatrix::zeros(n + 1);
    par::for_each_row(out.as_mut_slice(), n + 1, |i, row| {
        // frozen kernel β₀·β₁·β₂·h on bulk columns
        let mut p = 0.0;
        let mut r = 0.0;
        // g_j = β₁·h·β₀·β₂'(a_j)·u_j, with prefix sums for Σ_{j<c} g_j
        let mut prefix = 0.0;
        let mut gvals = vec![0.0; n + 1];
        for j in 1..=n {
            let b1h = kernel(i, j) * h;
            row[j] = beta0 * b1h * beta2[j - 1];
            p += b1h * beta2[j - 1] * u[j];
            let gj = b1h * beta0 * dbeta2[j - 1] * u[j];
            gvals[j] = gj;
            r += gj * t[j];
        }
        p *= dbeta0;
        if i == 0 {
            row[0] = b0 * b2_0;
            p += db0 * b2_0 * u[0];
        }
        // β₂' terms: Σ_j g_j·(T_j(e_c)/‖u‖ − T_j(u)·d‖u‖_c/‖u‖²)
        for c in 0..=n {
            let tail_dot = if c == 0 {
                0.0
            } else {
                let s = h * prefix + 0.5 * h * gvals[c];
                prefix += gvals[c];
                s
            };
            row[c] += p * dnorm[c] + tail_dot / n_norm - r * dnorm[c] / (n_norm * n_norm);
        }
        if i == 0 {
            // b₂' term with T_0(e_c) = h for bulk columns
            let q = b0 * db2_0 * u[0];
            for c in 0..=n {
                let t0_ec = if c == 0 { 0.0 } else { h };
                row[c] += q * (t0_ec / n_norm - t[0] * dnorm[c] / (n_norm * n_norm));
            }
        }
    });
    Ok(GeneratorMatrix::new(out, g.weights()))
}

/// Everything needed to evaluate the discrete model on one grid.
#[derive(Debug, Clone)]
pub struct Discretization {
    grid: Grid,
    samples: SampledIngredients,
    transport: Tridiagonal,
    /// transport + mortality
    linear: Tridiagonal,
}

impl Discretization {
    pub fn new(vm: &ValidatedModel, grid: &Grid) -> Result<Self, OpsError> {
        let samples = sample_ingredients(vm, grid)?;
        Self::from_samples(samples)
    }

    pub fn from_samples(samples: SampledIngredients) -> Result<Self, OpsError> {
        let grid = samples.grid.clone();
        let transport = transport_bands(&samples, &grid)?;
        let mut linear = transport.clone();
        for (d, m) in linear.diag.iter_mut().zip(mortality_diagonal(&samples)) {
            *d += m;
        }
        Ok(Discretization {
            grid,
            samples,
            transport,
            linear,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn samples(&self) -> &SampledIngredients {
        &self.samples
    }

    pub fn transport_bands(&self) -> &Tridiagonal {
        &self.transport
    }

    /// Transport plus mortality, tridiagonal.
    pub fn linear_bands(&self) -> &Tridiagonal {
        &self.linear
    }

    pub fn linear_generator(&self) -> GeneratorMatrix {
        GeneratorMatrix::new(self.linear.to_dense(), self.grid.weights())
    }

    /// `Ψ_v = transport + mortality + K(v)`.
    pub fn psi(&self, v: &PopulationState) -> Result<GeneratorMatrix, OpsError> {
        let k = assemble_recruitment(&self.samples, &self.grid, v)?;
        Ok(GeneratorMatrix::new(
            self.linear.to_dense().add_scaled(1.0, k.matrix()),
            self.grid.weights(),
        ))
    }

    pub fn apply_f(&self, s: &PopulationState) -> Result<PopulationState, OpsError> {
        apply_f(&self.samples, &self.grid, s)
    }

    pub fn linearization(&self, ustar: &PopulationState) -> Result<GeneratorMatrix, OpsError> {
        assemble_linearization(&self.samples, &self.grid, ustar)
    }

    /// `(transport + mortality)·s + F(s)`.
    pub fn vector_field(&self, s: &PopulationState) -> Result<PopulationState, OpsError> {
        let f = self.apply_f(s)?;
        let lin = self.linear.matvec(s.coords());
        Ok(PopulationState::from_coords(
            lin.iter().zip(f.coords()).map(|(a, b)| a + b).collect(),
        ))
    }
}
