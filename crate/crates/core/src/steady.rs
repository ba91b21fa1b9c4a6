//! Constructive search for the non-trivial steady state.
//!
//! The steady states other than zero are the positive kernel vectors of
//! `Ψ_v` with `v` itself, so they live on the level set
//! `S = { v ≥ 0 : s(Ψ_v) = 0 }`. Along any nonnegative ray `α·w` the bound
//! `s(Ψ_{α·w})` is strictly decreasing in `α` when `β₀`, `b₀` are, which makes
//! the ray meet `S` in exactly one point ([`project_to_s`]). The map
//! [`phi_map`] sends `v ∈ S` to the Perron eigenvector of `Ψ_v` projected back
//! onto `S`, and [`solve_steady`] looks for a fixed point of it by damped
//! iteration.

use thiserror::Error;

use crate::grid::{self, PopulationState};
use crate::linalg::DenseMatrix;
use crate::ops::{Discretization, GeneratorMatrix, OpsError, RecruitmentShape};
use crate::par;
use crate::spectral::{self, SpectralError, SpectralOptions, SpectralResult};

/// Relative residual accepted for a converged steady state.
pub const RESIDUAL_RTOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootFinder {
    /// Plain bisection; the bracket halves every step.
    Bisection,
    /// Regula falsi with the Illinois modification, falling back to a
    /// bisection step whenever the secant point leaves the bracket.
    Illinois,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    /// Target `|s|` at the projected point.
    pub bisection_tol: f64,
    /// Relative distance between successive iterates.
    pub fp_tol: f64,
    pub damping: f64,
    pub max_fp_iter: usize,
    /// Number of doublings (or halvings) of `α` allowed while bracketing.
    pub bracket_expand_limit: usize,
    pub root_finder: RootFinder,
    pub spectral: SpectralOptions,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions {
            bisection_tol: 1e-9,
            fp_tol: 1e-9,
            damping: 0.5,
            max_fp_iter: 500,
            bracket_expand_limit: 60,
            root_finder: RootFinder::Illinois,
            spectral: SpectralOptions::default(),
        }
    }
}

impl SteadyOptions {
    pub fn check(&self) -> Result<(), SteadyError> {
        let bad = |what: &str| Err(SteadyError::Options(what.to_string()));
        if !(self.bisection_tol > 0.0) || !(self.fp_tol > 0.0) || !(self.spectral.tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        if self.max_fp_iter == 0 || self.bracket_expand_limit == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SteadyError {
    #[error("invalid steady options: {0}")]
    Options(String),
    #[error("direction must be nonnegative and nonzero")]
    BadDirection,
    #[error("trivial steady state only (s = {s} at alpha = {alpha})")]
    TrivialOnly { alpha: f64, s: f64 },
    #[error("could not bracket the level set (s = {s} at alpha = {alpha})")]
    BracketFailure { alpha: f64, s: f64 },
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyStatus {
    Converged,
    TrivialOnly,
    BracketFailure,
    MaxIter,
}

impl SteadyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SteadyStatus::Converged => "converged",
            SteadyStatus::TrivialOnly => "trivial_only",
            SteadyStatus::BracketFailure => "bracket_failure",
            SteadyStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    /// `‖v_{k+1} − v_k‖ / ‖v_{k+1}‖`.
    pub distance: f64,
    /// `s(Ψ_{v_{k+1}})`, recomputed at the projected iterate.
    pub s_check: f64,
}

#[derive(Debug, Clone)]
pub struct SteadyStateResult {
    pub ustar: PopulationState,
    pub norm: f64,
    pub residual: f64,
    pub iterates: Vec<IterateRecord>,
    pub status: SteadyStatus,
}

/// A point of `S` on the ray through a direction.
#[derive(Debug, Clone)]
pub struct Projection {
    pub alpha: f64,
    /// The projected state `α·w`.
    pub point: PopulationState,
    /// Spectral data of `Ψ_{α·w}`.
    pub spec: SpectralResult,
    /// Width `hi − lo` of the `α` bracket after each refinement step.
    pub bracket_widths: Vec<f64>,
    pub evaluations: usize,
}

/// `s(Ψ_{α·w})` along one ray. The recruitment shape is invariant under
/// scaling, so only `β₀(α)` and `b₀(α)` change between evaluations.
struct Ray<'a> {
    disc: &'a Discretization,
    linear: DenseMatrix,
    shape: RecruitmentShape,
    direction: PopulationState,
    warm: Option<Vec<f64>>,
    evaluations: usize,
    opts: SteadyOptions,
}

impl<'a> Ray<'a> {
    fn new(disc: &'a Discretization, w: &PopulationState, opts: &SteadyOptions) -> Result<Self, SteadyError> {
        if w.coords().len() != disc.grid().dim() || w.is_zero() || !w.is_nonnegative() {
            return Err(SteadyError::BadDirection);
        }
        let direction = w.clone();
        let shape = RecruitmentShape::new(disc.samples(), disc.grid(), &direction)?;
        Ok(Ray {
            disc,
            linear: disc.linear_bands().to_dense(),
            shape,
            direction,
            warm: None,
            evaluations: 0,
            opts: *opts,
        })
    }

    fn generator(&self, alpha: f64) -> Result<GeneratorMatrix, SteadyError> {
        let k = self.shape.at_scale(self.disc.samples(), alpha)?;
        Ok(GeneratorMatrix::new(self.linear.add_scaled(1.0, &k), self.disc.grid().weights()))
    }

    fn eval(&mut self, alpha: f64) -> Result<SpectralResult, SteadyError> {
        let g = self.generator(alpha)?;
        let max_iter = self.opts.spectral.max_iter.unwrap_or(100 * g.dim());
        let r = spectral::spectral_bound_from(&g, self.warm.as_deref(), self.opts.spectral.tol, max_iter)?;
        self.warm = Some(r.eigvec.coords().to_vec());
        self.evaluations += 1;
        Ok(r)
    }

    fn finish(self, alpha: f64, spec: SpectralResult, bracket_widths: Vec<f64>) -> Projection {
        Projection {
            alpha,
            point: self.direction.scaled(alpha),
            spec,
            bracket_widths,
            evaluations: self.evaluations,
        }
    }
}

/// Intersect the ray through `w` with `S`.
///
/// `α` scales `w` as given, so for a unit-norm direction it is the total
/// norm of the result, and a point already on `S` returns `α ≈ 1`.
pub fn project_to_s(
    disc: &Discretization,
    w: &PopulationState,
    opts: &SteadyOptions,
) -> Result<Projection, SteadyError> {
    opts.check()?;
    let tol = opts.bisection_tol;
    let mut ray = Ray::new(disc, w, opts)?;
    let mut alpha = 1.0;
    let mut spec = ray.eval(alpha)?;
    if spec.bound.abs() <= tol {
        return Ok(ray.finish(alpha, spec, Vec::new()));
    }
    // lo has s > 0, hi has s < 0
    let (mut lo, mut hi, mut s_lo, mut s_hi);
    if spec.bound > 0.0 {
        (lo, s_lo) = (alpha, spec.bound);
        let mut steps = 0;
        loop {
            if steps == opts.bracket_expand_limit {
                return Err(SteadyError::BracketFailure { alpha, s: spec.bound });
            }
            alpha *= 2.0;
            steps += 1;
            spec = ray.eval(alpha)?;
            if spec.bound.abs() <= tol {
                return Ok(ray.finish(alpha, spec, Vec::new()));
            }
            if spec.bound < 0.0 {
                break;
            }
            (lo, s_lo) = (alpha, spec.bound);
        }
        (hi, s_hi) = (alpha, spec.bound);
    } else {
        (hi, s_hi) = (alpha, spec.bound);
        let mut steps = 0;
        loop {
            if steps == opts.bracket_expand_limit {
                return Err(SteadyError::TrivialOnly { alpha, s: spec.bound });
            }
            alpha *= 0.5;
            steps += 1;
            spec = ray.eval(alpha)?;
            if spec.bound.abs() <= tol {
                return Ok(ray.finish(alpha, spec, Vec::new()));
            }
            if spec.bound > 0.0 {
                break;
            }
            (hi, s_hi) = (alpha, spec.bound);
        }
        (lo, s_lo) = (alpha, spec.bound);
    }

    let mut widths = vec![hi - lo];
    let mut best = (f64::INFINITY, alpha, spec.clone());
    let mut side = 0i8;
    loop {
        let mid = 0.5 * (lo + hi);
        let trial = match opts.root_finder {
            RootFinder::Bisection => mid,
            RootFinder::Illinois => {
                let x = (lo * s_hi - hi * s_lo) / (s_hi - s_lo);
                if x > lo && x < hi && x.is_finite() {
                    x
                } else {
                    mid
                }
            }
        };
        if !(trial > lo && trial < hi) {
            break;
        }
        let r = ray.eval(trial)?;
        if r.bound.abs() < best.0 {
            best = (r.bound.abs(), trial, r.clone());
        }
        if r.bound.abs() <= tol {
            return Ok(ray.finish(trial, r, widths));
        }
        if r.bound > 0.0 {
            (lo, s_lo) = (trial, r.bound);
            if side == 1 {
                s_hi *= 0.5;
            }
            side = 1;
        } else {
            (hi, s_hi) = (trial, r.bound);
            if side == -1 {
                s_lo *= 0.5;
            }
            side = -1;
        }
        widths.push(hi - lo);
    }
    // bracket exhausted at machine precision: return the closest point
    let (_, alpha, spec) = best;
    Ok(ray.finish(alpha, spec, widths))
}

/// `Φ(v)`: the Perron eigenvector of `Ψ_v`, projected onto `S`.
pub fn phi_map(
    disc: &Discretization,
    v: &PopulationState,
    opts: &SteadyOptions,
) -> Result<PopulationState, SteadyError> {
    Ok(phi_with_spec(disc, v, None, opts)?.0.point)
}

fn phi_with_spec(
    disc: &Discretization,
    v: &PopulationState,
    warm: Option<&[f64]>,
    opts: &SteadyOptions,
) -> Result<(Projection, SpectralResult), SteadyError> {
    let psi = disc.psi(v)?;
    let max_iter = opts.spectral.max_iter.unwrap_or(100 * psi.dim());
    let spec = spectral::spectral_bound_from(&psi, warm, opts.spectral.tol, max_iter)?;
    Ok((project_to_s(disc, &spec.eigvec, opts)?, spec))
}

/// Weighted norm of the steady-state residual `(A − M)s + F(s)`.
pub fn residual(disc: &Discretization, s: &PopulationState) -> Result<f64, OpsError> {
    let r = disc.vector_field(s)?;
    Ok(grid::total_norm(&r, disc.grid())?)
}

fn relative_distance(disc: &Discretization, a: &PopulationState, b: &PopulationState) -> Result<f64, OpsError> {
    let diff = a.combine(1.0, b, -1.0);
    Ok(grid::total_norm(&diff, disc.grid())? / grid::total_norm(a, disc.grid())?)
}

fn trivial(disc: &Discretization, status: SteadyStatus) -> SteadyStateResult {
    SteadyStateResult {
        ustar: PopulationState::zeros(disc.grid()),
        norm: 0.0,
        residual: 0.0,
        iterates: Vec::new(),
        status,
    }
}

/// Damped fixed-point iteration `v ← P_S((1−ω)v + ωΦ(v))` from the projection
/// of `initial` (default: the uniform state).
///
/// The reported state is `Φ` of the last iterate, the scaled Perron vector
/// itself: at a fixed point both agree, but the eigenvector satisfies the
/// steady-state equation far more accurately than the averaged iterate.
pub fn solve_steady(
    disc: &Discretization,
    initial: Option<&PopulationState>,
    opts: &SteadyOptions,
) -> Result<SteadyStateResult, SteadyError> {
    opts.check()?;
    let g = disc.grid();
    let start = match initial {
        Some(s) => s.clone(),
        None => PopulationState::uniform(g, 1.0, 1.0),
    };
    let first = match project_to_s(disc, &start, opts) {
        Ok(p) => p,
        Err(SteadyError::TrivialOnly { .. }) => return Ok(trivial(disc, SteadyStatus::TrivialOnly)),
        Err(SteadyError::BracketFailure { .. }) => return Ok(trivial(disc, SteadyStatus::BracketFailure)),
        Err(e) => return Err(e),
    };
    let mut v = first.point;
    let mut warm = Some(first.spec.eigvec.coords().to_vec());
    let mut iterates = Vec::new();
    let mut last_phi = None;
    let omega = opts.damping;
    for k in 1..=opts.max_fp_iter {
        let (phi, spec) = phi_with_spec(disc, &v, warm.as_deref(), opts)?;
        warm = Some(spec.eigvec.coords().to_vec());
        let mixed = v.combine(1.0 - omega, &phi.point, omega);
        let next = if omega == 1.0 {
            phi.clone()
        } else {
            project_to_s(disc, &mixed, opts)?
        };
        let distance = relative_distance(disc, &next.point, &v)?;
        iterates.push(IterateRecord {
            iteration: k,
            distance,
            s_check: next.spec.bound,
        });
        last_phi = Some(phi.point);
        v = next.point;
        if distance <= opts.fp_tol {
            let u = phi_map(disc, &v, opts)?;
            let norm = grid::total_norm(&u, g).map_err(OpsError::from)?;
            let res = residual(disc, &u)?;
            if res <= RESIDUAL_RTOL * norm && u.min_entry() > 0.0 {
                return Ok(SteadyStateResult {
                    ustar: u,
                    norm,
                    residual: res,
                    iterates,
                    status: SteadyStatus::Converged,
                });
            }
        }
    }
    let u = last_phi.unwrap_or(v);
    let norm = grid::total_norm(&u, g).map_err(OpsError::from)?;
    Ok(SteadyStateResult {
        residual: residual(disc, &u)?,
        ustar: u,
        norm,
        iterates,
        status: SteadyStatus::MaxIter,
    })
}

/// Independent solves from several initial directions, merged in input order.
pub fn solve_multistart(
    disc: &Discretization,
    directions: &[PopulationState],
    opts: &SteadyOptions,
) -> Vec<Result<SteadyStateResult, SteadyError>> {
    par::map_collect(directions.len(), |i| solve_steady(disc, Some(&directions[i]), opts))
}
