//! Local stability of a positive steady state `u*`.
//!
//! Two tests are reported side by side. The sufficient condition compares
//! the smallest mortality `ν` with the induced weighted-ℓ¹ norm of `F'(u*)`;
//! when `ν > ‖F'‖` the linearization `A − M + F'` has its spectrum in the open
//! left half-plane. The linearized-stability check computes that spectrum
//! directly.

use std::fmt;

use thiserror::Error;

use crate::grid::PopulationState;
use crate::model::SampledIngredients;
use crate::ops::{weighted_column_abs_sums, weighted_column_sums, Discretization, GeneratorMatrix, OpsError};
use crate::spectral::{self, SpectralError, DENSE_LIMIT};

/// Dead band around zero for the linearized-stability verdict.
pub const VERDICT_BAND: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl Verdict {
    pub fn from_bound(bound: f64) -> Verdict {
        if bound < -VERDICT_BAND {
            Verdict::Stable
        } else if bound > VERDICT_BAND {
            Verdict::Unstable
        } else {
            Verdict::Inconclusive
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub nu: f64,
    pub fprime_norm: f64,
    pub sufficient_condition: bool,
    /// Largest real part in the spectrum of `A − M + F'`.
    pub linearized_bound: f64,
    pub pls_verdict: Verdict,
    /// All weighted column sums of `F'` are `≤ 0`.
    pub fprime_dissipative: bool,
    /// Weighted logarithmic norm of `A − M + F'`, an upper bound on
    /// `linearized_bound`.
    pub log_norm: f64,
}

impl StabilityReport {
    /// Machine-readable `key=value` block, one entry per line.
    pub fn key_values(&self) -> String {
        format!(
            "nu={:?}\nfprime_norm={:?}\nsufficient_condition={}\nlinearized_bound={:?}\npls_verdict={}\nfprime_dissipative={}\nlog_norm={:?}\n",
            self.nu,
            self.fprime_norm,
            self.sufficient_condition,
            self.linearized_bound,
            self.pls_verdict.as_str(),
            self.fprime_dissipative,
            self.log_norm
        )
    }
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "minimal mortality nu        : {:.6e}", self.nu)?;
        writeln!(f, "norm of F'(u*)              : {:.6e}", self.fprime_norm)?;
        writeln!(f, "nu > ||F'||                 : {}", self.sufficient_condition)?;
        writeln!(f, "max Re spectrum(A - M + F') : {:.6e}", self.linearized_bound)?;
        writeln!(f, "linearized stability        : {}", self.pls_verdict.as_str())?;
        writeln!(f, "F' dissipative              : {}", self.fprime_dissipative)
    }
}

/// `min(μ(0), μ(x_1), …, μ(x_N))`.
pub fn mortality_inf(si: &SampledIngredients) -> f64 {
    si.mu_centers.iter().fold(si.mu_boundary, |m, v| m.min(*v))
}

/// Induced norm on weighted ℓ¹: `max_j (Σ_i w_i |B_ij|) / w_j`.
pub fn operator_norm_weighted(b: &GeneratorMatrix) -> f64 {
    let w = b.weights();
    weighted_column_abs_sums(b.matrix(), w)
        .iter()
        .zip(w)
        .map(|(s, wj)| s / wj)
        .fold(0.0, f64::max)
}

pub fn check_stability(disc: &Discretization, ustar: &PopulationState) -> Result<StabilityReport, StabilityError> {
    let nu = mortality_inf(disc.samples());
    let fprime = disc.linearization(ustar)?;
    let fprime_norm = operator_norm_weighted(&fprime);
    let w = fprime.weights().to_vec();
    let fprime_dissipative = weighted_column_sums(fprime.matrix(), &w).iter().all(|s| *s <= 0.0);
    let jac = GeneratorMatrix::new(disc.linear_bands().to_dense().add_scaled(1.0, fprime.matrix()), w);
    let linearized_bound = if jac.dim() <= DENSE_LIMIT {
        spectral::dense_spectrum(&jac)?[0].re
    } else {
        spectral::spectral_bound(&jac, spectral::DEFAULT_TOL, 100 * jac.dim())?.bound
    };
    Ok(StabilityReport {
        nu,
        fprime_norm,
        sufficient_condition: nu > fprime_norm,
        linearized_bound,
        pls_verdict: Verdict::from_bound(linearized_bound),
        fprime_dissipative,
        log_norm: spectral::log_norm_weighted(jac.matrix(), jac.weights()),
    })
}
