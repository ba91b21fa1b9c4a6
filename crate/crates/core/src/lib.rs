//! Solver library for a structured epidemic model with diffusion in
//! pathogen-load space and a mass-carrying boundary compartment at zero load.
//!
//! The pieces, bottom-up:
//!
//! * [`expr`]: the expression language for model ingredients.
//! * [`model`]: configuration loading, sign validation, sampling on a grid.
//! * [`grid`]: the uniform grid and the discrete `L¹ ⊕ ℝ` state space.
//! * [`ops`]: transport, mortality and recruitment operators, the
//!   nonlinearity and its derivatives.
//! * [`spectral`]: Perron root and eigenvector of Metzler generators,
//!   resolvents, a dense eigenvalue oracle.
//! * [`steady`]: the level-set/fixed-point search for a positive steady state.
//! * [`stability`]: the sufficient stability condition and the linearized
//!   spectrum.
//! * [`evolve`]: positivity-preserving IMEX time stepping.
//!
//! Inner loops (row assembly, mat-vecs, LU elimination, multi-start and
//! parameter sweeps) run on rayon with the default `parallel` feature.

pub mod evolve;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod ops;
pub mod par;
pub mod spectral;
pub mod stability;
pub mod steady;

pub use grid::{Grid, PopulationState};
pub use model::{load_config, validate, ModelDefinition, ValidatedModel, ValidationOptions};
pub use ops::{Discretization, GeneratorMatrix};
