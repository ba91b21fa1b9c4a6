//! Time integration by IMEX Euler: the linear transport/mortality part is
//! implicit and the recruitment nonlinearity explicit,
//!
//! ```text
//! (I − Δt·(A − M))·u⁺ = u + Δt·F(u).
//! ```
//!
//! `A − M` is a tridiagonal Metzler matrix, so `I − Δt·(A − M)` is an
//! M-matrix for every `Δt > 0`. Its inverse is entrywise nonnegative and,
//! when the weighted column sums of `A − M` vanish, it preserves the total
//! population exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{self, GridError, PopulationState};
use crate::linalg::{LinalgError, TridiagonalLu};
use crate::ops::{Discretization, OpsError};

pub const BLOW_UP_NORM: f64 = 1e12;
pub const EXTINCTION_NORM: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("dt must be positive")]
    NonPositiveDt,
    #[error("t_end must be positive")]
    NonPositiveEnd,
    #[error("state length {got} does not match grid dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("implicit solve failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    BlowUp,
    Extinction,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::BlowUp => "blow_up",
            Termination::Extinction => "extinction",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Total population `U(t)`.
    pub norms: Vec<f64>,
    /// Boundary compartment `u0(t)`.
    pub boundary_masses: Vec<f64>,
    pub snapshots: Vec<(f64, PopulationState)>,
    pub termination: Termination,
    pub final_state: PopulationState,
}

impl Trajectory {
    /// CSV with header `t,U,u0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), GridError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| GridError::Csv(e.to_string());
        w.write_record(["t", "U", "u0"]).map_err(io)?;
        for k in 0..self.times.len() {
            w.write_record([
                format!("{:?}", self.times[k]),
                format!("{:?}", self.norms[k]),
                format!("{:?}", self.boundary_masses[k]),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| GridError::Csv(e.to_string()))
    }

    /// Writes `snap_<index>.csv` for every snapshot into `dir` and returns
    /// the paths in order.
    pub fn write_snapshots(&self, dir: &Path, g: &grid::Grid) -> Result<Vec<PathBuf>, EvolveError> {
        let mut paths = Vec::with_capacity(self.snapshots.len());
        for (k, (_, s)) in self.snapshots.iter().enumerate() {
            let path = dir.join(format!("snap_{k}.csv"));
            let file = File::create(&path).map_err(|source| EvolveError::Io {
                path: path.clone(),
                source,
            })?;
            grid::write_state_csv(s, g, BufWriter::new(file))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn implicit_factor(disc: &Discretization, dt: f64) -> Result<TridiagonalLu, EvolveError> {
    Ok(disc.linear_bands().shifted_identity(dt).factor()?)
}

fn step_with(
    disc: &Discretization,
    lu: &TridiagonalLu,
    s: &PopulationState,
    dt: f64,
) -> Result<PopulationState, EvolveError> {
    let f = disc.apply_f(s)?;
    let rhs: Vec<f64> = s.coords().iter().zip(f.coords()).map(|(u, fu)| u + dt * fu).collect();
    Ok(PopulationState::from_coords(lu.solve(&rhs)))
}

fn check_state(disc: &Discretization, s: &PopulationState) -> Result<(), EvolveError> {
    let expected = disc.grid().dim();
    if s.coords().len() != expected {
        return Err(EvolveError::Dimension {
            expected,
            got: s.coords().len(),
        });
    }
    Ok(())
}

/// One IMEX Euler step.
pub fn step_imex(disc: &Discretization, s: &PopulationState, dt: f64) -> Result<PopulationState, EvolveError> {
    if !(dt > 0.0) {
        return Err(EvolveError::NonPositiveDt);
    }
    check_state(disc, s)?;
    step_with(disc, &implicit_factor(disc, dt)?, s, dt)
}

/// Integrates to `t_end` with step `dt` (the last step is shortened to land
/// on `t_end`). Snapshots are kept every `snapshot_stride` steps, starting
/// with the initial state; a stride of 0 keeps none.
pub fn simulate(
    disc: &Discretization,
    s0: &PopulationState,
    t_end: f64,
    dt: f64,
    snapshot_stride: usize,
) -> Result<Trajectory, EvolveError> {
    if !(dt > 0.0) {
        return Err(EvolveError::NonPositiveDt);
    }
    if !(t_end > 0.0) {
        return Err(EvolveError::NonPositiveEnd);
    }
    check_state(disc, s0)?;
    let g = disc.grid();
    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let lu = implicit_factor(disc, dt)?;
    let mut s = s0.clone();
    let mut t = 0.0;
    let mut traj = Trajectory {
        times: vec![0.0],
        norms: vec![grid::total_norm(&s, g)?],
        boundary_masses: vec![s.u0()],
        snapshots: Vec::new(),
        termination: Termination::Completed,
        final_state: s0.clone(),
    };
    if snapshot_stride > 0 {
        traj.snapshots.push((0.0, s.clone()));
    }
    for k in 1..=steps {
        let (t_next, step) = if k == steps { (t_end, t_end - t) } else { (k as f64 * dt, dt) };
        s = if step == dt {
            step_with(disc, &lu, &s, dt)?
        } else {
            step_with(disc, &implicit_factor(disc, step)?, &s, step)?
        };
        t = t_next;
        let norm = grid::total_norm(&s, g)?;
        traj.times.push(t);
        traj.norms.push(norm);
        traj.boundary_masses.push(s.u0());
        if snapshot_stride > 0 && k % snapshot_stride == 0 {
            traj.snapshots.push((t, s.clone()));
        }
        if !norm.is_finite() || norm > BLOW_UP_NORM {
            traj.termination = Termination::BlowUp;
            break;
        }
        if norm < EXTINCTION_NORM {
            traj.termination = Termination::Extinction;
            break;
        }
    }
    traj.final_state = s;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{total_norm, Grid};
    use crate::model::{validate, ModelDefinition, ValidationOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc(n: usize, ing: &[(&str, &str)]) -> Discretization {
        let mut all: Vec<(&str, &str)> = vec![
            ("beta0", "0"),
            ("beta1", "1"),
            ("beta2", "1"),
            ("b0", "0"),
            ("b2", "1"),
            ("mu", "0"),
            ("gamma", "0.4"),
            ("d", "0.05"),
        ];
        for (k, v) in ing {
            all.iter_mut().find(|(kk, _)| kk == k).unwrap().1 = v;
        }
        let def = ModelDefinition::from_strs(1.0, &all).unwrap();
        let vm = validate(&def, &ValidationOptions::default()).unwrap();
        Discretization::new(&vm, &Grid::new(1.0, n).unwrap()).unwrap()
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> PopulationState {
        PopulationState::from_coords((0..=n).map(|_| rng.gen_range(0.0..2.0)).collect())
    }

    #[test]
    fn conservative_step_keeps_mass() {
        let d = disc(16, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(16, &mut rng);
        let u = step_imex(&d, &s, 0.3).unwrap();
        let (a, b) = (total_norm(&s, d.grid()).unwrap(), total_norm(&u, d.grid()).unwrap());
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn large_steps_stay_nonnegative() {
        let d = disc(16, &[("beta0", "2/(1+x)"), ("mu", "0.3+x"), ("gamma", "-0.8+x")]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let s = random_state(16, &mut rng);
            let u = step_imex(&d, &s, 10.0).unwrap();
            assert!(u.min_entry() >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = disc(8, &[]);
        let s = PopulationState::uniform(d.grid(), 1.0, 1.0);
        assert!(matches!(step_imex(&d, &s, 0.0), Err(EvolveError::NonPositiveDt)));
        assert!(matches!(simulate(&d, &s, 1.0, -1.0, 0), Err(EvolveError::NonPositiveDt)));
        assert!(matches!(simulate(&d, &s, 0.0, 0.1, 0), Err(EvolveError::NonPositiveEnd)));
        assert_eq!(EvolveError::NonPositiveDt.to_string(), "dt must be positive");
        let short = PopulationState::from_coords(vec![1.0; 3]);
        assert!(matches!(step_imex(&d, &short, 0.1), Err(EvolveError::Dimension { .. })));
    }

    #[test]
    fn zero_state_stays_zero() {
        let d = disc(8, &[("beta0", "2/(1+x)"), ("mu", "0.1")]);
        let tr = simulate(&d, &PopulationState::zeros(d.grid()), 1.0, 0.1, 0).unwrap();
        assert!(tr.final_state.is_zero());
        assert!(tr.norms.iter().all(|n| *n == 0.0));
    }

    #[test]
    fn constant_mortality_decay() {
        let d = disc(8, &[("mu", "0.5")]);
        let g = d.grid().clone();
        let s0 = PopulationState::uniform(&g, 1.0, 1.0);
        let s0 = s0.scaled(1.0 / total_norm(&s0, &g).unwrap());
        let dt = 1e-3;
        let tr = simulate(&d, &s0, 2.0, dt, 500).unwrap();
        assert_eq!(tr.termination, Termination::Completed);
        assert_eq!(tr.times.len(), 2001);
        assert_eq!(*tr.times.last().unwrap(), 2.0);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        for (t, u) in tr.times.iter().zip(&tr.norms) {
            assert!((u - (-0.5 * t).exp()).abs() <= 2.0 * dt * t + 1e-15);
        }
        assert_eq!(tr.snapshots.len(), 5);
        assert_eq!(tr.snapshots[4].0, 2.0);
    }

    #[test]
    fn truncated_last_step_lands_on_end() {
        let d = disc(8, &[("mu", "0.5")]);
        let s0 = PopulationState::uniform(d.grid(), 1.0, 1.0);
        let tr = simulate(&d, &s0, 1.05, 0.1, 0).unwrap();
        assert_eq!(tr.times.len(), 12);
        assert_eq!(*tr.times.last().unwrap(), 1.05);
        assert!((tr.times[10] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_flagged() {
        // growth without density dependence
        let d = disc(8, &[("beta0", "50"), ("b0", "50")]);
        let s0 = PopulationState::uniform(d.grid(), 1.0, 1.0);
        let tr = simulate(&d, &s0, 100.0, 0.1, 0).unwrap();
        assert_eq!(tr.termination, Termination::BlowUp);
        assert!(*tr.times.last().unwrap() < 100.0);
    }

    #[test]
    fn extinction_is_flagged() {
        let d = disc(8, &[("mu", "20")]);
        let s0 = PopulationState::uniform(d.grid(), 1.0, 1.0);
        let tr = simulate(&d, &s0, 100.0, 0.5, 0).unwrap();
        assert_eq!(tr.termination, Termination::Extinction);
    }

    #[test]
    fn trajectory_outputs() {
        let d = disc(4, &[("mu", "0.5")]);
        let s0 = PopulationState::uniform(d.grid(), 1.0, 1.0);
        let tr = simulate(&d, &s0, 0.2, 0.1, 1).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,U,u0");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0.0,"));
        let dir = std::env::temp_dir().join(format!("wentzell-snap-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let paths = tr.write_snapshots(&dir, d.grid()).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths[2].ends_with("snap_2.csv"));
        let back = grid::read_state_csv(File::open(&paths[0]).unwrap(), d.grid()).unwrap();
        assert_eq!(back, s0);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
