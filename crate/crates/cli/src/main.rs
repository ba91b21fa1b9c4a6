//! `wentzell`: simulate, find steady states, check stability and inspect
//! spectral bounds for a model given as a TOML ingredient file.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 numeric failure,
//! 3 trivial steady state only, 4 steady iteration did not converge,
//! 5 linearly unstable, 6 stability inconclusive.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use wentzell_core::evolve::simulate;
use wentzell_core::grid::{read_state_csv, total_norm, write_state_csv};
use wentzell_core::spectral::{spectral_bound_with, SpectralOptions};
use wentzell_core::stability::{check_stability, Verdict};
use wentzell_core::steady::{solve_multistart, solve_steady, SteadyOptions, SteadyStateResult, SteadyStatus};
use wentzell_core::{load_config, par, validate, Discretization, Grid, PopulationState, ValidationOptions};

#[derive(Parser)]
#[command(name = "wentzell", version, about = "Structured epidemic model with a dynamic boundary compartment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate in time with IMEX Euler and write the trajectory.
    Simulate(SimulateArgs),
    /// Find a positive steady state.
    Steady(SteadyArgs),
    /// Sufficient condition and linearized spectrum at a steady state.
    Stability(StabilityArgs),
    /// Spectral bound of the frozen-environment generator.
    Spectral(SpectralArgs),
}

#[derive(Args)]
struct Common {
    /// Model ingredient file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of grid cells N.
    #[arg(long = "grid", default_value_t = 64)]
    grid: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial state CSV; defaults to a uniform state of total size 1.
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Write a snapshot every this many steps (0: none).
    #[arg(long, default_value_t = 0)]
    snapshot_stride: usize,
}

#[derive(Args)]
struct SteadyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial direction CSV; defaults to the uniform state.
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Solve from this many random directions as well.
    #[arg(long, default_value_t = 0)]
    multistart: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    common: Common,
    /// Steady state CSV; computed from the uniform direction when absent.
    #[arg(long)]
    steady: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectralArgs {
    #[command(flatten)]
    common: Common,
    /// Environment v as a state CSV.
    #[arg(long)]
    env: Option<PathBuf>,
    /// `lo:hi:steps`, scanning s along the ray through `--direction`.
    #[arg(long = "alpha-scan")]
    alpha_scan: Option<String>,
    #[arg(long)]
    direction: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes with their exit codes.
enum Failure {
    Config(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numeric(_) => 2,
        }
    }
}

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn numeric_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Numeric(e.into())
}

struct Setup {
    config: PathBuf,
    disc: Discretization,
    started: Instant,
}

fn setup(common: &Common) -> Result<Setup, Failure> {
    let started = Instant::now();
    let config = common
        .config
        .clone()
        .ok_or_else(|| config_err(anyhow!("missing required flag --config")))?;
    let text = fs::read_to_string(&config)
        .with_context(|| format!("reading --config {}", config.display()))
        .map_err(config_err)?;
    let def = load_config(&text)
        .with_context(|| format!("in {}", config.display()))
        .map_err(config_err)?;
    let vm = validate(&def, &ValidationOptions::default())
        .with_context(|| format!("in {}", config.display()))
        .map_err(config_err)?;
    let grid = Grid::new(def.m, common.grid).context("--grid").map_err(config_err)?;
    let disc = Discretization::new(&vm, &grid).map_err(config_err)?;
    Ok(Setup { config, disc, started })
}

fn read_state(path: &Path, grid: &Grid, flag: &str) -> Result<PopulationState, Failure> {
    let file = File::open(path)
        .with_context(|| format!("opening {flag} {}", path.display()))
        .map_err(config_err)?;
    read_state_csv(BufReader::new(file), grid)
        .with_context(|| format!("reading {flag} {}", path.display()))
        .map_err(config_err)
}

fn require_out(out: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = out.clone().ok_or_else(|| config_err(anyhow!("missing required flag --out")))?;
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating --out {}", dir.display()))
        .map_err(config_err)?;
    Ok(dir)
}

/// Records every artifact and writes `manifest.txt` atomically at the end.
struct Manifest {
    entries: Vec<(String, String)>,
    artifacts: Vec<PathBuf>,
    started: Instant,
}

impl Manifest {
    fn new(command: &str, setup: &Setup) -> Self {
        let g = setup.disc.grid();
        Manifest {
            entries: vec![
                ("command".into(), command.into()),
                ("config".into(), setup.config.display().to_string()),
                ("grid".into(), g.cells().to_string()),
                ("m".into(), g.m().to_string()),
            ],
            artifacts: Vec::new(),
            started: setup.started,
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    fn create(&mut self, dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = dir.join(name);
        let file = File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(numeric_err)?;
        self.artifacts.push(path);
        Ok(BufWriter::new(file))
    }

    fn write(mut self, dir: &Path) -> Result<(), Failure> {
        self.set("output_dir", dir.display());
        self.set("wall_clock_seconds", format!("{:.3}", self.started.elapsed().as_secs_f64()));
        let names: Vec<String> = self
            .artifacts
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        self.set("artifacts", names.join(","));
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(&format!("{k}={v}\n"));
        }
        let tmp = dir.join("manifest.txt.tmp");
        let io = |e: std::io::Error| numeric_err(anyhow!("writing manifest: {e}"));
        fs::write(&tmp, text).map_err(io)?;
        fs::rename(&tmp, dir.join("manifest.txt")).map_err(io)
    }
}

fn flush(mut w: BufWriter<File>) -> Result<(), Failure> {
    w.flush().map_err(numeric_err)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, Failure> {
    let dt = args.dt.ok_or_else(|| config_err(anyhow!("missing required flag --dt")))?;
    if !(dt > 0.0) {
        return Err(config_err(anyhow!("dt must be positive")));
    }
    let t_end = args.t_end.ok_or_else(|| config_err(anyhow!("missing required flag --t-end")))?;
    if !(t_end > 0.0) {
        return Err(config_err(anyhow!("t-end must be positive")));
    }
    let setup = setup(&args.common)?;
    let out = require_out(&args.out)?;
    let g = setup.disc.grid().clone();
    let s0 = match &args.initial {
        Some(p) => read_state(p, &g, "--initial")?,
        None => {
            let u = PopulationState::uniform(&g, 1.0, 1.0);
            u.scaled(1.0 / total_norm(&u, &g).map_err(numeric_err)?)
        }
    };
    let tr = simulate(&setup.disc, &s0, t_end, dt, args.snapshot_stride).map_err(numeric_err)?;

    let mut manifest = Manifest::new("simulate", &setup);
    manifest.set("t_end", t_end);
    manifest.set("dt", dt);
    manifest.set("snapshot_stride", args.snapshot_stride);
    manifest.set("termination", tr.termination.as_str());
    let w = manifest.create(&out, "trajectory.csv")?;
    tr.write_csv(w).map_err(numeric_err)?;
    for path in tr.write_snapshots(&out, &g).map_err(numeric_err)? {
        manifest.artifacts.push(path);
    }
    manifest.write(&out)?;

    let t = tr.times.last().unwrap();
    println!("t = {t:?}");
    println!("U = {:?}", tr.norms.last().unwrap());
    println!("u0 = {:?}", tr.boundary_masses.last().unwrap());
    println!("termination = {}", tr.termination.as_str());
    Ok(0)
}

fn steady_json(r: &SteadyStateResult) -> serde_json::Value {
    json!({
        "status": r.status.as_str(),
        "norm": r.norm,
        "residual": r.residual,
        "iterations": r.iterates.len(),
        "min_entry": r.ustar.min_entry(),
        "iterates": r.iterates.iter().map(|it| json!({
            "iteration": it.iteration,
            "distance": it.distance,
            "s_check": it.s_check,
        })).collect::<Vec<_>>(),
    })
}

fn steady_exit(status: SteadyStatus) -> u8 {
    match status {
        SteadyStatus::Converged => 0,
        SteadyStatus::TrivialOnly => 3,
        SteadyStatus::BracketFailure | SteadyStatus::MaxIter => 4,
    }
}

fn random_directions(n: usize, count: usize, seed: u64) -> Vec<PopulationState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| PopulationState::from_coords((0..=n).map(|_| rng.gen_range(0.05..1.0)).collect()))
        .collect()
}

fn cmd_steady(args: &SteadyArgs) -> Result<u8, Failure> {
    let setup = setup(&args.common)?;
    let out = require_out(&args.out)?;
    let g = setup.disc.grid().clone();
    let opts = SteadyOptions::default();
    let initial = match &args.initial {
        Some(p) => Some(read_state(p, &g, "--initial")?),
        None => None,
    };
    let mut results = vec![solve_steady(&setup.disc, initial.as_ref(), &opts).map_err(numeric_err)?];
    let directions = random_directions(g.cells(), args.multistart, args.seed);
    for r in solve_multistart(&setup.disc, &directions, &opts) {
        results.push(r.map_err(numeric_err)?);
    }
    // lowest start index wins among converged runs
    let selected = results
        .iter()
        .position(|r| r.status == SteadyStatus::Converged)
        .unwrap_or(0);
    let best = &results[selected];

    let mut manifest = Manifest::new("steady", &setup);
    manifest.set("bisection_tol", format!("{:?}", opts.bisection_tol));
    manifest.set("fp_tol", format!("{:?}", opts.fp_tol));
    manifest.set("damping", opts.damping);
    manifest.set("spectral_tol", format!("{:?}", opts.spectral.tol));
    manifest.set("multistart", args.multistart);
    manifest.set("seed", args.seed);
    manifest.set("status", best.status.as_str());
    write_state_csv(&best.ustar, &g, manifest.create(&out, "steady.csv")?).map_err(numeric_err)?;
    for (k, r) in results.iter().enumerate().skip(1) {
        write_state_csv(&r.ustar, &g, manifest.create(&out, &format!("steady_{k}.csv"))?).map_err(numeric_err)?;
    }
    let diag = json!({
        "selected": selected,
        "starts": results.iter().map(steady_json).collect::<Vec<_>>(),
    });
    let mut w = manifest.create(&out, "diagnostics.json")?;
    serde_json::to_writer_pretty(&mut w, &diag).map_err(numeric_err)?;
    writeln!(w).map_err(numeric_err)?;
    flush(w)?;
    manifest.write(&out)?;

    println!("status = {}", best.status.as_str());
    println!("norm = {:?}", best.norm);
    println!("residual = {:?}", best.residual);
    println!("iterations = {}", best.iterates.len());
    match best.status {
        SteadyStatus::TrivialOnly => eprintln!("trivial steady state only"),
        SteadyStatus::BracketFailure => eprintln!("could not bracket the level set s = 0 along the ray"),
        SteadyStatus::MaxIter => eprintln!("fixed-point iteration did not converge"),
        SteadyStatus::Converged => {}
    }
    Ok(steady_exit(best.status))
}

fn cmd_stability(args: &StabilityArgs) -> Result<u8, Failure> {
    let setup = setup(&args.common)?;
    let g = setup.disc.grid().clone();
    let ustar = match &args.steady {
        Some(p) => read_state(p, &g, "--steady")?,
        None => {
            let r = solve_steady(&setup.disc, None, &SteadyOptions::default()).map_err(numeric_err)?;
            if r.status != SteadyStatus::Converged {
                eprintln!("no converged steady state ({})", r.status.as_str());
                if r.status == SteadyStatus::TrivialOnly {
                    eprintln!("trivial steady state only");
                }
                return Ok(steady_exit(r.status));
            }
            r.ustar
        }
    };
    let report = check_stability(&setup.disc, &ustar).map_err(numeric_err)?;
    print!("{report}");
    print!("{}", report.key_values());
    if let Some(dir) = &args.out {
        let dir = require_out(&Some(dir.clone()))?;
        let mut manifest = Manifest::new("stability", &setup);
        manifest.set("verdict", report.pls_verdict.as_str());
        let mut w = manifest.create(&dir, "stability.txt")?;
        w.write_all(report.key_values().as_bytes()).map_err(numeric_err)?;
        flush(w)?;
        manifest.write(&dir)?;
    }
    Ok(match report.pls_verdict {
        Verdict::Stable => 0,
        Verdict::Unstable => 5,
        Verdict::Inconclusive => 6,
    })
}

fn parse_scan(text: &str) -> anyhow::Result<(f64, f64, usize)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--alpha-scan expects lo:hi:steps, got {text:?}");
    }
    let lo: f64 = parts[0].trim().parse().context("--alpha-scan lo")?;
    let hi: f64 = parts[1].trim().parse().context("--alpha-scan hi")?;
    let steps: usize = parts[2].trim().parse().context("--alpha-scan steps")?;
    if !(lo > 0.0 && hi > lo) || steps < 2 {
        bail!("--alpha-scan needs 0 < lo < hi and steps >= 2");
    }
    Ok((lo, hi, steps))
}

fn cmd_spectral(args: &SpectralArgs) -> Result<u8, Failure> {
    let setup = setup(&args.common)?;
    let g = setup.disc.grid().clone();
    let opts = SpectralOptions::default();
    match (&args.env, &args.alpha_scan) {
        (Some(env), None) => {
            let v = read_state(env, &g, "--env")?;
            let psi = setup.disc.psi(&v).map_err(config_err)?;
            let r = spectral_bound_with(&psi, &opts).map_err(numeric_err)?;
            println!("s = {:?}", r.bound);
            println!("residual = {:?}", r.residual);
            println!("iterations = {}", r.iterations);
            if let Some(dir) = &args.out {
                let dir = require_out(&Some(dir.clone()))?;
                let mut manifest = Manifest::new("spectral", &setup);
                manifest.set("spectral_tol", format!("{:?}", opts.tol));
                manifest.set("bound", format!("{:?}", r.bound));
                write_state_csv(&r.eigvec, &g, manifest.create(&dir, "eigvec.csv")?).map_err(numeric_err)?;
                manifest.write(&dir)?;
            }
            Ok(0)
        }
        (None, Some(scan)) => {
            let (lo, hi, steps) = parse_scan(scan).map_err(config_err)?;
            let dir_path = args
                .direction
                .as_ref()
                .ok_or_else(|| config_err(anyhow!("--alpha-scan requires --direction")))?;
            let w = read_state(dir_path, &g, "--direction")?;
            if w.is_zero() || !w.is_nonnegative() {
                return Err(config_err(anyhow!("--direction must be nonnegative and nonzero")));
            }
            let w = w.scaled(1.0 / total_norm(&w, &g).map_err(numeric_err)?);
            let alphas: Vec<f64> = (0..steps)
                .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
                .collect();
            let bounds = par::map_collect(steps, |k| {
                let psi = setup.disc.psi(&w.scaled(alphas[k]))?;
                Ok::<f64, anyhow::Error>(spectral_bound_with(&psi, &opts)?.bound)
            });
            let bounds = bounds.into_iter().collect::<Result<Vec<_>, _>>().map_err(numeric_err)?;
            let mut text = String::from("alpha,s\n");
            for (a, s) in alphas.iter().zip(&bounds) {
                text.push_str(&format!("{a:?},{s:?}\n"));
                println!("{a:?},{s:?}");
            }
            if let Some(dir) = &args.out {
                let dir = require_out(&Some(dir.clone()))?;
                let mut manifest = Manifest::new("spectral", &setup);
                manifest.set("alpha_scan", scan);
                manifest.set("spectral_tol", format!("{:?}", opts.tol));
                let mut f = manifest.create(&dir, "alpha_scan.csv")?;
                f.write_all(text.as_bytes()).map_err(numeric_err)?;
                flush(f)?;
                manifest.write(&dir)?;
            }
            Ok(0)
        }
        (Some(_), Some(_)) => Err(config_err(anyhow!("--env and --alpha-scan are mutually exclusive"))),
        (None, None) => Err(config_err(anyhow!("spectral needs --env or --alpha-scan with --direction"))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Steady(a) => cmd_steady(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Spectral(a) => cmd_spectral(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let code = f.code();
            let (Failure::Config(e) | Failure::Numeric(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
