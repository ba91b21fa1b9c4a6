//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fail.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wentzell_core::evolve::{simulate, step_imex};
use wentzell_core::grid::total_norm;
use wentzell_core::ops::gateaux_at_zero;
use wentzell_core::spectral::{dense_spectrum, spectral_bound_with, SpectralOptions};
use wentzell_core::stability::check_stability;
use wentzell_core::steady::{solve_steady, SteadyStatus};
use wentzell_core::{validate, Discretization, Grid, ModelDefinition, PopulationState, ValidationOptions};

type Ingredients = Vec<(&'static str, String)>;

fn base() -> Ingredients {
    vec![
        ("beta0", "0".into()),
        ("beta1", "1".into()),
        ("beta2", "1".into()),
        ("b0", "0".into()),
        ("b2", "1".into()),
        ("mu", "0".into()),
        ("gamma", "0.5".into()),
        ("d", "0.05".into()),
    ]
}

fn with(mut ing: Ingredients, changes: &[(&'static str, &str)]) -> Ingredients {
    for (k, v) in changes {
        ing.iter_mut().find(|(kk, _)| kk == k).unwrap().1 = v.to_string();
    }
    ing
}

fn discretize(ing: &Ingredients, n: usize) -> Discretization {
    let pairs: Vec<(&str, &str)> = ing.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let def = ModelDefinition::from_strs(1.0, &pairs).expect("definition");
    let vm = validate(&def, &ValidationOptions::default()).expect("validation");
    Discretization::new(&vm, &Grid::new(1.0, n).unwrap()).expect("discretization")
}

/// Random admissible ingredients with decreasing β₀, b₀, positive
/// diffusion and drift of either sign.
fn random_ingredients(rng: &mut ChaCha8Rng) -> Ingredients {
    let mut r = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    vec![
        ("beta0", format!("{:.6}/(1+{:.6}*x)", r(0.5, 6.0), r(0.2, 2.0))),
        ("beta1", format!("{:.6}*exp(-{:.6}*x*y)+{:.6}", r(0.2, 2.0), r(0.0, 2.0), r(0.0, 0.5))),
        ("beta2", format!("1-{:.6}*x", r(0.0, 0.9))),
        ("b0", format!("{:.6}/(1+x)^2", r(0.0, 3.0))),
        ("b2", format!("exp(-{:.6}*x)", r(0.0, 1.0))),
        ("mu", format!("{:.6}+{:.6}*x", r(0.05, 1.0), r(0.0, 1.0))),
        ("gamma", format!("{:.6}+{:.6}*x", r(-1.0, 1.0), r(-0.5, 0.5))),
        ("d", format!("{:.6}+{:.6}*x^2", r(0.01, 0.3), r(0.0, 0.2))),
    ]
}

fn random_positive_state(n: usize, rng: &mut ChaCha8Rng) -> PopulationState {
    PopulationState::from_coords((0..=n).map(|_| rng.gen_range(0.05..2.0)).collect())
}

fn random_nonnegative_state(n: usize, rng: &mut ChaCha8Rng) -> PopulationState {
    PopulationState::from_coords(
        (0..=n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) })
            .collect(),
    )
}

fn dist(a: &PopulationState, b: &PopulationState, g: &Grid) -> f64 {
    total_norm(&a.combine(1.0, b, -1.0), g).unwrap()
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn conservation() -> Outcome {
    let d = discretize(&base(), 64);
    let g = d.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s0 = random_positive_state(64, &mut rng);
    let tr = simulate(&d, &s0, 100.0, 1e-2, 0).map_err(|e| e.to_string())?;
    let u0 = total_norm(&s0, g).unwrap();
    let worst = tr.norms.iter().map(|u| (u - u0).abs() / u0).fold(0.0, f64::max);
    check(
        tr.times.len() == 10_001 && worst <= 1e-10,
        format!("steps={} max |U(t)-U(0)|/U(0)={worst:.3e} (tol 1e-10)", tr.times.len() - 1),
    )
}

fn positivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = f64::INFINITY;
    let mut runs = 0;
    for _ in 0..50 {
        let ing = random_ingredients(&mut rng);
        let d = discretize(&ing, 32);
        let g = d.grid().clone();
        let s0 = random_nonnegative_state(32, &mut rng);
        let n0 = total_norm(&s0, &g).unwrap();
        for dt in [1e-3, 1.0, 10.0] {
            let tr = simulate(&d, &s0, 20.0 * dt, dt, 1).map_err(|e| e.to_string())?;
            for (_, s) in &tr.snapshots {
                worst = worst.min(s.min_entry() / n0);
            }
            runs += 1;
        }
    }
    check(
        worst >= -1e-14,
        format!("{runs} runs, min entry / ||s0|| = {worst:.3e} (tol -1e-14)"),
    )
}

/// Criteria 3 and 4 share the assembled generators.
fn spectral_oracle() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_gap: f64 = 0.0;
    let mut simple = true;
    let mut min_ratio = f64::INFINITY;
    for k in 0..30 {
        let n = [16, 40, 63, 99][k % 4];
        let d = discretize(&random_ingredients(&mut rng), n);
        let v = random_positive_state(n, &mut rng).scaled(rng.gen_range(0.1..10.0));
        let psi = match d.psi(&v) {
            Ok(p) => p,
            Err(e) => return (Err(e.to_string()), Err("not reached".into())),
        };
        let r = match spectral_bound_with(&psi, &SpectralOptions::default()) {
            Ok(r) => r,
            Err(e) => return (Err(e.to_string()), Err("not reached".into())),
        };
        let eig = dense_spectrum(&psi).unwrap();
        let top = eig[0].re;
        worst_gap = worst_gap.max((r.bound - top).abs() / r.bound.abs().max(1.0));
        let close = eig
            .iter()
            .filter(|e| ((e.re - top).powi(2) + e.im.powi(2)).sqrt() <= 1e-6)
            .count();
        simple &= close == 1;
        let norm = total_norm(&r.eigvec, d.grid()).unwrap();
        min_ratio = min_ratio.min(r.eigvec.min_entry() / norm);
    }
    (
        check(
            worst_gap <= 1e-8 && simple,
            format!("30 generators, max |bound - max Re| / max(1,|bound|) = {worst_gap:.3e} (tol 1e-8), simple={simple}"),
        ),
        check(
            min_ratio > 1e-12,
            format!("30 eigenvectors, min entry / ||v|| = {min_ratio:.3e} (tol 1e-12)"),
        ),
    )
}

fn ray_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ing = with(
        base(),
        &[
            ("beta0", "3/(1+x)"),
            ("b0", "1/(1+x)^2"),
            ("beta1", "exp(-x)*(1+y)"),
            ("beta2", "1-0.5*x"),
            ("b2", "exp(-0.3*x)"),
            ("mu", "0.4+0.3*x"),
        ],
    );
    let d = discretize(&ing, 32);
    let opts = SpectralOptions::default();
    let mut min_margin = f64::INFINITY;
    let mut min_entry = f64::INFINITY;
    for _ in 0..20 {
        let w = random_nonnegative_state(32, &mut rng);
        let w = w.scaled(1.0 / total_norm(&w, d.grid()).unwrap());
        for _ in 0..3 {
            let a1 = rng.gen_range(0.05..5.0);
            let a2 = a1 * rng.gen_range(1.05..3.0);
            let p1 = d.psi(&w.scaled(a1)).unwrap();
            let p2 = d.psi(&w.scaled(a2)).unwrap();
            let s1 = spectral_bound_with(&p1, &opts).unwrap().bound;
            let s2 = spectral_bound_with(&p2, &opts).unwrap().bound;
            min_margin = min_margin.min((s1 - s2) / (1e-10 * s1.abs().max(s2.abs())));
            let diff = p1.matrix().add_scaled(-1.0, p2.matrix());
            min_entry = min_entry.min(diff.as_slice().iter().cloned().fold(f64::INFINITY, f64::min));
        }
    }
    check(
        min_margin >= 1.0 && min_entry >= -1e-14,
        format!("60 pairs, min (s1-s2)/(1e-10|s|) = {min_margin:.3e} (need >= 1), min entry of difference = {min_entry:.3e}"),
    )
}

fn steady_residual() -> Outcome {
    // calibrate c by scanning s at small norm
    let family = |c: f64| {
        let b = format!("{c}/(1+x)");
        with(
            base(),
            &[
                ("beta0", &b),
                ("b0", &b),
                ("beta1", "exp(-x)*(1+y)"),
                ("mu", "0.5+0.2*x"),
            ],
        )
    };
    let mut chosen = None;
    let mut scan = Vec::new();
    for c in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let d = discretize(&family(c), 32);
        let v = PopulationState::uniform(d.grid(), 1.0, 1.0);
        let v = v.scaled(1e-6 / total_norm(&v, d.grid()).unwrap());
        let s = spectral_bound_with(&d.psi(&v).unwrap(), &SpectralOptions::default()).unwrap().bound;
        scan.push(format!("{c}:{s:.3}"));
        if s > 0.1 && chosen.is_none() {
            chosen = Some(c);
        }
    }
    let Some(c) = chosen else {
        return Err(format!("no c with s > 0 at small norm: {}", scan.join(" ")));
    };
    let mut norms = Vec::new();
    let mut worst_res: f64 = 0.0;
    let mut worst_move: f64 = 0.0;
    let mut positive = true;
    for n in [32, 64, 128] {
        let d = discretize(&family(c), n);
        let r = solve_steady(&d, None, &Default::default()).map_err(|e| e.to_string())?;
        if r.status != SteadyStatus::Converged {
            return Err(format!("N={n}: status {}", r.status.as_str()));
        }
        worst_res = worst_res.max(r.residual / r.norm);
        positive &= r.ustar.min_entry() > 0.0;
        for dt in [0.01, 1.0] {
            let next = step_imex(&d, &r.ustar, dt).unwrap();
            worst_move = worst_move.max(dist(&next, &r.ustar, d.grid()) / r.norm);
        }
        norms.push(r.norm);
    }
    let order = ((norms[0] - norms[1]).abs() / (norms[1] - norms[2]).abs()).log2();
    check(
        worst_res <= 1e-7 && positive && worst_move <= 1e-6 && order >= 0.9,
        format!(
            "c={c} (scan {}), residual/||u*|| = {worst_res:.3e}, step move = {worst_move:.3e}, ||u*|| at N=32,64,128: {:.8} {:.8} {:.8}, observed order {order:.3}",
            scan.join(" "),
            norms[0],
            norms[1],
            norms[2]
        ),
    )
}

fn trivial_only() -> Outcome {
    let mu0 = 0.3;
    let d = discretize(&with(base(), &[("mu", "0.3+x")]), 32);
    let r = solve_steady(&d, None, &Default::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let v = random_positive_state(32, &mut rng);
        let s = spectral_bound_with(&d.psi(&v).unwrap(), &SpectralOptions::default()).unwrap().bound;
        worst = worst.max(s);
    }
    check(
        r.status == SteadyStatus::TrivialOnly && worst <= -mu0 + 1e-8,
        format!("status={}, max sampled s = {worst:.10} (bound {})", r.status.as_str(), -mu0 + 1e-8),
    )
}

fn linearization() -> Outcome {
    let ing = with(
        base(),
        &[
            ("beta0", "3/(1+x)"),
            ("b0", "1/(1+x)"),
            ("beta1", "exp(-x)*(1+y)"),
            ("beta2", "1-0.5*x"),
            ("b2", "exp(-0.3*x)"),
            ("mu", "0.5+0.2*x"),
        ],
    );
    let d = discretize(&ing, 32);
    let g = d.grid().clone();
    let r = solve_steady(&d, None, &Default::default()).map_err(|e| e.to_string())?;
    if r.status != SteadyStatus::Converged {
        return Err(format!("steady status {}", r.status.as_str()));
    }
    let u = &r.ustar;
    let fu = d.apply_f(u).unwrap();
    let fp = d.linearization(u).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut min_ratio = f64::INFINITY;
    for _ in 0..20 {
        let z = PopulationState::from_coords((0..=32).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let fz = fp.apply(&z);
        let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&eps| {
                let f1 = d.apply_f(&u.combine(1.0, &z, eps)).unwrap();
                let lin = fu.combine(1.0, &fz, eps);
                dist(&f1, &lin, &g) / eps
            })
            .collect();
        min_ratio = min_ratio.min(errs[0] / errs[1]).min(errs[1] / errs[2]);
    }
    check(min_ratio >= 8.0, format!("20 directions, min error reduction factor = {min_ratio:.3} (need >= 8)"))
}

fn sufficient_condition_consistency() -> Outcome {
    let instances = vec![
        with(base(), &[("beta0", "1/(1+x)"), ("b0", "2/(1+x)"), ("mu", "0.5"), ("gamma", "0.3"), ("d", "0.2")]),
        with(base(), &[("beta0", "4/(1+x)^2"), ("b0", "8/(1+x)^2"), ("mu", "0.5")]),
        with(base(), &[("beta0", "2/(1+x)"), ("b0", "2/(1+x)"), ("beta1", "exp(-x)*(1+y)"), ("mu", "1+x")]),
        with(
            base(),
            &[
                ("beta0", "3/(1+x)"),
                ("b0", "1/(1+x)"),
                ("beta1", "exp(-x)"),
                ("beta2", "1-0.5*x"),
                ("mu", "0.8+0.2*x"),
            ],
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tested = 0;
    let mut details = Vec::new();
    let mut ok = true;
    for ing in &instances {
        let d = discretize(ing, 32);
        let g = d.grid().clone();
        let r = solve_steady(&d, None, &Default::default()).map_err(|e| e.to_string())?;
        if r.status != SteadyStatus::Converged {
            return Err(format!("steady status {}", r.status.as_str()));
        }
        let rep = check_stability(&d, &r.ustar).map_err(|e| e.to_string())?;
        if !rep.sufficient_condition {
            details.push(format!("skip(nu={:.3},|F'|={:.3})", rep.nu, rep.fprime_norm));
            continue;
        }
        tested += 1;
        let perturbed = PopulationState::from_coords(
            r.ustar.coords().iter().map(|v| v * (1.0 + 1e-3 * rng.gen_range(-1.0..1.0))).collect(),
        );
        let tr = simulate(&d, &perturbed, 200.0, 0.1, 0).map_err(|e| e.to_string())?;
        let back = dist(&tr.final_state, &r.ustar, &g) / r.norm;
        ok &= rep.linearized_bound < 0.0 && back <= 1e-4;
        details.push(format!(
            "nu={:.3},|F'|={:.3},maxRe={:.3e},return={back:.1e}",
            rep.nu, rep.fprime_norm, rep.linearized_bound
        ));
    }
    check(ok && tested >= 2, format!("{tested} instances with nu > |F'|: {}", details.join(" ")))
}

fn gateaux_limit() -> Outcome {
    let ing = with(
        base(),
        &[
            ("beta0", "3/(1+x)"),
            ("b0", "1/(1+x)"),
            ("beta1", "exp(-x)*(1+y)"),
            ("beta2", "1-0.5*x"),
            ("b2", "exp(-0.3*x)"),
            ("mu", "0.5"),
        ],
    );
    let d = discretize(&ing, 32);
    let g = d.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ok = true;
    let mut last = Vec::new();
    for _ in 0..10 {
        let v = random_positive_state(32, &mut rng);
        let df0 = gateaux_at_zero(d.samples(), &g, &v).unwrap();
        let errs: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&t| {
                let f = d.apply_f(&v.scaled(t)).unwrap().scaled(1.0 / t);
                dist(&f, &df0, &g)
            })
            .collect();
        ok &= errs[0] > errs[1] && errs[1] > errs[2];
        last = errs;
    }
    check(
        ok,
        format!("10 directions, errors decrease at t=1e-2,1e-4,1e-6 (last: {:.2e} {:.2e} {:.2e})", last[0], last[1], last[2]),
    )
}

fn decay_order() -> Outcome {
    let d = discretize(&with(base(), &[("mu", "0.5")]), 32);
    let g = d.grid().clone();
    let s0 = PopulationState::uniform(&g, 1.0, 1.0);
    let s0 = s0.scaled(1.0 / total_norm(&s0, &g).unwrap());
    let t_end = 2.0;
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let tr = simulate(&d, &s0, t_end, dt, 0).unwrap();
            (tr.norms.last().unwrap() - (-0.5 * t_end).exp()).abs()
        })
        .collect();
    // least-squares slope of log(err) against log(dt)
    let xs: Vec<f64> = dts.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    check(
        (0.8..=1.2).contains(&slope),
        format!("errors {:.3e} {:.3e} {:.3e} {:.3e}, fitted order {slope:.4}", errs[0], errs[1], errs[2], errs[3]),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id:>2} {name}: FAIL [{secs:.1}s] {detail}");
            }
        }
    };
    let t = Instant::now();
    report(1, "conservation", t, conservation());
    let t = Instant::now();
    report(2, "positivity", t, positivity());
    let t = Instant::now();
    let (oracle, positive_vec) = spectral_oracle();
    report(3, "spectral oracle equivalence", t, oracle);
    report(4, "perron eigenvector positivity", t, positive_vec);
    let t = Instant::now();
    report(5, "ray monotonicity", t, ray_monotonicity());
    let t = Instant::now();
    report(6, "steady-state residual and refinement", t, steady_residual());
    let t = Instant::now();
    report(7, "trivial-only detection", t, trivial_only());
    let t = Instant::now();
    report(8, "linearization correctness", t, linearization());
    let t = Instant::now();
    report(9, "sufficient condition consistency", t, sufficient_condition_consistency());
    let t = Instant::now();
    report(10, "gateaux limit", t, gateaux_limit());
    let t = Instant::now();
    report(11, "decay benchmark order", t, decay_order());
    if failures == 0 {
        println!("acceptance: 11/11 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 11 criteria failed");
        ExitCode::FAILURE
    }
}
