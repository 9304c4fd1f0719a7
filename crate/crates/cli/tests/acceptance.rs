//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any hard criterion fails.

use std::fs::File;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, DMatrix, DVector};
use quadcut::bnb::{self, BnbConfig, SolveStatus};
use quadcut::linalg;
use quadcut::model::{DomainKind, MiqpInstance};
use quadcut::relax::{self, CuttingSurfaceConfig, RelaxContext};
use quadcut::separation::{self, SeparationConfig, SeparationInput, StepQuantities};
use quadcut_cli::{
    evaluate_instance, generate_instance, relative_gap, root_gap, shifted_geomean, write_report,
    BatchOptions, Family,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Reported but not a hard failure.
    Soft(String),
}

fn example_q() -> DMatrix<f64> {
    dmatrix![0.0, 2.0; 2.0, -1.0]
}

fn example_input(eta: [f64; 2], rho: f64) -> SeparationInput {
    SeparationInput::new(example_q(), dmatrix![0.0, 1.0], 1.0, DVector::from_vec(eta.to_vec()), rho).unwrap()
}

fn shifted_example(d: &DVector<f64>) -> DMatrix<f64> {
    let input = example_input([0.0, 0.0], 1.0);
    let mut m = input.shifted_matrix();
    m[(0, 0)] += d[0];
    m[(1, 1)] += d[1];
    m
}

fn example_attained() -> Outcome {
    let start = Instant::now();
    let rho = 1e-4;
    let input = example_input([0.25, 0.25], rho);
    let res = separation::solve_smooth(&input, &SeparationConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let value = input.eta.dot(&res.d);
    let dist = (&res.d - DVector::from_element(2, 2.0)).amax();

    // grid oracle over [0, 10]²
    let steps = 400;
    let h = 10.0 / steps as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=steps {
        for j in 0..=steps {
            let d = DVector::from_vec(vec![i as f64 * h, j as f64 * h]);
            if linalg::min_eigenvalue(&shifted_example(&d)).unwrap() >= -1e-12 {
                let f = input.eta.dot(&d) + rho * d.norm_squared();
                if f < best.0 {
                    best = (f, d[0], d[1]);
                }
            }
        }
    }
    let ours = input.eta.dot(&res.d) + rho * res.d.norm_squared();
    let oracle_dist = (best.1 - 2.0f64).abs().max((best.2 - 2.0f64).abs());
    let ok = (0.95..=1.05).contains(&value)
        && dist <= 0.2
        && oracle_dist <= 0.2
        && ours <= best.0 * (1.0 + 1e-3)
        && res.restarts == 0
        && elapsed < Duration::from_secs(1);
    let msg = format!(
        "ηᵀd = {value:.6}, ‖d − (2,2)‖∞ = {dist:.4}, grid optimum {:.6} at ({:.3}, {:.3}), {:.1} ms",
        best.0,
        best.1,
        best.2,
        elapsed.as_secs_f64() * 1e3
    );
    if ok { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn example_unattained() -> Outcome {
    let start = Instant::now();
    let input = example_input([0.24, 0.0], 1e-8);
    let res = separation::solve_smooth(&input, &SeparationConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let prod = res.d[0] * res.d[1];
    let psd = linalg::psd_certificate(&shifted_example(&res.d), 1e-8);
    let ok = prod >= 4.0 * (1.0 - 1e-6)
        && res.restarts >= 1
        && psd
        && res.d.iter().all(|v| v.is_finite())
        && elapsed < Duration::from_secs(1);
    let msg = format!(
        "d = ({:.4}, {:.4}), d₁d₂ = {prod:.8}, restarts {}, final ρ {:e}, {:.1} ms",
        res.d[0],
        res.d[1],
        res.restarts,
        res.rho.unwrap_or(f64::NAN),
        elapsed.as_secs_f64() * 1e3
    );
    if ok { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn closed_form_step() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let total = 10_000;
    let mut failures = 0;
    let mut worst = 0.0_f64;
    let mut plain = 0;
    for _ in 0..total {
        let v = log_uniform(&mut rng, 1e-3, 1e3);
        let eta = if rng.gen_bool(0.1) { 0.0 } else { log_uniform(&mut rng, 1e-6, 1e2) };
        let rho = log_uniform(&mut rng, 1e-8, 1e2);
        let d = rng.gen_range(-1.0 / v..10.0 / v.min(1.0));
        let sigma = log_uniform(&mut rng, 1e-5, 1e2);
        let delta = StepQuantities::new(v, eta, rho, d, sigma).step();
        let denom = 1.0 + delta * v;
        let terms = [eta, 2.0 * rho * (d + delta), -sigma * v / denom];
        let resid: f64 = terms.iter().sum();
        let magnitude: f64 = terms.iter().map(|t| t.abs()).sum();
        // one rounding of Δ moves the residual by |Δ|·|∂r/∂Δ|·ε
        let sensitivity = delta.abs() * (2.0 * rho + sigma * v * v / (denom * denom));
        let rel = resid.abs() / (magnitude + sensitivity);
        worst = worst.max(rel);
        if resid.abs() <= 1e-10 * magnitude {
            plain += 1;
        }
        if !(denom > 0.0) || !(rel <= 1e-10) {
            failures += 1;
        }
    }
    let msg = format!(
        "{} / {total} tuples pass, worst relative residual {worst:e} ({plain} also pass without the sensitivity term)",
        total - failures
    );
    if failures == 0 { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

/// Seeded mix of the three families with `4 ≤ n ≤ 30`.
fn root_cases() -> Vec<(String, MiqpInstance)> {
    let sizes = [4, 6, 8, 10, 12, 16, 20, 24, 30];
    (0..50u64)
        .map(|s| {
            let fam = Family::ALL[(s % 3) as usize];
            let mut n = sizes[(s as usize * 7 + 3) % sizes.len()];
            if fam == Family::EqInteger && s % 2 == 0 {
                n = n.min(6);
            }
            let density = 0.3 + 0.7 * ((s * 37 % 11) as f64 / 10.0);
            let inst = generate_instance(fam, n, density, 1000 + s).unwrap();
            (format!("{}-n{n}-s{}", fam.name(), 1000 + s), inst)
        })
        .collect()
}

struct RootRun {
    name: String,
    inst: MiqpInstance,
    ctx: RelaxContext,
    alpha: f64,
    eig: f64,
    eigns: f64,
    result: Option<relax::CuttingSurfaceResult>,
}

fn run_roots() -> Vec<RootRun> {
    root_cases()
        .into_iter()
        .map(|(name, inst)| {
            let ctx = RelaxContext::new(&inst).unwrap();
            let alpha = relax::select_alpha(&inst).unwrap().alpha;
            let convex = relax::is_convex(&inst, &ctx).unwrap();
            let (eig, eigns, result) = if convex {
                let b = relax::solve_qp_child(&inst, &ctx, &DVector::zeros(inst.n())).unwrap().bound;
                (b, b, None)
            } else {
                let eig = relax::solve_eigenvalue_relaxation(&inst, &ctx, relax::eig_mu(&inst).unwrap().max(0.0))
                    .unwrap()
                    .bound;
                let cs = relax::cutting_surface(&inst, &ctx, alpha, &CuttingSurfaceConfig::default()).unwrap();
                (eig, cs.initial_bound, Some(cs))
            };
            RootRun {
                name,
                inst,
                ctx,
                alpha,
                eig,
                eigns,
                result,
            }
        })
        .collect()
}

/// Hit-and-run step inside `{Ax = b, L ≤ x ≤ U}`.
fn polytope_sample(rng: &mut ChaCha8Rng, inst: &MiqpInstance, ctx: &RelaxContext, x: &mut DVector<f64>) {
    let k = ctx.basis.dim();
    if k == 0 {
        return;
    }
    let r = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
    let u = &ctx.basis.z * r;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..inst.n() {
        if u[i].abs() < 1e-14 {
            continue;
        }
        let a = (inst.domains[i].lower - x[i]) / u[i];
        let b = (inst.domains[i].upper - x[i]) / u[i];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    if hi > lo {
        let t = rng.gen_range(lo..=hi);
        *x += u * t;
        for i in 0..inst.n() {
            x[i] = x[i].clamp(inst.domains[i].lower, inst.domains[i].upper);
        }
    }
}

/// Feasible points of the lifted problem: binaries at 0/1 with the
/// cardinality row satisfied, other variables from the polytope.
fn feasible_samples(inst: &MiqpInstance, ctx: &RelaxContext, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = inst.n();
    let binary = inst.domains.iter().all(|d| d.kind == DomainKind::Binary);
    let mut x = ctx.feasible_point.clone();
    (0..count)
        .map(|_| {
            if binary {
                let k = if inst.m() > 0 { inst.b[0].round() as usize } else { rng.gen_range(0..=n) };
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..n {
                    let j = rng.gen_range(i..n);
                    idx.swap(i, j);
                }
                let mut p = DVector::zeros(n);
                for &i in &idx[..k] {
                    p[i] = 1.0;
                }
                (p.clone(), p)
            } else {
                polytope_sample(&mut rng, inst, ctx, &mut x);
                let y = DVector::from_iterator(
                    n,
                    inst.domains.iter().enumerate().map(|(i, d)| {
                        if d.has_affine_lower() {
                            inst.hull[i].upper(x[i])
                        } else {
                            x[i] * x[i]
                        }
                    }),
                );
                (x.clone(), y)
            }
        })
        .collect()
}

fn cut_validity(runs: &[RootRun]) -> Outcome {
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut worst = 0.0_f64;
    for (r_idx, run) in runs.iter().enumerate() {
        let Some(cs) = &run.result else { continue };
        let samples = feasible_samples(&run.inst, &run.ctx, 1000, 77 + r_idx as u64);
        for d in &cs.pool.cuts {
            for (x, y) in &samples {
                let v = x.dot(&(&run.inst.quad * x));
                let mut p = run.inst.quad.clone();
                for i in 0..d.len() {
                    p[(i, i)] += d[i];
                }
                let rhs = x.dot(&(&p * x)) - d.dot(y);
                let excess = rhs - v;
                checked += 1;
                if excess > 1e-8 * (1.0 + v.abs()) {
                    violations += 1;
                    worst = worst.max(excess);
                }
            }
        }
    }
    let msg = format!("{checked} point/cut checks, {violations} violations (worst {worst:e})");
    if violations == 0 && checked > 0 { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn convexity_certificates(runs: &[RootRun]) -> Outcome {
    let mut total = 0;
    let mut bad = 0;
    let mut worst = f64::INFINITY;
    for run in runs {
        let Some(cs) = &run.result else { continue };
        for sep in &cs.separations {
            let mut p = run.inst.quad.clone();
            for i in 0..sep.d.len() {
                p[(i, i)] += sep.d[i];
            }
            let lam = linalg::projected_min_eigenvalue(&p, &run.ctx.basis).unwrap();
            worst = worst.min(lam);
            total += 1;
            if lam < -1e-6 {
                bad += 1;
            }
        }
    }
    let msg = format!("{total} separated perturbations, {bad} below −1e-6 (smallest projected eigenvalue {worst:e})");
    if bad == 0 && total > 0 { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn discrete_points(inst: &MiqpInstance) -> Option<f64> {
    if inst.domains.iter().any(|d| d.kind == DomainKind::Interval) {
        return None;
    }
    Some(inst.domains.iter().map(|d| match d.kind {
        DomainKind::IntegerRange => d.width() + 1.0,
        _ => 2.0,
    }).product())
}

fn bound_chain(runs: &[RootRun]) -> Outcome {
    let mut failures = Vec::new();
    let mut oracle_checked = 0;
    for run in runs {
        let slack = |b: f64| 1e-9 * b.abs().max(1.0);
        let final_bound = run.result.as_ref().map_or(run.eigns, |c| c.bound);
        if final_bound < run.eigns - slack(run.eigns) {
            failures.push(format!("{}: cutting {final_bound} < eigns {}", run.name, run.eigns));
        }
        if run.inst.m() > 0 && run.eigns < run.eig - slack(run.eig) {
            failures.push(format!("{}: eigns {} < eig {}", run.name, run.eigns, run.eig));
        }
        let small = match discrete_points(&run.inst) {
            Some(c) => c <= 4096.0,
            None => run.inst.n() <= 4 && run.inst.m() == 0,
        };
        if small {
            if let Some((opt, _)) = bnb::brute_force_oracle(&run.inst).unwrap() {
                oracle_checked += 1;
                if final_bound > opt + 1e-7 * opt.abs().max(1.0) {
                    failures.push(format!("{}: bound {final_bound} above optimum {opt}", run.name));
                }
            }
        }
    }
    let _ = runs.iter().map(|r| r.alpha).count();
    let msg = format!(
        "{} instances, {oracle_checked} against enumeration, {} violations{}",
        runs.len(),
        failures.len(),
        failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
    );
    if failures.is_empty() && oracle_checked > 0 { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn eigenvalue_limit() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = 0;
    let mut worst = 0.0_f64;
    let cases = 50;
    for c in 0..cases {
        let n = if c % 5 == 0 { 100 } else { rng.gen_range(3..=60) };
        let m = rng.gen_range(1..n.min(10));
        let mut q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-10.0..10.0));
        q = (&q + q.transpose()) * 0.5;
        if c % 4 == 0 {
            // make Q convex on the nullspace: Q = BᵀB − s AᵀA
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            q = b.tr_mul(&b);
        }
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-3.0..3.0));
        if c % 4 == 0 {
            q -= a.tr_mul(&a) * 2.0;
        }
        let basis = linalg::nullspace_basis(&a).unwrap();
        let target = (-linalg::projected_min_eigenvalue(&q, &basis).unwrap()).max(0.0);
        let mu = relax::mu_of_alpha(&q, &a, 1e8).unwrap();
        let err = (mu - target).abs() / target.abs().max(1.0);
        worst = worst.max(err);
        if err > 1e-4 {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    let msg = format!(
        "{}/{cases} within 1e-4, worst relative error {worst:e}, {:.2} s",
        cases - failures,
        elapsed.as_secs_f64()
    );
    if failures == 0 && elapsed < Duration::from_secs(10) { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn bnb_exactness() -> Outcome {
    let start = Instant::now();
    let cfg = BnbConfig {
        rel_tol: 0.0,
        abs_tol: 1e-7,
        ..Default::default()
    };
    let mut mismatches = Vec::new();
    let mut total_nodes = 0;
    let count = 200;
    for s in 0..count as u64 {
        let (fam, n) = if s % 2 == 0 {
            (Family::BinaryCard, 4 + (s as usize / 2) % 9)
        } else {
            (Family::EqInteger, 4 + (s as usize / 2) % 7)
        };
        let density = 0.4 + 0.6 * ((s % 7) as f64 / 6.0);
        let inst = generate_instance(fam, n, density, 5000 + s).unwrap();
        let oracle = bnb::brute_force_oracle(&inst).unwrap();
        let rep = bnb::solve(&inst, &cfg);
        total_nodes += rep.nodes;
        let ok = match oracle {
            Some((opt, _)) => {
                rep.status == SolveStatus::Optimal
                    && (rep.upper_bound - opt).abs() <= 1e-6
                    && rep.lower_bound <= rep.upper_bound + 1e-9
            }
            None => rep.status == SolveStatus::Infeasible,
        };
        if !ok {
            mismatches.push(format!(
                "{}-n{n}-s{}: status {} ubd {} lbd {} oracle {:?}",
                fam.name(),
                5000 + s,
                rep.status,
                rep.upper_bound,
                rep.lower_bound,
                oracle.map(|o| o.0)
            ));
        }
    }
    let elapsed = start.elapsed();
    let msg = format!(
        "{}/{count} match enumeration, {total_nodes} nodes, {:.1} s{}",
        count - mismatches.len(),
        elapsed.as_secs_f64(),
        mismatches.first().map(|f| format!(" (first mismatch: {f})")).unwrap_or_default()
    );
    if mismatches.is_empty() && elapsed < Duration::from_secs(300) { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn smooth_vs_nonsmooth() -> Outcome {
    let opts = BatchOptions::default();
    let mut rows = Vec::new();
    for s in 0..102u64 {
        let fam = Family::ALL[(s % 3) as usize];
        let n = [6, 8, 10, 12, 15, 20][(s as usize / 3) % 6];
        let density = 0.3 + 0.7 * ((s * 13 % 9) as f64 / 8.0);
        let inst = generate_instance(fam, n, density, 9000 + s).unwrap();
        let id = format!("{}-n{n}-s{}", fam.name(), 9000 + s);
        rows.push(evaluate_instance(&id, &inst, None, &opts));
    }
    let compared: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.qcp_sreg?, r.qcp_nsreg?)))
        .collect();
    let wins = compared
        .iter()
        .filter(|(s, ns)| *s >= *ns - 1e-9 * ns.abs().max(1.0))
        .count();
    let share = wins as f64 / compared.len().max(1) as f64;
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("smooth_vs_nonsmooth.csv");
    let written = File::create(&path).ok().and_then(|f| write_report(&rows, f).ok()).is_some();
    let msg = format!(
        "smooth ≥ nonsmooth on {wins}/{} instances ({:.1}%); distribution in {}{}",
        compared.len(),
        100.0 * share,
        path.display(),
        if written { "" } else { " (write failed)" }
    );
    if compared.len() >= 100 && share >= 0.6 {
        Outcome::Pass(msg)
    } else if compared.len() >= 100 && share >= 0.4 {
        Outcome::Soft(msg)
    } else {
        Outcome::Fail(msg)
    }
}

fn metric_formulas() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let checks = [
        close(root_gap(-10.0, -12.0, -20.0).unwrap(), 20.0),
        close(root_gap(-10.0, -10.0, -20.0).unwrap(), 0.0),
        close(root_gap(-10.0, -20.0, -20.0).unwrap(), 100.0),
        root_gap(-20.0, -15.0, -20.0).is_none(),
        close(relative_gap(-12.0, -10.0), 100.0 / 6.0),
        close(relative_gap(-7.5, -7.5), 0.0),
        close(relative_gap(0.0, 1.0), 100_000.0),
        close(shifted_geomean(&[1.0, 10.0], 1.0).unwrap(), 22f64.sqrt() - 1.0),
        close(shifted_geomean(&[4.25, 4.25, 4.25], 1.0).unwrap(), 4.25),
        close(shifted_geomean(&[0.0, 0.0], 10.0).unwrap(), 0.0),
        shifted_geomean(&[], 1.0).is_err(),
    ];
    let passed = checks.iter().filter(|&&c| c).count();
    let msg = format!("{passed}/{} metric examples reproduced", checks.len());
    if passed == checks.len() { Outcome::Pass(msg) } else { Outcome::Fail(msg) }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let what = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Outcome::Fail(format!("panicked: {what}"))
        }
    }
}

fn main() {
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |k: usize| filter.is_empty() || filter.contains(&k);

    let mut outcomes: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |k: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(k) {
            let t = Instant::now();
            let o = guarded(f);
            let (tag, msg) = match &o {
                Outcome::Pass(m) => ("PASS", m),
                Outcome::Fail(m) => ("FAIL", m),
                Outcome::Soft(m) => ("REPORTED", m),
            };
            println!("criterion {k:>2} [{tag}] {name}: {msg} ({:.2} s)", t.elapsed().as_secs_f64());
            outcomes.push((k, name, o));
        }
    };

    record(1, "separation anchor, attained case", &mut example_attained);
    record(2, "separation anchor, unattained case", &mut example_unattained);
    record(3, "closed-form coordinate step", &mut closed_form_step);
    if wanted(4) || wanted(5) || wanted(6) {
        let runs = guarded_runs();
        match runs {
            Ok(runs) => {
                record(4, "cut validity", &mut || cut_validity(&runs));
                record(5, "convexity certificates", &mut || convexity_certificates(&runs));
                record(6, "bound chain", &mut || bound_chain(&runs));
            }
            Err(msg) => {
                for (k, name) in [(4, "cut validity"), (5, "convexity certificates"), (6, "bound chain")] {
                    record(k, name, &mut || Outcome::Fail(msg.clone()));
                }
            }
        }
    }
    record(7, "eigenvalue limit", &mut eigenvalue_limit);
    record(8, "branch-and-bound exactness", &mut bnb_exactness);
    record(9, "smooth versus nonsmooth separation", &mut smooth_vs_nonsmooth);
    record(10, "metric formulas", &mut metric_formulas);

    let hard = outcomes.iter().filter(|(_, _, o)| matches!(o, Outcome::Fail(_))).count();
    println!("acceptance: {} criteria run, {hard} failed", outcomes.len());
    if hard > 0 {
        std::process::exit(1);
    }
}

fn guarded_runs() -> Result<Vec<RootRun>, String> {
    let t = Instant::now();
    let r = panic::catch_unwind(run_roots).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    });
    println!("root relaxations for criteria 4-6 computed in {:.2} s", t.elapsed().as_secs_f64());
    r
}
