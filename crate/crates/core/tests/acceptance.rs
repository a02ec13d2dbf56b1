//! Acceptance checks, one line per criterion. Exits nonzero if any fails.

use std::time::{Duration, Instant};

use lfbp_core::asymcheck::{self, LimitDiagnostic};
use lfbp_core::cfrac::{self, CfCoeffs};
use lfbp_core::env::{EnvFamily, Fixture, Params};
use lfbp_core::extinct::{self, Verdict};
use lfbp_core::mcsim;
use lfbp_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)
}

fn star_survival(n: usize) -> f64 {
    1.0 / (2f64.powi(n as i32 + 1) - 1.0)
}

fn all_fixtures() -> impl Iterator<Item = (Fixture, EnvFamily)> {
    Fixture::ALL.into_iter().map(|f| (f, f.build()))
}

fn ac1() -> Result<Outcome> {
    let t = Instant::now();
    let env = Fixture::EStar.build();
    let mut worst: f64 = 0.0;
    for n in 0..=30 {
        let exact = star_survival(n);
        for s in [extinct::survival_backward(&env, n)?, extinct::survival_matrix(&env, n)?] {
            worst = worst.max(rel(s.s1, exact)).max(rel(s.s2, exact));
        }
    }
    let dt = t.elapsed();
    Ok(Outcome::new(
        worst <= 1e-12 && dt < Duration::from_secs(1),
        format!("max rel err {worst:.3e} (tol 1e-12), {dt:.2?} (limit 1 s)"),
    ))
}

fn ac2() -> Result<Outcome> {
    let env = Fixture::EStar.build();
    let grid: Vec<usize> = (1..=40).collect();
    let curve = extinct::extinction_curve(&env, &grid)?;
    let mut kdev: f64 = 0.0;
    let mut vdev: f64 = 0.0;
    let mut at20 = f64::NAN;
    for r in &curve.rows {
        kdev = kdev.max((r.kappa1_hat - 1.0).abs()).max((r.kappa2_hat - 1.0).abs());
        let t = 2f64.powi(r.n as i32);
        let expect = (2.0 * t - 1.0) / (t - 1.0);
        vdev = vdev.max(rel(r.varkappa1_hat, expect)).max(rel(r.varkappa2_hat, expect));
        if r.n == 20 {
            at20 = (r.varkappa1_hat - 2.0).abs().max((r.varkappa2_hat - 2.0).abs());
        }
    }
    Ok(Outcome::new(
        kdev <= 1e-12 && vdev <= 1e-9 && at20 <= 1e-4,
        format!("|κ̂−1| ≤ {kdev:.3e}; ϰ̂ vs closed form {vdev:.3e}; |ϰ̂(20)−2| = {at20:.3e}"),
    ))
}

fn ac3() -> Result<Outcome> {
    let mut surv: f64 = 0.0;
    let mut gdev: f64 = 0.0;
    let mut notes = Vec::new();
    for (f, env) in all_fixtures() {
        for n in 0..=300 {
            let b = extinct::survival_backward(&env, n)?;
            let m = extinct::survival_matrix(&env, n)?;
            surv = surv.max(rel(m.s1, b.s1)).max(rel(m.s2, b.s2));
        }
        match extinct::g_sequences(&env, 100) {
            Ok(g) => gdev = gdev.max(g.max_g2_dev),
            Err(e) => notes.push(format!("{f}: {e}")),
        }
    }
    Ok(Outcome::new(
        surv <= 1e-9 && gdev <= 1e-10 && notes.is_empty(),
        format!("survival rel {surv:.3e} (tol 1e-9); G₂ direct vs recursion {gdev:.3e} (tol 1e-10) {notes:?}"),
    ))
}

fn ac4() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for f in [Fixture::EStar, Fixture::ETriUp, Fixture::ETriDown] {
        let env = f.build();
        let g = extinct::g_sequences(&env, 200)?;
        let lim = g.g_limit.unwrap_or(f64::NAN);
        let d = (g.g1[199] - lim).abs().max((g.g2[199] - lim).abs());
        worst = worst.max(d);
        parts.push(format!("{f} G={lim:.6} dev {d:.2e}"));
    }
    let deg = Fixture::EDeg.build();
    let g = extinct::g_sequences(&deg, 200)?;
    let dz = g.g1[199].abs().max(g.g2[199].abs());
    let grid = extinct::doubling_grid(1024);
    let c = extinct::estimate_constants(&deg, &grid[1..])?;
    let vanishing = c.varkappa.iter().all(|v| v.verdict == Verdict::Vanishing);
    Ok(Outcome::new(
        worst.is_finite() && worst < 1e-6 && dz < 1e-6 && vanishing,
        format!("{}; E_deg |G_200| = {dz:.2e}, ϰ̂ vanishing: {vanishing}", parts.join(", ")),
    ))
}

fn ac5() -> Result<Outcome> {
    let (mut bridge, mut em, mut inc): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (_, env) in all_fixtures() {
        for n in 1..=200 {
            for b in cfrac::bridge_column(&env, n)? {
                bridge = bridge.max(b.residual);
            }
        }
        let c = CfCoeffs::product_ratio(&env);
        for k in [1, 2, 5, 20, 100] {
            let emk = cfrac::euler_minding(&c, k, 200)?;
            let xs: Vec<f64> = (k..=200).map(|n| cfrac::approximant(&c, k, n)).collect::<Result<_>>()?;
            for n in [k, k + 1, 50.max(k), 200] {
                let v = cfrac::euler_minding(&c, k, n)?.value().unwrap();
                em = em.max((v - xs[n - k]).abs());
            }
            for (j, d) in emk.increments.iter().enumerate() {
                inc = inc.max((d - (xs[j + 1] - xs[j])).abs());
            }
        }
    }
    Ok(Outcome::new(
        bridge <= 1e-12 && em <= 1e-12 && inc <= 1e-12,
        format!("bridge {bridge:.3e}, C/D {em:.3e}, increments {inc:.3e} (tol 1e-12)"),
    ))
}

fn ac6() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for f in [Fixture::EMinus, Fixture::ETriDown] {
        let r = asymcheck::mi_dxr_report(&f.build(), 200, 200)?;
        let ok_ratio = f != Fixture::EMinus || r.r_hat <= 0.4 + 1e-6;
        pass &= r.monotonicity_violations == 0 && r.bound_violations == 0 && ok_ratio;
        parts.push(format!(
            "{f}: monotonicity {} bound {} r̂ {:.6}",
            r.monotonicity_violations, r.bound_violations, r.r_hat
        ));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn finite_nonzero(d: &LimitDiagnostic) -> bool {
    d.stabilized && d.variation < 1e-3 && d.limit_estimate.is_finite() && d.limit_estimate.abs() > 1e-8
}

fn ac7() -> Result<Outcome> {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for f in [Fixture::ETriUp, Fixture::ETriDown] {
        let env = f.build();
        let mut ds = Vec::new();
        for (i, j) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            ds.push(asymcheck::mpr_constant(&env, 1, i, j, 1000)?);
        }
        ds.push(asymcheck::thm_s_ratio(&env, 1000)?);
        let xias = asymcheck::xias_ratios(&env, 1000)?;
        let mpr11 = ds[0].clone();
        ds.extend(xias.iter().cloned());
        let bad: Vec<&str> = ds.iter().filter(|d| !finite_nonzero(d)).map(|d| d.name.as_str()).collect();
        let mut link: f64 = 0.0;
        for (n, r) in &xias[0].sequence {
            if let Some((_, c)) = mpr11.sequence.iter().find(|(m, _)| m == n) {
                link = link.max((r * c - 1.0).abs());
            }
        }
        pass &= bad.is_empty() && link <= 1e-8;
        parts.push(format!("{f}: unstable {bad:?}, |r₁·mpr−1| ≤ {link:.2e}"));
    }
    let dt = t.elapsed();
    pass &= dt < Duration::from_secs(30);
    Ok(Outcome::new(pass, format!("{}; {dt:.2?} (limit 30 s)", parts.join("; "))))
}

fn ac8() -> Result<Outcome> {
    let mut violations = 0;
    for (_, env) in all_fixtures() {
        for k in [1, 10] {
            violations += asymcheck::rfm_bound(&env, k, k + 200)?.violations.len();
        }
    }
    let env = Fixture::EStar.build();
    let [ral, _] = asymcheck::ral_ff_limits(&env, 1, 200)?;
    let reference = ral.reference.unwrap_or(f64::NAN);
    let d = (ral.limit_estimate - reference).abs();
    Ok(Outcome::new(
        violations == 0 && d <= 1e-8 && (reference - 1.4).abs() <= 1e-8,
        format!("rfm violations {violations}; ral {:.12} vs 1+bϱ⁻¹ξ {reference:.12}", ral.limit_estimate),
    ))
}

fn ac9() -> Result<Outcome> {
    let t = Instant::now();
    let env = Fixture::EStar.build();
    let horizons = [1, 2, 5, 10];
    let reps = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut runs = Vec::new();
    for ty in [1, 2] {
        let r = mcsim::run(&env, ty, &horizons, reps, 20260101)?;
        for row in r.rows() {
            let exact = star_survival(row.horizon);
            let z = (row.p_hat - exact).abs() / mcsim::standard_error(exact, reps);
            worst = worst.max(z);
        }
        runs.push(r);
    }
    let mut mz: f64 = 0.0;
    for ty in [1, 2] {
        let m = mcsim::moment_check(&env, 1, ty, reps, 7)?;
        for i in 0..2 {
            mz = mz.max((m.mean[i] - m.expected[i]).abs() / m.standard_error[i]);
        }
    }
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool");
    let serial = one.install(|| mcsim::run(&env, 1, &horizons, reps, 20260101))?;
    let deterministic = serial == runs[0];
    let dt = t.elapsed();
    Ok(Outcome::new(
        worst < 4.0 && mz < 4.0 && deterministic && dt < Duration::from_secs(60),
        format!(
            "survival max |z| {worst:.2}, means max |z| {mz:.2}, 1-thread replay identical: {deterministic}, {dt:.2?} (limit 60 s)"
        ),
    ))
}

fn ac10() -> Result<Outcome> {
    let mut rejected = Vec::new();
    for (f, env) in all_fixtures() {
        for k in 1..=50 {
            if let Err(e) = mcsim::validate_pgf(&env, k, 50) {
                rejected.push(format!("{f} k={k}: {e}"));
                break;
            }
        }
    }
    let crafted = EnvFamily::constant(Params::new(0.5, 0.5, 0.01, 1.5))?;
    let crafted_rejected = mcsim::validate_pgf(&crafted, 1, 50).is_err();
    Ok(Outcome::new(
        rejected.is_empty() && crafted_rejected,
        format!("crafted set rejected: {crafted_rejected}; fixtures rejected: {rejected:?}"),
    ))
}

type Check = fn() -> Result<Outcome>;

fn main() {
    let checks: [(&str, Check); 10] = [
        ("AC1 closed-form survival curve", ac1),
        ("AC2 constants on E_star", ac2),
        ("AC3 cross-method agreement", ac3),
        ("AC4 G limits and degenerate case", ac4),
        ("AC5 continued-fraction identities", ac5),
        ("AC6 signed-coefficient monotonicity", ac6),
        ("AC7 ratio limits and cross-link", ac7),
        ("AC8 eigenvector bounds and ral limit", ac8),
        ("AC9 Monte Carlo oracle", ac9),
        ("AC10 pgf validity", ac10),
    ];
    let mut failed = 0;
    for (name, f) in checks {
        let o = f().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
