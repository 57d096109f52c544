//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stdout (not captured by the test harness).

use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use pzd_cli::{cmd_capacity, run_mc, RunConfig};
use pzd_core::bounds_audit::{audit_all, default_constellations, render_table, scrambled_halton};
use pzd_core::channel::{make_expansion, rician_pdf, ChannelParams, PolarPoint};
use pzd_core::constellation::{ConstraintSet, CostFunction, RingConstellation};
use pzd_core::infomath::{expansion_for, mutual_information, GridSpec, QuadratureGrid};
use pzd_core::montecarlo::{mc_mutual_information, SimConfig};
use pzd_core::optimizer::{solver_for, CapacitySolver, SolveConfig, Solution};
use pzd_core::quad::composite;

const SEED: u64 = 20_240_917;

fn report(n: u32, pass: bool, elapsed: Duration, limit: Duration, detail: &str) -> bool {
    let ok = pass && elapsed <= limit;
    let line = format!(
        "criterion {n}: {} ({:.1} s, limit {} s) {detail}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    ok
}

fn unit() -> ChannelParams {
    ChannelParams::new(1.0, 1.0, 1.0).unwrap()
}

struct Peak {
    solver: CapacitySolver,
    solution: Solution,
    elapsed: Duration,
}

fn peak3() -> &'static Peak {
    static CELL: OnceLock<Peak> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let solver = solver_for(unit(), &ConstraintSet::peak(3.0).unwrap(), &SolveConfig::default()).unwrap();
        let solution = solver.solve().unwrap();
        Peak {
            solver,
            solution,
            elapsed: t.elapsed(),
        }
    })
}

fn quartic(a: f64) -> ConstraintSet {
    ConstraintSet::average(CostFunction::PowerLaw { q: 4.0 }, a).unwrap()
}

#[test]
fn criterion_1_gaussian_limit() {
    let t = Instant::now();
    let p = ChannelParams::new(0.0, 1.0, 1.0).unwrap();
    let (r0, phi0) = (2.0, 0.7);
    let r_max = 10.0;
    let exp = make_expansion(p, 1e-12, r_max, r0).unwrap();
    let x0 = PolarPoint::new(r0, phi0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..64 {
        let r = r_max * (i as f64 + 0.5) / 64.0;
        for j in 0..64 {
            let phi = TAU * j as f64 / 64.0;
            let got = exp.joint_pdf(PolarPoint { r, phi }, x0).unwrap();
            let want = r / PI * (-(r * r + r0 * r0 - 2.0 * r * r0 * (phi - phi0).cos())).exp();
            worst = worst.max((got - want).abs());
        }
    }
    let ok = report(
        1,
        worst <= 1e-9,
        t.elapsed(),
        Duration::from_secs(10),
        &format!("max |series - Gaussian polar| = {worst:.3e} on 64x64, M = {}", exp.truncation_m),
    );
    assert!(ok);
}

#[test]
fn criterion_2_normalization_and_marginal() {
    let t = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for &gamma in &[0.2, 1.0, 5.0] {
        let p = ChannelParams::new(gamma, 1.0, 1.0).unwrap();
        let exp = make_expansion(p, 1e-12, 11.0, 3.0).unwrap();
        // an equispaced phase rule with more nodes than 2M integrates the series exactly
        let n = 2 * exp.truncation_m + 8;
        let phases: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
        let ring = |r: f64, r0: f64| -> f64 {
            let slice = exp.radial_slice(r, r0).unwrap();
            phases.iter().map(|&phi| slice.density(phi - 0.4)).sum::<f64>() * TAU / n as f64
        };
        let nodes = composite(0.0, 11.0, 176, 16);
        let mut worst_mass: f64 = 0.0;
        for &r0 in &[0.0, 0.5, 2.0, 3.0] {
            let mass: f64 = nodes.iter().map(|&(r, w)| w * ring(r, r0)).sum();
            worst_mass = worst_mass.max((mass - 1.0).abs());
        }
        let mut worst_marg: f64 = 0.0;
        for q in scrambled_halton(1000, 2, SEED) {
            let (r, r0) = (q[0] * 11.0, q[1] * 3.0);
            worst_marg = worst_marg.max((ring(r, r0) - rician_pdf(1.0, r, r0)).abs());
        }
        let bound = TAU * exp.tail_bound;
        ok &= worst_mass <= 1e-8 && worst_marg <= bound;
        detail.push_str(&format!(
            "[gamma {gamma}: |mass - 1| {worst_mass:.2e}, marginal err {worst_marg:.2e} <= {bound:.2e}] "
        ));
    }
    assert!(report(2, ok, t.elapsed(), Duration::from_secs(60), &detail));
}

#[test]
fn criterion_3_appendix_audit() {
    let t = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for &gamma in &[1.0, 5.0] {
        let p = ChannelParams::new(gamma, 1.0, 1.0).unwrap();
        let exp = expansion_for(p, 1e-12, 3.0, &GridSpec::default()).unwrap();
        let res = audit_all(&exp, &default_constellations(3.0), 10_000, SEED).unwrap();
        let wanted: Vec<_> = res
            .iter()
            .filter(|r| ["3-", "4-", "5-", "C-"].iter().any(|p| r.lemma_id.starts_with(p)))
            .collect();
        let failures = wanted.iter().filter(|r| !r.pass).count();
        let checked: usize = wanted.iter().map(|r| r.points_checked).sum();
        ok &= failures == 0;
        detail.push_str(&format!("[gamma {gamma}: {} checks, {checked} points, {failures} failures] ", wanted.len()));
        if failures > 0 {
            eprintln!("{}", render_table(&res));
        }
    }
    assert!(report(3, ok, t.elapsed(), Duration::from_secs(120), &detail));
}

/// `I(X;Y)` of the AWGN channel with uniform-phase rings by Cartesian midpoint quadrature.
fn awgn_ring_mi(radii: &[f64], probs: &[f64]) -> f64 {
    let half = 12.0;
    let n = 1200;
    let h = 2.0 * half / n as f64;
    let m = 128;
    let trig: Vec<(f64, f64)> = (0..m).map(|j| (TAU * j as f64 / m as f64).sin_cos()).collect();
    let mut hy = 0.0;
    for i in 0..n {
        let x = -half + (i as f64 + 0.5) * h;
        for j in 0..n {
            let y = -half + (j as f64 + 0.5) * h;
            let mut dens = 0.0;
            for (&r0, &p) in radii.iter().zip(probs) {
                let ang: f64 = trig
                    .iter()
                    .map(|&(s, c)| (-((x - r0 * c).powi(2) + (y - r0 * s).powi(2))).exp())
                    .sum();
                dens += p * ang / (m as f64 * PI);
            }
            if dens > 0.0 {
                hy -= dens * dens.ln() * h * h;
            }
        }
    }
    hy - (PI * std::f64::consts::E).ln()
}

#[test]
fn criterion_4_mi_cross_validation() {
    let peak = peak3();
    let t = Instant::now();
    let sol = &peak.solution;
    let exp = peak.solver.expansion();
    let sim = SimConfig::new(unit(), 1_000_000, SEED).unwrap();
    let mc = mc_mutual_information(&sim, exp, &sol.constellation).unwrap();
    let z = mc.estimate.z_score(sol.mi.mi);

    let p0 = ChannelParams::new(0.0, 1.0, 1.0).unwrap();
    let exp0 = expansion_for(p0, 1e-12, 3.0, &GridSpec::default()).unwrap();
    let grid0 = QuadratureGrid::new(&exp0, &GridSpec::default()).unwrap();
    let c0 = RingConstellation::new(vec![0.0, 3.0], vec![0.5, 0.5]).unwrap();
    let quad0 = mutual_information(&exp0, &c0, &grid0).unwrap().mi;
    let oracle0 = awgn_ring_mi(&[0.0, 3.0], &[0.5, 0.5]);
    let ok = z <= 3.0 && (quad0 - oracle0).abs() <= 1e-4;
    let detail = format!(
        "MC {:.6} +/- {:.6} vs quadrature {:.6} ({z:.2} SE, {} discarded); gamma=0 two-ring {quad0:.7} vs Cartesian {oracle0:.7}",
        mc.estimate.mean, mc.estimate.stderr, sol.mi.mi, mc.discarded
    );
    assert!(report(4, ok, t.elapsed() + peak.elapsed, Duration::from_secs(300), &detail));
}

#[test]
fn criterion_5_kkt_certification() {
    let peak = peak3();
    let k = &peak.solution.kkt;
    let residual = k.mass_point_residuals.iter().cloned().fold(0.0, f64::max);
    let mut vacuous = 0;
    let mut above = 0;
    for s in &k.samples {
        match s.envelope_upper {
            Some(u) if s.lhs > u => above += 1,
            Some(_) => {}
            None => vacuous += 1,
        }
    }
    let ok = k.certified && k.worst_violation >= -1e-3 && residual <= 1e-3 && above == 0;
    let detail = format!(
        "certified {}, worst violation {:.3e}, max residual {residual:.3e}, {} rings, upper envelope: {above} violations, {vacuous}/{} points vacuous (xi >= 1)",
        k.certified,
        k.worst_violation,
        peak.solution.constellation.len(),
        k.samples.len()
    );
    assert!(report(5, ok, peak.elapsed, Duration::from_secs(600), &detail));
}

#[test]
fn criterion_6_ring_count_plateau() {
    let peak = peak3();
    let t = Instant::now();
    let mis: Vec<f64> = (1..=9)
        .map(|n| {
            let c = peak.solver.optimize_radii(n).unwrap();
            peak.solver.table_mi(&c).unwrap()
        })
        .collect();
    let n_star = (1..=8).find(|&n| mis[n] - mis[n - 1] < 1e-5);
    let rings = peak.solution.constellation.len();
    let ok = n_star.is_some_and(|n| rings <= n);
    let gains: Vec<String> = mis.windows(2).map(|w| format!("{:.1e}", w[1] - w[0])).collect();
    let detail = format!(
        "mi(1..9) = {:?}, gains [{}], n* = {n_star:?}, certified rings {rings}",
        mis.iter().map(|v| (v * 1e7).round() / 1e7).collect::<Vec<_>>(),
        gains.join(", ")
    );
    assert!(report(6, ok, t.elapsed() + peak.elapsed, Duration::from_secs(900), &detail));
}

#[test]
fn criterion_7_average_cost() {
    let t = Instant::now();
    let solver = solver_for(unit(), &quartic(4.0), &SolveConfig::default()).unwrap();
    let sol = solver.solve().unwrap();
    let k = &sol.kkt;
    let c = &sol.constellation;
    let slack = k.slackness_residuals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let pts: Vec<f64> = (0..50).map(|i| k.r0_range * i as f64 / 49.0).collect();
    let dens = solver.information_density(c, &pts).unwrap();
    let mut below = 0;
    let mut margin = f64::INFINITY;
    for (&r0, d) in pts.iter().zip(&dens) {
        let lhs = k.capacity - d + k.nu * (r0.powi(4) - 4.0);
        let env = solver.lhs_envelopes(c, &[k.nu], k.capacity, r0);
        margin = margin.min(lhs - env.lower);
        if lhs < env.lower {
            below += 1;
        }
    }
    let ok = k.certified && k.nu > 0.0 && slack <= 1e-3 && below == 0;
    let detail = format!(
        "certified {}, capacity {:.6}, nu {:.4e}, slackness {slack:.2e}, E C = {:.6}, {} rings, LHS - lower envelope >= {margin:.3} at 50 points",
        k.certified,
        k.capacity,
        k.nu,
        c.expected_cost(&CostFunction::PowerLaw { q: 4.0 }),
        c.len()
    );
    assert!(report(7, ok, t.elapsed(), Duration::from_secs(600), &detail));
}

#[test]
fn criterion_8_monotone_sweeps() {
    let t = Instant::now();
    let cfg = SolveConfig::default();
    let by_rho: Vec<f64> = [0.5, 1.0, 2.0, 3.0]
        .iter()
        .map(|&rho| {
            solver_for(unit(), &ConstraintSet::peak(rho).unwrap(), &cfg).unwrap().solve().unwrap().mi.mi
        })
        .collect();
    let by_a: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&a| solver_for(unit(), &quartic(a), &cfg).unwrap().solve().unwrap().mi.mi)
        .collect();
    let mono = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    let ok = mono(&by_rho) && mono(&by_a);
    let detail = format!("C(rho) at 0.5,1,2,3 = {by_rho:.6?}; C(A) at 1,2,4,8 = {by_a:.6?}");
    assert!(report(8, ok, t.elapsed(), Duration::from_secs(1800), &detail));
}

fn pipeline(dir: &Path) {
    let peak = RunConfig {
        output_dir: dir.join("peak"),
        ..RunConfig::default()
    };
    let mut peak = peak;
    peak.sim.seed = SEED;
    let sol = cmd_capacity(&peak).unwrap();
    run_mc(&peak, &sol.constellation).unwrap();
    let mut avg = peak.clone();
    avg.constraint = quartic(4.0);
    avg.output_dir = dir.join("average");
    cmd_capacity(&avg).unwrap();
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["peak", "average"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn criterion_9_determinism() {
    let t = Instant::now();
    // same configuration, including the output directory
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let fa = files(dir.path());
    fs::remove_dir_all(dir.path().join("peak")).unwrap();
    fs::remove_dir_all(dir.path().join("average")).unwrap();
    pipeline(dir.path());
    let fb = files(dir.path());
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same = fa.len() == fb.len() && differing.is_empty();
    let ok = same && fa.len() >= 7;
    let detail = format!(
        "{} files compared ({}), byte-identical: {same}, differing: {differing:?}",
        fa.len(),
        names.join(", ")
    );
    assert!(report(9, ok, t.elapsed(), Duration::from_secs(1800), &detail));
}
