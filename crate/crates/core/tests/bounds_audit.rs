use std::time::Instant;

use pzd_core::bounds_audit::*;
use pzd_core::channel::ChannelParams;
use pzd_core::infomath::{expansion_for, GridSpec};

fn run(gamma: f64, n: usize) -> Vec<AuditResult> {
    let p = ChannelParams::new(gamma, 1.0, 1.0).unwrap();
    let exp = expansion_for(p, 1e-12, 3.0, &GridSpec::default()).unwrap();
    let t = Instant::now();
    let res = audit_all(&exp, &default_constellations(3.0), n, 7).unwrap();
    eprintln!("gamma = {gamma}: {:?}\n{}", t.elapsed(), render_table(&res));
    res
}

#[test]
fn all_audits_pass_at_default_params() {
    let res = run(1.0, 10_000);
    assert!(res.iter().all(|r| r.pass), "{}", render_table(&res));
    let by_id = |id: &str| res.iter().find(|r| r.lemma_id == id).unwrap().clone();
    for id in ["3-1", "3-2", "3-5", "4-1", "5-1", "5-3", "C-mean", "C-power"] {
        assert!(by_id(id).points_checked >= 10_000, "{id}");
    }
}

#[test]
fn lower_sandwich_is_exercised_at_large_gamma() {
    let res = run(5.0, 2_000);
    assert!(res.iter().all(|r| r.pass), "{}", render_table(&res));
    let low = res.iter().find(|r| r.lemma_id == "4-2").unwrap();
    assert!(low.points_checked > 0 && low.skipped > 0, "{low:?}");
}

#[test]
fn gaussian_channel_has_vacuous_nonlinear_bounds() {
    let res = run(0.0, 500);
    assert!(res.iter().all(|r| r.pass), "{}", render_table(&res));
    let up = res.iter().find(|r| r.lemma_id == "4-1").unwrap();
    assert_eq!(up.points_checked, 0);
}

#[test]
fn rician_second_moment_at_two() {
    let p = ChannelParams::new(1.0, 1.0, 1.0).unwrap();
    let exp = expansion_for(p, 1e-12, 2.0, &GridSpec::default()).unwrap();
    let nodes = pzd_core::quad::composite(0.0, 20.0, 200, 16);
    let m2: f64 = nodes.iter().map(|&(r, w)| r * r * pzd_core::channel::rician_pdf(1.0, r, 2.0) * w).sum();
    assert!((m2 - 5.0).abs() < 1e-8, "{m2}");
    assert!(exp.beta_sum.tail < 1e-14);
}

#[test]
fn audit_is_deterministic() {
    let a = serde_json::to_string(&run(1.0, 300)).unwrap();
    let b = serde_json::to_string(&run(1.0, 300)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn audit_detects_a_broken_constant() {
    let p = ChannelParams::new(1.0, 1.0, 1.0).unwrap();
    let mut exp = expansion_for(p, 1e-12, 3.0, &GridSpec::default()).unwrap();
    // k_u = 1/2pi claims a uniform phase
    exp.beta_sum.partial = 0.0;
    exp.beta_sum.tail = 0.0;
    let res = audit_all(&exp, &default_constellations(3.0), 500, 1).unwrap();
    let up = res.iter().find(|r| r.lemma_id == "4-1").unwrap();
    assert!(!up.pass, "{up:?}");
}
