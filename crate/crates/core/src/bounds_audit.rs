//! Randomized checks of the analytic inequalities and identities behind the
//! capacity results: Bessel bounds, the conditional and output pdf sandwiches,
//! Rician moments, coefficient inequalities and the KKT envelopes.
//!
//! Points are a scrambled Halton sequence over the expansion envelope plus a
//! handful of fixed extreme points. Margins are `bound - quantity`, so a
//! negative margin is a violation. Bessel checks use log-scale margins; pdf
//! checks use absolute density margins.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{rician_pdf, PolarPoint, SeriesExpansion};
use crate::constellation::{ConstraintSet, RingConstellation};
use crate::error::Result;
use crate::infomath::{
    conditional_entropy_ring, k1, marginal_score, mixture_pdf, mutual_information, GridSpec, QuadratureGrid,
};
use crate::optimizer::{lhs_envelopes, ENVELOPE_EPS};
use crate::par;
use crate::quad::composite;
use crate::special_fn::{bessel_i_complex, bessel_i_scaled_unchecked, bessel_lower_constant, laguerre_half_unchecked};

/// Outcome of one family of checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub lemma_id: String,
    pub description: String,
    pub points_checked: usize,
    /// Points where the bound is vacuous (e.g. `xi(r0) >= 1` or `k_u = inf`).
    pub skipped: usize,
    /// Smallest `bound - quantity`; `None` when nothing was checked.
    pub worst_margin: Option<f64>,
    pub slack: f64,
    pub pass: bool,
}

/// Largest KKT grid used for the envelope checks; each point costs one
/// conditional-entropy quadrature.
pub const MAX_LHS_POINTS: usize = 128;

const MOMENT_PANELS: usize = 96;
const MOMENT_NODES: usize = 16;

const PRIMES: [u32; 4] = [2, 3, 5, 7];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// `n` points of a Halton sequence in `[0, 1)^dim`, shifted modulo one by a
/// seeded random vector.
pub fn scrambled_halton(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (0..n)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i as u64 + 1, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

struct Tally {
    id: &'static str,
    description: String,
    checked: usize,
    skipped: usize,
    worst: Option<f64>,
}

impl Tally {
    fn new(id: &'static str, description: impl Into<String>) -> Self {
        Self {
            id,
            description: description.into(),
            checked: 0,
            skipped: 0,
            worst: None,
        }
    }

    /// `+inf` means the bound is vacuous at that point; NaN and `-inf` count
    /// as the worst possible violation.
    fn push(&mut self, margin: f64) {
        if margin == f64::INFINITY {
            self.skipped += 1;
            return;
        }
        let margin = if margin.is_nan() { -f64::MAX } else { margin.max(-f64::MAX) };
        self.checked += 1;
        self.worst = Some(self.worst.map_or(margin, |w| w.min(margin)));
    }

    fn skip(&mut self) {
        self.skipped += 1;
    }

    fn extend(mut self, margins: impl IntoIterator<Item = Option<f64>>) -> Self {
        for m in margins {
            match m {
                Some(v) => self.push(v),
                None => self.skip(),
            }
        }
        self
    }

    fn finish(self, slack: f64) -> AuditResult {
        let pass = self.worst.is_none_or(|w| w >= -slack);
        AuditResult {
            lemma_id: self.id.to_string(),
            description: self.description,
            points_checked: self.checked,
            skipped: self.skipped,
            worst_margin: self.worst,
            slack,
            pass,
        }
    }
}

fn ln_i(m: u32, x: f64) -> f64 {
    bessel_i_scaled_unchecked(m, x).ln() + x
}

fn bessel_audits(pts: &[Vec<f64>]) -> Result<Vec<Tally>> {
    let x_max = 200.0;
    let k = bessel_lower_constant(ENVELOPE_EPS)?;
    let ln_k = k.ln();
    let lemma1 = par::map(pts, |p| {
        let x = p[0] * x_max;
        let m = (p[1] * 41.0) as u32;
        // ln I_0(x) >= 0 and I_m(x) >= 0
        Some(ln_i(0, x).min(bessel_i_scaled_unchecked(m, x)))
    });
    let lemma2 = par::map(pts, |p| {
        let z = Complex64::new((p[0] - 0.5) * 100.0, (p[2] - 0.5) * 100.0);
        let m = (p[1] * 41.0) as u32;
        let lhs = bessel_i_complex(m, z).map(|b| b.log_magnitude).unwrap_or(f64::NAN);
        // |I_m(z)| <= I_0(Re z), and e^{-x} I_m(x) <= 1
        let x = z.re.abs();
        Some((ln_i(0, x) - lhs).min(-bessel_i_scaled_unchecked(m, x).ln()))
    });
    let lemma3 = par::map(pts, |p| {
        // I_m(z) ~ (z/2)^m / m! as z -> 0
        let m = (p[1] * 11.0) as u32;
        let z = Complex64::from_polar(1e-6 * (0.1 + p[0]), TAU * p[2]);
        let b = bessel_i_complex(m, z).ok()?;
        let lead = (0.5 * z).powu(m) / (1..=m).map(|j| j as f64).product::<f64>();
        let rel = (b.to_complex() - lead).norm() / lead.norm();
        Some(1e-9 - rel)
    });
    let lemma4 = par::map(pts, |p| {
        let x = p[0] * x_max;
        // e^{(eps - 1) x} I_0(x) >= K
        Some(ENVELOPE_EPS * x + bessel_i_scaled_unchecked(0, x).ln() - ln_k)
    });
    let lemma5 = par::map(pts, |p| {
        let a = p[0] * x_max;
        let b = a + p[2] * 10.0;
        let m = (p[1] * 41.0) as u32;
        if a == 0.0 && m > 0 {
            return Some(0.0);
        }
        Some(ln_i(m, b) - ln_i(m, a))
    });
    let mut out = vec![
        Tally::new("3-1", "I_0(x) >= 1 and I_m(x) >= 0 for x >= 0").extend(lemma1),
        Tally::new("3-2", "|I_m(z)| <= I_0(Re z) and I_m(x) <= e^|x|").extend(lemma2),
        Tally::new("3-3", "I_m(z) ~ (z/2)^m / m! near z = 0 (relative error 1e-9)").extend(lemma3),
        Tally::new("3-4", format!("I_0(x) >= K e^((1-eps) x), eps = {ENVELOPE_EPS}, K = {k:.6e}")).extend(lemma4),
        Tally::new("3-5", "I_m increasing on x >= 0").extend(lemma5),
    ];
    // K itself must be positive.
    out[3].push(if k > 0.0 { 0.0 } else { -1.0 });
    Ok(out)
}

/// `(r, r0, phi)` samples over the envelope plus extreme points.
fn pdf_points(exp: &SeriesExpansion, pts: &[Vec<f64>]) -> Vec<(f64, f64, f64)> {
    let mut out: Vec<(f64, f64, f64)> = pts
        .iter()
        .map(|p| (p[0] * exp.r_max, p[1] * exp.r0_max, TAU * p[2]))
        .collect();
    let rs = [1e-6, 0.5 * exp.r_max, exp.r_max];
    let r0s = [0.0, 1e-6, exp.r0_max];
    let phis = [0.0, 0.5 * PI, PI, 1.5 * PI];
    for &r in &rs {
        for &r0 in &r0s {
            for &phi in &phis {
                out.push((r, r0, phi));
            }
        }
    }
    out
}

fn conditional_audits(exp: &SeriesExpansion, pts: &[(f64, f64, f64)]) -> Vec<Tally> {
    let s = exp.noise_power();
    let k_u = exp.k_u();
    let values = par::map(pts, |&(r, r0, phi)| {
        let p = exp
            .joint_pdf_raw(PolarPoint { r, phi }, PolarPoint { r: r0, phi: 0.0 })
            .unwrap_or(f64::NAN);
        let p_r = rician_pdf(s, r, r0);
        let upper = if k_u.is_finite() { k_u * p_r - p } else { f64::INFINITY };
        let xi = exp.xi(r0);
        let lower = if xi < 1.0 { Some(p - p_r * (1.0 - xi) / TAU) } else { None };
        // p_{R|R0} <= (2r/s) e^{-(r - r0)^2 / s} <= 2r/s
        let amp = (2.0 * r / s * (-(r - r0) * (r - r0) / s).exp() - p_r).min(2.0 * r / s - p_r);
        (upper, lower, amp)
    });
    vec![
        Tally::new("4-1", "p(r,phi|r0,phi0) < k_u p(r|r0)").extend(values.iter().map(|v| Some(v.0))),
        Tally::new("4-1a", "p(r|r0) <= (2r/s) e^{-(r-r0)^2/s} <= 2r/s").extend(values.iter().map(|v| Some(v.2))),
        Tally::new("4-2", "p(r,phi|r0,phi0) >= p(r|r0) (1 - xi(r0)) / 2pi, where xi(r0) < 1")
            .extend(values.iter().map(|v| v.1)),
    ]
}

fn output_audits(exp: &SeriesExpansion, cs: &[RingConstellation], pts: &[Vec<f64>]) -> Vec<Tally> {
    let s = exp.noise_power();
    let k_u = exp.k_u();
    let mut t1 = Tally::new("5-1", "p(r,phi;F) <= (2 k_u r/s) e^{-(r^2 - 2 r rho)/s}, rho = max radius");
    let mut t2 = Tally::new("5-2", "p(r,phi;F) <= (2 k_u r/s)(e^{-r^2/4s} + A/C(r/2)), C = r^2, A = E|X|^2");
    let mut t3 = Tally::new("5-3", "p(r;F) >= (2 k_1 r/s) e^{-r^2/s}");
    let mut t4 = Tally::new("5-3b", "p(r,phi;F) >= (k_1 r/(pi s)) e^{-r^2/s} (1 - xi(r)), where xi(r) < 1");
    for c in cs {
        let rho = c.max_radius();
        let a = c.mean_power();
        let k_1 = k1(exp, c);
        let rows = par::map(pts, |p| {
            let r = p[0] * exp.r_max;
            let out = mixture_pdf(s, c, r);
            let joint = out / TAU;
            let g = 2.0 * k_u * r / s;
            let m1 = g * (-(r * r - 2.0 * r * rho) / s).exp() - joint;
            let m2 = if r > 0.0 {
                g * ((-r * r / (4.0 * s)).exp() + a / (0.25 * r * r)) - joint
            } else {
                f64::INFINITY
            };
            let base = 2.0 * k_1 * r / s * (-r * r / s).exp();
            let m3 = out - base;
            let xi = exp.xi(r);
            let m4 = if xi < 1.0 { Some(joint - base / TAU * (1.0 - xi)) } else { None };
            (m1, m2, m3, m4)
        });
        for (m1, m2, m3, m4) in rows {
            t1.push(m1);
            t2.push(m2);
            t3.push(m3);
            match m4 {
                Some(v) => t4.push(v),
                None => t4.skip(),
            }
        }
    }
    vec![t1, t2, t3, t4]
}

fn moment_audits(exp: &SeriesExpansion, pts: &[Vec<f64>]) -> Vec<Tally> {
    let s = exp.noise_power();
    let sd = s.sqrt();
    let moments = par::map(pts, |p| {
        let r0 = if p[1] < 0.01 { 0.0 } else { p[1] * exp.r0_max };
        let nodes = composite(0.0, r0 + 14.0 * sd, MOMENT_PANELS, MOMENT_NODES);
        let (mut m1, mut m2) = (0.0, 0.0);
        for (r, w) in nodes {
            let d = rician_pdf(s, r, r0) * w;
            m1 += r * d;
            m2 += r * r * d;
        }
        let mean = 0.5 * (PI * s).sqrt() * laguerre_half_unchecked(-r0 * r0 / s);
        let power = s + r0 * r0;
        (-(m1 - mean).abs(), -(m2 - power).abs())
    });
    vec![
        Tally::new("C-mean", "int r p(r|r0) dr = (sqrt(pi s)/2) L_1/2(-r0^2/s)").extend(moments.iter().map(|m| Some(m.0))),
        Tally::new("C-power", "int r^2 p(r|r0) dr = s + r0^2").extend(moments.iter().map(|m| Some(m.1))),
    ]
}

fn coefficient_audits(exp: &SeriesExpansion) -> Vec<Tally> {
    let s = exp.noise_power();
    let mut a = Tally::new("coef-a", "Re(a_m) > 1/s");
    let mut b = Tally::new("coef-b", "Re(b_m) <= 1/s and |b_m| <= sqrt2 beta_m/sinh(beta_m)/s");
    for c in &exp.coeffs {
        let x = c.beta;
        let xs = if x < 1e-8 { 1.0 } else { x / x.sinh() };
        a.push(if exp.params.gamma > 0.0 { c.a.re - 1.0 / s } else { 0.0 });
        b.push((1.0 / s - c.b.re).min(std::f64::consts::SQRT_2 * xs / s - c.b.norm()));
    }
    let mut xi = Tally::new("xi", "xi(r0) decreasing and below 1e-6 far out");
    if exp.xi(0.0).is_finite() {
        let mut prev = exp.xi(0.0);
        let mut r0: f64 = 0.0;
        while prev > 1e-6 && r0 < 1e6 {
            r0 = (r0 * 1.25).max(0.05);
            let v = exp.xi(r0);
            xi.push(prev - v);
            prev = v;
        }
        xi.push(1e-6 - prev);
    } else {
        xi.skip();
    }
    let mut ku = Tally::new("k_u", "partial sums of sum beta_m/sinh(beta_m) converge, tail < 1e-14");
    if exp.beta_sum.tail.is_finite() {
        ku.push(1e-14 - exp.beta_sum.tail);
    } else {
        ku.skip();
    }
    vec![a, b, xi, ku]
}

fn envelope_audits(exp: &SeriesExpansion, cs: &[RingConstellation], n: usize, seed: u64) -> Result<Vec<Tally>> {
    let grid = QuadratureGrid::new(exp, &GridSpec::default())?;
    let mut up = Tally::new("10", "LHS_rho(r0) <= upper envelope (C = I(F), rho = max radius)");
    let mut lo = Tally::new("11", "LHS(r0) >= lower envelope (C = I(F), nu = 0)");
    let pts = scrambled_halton(n, 1, seed ^ 0x11);
    for c in cs {
        let cap = mutual_information(exp, c, &grid)?.mi;
        let set = ConstraintSet::peak(c.max_radius().max(f64::MIN_POSITIVE))?;
        let mut r0s: Vec<f64> = pts.iter().map(|p| p[0] * exp.r0_max).collect();
        r0s.extend([0.0, exp.r0_max]);
        let rows = par::try_map_range(r0s.len(), |i| -> Result<(f64, f64)> {
            let r0 = r0s[i];
            let h = conditional_entropy_ring(exp, r0, &grid)?;
            let score = marginal_score(exp, c, r0, &grid)?;
            let lhs = cap - (TAU.ln() - score - h);
            let env = lhs_envelopes(exp, c, &set, 0.0, cap, r0)?;
            Ok((env.upper - lhs, lhs - env.lower))
        })?;
        for (u, l) in rows {
            up.push(u);
            lo.push(l);
        }
    }
    Ok(vec![up, lo])
}

/// Runs every check. `constellations` feed the output-pdf and KKT-envelope
/// checks and must lie inside the expansion's `r0` envelope.
pub fn audit_all(
    exp: &SeriesExpansion,
    constellations: &[RingConstellation],
    point_count: usize,
    seed: u64,
) -> Result<Vec<AuditResult>> {
    let slack = (10.0 * exp.tail_bound).max(1e-9);
    let pts = scrambled_halton(point_count, 3, seed);
    let mut tallies = bessel_audits(&pts)?;
    tallies.extend(conditional_audits(exp, &pdf_points(exp, &pts)));
    tallies.extend(output_audits(exp, constellations, &pts));
    tallies.extend(moment_audits(exp, &pts));
    tallies.extend(coefficient_audits(exp));
    tallies.extend(envelope_audits(exp, constellations, point_count.min(MAX_LHS_POINTS), seed)?);
    Ok(tallies.into_iter().map(|t| t.finish(slack)).collect())
}

/// A small fixed family of ring constellations inside `[0, r0_max]`.
pub fn default_constellations(r0_max: f64) -> Vec<RingConstellation> {
    let r = r0_max;
    vec![
        RingConstellation::single(r).expect("valid"),
        RingConstellation::new(vec![0.0, r], vec![0.4, 0.6]).expect("valid"),
        RingConstellation::new(vec![0.0, 0.4 * r, 0.75 * r, r], vec![0.1, 0.2, 0.3, 0.4]).expect("valid"),
    ]
}

/// Plain-text table of audit results.
pub fn render_table(results: &[AuditResult]) -> String {
    let mut out = format!(
        "{:<8} {:>9} {:>8} {:>14} {:>10}  {}\n",
        "lemma", "checked", "skipped", "worst margin", "result", "check"
    );
    for r in results {
        let worst = r.worst_margin.map_or_else(|| "-".to_string(), |w| format!("{w:.4e}"));
        out.push_str(&format!(
            "{:<8} {:>9} {:>8} {:>14} {:>10}  {}\n",
            r.lemma_id,
            r.points_checked,
            r.skipped,
            worst,
            if r.pass { "pass" } else { "FAIL" },
            r.description
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn halton_is_seeded() {
        let a = scrambled_halton(10, 3, 1);
        assert_eq!(a, scrambled_halton(10, 3, 1));
        assert_ne!(a, scrambled_halton(10, 3, 2));
        assert!(a.iter().flatten().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn vacuous_points_are_skipped() {
        let mut t = Tally::new("x", "");
        t.push(f64::INFINITY);
        t.push(0.5);
        t.skip();
        let r = t.finish(1e-9);
        assert_eq!((r.points_checked, r.skipped, r.worst_margin), (1, 2, Some(0.5)));
        assert!(r.pass);
        let mut t = Tally::new("x", "");
        t.push(f64::NAN);
        assert!(!t.finish(1e-9).pass);
    }
}
