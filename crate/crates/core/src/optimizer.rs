//! Capacity-achieving ring constellations and their KKT certificates.
//!
//! The outer loop moves ring radii towards maxima of the information density
//! `i(r0; F)`; the inner loop optimizes probabilities with Blahut–Arimoto
//! updates, tilted by `nu C(r)` for cost constraints. Conditional entropies
//! come from a Chebyshev table so that mutual information, its gradient and
//! the KKT left-hand side share one discretization.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::channel::{rician_pdf, ChannelParams, SeriesExpansion};
use crate::constellation::{feasible, project, ConstraintSet, Regime, RingConstellation};
use crate::error::{PzdError, Result};
use crate::infomath::{expansion_for, k1, mutual_information, CondEntropyTable, GridSpec, MiBreakdown, QuadratureGrid};
use crate::par;
use crate::special_fn::{bessel_lower_constant, laguerre_half_unchecked};

/// `epsilon` in the peak-regime upper envelope.
pub const ENVELOPE_EPS: f64 = 0.1;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Ring counts tried by [`CapacitySolver::solve`], inclusive.
    pub ring_counts: (usize, usize),
    pub kkt_tol: f64,
    /// Stop Blahut–Arimoto once `max_i D_i - sum_i p_i D_i` drops below this (nats).
    pub prob_tol: f64,
    pub radius_tol: f64,
    pub grid: GridSpec,
    /// Initial bracket for the cost multiplier; the upper end grows as needed.
    pub multiplier_bracket: (f64, f64),
    pub kkt_points: usize,
    /// Atoms lighter than this are dropped.
    pub prune_prob: f64,
    pub max_prob_iterations: usize,
    pub max_radius_iterations: usize,
    /// Target accuracy of the conditional-entropy table (nats).
    pub table_tol: f64,
    /// Series truncation tolerance for the expansion.
    pub series_tol: f64,
    /// Largest input radius covered in the average regime.
    pub average_r0_max: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            ring_counts: (1, 12),
            kkt_tol: 1e-3,
            prob_tol: 1e-10,
            radius_tol: 1e-6,
            grid: GridSpec::default(),
            multiplier_bracket: (0.0, 1.0),
            kkt_points: 400,
            prune_prob: 1e-6,
            max_prob_iterations: 200_000,
            max_radius_iterations: 400,
            table_tol: 1e-11,
            series_tol: 1e-12,
            average_r0_max: 8.0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ring_counts;
        if lo < 1 || hi < lo {
            return Err(PzdError::Invalid(format!(
                "ring_counts must satisfy 1 <= min <= max, got ({lo}, {hi})"
            )));
        }
        for (name, v) in [
            ("kkt_tol", self.kkt_tol),
            ("prob_tol", self.prob_tol),
            ("radius_tol", self.radius_tol),
            ("prune_prob", self.prune_prob),
            ("table_tol", self.table_tol),
            ("series_tol", self.series_tol),
            ("average_r0_max", self.average_r0_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PzdError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        let (a, b) = self.multiplier_bracket;
        if !(a >= 0.0 && b > a && b.is_finite()) {
            return Err(PzdError::Invalid(format!(
                "multiplier_bracket must satisfy 0 <= lo < hi, got ({a}, {b})"
            )));
        }
        if self.kkt_points < 2 {
            return Err(PzdError::Invalid("kkt_points must be >= 2".into()));
        }
        self.grid.validate()
    }

    /// Input radius range the expansion has to cover.
    pub fn r0_max(&self, s: &ConstraintSet) -> f64 {
        match s.regime {
            Regime::Peak | Regime::Joint => s.rho.expect("validated constraint set"),
            Regime::Average => self.average_r0_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktSample {
    pub r0: f64,
    pub lhs: f64,
    /// `None` where the envelope is vacuous.
    pub envelope_lower: Option<f64>,
    pub envelope_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub regime: Regime,
    pub capacity: f64,
    pub nu: f64,
    /// Multipliers of any further cost constraints.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nu_extra: Vec<f64>,
    pub samples: Vec<KktSample>,
    pub worst_violation: f64,
    pub mass_point_residuals: Vec<f64>,
    /// `nu_k (A_k - E C_k)` per cost.
    pub slackness_residuals: Vec<f64>,
    /// Upper end of the sampled range.
    pub r0_range: f64,
    /// Whether the lower envelope exceeds 1 nat beyond `r0_range`.
    pub analytic_tail: bool,
    pub kkt_tol: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelopes {
    pub upper: f64,
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingCountStep {
    pub n_rings: usize,
    pub distinct_rings: usize,
    pub mi: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub constellation: RingConstellation,
    pub mi: MiBreakdown,
    pub kkt: KktReport,
    pub ring_history: Vec<RingCountStep>,
}

/// Probabilities and multipliers from the inner step.
#[derive(Debug, Clone)]
pub struct ProbResult {
    pub probs: Vec<f64>,
    pub nu: Vec<f64>,
    /// Final `max_i (D_i - tilt_i) - sum_i p_i (D_i - tilt_i)`.
    pub gap: f64,
    pub iterations: usize,
}

/// Shared state for one channel and constraint set.
pub struct CapacitySolver {
    exp: SeriesExpansion,
    constraints: ConstraintSet,
    cfg: SolveConfig,
    grid: QuadratureGrid,
    table: CondEntropyTable,
    cap: f64,
    k_eps: f64,
    s: f64,
}

/// Rician densities of a set of atoms on the radial grid.
struct Atoms {
    radii: Vec<f64>,
    h: Vec<f64>,
    f: Vec<Vec<f64>>,
}

impl CapacitySolver {
    pub fn new(exp: SeriesExpansion, constraints: ConstraintSet, cfg: SolveConfig) -> Result<Self> {
        cfg.validate()?;
        constraints.validate()?;
        let r0_max = cfg.r0_max(&constraints);
        if exp.r0_max < r0_max * (1.0 - 1e-12) {
            return Err(PzdError::Invalid(format!(
                "expansion covers r0 <= {}, the constraints need {r0_max}",
                exp.r0_max
            )));
        }
        let grid = QuadratureGrid::new(&exp, &cfg.grid)?;
        let table = CondEntropyTable::build(&exp, &grid, exp.r0_max, cfg.table_tol)?;
        let cap = constraints.radius_cap(cfg.prune_prob).min(exp.r0_max);
        let k_eps = bessel_lower_constant(ENVELOPE_EPS)?;
        let s = exp.noise_power();
        Ok(Self {
            exp,
            constraints,
            cfg,
            grid,
            table,
            cap,
            k_eps,
            s,
        })
    }

    pub fn expansion(&self) -> &SeriesExpansion {
        &self.exp
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn config(&self) -> &SolveConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    /// Largest radius the optimizer will place a ring at.
    pub fn radius_cap(&self) -> f64 {
        self.cap
    }

    /// `h(R, Phi | r0)` from the table.
    pub fn conditional_entropy(&self, r0: f64) -> f64 {
        self.table.value(r0)
    }

    fn atoms(&self, radii: &[f64]) -> Atoms {
        let f = radii
            .iter()
            .map(|&r0| {
                self.grid
                    .radial_nodes
                    .iter()
                    .map(|&(r, _)| rician_pdf(self.s, r, r0))
                    .collect()
            })
            .collect();
        Atoms {
            radii: radii.to_vec(),
            h: radii.iter().map(|&r| self.table.value(r)).collect(),
            f,
        }
    }

    fn log_mixture(&self, atoms: &Atoms, probs: &[f64]) -> Vec<f64> {
        let mut mix = vec![0.0; self.grid.radial_nodes.len()];
        for (fi, &p) in atoms.f.iter().zip(probs) {
            if p > 0.0 {
                for (m, v) in mix.iter_mut().zip(fi) {
                    *m += p * v;
                }
            }
        }
        mix.into_iter().map(|m| if m > 0.0 { m.ln() } else { 0.0 }).collect()
    }

    fn score_row(&self, row: &[f64], log_mix: &[f64]) -> f64 {
        self.grid
            .radial_nodes
            .iter()
            .zip(row)
            .zip(log_mix)
            .map(|((&(_, w), &f), &lm)| w * f * lm)
            .sum()
    }

    fn score_at(&self, r0: f64, log_mix: &[f64]) -> f64 {
        let sd = self.s.sqrt();
        let mut acc = 0.0;
        for (&(r, w), &lm) in self.grid.radial_nodes.iter().zip(log_mix) {
            if (r - r0).abs() > 9.0 * sd {
                continue;
            }
            acc += w * rician_pdf(self.s, r, r0) * lm;
        }
        acc
    }

    /// Information density `i(r0; F) = ln 2 pi - score(r0) - h(r0)`.
    fn density_at(&self, r0: f64, log_mix: &[f64]) -> f64 {
        TAU.ln() - self.score_at(r0, log_mix) - self.table.value(r0)
    }

    fn densities(&self, atoms: &Atoms, log_mix: &[f64]) -> Vec<f64> {
        atoms
            .f
            .iter()
            .zip(&atoms.h)
            .map(|(row, h)| TAU.ln() - self.score_row(row, log_mix) - h)
            .collect()
    }

    fn mi_of(&self, atoms: &Atoms, probs: &[f64]) -> f64 {
        let log_mix = self.log_mixture(atoms, probs);
        let d = self.densities(atoms, &log_mix);
        probs.iter().zip(&d).map(|(p, d)| p * d).sum()
    }

    fn costs_of(&self, radii: &[f64]) -> Vec<Vec<f64>> {
        self.constraints
            .costs
            .iter()
            .map(|c| radii.iter().map(|&r| c.cost.eval(r)).collect())
            .collect()
    }

    /// Blahut–Arimoto with fixed tilts.
    fn tilted_ba(&self, atoms: &Atoms, tilt: &[f64], start: &[f64]) -> Result<(Vec<f64>, f64, usize)> {
        let n = atoms.radii.len();
        if n == 1 {
            return Ok((vec![1.0], 0.0, 0));
        }
        // Zero weights never recover under multiplicative updates.
        let total: f64 = start.iter().sum();
        let mut p: Vec<f64> = start
            .iter()
            .map(|q| (1.0 - 1e-3) * q / total + 1e-3 / n as f64)
            .collect();
        let mut gap = f64::INFINITY;
        for it in 0..self.cfg.max_prob_iterations {
            let log_mix = self.log_mixture(atoms, &p);
            let d = self.densities(atoms, &log_mix);
            let v: Vec<f64> = d.iter().zip(tilt).map(|(d, t)| d - t).collect();
            let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean: f64 = p.iter().zip(&v).map(|(p, v)| p * v).sum();
            gap = vmax - mean;
            if gap <= self.cfg.prob_tol {
                return Ok((p, gap, it));
            }
            let mut total = 0.0;
            for (pi, vi) in p.iter_mut().zip(&v) {
                *pi *= (vi - vmax).exp();
                total += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= total;
            }
        }
        Err(PzdError::NonConvergence {
            iterations: self.cfg.max_prob_iterations,
            residual: gap,
            last_iterate: p,
        })
    }

    fn tilt(&self, costs: &[Vec<f64>], nu: &[f64], n: usize) -> Vec<f64> {
        let mut t = vec![0.0; n];
        for (row, &v) in costs.iter().zip(nu) {
            if v != 0.0 {
                for (ti, c) in t.iter_mut().zip(row) {
                    *ti += v * c;
                }
            }
        }
        t
    }

    fn optimize_atoms(&self, atoms: &Atoms, start: &[f64], nu_start: &[f64]) -> Result<ProbResult> {
        let n = atoms.radii.len();
        let costs = self.costs_of(&atoms.radii);
        let budgets: Vec<f64> = self.constraints.costs.iter().map(|c| c.budget).collect();
        let mean_cost = |p: &[f64], k: usize| -> f64 { p.iter().zip(&costs[k]).map(|(p, c)| p * c).sum() };
        for (k, row) in costs.iter().enumerate() {
            if row.iter().cloned().fold(f64::INFINITY, f64::min) > budgets[k] {
                return Err(PzdError::Invalid(format!(
                    "no atom satisfies cost budget {} on its own",
                    budgets[k]
                )));
            }
        }
        let mut nu = nu_start.to_vec();
        nu.resize(costs.len(), 0.0);
        let (mut p, mut gap, mut iters) = self.tilted_ba(atoms, &self.tilt(&costs, &nu, n), start)?;
        let slack_tol = 1e-12;
        for _sweep in 0..50 {
            let mut done = true;
            for k in 0..costs.len() {
                let excess = mean_cost(&p, k) - budgets[k];
                let active = excess > slack_tol * budgets[k].max(1.0);
                let loose = nu[k] > 0.0 && excess < -slack_tol * budgets[k].max(1.0);
                if !active && !loose {
                    continue;
                }
                done = false;
                let mut warm = p.clone();
                let base_nu = nu.clone();
                let mut solve_at = |v: f64, warm: &mut Vec<f64>| -> Result<f64> {
                    let mut trial = base_nu.clone();
                    trial[k] = v;
                    let (q, g, it) = self.tilted_ba(atoms, &self.tilt(&costs, &trial, n), warm)?;
                    iters += it;
                    gap = g;
                    *warm = q;
                    Ok(mean_cost(warm, k) - budgets[k])
                };
                let (mut lo, mut hi) = self.cfg.multiplier_bracket;
                if solve_at(lo, &mut warm)? <= 0.0 {
                    nu[k] = lo;
                    p = warm;
                    continue;
                }
                let mut grow = 0;
                while solve_at(hi, &mut warm)? > 0.0 {
                    lo = hi;
                    hi *= 4.0;
                    grow += 1;
                    if grow > 60 {
                        return Err(PzdError::NonConvergence {
                            iterations: grow,
                            residual: hi,
                            last_iterate: base_nu.clone(),
                        });
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if solve_at(mid, &mut warm)? > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-13 * hi.max(1e-300) {
                        break;
                    }
                }
                nu[k] = hi;
                solve_at(hi, &mut warm)?;
                p = warm;
            }
            if done {
                break;
            }
        }
        Ok(ProbResult {
            probs: p,
            nu,
            gap,
            iterations: iters,
        })
    }

    /// Optimal probabilities for fixed radii.
    pub fn optimize_probs(&self, radii: &[f64]) -> Result<ProbResult> {
        self.check_radii(radii)?;
        let atoms = self.atoms(radii);
        let n = radii.len();
        self.optimize_atoms(&atoms, &vec![1.0 / n as f64; n], &[])
    }

    /// As [`Self::optimize_probs`], starting from `weights` (any positive scale).
    pub fn optimize_probs_from(&self, radii: &[f64], weights: &[f64]) -> Result<ProbResult> {
        self.check_radii(radii)?;
        if weights.len() != radii.len() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(PzdError::Invalid("weights must be positive, one per radius".into()));
        }
        let total: f64 = weights.iter().sum();
        let start: Vec<f64> = weights.iter().map(|w| w / total).collect();
        self.optimize_atoms(&self.atoms(radii), &start, &[])
    }

    fn check_radii(&self, radii: &[f64]) -> Result<()> {
        if radii.is_empty() {
            return Err(PzdError::Invalid("need at least one radius".into()));
        }
        for &r in radii {
            if !(r.is_finite() && r >= 0.0 && r <= self.exp.r0_max * (1.0 + 1e-12)) {
                return Err(PzdError::Envelope {
                    r: 0.0,
                    r0: r,
                    r_max: self.exp.r_max,
                    r0_max: self.exp.r0_max,
                });
            }
        }
        Ok(())
    }

    /// Mutual information of `c` using the tabulated conditional entropy.
    pub fn table_mi(&self, c: &RingConstellation) -> Result<f64> {
        self.check_radii(c.radii())?;
        Ok(self.mi_of(&self.atoms(c.radii()), c.probs()))
    }

    /// `i(r0; F)` for every `r0` in `points`.
    pub fn information_density(&self, c: &RingConstellation, points: &[f64]) -> Result<Vec<f64>> {
        self.check_radii(c.radii())?;
        self.check_radii(points)?;
        let log_mix = self.log_mixture(&self.atoms(c.radii()), c.probs());
        Ok(par::map(points, |&r| self.density_at(r, &log_mix)))
    }

    fn lagrangian(&self, atoms: &Atoms, probs: &[f64], nu: &[f64]) -> f64 {
        let mi = self.mi_of(atoms, probs);
        let pen: f64 = atoms
            .radii
            .iter()
            .zip(probs)
            .map(|(&r, p)| p * self.constraints.penalty(nu, r))
            .sum();
        mi - pen
    }

    /// Maximizer of `g` on `[a, b]` by a coarse scan and golden-section refinement.
    fn argmax<G: Fn(f64) -> f64>(g: G, a: f64, b: f64, scan: usize) -> (f64, f64) {
        if b - a <= 0.0 {
            return (a, g(a));
        }
        let h = (b - a) / scan as f64;
        let mut best = (a, g(a));
        for k in 1..=scan {
            let x = a + h * k as f64;
            let v = g(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let (mut lo, mut hi) = ((best.0 - h).max(a), (best.0 + h).min(b));
        let mut c = hi - GOLDEN * (hi - lo);
        let mut d = lo + GOLDEN * (hi - lo);
        let (mut fc, mut fd) = (g(c), g(d));
        while hi - lo > 1e-9 * (1.0 + best.0) {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - GOLDEN * (hi - lo);
                fc = g(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + GOLDEN * (hi - lo);
                fd = g(d);
            }
        }
        let x = 0.5 * (lo + hi);
        let v = g(x);
        [(x, v), (c, fc), (d, fd), best]
            .into_iter()
            .fold((x, v), |acc, cand| if cand.1 > acc.1 { cand } else { acc })
    }

    fn merged(&self, radii: &[f64], probs: &[f64]) -> Result<RingConstellation> {
        let mut pairs: Vec<(f64, f64)> = radii
            .iter()
            .cloned()
            .zip(probs.iter().cloned())
            .filter(|&(_, p)| p >= self.cfg.prune_prob)
            .collect();
        if pairs.is_empty() {
            let k = probs
                .iter()
                .enumerate()
                .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
            pairs.push((radii[k], 1.0));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (r, p) in pairs {
            match out.last_mut() {
                Some(last) if r - last.0 <= self.cfg.radius_tol => {
                    let w = last.1 + p;
                    last.0 = (last.0 * last.1 + r * p) / w;
                    last.1 = w;
                }
                _ => out.push((r, p)),
            }
        }
        let (r, p): (Vec<f64>, Vec<f64>) = out.into_iter().unzip();
        RingConstellation::from_weights(&r, &p)
    }

    fn initial(&self, n: usize, e: f64) -> Result<RingConstellation> {
        let top = match self.constraints.regime {
            Regime::Peak => self.cap,
            _ => {
                let mut t = self.cap;
                for c in &self.constraints.costs {
                    t = t.min(1.5 * c.cost.inverse(c.budget));
                }
                t
            }
        };
        let radii: Vec<f64> = if n == 1 {
            vec![top * 0.5f64.powf(e)]
        } else {
            (0..n)
                .map(|i| top * (i as f64 / (n - 1) as f64).powf(e))
                .collect()
        };
        let c = RingConstellation::from_weights(&radii, &vec![1.0; n])?;
        Ok(project(&c, &self.constraints))
    }

    /// Largest radius a lone ring may take.
    fn single_cap(&self) -> f64 {
        let mut cap = self.cap;
        for c in &self.constraints.costs {
            cap = cap.min(c.cost.inverse(c.budget));
        }
        cap
    }

    /// Some atom meets every budget on its own.
    fn admissible(&self, radii: &[f64]) -> bool {
        self.constraints.costs.iter().all(|c| {
            radii
                .iter()
                .any(|&r| c.cost.eval(r) <= c.budget)
        })
    }

    fn best_single(&self) -> Result<(RingConstellation, Vec<f64>)> {
        let mi = |r: f64| self.mi_of(&self.atoms(&[r]), &[1.0]);
        let (r, _) = Self::argmax(mi, 0.0, self.single_cap(), 64);
        Ok((RingConstellation::single(r)?, vec![0.0; self.constraints.costs.len()]))
    }

    /// Alternating ascent from `start`. Rings that lose all their weight are
    /// re-seeded at the most violated point a few times before the lower ring
    /// count is accepted.
    fn ascend(&self, start: &RingConstellation) -> Result<(RingConstellation, Vec<f64>)> {
        let target = start.len();
        if target == 1 {
            return self.best_single();
        }
        let mut c = project(start, &self.constraints);
        let mut nu = Vec::new();
        let mut reseeds = 0;
        loop {
            let (out, out_nu) = self.ascend_fixed(&c, &nu)?;
            if out.len() >= target || reseeds >= 3 {
                if out.len() == 1 {
                    return self.best_single();
                }
                return Ok((out, out_nu));
            }
            reseeds += 1;
            let r = self.best_new_ring(&out, &out_nu);
            c = self.with_ring(&out, r)?;
            nu = out_nu;
        }
    }

    fn ascend_fixed(&self, start: &RingConstellation, nu0: &[f64]) -> Result<(RingConstellation, Vec<f64>)> {
        if start.len() == 1 {
            return Ok((start.clone(), nu0.to_vec()));
        }
        let atoms = self.atoms(start.radii());
        let pr = self.optimize_atoms(&atoms, start.probs(), nu0)?;
        let (c, nu) = self.settle(atoms, pr)?;
        if c.len() == 1 {
            return Ok((c, nu));
        }
        let mut atoms = self.atoms(c.radii());
        let mut pr = ProbResult {
            probs: c.probs().to_vec(),
            nu,
            gap: 0.0,
            iterations: 0,
        };
        let mut last_gain = f64::INFINITY;
        for _ in 0..self.cfg.max_radius_iterations {
            let nu = pr.nu.clone();
            let radii = atoms.radii.clone();
            let probs = pr.probs.clone();
            let log_mix = self.log_mixture(&atoms, &probs);
            let n = radii.len();
            let g = |r: f64| self.density_at(r, &log_mix) - self.constraints.penalty(&nu, r);
            let proposals: Vec<f64> = par::map_range(n, |i| {
                let lo = if i == 0 { 0.0 } else { 0.5 * (radii[i - 1] + radii[i]) };
                let hi = if i + 1 == n {
                    self.cap
                } else {
                    0.5 * (radii[i] + radii[i + 1])
                };
                let (x, v) = Self::argmax(g, lo, hi, 16);
                if v > g(radii[i]) {
                    x
                } else {
                    radii[i]
                }
            });
            let step = proposals
                .iter()
                .zip(&radii)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let base = self.lagrangian(&atoms, &probs, &nu);
            let mut accepted = None;
            let mut t = 1.0;
            while step > 0.0 && t >= 1.0 / 64.0 {
                let trial: Vec<f64> = radii
                    .iter()
                    .zip(&proposals)
                    .map(|(r, q)| r + t * (q - r))
                    .collect();
                if self.admissible(&trial) {
                    let ta = self.atoms(&trial);
                    let val = self.lagrangian(&ta, &probs, &nu);
                    if val > base {
                        accepted = Some((ta, val - base, t * step));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_none() {
                accepted = self.gradient_step(&atoms, &probs, &nu, &g, base);
            }
            let Some((ta, gain, moved)) = accepted else {
                break;
            };
            last_gain = gain;
            let next = self.optimize_atoms(&ta, &probs, &nu)?;
            let (merged, merged_nu) = self.settle(ta, next)?;
            if merged.len() == 1 {
                return Ok((merged, merged_nu));
            }
            atoms = self.atoms(merged.radii());
            pr = ProbResult {
                probs: merged.probs().to_vec(),
                nu: merged_nu,
                gap: 0.0,
                iterations: 0,
            };
            if moved < self.cfg.radius_tol && gain < self.cfg.prob_tol {
                last_gain = 0.0;
                break;
            }
        }
        if last_gain > self.cfg.prob_tol.max(1e-9) && last_gain.is_finite() {
            return Err(PzdError::NonConvergence {
                iterations: self.cfg.max_radius_iterations,
                residual: last_gain,
                last_iterate: atoms.radii.clone(),
            });
        }
        self.settle(atoms, pr)
    }

    /// Merges and prunes, re-optimizing probabilities until the atom set is stable.
    fn settle(&self, mut atoms: Atoms, mut pr: ProbResult) -> Result<(RingConstellation, Vec<f64>)> {
        loop {
            let c = self.merged(&atoms.radii, &pr.probs)?;
            if c.len() == atoms.radii.len() {
                let c = RingConstellation::new(atoms.radii.clone(), pr.probs.clone())
                    .or_else(|_| RingConstellation::from_weights(&atoms.radii, &pr.probs))?;
                return Ok((c, pr.nu));
            }
            if c.len() == 1 {
                return Ok((c, pr.nu));
            }
            atoms = self.atoms(c.radii());
            pr = self.optimize_atoms(&atoms, c.probs(), &pr.nu)?;
        }
    }

    /// Backtracking step along `dg/dr` at each ring, kept inside the ring's
    /// bracket.
    fn gradient_step<G: Fn(f64) -> f64>(
        &self,
        atoms: &Atoms,
        probs: &[f64],
        nu: &[f64],
        g: &G,
        base: f64,
    ) -> Option<(Atoms, f64, f64)> {
        let radii = &atoms.radii;
        let n = radii.len();
        let h = 1e-6 * self.cap.max(1.0);
        let grad: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let (a, b) = ((r - h).max(0.0), (r + h).min(self.cap));
                if b > a {
                    (g(b) - g(a)) / (b - a)
                } else {
                    0.0
                }
            })
            .collect();
        let norm = grad.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if norm == 0.0 {
            return None;
        }
        let mut t = 0.25 * self.cap / norm;
        while t * norm >= 0.1 * self.cfg.radius_tol {
            let trial: Vec<f64> = (0..n)
                .map(|i| {
                    let lo = if i == 0 { 0.0 } else { 0.5 * (radii[i - 1] + radii[i]) };
                    let hi = if i + 1 == n {
                        self.cap
                    } else {
                        0.5 * (radii[i] + radii[i + 1])
                    };
                    (radii[i] + t * grad[i]).clamp(lo, hi)
                })
                .collect();
            let moved = trial
                .iter()
                .zip(radii)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if moved > 0.0 && self.admissible(&trial) {
                let ta = self.atoms(&trial);
                let val = self.lagrangian(&ta, probs, nu);
                if val > base {
                    return Some((ta, val - base, moved));
                }
            }
            t *= 0.5;
        }
        None
    }

    fn objective(&self, c: &RingConstellation) -> f64 {
        if !feasible(c, &self.constraints).feasible {
            return f64::NEG_INFINITY;
        }
        self.mi_of(&self.atoms(c.radii()), c.probs())
    }

    /// Best constellation with at most `n_rings` rings over the quantile-spread
    /// starts and any extra `warm` starts.
    pub fn optimize_radii_from(
        &self,
        n_rings: usize,
        warm: &[RingConstellation],
    ) -> Result<(RingConstellation, Vec<f64>)> {
        if n_rings == 0 {
            return Err(PzdError::Invalid("n_rings must be >= 1".into()));
        }
        let mut starts = Vec::new();
        for e in [0.5, 0.75, 1.0, 1.5, 2.0] {
            starts.push(self.initial(n_rings, e)?);
        }
        starts.extend(warm.iter().cloned());
        let runs = par::map(&starts, |s| self.ascend(s));
        let mut best: Option<(RingConstellation, Vec<f64>, f64)> = None;
        let mut first_err = None;
        for run in runs {
            match run {
                Ok((c, nu)) => {
                    let v = self.objective(&c);
                    if best.as_ref().is_none_or(|b| v > b.2) {
                        best = Some((c, nu, v));
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match best {
            Some((c, nu, _)) => Ok((c, nu)),
            None => Err(first_err.expect("at least one start")),
        }
    }

    pub fn optimize_radii(&self, n_rings: usize) -> Result<RingConstellation> {
        Ok(self.optimize_radii_from(n_rings, &[])?.0)
    }

    fn lemma11_lower(&self, capacity: f64, k1v: f64, nu: &[f64], r0: f64) -> f64 {
        lower_envelope(&self.exp, &self.constraints, capacity, k1v, nu, r0)
    }

    fn lemma10_upper(&self, capacity: f64, nu: &[f64], r0: f64) -> f64 {
        upper_envelope(&self.exp, &self.constraints, self.k_eps, capacity, nu, r0)
    }

    /// Analytic upper and lower envelopes of the KKT left-hand side at `r0`.
    /// Analytic upper and lower envelopes of the KKT left-hand side at `r0`.
    pub fn lhs_envelopes(&self, c: &RingConstellation, nu: &[f64], capacity: f64, r0: f64) -> Envelopes {
        Envelopes {
            upper: self.lemma10_upper(capacity, nu, r0),
            lower: self.lemma11_lower(capacity, k1(&self.exp, c), nu, r0),
        }
    }

    /// First `r0` beyond which the lower envelope stays above 1 nat on a scan
    /// out to `far`.
    fn tail_start(&self, capacity: f64, k1v: f64, nu: &[f64], far: f64) -> Option<f64> {
        let n = 4000;
        let mut start = None;
        for k in (0..=n).rev() {
            let r = far * k as f64 / n as f64;
            if self.lemma11_lower(capacity, k1v, nu, r) > 1.0 {
                start = Some(r);
            } else {
                break;
            }
        }
        start.filter(|&r| r < far)
    }

    /// KKT certificate for `c` with capacity value `capacity`; `nu_hint`
    /// seeds the multiplier search.
    pub fn kkt_certificate(&self, c: &RingConstellation, capacity: f64, nu_hint: &[f64]) -> Result<KktReport> {
        self.check_radii(c.radii())?;
        let atoms = self.atoms(c.radii());
        let log_mix = self.log_mixture(&atoms, c.probs());
        let tol = self.cfg.kkt_tol;
        let k1v = k1(&self.exp, c);
        let range_for = |nu: &[f64]| -> (f64, bool) {
            match self.constraints.regime {
                Regime::Peak | Regime::Joint => (self.constraints.rho.expect("validated"), true),
                Regime::Average => match self.tail_start(capacity, k1v, nu, 20.0 * self.exp.r0_max) {
                    Some(r) if r <= self.exp.r0_max => (r.max(c.max_radius()), true),
                    _ => (self.exp.r0_max, false),
                },
            }
        };
        let sample_points = |hi: f64| -> Vec<f64> {
            let n = self.cfg.kkt_points;
            (0..n).map(|k| hi * k as f64 / (n - 1) as f64).collect()
        };
        let density_points = |pts: &[f64]| -> Vec<f64> { par::map(pts, |&r| self.density_at(r, &log_mix)) };
        let mass_density = self.densities(&atoms, &log_mix);
        let n_costs = self.constraints.costs.len();
        let mut nu = nu_hint.to_vec();
        nu.resize(n_costs, 0.0);

        let evaluate = |nu: &[f64], pts: &[f64], dens: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let lhs: Vec<f64> = pts
                .iter()
                .zip(dens)
                .map(|(&r, d)| capacity - d + self.constraints.penalty(nu, r))
                .collect();
            let worst = lhs.iter().cloned().fold(f64::INFINITY, f64::min);
            let res: Vec<f64> = c
                .radii()
                .iter()
                .zip(&mass_density)
                .map(|(&r, d)| (capacity - d + self.constraints.penalty(nu, r)).abs())
                .collect();
            (worst, res, lhs)
        };

        // The score below is concave in each multiplier, so a golden search
        // over a bracket finds its maximum.
        let (mut hi, mut analytic) = range_for(&nu);
        let mut pts = sample_points(hi);
        let mut dens = density_points(&pts);
        for pass in 0..2 {
            for k in 0..n_costs {
                let score = |v: f64| -> f64 {
                    let mut trial = nu.clone();
                    trial[k] = v;
                    let (worst, res, _) = evaluate(&trial, &pts, &dens);
                    let rmax = res.iter().cloned().fold(0.0, f64::max);
                    worst.min(-rmax)
                };
                let mut b = self.cfg.multiplier_bracket.1.max(4.0 * nu[k]);
                while score(2.0 * b) > score(b) && b < 1e6 {
                    b *= 2.0;
                }
                nu[k] = Self::argmax(score, 0.0, 2.0 * b, 64).0;
            }
            if pass == 0 && n_costs > 0 {
                (hi, analytic) = range_for(&nu);
                pts = sample_points(hi);
                dens = density_points(&pts);
            }
        }
        let (worst, residuals, lhs) = evaluate(&nu, &pts, &dens);
        let samples = pts
            .iter()
            .zip(&lhs)
            .map(|(&r0, &l)| {
                let lo = self.lemma11_lower(capacity, k1v, &nu, r0);
                let up = self.lemma10_upper(capacity, &nu, r0);
                KktSample {
                    r0,
                    lhs: l,
                    envelope_lower: lo.is_finite().then_some(lo),
                    envelope_upper: up.is_finite().then_some(up),
                }
            })
            .collect();
        let slackness: Vec<f64> = self
            .constraints
            .costs
            .iter()
            .zip(&nu)
            .map(|(k, v)| v * (k.budget - c.expected_cost(&k.cost)))
            .collect();
        let certified = worst >= -tol && residuals.iter().all(|&r| r <= tol);
        Ok(KktReport {
            regime: self.constraints.regime,
            capacity,
            nu: nu.first().copied().unwrap_or(0.0),
            nu_extra: nu.iter().skip(1).copied().collect(),
            samples,
            worst_violation: worst,
            mass_point_residuals: residuals,
            slackness_residuals: slackness,
            r0_range: hi,
            analytic_tail: analytic,
            kkt_tol: tol,
            certified,
        })
    }

    /// Most negative point of the KKT left-hand side on `[0, cap]`.
    fn best_new_ring(&self, c: &RingConstellation, nu: &[f64]) -> f64 {
        let atoms = self.atoms(c.radii());
        let log_mix = self.log_mixture(&atoms, c.probs());
        let g = |r: f64| self.density_at(r, &log_mix) - self.constraints.penalty(nu, r);
        Self::argmax(g, 0.0, self.cap, 64).0
    }

    fn with_ring(&self, c: &RingConstellation, r: f64) -> Result<RingConstellation> {
        let mut radii = c.radii().to_vec();
        let mut w: Vec<f64> = c.probs().iter().map(|p| 0.9 * p).collect();
        radii.push(r);
        w.push(0.1);
        Ok(project(&RingConstellation::from_weights(&radii, &w)?, &self.constraints))
    }

    /// Increases the ring count until the KKT certificate holds or mutual
    /// information stops improving.
    pub fn solve(&self) -> Result<Solution> {
        let (n_min, n_max) = self.cfg.ring_counts;
        let mut history = Vec::new();
        let mut best: Option<(RingConstellation, Vec<f64>, f64, KktReport)> = None;
        let mut small_gains = 0;
        let mut prev_mi = f64::NEG_INFINITY;
        for n in n_min..=n_max {
            let warm: Vec<RingConstellation> = match &best {
                Some((c, nu, _, _)) => {
                    let r = self.best_new_ring(c, nu);
                    vec![self.with_ring(c, r)?]
                }
                None => Vec::new(),
            };
            let (c, nu) = self.optimize_radii_from(n, &warm)?;
            let mi = self.table_mi(&c)?;
            let report = self.kkt_certificate(&c, mi, &nu)?;
            history.push(RingCountStep {
                n_rings: n,
                distinct_rings: c.len(),
                mi,
                certified: report.certified,
            });
            let certified = report.certified;
            if best.as_ref().is_none_or(|b| mi > b.2 || (certified && !b.3.certified)) {
                best = Some((c, nu, mi, report));
            }
            if certified {
                break;
            }
            if mi - prev_mi < 1e-5 {
                small_gains += 1;
                if small_gains >= 2 {
                    break;
                }
            } else {
                small_gains = 0;
            }
            prev_mi = prev_mi.max(mi);
        }
        let (constellation, _, _, kkt) = best.expect("ring_counts is non-empty");
        let mi = mutual_information(&self.exp, &constellation, &self.grid)?;
        Ok(Solution {
            constellation,
            mi,
            kkt,
            ring_history: history,
        })
    }
}

/// Builds a solver with its own expansion sized for `s`.
pub fn solver_for(params: ChannelParams, s: &ConstraintSet, cfg: &SolveConfig) -> Result<CapacitySolver> {
    cfg.validate()?;
    s.validate()?;
    let exp = expansion_for(params, cfg.series_tol, cfg.r0_max(s), &cfg.grid)?;
    CapacitySolver::new(exp, s.clone(), cfg.clone())
}

pub fn optimize_probs(exp: &SeriesExpansion, radii: &[f64], s: &ConstraintSet, cfg: &SolveConfig) -> Result<Vec<f64>> {
    let solver = CapacitySolver::new(exp.clone(), s.clone(), cfg.clone())?;
    Ok(solver.optimize_probs(radii)?.probs)
}

pub fn optimize_radii(
    exp: &SeriesExpansion,
    n_rings: usize,
    s: &ConstraintSet,
    cfg: &SolveConfig,
) -> Result<RingConstellation> {
    CapacitySolver::new(exp.clone(), s.clone(), cfg.clone())?.optimize_radii(n_rings)
}

pub fn kkt_certificate(
    exp: &SeriesExpansion,
    c: &RingConstellation,
    s: &ConstraintSet,
    capacity: f64,
    cfg: &SolveConfig,
) -> Result<KktReport> {
    CapacitySolver::new(exp.clone(), s.clone(), cfg.clone())?.kkt_certificate(c, capacity, &[])
}

pub fn solve_capacity(exp: &SeriesExpansion, s: &ConstraintSet, cfg: &SolveConfig) -> Result<Solution> {
    CapacitySolver::new(exp.clone(), s.clone(), cfg.clone())?.solve()
}

fn lower_envelope(exp: &SeriesExpansion, s: &ConstraintSet, capacity: f64, k1v: f64, nu: &[f64], r0: f64) -> f64 {
    let k_u = exp.k_u();
    if !k_u.is_finite() {
        return f64::NEG_INFINITY;
    }
    let sp = exp.noise_power();
    let x = r0 * r0 / sp;
    s.penalty(nu, r0) + capacity + (k1v / (TAU * k_u)).ln() + x
        - r0 * (PI / sp).sqrt() * laguerre_half_unchecked(-x)
}

fn upper_envelope(exp: &SeriesExpansion, s: &ConstraintSet, k_eps: f64, capacity: f64, nu: &[f64], r0: f64) -> f64 {
    let Some(rho) = s.rho else {
        return f64::INFINITY;
    };
    let xi = exp.xi(r0);
    if !(xi < 1.0) {
        return f64::INFINITY;
    }
    let sp = exp.noise_power();
    let x = r0 * r0 / sp;
    s.penalty(nu, r0) + capacity + (1.0 / k_eps).ln() + x - (1.0 - xi).ln()
        + (rho - (1.0 - ENVELOPE_EPS) * r0) * (PI / sp).sqrt() * laguerre_half_unchecked(-x)
}

/// Analytic envelopes of the KKT left-hand side; `+inf` / `-inf` where vacuous.
pub fn lhs_envelopes(
    exp: &SeriesExpansion,
    c: &RingConstellation,
    s: &ConstraintSet,
    nu: f64,
    capacity: f64,
    r0: f64,
) -> Result<Envelopes> {
    if !(r0.is_finite() && r0 >= 0.0) {
        return Err(PzdError::Domain(format!("amplitude must be >= 0, got {r0}")));
    }
    let k_eps = bessel_lower_constant(ENVELOPE_EPS)?;
    let nu = [nu];
    Ok(Envelopes {
        upper: upper_envelope(exp, s, k_eps, capacity, &nu, r0),
        lower: lower_envelope(exp, s, capacity, k1(exp, c), &nu, r0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_finds_interior_peak() {
        let (x, v) = CapacitySolver::argmax(|x| -(x - 0.37) * (x - 0.37), 0.0, 1.0, 16);
        assert!((x - 0.37).abs() < 1e-8);
        assert!(v.abs() < 1e-15);
        let (x, _) = CapacitySolver::argmax(|x| x, 0.0, 2.0, 16);
        assert!((x - 2.0).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(SolveConfig::default().validate().is_ok());
        let bad = SolveConfig {
            ring_counts: (0, 3),
            ..SolveConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolveConfig {
            multiplier_bracket: (1.0, 0.5),
            ..SolveConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
