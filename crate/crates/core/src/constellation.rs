//! Ring constellations (finitely many amplitudes, uniform phase) and the
//! peak, average-cost and joint constraint regimes.

use serde::{Deserialize, Serialize};

use crate::error::{PzdError, Result};

/// Amplitude atoms with their probabilities. The phase is uniform and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstellation")]
pub struct RingConstellation {
    radii: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstellation {
    radii: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawConstellation> for RingConstellation {
    type Error = PzdError;

    fn try_from(raw: RawConstellation) -> Result<Self> {
        Self::new(raw.radii, raw.probs)
    }
}

const SUM_TOL: f64 = 1e-12;

impl RingConstellation {
    pub fn new(radii: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.len() != probs.len() {
            return Err(PzdError::Invalid(format!(
                "need equally many radii and probabilities, got {} and {}",
                radii.len(),
                probs.len()
            )));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(PzdError::Invalid("radii must be finite and >= 0".into()));
        }
        if radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PzdError::Invalid("radii must be strictly increasing".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(PzdError::Invalid("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(PzdError::Invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { radii, probs })
    }

    /// Builds a constellation from arbitrary atoms: sorts, merges equal radii,
    /// clamps negative weights to zero and renormalizes.
    pub fn from_weights(radii: &[f64], weights: &[f64]) -> Result<Self> {
        if radii.is_empty() || radii.len() != weights.len() {
            return Err(PzdError::Invalid("radii and weights differ in length".into()));
        }
        let mut atoms: Vec<(f64, f64)> = radii
            .iter()
            .zip(weights)
            .map(|(&r, &w)| (r, if w.is_finite() { w.max(0.0) } else { 0.0 }))
            .collect();
        if atoms.iter().any(|(r, _)| !(r.is_finite() && *r >= 0.0)) {
            return Err(PzdError::Invalid("radii must be finite and >= 0".into()));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (r, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == r => last.1 += w,
                _ => merged.push((r, w)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        let (radii, probs): (Vec<f64>, Vec<f64>) = if total > 0.0 {
            merged.iter().map(|&(r, w)| (r, w / total)).unzip()
        } else {
            let n = merged.len() as f64;
            merged.iter().map(|&(r, _)| (r, 1.0 / n)).unzip()
        };
        Ok(Self { radii, probs })
    }

    /// Single ring with all mass at `r`.
    pub fn single(r: f64) -> Result<Self> {
        Self::new(vec![r], vec![1.0])
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        *self.radii.last().unwrap_or(&0.0)
    }

    /// `E[C(R0)]`.
    pub fn expected_cost(&self, cost: &CostFunction) -> f64 {
        self.radii
            .iter()
            .zip(&self.probs)
            .map(|(&r, &p)| p * cost.eval(r))
            .sum()
    }

    /// `E[R0^2]`.
    pub fn mean_power(&self) -> f64 {
        self.radii.iter().zip(&self.probs).map(|(r, p)| p * r * r).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constellation serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PzdError::Invalid(format!("constellation JSON: {e}")))
    }
}

/// Cost of transmitting amplitude `r0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostFunction {
    /// `C(r) = r^q`.
    PowerLaw { q: f64 },
    /// Monotone cubic through `(r, C)` knots starting at `(0, 0)`, continued
    /// as `C(r_n) (r / r_n)^tail_exponent` beyond the last knot.
    Tabulated {
        knots: Vec<(f64, f64)>,
        tail_exponent: f64,
    },
}

impl CostFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            CostFunction::PowerLaw { q } => {
                if !(q.is_finite() && *q > 0.0) {
                    return Err(PzdError::Invalid(format!("power-law exponent must be > 0, got {q}")));
                }
            }
            CostFunction::Tabulated {
                knots,
                tail_exponent,
            } => {
                if knots.len() < 2 {
                    return Err(PzdError::Invalid("tabulated cost needs at least two knots".into()));
                }
                if knots[0] != (0.0, 0.0) {
                    return Err(PzdError::Invalid("tabulated cost must start at (0, 0)".into()));
                }
                if knots.iter().any(|(r, c)| !r.is_finite() || !c.is_finite()) {
                    return Err(PzdError::Invalid("tabulated cost knots must be finite".into()));
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 < w[0].1) {
                    return Err(PzdError::Invalid(
                        "tabulated cost must have increasing r and non-decreasing C".into(),
                    ));
                }
                if knots.last().unwrap().1 <= 0.0 {
                    return Err(PzdError::Invalid("tabulated cost must be unbounded".into()));
                }
                if !(tail_exponent.is_finite() && *tail_exponent > 0.0) {
                    return Err(PzdError::Invalid("tail exponent must be > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Growth faster than `r^2`, required for a pure average-cost constraint.
    pub fn is_superquadratic(&self) -> bool {
        match self {
            CostFunction::PowerLaw { q } => *q > 2.0,
            CostFunction::Tabulated { tail_exponent, .. } => *tail_exponent > 2.0,
        }
    }

    /// Growth faster than `ln r`, enough when a peak constraint is also present.
    pub fn is_superlogarithmic(&self) -> bool {
        match self {
            CostFunction::PowerLaw { q } => *q > 0.0,
            CostFunction::Tabulated { tail_exponent, .. } => *tail_exponent > 0.0,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            CostFunction::PowerLaw { q } => r.powf(*q),
            CostFunction::Tabulated {
                knots,
                tail_exponent,
            } => {
                let (rn, cn) = *knots.last().unwrap();
                if r >= rn {
                    return cn * (r / rn).powf(*tail_exponent);
                }
                let (i, t, h) = locate(knots, r);
                let slopes = pchip_slopes(knots);
                let (y0, y1) = (knots[i].1, knots[i + 1].1);
                let (d0, d1) = (slopes[i], slopes[i + 1]);
                let t2 = t * t;
                let t3 = t2 * t;
                (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                    + (t3 - 2.0 * t2 + t) * h * d0
                    + (-2.0 * t3 + 3.0 * t2) * y1
                    + (t3 - t2) * h * d1
            }
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            CostFunction::PowerLaw { q } => {
                if r == 0.0 {
                    if *q > 1.0 {
                        0.0
                    } else if *q == 1.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    q * r.powf(q - 1.0)
                }
            }
            CostFunction::Tabulated {
                knots,
                tail_exponent,
            } => {
                let (rn, cn) = *knots.last().unwrap();
                if r >= rn {
                    return cn * tail_exponent / rn * (r / rn).powf(tail_exponent - 1.0);
                }
                let (i, t, h) = locate(knots, r);
                let slopes = pchip_slopes(knots);
                let (y0, y1) = (knots[i].1, knots[i + 1].1);
                let (d0, d1) = (slopes[i], slopes[i + 1]);
                let t2 = t * t;
                ((6.0 * t2 - 6.0 * t) * y0
                    + (3.0 * t2 - 4.0 * t + 1.0) * h * d0
                    + (-6.0 * t2 + 6.0 * t) * y1
                    + (3.0 * t2 - 2.0 * t) * h * d1)
                    / h
            }
        }
    }

    /// Largest `r` with `C(r) <= budget`.
    pub fn inverse(&self, budget: f64) -> f64 {
        if budget <= 0.0 {
            return 0.0;
        }
        if let CostFunction::PowerLaw { q } = self {
            return budget.powf(1.0 / q);
        }
        let mut hi = 1.0;
        while self.eval(hi) <= budget {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        lo
    }
}

fn locate(knots: &[(f64, f64)], r: f64) -> (usize, f64, f64) {
    let i = match knots.binary_search_by(|k| k.0.total_cmp(&r)) {
        Ok(i) => i.min(knots.len() - 2),
        Err(i) => i.saturating_sub(1).min(knots.len() - 2),
    };
    let h = knots[i + 1].0 - knots[i].0;
    ((i), (r - knots[i].0) / h, h)
}

/// Fritsch–Carlson slopes; keep the interpolant monotone.
fn pchip_slopes(knots: &[(f64, f64)]) -> Vec<f64> {
    let n = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let delta: Vec<f64> = knots
        .windows(2)
        .zip(&h)
        .map(|(w, h)| (w[1].1 - w[0].1) / h)
        .collect();
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Peak,
    Average,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConstraint {
    pub cost: CostFunction,
    /// Budget `A`.
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub costs: Vec<CostConstraint>,
}

impl ConstraintSet {
    pub fn peak(rho: f64) -> Result<Self> {
        let s = Self {
            regime: Regime::Peak,
            rho: Some(rho),
            costs: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn average(cost: CostFunction, budget: f64) -> Result<Self> {
        let s = Self {
            regime: Regime::Average,
            rho: None,
            costs: vec![CostConstraint { cost, budget }],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn joint(rho: f64, cost: CostFunction, budget: f64) -> Result<Self> {
        let s = Self {
            regime: Regime::Joint,
            rho: Some(rho),
            costs: vec![CostConstraint { cost, budget }],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let needs_rho = matches!(self.regime, Regime::Peak | Regime::Joint);
        match self.rho {
            Some(rho) if !(rho.is_finite() && rho > 0.0) => {
                return Err(PzdError::Invalid(format!("rho must be > 0, got {rho}")));
            }
            None if needs_rho => {
                return Err(PzdError::Invalid("peak and joint regimes need rho".into()));
            }
            Some(_) if !needs_rho => {
                return Err(PzdError::Invalid("the average regime takes no rho".into()));
            }
            _ => {}
        }
        match self.regime {
            Regime::Peak if !self.costs.is_empty() => {
                return Err(PzdError::Invalid("the peak regime takes no cost constraint".into()));
            }
            Regime::Average | Regime::Joint if self.costs.is_empty() => {
                return Err(PzdError::Invalid("average and joint regimes need a cost".into()));
            }
            _ => {}
        }
        for c in &self.costs {
            c.cost.validate()?;
            if !(c.budget.is_finite() && c.budget > 0.0) {
                return Err(PzdError::Invalid(format!("budget must be > 0, got {}", c.budget)));
            }
        }
        match self.regime {
            Regime::Average if !self.costs.iter().any(|c| c.cost.is_superquadratic()) => Err(
                PzdError::Invalid("the average regime needs a cost growing faster than r^2".into()),
            ),
            Regime::Joint if !self.costs.iter().any(|c| c.cost.is_superlogarithmic()) => Err(
                PzdError::Invalid("the joint regime needs a cost growing faster than ln r".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn has_costs(&self) -> bool {
        !self.costs.is_empty()
    }

    /// Largest admissible radius for any atom of positive probability `p_min`.
    pub fn radius_cap(&self, p_min: f64) -> f64 {
        let mut cap = self.rho.unwrap_or(f64::INFINITY);
        for c in &self.costs {
            cap = cap.min(c.cost.inverse(c.budget / p_min));
        }
        cap
    }

    /// Sum of `nu_k (C_k(r) - A_k)`.
    pub fn penalty(&self, nu: &[f64], r: f64) -> f64 {
        self.costs
            .iter()
            .zip(nu)
            .map(|(c, n)| n * (c.cost.eval(r) - c.budget))
            .sum()
    }

    /// Derivative of [`Self::penalty`] in `r`.
    pub fn penalty_derivative(&self, nu: &[f64], r: f64) -> f64 {
        self.costs
            .iter()
            .zip(nu)
            .filter(|(_, n)| **n != 0.0)
            .map(|(c, n)| n * c.cost.derivative(r))
            .sum()
    }
}

/// Signed slacks of each constraint (`>= 0` when satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub peak_slack: Option<f64>,
    pub cost_slacks: Vec<f64>,
}

const FEAS_TOL: f64 = 1e-12;

pub fn feasible(c: &RingConstellation, s: &ConstraintSet) -> FeasibilityReport {
    let peak_slack = s.rho.map(|rho| rho - c.max_radius());
    let cost_slacks: Vec<f64> = s
        .costs
        .iter()
        .map(|k| k.budget - c.expected_cost(&k.cost))
        .collect();
    let ok_peak = peak_slack.is_none_or(|v| v >= -FEAS_TOL * s.rho.unwrap_or(1.0));
    let ok_cost = cost_slacks
        .iter()
        .zip(&s.costs)
        .all(|(v, k)| *v >= -FEAS_TOL * k.budget);
    FeasibilityReport {
        feasible: ok_peak && ok_cost,
        peak_slack,
        cost_slacks,
    }
}

/// Restores feasibility: clips radii to `[0, rho]` (merging collisions) and
/// shrinks all radii by a common factor until every cost budget holds.
pub fn project(c: &RingConstellation, s: &ConstraintSet) -> RingConstellation {
    if feasible(c, s).feasible {
        return c.clone();
    }
    let mut radii: Vec<f64> = c.radii.clone();
    if let Some(rho) = s.rho {
        for r in radii.iter_mut() {
            *r = r.min(rho);
        }
    }
    let mut out = RingConstellation::from_weights(&radii, &c.probs).expect("valid atoms");
    for k in &s.costs {
        if out.expected_cost(&k.cost) <= k.budget {
            continue;
        }
        let cost_at = |t: f64| -> f64 {
            out.radii
                .iter()
                .zip(&out.probs)
                .map(|(&r, &p)| p * k.cost.eval(t * r))
                .sum()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if cost_at(mid) <= k.budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let scaled: Vec<f64> = out.radii.iter().map(|r| r * lo).collect();
        out = RingConstellation::from_weights(&scaled, &out.probs).expect("valid atoms");
    }
    out
}
