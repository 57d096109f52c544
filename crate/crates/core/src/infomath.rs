//! Entropies and mutual information of ring constellations by quadrature.
//!
//! With uniform input phase the output phase is uniform and independent of
//! the output amplitude, so `I = h(R) + ln 2 pi - sum_i p_i h(R, Phi | r_i)`.
//! Radial integrals use composite Gauss–Legendre panels, angular integrals
//! the periodic trapezoid rule.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::channel::{make_expansion, rician_pdf, ChannelParams, SeriesExpansion};
use crate::constellation::RingConstellation;
use crate::error::{PzdError, Result};
use crate::par;
use crate::quad::radial_rule;

/// Resolution knobs for [`QuadratureGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Radial panel width in units of `sqrt(sigma^2 L)`.
    pub panel_width: f64,
    pub nodes_per_panel: usize,
    /// Geometric splits of the first panel towards `r = 0`.
    pub zero_refinement: usize,
    /// Radial cutoff beyond the largest input radius, in units of `sqrt(sigma^2 L)`.
    pub tail_widths: f64,
    pub min_angular: usize,
    pub angular_per_order: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            panel_width: 0.5,
            nodes_per_panel: 8,
            zero_refinement: 12,
            tail_widths: 8.0,
            min_angular: 64,
            angular_per_order: 8,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.panel_width.is_finite() && self.panel_width > 0.0) {
            return Err(PzdError::Invalid("grid panel_width must be > 0".into()));
        }
        if self.nodes_per_panel == 0 || self.nodes_per_panel > 64 {
            return Err(PzdError::Invalid("grid nodes_per_panel must be in 1..=64".into()));
        }
        if !(self.tail_widths.is_finite() && self.tail_widths >= 8.0) {
            return Err(PzdError::Invalid("grid tail_widths must be >= 8".into()));
        }
        if self.min_angular < 16 {
            return Err(PzdError::Invalid("grid min_angular must be >= 16".into()));
        }
        Ok(())
    }

    /// Twice the radial and angular resolution.
    pub fn refined(&self) -> Self {
        Self {
            panel_width: self.panel_width / 2.0,
            min_angular: self.min_angular * 2,
            angular_per_order: self.angular_per_order * 2,
            ..self.clone()
        }
    }
}

/// Builds an expansion whose radial envelope leaves `tail_widths` noise
/// standard deviations beyond `r0_max`.
pub fn expansion_for(
    params: ChannelParams,
    tol: f64,
    r0_max: f64,
    spec: &GridSpec,
) -> Result<SeriesExpansion> {
    spec.validate()?;
    let r_max = r0_max + spec.tail_widths * params.noise_power().sqrt();
    make_expansion(params, tol, r_max, r0_max)
}

/// Radial nodes and angular sampling for entropy integrals.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub radial_nodes: Vec<(f64, f64)>,
    pub angular_count: usize,
    pub r_max: f64,
    pub spec: GridSpec,
    cos_table: Vec<f64>,
    sin_table: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(exp: &SeriesExpansion, spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let sd = exp.noise_power().sqrt();
        if exp.r_max < exp.r0_max + 8.0 * sd * (1.0 - 1e-12) {
            return Err(PzdError::Invalid(format!(
                "expansion r_max = {} leaves less than 8 noise widths beyond r0_max = {}",
                exp.r_max, exp.r0_max
            )));
        }
        let radial_nodes = radial_rule(
            exp.r_max,
            spec.panel_width * sd,
            spec.nodes_per_panel,
            spec.zero_refinement,
        );
        let mut n = spec
            .min_angular
            .max(spec.angular_per_order * exp.truncation_m);
        n += n % 2;
        let cos_table = (0..n).map(|k| (TAU * k as f64 / n as f64).cos()).collect();
        let sin_table = (0..n).map(|k| (TAU * k as f64 / n as f64).sin()).collect();
        Ok(Self {
            radial_nodes,
            angular_count: n,
            r_max: exp.r_max,
            spec: spec.clone(),
            cos_table,
            sin_table,
        })
    }

    pub fn refined(&self, exp: &SeriesExpansion) -> Result<Self> {
        Self::new(exp, &self.spec.refined())
    }

    /// `int_0^{r_max} f(r) dr`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.radial_nodes.iter().map(|&(r, w)| w * f(r)).sum()
    }
}

/// Entropy and mutual-information terms, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiBreakdown {
    pub h_out_amplitude: f64,
    pub cond_entropy: f64,
    pub mi: f64,
    pub quadrature_error_estimate: f64,
}

fn check_r0(exp: &SeriesExpansion, r0: f64) -> Result<()> {
    if !(r0.is_finite() && r0 >= 0.0) {
        return Err(PzdError::Domain(format!("amplitude must be >= 0, got {r0}")));
    }
    if !exp.contains(0.0, r0) {
        return Err(PzdError::Envelope {
            r: 0.0,
            r0,
            r_max: exp.r_max,
            r0_max: exp.r0_max,
        });
    }
    Ok(())
}

fn check_constellation(exp: &SeriesExpansion, c: &RingConstellation) -> Result<()> {
    check_r0(exp, c.max_radius())
}

/// `p(r; F) = sum_i p_i p_{R|R0}(r | r_i)`.
pub fn output_amplitude_pdf(exp: &SeriesExpansion, c: &RingConstellation, r: f64) -> Result<f64> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(PzdError::Domain(format!("amplitude must be >= 0, got {r}")));
    }
    Ok(mixture_pdf(exp.noise_power(), c, r))
}

pub(crate) fn mixture_pdf(s: f64, c: &RingConstellation, r: f64) -> f64 {
    c.radii()
        .iter()
        .zip(c.probs())
        .map(|(&ri, &pi)| pi * rician_pdf(s, r, ri))
        .sum()
}

/// `k_1 = sum_i p_i e^{-r_i^2 / sigma^2 L}`.
pub fn k1(exp: &SeriesExpansion, c: &RingConstellation) -> f64 {
    let s = exp.noise_power();
    c.radii()
        .iter()
        .zip(c.probs())
        .map(|(&r, &p)| p * (-r * r / s).exp())
        .sum()
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

/// `h(R, Phi | r0, phi0)` for arbitrary input phase.
pub fn conditional_entropy(
    exp: &SeriesExpansion,
    r0: f64,
    phi0: f64,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_r0(exp, r0)?;
    if !phi0.is_finite() {
        return Err(PzdError::Domain(format!("phase must be finite, got {phi0}")));
    }
    let n = grid.angular_count;
    let dphi = TAU / n as f64;
    let floor = exp.tail_bound * 1e-6;
    let parts = par::try_map_range(grid.radial_nodes.len(), |k| -> Result<f64> {
        let (r, w) = grid.radial_nodes[k];
        let mut slice = exp.radial_slice_unchecked(r, r0);
        slice.trim(floor);
        if phi0 != 0.0 {
            slice.rotate(phi0);
        }
        let mut buf = vec![0.0; n];
        slice.density_on_circle(n, &grid.cos_table, &grid.sin_table, &mut buf);
        let mut acc = 0.0;
        for v in buf {
            acc += xlogx(exp.clamp(v)?);
        }
        Ok(-acc * dphi * w)
    })?;
    Ok(parts.iter().sum())
}

/// `h(R, Phi | r0)`; independent of the input phase by rotation symmetry.
pub fn conditional_entropy_ring(exp: &SeriesExpansion, r0: f64, grid: &QuadratureGrid) -> Result<f64> {
    conditional_entropy(exp, r0, 0.0, grid)
}

/// `h(R) = -int p(r; F) ln p(r; F) dr`.
pub fn output_amplitude_entropy(
    exp: &SeriesExpansion,
    c: &RingConstellation,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_constellation(exp, c)?;
    let s = exp.noise_power();
    Ok(-grid.integrate(|r| xlogx(mixture_pdf(s, c, r))))
}

/// `int p_{R|R0}(r | r0) ln p(r; F) dr`.
pub fn marginal_score(
    exp: &SeriesExpansion,
    c: &RingConstellation,
    r0: f64,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_r0(exp, r0)?;
    check_constellation(exp, c)?;
    let log_mix = log_mixture_on_grid(exp.noise_power(), c, grid);
    Ok(score_with(exp.noise_power(), r0, grid, &log_mix))
}

pub(crate) fn log_mixture_on_grid(s: f64, c: &RingConstellation, grid: &QuadratureGrid) -> Vec<f64> {
    grid.radial_nodes
        .iter()
        .map(|&(r, _)| {
            let p = mixture_pdf(s, c, r);
            if p > 0.0 {
                p.ln()
            } else {
                0.0
            }
        })
        .collect()
}

pub(crate) fn score_with(s: f64, r0: f64, grid: &QuadratureGrid, log_mix: &[f64]) -> f64 {
    grid.radial_nodes
        .iter()
        .zip(log_mix)
        .map(|(&(r, w), &lm)| w * rician_pdf(s, r, r0) * lm)
        .sum()
}

fn mi_on_grid(exp: &SeriesExpansion, c: &RingConstellation, grid: &QuadratureGrid) -> Result<(f64, f64)> {
    let h_out = output_amplitude_entropy(exp, c, grid)?;
    let mut cond = 0.0;
    for (&r, &p) in c.radii().iter().zip(c.probs()) {
        if p > 0.0 {
            cond += p * conditional_entropy_ring(exp, r, grid)?;
        }
    }
    Ok((h_out, cond))
}

/// Mutual information of a ring constellation, with an error estimate from
/// one level of grid refinement.
pub fn mutual_information(
    exp: &SeriesExpansion,
    c: &RingConstellation,
    grid: &QuadratureGrid,
) -> Result<MiBreakdown> {
    check_constellation(exp, c)?;
    let (h_out, cond) = mi_on_grid(exp, c, grid)?;
    let fine = grid.refined(exp)?;
    let (h_fine, cond_fine) = mi_on_grid(exp, c, &fine)?;
    let mi = h_out + TAU.ln() - cond;
    let mi_fine = h_fine + TAU.ln() - cond_fine;
    Ok(MiBreakdown {
        h_out_amplitude: h_out,
        cond_entropy: cond,
        mi,
        quadrature_error_estimate: 2.0 * (mi - mi_fine).abs() + 1e-12,
    })
}

/// Chebyshev interpolant of `r0 -> h(R, Phi | r0)` on `[0, hi]`.
#[derive(Debug, Clone)]
pub struct CondEntropyTable {
    hi: f64,
    coeffs: Vec<f64>,
    dcoeffs: Vec<f64>,
}

impl CondEntropyTable {
    const MAX_NODES: usize = 513;

    /// Doubles the Chebyshev–Lobatto node count until the trailing
    /// coefficients fall below `tol`.
    pub fn build(exp: &SeriesExpansion, grid: &QuadratureGrid, hi: f64, tol: f64) -> Result<Self> {
        check_r0(exp, hi)?;
        if !(hi > 0.0) {
            return Err(PzdError::Invalid("table range must be positive".into()));
        }
        let mut n = 17usize;
        let mut values: Vec<f64> = Vec::new();
        loop {
            let old = std::mem::take(&mut values);
            let fresh: Vec<usize> = (0..n).filter(|k| old.is_empty() || k % 2 == 1).collect();
            let computed = par::try_map_range(fresh.len(), |j| {
                let x = (PI * fresh[j] as f64 / (n - 1) as f64).cos();
                conditional_entropy_ring(exp, (0.5 * hi * (1.0 + x)).clamp(0.0, hi), grid)
            })?;
            values = vec![0.0; n];
            for (j, &k) in fresh.iter().enumerate() {
                values[k] = computed[j];
            }
            if !old.is_empty() {
                for (i, v) in old.into_iter().enumerate() {
                    values[2 * i] = v;
                }
            }
            let coeffs = lobatto_coefficients(&values);
            let tail = coeffs[n - 3..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if tail <= tol || n >= Self::MAX_NODES {
                if tail > tol {
                    return Err(PzdError::NonConvergence {
                        iterations: n,
                        residual: tail,
                        last_iterate: coeffs,
                    });
                }
                let dcoeffs = derivative_coefficients(&coeffs, hi);
                return Ok(Self {
                    hi,
                    coeffs,
                    dcoeffs,
                });
            }
            n = 2 * n - 1;
        }
    }

    pub fn upper(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn value(&self, r0: f64) -> f64 {
        clenshaw(&self.coeffs, self.to_unit(r0))
    }

    pub fn derivative(&self, r0: f64) -> f64 {
        clenshaw(&self.dcoeffs, self.to_unit(r0))
    }

    fn to_unit(&self, r0: f64) -> f64 {
        (2.0 * r0 / self.hi - 1.0).clamp(-1.0, 1.0)
    }
}

/// Chebyshev coefficients from values at `x_k = cos(pi k / (n - 1))`.
fn lobatto_coefficients(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let nm = (n - 1) as f64;
    (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for (k, v) in values.iter().enumerate() {
                let wk = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                acc += wk * v * (PI * (j * k) as f64 / nm).cos();
            }
            let scale = if j == 0 || j == n - 1 { 1.0 } else { 2.0 };
            scale * acc / nm
        })
        .collect()
}

/// Coefficients of `d/dr0` for a series on `[0, hi]`.
fn derivative_coefficients(c: &[f64], hi: f64) -> Vec<f64> {
    let n = c.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    d[n - 2] = 2.0 * (n - 1) as f64 * c[n - 1];
    for k in (0..n.saturating_sub(2)).rev() {
        d[k] = d[k + 2] + 2.0 * (k + 1) as f64 * c[k + 1];
    }
    d[0] *= 0.5;
    let scale = 2.0 / hi;
    d.iter().map(|v| v * scale).collect()
}

fn clenshaw(c: &[f64], x: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * x * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    x * b1 - b2 + c[0]
}
