//! Conditional law of the PZD channel.
//!
//! The joint density of the output amplitude and phase given the input is a
//! Rician amplitude term plus an angular Fourier series whose coefficients
//! involve `I_m` at complex arguments. [`SeriesExpansion`] truncates that
//! series at an order `M` with a certified bound on the discarded tail over a
//! rectangular envelope of `(r, r0)`.

use std::f64::consts::{PI, SQRT_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PzdError, Result};
use crate::special_fn::{bessel_i_scaled_unchecked, bessel_ratio_bound, scaled_bessel};

/// Physical channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Nonlinearity coefficient, 1/(W km).
    pub gamma: f64,
    /// In-band noise power per unit length, W/km.
    pub sigma2: f64,
    /// Fiber length, km.
    pub length: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            sigma2: 1.0,
            length: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn new(gamma: f64, sigma2: f64, length: f64) -> Result<Self> {
        let p = Self {
            gamma,
            sigma2,
            length,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(PzdError::Invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(PzdError::Invalid(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(PzdError::Invalid(format!("length must be > 0, got {}", self.length)));
        }
        Ok(())
    }

    /// `sigma^2 L`, the only noise scale appearing in the channel law.
    pub fn noise_power(&self) -> f64 {
        self.sigma2 * self.length
    }

    /// `beta_m = sqrt(m gamma / 2) sigma L`.
    pub fn beta(&self, m: usize) -> f64 {
        (m as f64 * self.gamma / 2.0).sqrt() * self.sigma2.sqrt() * self.length
    }

    /// Nonlinear phase rotation `gamma L` per unit input power.
    pub fn phase_per_power(&self) -> f64 {
        self.gamma * self.length
    }
}

/// A point in polar coordinates with the phase wrapped into `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub r: f64,
    pub phi: f64,
}

impl PolarPoint {
    pub fn new(r: f64, phi: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(PzdError::Domain(format!("amplitude must be >= 0, got {r}")));
        }
        if !phi.is_finite() {
            return Err(PzdError::Domain(format!("phase must be finite, got {phi}")));
        }
        Ok(Self {
            r,
            phi: wrap_two_pi(phi),
        })
    }
}

pub(crate) fn wrap_two_pi(phi: f64) -> f64 {
    let t = phi.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Returns `(t(x), tau(x))`, the scaled real and imaginary parts of `a_m` at `x = beta_m`.
pub fn t_tau(x: f64) -> Result<(f64, f64)> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(PzdError::Domain(format!("t/tau need x >= 0, got {x}")));
    }
    let v = w_coth_w(x);
    Ok((v.re, v.im))
}

/// `w coth w` at `w = x (1 + j)`.
fn w_coth_w(x: f64) -> Complex64 {
    if x < 1e-2 {
        let x2 = x * x;
        let x4 = x2 * x2;
        return Complex64::new(1.0 + 4.0 * x4 / 45.0, 2.0 * x2 / 3.0 - 16.0 * x4 * x2 / 945.0);
    }
    let w = Complex64::new(x, x);
    let e2 = (-2.0 * w).exp();
    w * (1.0 + e2) / (1.0 - e2)
}

/// `w / sinh w` at `w = x (1 + j)`.
fn w_over_sinh_w(x: f64) -> Complex64 {
    if x < 1e-2 {
        // w^2 = 2j x^2, w^4 = -4 x^4
        let x2 = x * x;
        let x4 = x2 * x2;
        return Complex64::new(1.0 - 7.0 * 4.0 * x4 / 360.0, -2.0 * x2 / 6.0);
    }
    let w = Complex64::new(x, x);
    let e2 = (-2.0 * w).exp();
    w * 2.0 * (-w).exp() / (1.0 - e2)
}

/// `x / sinh x`, finite for every `x >= 0`.
pub(crate) fn x_over_sinh(x: f64) -> f64 {
    if x < 1e-4 {
        1.0 - x * x / 6.0
    } else if x > 20.0 {
        2.0 * x * (-x).exp() / (1.0 - (-2.0 * x).exp())
    } else {
        x / x.sinh()
    }
}

/// One retained Fourier order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesCoeff {
    pub a: Complex64,
    pub b: Complex64,
    pub beta: f64,
}

/// `S = sum_{m >= 1} beta_m / sinh(beta_m)` evaluated as a partial sum plus a
/// certified bound on the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSum {
    pub partial: f64,
    pub tail: f64,
    pub terms: usize,
}

impl BetaSum {
    const MAX_TERMS: usize = 50_000_000;

    pub fn compute(params: &ChannelParams) -> Self {
        // beta_m = c sqrt(m)
        let c = params.beta(1);
        if c == 0.0 {
            return Self {
                partial: f64::INFINITY,
                tail: f64::INFINITY,
                terms: 0,
            };
        }
        let tail_at = |u: f64| {
            // int_K^inf 2 c sqrt(x) e^{-c sqrt x} dx / (1 - e^{-2u}), u = c sqrt(K)
            4.0 / (c * c) * (-u).exp() * (u * u + 2.0 * u + 2.0) / (1.0 - (-2.0 * u).exp())
        };
        let mut u = 1.0;
        while tail_at(u) > 1e-15 && u < 1e4 {
            u += 0.25;
        }
        let terms = (((u / c).powi(2)).ceil() as usize).clamp(1, Self::MAX_TERMS);
        let mut sum = 0.0;
        let mut comp = 0.0;
        for m in 1..=terms {
            let y = x_over_sinh(c * (m as f64).sqrt()) - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        Self {
            partial: sum,
            tail: tail_at(c * (terms as f64).sqrt()),
            terms,
        }
    }

    /// Conservative value of the full sum.
    pub fn upper(&self) -> f64 {
        self.partial + self.tail
    }
}

/// Truncated series representation of the conditional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesExpansion {
    pub params: ChannelParams,
    pub truncation_m: usize,
    pub coeffs: Vec<SeriesCoeff>,
    /// Bound on `|joint_pdf - true density|` anywhere in the envelope,
    /// including a floating-point rounding allowance.
    pub tail_bound: f64,
    pub r_max: f64,
    pub r0_max: f64,
    pub beta_sum: BetaSum,
}

/// Largest truncation order considered by [`make_expansion`].
pub const MAX_TRUNCATION: usize = 10_000;

fn coeff(params: &ChannelParams, m: usize) -> SeriesCoeff {
    let s = params.noise_power();
    let beta = params.beta(m);
    SeriesCoeff {
        a: w_coth_w(beta) / s,
        b: w_over_sinh_w(beta) / s,
        beta,
    }
}

/// `B_m >= |b_m|`, non-increasing in `m`.
fn b_envelope(params: &ChannelParams, m: usize) -> f64 {
    let s = params.noise_power();
    (SQRT_2 * x_over_sinh(params.beta(m)) / s).min(1.0 / s)
}

/// Chooses the smallest truncation order whose certified tail is below `tol`
/// over `r <= r_max`, `r0 <= r0_max`.
pub fn make_expansion(
    params: ChannelParams,
    tol: f64,
    r_max: f64,
    r0_max: f64,
) -> Result<SeriesExpansion> {
    params.validate()?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(PzdError::Invalid(format!("tol must be > 0, got {tol}")));
    }
    if !(r_max.is_finite() && r_max > 0.0 && r0_max.is_finite() && r0_max > 0.0) {
        return Err(PzdError::Invalid(format!(
            "envelopes must be positive, got r_max = {r_max}, r0_max = {r0_max}"
        )));
    }
    let s = params.noise_power();
    // |C_m| <= 2 r_max B_m R_m(2 B_m r_max r0_max); the running sum of these
    // bounds sets the rounding allowance.
    let term_bound = |m: usize| {
        let bm = b_envelope(&params, m);
        2.0 * r_max * bm * bessel_ratio_bound(m as u32, 2.0 * bm * r_max * r0_max)
    };
    let mut scale = r_max / s;
    let mut best = f64::INFINITY;
    for m in 1..=MAX_TRUNCATION {
        scale += term_bound(m);
        let next = m + 1;
        let bm = b_envelope(&params, next);
        let x = 2.0 * bm * r_max * r0_max;
        let c = next as f64 + 0.5;
        let q = x / (c + c.hypot(x));
        let series_tail = 2.0 * r_max * bm * bessel_ratio_bound(next as u32, x) / (1.0 - q) / PI;
        let rounding = 8.0 * f64::EPSILON * scale / PI;
        let total = series_tail + rounding;
        best = best.min(total);
        if total <= tol {
            let coeffs = (1..=m).map(|k| coeff(&params, k)).collect();
            return Ok(SeriesExpansion {
                params,
                truncation_m: m,
                coeffs,
                tail_bound: total,
                r_max,
                r0_max,
                beta_sum: BetaSum::compute(&params),
            });
        }
        if series_tail < rounding * 1e-3 {
            // The rounding allowance only grows from here on.
            break;
        }
    }
    Err(PzdError::Truncation {
        best_bound: best,
        truncation_m: MAX_TRUNCATION,
        requested: tol,
    })
}

/// Rician amplitude density `p_{R|R0}(r | r0)` for noise power `s = sigma^2 L`.
pub fn rician_pdf(s: f64, r: f64, r0: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let x = 2.0 * r * r0 / s;
    2.0 * r / s * (-(r - r0) * (r - r0) / s).exp() * bessel_i_scaled_unchecked(0, x)
}

/// `d/dr0 p_{R|R0}(r | r0)`.
pub fn rician_pdf_dr0(s: f64, r: f64, r0: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let x = 2.0 * r * r0 / s;
    let i0 = bessel_i_scaled_unchecked(0, x);
    let i1 = bessel_i_scaled_unchecked(1, x);
    2.0 * r / s * (-(r - r0) * (r - r0) / s).exp() * (2.0 * r / s * i1 - 2.0 * r0 / s * i0)
}

fn check_amplitudes(r: f64, r0: f64) -> Result<()> {
    if !(r.is_finite() && r >= 0.0 && r0.is_finite() && r0 >= 0.0) {
        return Err(PzdError::Domain(format!(
            "amplitudes must be finite and >= 0, got r = {r}, r0 = {r0}"
        )));
    }
    Ok(())
}

/// Series coefficients of the conditional density at one `(r, r0)`.
#[derive(Debug, Clone)]
pub struct RadialSlice {
    /// `p_{R|R0}(r | r0)`.
    pub amplitude: f64,
    /// `C_m(r, r0) e^{-j m gamma r0^2 L}` for `m = 1..=M`, where
    /// `C_m = 2 r b_m e^{-a_m (r^2 + r0^2)} I_m(2 b_m r0 r)`.
    pub rotated: Vec<Complex64>,
}

impl RadialSlice {
    /// Truncated density at phase offset `dphi = phi - phi0`.
    pub fn density(&self, dphi: f64) -> f64 {
        let step = Complex64::from_polar(1.0, dphi);
        let mut e = step;
        let mut acc = 0.0;
        for c in &self.rotated {
            acc += c.re * e.re - c.im * e.im;
            e *= step;
        }
        self.amplitude / TAU + acc / PI
    }

    /// Drops trailing orders whose magnitude is below `floor`.
    pub fn trim(&mut self, floor: f64) {
        let keep = self
            .rotated
            .iter()
            .rposition(|c| c.norm() > floor)
            .map_or(0, |i| i + 1);
        self.rotated.truncate(keep);
    }

    /// Re-expresses the slice as a function of `phi` for input phase `phi0`.
    pub fn rotate(&mut self, phi0: f64) {
        let step = Complex64::from_polar(1.0, -phi0);
        let mut e = step;
        for c in self.rotated.iter_mut() {
            *c *= e;
            e *= step;
        }
    }

    /// Density on `n` uniform phase offsets `2 pi k / n`, using shared trig tables.
    pub fn density_on_circle(&self, n: usize, cos_t: &[f64], sin_t: &[f64], out: &mut [f64]) {
        debug_assert!(cos_t.len() == n && sin_t.len() == n && out.len() == n);
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut idx = 0usize;
            for c in &self.rotated {
                idx += k;
                if idx >= n {
                    idx %= n;
                }
                acc += c.re * cos_t[idx] - c.im * sin_t[idx];
            }
            *o = self.amplitude / TAU + acc / PI;
        }
    }
}

/// Analytic envelopes of the conditional density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBounds {
    pub lower: f64,
    pub upper: f64,
    pub k_u: f64,
    pub xi_r0: f64,
}

impl SeriesExpansion {
    pub fn noise_power(&self) -> f64 {
        self.params.noise_power()
    }

    fn check_envelope(&self, r: f64, r0: f64) -> Result<()> {
        check_amplitudes(r, r0)?;
        let slack = 1.0 + 1e-12;
        if r > self.r_max * slack || r0 > self.r0_max * slack {
            return Err(PzdError::Envelope {
                r,
                r0,
                r_max: self.r_max,
                r0_max: self.r0_max,
            });
        }
        Ok(())
    }

    pub fn contains(&self, r: f64, r0: f64) -> bool {
        self.check_envelope(r, r0).is_ok()
    }

    /// Rician amplitude density; independent of `gamma`.
    pub fn amplitude_pdf(&self, r: f64, r0: f64) -> Result<f64> {
        check_amplitudes(r, r0)?;
        Ok(rician_pdf(self.noise_power(), r, r0))
    }

    /// Coefficients `C_m(r, r0)`; the nonlinear rotation is carried by `a_m`, `b_m`.
    pub fn radial_slice(&self, r: f64, r0: f64) -> Result<RadialSlice> {
        self.check_envelope(r, r0)?;
        Ok(self.radial_slice_unchecked(r, r0))
    }

    pub(crate) fn radial_slice_unchecked(&self, r: f64, r0: f64) -> RadialSlice {
        let s = self.noise_power();
        let amplitude = rician_pdf(s, r, r0);
        let mut rotated = Vec::with_capacity(self.truncation_m);
        if r == 0.0 || r0 == 0.0 {
            rotated.resize(self.truncation_m, Complex64::new(0.0, 0.0));
            return RadialSlice { amplitude, rotated };
        }
        let rr = r * r + r0 * r0;
        for (k, c) in self.coeffs.iter().enumerate() {
            let m = (k + 1) as u32;
            let z = c.b * (2.0 * r0 * r);
            let sb = scaled_bessel(m, z);
            if sb.value.re == 0.0 && sb.value.im == 0.0 {
                rotated.push(Complex64::new(0.0, 0.0));
                continue;
            }
            let expo = -c.a * rr + sb.shift;
            rotated.push(c.b * (2.0 * r) * expo.exp() * sb.value);
        }
        RadialSlice { amplitude, rotated }
    }

    /// Truncated series value without clamping.
    pub fn joint_pdf_raw(&self, y: PolarPoint, x0: PolarPoint) -> Result<f64> {
        Ok(self.radial_slice(y.r, x0.r)?.density(y.phi - x0.phi))
    }

    /// Conditional density `p(r, phi | r0, phi0)`, clamped at zero when the
    /// truncated series dips below zero by no more than the certified tail.
    pub fn joint_pdf(&self, y: PolarPoint, x0: PolarPoint) -> Result<f64> {
        let raw = self.joint_pdf_raw(y, x0)?;
        self.clamp(raw)
    }

    pub(crate) fn clamp(&self, raw: f64) -> Result<f64> {
        if raw >= 0.0 {
            Ok(raw)
        } else if -raw <= self.tail_bound {
            Ok(0.0)
        } else {
            Err(PzdError::NegativeDensity {
                value: raw,
                tail_bound: self.tail_bound,
            })
        }
    }

    /// `k_u = (1 + 2 sqrt(2) S) / (2 pi)`; infinite for `gamma = 0`.
    pub fn k_u(&self) -> f64 {
        (1.0 + 2.0 * SQRT_2 * self.beta_sum.upper()) / TAU
    }

    /// `Re(a_1) - 1 / (sigma^2 L)`.
    pub fn a1_excess(&self) -> f64 {
        let s = self.noise_power();
        (t_tau(self.params.beta(1)).map(|v| v.0).unwrap_or(1.0) - 1.0) / s
    }

    /// `xi(r0) = 2 sqrt(2) e^{-(Re a_1 - 1/sigma^2 L) r0^2} S`.
    pub fn xi(&self, r0: f64) -> f64 {
        let sum = self.beta_sum.upper();
        if sum.is_infinite() {
            return f64::INFINITY;
        }
        2.0 * SQRT_2 * (-self.a1_excess() * r0 * r0).exp() * sum
    }

    /// Upper and lower analytic envelopes around the conditional density.
    pub fn conditional_bounds(&self, y: PolarPoint, x0: PolarPoint) -> Result<ConditionalBounds> {
        self.check_envelope(y.r, x0.r)?;
        let p_r = rician_pdf(self.noise_power(), y.r, x0.r);
        let k_u = self.k_u();
        let xi_r0 = self.xi(x0.r);
        let upper = if p_r == 0.0 { 0.0 } else { k_u * p_r };
        let lower = if xi_r0.is_infinite() {
            f64::NEG_INFINITY
        } else {
            p_r * (1.0 - xi_r0) / TAU
        };
        Ok(ConditionalBounds {
            lower,
            upper,
            k_u,
            xi_r0,
        })
    }

    /// Violations of the coefficient inequalities, empty when all hold.
    pub fn coefficient_violations(&self) -> Vec<String> {
        let s = self.noise_power();
        let mut out = Vec::new();
        let strict = self.params.gamma > 0.0;
        let mut prev_re_a = f64::NEG_INFINITY;
        for (k, c) in self.coeffs.iter().enumerate() {
            let m = k + 1;
            let lower_ok = if strict {
                c.a.re > 1.0 / s
            } else {
                c.a.re >= 1.0 / s * (1.0 - 1e-15)
            };
            if !lower_ok {
                out.push(format!("Re(a_{m}) = {} is not above 1/(sigma^2 L)", c.a.re));
            }
            if c.a.re < prev_re_a * (1.0 - 1e-14) {
                out.push(format!("Re(a_{m}) decreased"));
            }
            prev_re_a = c.a.re;
            if c.b.re > (1.0 / s) * (1.0 + 1e-14) {
                out.push(format!("Re(b_{m}) = {} exceeds 1/(sigma^2 L)", c.b.re));
            }
            let cap = SQRT_2 * x_over_sinh(c.beta) / s;
            if c.b.norm() > cap * (1.0 + 1e-14) {
                out.push(format!("|b_{m}| = {} exceeds {cap}", c.b.norm()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_exp() -> SeriesExpansion {
        make_expansion(ChannelParams::default(), 1e-12, 10.0, 4.0).unwrap()
    }

    #[test]
    fn t_tau_values() {
        assert_eq!(t_tau(0.0).unwrap(), (1.0, 0.0));
        let (t, tau) = t_tau(50.0).unwrap();
        assert!((t - 50.0).abs() < 1e-10 && (tau - 50.0).abs() < 1e-10);
        // defining real formulas
        let x: f64 = 1.3;
        let den = 2.0 * (x.sinh().powi(2) + x.sin().powi(2));
        let t_ref = x * ((2.0 * x).sinh() + (2.0 * x).sin()) / den;
        let tau_ref = x * ((2.0 * x).sinh() - (2.0 * x).sin()) / den;
        let (t, tau) = t_tau(x).unwrap();
        assert!((t - t_ref).abs() < 1e-14 && (tau - tau_ref).abs() < 1e-14);
        assert!(t_tau(-1.0).is_err());
    }

    #[test]
    fn small_argument_series_is_continuous() {
        for &x in &[0.00999, 0.01] {
            let a = w_coth_w(x);
            let w = Complex64::new(x, x);
            let direct = w * w.cosh() / w.sinh();
            assert!((a - direct).norm() < 1e-13);
            let b = w_over_sinh_w(x);
            assert!((b - w / w.sinh()).norm() < 1e-13);
        }
    }

    #[test]
    fn coefficients_match_definition() {
        let p = ChannelParams::new(0.7, 1.3, 2.0).unwrap();
        for m in [1usize, 4, 17] {
            let c = coeff(&p, m);
            let root = Complex64::new(0.0, m as f64 * p.gamma).sqrt();
            let sigma = p.sigma2.sqrt();
            let arg = Complex64::new(0.0, m as f64 * p.gamma * p.sigma2).sqrt() * p.length;
            let a = root / sigma * arg.cosh() / arg.sinh();
            let b = root / sigma / arg.sinh();
            assert!((c.a - a).norm() < 1e-12 * a.norm());
            assert!((c.b - b).norm() < 1e-12 * b.norm());
        }
    }

    #[test]
    fn gamma_zero_coefficients_are_flat() {
        let p = ChannelParams::new(0.0, 1.0, 2.0).unwrap();
        let e = make_expansion(p, 1e-10, 6.0, 3.0).unwrap();
        for c in &e.coeffs {
            assert_eq!(c.beta, 0.0);
            assert!((c.a.re - 0.5).abs() < 1e-15 && c.a.im.abs() < 1e-15);
            assert!((c.b.re - 0.5).abs() < 1e-15 && c.b.im.abs() < 1e-15);
        }
        assert!(e.k_u().is_infinite());
    }

    #[test]
    fn truncation_tail_against_brute_force() {
        let e = make_expansion(ChannelParams::default(), 1e-12, 6.0, 6.0).unwrap();
        let m = e.truncation_m;
        assert!(e.tail_bound <= 1e-12);
        let big = make_expansion(ChannelParams::default(), 1e-12, 6.0, 6.0).unwrap();
        let coeffs: Vec<_> = (1..=5 * m).map(|k| coeff(&big.params, k)).collect();
        let mut worst: f64 = 0.0;
        for i in 0..=24 {
            for j in 0..=24 {
                let r = 6.0 * i as f64 / 24.0;
                let r0 = 6.0 * j as f64 / 24.0;
                if r == 0.0 || r0 == 0.0 {
                    continue;
                }
                let mut tail = 0.0;
                for (k, c) in coeffs.iter().enumerate().skip(m) {
                    let z = c.b * (2.0 * r * r0);
                    let sb = scaled_bessel((k + 1) as u32, z);
                    let v = c.b * (2.0 * r) * (-c.a * (r * r + r0 * r0) + sb.shift).exp() * sb.value;
                    tail += v.norm() / PI;
                }
                worst = worst.max(tail);
            }
        }
        assert!(worst <= e.tail_bound, "brute tail {worst:e} > bound {:e}", e.tail_bound);
    }

    #[test]
    fn unreachable_tolerance_fails() {
        let err = make_expansion(ChannelParams::default(), 1e-300, 6.0, 6.0).unwrap_err();
        assert!(matches!(err, PzdError::Truncation { .. }));
    }

    #[test]
    fn rayleigh_at_zero_input() {
        let e = default_exp();
        for &r in &[0.1f64, 0.9, 2.5] {
            let want = 2.0 * r * (-r * r).exp();
            assert!((e.amplitude_pdf(r, 0.0).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rician_survives_large_arguments() {
        let v = rician_pdf(1.0, 1e4, 1e4);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn joint_pdf_gaussian_limit() {
        let p = ChannelParams::new(0.0, 1.0, 1.0).unwrap();
        let e = make_expansion(p, 1e-12, 8.0, 3.0).unwrap();
        let x0 = PolarPoint::new(2.0, 0.7).unwrap();
        for &(r, phi) in &[(0.5, 0.1), (2.1, 0.8), (3.3, 4.0), (6.0, 0.7)] {
            let got = e.joint_pdf(PolarPoint::new(r, phi).unwrap(), x0).unwrap();
            let want = r / PI * (-(r * r + 4.0 - 4.0 * r * (phi - 0.7).cos())).exp();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn shift_covariance() {
        let e = default_exp();
        let a = e
            .joint_pdf_raw(PolarPoint::new(1.4, 0.3).unwrap(), PolarPoint::new(2.0, 1.0).unwrap())
            .unwrap();
        let b = e
            .joint_pdf_raw(PolarPoint::new(1.4, 2.3).unwrap(), PolarPoint::new(2.0, 3.0).unwrap())
            .unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn envelope_violation_is_reported() {
        let e = default_exp();
        let err = e
            .joint_pdf(PolarPoint::new(11.0, 0.0).unwrap(), PolarPoint::new(1.0, 0.0).unwrap())
            .unwrap_err();
        assert!(matches!(err, PzdError::Envelope { .. }));
    }

    #[test]
    fn sandwich_at_reference_point() {
        let e = default_exp();
        let y = PolarPoint::new(1.2, 0.5).unwrap();
        let x0 = PolarPoint::new(2.0, 1.0).unwrap();
        let p = e.joint_pdf(y, x0).unwrap();
        let b = e.conditional_bounds(y, x0).unwrap();
        assert!(b.k_u.is_finite());
        assert!(b.lower <= p + e.tail_bound && p <= b.upper + e.tail_bound);
    }

    #[test]
    fn xi_decays() {
        let e = make_expansion(ChannelParams::default(), 1e-10, 12.0, 10.0).unwrap();
        assert!(e.xi(10.0) / e.xi(5.0) < 1.0);
        assert!(e.xi(60.0) < 1e-3);
    }

    #[test]
    fn coefficient_inequalities_hold() {
        for &g in &[0.0, 0.05, 1.0, 5.0, 40.0] {
            let p = ChannelParams::new(g, 1.0, 1.0).unwrap();
            let e = make_expansion(p, 1e-10, 8.0, 3.0).unwrap();
            assert!(e.coefficient_violations().is_empty(), "gamma {g}: {:?}", e.coefficient_violations());
        }
    }

    #[test]
    fn beta_sum_tail_is_tiny() {
        let s = BetaSum::compute(&ChannelParams::default());
        assert!(s.tail < 1e-14);
        // u^2/sinh(u) integral approximation: (2/c^2) * 7 zeta(3)/2 with c^2 = 1/2
        assert!((s.partial - 14.0 * 1.2020569).abs() < 1.0, "{}", s.partial);
    }
}
