//! Modified Bessel functions of the first kind (integer order, real and
//! complex argument) and the Laguerre function `L_{1/2}` on the negative axis.
//!
//! Values are carried in scaled form, `I_m(z) = value * exp(shift)`, so that
//! arguments far beyond the `f64` overflow threshold of `e^z` remain usable.
//! Small arguments use the power series; everything else uses Miller's
//! backward recurrence normalized with `e^z = I_0(z) + 2 sum_k I_k(z)`.

use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::error::{PzdError, Result};

/// `I_m(z)` stored as log-magnitude and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBessel {
    /// Natural log of `|I_m(z)|`; `-inf` when the value is exactly zero.
    pub log_magnitude: f64,
    /// Argument of `I_m(z)` in radians, wrapped into `(-pi, pi]`.
    pub phase: f64,
}

impl LogBessel {
    /// Reconstructs the complex value. Overflows to infinity for huge arguments.
    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.log_magnitude.exp(), self.phase)
    }
}

/// `I_m(z) = value * exp(shift)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaledBessel {
    pub value: Complex64,
    pub shift: Complex64,
}

impl ScaledBessel {
    fn log_bessel(self) -> LogBessel {
        if self.value == Complex64::new(0.0, 0.0) {
            return LogBessel {
                log_magnitude: f64::NEG_INFINITY,
                phase: 0.0,
            };
        }
        let log_magnitude = self.shift.re + self.value.norm().ln();
        let phase = wrap_pi(self.shift.im + self.value.arg());
        LogBessel {
            log_magnitude,
            phase,
        }
    }
}

fn wrap_pi(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut t = theta.rem_euclid(two_pi);
    if t > std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

fn ln_factorial(m: u32) -> f64 {
    if m < 2 {
        0.0
    } else {
        ln_gamma(m as f64 + 1.0)
    }
}

/// Power series in scaled form; accurate when `|z|^2 <= 2(m+1)` or `|z| <= 2`.
fn series(m: u32, z: Complex64) -> ScaledBessel {
    if z.norm() == 0.0 {
        let value = if m == 0 { 1.0 } else { 0.0 };
        return ScaledBessel {
            value: Complex64::new(value, 0.0),
            shift: Complex64::new(0.0, 0.0),
        };
    }
    let q = z * z * 0.25;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    let mf = m as f64;
    for k in 0..10_000u32 {
        let kf = k as f64;
        term *= q / ((kf + 1.0) * (kf + mf + 1.0));
        sum += term;
        if term.norm() <= 1e-17 * sum.norm() && kf + 1.0 > q.norm().sqrt() {
            break;
        }
    }
    if m <= 64 {
        let mut pre = Complex64::new(1.0, 0.0);
        for k in 1..=m {
            pre *= z * (0.5 / k as f64);
        }
        let n = pre.norm();
        if n.is_finite() && n > 1e-290 {
            return ScaledBessel {
                value: sum * pre,
                shift: Complex64::new(0.0, 0.0),
            };
        }
    }
    let shift = (z * 0.5).ln() * mf - ln_factorial(m);
    ScaledBessel { value: sum, shift }
}

fn use_series(m: u32, z: Complex64) -> bool {
    let a = z.norm();
    a <= 2.0 || a * a <= 2.0 * (m as f64 + 1.0)
}

/// Miller backward recurrence for `e^{-z} I_k(z)`, `k = 0..=m_max`, `Re z >= 0`.
fn miller_scaled(m_max: u32, z: Complex64) -> Vec<Complex64> {
    let base = (m_max as f64).max(z.norm().ceil());
    let n_start = (base + 20.0 + 10.0 * base.sqrt()).ceil() as u32;
    let mut out = vec![Complex64::new(0.0, 0.0); m_max as usize + 1];
    let mut f_next = Complex64::new(0.0, 0.0);
    let mut f_cur = Complex64::new(1.0, 0.0);
    let mut norm = Complex64::new(0.0, 0.0);
    let inv_z = z.inv();
    for k in (1..=n_start).rev() {
        if k <= m_max {
            out[k as usize] = f_cur;
        }
        norm += f_cur * 2.0;
        let f_prev = inv_z * (2.0 * k as f64) * f_cur + f_next;
        f_next = f_cur;
        f_cur = f_prev;
        if f_cur.norm() > 1e200 {
            let s = 1e-200;
            f_cur *= s;
            f_next *= s;
            norm *= s;
            for v in out.iter_mut().skip(k as usize) {
                *v *= s;
            }
        }
    }
    out[0] = f_cur;
    norm += f_cur;
    // divide through a unit-scale copy so |norm|^2 cannot leave the f64 range
    let s = norm.re.abs().max(norm.im.abs());
    let unit = norm / s;
    for v in out.iter_mut() {
        *v = *v / unit / s;
    }
    out
}

pub(crate) fn scaled_bessel(m: u32, z: Complex64) -> ScaledBessel {
    if use_series(m, z) {
        return series(m, z);
    }
    // I_m(-w) = (-1)^m I_m(w)
    let (w, sign) = if z.re < 0.0 {
        (-z, if m.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (z, 1.0)
    };
    let run = miller_scaled(m, w);
    ScaledBessel {
        value: run[m as usize] * sign,
        shift: w,
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(PzdError::Domain(format!("{name} must be finite, got {v}")))
    }
}

/// `e^{-x} I_m(x)` for real `x >= 0`.
pub fn bessel_i_scaled(m: u32, x: f64) -> Result<f64> {
    check_finite("x", x)?;
    if x < 0.0 {
        return Err(PzdError::Domain(format!("x must be non-negative, got {x}")));
    }
    Ok(bessel_i_scaled_unchecked(m, x))
}

pub(crate) fn bessel_i_scaled_unchecked(m: u32, x: f64) -> f64 {
    if m <= 1 {
        return scaled_low_order(m, x);
    }
    let z = Complex64::new(x, 0.0);
    if use_series(m, z) {
        let s = series(m, z);
        if s.value.re == 0.0 {
            return 0.0;
        }
        return s.value.re * (s.shift.re - x).exp();
    }
    miller_scaled(m, z)[m as usize].re
}

/// `e^{-x} I_m(x)` for `m` in {0, 1}: real power series below 20, the
/// Hankel asymptotic series above.
fn scaled_low_order(m: u32, x: f64) -> f64 {
    if x <= 20.0 {
        let q = 0.25 * x * x;
        let mut term = if m == 0 { 1.0 } else { 0.5 * x };
        let mut sum = term;
        let mf = m as f64;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= q / (k * (k + mf));
            sum += term;
            if term <= 1e-17 * sum {
                break;
            }
        }
        return sum * (-x).exp();
    }
    let mu = 4.0 * (m * m) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (k * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (std::f64::consts::TAU * x).sqrt()
}

/// `e^{-x} I_k(x)` for `k = 0..=m_max`, sharing one backward recurrence.
pub fn bessel_i_scaled_orders(m_max: u32, x: f64) -> Result<Vec<f64>> {
    check_finite("x", x)?;
    if x < 0.0 {
        return Err(PzdError::Domain(format!("x must be non-negative, got {x}")));
    }
    let z = Complex64::new(x, 0.0);
    if x <= 2.0 {
        return Ok((0..=m_max)
            .map(|m| bessel_i_scaled_unchecked(m, x))
            .collect());
    }
    let run = miller_scaled(m_max, z);
    Ok(run.into_iter().map(|v| v.re).collect())
}

/// `I_m(z)` for complex `z` in log-magnitude/phase form.
pub fn bessel_i_complex(m: u32, z: Complex64) -> Result<LogBessel> {
    check_finite("Re z", z.re)?;
    check_finite("Im z", z.im)?;
    Ok(scaled_bessel(m, z).log_bessel())
}

/// Laguerre function `L_{1/2}(x)` for `x <= 0`.
///
/// Uses `L_{1/2}(x) = e^{x/2} [(1 - x) I_0(-x/2) - x I_1(-x/2)]`.
pub fn laguerre_half(x: f64) -> Result<f64> {
    check_finite("x", x)?;
    if x > 0.0 {
        return Err(PzdError::Domain(format!(
            "L_1/2 is only provided for x <= 0, got {x}"
        )));
    }
    Ok(laguerre_half_unchecked(x))
}

pub(crate) fn laguerre_half_unchecked(x: f64) -> f64 {
    let y = -0.5 * x;
    let i0 = bessel_i_scaled_unchecked(0, y);
    let i1 = bessel_i_scaled_unchecked(1, y);
    (1.0 + 2.0 * y) * i0 + 2.0 * y * i1
}

/// Upper bound on `I_m(x) / I_0(x)` for `x >= 0`:
/// `prod_{k<m} x / (k + 1/2 + sqrt((k + 1/2)^2 + x^2))`.
pub fn bessel_ratio_bound(m: u32, x: f64) -> f64 {
    let mut log = 0.0;
    for k in 0..m {
        let c = k as f64 + 0.5;
        let f = x / (c + c.hypot(x));
        if f == 0.0 {
            return 0.0;
        }
        log += f.ln();
    }
    log.exp()
}

/// `K(eps) = min_{x >= 0} e^{(eps - 1) x} I_0(x)`, located by a coarse scan and
/// golden-section refinement.
pub fn bessel_lower_constant(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(PzdError::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    let f = |x: f64| (eps * x).exp() * bessel_i_scaled_unchecked(0, x);
    // The minimizer sits near 1/(2 eps); scan well past it.
    let hi = 20.0 / eps;
    let n = 2000;
    let mut best = (0.0, f(0.0));
    for i in 1..=n {
        let x = hi * i as f64 / n as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let step = hi / n as f64;
    let (mut a, mut b) = ((best.0 - step).max(0.0), best.0 + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 * (1.0 + best.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    Ok(f(0.5 * (a + b)).min(best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// (1/pi) int_0^pi e^{z cos t - shift} cos(m t) dt by the trapezoid rule.
    fn integral_oracle(m: u32, z: Complex64, shift: Complex64) -> Complex64 {
        let n = 4096;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..=n {
            let t = PI * k as f64 / n as f64;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += (z * t.cos() - shift).exp() * (m as f64 * t).cos() * w;
        }
        acc / n as f64
    }

    #[test]
    fn scaled_values_at_origin() {
        assert_eq!(bessel_i_scaled(0, 0.0).unwrap(), 1.0);
        for m in 1..5 {
            assert_eq!(bessel_i_scaled(m, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn scaled_matches_integral_representation() {
        let want = integral_oracle(1, Complex64::new(2.0, 0.0), Complex64::new(2.0, 0.0)).re;
        let got = bessel_i_scaled(1, 2.0).unwrap();
        assert!((got - want).abs() <= 1e-13 * want, "{got} vs {want}");
        for &(m, x) in &[(0, 0.3), (3, 7.5), (10, 40.0), (2, 150.0), (25, 60.0)] {
            let want = integral_oracle(m, Complex64::new(x, 0.0), Complex64::new(x, 0.0)).re;
            let got = bessel_i_scaled(m, x).unwrap();
            assert!((got - want).abs() <= 1e-12 * want, "m={m} x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bessel_i_scaled(0, f64::NAN).is_err());
        assert!(bessel_i_scaled(0, -1.0).is_err());
        assert!(bessel_i_complex(0, Complex64::new(f64::NAN, 0.0)).is_err());
        assert!(laguerre_half(0.5).is_err());
    }

    #[test]
    fn complex_trivial_cases() {
        let v = bessel_i_complex(0, Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(v.log_magnitude, 0.0);
        assert_eq!(v.phase, 0.0);
        let v = bessel_i_complex(2, Complex64::new(3.0, 0.0)).unwrap();
        assert_eq!(v.phase, 0.0);
    }

    #[test]
    fn complex_matches_integral_at_one_plus_i() {
        let z = Complex64::new(1.0, 1.0);
        let got = bessel_i_complex(3, z).unwrap().to_complex();
        let want = integral_oracle(3, z, Complex64::new(0.0, 0.0));
        assert!((got - want).norm() <= 1e-12 * want.norm(), "{got} vs {want}");
    }

    #[test]
    fn complex_grid_against_integral_oracle() {
        // |z| grows with the order so that the oracle's cancellation stays small.
        for mi in 0..20u32 {
            for j in 0..20 {
                let radius = 18.0 + j as f64;
                let angle = -1.2 + 2.4 * j as f64 / 19.0 + 0.01 * mi as f64;
                let z = Complex64::from_polar(radius, angle);
                let lb = bessel_i_complex(mi, z).unwrap();
                let shift = Complex64::new(z.re.abs(), 0.0);
                let want = integral_oracle(mi, z, shift);
                let got = Complex64::from_polar((lb.log_magnitude - shift.re).exp(), lb.phase);
                let rel = (got - want).norm() / want.norm();
                assert!(rel <= 1e-10, "m={mi} z={z}: rel {rel:e}");
            }
        }
    }

    #[test]
    fn large_argument_stays_finite_in_log_form() {
        let v = bessel_i_complex(5, Complex64::new(900.0, 30.0)).unwrap();
        assert!(v.log_magnitude.is_finite());
        assert!(v.log_magnitude > 880.0);
        let x = bessel_i_scaled(0, 1e4).unwrap();
        let asym = 1.0 / (2.0 * PI * 1e4f64).sqrt();
        assert!((x / asym - 1.0).abs() < 1e-4);
    }

    #[test]
    fn laguerre_values() {
        assert_eq!(laguerre_half(0.0).unwrap(), 1.0);
        let v = laguerre_half(-100.0).unwrap();
        let asym = 100f64.sqrt() * 2.0 / PI.sqrt();
        assert!((v / asym - 1.0).abs() < 0.02, "{v} vs {asym}");
    }

    #[test]
    fn laguerre_matches_rician_mean_quadrature() {
        // sigma^2 L = 2, r0^2 = 2.5: mean = (sqrt(2 pi)/2) L_1/2(-1.25)
        let s: f64 = 2.0;
        let r0 = 2.5f64.sqrt();
        let n = 200_000;
        let hi = 20.0;
        let h = hi / n as f64;
        let mut mean = 0.0;
        for k in 0..=n {
            let r = h * k as f64;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let x = 2.0 * r * r0 / s;
            let pdf = 2.0 * r / s * (-(r - r0).powi(2) / s).exp() * bessel_i_scaled(0, x).unwrap();
            mean += w * r * pdf * h;
        }
        let l = mean * 2.0 / (s * PI).sqrt();
        let got = laguerre_half(-r0 * r0 / s).unwrap();
        assert!((got - l).abs() <= 1e-12 * l.max(1.0) * 10.0, "{got} vs {l}");
    }

    #[test]
    fn ratio_bound_dominates() {
        for &x in &[0.1, 1.0, 5.0, 30.0, 200.0] {
            let i0 = bessel_i_scaled(0, x).unwrap();
            for m in 0..60 {
                let im = bessel_i_scaled(m, x).unwrap();
                assert!(im <= i0 * bessel_ratio_bound(m, x) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn lower_constant_is_positive_minimum() {
        let k = bessel_lower_constant(0.1).unwrap();
        assert!(k > 0.0 && k < 1.0);
        for i in 0..2000 {
            let x = i as f64 * 0.05;
            let v = (0.1 * x).exp() * bessel_i_scaled(0, x).unwrap();
            assert!(v >= k * (1.0 - 1e-12));
        }
    }

    #[test]
    fn orders_run_matches_single_evaluations() {
        for &x in &[0.5, 3.0, 80.0] {
            let run = bessel_i_scaled_orders(30, x).unwrap();
            for (m, v) in run.iter().enumerate() {
                let single = bessel_i_scaled(m as u32, x).unwrap();
                assert!((v - single).abs() <= 1e-13 * single.abs().max(1e-300), "m={m} x={x}");
            }
        }
    }

    #[test]
    fn low_order_fast_path_matches_recurrence() {
        for &x in &[0.0, 1e-3, 0.7, 5.0, 19.99, 20.01, 35.0, 400.0, 1e4] {
            let run = bessel_i_scaled_orders(1, x).unwrap();
            for m in 0..=1u32 {
                let fast = scaled_low_order(m, x);
                let slow = if x <= 2.0 {
                    run[m as usize]
                } else {
                    miller_scaled(1, Complex64::new(x, 0.0))[m as usize].re
                };
                assert!((fast - slow).abs() <= 2e-14 * slow.max(1e-300), "m={m} x={x}: {fast} vs {slow}");
            }
        }
    }
}
