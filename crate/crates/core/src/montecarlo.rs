//! Monte-Carlo simulation of the channel from its stochastic definition.
//!
//! An output is drawn by discretizing the Wiener path into `steps`
//! circularly-symmetric Gaussian increments with `E|W(L)|^2 = sigma^2 L`,
//! accumulating `int_0^L |x + W|^2` by a left Riemann sum and rotating
//! `x + W(L)` by `gamma` times that integral.
//!
//! Samples are produced in fixed-size chunks, each from its own ChaCha8
//! stream derived from the seed, so results do not depend on the thread count.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{rician_pdf, wrap_two_pi, ChannelParams, PolarPoint, SeriesExpansion};
use crate::constellation::RingConstellation;
use crate::error::{PzdError, Result};
use crate::infomath::mixture_pdf;
use crate::par;
use crate::quad::gauss_legendre;

/// Samples per independent random stream.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub params: ChannelParams,
}

impl SimConfig {
    pub fn new(params: ChannelParams, samples: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            steps: 1000,
            samples,
            seed,
            params,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.steps < 100 {
            return Err(PzdError::Invalid(format!("steps must be >= 100, got {}", self.steps)));
        }
        if self.samples < 10_000 {
            return Err(PzdError::Invalid(format!(
                "samples must be >= 10000, got {}",
                self.samples
            )));
        }
        Ok(())
    }

    fn chunks(&self) -> usize {
        self.samples.div_ceil(CHUNK)
    }

    fn chunk_len(&self, k: usize) -> usize {
        CHUNK.min(self.samples - k * CHUNK)
    }

    fn stream(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        rng
    }
}

/// Output for a given list of Wiener increments (`W(l_{k+1}) - W(l_k)`).
pub fn output_from_increments(params: &ChannelParams, x0: Complex64, increments: &[Complex64]) -> Complex64 {
    let dl = params.length / increments.len() as f64;
    let mut z = x0;
    let mut energy = 0.0;
    for dw in increments {
        energy += z.norm_sqr();
        z += dw;
    }
    z * Complex64::from_polar(1.0, params.gamma * energy * dl)
}

/// One output draw for input `x0`.
pub fn sample_output<R: Rng + ?Sized>(rng: &mut R, params: &ChannelParams, steps: usize, x0: PolarPoint) -> PolarPoint {
    let sd = (params.noise_power() / (2.0 * steps as f64)).sqrt();
    let dl = params.length / steps as f64;
    let mut z = Complex64::from_polar(x0.r, x0.phi);
    let mut energy = 0.0;
    for _ in 0..steps {
        energy += z.norm_sqr();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        z += Complex64::new(sd * re, sd * im);
    }
    let y = z * Complex64::from_polar(1.0, params.gamma * energy * dl);
    polar(y)
}

fn polar(y: Complex64) -> PolarPoint {
    let (r, phi) = y.to_polar();
    PolarPoint {
        r,
        phi: wrap_two_pi(phi),
    }
}

/// `cfg.samples` outputs for a fixed input.
pub fn sample_outputs(cfg: &SimConfig, x0: PolarPoint) -> Result<Vec<PolarPoint>> {
    cfg.validate()?;
    let chunks = par::map_range(cfg.chunks(), |k| {
        let mut rng = cfg.stream(k);
        (0..cfg.chunk_len(k))
            .map(|_| sample_output(&mut rng, &cfg.params, cfg.steps, x0))
            .collect::<Vec<_>>()
    });
    Ok(chunks.concat())
}

fn draw_input<R: Rng + ?Sized>(rng: &mut R, c: &RingConstellation) -> PolarPoint {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut r = *c.radii().last().expect("non-empty constellation");
    for (&ri, &pi) in c.radii().iter().zip(c.probs()) {
        acc += pi;
        if u < acc {
            r = ri;
            break;
        }
    }
    PolarPoint {
        r,
        phi: TAU * rng.gen::<f64>(),
    }
}

/// `cfg.samples` (input, output) pairs with inputs drawn from `c` at uniform phase.
pub fn sample_pairs(cfg: &SimConfig, c: &RingConstellation) -> Result<Vec<(PolarPoint, PolarPoint)>> {
    cfg.validate()?;
    let chunks = par::map_range(cfg.chunks(), |k| {
        let mut rng = cfg.stream(k);
        (0..cfg.chunk_len(k))
            .map(|_| {
                let x = draw_input(&mut rng, c);
                (x, sample_output(&mut rng, &cfg.params, cfg.steps, x))
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.concat())
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_values(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            stderr: (var / n).sqrt(),
            count: v.len(),
        }
    }

    /// `|mean - target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMutualInformation {
    pub estimate: Estimate,
    pub discarded: usize,
    pub samples: usize,
}

/// `I ~ mean of ln [p(Y | X) / p(Y; F)]` over simulated pairs.
pub fn mc_mutual_information(
    cfg: &SimConfig,
    exp: &SeriesExpansion,
    c: &RingConstellation,
) -> Result<McMutualInformation> {
    if !exp.contains(0.0, c.max_radius()) {
        return Err(PzdError::Envelope {
            r: 0.0,
            r0: c.max_radius(),
            r_max: exp.r_max,
            r0_max: exp.r0_max,
        });
    }
    let s = exp.noise_power();
    let pairs = sample_pairs(cfg, c)?;
    let ratios = par::try_map_range(pairs.len().div_ceil(CHUNK), |k| -> Result<Vec<Option<f64>>> {
        let lo = k * CHUNK;
        let hi = (lo + CHUNK).min(pairs.len());
        pairs[lo..hi]
            .iter()
            .map(|&(x, y)| {
                if !exp.contains(y.r, x.r) {
                    return Ok(None);
                }
                let cond = exp.joint_pdf(y, x)?;
                let marg = mixture_pdf(s, c, y.r) / TAU;
                if cond > 0.0 && marg > 0.0 {
                    Ok(Some(cond.ln() - marg.ln()))
                } else {
                    Ok(None)
                }
            })
            .collect()
    })?;
    let all: Vec<Option<f64>> = ratios.concat();
    let values: Vec<f64> = all.iter().flatten().copied().collect();
    let discarded = all.len() - values.len();
    if discarded * 1000 > all.len() {
        return Err(PzdError::TooManyDiscards {
            discarded,
            total: all.len(),
        });
    }
    Ok(McMutualInformation {
        estimate: Estimate::from_values(&values),
        discarded,
        samples: all.len(),
    })
}

/// Uniform cells over the window `[r_lo, r_hi) x [phi_lo, phi_lo + phi_width)`
/// (phase taken modulo `2 pi`); everything else forms one overflow cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub r_bins: usize,
    pub phi_bins: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    #[serde(default)]
    pub phi_lo: f64,
    #[serde(default = "full_turn")]
    pub phi_width: f64,
}

fn full_turn() -> f64 {
    TAU
}

impl HistogramSpec {
    /// Full circle over `[0, r_hi)`.
    pub fn disc(r_bins: usize, phi_bins: usize, r_hi: f64) -> Self {
        Self {
            r_bins,
            phi_bins,
            r_lo: 0.0,
            r_hi,
            phi_lo: 0.0,
            phi_width: TAU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_bins == 0 || self.phi_bins == 0 {
            return Err(PzdError::Invalid("histogram needs at least one bin per axis".into()));
        }
        if !(self.r_lo >= 0.0 && self.r_hi > self.r_lo && self.r_hi.is_finite()) {
            return Err(PzdError::Invalid(format!(
                "histogram radial window [{}, {}) is empty",
                self.r_lo, self.r_hi
            )));
        }
        if !(self.phi_width > 0.0 && self.phi_width <= TAU && self.phi_lo.is_finite()) {
            return Err(PzdError::Invalid("phase window width must lie in (0, 2 pi]".into()));
        }
        Ok(())
    }

    fn dr(&self) -> f64 {
        (self.r_hi - self.r_lo) / self.r_bins as f64
    }

    fn dphi(&self) -> f64 {
        self.phi_width / self.phi_bins as f64
    }

    /// Row-major cell index of `y`, `None` outside the window.
    pub fn cell(&self, y: PolarPoint) -> Option<usize> {
        if y.r < self.r_lo || y.r >= self.r_hi {
            return None;
        }
        let off = (y.phi - self.phi_lo).rem_euclid(TAU);
        if off >= self.phi_width {
            return None;
        }
        let i = (((y.r - self.r_lo) / self.dr()) as usize).min(self.r_bins - 1);
        let j = ((off / self.dphi()) as usize).min(self.phi_bins - 1);
        Some(i * self.phi_bins + j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub total_variation: f64,
    pub samples: usize,
    /// Samples outside the window.
    pub outside: usize,
    /// Model probability of the outside cell.
    pub outside_probability: f64,
    /// Row-major `r_bins x phi_bins` counts.
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
}

/// Cell probabilities of the series density, by a 4 x 4 Gauss–Legendre rule on
/// sub-cells no wider than a quarter noise standard deviation in `r` and
/// `pi / M` in `phi`.
pub fn cell_probabilities(exp: &SeriesExpansion, x0: PolarPoint, bins: &HistogramSpec) -> Result<Vec<f64>> {
    bins.validate()?;
    let (gx, gw) = gauss_legendre(4);
    let dr = bins.dr();
    let dphi = bins.dphi();
    let sub_r = (dr / (0.25 * exp.noise_power().sqrt())).ceil().max(1.0) as usize;
    let sub_phi = (dphi * exp.truncation_m as f64 / PI).ceil().max(1.0) as usize;
    let (hr, hp) = (dr / sub_r as f64, dphi / sub_phi as f64);
    let rows = par::try_map_range(bins.r_bins, |i| -> Result<Vec<f64>> {
        let mut row = vec![0.0; bins.phi_bins];
        for a in 0..sub_r {
            for (&xr, &wr) in gx.iter().zip(&gw) {
                let r = bins.r_lo + dr * i as f64 + hr * (a as f64 + 0.5 + 0.5 * xr);
                let slice = exp.radial_slice(r, x0.r)?;
                for (j, cell) in row.iter_mut().enumerate() {
                    for b in 0..sub_phi {
                        for (&xp, &wp) in gx.iter().zip(&gw) {
                            let phi = bins.phi_lo + dphi * j as f64 + hp * (b as f64 + 0.5 + 0.5 * xp);
                            let v = exp.clamp(slice.density(phi - x0.phi))?;
                            *cell += 0.25 * wr * wp * hr * hp * v;
                        }
                    }
                }
            }
        }
        Ok(row)
    })?;
    Ok(rows.concat())
}

/// Chi-square and total-variation comparison of simulated outputs with the
/// series density. The overflow cell enters the chi-square statistic only when
/// its expected count is at least 5.
pub fn validate_pdf(
    cfg: &SimConfig,
    exp: &SeriesExpansion,
    x0: PolarPoint,
    bins: &HistogramSpec,
) -> Result<GoodnessReport> {
    cfg.validate()?;
    bins.validate()?;
    if !exp.contains(bins.r_hi, x0.r) {
        return Err(PzdError::Envelope {
            r: bins.r_hi,
            r0: x0.r,
            r_max: exp.r_max,
            r0_max: exp.r0_max,
        });
    }
    let probs = cell_probabilities(exp, x0, bins)?;
    let n = cfg.samples as f64;
    let outside_probability = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    let min_expected = probs.iter().cloned().fold(f64::INFINITY, f64::min) * n;
    if min_expected < 5.0 {
        let (rb, pb) = suggest_bins(&probs, bins, n);
        return Err(PzdError::Binning {
            expected: min_expected,
            suggested_r_bins: rb,
            suggested_phi_bins: pb,
        });
    }
    let ys = sample_outputs(cfg, x0)?;
    let mut counts = vec![0u64; probs.len()];
    let mut outside = 0usize;
    for &y in &ys {
        match bins.cell(y) {
            Some(k) => counts[k] += 1,
            None => outside += 1,
        }
    }
    let mut chi = 0.0;
    let mut tv = 0.0;
    let mut cells = probs.len();
    for (&o, &p) in counts.iter().zip(&probs) {
        let e = n * p;
        chi += (o as f64 - e).powi(2) / e;
        tv += (o as f64 / n - p).abs();
    }
    tv += (outside as f64 / n - outside_probability).abs();
    if outside_probability * n >= 5.0 {
        let e = outside_probability * n;
        chi += (outside as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dof = cells - 1;
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| d.sf(chi))
        .map_err(|e| PzdError::Invalid(e.to_string()))?;
    Ok(GoodnessReport {
        chi_square: chi,
        dof,
        p_value,
        total_variation: 0.5 * tv,
        samples: ys.len(),
        outside,
        outside_probability,
        counts,
        expected: probs.iter().map(|p| p * n).collect(),
    })
}

/// Halves the finer axis until the smallest expected count reaches 5.
fn suggest_bins(probs: &[f64], bins: &HistogramSpec, n: f64) -> (usize, usize) {
    let (mut rb, mut pb) = (bins.r_bins, bins.phi_bins);
    let mut grid: Vec<Vec<f64>> = probs.chunks(bins.phi_bins).map(|c| c.to_vec()).collect();
    loop {
        let min = grid.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        if min * n >= 5.0 || (rb == 1 && pb == 1) {
            return (rb, pb);
        }
        if rb >= pb && rb > 1 {
            grid = grid
                .chunks(2)
                .map(|pair| {
                    let mut row = pair[0].clone();
                    if let Some(second) = pair.get(1) {
                        for (a, b) in row.iter_mut().zip(second) {
                            *a += b;
                        }
                    }
                    row
                })
                .collect();
            rb = grid.len();
        } else {
            grid = grid
                .into_iter()
                .map(|row| row.chunks(2).map(|c| c.iter().sum()).collect())
                .collect();
            pb = grid[0].len();
        }
    }
}

/// Chi-square uniformity test of phases over `bins` equal cells.
pub fn phase_uniformity(phases: &[f64], bins: usize) -> Result<(f64, f64)> {
    if bins < 2 {
        return Err(PzdError::Invalid("need at least two phase bins".into()));
    }
    let mut counts = vec![0u64; bins];
    for &phi in phases {
        let j = ((phi.rem_euclid(TAU) / TAU * bins as f64) as usize).min(bins - 1);
        counts[j] += 1;
    }
    let e = phases.len() as f64 / bins as f64;
    let chi: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let p = ChiSquared::new((bins - 1) as f64)
        .map(|d| d.sf(chi))
        .map_err(|e| PzdError::Invalid(e.to_string()))?;
    Ok((chi, p))
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    (d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Writes `(r, phi)` pairs as little-endian `f64`.
pub fn write_samples_le<W: Write>(mut w: W, samples: &[PolarPoint]) -> io::Result<()> {
    for p in samples {
        w.write_all(&p.r.to_le_bytes())?;
        w.write_all(&p.phi.to_le_bytes())?;
    }
    w.flush()
}

/// Reads pairs written by [`write_samples_le`].
pub fn read_samples_le(bytes: &[u8]) -> io::Result<Vec<PolarPoint>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "length is not a multiple of 16"));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| PolarPoint {
            r: f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
            phi: f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
        })
        .collect())
}

/// Rician density of the amplitude, for checks against simulated `|Y|`.
pub fn amplitude_density(params: &ChannelParams, r: f64, r0: f64) -> f64 {
    rician_pdf(params.noise_power(), r, r0)
}

/// Circular variance `1 - |E e^{j phi}|` of a phase sample.
pub fn circular_variance(phases: &[f64]) -> f64 {
    let n = phases.len() as f64;
    let (c, s) = phases
        .iter()
        .fold((0.0, 0.0), |(c, s), p| (c + p.cos(), s + p.sin()));
    1.0 - (c * c + s * s).sqrt() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.1), 1.0);
    }

    #[test]
    fn zero_noise_path_is_deterministic_rotation() {
        let params = ChannelParams::new(0.7, 1.0, 2.0).unwrap();
        let x0 = Complex64::new(1.2, 0.0);
        let y = output_from_increments(&params, x0, &vec![Complex64::new(0.0, 0.0); 100]);
        let want = x0 * Complex64::from_polar(1.0, 0.7 * 1.44 * 2.0);
        assert!((y - want).norm() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let pts = vec![PolarPoint { r: 1.5, phi: 0.25 }, PolarPoint { r: 0.0, phi: PI }];
        let mut buf = Vec::new();
        write_samples_le(&mut buf, &pts).unwrap();
        assert_eq!(buf.len(), 32);
        assert_eq!(read_samples_le(&buf).unwrap(), pts);
    }

    #[test]
    fn bin_suggestion_coarsens() {
        let bins = HistogramSpec::disc(4, 4, 1.0);
        let probs = vec![1.0 / 16.0; 16];
        assert_eq!(suggest_bins(&probs, &bins, 80.0), (4, 4));
        assert_eq!(suggest_bins(&probs, &bins, 40.0), (2, 4));
    }
}
