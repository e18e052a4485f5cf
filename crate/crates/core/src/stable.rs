//! α-stable laws as transition densities of the fractional diffusion
//!
//!   u_t = γ^α/|cos(πα/2)| [p (−iξ)^α + (1 − p)(iξ)^α] û
//!
//! # Parameterization
//!
//! `StableParams { alpha, beta, gamma, delta }` names the density
//!
//!   u(x) = (1/2π) ∫ e^{iξ(x−δ)} e^{ψ(ξ)} dξ,
//!   ψ(ξ) = −γ^α |ξ|^α (1 − iβ sgn(ξ) tan(πα/2)),
//!
//! which is the diffusion's solution at t = 1 with β = 2p − 1 (for α > 1 the
//! exponent is exactly the multiplier above; for α < 1 the same formula is
//! used with the decaying sign). Its characteristic function E e^{isX} is
//! e^{ψ(−s)}, so X has the classical S1 law with skewness −β and scale γ.
//! The sampler draws from that classical law with the Chambers–Mallows–Stuck
//! transform, and [`stable_cdf`] uses Zolotarev's integral for it, so the
//! sampler, density and distribution function all describe the same law.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::operators::{StableDiffusionSpec, STABLE_ALPHA_GUARD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let p = StableParams { alpha, beta, gamma, delta };
        p.validate()?;
        Ok(p)
    }

    /// The diffusion's transition law after time t: S_α(2p − 1, γ t^{1/α}, 0).
    pub fn from_diffusion(spec: &StableDiffusionSpec, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return param_err(format!("time must be positive, got {t}"));
        }
        Self::new(spec.alpha, 2.0 * spec.p - 1.0, spec.gamma * t.powf(1.0 / spec.alpha), 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return param_err(format!("stable α must lie in (0, 2], got {}", self.alpha));
        }
        if !(-1.0..=1.0).contains(&self.beta) {
            return param_err(format!("stable β must lie in [−1, 1], got {}", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return param_err(format!("stable γ must be positive, got {}", self.gamma));
        }
        if !self.delta.is_finite() {
            return param_err("stable δ must be finite");
        }
        Ok(())
    }

    /// The same law after n independent steps: scale γ n^{1/α}.
    pub fn after_steps(&self, n: f64) -> Self {
        StableParams { gamma: self.gamma * n.powf(1.0 / self.alpha), ..*self }
    }

    fn skew_tan(&self) -> Result<f64> {
        if self.beta == 0.0 {
            return Ok(0.0);
        }
        if (self.alpha - 1.0).abs() <= STABLE_ALPHA_GUARD {
            return param_err(format!(
                "skewed stable laws need α outside 1 ± {STABLE_ALPHA_GUARD}, got α = {}",
                self.alpha
            ));
        }
        Ok(self.beta * (PI * self.alpha / 2.0).tan())
    }
}

// ---------------------------------------------------------------------------
// Adaptive Gauss–Kronrod (7/15) quadrature.

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS_K[7] * fc;
    let mut g = GK_WEIGHTS_G[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += GK_WEIGHTS_K[i] * s;
        if i % 2 == 1 {
            g += GK_WEIGHTS_G[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Integrates over `pieces` initial panels of [a, b], bisecting any panel
/// whose Kronrod–Gauss difference exceeds its share of `tol`.
fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize, tol: f64) -> Result<f64> {
    let pieces = pieces.max(1);
    let width = (b - a) / pieces as f64;
    let breaks: Vec<f64> = (0..=pieces).map(|k| if k == pieces { b } else { a + k as f64 * width }).collect();
    integrate_breaks(f, &breaks, tol)
}

/// Adaptive integration over the panels delimited by sorted `breaks`.
fn integrate_breaks<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: f64) -> Result<f64> {
    const MAX_PANELS: usize = 200_000;
    let (a, b) = (breaks[0], breaks[breaks.len() - 1]);
    let mut stack: Vec<(f64, f64)> = breaks.windows(2).rev().filter(|w| w[1] > w[0]).map(|w| (w[0], w[1])).collect();
    let mut total = 0.0;
    let mut panels = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        let (v, err) = gk15(&f, lo, hi);
        panels += 1;
        let share = tol * (hi - lo) / (b - a);
        if err <= share.max(1e-15 * v.abs()) || (hi - lo) < 1e-12 * (b - a) {
            total += v;
        } else {
            if panels > MAX_PANELS {
                return Err(Error::Numeric(format!(
                    "adaptive quadrature on [{a}, {b}] did not converge to {tol:e}; use a larger rule"
                )));
            }
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("quadrature on [{a}, {b}] produced {total}")));
    }
    Ok(total)
}

/// Where e^{−(γξ)^α} drops below e^{−TAIL_EXPONENT} the integrand is negligible.
const TAIL_EXPONENT: f64 = 41.5;
const PDF_TOL: f64 = 1e-12;

/// The transition density u(x) evaluated by half-line Fourier inversion,
///
///   u(x) = (1/π) ∫₀^∞ e^{−(γξ)^α} cos(ξ(x − δ) + β tan(πα/2) (γξ)^α) dξ.
pub fn stable_pdf(params: &StableParams, x: f64) -> Result<f64> {
    params.validate()?;
    let skew = params.skew_tan()?;
    let StableParams { alpha, gamma, delta, .. } = *params;
    let y = x - delta;
    let xi_max = TAIL_EXPONENT.powf(1.0 / alpha) / gamma;
    let tail = tail_bound(alpha, gamma);
    if tail > 1e-8 {
        return Err(Error::Numeric(format!("stable density tail estimate {tail:e} exceeds 1e-8; use a larger rule")));
    }
    // About two panels per oscillation of cos(ξy), plus a floor for the peak.
    let pieces = 16 + (xi_max * y.abs() / PI) as usize;
    let integrand = |xi: f64| {
        let s = (gamma * xi).powf(alpha);
        (-s).exp() * (xi * y + skew * s).cos()
    };
    let v = integrate_adaptive(integrand, 0.0, xi_max, pieces, PDF_TOL * xi_max.max(1.0))? / PI;
    Ok(v.max(0.0))
}

/// ∫_{ξmax}^∞ e^{−(γξ)^α} dξ ≤ (1/(αγ)) Γ(1/α, E) ≈ (1/(αγ)) E^{1/α − 1} e^{−E}.
fn tail_bound(alpha: f64, gamma: f64) -> f64 {
    let e = TAIL_EXPONENT;
    e.powf(1.0 / alpha - 1.0) * (-e).exp() / (alpha * gamma) * (1.0 + (1.0 / alpha - 1.0).abs() / e)
}

/// P(X ≤ x) for the law of [`StableParams`], by Zolotarev's integral
/// representation for the classical S1 law with skewness −β.
pub fn stable_cdf(params: &StableParams, x: f64) -> Result<f64> {
    params.validate()?;
    params.skew_tan()?;
    let z = (x - params.delta) / params.gamma;
    let alpha = params.alpha;
    let beta_std = -params.beta;
    if alpha == 1.0 {
        // β = 0 here: the Cauchy law.
        return Ok(0.5 + z.atan() / PI);
    }
    if alpha == 2.0 {
        return Ok(0.5 * libm::erfc(-z / 2.0));
    }
    zolotarev_cdf(alpha, beta_std, z)
}

/// Classical S1(α, β, 1, 0) distribution function, α ≠ 1. Zolotarev's
/// integral is usually written for the shifted variable x + ζ with
/// ζ = −β tan(πα/2); in S1 coordinates the split point is the origin.
fn zolotarev_cdf(alpha: f64, beta: f64, x: f64) -> Result<f64> {
    // tan(πα/2) = −tan(π(2 − α)/2) keeps its relative accuracy as α → 2.
    let tan_half = if alpha > 1.0 { -(FRAC_PI_2 * (2.0 - alpha)).tan() } else { (FRAC_PI_2 * alpha).tan() };
    let theta0 = (beta * tan_half).atan() / alpha;
    if x == 0.0 {
        return Ok((FRAC_PI_2 - theta0) / PI);
    }
    if x < 0.0 {
        return Ok(1.0 - zolotarev_cdf(alpha, -beta, -x)?);
    }
    let expo = alpha / (alpha - 1.0);
    let log_front = (alpha * theta0).cos().ln() / (alpha - 1.0) + expo * x.ln();
    // The integral runs over θ ∈ (−θ₀, π/2); it is taken in ψ = π/2 − θ ∈ (0, L)
    // so that the angles near either end come from exact small quantities:
    // cos θ = sin ψ, sin(α(θ₀ + θ)) = sin(δ + αψ) and
    // cos(αθ₀ + (α − 1)θ) = sin(δ + (α − 1)ψ) with δ = π − αL.
    let len = FRAC_PI_2 + theta0;
    let delta = (2.0 - alpha) * FRAC_PI_2 - alpha * theta0;
    // ln g with g = x^{α/(α−1)} V; g is monotone in ψ.
    let log_g = |psi: f64| -> f64 {
        let c = psi.sin();
        let s = if psi <= 0.5 * len { (delta + alpha * psi).sin() } else { (alpha * (len - psi)).sin() };
        let tail = (delta + (alpha - 1.0) * psi).sin();
        log_front + expo * (c.ln() - s.ln()) + tail.ln() - c.ln()
    };
    let integrand = |psi: f64| {
        let lg = log_g(psi);
        if lg.is_nan() {
            0.0
        } else {
            (-lg.exp()).exp()
        }
    };
    // The integrand steps between 0 and 1 where g = 1; grade panels towards that point.
    let (mut a, mut b) = (1e-15 * len, (1.0 - 1e-15) * len);
    let rising = log_g(a) < log_g(b);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (log_g(m) < 0.0) == rising {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-15 * len {
            break;
        }
    }
    let centre = 0.5 * (a + b);
    let mut breaks = vec![0.0, len, centre];
    let mut h = len / 4.0;
    while h > 1e-14 * len {
        for p in [centre - h, centre + h] {
            if p > 0.0 && p < len {
                breaks.push(p);
            }
        }
        h /= 4.0;
    }
    breaks.sort_by(f64::total_cmp);
    let integral = integrate_breaks(integrand, &breaks, 1e-13)?;
    let f = if alpha < 1.0 {
        (FRAC_PI_2 - theta0) / PI + integral / PI
    } else {
        1.0 - integral / PI
    };
    Ok(f.clamp(0.0, 1.0))
}

/// One draw from the classical S1(α, β, 1, 0) law (Chambers–Mallows–Stuck):
/// with V ~ U(−π/2, π/2) and W ~ Exp(1), for α ≠ 1
///
///   B = arctan(β tan(πα/2)) / α,  S = (1 + β² tan²(πα/2))^{1/(2α)},
///   X = S · sin(α(V + B)) / cos(V)^{1/α} · [cos(V − α(V + B)) / W]^{(1−α)/α},
///
/// and for α = 1
///
///   X = (2/π) [(π/2 + βV) tan V − β ln((π/2) W cos V / (π/2 + βV))].
fn cms_standard<R: Rng>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.gen::<f64>() - 0.5);
    let w = -(1.0 - rng.gen::<f64>()).ln();
    if alpha == 1.0 {
        let a = FRAC_PI_2 + beta * v;
        return (a * v.tan() - beta * (FRAC_PI_2 * w * v.cos() / a).ln()) / FRAC_PI_2;
    }
    let t = beta * (PI * alpha / 2.0).tan();
    let b = t.atan() / alpha;
    let s = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
    s * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha)
        * ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha)
}

/// One draw of X for [`StableParams`].
pub fn sample_stable<R: Rng>(params: &StableParams, rng: &mut R) -> f64 {
    let beta_std = -params.beta;
    let x = cms_standard(params.alpha, beta_std, rng);
    let shift = if params.alpha == 1.0 { 2.0 / PI * beta_std * params.gamma * params.gamma.ln() } else { 0.0 };
    params.gamma * x + shift + params.delta
}

/// Independent draws from a seeded ChaCha8 stream.
pub fn sample_stable_n(params: &StableParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sample_stable(params, &mut rng)).collect())
}

/// Cumulative sums X_k = Σ_{i ≤ k} ΔX_i, k = 1..steps, of increments drawn
/// from S_α(β, γ dt^{1/α}, δ). Path j of a batch uses ChaCha8 stream j of the
/// same seed (see [`sample_stable_paths`]).
pub fn sample_stable_path(params: &StableParams, steps: usize, dt: f64, seed: u64) -> Result<Vec<f64>> {
    path_from_stream(params, steps, dt, seed, 0)
}

/// `count` independent paths; path j draws from stream j of `seed`.
pub fn sample_stable_paths(params: &StableParams, steps: usize, dt: f64, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    (0..count as u64).map(|j| path_from_stream(params, steps, dt, seed, j)).collect()
}

fn path_from_stream(params: &StableParams, steps: usize, dt: f64, seed: u64, stream: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if steps == 0 {
        return param_err("a path needs at least one step");
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return param_err(format!("time step must be positive, got {dt}"));
    }
    let step = params.after_steps(dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut acc = 0.0;
    Ok((0..steps)
        .map(|_| {
            acc += sample_stable(&step, &mut rng);
            acc
        })
        .collect())
}

/// A normalized histogram of lag-n increments of a time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    /// Physical time n·Δt the increments span.
    pub t: f64,
    pub lag: usize,
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    pub bin_width: f64,
    /// Increments inside the range.
    pub sample_count: usize,
    /// Increments outside the range, which are dropped.
    pub dropped: usize,
    pub range: (f64, f64),
    /// Fewer than ten retained increments per bin.
    pub sparse: bool,
}

/// The lag-n increments X_{i+n} − X_i for every admissible i.
pub fn increments(series: &[f64], lag: usize) -> Vec<f64> {
    if lag == 0 || series.len() <= lag {
        return Vec::new();
    }
    series.windows(lag + 1).map(|w| w[lag] - w[0]).collect()
}

/// The symmetric interval [−L, L] whose half-width is the larger magnitude
/// of the 0.5% and 99.5% quantiles of the increments.
pub fn default_range(incs: &[f64]) -> Result<(f64, f64)> {
    if incs.is_empty() {
        return param_err("no increments to size a histogram range");
    }
    let mut sorted = incs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round()) as usize];
    let half = q(0.005).abs().max(q(0.995).abs());
    let half = if half > 0.0 { half } else { 1.0 };
    Ok((-half, half))
}

/// Histogram of the lag-n increments on `bins` equal bins of `range`,
/// normalized to integrate to one over the range. Increments outside the
/// range are dropped; a value equal to the upper edge lands in the last bin.
pub fn empirical_density(series: &[f64], lag: usize, dt: f64, bins: usize, range: (f64, f64)) -> Result<EmpiricalDensity> {
    if lag == 0 || series.len() <= lag {
        return param_err(format!("series of length {} has no lag-{lag} increments", series.len()));
    }
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return param_err(format!("histogram range must satisfy lo < hi, got ({lo}, {hi})"));
    }
    if bins < 2 {
        return param_err(format!("need at least 2 bins, got {bins}"));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut dropped = 0;
    for d in increments(series, lag) {
        if !(d >= lo && d <= hi) {
            dropped += 1;
            continue;
        }
        let k = (((d - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let kept: usize = counts.iter().sum();
    let density = if kept > 0 {
        counts.iter().map(|&c| c as f64 / (kept as f64 * width)).collect()
    } else {
        vec![0.0; bins]
    };
    Ok(EmpiricalDensity {
        t: lag as f64 * dt,
        lag,
        centers: (0..bins).map(|k| lo + (k as f64 + 0.5) * width).collect(),
        density,
        bin_width: width,
        sample_count: kept,
        dropped,
        range,
        sparse: kept < 10 * bins,
    })
}

/// Smallest acceptance probability tolerated by [`sample_truncated_stable`].
pub const MIN_ACCEPTANCE: f64 = 1e-3;

/// Draws from the law restricted to [−bound, bound] by rejection.
pub fn sample_truncated_stable(params: &StableParams, bound: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_truncated_with(params, bound, n, &mut rng)
}

fn sample_truncated_with<R: Rng>(params: &StableParams, bound: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    params.validate()?;
    if !(bound > 0.0) {
        return param_err(format!("truncation bound must be positive, got {bound}"));
    }
    let accept = stable_cdf(params, bound)? - stable_cdf(params, -bound)?;
    if accept < MIN_ACCEPTANCE {
        return param_err(format!(
            "acceptance probability {accept:.2e} on [−{bound}, {bound}] is below {MIN_ACCEPTANCE}; use a larger bound"
        ));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = sample_stable(params, rng);
        if x.abs() <= bound {
            out.push(x);
        }
    }
    Ok(out)
}

/// Sample paths of a truncated-stable random walk started at `start`. Path j
/// uses ChaCha8 stream j of `seed`.
pub fn backtest_paths(
    params: &StableParams,
    bound: f64,
    start: f64,
    steps: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..count as u64)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j);
            let draws = sample_truncated_with(params, bound, steps, &mut rng)?;
            let mut acc = start;
            Ok(std::iter::once(start)
                .chain(draws.into_iter().map(|d| {
                    acc += d;
                    acc
                }))
                .collect())
        })
        .collect()
}

/// A constant rescaling of series values and its effect on the scale γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescaling {
    pub factor: f64,
}

impl Rescaling {
    pub fn apply(&self, series: &[f64]) -> Vec<f64> {
        series.iter().map(|v| v * self.factor).collect()
    }

    pub fn undo(&self, series: &[f64]) -> Vec<f64> {
        series.iter().map(|v| v / self.factor).collect()
    }

    /// γ of the original series from γ learned on the rescaled one.
    pub fn raw_gamma(&self, gamma_scaled: f64) -> f64 {
        gamma_scaled / self.factor
    }
}

/// Multiplies the series by `factor` (> 0), returning the bookkeeping needed
/// to report raw-unit scales.
pub fn rescale_series(series: &[f64], factor: f64) -> Result<(Vec<f64>, Rescaling)> {
    if !(factor > 0.0 && factor.is_finite()) {
        return param_err(format!("rescaling factor must be positive, got {factor}"));
    }
    let r = Rescaling { factor };
    Ok((r.apply(series), r))
}

/// Kolmogorov–Smirnov statistic of a sample against a distribution function.
pub fn ks_statistic<F: Fn(f64) -> Result<f64>>(sample: &[f64], cdf: F) -> Result<f64> {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x)?;
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// Asymptotic critical value of √n·D at level 0.01.
pub const KS_CRITICAL_001: f64 = 1.628;

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(alpha: f64, beta: f64, gamma: f64) -> StableParams {
        StableParams::new(alpha, beta, gamma, 0.0).unwrap()
    }

    #[test]
    fn pdf_gaussian_and_cauchy_at_zero() {
        let g = stable_pdf(&sp(2.0, 0.0, 1.0), 0.0).unwrap();
        assert!((g - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-12, "{g}");
        let c = stable_pdf(&sp(1.0, 0.0, 1.0), 0.0).unwrap();
        assert!((c - 1.0 / PI).abs() < 1e-12, "{c}");
        // Cauchy away from zero.
        let c = stable_pdf(&sp(1.0, 0.0, 1.0), 3.0).unwrap();
        assert!((c - 1.0 / (PI * 10.0)).abs() < 1e-12, "{c}");
    }

    #[test]
    fn pdf_symmetric_when_unskewed() {
        for &alpha in &[0.8, 1.2, 1.5, 1.9] {
            let p = sp(alpha, 0.0, 1.3);
            for &x in &[0.1, 0.7, 2.5, 11.0] {
                let a = stable_pdf(&p, x).unwrap();
                let b = stable_pdf(&p, -x).unwrap();
                assert!((a - b).abs() < 1e-10, "α={alpha} x={x}");
            }
        }
    }

    #[test]
    fn skewed_alpha_near_one_is_rejected() {
        assert!(stable_pdf(&sp(1.0005, 0.5, 1.0), 0.0).is_err());
        assert!(stable_pdf(&sp(1.0005, 0.0, 1.0), 0.0).is_ok());
    }

    #[test]
    fn cdf_matches_closed_forms() {
        // Cauchy and Gaussian (variance 2γ²).
        for &x in &[-3.0, -0.5, 0.0, 0.4, 7.0] {
            let c = stable_cdf(&sp(1.0, 0.0, 1.0), x).unwrap();
            assert!((c - (0.5 + f64::atan(x) / PI)).abs() < 1e-14);
        }
        let g = stable_cdf(&sp(2.0, 0.0, 1.0), 0.0).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
        let g = stable_cdf(&sp(2.0, 0.0, 1.0), 1.0).unwrap();
        assert!((g - 0.5 * libm::erfc(-0.5)).abs() < 1e-15);
        // Near α = 1 the integral form agrees with the Cauchy law.
        let near = stable_cdf(&sp(1.0 + 2e-3, 0.0, 1.0), 2.0).unwrap();
        assert!((near - (0.5 + 2f64.atan() / PI)).abs() < 2e-3, "{near}");
        // Lévy law (α = 1/2, classical β = 1, here β = −1): F(x) = erfc(√(1/(2x))) for x > 0.
        for &x in &[0.3, 1.0, 4.0] {
            let f = stable_cdf(&sp(0.5, -1.0, 1.0), x).unwrap();
            assert!((f - libm::erfc((1.0 / (2.0 * x)).sqrt())).abs() < 1e-10, "x={x}: {f}");
        }
    }

    #[test]
    fn cdf_near_gaussian_order_converges() {
        // Orders just below 2 put a thin layer at one end of the angular integral.
        for alpha in [1.99, 1.9999, 1.99997949, 1.9999999] {
            let p = sp(alpha, 0.548, 0.008);
            for x in [-0.2, -0.0325, 0.001, 0.0325, 0.2] {
                let f = stable_cdf(&p, x).unwrap();
                let g = stable_cdf(&sp(2.0, 0.0, 0.008), x).unwrap();
                assert!((f - g).abs() < 2e-2 * (2.0 - alpha).sqrt() + 1e-6, "α={alpha} x={x}: {f} vs {g}");
            }
        }
    }

    #[test]
    fn cdf_derivative_is_pdf() {
        for &(alpha, beta) in &[(1.5, 0.5), (0.8, -0.8), (1.2, 0.8), (1.9, -0.3)] {
            let p = sp(alpha, beta, 0.7);
            for &x in &[-2.0, -0.3, 0.0, 0.5, 3.0] {
                let h = 1e-4;
                let fd = (stable_cdf(&p, x + h).unwrap() - stable_cdf(&p, x - h).unwrap()) / (2.0 * h);
                let pdf = stable_pdf(&p, x).unwrap();
                assert!((fd - pdf).abs() < 1e-6, "α={alpha} β={beta} x={x}: {fd} vs {pdf}");
            }
        }
    }

    #[test]
    fn gaussian_increment_variance() {
        let draws = sample_stable_n(&sp(2.0, 0.0, 1.0), 100_000, 11).unwrap();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var - 2.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn cauchy_draws_pass_ks() {
        let draws = sample_stable_n(&sp(1.0, 0.0, 1.0), 10_000, 5).unwrap();
        let d = ks_statistic(&draws, |x| Ok(0.5 + x.atan() / PI)).unwrap();
        assert!(d * (draws.len() as f64).sqrt() < KS_CRITICAL_001, "D = {d}");
    }

    #[test]
    fn paths_are_deterministic() {
        let p = sp(1.4, 0.6, 1.0);
        let a = sample_stable_path(&p, 1, 0.01, 3).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, sample_stable_path(&p, 1, 0.01, 3).unwrap());
        let batch = sample_stable_paths(&p, 50, 0.01, 3, 3).unwrap();
        assert_eq!(batch[0], sample_stable_path(&p, 50, 0.01, 3).unwrap());
        assert_ne!(batch[0], batch[1]);
    }

    #[test]
    fn empirical_density_hand_count() {
        let e = empirical_density(&[0.0, 1.0, 0.0, 1.0, 0.0], 1, 1.0, 2, (-2.0, 2.0)).unwrap();
        assert_eq!(e.density, vec![0.25, 0.25]);
        assert_eq!(e.bin_width, 2.0);
        assert_eq!(e.sample_count, 4);
        assert!(e.sparse);
        let total: f64 = e.density.iter().map(|d| d * e.bin_width).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_fills_the_zero_bin() {
        let e = empirical_density(&[3.0; 50], 3, 0.01, 5, (-1.0, 1.0)).unwrap();
        assert_eq!(e.density.iter().filter(|d| **d > 0.0).count(), 1);
        assert_eq!(e.density[2], 1.0 / e.bin_width);
        assert!((e.t - 0.03).abs() < 1e-15);
    }

    #[test]
    fn default_range_is_symmetric() {
        let incs: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0 - 3.0).collect();
        let (lo, hi) = default_range(&incs).unwrap();
        assert_eq!(lo, -hi);
        assert!(hi > 6.8 && hi < 7.0, "{hi}");
    }

    #[test]
    fn truncated_sampling() {
        let p = sp(2.0, 0.0, 0.001);
        let draws = sample_truncated_stable(&p, 1.0, 20_000, 1).unwrap();
        let var = draws.iter().map(|d| d * d).sum::<f64>() / draws.len() as f64;
        assert!((var / 2e-6 - 1.0).abs() < 0.05, "{var}");
        assert!(sample_truncated_stable(&sp(1.5, 0.0, 1.0), 1e-6, 10, 1).is_err());
        let p = sp(1.667, -0.156, 0.0066);
        assert!(sample_truncated_stable(&p, 0.031, 500, 2).unwrap().iter().all(|d| d.abs() <= 0.031));
    }

    #[test]
    fn rescaling_round_trip() {
        let (scaled, r) = rescale_series(&[0.1, -0.2, 0.3], 1259f64.sqrt()).unwrap();
        assert!((r.raw_gamma(0.235) - 0.0066).abs() < 1e-4);
        let back = r.undo(&scaled);
        for (a, b) in back.iter().zip([0.1, -0.2, 0.3]) {
            assert!((a - b).abs() <= 1e-15);
        }
        let (same, _) = rescale_series(&[1.5, 2.5], 1.0).unwrap();
        assert_eq!(same, vec![1.5, 2.5]);
        assert!(rescale_series(&[1.0], 0.0).is_err());
    }

    #[test]
    fn diffusion_mapping() {
        let spec = StableDiffusionSpec { alpha: 2f64.sqrt(), p: 0.8, gamma: 1.0 };
        let p = StableParams::from_diffusion(&spec, 0.03).unwrap();
        assert!((p.beta - 0.6).abs() < 1e-15);
        assert!((p.gamma - 0.03f64.powf(1.0 / 2f64.sqrt())).abs() < 1e-15);
    }
}
