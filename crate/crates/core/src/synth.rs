//! Synthetic data: Latin-hypercube designs and the closed-form test problems.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::quadrature::{gauss_laguerre_rule, REFERENCE_NODES};

/// Number of random designs compared by the maximin criterion.
const LHS_CANDIDATES: usize = 100;

/// Seeded Latin-hypercube design of `n` points in `[lo, hi]^dim` (dim 1 or 2).
///
/// Draws 100 candidate designs (independent stratum permutations per axis,
/// uniform position within each stratum) and keeps the one with the largest
/// minimum pairwise distance. Unused coordinates are zero.
pub fn latin_hypercube(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<[f64; 2]>> {
    if !(1..=2).contains(&dim) {
        return param_err(format!("Latin-hypercube designs are 1- or 2-dimensional, got {dim}"));
    }
    if n == 0 || !(lo < hi) {
        return param_err(format!("need n ≥ 1 and lo < hi, got n = {n}, [{lo}, {hi}]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (hi - lo) / n as f64;
    let mut best: Option<(f64, Vec<[f64; 2]>)> = None;
    for _ in 0..LHS_CANDIDATES {
        let mut pts = vec![[0.0; 2]; n];
        for axis in 0..dim {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(&mut rng);
            for (p, s) in pts.iter_mut().zip(strata) {
                p[axis] = lo + width * (s as f64 + rng.gen::<f64>());
            }
        }
        let score = min_distance(&pts);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, pts));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

fn min_distance(pts: &[[f64; 2]]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            m = m.min((pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]));
        }
    }
    m
}

/// u(x) = e^{−|x|²}.
pub fn gaussian_bump(x: &[f64; 2], dim: usize) -> f64 {
    let r2 = if dim == 1 { x[0] * x[0] } else { x[0] * x[0] + x[1] * x[1] };
    (-r2).exp()
}

/// f = C (−Δ)^{α/2} e^{−x²} in one dimension, i.e.
/// (C/√(2π)) ∫ e^{ixξ} |ξ|^α e^{−ξ²/4}/√2 dξ, by a 512-node rule with weight ξ^α e^{−ξ}.
pub fn fractional_poisson_rhs_1d(x: f64, alpha: f64, c: f64) -> Result<f64> {
    let rule = gauss_laguerre_rule(REFERENCE_NODES, alpha)?;
    let half = rule.integrate_halfline_real(|xi| (x * xi).cos() * xi.powf(alpha) * (-xi * xi / 4.0).exp())?;
    Ok(c * 2.0 / (2.0 * PI).sqrt() * half / 2f64.sqrt())
}

/// f = C (−Δ)^{α/2} e^{−|x|²} in two dimensions. In polar form this is
/// (C/2) ∫₀^∞ r^{α+1} e^{−r²/4} J₀(ρr) dr, with J₀ from a 256-point
/// trapezoid rule on its integral representation.
pub fn fractional_poisson_rhs_2d(x: [f64; 2], alpha: f64, c: f64) -> Result<f64> {
    let rho = x[0].hypot(x[1]);
    let rule = gauss_laguerre_rule(REFERENCE_NODES, alpha + 1.0)?;
    let radial = rule.integrate_halfline_real(|r| r.powf(alpha + 1.0) * (-r * r / 4.0).exp() * bessel_j0(rho * r))?;
    Ok(0.5 * c * radial)
}

/// J₀(z) = (1/π) ∫₀^π cos(z cos φ) dφ by the periodic trapezoid rule, which
/// converges geometrically once the point count exceeds |z|.
fn bessel_j0(z: f64) -> f64 {
    let m = 256usize.max((2.0 * z.abs()) as usize + 64);
    let sum: f64 = (0..m).map(|k| (z * (2.0 * PI * k as f64 / m as f64).cos()).cos()).sum();
    sum / m as f64
}

/// Closed-form solutions used for the evolution experiments, all with u(0, x) = sin x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SineSolution {
    /// u_t + u_x = 0: sin(x − t).
    Advection,
    /// u_t = u_xx: e^{−t} sin x.
    Diffusion,
    /// u_t + u_x = u_xx: e^{−t} sin(x − t).
    AdvectionDiffusion,
}

impl SineSolution {
    pub fn value(self, t: f64, x: f64) -> f64 {
        match self {
            SineSolution::Advection => (x - t).sin(),
            SineSolution::Diffusion => (-t).exp() * x.sin(),
            SineSolution::AdvectionDiffusion => (-t).exp() * (x - t).sin(),
        }
    }
}

/// Adds independent N(0, std²) noise from a seeded stream.
pub fn add_noise(values: &mut [f64], std: f64, seed: u64) {
    use rand_distr::{Distribution, Normal};
    if std <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in values {
        *v += normal.sample(&mut rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{gamma, hyp1f1};

    /// C (2/√(2π)) (1/√2) 2^α Γ((α+1)/2) M((α+1)/2, 1/2, −x²).
    fn rhs_1d_kummer(x: f64, alpha: f64, c: f64) -> f64 {
        c * 2.0 / (2.0 * PI).sqrt() / 2f64.sqrt()
            * 2f64.powf(alpha)
            * gamma((alpha + 1.0) / 2.0)
            * hyp1f1((alpha + 1.0) / 2.0, 0.5, -x * x)
    }

    /// C 2^α Γ(α/2 + 1) M(α/2 + 1, 1, −ρ²).
    fn rhs_2d_kummer(rho: f64, alpha: f64, c: f64) -> f64 {
        c * 2f64.powf(alpha) * gamma(alpha / 2.0 + 1.0) * hyp1f1(alpha / 2.0 + 1.0, 1.0, -rho * rho)
    }

    #[test]
    fn rhs_1d_matches_kummer_form() {
        for &x in &[0.0, 0.3, 1.0, 1.7, 2.0] {
            for &alpha in &[0.5, 1.0, 2f64.sqrt(), 2.0] {
                let q = fractional_poisson_rhs_1d(x, alpha, 1.25).unwrap();
                let k = rhs_1d_kummer(x, alpha, 1.25);
                assert!((q - k).abs() < 1e-10, "x={x} α={alpha}: {q} vs {k}");
            }
        }
    }

    #[test]
    fn rhs_1d_integer_order_is_second_derivative() {
        // α = 2: f = −u'' = (2 − 4x²) e^{−x²}.
        for &x in &[0.0, 0.6, 1.4] {
            let q = fractional_poisson_rhs_1d(x, 2.0, 1.0).unwrap();
            assert!((q - (2.0 - 4.0 * x * x) * (-x * x).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn rhs_2d_matches_kummer_form_and_laplacian() {
        for &(x1, x2) in &[(0.0, 0.0), (0.4, -1.1), (1.5, 1.2), (-2.0, 2.0)] {
            let rho = f64::hypot(x1, x2);
            for &alpha in &[3f64.sqrt(), 1.0] {
                let q = fractional_poisson_rhs_2d([x1, x2], alpha, 1.0).unwrap();
                let k = rhs_2d_kummer(rho, alpha, 1.0);
                assert!((q - k).abs() < 1e-10, "ρ={rho} α={alpha}: {q} vs {k}");
            }
            // α = 2: −Δ e^{−ρ²} = (4 − 4ρ²) e^{−ρ²}.
            let q = fractional_poisson_rhs_2d([x1, x2], 2.0, 1.0).unwrap();
            assert!((q - (4.0 - 4.0 * rho * rho) * (-rho * rho).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn latin_hypercube_has_one_point_per_stratum() {
        let pts = latin_hypercube(11, 2, -2.0, 2.0, 7).unwrap();
        for axis in 0..2 {
            let mut strata: Vec<usize> = pts.iter().map(|p| ((p[axis] + 2.0) / 4.0 * 11.0) as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..11).collect::<Vec<_>>());
        }
        assert_eq!(pts, latin_hypercube(11, 2, -2.0, 2.0, 7).unwrap());
        assert_ne!(pts, latin_hypercube(11, 2, -2.0, 2.0, 8).unwrap());
        assert!(latin_hypercube(5, 1, -1.0, 1.0, 0).unwrap().iter().all(|p| p[1] == 0.0));
    }

    #[test]
    fn sine_solutions_at_time_zero() {
        for s in [SineSolution::Advection, SineSolution::Diffusion, SineSolution::AdvectionDiffusion] {
            assert_eq!(s.value(0.0, 0.7), 0.7f64.sin());
        }
        assert_eq!(SineSolution::Advection.value(0.2, 1.0), 0.8f64.sin());
    }
}
