//! Generalized Gauss–Laguerre rules and periodic trapezoid grids.
//!
//! A rule of order n with weight exponent `alpha_ggl` integrates
//! x^alpha_ggl e^{-x} p(x) exactly on (0, ∞) for polynomials p of degree
//! ≤ 2n − 1. Nodes are the eigenvalues of the symmetric Jacobi matrix of the
//! generalized Laguerre recurrence (Golub–Welsch), polished by Newton steps on
//! L_n^(α). Weights are not taken from eigenvectors but from
//!
//!   w_i = Γ(n + α + 1) x_i / (n! (n + 1)² [L_{n+1}^(α)(x_i)]²),
//!
//! evaluated in log space so large orders and exponents do not overflow.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{param_err, Error, Result};
use twofloat::TwoFloat;

use crate::special::{digamma, ln_gamma};

/// Radial node count used for every 1D block unless configured otherwise.
pub const DEFAULT_NODES_1D: usize = 64;
/// Radial node count for 2D blocks.
pub const DEFAULT_RADIAL_2D: usize = 64;
/// Angular node count for 2D blocks.
pub const DEFAULT_ANGULAR_2D: usize = 64;
/// Order of the rule used as the high-accuracy reference.
pub const REFERENCE_NODES: usize = 512;

#[derive(Debug, Clone)]
pub struct GaussLaguerreRule {
    order_n: usize,
    alpha_ggl: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// w_i e^{x_i} x_i^{-alpha_ggl}; the factor applied to f(x_i) when
    /// integrating an arbitrary f over the half line.
    scaled_weights: Vec<f64>,
    /// ln w_i, finite even where w_i underflows.
    log_weights: Vec<f64>,
    /// dx_i / d(alpha_ggl) along the curve of roots.
    node_sensitivity: Vec<f64>,
    /// d(ln w_i) / d(alpha_ggl).
    log_weight_sensitivity: Vec<f64>,
}

impl GaussLaguerreRule {
    pub fn order(&self) -> usize {
        self.order_n
    }

    pub fn alpha_ggl(&self) -> f64 {
        self.alpha_ggl
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Raw weights w_i of the weighted rule. For large orders the weights of
    /// the outermost nodes underflow to zero; use [`Self::log_weights`] there.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn scaled_weights(&self) -> &[f64] {
        &self.scaled_weights
    }

    /// How each node moves as the weight exponent changes. Together with
    /// [`Self::log_weight_sensitivity`] this differentiates a quadrature
    /// value with respect to a rule exponent tied to a model parameter.
    pub fn node_sensitivity(&self) -> &[f64] {
        &self.node_sensitivity
    }

    pub fn log_weight_sensitivity(&self) -> &[f64] {
        &self.log_weight_sensitivity
    }

    /// Approximates ∫₀^∞ f(x) dx as Σ w_i e^{x_i} x_i^{-alpha_ggl} f(x_i).
    pub fn integrate_halfline<F>(&self, f: F) -> Result<Complex64>
    where
        F: Fn(f64) -> Complex64,
    {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&x, &sw) in self.nodes.iter().zip(&self.scaled_weights) {
            let v = f(x);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Numeric(format!(
                    "integrand is not finite at node x = {x:e} (rule n = {}, alpha_ggl = {})",
                    self.order_n, self.alpha_ggl
                )));
            }
            acc += v * sw;
        }
        Ok(acc)
    }

    /// Real-valued convenience wrapper around [`Self::integrate_halfline`].
    pub fn integrate_halfline_real<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        self.integrate_halfline(|x| Complex64::new(f(x), 0.0)).map(|z| z.re)
    }
}

/// Builds the n-point generalized Gauss–Laguerre rule for weight x^alpha_ggl e^{-x}.
pub fn gauss_laguerre_rule(n: usize, alpha_ggl: f64) -> Result<GaussLaguerreRule> {
    if n == 0 {
        return param_err("Gauss-Laguerre rule needs at least one node");
    }
    if !alpha_ggl.is_finite() || alpha_ggl <= -1.0 {
        return param_err(format!("alpha_ggl must be finite and > -1, got {alpha_ggl}"));
    }
    let a = alpha_ggl;

    let mut diag: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + a + 1.0).collect();
    let mut off: Vec<f64> = (0..n)
        .map(|k| {
            let k1 = (k + 1) as f64;
            if k + 1 < n {
                (k1 * (k1 + a)).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    symmetric_tridiagonal_eigenvalues(&mut diag, &mut off).map_err(|iters| {
        Error::Numeric(format!(
            "Jacobi eigen-solve did not converge after {iters} sweeps (n = {n}, alpha_ggl = {a})"
        ))
    })?;
    diag.sort_by(|x, y| x.total_cmp(y));

    let mut nodes = diag;
    for x in nodes.iter_mut() {
        *x = newton_polish(n, a, *x);
    }
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Numeric(format!(
                "Gauss-Laguerre nodes not strictly increasing (n = {n}, alpha_ggl = {a})"
            )));
        }
    }
    if !(nodes[0] > 0.0) {
        return Err(Error::Numeric(format!(
            "non-positive Gauss-Laguerre node {} (n = {n}, alpha_ggl = {a})",
            nodes[0]
        )));
    }

    let nf = n as f64;
    // ln Γ(n+a+1) − ln Γ(n+1) = ln Γ(a+1) + Σ_{k=1}^{n} ln(1 + a/k), which avoids
    // cancelling two large log-gammas.
    let log_ratio = ln_gamma(a + 1.0) + (1..=n).map(|k| (a / k as f64).ln_1p()).sum::<f64>();
    let log_const = log_ratio - 2.0 * (nf + 1.0).ln();
    let psi = digamma(nf + a + 1.0);
    let mut weights = Vec::with_capacity(n);
    let mut scaled_weights = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    let mut node_sensitivity = Vec::with_capacity(n);
    let mut log_weight_sensitivity = Vec::with_capacity(n);
    for &x in &nodes {
        let st = laguerre_state(n, a, x);
        let lw = log_const + x.ln() - 2.0 * st.ln_abs_next();
        if !lw.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite Gauss-Laguerre weight at x = {x} (n = {n}, alpha_ggl = {a})"
            )));
        }
        // x_i(a) solves L_n(x) = 0, and L_n'(x_i) = −(n + a) L_{n−1}(x_i) / x_i.
        let dx = x * (st.sum_n / st.prev).hi() / (nf + a);
        let next_slope = ((nf + 1.0) - (nf + 1.0 + a) * (st.cur / st.next).hi()) / x;
        let dlw = psi + dx / x - 2.0 * ((st.sum_next / st.next).hi() + next_slope * dx);
        log_weights.push(lw);
        weights.push(lw.exp());
        scaled_weights.push((lw + x - a * x.ln()).exp());
        node_sensitivity.push(dx);
        log_weight_sensitivity.push(dlw);
    }

    Ok(GaussLaguerreRule {
        order_n: n,
        alpha_ggl: a,
        nodes,
        weights,
        scaled_weights,
        log_weights,
        node_sensitivity,
        log_weight_sensitivity,
    })
}

/// L_{n−1}, L_n, L_{n+1} at one point together with the parameter
/// derivatives ∂L_m/∂a = Σ_{k<m} L_k / (m − k) for m = n and n + 1. All five
/// share the scale factor e^{log_scale}.
struct LaguerreState {
    prev: TwoFloat,
    cur: TwoFloat,
    next: TwoFloat,
    sum_n: TwoFloat,
    sum_next: TwoFloat,
    log_scale: f64,
}

impl LaguerreState {
    fn ln_abs_next(&self) -> f64 {
        self.next.hi().abs().ln() + self.next.lo() / self.next.hi() + self.log_scale
    }
}

/// Upward recurrence in double-double arithmetic with rescaling against
/// overflow. Plain f64 leaves the nodes of large rules about 1e−13 off in
/// relative terms, and the weight formula amplifies that a hundredfold.
fn laguerre_state(n: usize, a: f64, x: f64) -> LaguerreState {
    let zero = TwoFloat::from(0.0);
    let (mut before, mut prev, mut cur) = (zero, zero, TwoFloat::from(1.0)); // L_{-2}, L_{-1}, L_0
    let (mut sum_n, mut sum_next) = (zero, zero);
    let mut log_scale = 0.0;
    for k in 0..=n {
        let kf = k as f64;
        if k < n {
            sum_n += cur / (n - k) as f64;
        }
        sum_next += cur / (n + 1 - k) as f64;
        let coeff = TwoFloat::from(2.0 * kf + 1.0) + a - x;
        let next = (coeff * cur - prev * (TwoFloat::from(kf) + a)) / (kf + 1.0);
        before = prev;
        prev = cur;
        cur = next;
        let mag = cur.hi().abs().max(prev.hi().abs());
        if mag > 1e150 {
            for v in [&mut before, &mut prev, &mut cur, &mut sum_n, &mut sum_next] {
                *v = *v / mag;
            }
            log_scale += mag.ln();
        }
    }
    LaguerreState { prev: before, cur: prev, next: cur, sum_n, sum_next, log_scale }
}

fn newton_polish(n: usize, a: f64, x0: f64) -> f64 {
    let nf = n as f64;
    let mut x = x0;
    for _ in 0..3 {
        let st = laguerre_state(n, a, x);
        let ratio = (st.prev / st.cur).hi();
        // L_n' = (n L_n − (n + a) L_{n−1}) / x, so L_n / L_n' = x / (n − (n + a) ratio)
        let denom = nf - (nf + a) * ratio;
        if !denom.is_finite() || denom == 0.0 {
            break;
        }
        let step = x / denom;
        let next = x - step;
        if !(next > 0.0) || !next.is_finite() || step.abs() > 0.5 * x {
            break;
        }
        x = next;
        if step.abs() <= 4.0 * f64::EPSILON * x {
            break;
        }
    }
    x
}

/// Implicit QL iteration with Wilkinson-style shifts on a symmetric
/// tridiagonal matrix. `diag` holds the diagonal; `off[i]` couples rows i and
/// i + 1 (the last entry is ignored). Eigenvalues are left in `diag`.
fn symmetric_tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> std::result::Result<(), usize> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    const MAX_SWEEPS: usize = 60;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_SWEEPS {
                return Err(iter);
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Equispaced periodic trapezoid grid on [0, 2π).
#[derive(Debug, Clone)]
pub struct AngularGrid {
    count: usize,
    nodes: Vec<f64>,
    weight: f64,
}

impl AngularGrid {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|&t| f(t)).sum::<f64>() * self.weight
    }
}

pub fn angular_grid(count: usize) -> Result<AngularGrid> {
    if count < 4 {
        return param_err(format!("angular grid needs at least 4 nodes, got {count}"));
    }
    let h = 2.0 * PI / count as f64;
    Ok(AngularGrid {
        count,
        nodes: (0..count).map(|j| j as f64 * h).collect(),
        weight: h,
    })
}
