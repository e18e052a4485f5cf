//! Linear space-fractional operators represented by their Fourier multipliers.
//!
//! With F f(ξ) = (2π)^{-1/2} ∫ e^{-iξx} f(x) dx the supported one-dimensional
//! terms have multipliers
//!
//! | kind                       | m(ξ)                          |
//! |----------------------------|-------------------------------|
//! | fractional Laplacian       | C |ξ|^α                       |
//! | left Riemann-Liouville     | C (−iξ)^α = C |ξ|^α e^{−iαπ/2·sgn ξ} |
//! | right Riemann-Liouville    | C (iξ)^α  = C |ξ|^α e^{+iαπ/2·sgn ξ} |
//!
//! so the left derivative of order 1 is −∂/∂x and of order 2 is ∂²/∂x².
//! In two dimensions only the fractional Laplacian (|ξ| Euclidean) is offered.
//!
//! On the positive half-line every multiplier is a finite sum of monomials
//! a·ξ^e with complex a. [`FracPoly`] keeps that form together with the
//! parameter derivatives of each monomial, which is what the kernel-block
//! quadrature consumes.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

/// Half-width of the excluded band around α = 1 for stable-diffusion operators.
pub const STABLE_ALPHA_GUARD: f64 = 1e-3;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierKind {
    FractionalLaplacian,
    RiemannLiouvilleLeft,
    RiemannLiouvilleRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierTerm {
    pub kind: MultiplierKind,
    pub alpha: f64,
    pub coeff: f64,
}

impl MultiplierTerm {
    pub fn new(kind: MultiplierKind, alpha: f64, coeff: f64) -> Self {
        MultiplierTerm { kind, alpha, coeff }
    }

    /// Phase of the unit-coefficient multiplier at sgn ξ = `sign`.
    fn phase(&self, sign: f64) -> f64 {
        match self.kind {
            MultiplierKind::FractionalLaplacian => 0.0,
            MultiplierKind::RiemannLiouvilleLeft => -sign * self.alpha * FRAC_PI_2,
            MultiplierKind::RiemannLiouvilleRight => sign * self.alpha * FRAC_PI_2,
        }
    }
}

/// The generator of an α-stable process,
/// γ^α/|cos(πα/2)| · [p (−iξ)^α + (1 − p)(iξ)^α].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableDiffusionSpec {
    pub alpha: f64,
    pub p: f64,
    pub gamma: f64,
}

impl StableDiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return param_err(format!("stable α must lie in (0, 2), got {}", self.alpha));
        }
        if (self.alpha - 1.0).abs() <= STABLE_ALPHA_GUARD {
            return param_err(format!(
                "stable α = {} is within {STABLE_ALPHA_GUARD} of 1, where the prefactor γ^α/|cos(πα/2)| is singular",
                self.alpha
            ));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return param_err(format!("stable p must lie in (0, 1), got {}", self.p));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return param_err(format!("stable γ must be positive, got {}", self.gamma));
        }
        Ok(())
    }

    /// γ^α / |cos(πα/2)|.
    pub fn prefactor(&self) -> f64 {
        self.gamma.powf(self.alpha) / (self.alpha * FRAC_PI_2).cos().abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Generator {
    Terms(Vec<MultiplierTerm>),
    Stable(StableDiffusionSpec),
}

/// How the operator enters a time-dependent equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquationForm {
    /// u_t + L u = 0: backward Euler gives (Id + Δt L) uⁿ = uⁿ⁻¹.
    Operator,
    /// u_t = L u: backward Euler gives (Id − Δt L) uⁿ = uⁿ⁻¹.
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionStep {
    pub dt: f64,
    pub form: EquationForm,
}

impl EvolutionStep {
    fn signed_dt(&self) -> f64 {
        match self.form {
            EquationForm::Operator => self.dt,
            EquationForm::Generator => -self.dt,
        }
    }
}

/// Addresses one operator parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorParam {
    Coeff(usize),
    Order(usize),
    StableAlpha,
    StableP,
    StableGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub generator: Generator,
    pub evolution: Option<EvolutionStep>,
}

impl OperatorSpec {
    pub fn new(generator: Generator, evolution: Option<EvolutionStep>) -> Result<Self> {
        let spec = OperatorSpec { generator, evolution };
        spec.validate()?;
        Ok(spec)
    }

    pub fn terms(terms: Vec<MultiplierTerm>) -> Result<Self> {
        Self::new(Generator::Terms(terms), None)
    }

    pub fn single(kind: MultiplierKind, alpha: f64, coeff: f64) -> Result<Self> {
        Self::terms(vec![MultiplierTerm::new(kind, alpha, coeff)])
    }

    pub fn with_evolution(mut self, dt: f64, form: EquationForm) -> Result<Self> {
        self.evolution = Some(EvolutionStep { dt, form });
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.generator {
            Generator::Terms(terms) => {
                if terms.is_empty() {
                    return param_err("operator needs at least one term");
                }
                for (j, t) in terms.iter().enumerate() {
                    if !(t.alpha > 0.0 && t.alpha <= 2.0) {
                        return param_err(format!("term {j}: order must lie in (0, 2], got {}", t.alpha));
                    }
                    if !t.coeff.is_finite() {
                        return param_err(format!("term {j}: coefficient must be finite, got {}", t.coeff));
                    }
                }
            }
            Generator::Stable(s) => s.validate()?,
        }
        if let Some(ev) = self.evolution {
            if !(ev.dt >= 0.0 && ev.dt.is_finite()) {
                return param_err(format!("time step must be non-negative, got {}", ev.dt));
            }
        }
        Ok(())
    }

    /// Parameters in canonical order: (C₀, α₀, C₁, α₁, …) or (α, p, γ).
    pub fn params(&self) -> Vec<OperatorParam> {
        match &self.generator {
            Generator::Terms(terms) => (0..terms.len())
                .flat_map(|j| [OperatorParam::Coeff(j), OperatorParam::Order(j)])
                .collect(),
            Generator::Stable(_) => vec![OperatorParam::StableAlpha, OperatorParam::StableP, OperatorParam::StableGamma],
        }
    }

    fn param_position(&self, param: OperatorParam) -> Result<usize> {
        self.params()
            .iter()
            .position(|p| *p == param)
            .ok_or_else(|| Error::Parameter(format!("operator has no parameter {param:?}")))
    }

    pub fn get(&self, param: OperatorParam) -> Result<f64> {
        self.param_position(param)?;
        Ok(match (&self.generator, param) {
            (Generator::Terms(t), OperatorParam::Coeff(j)) => t[j].coeff,
            (Generator::Terms(t), OperatorParam::Order(j)) => t[j].alpha,
            (Generator::Stable(s), OperatorParam::StableAlpha) => s.alpha,
            (Generator::Stable(s), OperatorParam::StableP) => s.p,
            (Generator::Stable(s), OperatorParam::StableGamma) => s.gamma,
            _ => unreachable!("position check covers every pairing"),
        })
    }

    pub fn set(&mut self, param: OperatorParam, value: f64) -> Result<()> {
        self.param_position(param)?;
        match (&mut self.generator, param) {
            (Generator::Terms(t), OperatorParam::Coeff(j)) => t[j].coeff = value,
            (Generator::Terms(t), OperatorParam::Order(j)) => t[j].alpha = value,
            (Generator::Stable(s), OperatorParam::StableAlpha) => s.alpha = value,
            (Generator::Stable(s), OperatorParam::StableP) => s.p = value,
            (Generator::Stable(s), OperatorParam::StableGamma) => s.gamma = value,
            _ => unreachable!("position check covers every pairing"),
        }
        self.validate()
    }

    /// Whether the operator can act in `dim` spatial dimensions.
    pub fn check_dimension(&self, dim: usize) -> Result<()> {
        match dim {
            1 => Ok(()),
            2 => match &self.generator {
                Generator::Terms(terms) if terms.iter().all(|t| t.kind == MultiplierKind::FractionalLaplacian) => Ok(()),
                _ => Err(Error::Unsupported(
                    "only fractional-Laplacian terms are available in two dimensions".into(),
                )),
            },
            d => Err(Error::Unsupported(format!("operators act in 1 or 2 dimensions, not {d}"))),
        }
    }

    /// The bare multiplier m(sign·ξ) for ξ > 0 as monomials in ξ.
    pub fn generator_poly(&self, sign: f64) -> FracPoly {
        let nparams = self.params().len();
        let mut poly = FracPoly::zero(nparams);
        match &self.generator {
            Generator::Terms(terms) => {
                for (j, t) in terms.iter().enumerate() {
                    let unit = Complex64::from_polar(1.0, t.phase(sign));
                    let a = t.coeff * unit;
                    let mut d_coeff = vec![Complex64::new(0.0, 0.0); nparams];
                    let mut d_log = vec![Complex64::new(0.0, 0.0); nparams];
                    d_coeff[2 * j] = unit;
                    // ∂(phase)/∂α is ∓π/2·sgn for the Riemann-Liouville kinds.
                    let dphase = if t.alpha != 0.0 { t.phase(sign) / t.alpha } else { 0.0 };
                    d_coeff[2 * j + 1] = a * I * dphase;
                    d_log[2 * j + 1] = a;
                    poly.push(Monomial { exponent: t.alpha, coeff: a, d_coeff, d_log });
                }
            }
            Generator::Stable(s) => {
                let phase = s.alpha * FRAC_PI_2;
                let left = Complex64::from_polar(1.0, -sign * phase);
                let right = Complex64::from_polar(1.0, sign * phase);
                let amp = s.prefactor();
                let mix = s.p * left + (1.0 - s.p) * right;
                let a = amp * mix;
                let damp_dalpha = amp * (s.gamma.ln() + FRAC_PI_2 * (s.alpha * FRAC_PI_2).tan());
                let dmix_dalpha = s.p * left * (-I * sign * FRAC_PI_2) + (1.0 - s.p) * right * (I * sign * FRAC_PI_2);
                let d_coeff = vec![
                    damp_dalpha * mix + amp * dmix_dalpha,
                    amp * (left - right),
                    s.alpha * a / s.gamma,
                ];
                let d_log = vec![a, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
                poly.push(Monomial { exponent: s.alpha, coeff: a, d_coeff, d_log });
            }
        }
        poly.merge_exponents();
        poly
    }

    /// The factor Φ contributed by one operator application at sign·ξ, ξ > 0:
    /// the bare multiplier, or the backward-Euler wrapper 1 ± Δt·m in
    /// evolution mode.
    pub fn factor_poly(&self, sign: f64) -> FracPoly {
        let bare = self.generator_poly(sign);
        match self.evolution {
            None => bare,
            Some(ev) => {
                let mut poly = bare.scaled(ev.signed_dt());
                poly.push(Monomial::constant(Complex64::new(1.0, 0.0), poly.nparams));
                poly.merge_exponents();
                poly
            }
        }
    }
}

/// a·ξ^e with the partial derivatives of a and a·∂e/∂P per parameter P,
/// so ∂(a ξ^e)/∂P = (d_coeff[P] + d_log[P]·ln ξ) ξ^e.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub exponent: f64,
    pub coeff: Complex64,
    pub d_coeff: Vec<Complex64>,
    pub d_log: Vec<Complex64>,
}

impl Monomial {
    pub fn constant(coeff: Complex64, nparams: usize) -> Self {
        Monomial {
            exponent: 0.0,
            coeff,
            d_coeff: vec![Complex64::new(0.0, 0.0); nparams],
            d_log: vec![Complex64::new(0.0, 0.0); nparams],
        }
    }
}

/// Exponents closer than this are treated as one group.
pub const EXPONENT_MERGE_TOL: f64 = 1e-12;

/// A finite sum of monomials in ξ > 0 with parameter derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FracPoly {
    terms: Vec<Monomial>,
    nparams: usize,
}

impl FracPoly {
    pub fn zero(nparams: usize) -> Self {
        FracPoly { terms: Vec::new(), nparams }
    }

    pub fn one(nparams: usize) -> Self {
        FracPoly { terms: vec![Monomial::constant(Complex64::new(1.0, 0.0), nparams)], nparams }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn nparams(&self) -> usize {
        self.nparams
    }

    fn push(&mut self, m: Monomial) {
        self.terms.push(m);
    }

    fn scaled(mut self, factor: f64) -> Self {
        for m in &mut self.terms {
            m.coeff *= factor;
            m.d_coeff.iter_mut().for_each(|d| *d *= factor);
            m.d_log.iter_mut().for_each(|d| *d *= factor);
        }
        self
    }

    /// Product by the Leibniz rule; exponents add and equal exponents merge.
    pub fn mul(&self, other: &FracPoly) -> FracPoly {
        debug_assert_eq!(self.nparams, other.nparams);
        let n = self.nparams;
        let mut out = FracPoly::zero(n);
        for a in &self.terms {
            for b in &other.terms {
                out.push(Monomial {
                    exponent: a.exponent + b.exponent,
                    coeff: a.coeff * b.coeff,
                    d_coeff: (0..n).map(|k| a.d_coeff[k] * b.coeff + a.coeff * b.d_coeff[k]).collect(),
                    d_log: (0..n).map(|k| a.d_log[k] * b.coeff + a.coeff * b.d_log[k]).collect(),
                });
            }
        }
        out.merge_exponents();
        out
    }

    /// Sorts by exponent and sums monomials whose exponents agree to
    /// [`EXPONENT_MERGE_TOL`].
    fn merge_exponents(&mut self) {
        self.terms.sort_by(|a, b| a.exponent.total_cmp(&b.exponent));
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for m in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if (last.exponent - m.exponent).abs() <= EXPONENT_MERGE_TOL => {
                    last.coeff += m.coeff;
                    for k in 0..m.d_coeff.len() {
                        last.d_coeff[k] += m.d_coeff[k];
                        last.d_log[k] += m.d_log[k];
                    }
                }
                _ => merged.push(m),
            }
        }
        self.terms = merged;
    }

    /// Value at r ≥ 0; positive powers vanish at r = 0.
    pub fn eval(&self, r: f64) -> Complex64 {
        self.terms.iter().map(|m| m.coeff * pow0(r, m.exponent)).sum()
    }

    /// ∂/∂(parameter k) at r ≥ 0, with the log term dropped at r = 0.
    pub fn eval_grad(&self, r: f64, k: usize) -> Complex64 {
        self.terms
            .iter()
            .map(|m| {
                let p = pow0(r, m.exponent);
                if p == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    (m.d_coeff[k] + m.d_log[k] * r.ln()) * p
                }
            })
            .sum()
    }
}

/// r^e with 0^0 = 1 and 0^e = 0 for e > 0.
fn pow0(r: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if r == 0.0 {
        0.0
    } else {
        r.powf(e)
    }
}

fn split_frequency(spec: &OperatorSpec, xi: &[f64]) -> Result<(f64, f64)> {
    spec.check_dimension(xi.len())?;
    if xi.iter().any(|x| !x.is_finite()) {
        return param_err(format!("frequency must be finite, got {xi:?}"));
    }
    Ok(match xi {
        [x] => (x.abs(), if *x < 0.0 { -1.0 } else { 1.0 }),
        _ => (xi.iter().map(|x| x * x).sum::<f64>().sqrt(), 1.0),
    })
}

/// m(ξ), including the evolution wrapper when the spec has one.
pub fn multiplier_eval(spec: &OperatorSpec, xi: &[f64]) -> Result<Complex64> {
    let (r, sign) = split_frequency(spec, xi)?;
    Ok(spec.factor_poly(sign).eval(r))
}

/// m(ξ)·m(−ξ).
pub fn multiplier_pair_eval(spec: &OperatorSpec, xi: &[f64]) -> Result<Complex64> {
    let neg: Vec<f64> = xi.iter().map(|x| -x).collect();
    Ok(multiplier_eval(spec, xi)? * multiplier_eval(spec, &neg)?)
}

/// ∂m(ξ)/∂param. Defined as 0 at ξ = 0 for positive-order terms.
pub fn multiplier_grad(spec: &OperatorSpec, xi: &[f64], param: OperatorParam) -> Result<Complex64> {
    let k = spec.param_position(param)?;
    let (r, sign) = split_frequency(spec, xi)?;
    Ok(spec.factor_poly(sign).eval_grad(r, k))
}

/// The stable generator as a plain two-term operator with shared order.
pub fn stable_multiplier(spec: &StableDiffusionSpec) -> Result<OperatorSpec> {
    spec.validate()?;
    let amp = spec.prefactor();
    OperatorSpec::terms(vec![
        MultiplierTerm::new(MultiplierKind::RiemannLiouvilleLeft, spec.alpha, amp * spec.p),
        MultiplierTerm::new(MultiplierKind::RiemannLiouvilleRight, spec.alpha, amp * (1.0 - spec.p)),
    ])
}
