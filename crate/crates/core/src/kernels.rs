//! Physics-informed kernel blocks as Fourier integrals.
//!
//! Every block has the form
//!
//!   k(x, y) = (2π)^{-d/2} ∫ e^{i(x−y)·ξ} Φ(ξ) K̂(ξ) dξ
//!
//! where Φ is 1, m(−ξ) (operator on the second argument), m(ξ) (operator on
//! the first) or m(ξ)m(−ξ), with m replaced by the backward-Euler wrapper in
//! the evolution framework. Φ is a sum of monomials a·ξ^e on the half-line,
//! and each monomial group is integrated with a generalized Gauss-Laguerre
//! rule whose weight exponent equals the monomial's exponent (plus one in
//! two dimensions for the polar Jacobian), so the singular factor is absorbed
//! into the weight.
//!
//! In one dimension conjugate symmetry reduces the line to twice the real
//! part over ξ > 0. In two dimensions Φ is radial and real, and the angular
//! trapezoid grid is folded onto the half-plane using K̂(−ξ) = K̂(ξ).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::operators::{FracPoly, OperatorParam, OperatorSpec};
use crate::quadrature::{
    angular_grid, gauss_laguerre_rule, AngularGrid, GaussLaguerreRule, DEFAULT_ANGULAR_2D, DEFAULT_NODES_1D,
    DEFAULT_RADIAL_2D,
};
use crate::spectral::{Combine, HyperParamTag, SpectralDensity};

/// Lags closer than this share one block evaluation.
pub const LAG_QUANTUM: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelBlockKind {
    UU,
    UF,
    FU,
    FF,
    NN,
    NNm1,
    Nm1N,
    Nm1Nm1,
}

impl KernelBlockKind {
    /// Whether the operator acts on the first and on the second argument.
    pub fn operator_sides(self) -> (bool, bool) {
        use KernelBlockKind::*;
        match self {
            UU | NN => (false, false),
            UF | NNm1 => (false, true),
            FU | Nm1N => (true, false),
            FF | Nm1Nm1 => (true, true),
        }
    }

    pub fn is_evolution(self) -> bool {
        use KernelBlockKind::*;
        matches!(self, NN | NNm1 | Nm1N | Nm1Nm1)
    }

    pub fn transpose(self) -> Self {
        use KernelBlockKind::*;
        match self {
            UF => FU,
            FU => UF,
            NNm1 => Nm1N,
            Nm1N => NNm1,
            k => k,
        }
    }
}

/// Φ(ξ) for ξ > 0 as monomials in ξ, with operator-parameter derivatives.
pub fn block_factor(kind: KernelBlockKind, op: &OperatorSpec) -> Result<FracPoly> {
    match (kind.is_evolution(), op.evolution.is_some()) {
        (true, false) => {
            return Err(Error::Configuration(format!(
                "{kind:?} is an evolution block but the operator has no time step"
            )))
        }
        (false, true) => {
            return Err(Error::Configuration(format!(
                "{kind:?} is a time-independent block but the operator carries a time step"
            )))
        }
        _ => {}
    }
    let n = op.params().len();
    let (left, right) = kind.operator_sides();
    let mut phi = FracPoly::one(n);
    if left {
        phi = phi.mul(&op.factor_poly(1.0));
    }
    if right {
        phi = phi.mul(&op.factor_poly(-1.0));
    }
    Ok(phi)
}

/// A parameter a block can be differentiated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockParam {
    Spectral(HyperParamTag),
    Operator(OperatorParam),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes_1d: usize,
    pub radial_2d: usize,
    pub angular_2d: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes_1d: DEFAULT_NODES_1D,
            radial_2d: DEFAULT_RADIAL_2D,
            angular_2d: DEFAULT_ANGULAR_2D,
        }
    }
}

/// Gauss-Laguerre rules keyed by (node count, weight exponent).
#[derive(Debug, Default)]
pub struct RuleCache {
    rules: Mutex<HashMap<(usize, u64), Arc<GaussLaguerreRule>>>,
}

const RULE_CACHE_LIMIT: usize = 256;

impl RuleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, n: usize, alpha_ggl: f64) -> Result<Arc<GaussLaguerreRule>> {
        let key = (n, alpha_ggl.to_bits());
        if let Some(rule) = self.rules.lock().expect("rule cache poisoned").get(&key) {
            return Ok(rule.clone());
        }
        let rule = Arc::new(gauss_laguerre_rule(n, alpha_ggl)?);
        let mut map = self.rules.lock().expect("rule cache poisoned");
        if map.len() >= RULE_CACHE_LIMIT {
            map.clear();
        }
        map.insert(key, rule.clone());
        Ok(rule)
    }
}

/// Quadrature nodes with the per-node coefficient of the value and of each
/// requested derivative, so a block at lag r is Σ Re[(Ψ + i (r·ξ) Ψ′) e^{i r·ξ}].
///
/// Ψ′ is nonzero only for derivatives by an operator order when the rule's
/// weight exponent follows that order: the nodes then move with the
/// parameter, which shifts the phase r·ξ.
struct NodeTable {
    real_only: bool,
    nodes: Vec<[f64; 2]>,
    stride: usize,
    coeffs: Vec<Complex64>,
    phase_coeffs: Option<Vec<Complex64>>,
}

enum RuleSource<'a> {
    Fixed(&'a GaussLaguerreRule),
    Matched { n: usize, cache: &'a RuleCache },
}

impl RuleSource<'_> {
    /// Whether rule exponents follow the integrand, so order derivatives
    /// must include the motion of the rule.
    fn tracks_exponent(&self) -> bool {
        matches!(self, RuleSource::Matched { .. })
    }

    fn rule_for(&self, exponent: f64) -> Result<Arc<GaussLaguerreRule>> {
        match self {
            RuleSource::Matched { n, cache } => cache.get(*n, exponent),
            RuleSource::Fixed(rule) => {
                let gap = exponent - rule.alpha_ggl();
                let whole = gap.round();
                if (gap - whole).abs() > 1e-12 || whole < 0.0 {
                    return Err(Error::Configuration(format!(
                        "quadrature weight exponent {} does not match integrand exponent {exponent}: \
                         their difference must be a non-negative integer",
                        rule.alpha_ggl()
                    )));
                }
                Ok(Arc::new((*rule).clone()))
            }
        }
    }
}

fn check_inputs(kind: KernelBlockKind, op: &OperatorSpec, sd: &SpectralDensity) -> Result<()> {
    if sd.combine() == Combine::Sum {
        return Err(Error::Unsupported(
            "sum-combined kernels have distributional transforms and cannot be used in kernel blocks".into(),
        ));
    }
    let (left, right) = kind.operator_sides();
    if left || right || kind.is_evolution() {
        op.check_dimension(sd.dim())?;
    }
    Ok(())
}

fn param_slots(op: &OperatorSpec, sd: &SpectralDensity, params: &[BlockParam]) -> Result<(Vec<HyperParamTag>, Vec<ParamSlot>)> {
    let mut tags = Vec::new();
    let op_params = op.params();
    let mut slots = Vec::with_capacity(params.len());
    for p in params {
        match p {
            BlockParam::Spectral(tag) => {
                sd.get(*tag)?;
                slots.push(ParamSlot::Spectral(tags.len()));
                tags.push(*tag);
            }
            BlockParam::Operator(q) => {
                let k = op_params
                    .iter()
                    .position(|x| x == q)
                    .ok_or_else(|| Error::Parameter(format!("operator has no parameter {q:?}")))?;
                slots.push(ParamSlot::Operator(k));
            }
        }
    }
    Ok((tags, slots))
}

#[derive(Clone, Copy)]
enum ParamSlot {
    Spectral(usize),
    Operator(usize),
}

fn build_table_1d(
    kind: KernelBlockKind,
    op: &OperatorSpec,
    sd: &SpectralDensity,
    rules: RuleSource<'_>,
    params: &[BlockParam],
) -> Result<NodeTable> {
    check_inputs(kind, op, sd)?;
    if sd.dim() != 1 {
        return param_err(format!("one-dimensional block requested for a {}-dimensional kernel", sd.dim()));
    }
    let phi = block_factor(kind, op)?;
    let (tags, slots) = param_slots(op, sd, params)?;
    let density = sd.prepare();
    let stride = 1 + params.len();
    let prefactor = 2.0 / (2.0 * PI).sqrt();

    let tracking = rules.tracks_exponent() && slots.iter().any(|s| matches!(s, ParamSlot::Operator(_)));
    let mut nodes = Vec::new();
    let mut coeffs = Vec::new();
    let mut phase_coeffs = Vec::new();
    let mut dk = vec![0.0; tags.len()];
    for group in phi.terms() {
        let rule = rules.rule_for(group.exponent)?;
        let shift = group.exponent - rule.alpha_ggl();
        for i in 0..rule.order() {
            let (x, lw) = (rule.nodes()[i], rule.log_weights()[i]);
            let base = prefactor * (lw + x).exp() * if shift == 0.0 { 1.0 } else { x.powf(shift) };
            let k = density.eval_with_grads(&[x], &tags, &mut dk);
            nodes.push([x, 0.0]);
            coeffs.push(base * k * group.coeff);
            if tracking {
                phase_coeffs.push(Complex64::new(0.0, 0.0));
            }
            // Moving the rule: d/de Σ W_i G(x_i) = Σ W_i [G (d ln W_i/de) + G' dx_i/de],
            // where G' includes the phase factor i r handled through Ψ′.
            let (dx, dlnw) = (rule.node_sensitivity()[i], rule.log_weight_sensitivity()[i] + rule.node_sensitivity()[i]);
            let slope = if tracking { density.directional_slope(&[x], &[1.0]) } else { 0.0 };
            for slot in &slots {
                match *slot {
                    ParamSlot::Spectral(t) => {
                        coeffs.push(base * dk[t] * group.coeff);
                        if tracking {
                            phase_coeffs.push(Complex64::new(0.0, 0.0));
                        }
                    }
                    ParamSlot::Operator(j) if tracking => {
                        let moving = base * (k * dlnw + slope * dx);
                        coeffs.push(base * k * group.d_coeff[j] + group.d_log[j] * moving);
                        phase_coeffs.push(group.d_log[j] * base * k * dx / x);
                    }
                    ParamSlot::Operator(j) => {
                        coeffs.push(base * k * (group.d_coeff[j] + group.d_log[j] * x.ln()));
                    }
                }
            }
        }
    }
    let phase_coeffs = tracking.then_some(phase_coeffs);
    Ok(NodeTable { real_only: false, nodes, stride, coeffs, phase_coeffs })
}

fn build_table_2d(
    kind: KernelBlockKind,
    op: &OperatorSpec,
    sd: &SpectralDensity,
    rules: RuleSource<'_>,
    angular: &AngularGrid,
    params: &[BlockParam],
) -> Result<NodeTable> {
    check_inputs(kind, op, sd)?;
    if sd.dim() != 2 {
        return param_err(format!("two-dimensional block requested for a {}-dimensional kernel", sd.dim()));
    }
    let phi = block_factor(kind, op)?;
    let (tags, slots) = param_slots(op, sd, params)?;
    let density = sd.prepare();
    let stride = 1 + params.len();

    // Fold φ and φ + π together when the grid allows it.
    let count = angular.count();
    let (angles, fold) = if count % 2 == 0 {
        (&angular.nodes()[..count / 2], 2.0)
    } else {
        (angular.nodes(), 1.0)
    };
    let angle_weight = fold * angular.weight() / (2.0 * PI);
    let directions: Vec<(f64, f64)> = angles.iter().map(|t| (t.cos(), t.sin())).collect();

    let tracking = rules.tracks_exponent() && slots.iter().any(|s| matches!(s, ParamSlot::Operator(_)));
    let mut nodes = Vec::new();
    let mut coeffs = Vec::new();
    let mut phase_coeffs = Vec::new();
    let mut dk = vec![0.0; tags.len()];
    let zero = Complex64::new(0.0, 0.0);
    for group in phi.terms() {
        if group.coeff.im.abs() > 1e-12 * group.coeff.norm() {
            return Err(Error::Configuration(format!(
                "two-dimensional multiplier has a complex coefficient {}",
                group.coeff
            )));
        }
        let a = group.coeff.re;
        let rule = rules.rule_for(group.exponent + 1.0)?;
        let shift = group.exponent + 1.0 - rule.alpha_ggl();
        for i in 0..rule.order() {
            let (rho, lw) = (rule.nodes()[i], rule.log_weights()[i]);
            let radial = angle_weight * (lw + rho).exp() * if shift == 0.0 { 1.0 } else { rho.powf(shift) };
            let ln_rho = rho.ln();
            let (drho, dlnw) = (rule.node_sensitivity()[i], rule.log_weight_sensitivity()[i] + rule.node_sensitivity()[i]);
            for &(c, s) in &directions {
                let xi = [rho * c, rho * s];
                let k = density.eval_with_grads(&xi, &tags, &mut dk);
                let slope = if tracking { density.directional_slope(&xi, &[c, s]) } else { 0.0 };
                nodes.push(xi);
                coeffs.push(Complex64::from(radial * k * a));
                if tracking {
                    phase_coeffs.push(zero);
                }
                for slot in &slots {
                    match *slot {
                        ParamSlot::Spectral(t) => {
                            coeffs.push(Complex64::from(radial * dk[t] * a));
                            if tracking {
                                phase_coeffs.push(zero);
                            }
                        }
                        ParamSlot::Operator(j) if tracking => {
                            let moving = radial * (k * dlnw + slope * drho);
                            coeffs.push(Complex64::from(radial * k * group.d_coeff[j].re + group.d_log[j].re * moving));
                            phase_coeffs.push(Complex64::from(group.d_log[j].re * radial * k * drho / rho));
                        }
                        ParamSlot::Operator(j) => {
                            coeffs.push(Complex64::from(
                                radial * k * (group.d_coeff[j].re + group.d_log[j].re * ln_rho),
                            ));
                        }
                    }
                }
            }
        }
    }
    let phase_coeffs = tracking.then_some(phase_coeffs);
    Ok(NodeTable { real_only: true, nodes, stride, coeffs, phase_coeffs })
}

impl NodeTable {
    fn eval_one(&self, lag: [f64; 2], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let stride = self.stride;
        let rows = self.nodes.iter().zip(self.coeffs.chunks_exact(stride));
        match (&self.phase_coeffs, self.real_only) {
            (None, true) => {
                for (node, psi) in rows {
                    let c = (lag[0] * node[0] + lag[1] * node[1]).cos();
                    for (o, p) in out.iter_mut().zip(psi) {
                        *o += p.re * c;
                    }
                }
            }
            (None, false) => {
                for (node, psi) in rows {
                    let (s, c) = (lag[0] * node[0] + lag[1] * node[1]).sin_cos();
                    for (o, p) in out.iter_mut().zip(psi) {
                        *o += p.re * c - p.im * s;
                    }
                }
            }
            (Some(moving), _) => {
                for ((node, psi), dpsi) in rows.zip(moving.chunks_exact(stride)) {
                    let phase = lag[0] * node[0] + lag[1] * node[1];
                    let (s, c) = phase.sin_cos();
                    for ((o, p), q) in out.iter_mut().zip(psi).zip(dpsi) {
                        *o += p.re * c - p.im * s - phase * (q.re * s + q.im * c);
                    }
                }
            }
        }
    }

    /// Evaluates at every lag, once per distinct quantized lag. Returns
    /// `stride` numbers per lag (value, then derivatives).
    fn evaluate(&self, kind: KernelBlockKind, lags: &[[f64; 2]]) -> Result<Vec<f64>> {
        let mut index = HashMap::with_capacity(lags.len());
        let mut unique: Vec<[f64; 2]> = Vec::new();
        let mut slot_of = Vec::with_capacity(lags.len());
        for lag in lags {
            if !(lag[0].is_finite() && lag[1].is_finite()) {
                return param_err(format!("non-finite lag {lag:?} in {kind:?} block"));
            }
            let key = ((lag[0] / LAG_QUANTUM).round() as i64, (lag[1] / LAG_QUANTUM).round() as i64);
            let slot = *index.entry(key).or_insert_with(|| {
                unique.push([key.0 as f64 * LAG_QUANTUM, key.1 as f64 * LAG_QUANTUM]);
                unique.len() - 1
            });
            slot_of.push(slot);
        }
        let stride = self.stride;
        let mut values = vec![0.0; unique.len() * stride];
        values
            .par_chunks_mut(stride)
            .zip(unique.par_iter())
            .for_each(|(out, lag)| self.eval_one(*lag, out));
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite {kind:?} block value at lag {:?}",
                unique[bad / stride]
            )));
        }
        let mut out = Vec::with_capacity(lags.len() * stride);
        for slot in slot_of {
            out.extend_from_slice(&values[slot * stride..(slot + 1) * stride]);
        }
        Ok(out)
    }
}

fn first_column(values: Vec<f64>, stride: usize, column: usize) -> Vec<f64> {
    values.chunks_exact(stride).map(|c| c[column]).collect()
}

fn lags_1d(lags: &[f64]) -> Vec<[f64; 2]> {
    lags.iter().map(|&r| [r, 0.0]).collect()
}

/// One-dimensional block values at the given lags x − y, using a single
/// caller-supplied rule. Every monomial group of Φ must differ from the rule's
/// weight exponent by a non-negative integer.
pub fn kernel_block_1d(
    kind: KernelBlockKind,
    lags: &[f64],
    op: &OperatorSpec,
    sd: &SpectralDensity,
    rule: &GaussLaguerreRule,
) -> Result<Vec<f64>> {
    let table = build_table_1d(kind, op, sd, RuleSource::Fixed(rule), &[])?;
    table.evaluate(kind, &lags_1d(lags))
}

/// Two-dimensional block values in polar coordinates with a single radial rule.
pub fn kernel_block_2d(
    kind: KernelBlockKind,
    lag_pairs: &[[f64; 2]],
    op: &OperatorSpec,
    sd: &SpectralDensity,
    radial: &GaussLaguerreRule,
    angular: &AngularGrid,
) -> Result<Vec<f64>> {
    let table = build_table_2d(kind, op, sd, RuleSource::Fixed(radial), angular, &[])?;
    table.evaluate(kind, lag_pairs)
}

/// ∂(block)/∂param at the given one-dimensional lags.
pub fn kernel_block_grad_1d(
    kind: KernelBlockKind,
    lags: &[f64],
    op: &OperatorSpec,
    sd: &SpectralDensity,
    rule: &GaussLaguerreRule,
    param: BlockParam,
) -> Result<Vec<f64>> {
    let table = build_table_1d(kind, op, sd, RuleSource::Fixed(rule), &[param])?;
    Ok(first_column(table.evaluate(kind, &lags_1d(lags))?, 2, 1))
}

/// ∂(block)/∂param at the given two-dimensional lags.
pub fn kernel_block_grad_2d(
    kind: KernelBlockKind,
    lag_pairs: &[[f64; 2]],
    op: &OperatorSpec,
    sd: &SpectralDensity,
    radial: &GaussLaguerreRule,
    angular: &AngularGrid,
    param: BlockParam,
) -> Result<Vec<f64>> {
    let table = build_table_2d(kind, op, sd, RuleSource::Fixed(radial), angular, &[param])?;
    Ok(first_column(table.evaluate(kind, lag_pairs)?, 2, 1))
}

/// Block values and derivatives with rules matched to every monomial group.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockValues {
    pub values: Vec<f64>,
    /// `grads[k][i]` is the derivative by `params[k]` at lag i.
    pub grads: Vec<Vec<f64>>,
}

/// Evaluates a block of either dimension with automatically matched rules.
/// One-dimensional lags use only the first coordinate.
pub fn kernel_block(
    kind: KernelBlockKind,
    lags: &[[f64; 2]],
    op: &OperatorSpec,
    sd: &SpectralDensity,
    quad: &QuadratureConfig,
    cache: &RuleCache,
    params: &[BlockParam],
) -> Result<BlockValues> {
    let table = match sd.dim() {
        1 => build_table_1d(kind, op, sd, RuleSource::Matched { n: quad.nodes_1d, cache }, params)?,
        _ => {
            let angular = angular_grid(quad.angular_2d)?;
            build_table_2d(kind, op, sd, RuleSource::Matched { n: quad.radial_2d, cache }, &angular, params)?
        }
    };
    let lags: Vec<[f64; 2]> = if sd.dim() == 1 { lags.iter().map(|l| [l[0], 0.0]).collect() } else { lags.to_vec() };
    let flat = table.evaluate(kind, &lags)?;
    let stride = table.stride;
    let values = flat.chunks_exact(stride).map(|c| c[0]).collect();
    let grads = (1..stride).map(|k| flat.chunks_exact(stride).map(|c| c[k]).collect()).collect();
    Ok(BlockValues { values, grads })
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn diagonal_mean(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum::<f64>() / self.n.max(1) as f64
    }
}

/// Block kinds for a two-group joint Gaussian process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointKinds {
    pub first: KernelBlockKind,
    pub cross: KernelBlockKind,
    pub second: KernelBlockKind,
}

impl JointKinds {
    pub const TIME_INDEPENDENT: JointKinds = JointKinds {
        first: KernelBlockKind::UU,
        cross: KernelBlockKind::UF,
        second: KernelBlockKind::FF,
    };
    pub const EVOLUTION: JointKinds = JointKinds {
        first: KernelBlockKind::NN,
        cross: KernelBlockKind::NNm1,
        second: KernelBlockKind::Nm1Nm1,
    };
}

/// Noise-free joint covariance of two site groups and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    pub matrix: Matrix,
    pub grads: Vec<Matrix>,
    /// Rows 0..first_len belong to the first group.
    pub first_len: usize,
}

/// Fills [[k_first, k_cross], [k_crossᵀ, k_second]] at all site pairs.
/// Diagonal blocks are evaluated on the upper triangle and mirrored, so the
/// result is exactly symmetric.
#[allow(clippy::too_many_arguments)]
pub fn joint_covariance(
    first: &[[f64; 2]],
    second: &[[f64; 2]],
    kinds: JointKinds,
    op: &OperatorSpec,
    sd: &SpectralDensity,
    quad: &QuadratureConfig,
    cache: &RuleCache,
    params: &[BlockParam],
) -> Result<JointCovariance> {
    let na = first.len();
    let n = na + second.len();
    let diff = |a: &[f64; 2], b: &[f64; 2]| [a[0] - b[0], a[1] - b[1]];

    let upper = |sites: &[[f64; 2]]| -> Vec<(usize, usize, [f64; 2])> {
        let mut v = Vec::with_capacity(sites.len() * (sites.len() + 1) / 2);
        for i in 0..sites.len() {
            for j in i..sites.len() {
                v.push((i, j, diff(&sites[i], &sites[j])));
            }
        }
        v
    };
    let first_pairs = upper(first);
    let second_pairs = upper(second);
    let mut cross_pairs = Vec::with_capacity(na * second.len());
    for (i, a) in first.iter().enumerate() {
        for (j, b) in second.iter().enumerate() {
            cross_pairs.push((i, j, diff(a, b)));
        }
    }

    let run = |kind, pairs: &[(usize, usize, [f64; 2])]| {
        let lags: Vec<[f64; 2]> = pairs.iter().map(|p| p.2).collect();
        kernel_block(kind, &lags, op, sd, quad, cache, params)
    };
    let bf = run(kinds.first, &first_pairs)?;
    let bc = run(kinds.cross, &cross_pairs)?;
    let bs = run(kinds.second, &second_pairs)?;

    let mut matrix = Matrix::zeros(n);
    let mut grads = vec![Matrix::zeros(n); params.len()];
    let fill = |m: &mut Matrix, vals: &[f64], pairs: &[(usize, usize, [f64; 2])], off_i: usize, off_j: usize| {
        for (v, &(i, j, _)) in vals.iter().zip(pairs) {
            m.set(i + off_i, j + off_j, *v);
            m.set(j + off_j, i + off_i, *v);
        }
    };
    fill(&mut matrix, &bf.values, &first_pairs, 0, 0);
    fill(&mut matrix, &bc.values, &cross_pairs, 0, na);
    fill(&mut matrix, &bs.values, &second_pairs, na, na);
    for (k, g) in grads.iter_mut().enumerate() {
        fill(g, &bf.grads[k], &first_pairs, 0, 0);
        fill(g, &bc.grads[k], &cross_pairs, 0, na);
        fill(g, &bs.grads[k], &second_pairs, na, na);
    }
    Ok(JointCovariance { matrix, grads, first_len: na })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{EquationForm, MultiplierKind, MultiplierTerm};
    use crate::quadrature::REFERENCE_NODES;
    use crate::spectral::{kernel_value, matern_closed_form};
    use KernelBlockKind::*;

    fn matern(nu: f64, theta: f64) -> SpectralDensity {
        SpectralDensity::matern(1.0, vec![theta], vec![nu]).unwrap()
    }

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    fn sup(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn right_half() -> OperatorSpec {
        OperatorSpec::single(MultiplierKind::RiemannLiouvilleRight, 0.5, 1.0).unwrap()
    }

    #[test]
    fn uu_block_matches_closed_form() {
        let lags = grid(201, -1.0, 1.0);
        let rule = gauss_laguerre_rule(64, 0.0).unwrap();
        let uu = kernel_block_1d(UU, &lags, &right_half(), &matern(2.5, 1.0), &rule).unwrap();
        let exact: Vec<f64> = lags.iter().map(|&r| matern_closed_form(2.5, 1.0, 1.0, r).unwrap()).collect();
        let err = sup(&uu, &exact);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn reference_rule_matches_half_integer_closed_forms() {
        let lags = grid(61, -3.0, 3.0);
        let rule = gauss_laguerre_rule(REFERENCE_NODES, 0.0).unwrap();
        for &nu in &[1.5, 2.5, 3.5, 4.5, 9.5] {
            let uu = kernel_block_1d(UU, &lags, &right_half(), &matern(nu, 1.0), &rule).unwrap();
            let exact: Vec<f64> = lags.iter().map(|&r| matern_closed_form(nu, 1.0, 1.0, r).unwrap()).collect();
            assert!(sup(&uu, &exact) < 1e-6, "ν={nu}: {}", sup(&uu, &exact));
        }
    }

    #[test]
    fn mismatched_rule_is_rejected() {
        let rule = gauss_laguerre_rule(32, 0.3).unwrap();
        let err = kernel_block_1d(FU, &[0.1], &right_half(), &matern(2.5, 1.0), &rule).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
        // A rule a whole power below the integrand is still exact in form.
        let rule = gauss_laguerre_rule(32, -0.5).unwrap();
        assert!(kernel_block_1d(FU, &[0.1], &right_half(), &matern(2.5, 1.0), &rule).is_ok());
        let rule = gauss_laguerre_rule(32, 0.0).unwrap();
        assert!(kernel_block_1d(FF, &[0.1], &right_half(), &matern(2.5, 1.0), &rule).is_ok());
    }

    #[test]
    fn transpose_identity() {
        let lags = grid(41, -2.0, 2.0);
        let neg: Vec<f64> = lags.iter().map(|r| -r).collect();
        let op = OperatorSpec::single(MultiplierKind::RiemannLiouvilleLeft, 0.8, 1.3).unwrap();
        let rule = gauss_laguerre_rule(64, 0.8).unwrap();
        let sd = matern(2.5, 0.7);
        let fu = kernel_block_1d(FU, &lags, &op, &sd, &rule).unwrap();
        let uf = kernel_block_1d(UF, &neg, &op, &sd, &rule).unwrap();
        assert!(sup(&fu, &uf) < 1e-12);
    }

    #[test]
    fn doubled_factor_is_real() {
        for op in [
            OperatorSpec::single(MultiplierKind::RiemannLiouvilleLeft, 0.7, 1.3).unwrap(),
            OperatorSpec::single(MultiplierKind::RiemannLiouvilleRight, 1.4, -0.4).unwrap(),
            OperatorSpec::single(MultiplierKind::RiemannLiouvilleLeft, 0.7, 1.3)
                .unwrap()
                .with_evolution(0.1, EquationForm::Generator)
                .unwrap(),
        ] {
            let kind = if op.evolution.is_some() { Nm1Nm1 } else { FF };
            let phi = block_factor(kind, &op).unwrap();
            for m in phi.terms() {
                assert!(m.coeff.im.abs() <= 1e-10 * m.coeff.norm(), "{m:?}");
            }
        }
    }

    #[test]
    fn sigma_and_coefficient_scaling() {
        let op = OperatorSpec::single(MultiplierKind::FractionalLaplacian, 1.2, 1.7).unwrap();
        let sd = SpectralDensity::matern(1.3, vec![1.0], vec![2.5]).unwrap();
        let r0 = gauss_laguerre_rule(64, 0.0).unwrap();
        let r2 = gauss_laguerre_rule(64, 2.4).unwrap();
        let uu = kernel_block_1d(UU, &[0.0], &op, &sd, &r0).unwrap()[0];
        let g = kernel_block_grad_1d(UU, &[0.0], &op, &sd, &r0, BlockParam::Spectral(HyperParamTag::Sigma)).unwrap()[0];
        assert!((g - 2.0 * uu / 1.3).abs() < 1e-13);
        let ff = kernel_block_1d(FF, &[0.3], &op, &sd, &r2).unwrap()[0];
        let g = kernel_block_grad_1d(FF, &[0.3], &op, &sd, &r2, BlockParam::Operator(OperatorParam::Coeff(0))).unwrap()[0];
        assert!((g - 2.0 * ff / 1.7).abs() < 1e-12 * ff.abs());
    }

    #[test]
    fn order_derivative_matches_finite_difference() {
        let sd = matern(2.5, 1.0);
        let cache = RuleCache::new();
        let quad = QuadratureConfig::default();
        let lags = [[-0.7, 0.0], [0.0, 0.0], [0.4, 0.0], [1.3, 0.0]];
        let at = |alpha: f64| {
            let op = OperatorSpec::single(MultiplierKind::RiemannLiouvilleLeft, alpha, 1.0).unwrap();
            kernel_block(FU, &lags, &op, &sd, &quad, &cache, &[BlockParam::Operator(OperatorParam::Order(0))]).unwrap()
        };
        let h = 1e-5;
        let (base, up, down) = (at(0.8), at(0.8 + h), at(0.8 - h));
        for i in 0..lags.len() {
            let fd = (up.values[i] - down.values[i]) / (2.0 * h);
            let an = base.grads[0][i];
            assert!((an - fd).abs() <= 1e-5 * an.abs().max(1e-3), "lag {:?}: {an} vs {fd}", lags[i]);
        }
    }

    fn assert_gradients(kind: KernelBlockKind, op: &OperatorSpec, sd: &SpectralDensity, lags: &[[f64; 2]], quad: &QuadratureConfig) {
        let cache = RuleCache::new();
        let params: Vec<BlockParam> = op
            .params()
            .into_iter()
            .map(BlockParam::Operator)
            .chain(sd.tags().into_iter().map(BlockParam::Spectral))
            .collect();
        let base = kernel_block(kind, lags, op, sd, quad, &cache, &params).unwrap();
        let h = 1e-5;
        for (k, p) in params.iter().enumerate() {
            let shifted = |d: f64| {
                let (mut o, mut s) = (op.clone(), sd.clone());
                match p {
                    BlockParam::Operator(q) => o.set(*q, o.get(*q).unwrap() + d).unwrap(),
                    BlockParam::Spectral(t) => s.set(*t, s.get(*t).unwrap() + d).unwrap(),
                }
                kernel_block(kind, lags, &o, &s, quad, &cache, &[]).unwrap().values
            };
            let (up, down) = (shifted(h), shifted(-h));
            for i in 0..lags.len() {
                let fd = (up[i] - down[i]) / (2.0 * h);
                let an = base.grads[k][i];
                assert!((an - fd).abs() <= 1e-6 * an.abs().max(1e-3), "{kind:?} {p:?} lag {:?}: {an} vs {fd}", lags[i]);
            }
        }
    }

    #[test]
    fn evolution_two_term_gradients_match_finite_differences() {
        let sd = SpectralDensity::matern(1.1, vec![0.9], vec![9.5]).unwrap();
        let op = OperatorSpec::terms(vec![
            MultiplierTerm::new(MultiplierKind::RiemannLiouvilleLeft, 0.6, 1.2),
            MultiplierTerm::new(MultiplierKind::RiemannLiouvilleLeft, 1.5, 0.7),
        ])
        .unwrap()
        .with_evolution(0.1, EquationForm::Generator)
        .unwrap();
        let lags: Vec<[f64; 2]> = (0..9).map(|k| [-2.0 + 0.5 * k as f64, 0.0]).collect();
        for kind in [NN, NNm1, Nm1N, Nm1Nm1] {
            assert_gradients(kind, &op, &sd, &lags, &QuadratureConfig::default());
        }
    }

    #[test]
    fn two_dimensional_gradients_match_finite_differences() {
        let sd = SpectralDensity::matern(1.0, vec![1.2, 0.8], vec![5.5, 5.5]).unwrap();
        let op = OperatorSpec::single(MultiplierKind::FractionalLaplacian, 1.7, 1.1).unwrap();
        let lags: Vec<[f64; 2]> = (0..5).map(|k| [-2.0 + k as f64, 0.6 * k as f64 - 1.0]).collect();
        let quad = QuadratureConfig { nodes_1d: 64, radial_2d: 24, angular_2d: 16 };
        for kind in [UU, UF, FF] {
            assert_gradients(kind, &op, &sd, &lags, &quad);
        }
    }

    #[test]
    fn zero_multiplier_and_zero_step() {
        let sd = matern(2.5, 1.0);
        let cache = RuleCache::new();
        let quad = QuadratureConfig::default();
        let lags: Vec<[f64; 2]> = grid(9, -1.0, 1.0).into_iter().map(|r| [r, 0.0]).collect();
        let plain: Vec<f64> = lags.iter().map(|l| kernel_value(&sd, &l[..1]).unwrap()).collect();

        let zero = OperatorSpec::single(MultiplierKind::FractionalLaplacian, 1.0, 0.0).unwrap();
        for kind in [UF, FU, FF] {
            let v = kernel_block(kind, &lags, &zero, &sd, &quad, &cache, &[]).unwrap().values;
            assert!(v.iter().all(|x| *x == 0.0), "{kind:?}");
        }

        let still = OperatorSpec::single(MultiplierKind::RiemannLiouvilleLeft, 1.3, 1.0)
            .unwrap()
            .with_evolution(0.0, EquationForm::Generator)
            .unwrap();
        for kind in [NN, NNm1, Nm1N, Nm1Nm1] {
            let v = kernel_block(kind, &lags, &still, &sd, &quad, &cache, &[]).unwrap().values;
            assert!(sup(&v, &plain) < 1e-5, "{kind:?}: {}", sup(&v, &plain));
        }
    }

    #[test]
    fn integer_order_ff_matches_fourth_derivative() {
        // k(r) = e^{−r²/2}; ∂⁴k/∂x²∂y² = (r⁴ − 6r² + 3) e^{−r²/2}.
        let sd = SpectralDensity::squared_exponential(1.0, vec![1.0]).unwrap();
        let op = OperatorSpec::single(MultiplierKind::FractionalLaplacian, 2.0, 1.0).unwrap();
        let rule = gauss_laguerre_rule(REFERENCE_NODES, 4.0).unwrap();
        let lags = grid(41, -2.0, 2.0);
        let ff = kernel_block_1d(FF, &lags, &op, &sd, &rule).unwrap();
        for (v, &r) in ff.iter().zip(&lags) {
            let exact = (r.powi(4) - 6.0 * r * r + 3.0) * (-0.5 * r * r).exp();
            assert!((v - exact).abs() < 1e-8, "r={r}: {v} vs {exact}");
        }
    }

    #[test]
    fn two_dimensional_uu_matches_product_kernel() {
        let sd = SpectralDensity::matern(1.0, vec![1.0, 1.0], vec![2.5, 3.5]).unwrap();
        let op = OperatorSpec::single(MultiplierKind::FractionalLaplacian, 0.5, 1.0).unwrap();
        let radial = gauss_laguerre_rule(64, 1.0).unwrap();
        let angular = angular_grid(64).unwrap();
        let lags: Vec<[f64; 2]> = grid(9, -1.0, 1.0)
            .iter()
            .flat_map(|&a| grid(9, -1.0, 1.0).into_iter().map(move |b| [a, b]))
            .collect();
        let uu = kernel_block_2d(UU, &lags, &op, &sd, &radial, &angular).unwrap();
        let exact: Vec<f64> = lags.iter().map(|l| kernel_value(&sd, l).unwrap()).collect();
        assert!(sup(&uu, &exact) < 2e-4, "{}", sup(&uu, &exact));
        let ff = kernel_block_2d(FF, &[[0.0, 0.0]], &op, &sd, &gauss_laguerre_rule(64, 2.0).unwrap(), &angular).unwrap();
        assert!(ff[0] > 0.0);
    }

    #[test]
    fn two_dimensional_rejects_directional_terms() {
        let sd = SpectralDensity::matern(1.0, vec![1.0, 1.0], vec![2.5, 3.5]).unwrap();
        let op = OperatorSpec::single(MultiplierKind::RiemannLiouvilleLeft, 0.5, 1.0).unwrap();
        let radial = gauss_laguerre_rule(16, 1.5).unwrap();
        let angular = angular_grid(16).unwrap();
        let err = kernel_block_2d(FU, &[[0.0, 0.0]], &op, &sd, &radial, &angular).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn sum_kernels_are_refused() {
        let sd = SpectralDensity::new(
            crate::spectral::KernelFamily::Matern,
            1.0,
            vec![1.0, 1.0],
            vec![2.5, 2.5],
            Combine::Sum,
        )
        .unwrap();
        let err = kernel_block(UU, &[[0.0, 0.0]], &right_half(), &sd, &QuadratureConfig::default(), &RuleCache::new(), &[]);
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn evolution_blocks_need_a_time_step() {
        let rule = gauss_laguerre_rule(16, 0.0).unwrap();
        let err = kernel_block_1d(NN, &[0.0], &right_half(), &matern(2.5, 1.0), &rule).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }

    fn sites_1d(xs: &[f64]) -> Vec<[f64; 2]> {
        xs.iter().map(|&x| [x, 0.0]).collect()
    }

    #[test]
    fn joint_covariance_is_symmetric_and_shift_invariant() {
        let op = OperatorSpec::terms(vec![MultiplierTerm::new(MultiplierKind::FractionalLaplacian, 1.3, 1.1)]).unwrap();
        let sd = matern(5.5, 1.0);
        let quad = QuadratureConfig::default();
        let cache = RuleCache::new();
        // Dyadic sites and shift keep every difference exact.
        let a: Vec<f64> = (0..7).map(|k| -1.75 + 0.5 * k as f64 + 0.0625 * (k % 3) as f64).collect();
        let b: Vec<f64> = (0..11).map(|k| -2.0 + 0.375 * k as f64).collect();
        let params = [BlockParam::Spectral(HyperParamTag::Theta(0))];
        let base = joint_covariance(&sites_1d(&a), &sites_1d(&b), JointKinds::TIME_INDEPENDENT, &op, &sd, &quad, &cache, &params).unwrap();
        let n = base.matrix.n;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(base.matrix.get(i, j), base.matrix.get(j, i));
            }
        }
        let shift = |v: &[f64]| v.iter().map(|x| x + 3.0).collect::<Vec<f64>>();
        let moved = joint_covariance(&sites_1d(&shift(&a)), &sites_1d(&shift(&b)), JointKinds::TIME_INDEPENDENT, &op, &sd, &quad, &cache, &params).unwrap();
        assert_eq!(base, moved);
    }
}
