//! Negative log marginal likelihood of the joint Gaussian process and its
//! gradient, plus posterior prediction.
//!
//! The data vector stacks the first group (u, or the snapshot uⁿ) on top of
//! the second (f, or uⁿ⁻¹). With K the joint covariance plus noise,
//!
//!   NLML = ½ yᵀK⁻¹y + ½ log|K| + (N/2) log 2π
//!   ∂NLML/∂θ = ½ tr[(K⁻¹ − K⁻¹yyᵀK⁻¹) ∂K/∂θ].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::kernels::{
    joint_covariance, kernel_block, BlockParam, JointKinds, KernelBlockKind, Matrix, QuadratureConfig, RuleCache,
};
use crate::operators::{EquationForm, OperatorParam, OperatorSpec};
use crate::optimize::{TransformEntry, TransformKind, TransformTable};
use crate::spectral::{HyperParamTag, SpectralDensity};

/// Smallest noise standard deviation a trainable noise parameter starts from.
pub const NOISE_FLOOR: f64 = 1e-8;

/// Jitter ladder relative to the mean diagonal: 0, then 1e-10 up to 1e-6.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Framework {
    /// Groups are (u, f) with f = L u.
    TimeIndependent,
    /// Groups are the snapshots (uⁿ, uⁿ⁻¹) of one backward-Euler step.
    Evolution { dt: f64, form: EquationForm },
}

impl Framework {
    pub fn kinds(self) -> JointKinds {
        match self {
            Framework::TimeIndependent => JointKinds::TIME_INDEPENDENT,
            Framework::Evolution { .. } => JointKinds::EVOLUTION,
        }
    }
}

/// What a trainable or fixed parameter controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKey {
    Spectral(HyperParamTag),
    Operator(OperatorParam),
    /// Noise standard deviation on the first group only.
    NoiseA,
    /// Noise standard deviation on the second group only.
    NoiseB,
    /// One noise standard deviation shared by both groups.
    NoiseShared,
}

impl ParamKey {
    fn block_param(self) -> Option<BlockParam> {
        match self {
            ParamKey::Spectral(t) => Some(BlockParam::Spectral(t)),
            ParamKey::Operator(p) => Some(BlockParam::Operator(p)),
            _ => None,
        }
    }
}

/// Which of the two latent functions a prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    A,
    B,
}

#[derive(Debug)]
pub struct GpProblem {
    pub framework: Framework,
    pub sites_a: Vec<[f64; 2]>,
    pub values_a: Vec<f64>,
    pub sites_b: Vec<[f64; 2]>,
    pub values_b: Vec<f64>,
    pub sd: SpectralDensity,
    pub op: OperatorSpec,
    pub transforms: TransformTable<ParamKey>,
    pub quad: QuadratureConfig,
    cache: RuleCache,
}

impl GpProblem {
    /// Builds a problem; in the evolution framework the time step is attached
    /// to `op`. One-dimensional sites use only their first coordinate.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        framework: Framework,
        sites_a: Vec<[f64; 2]>,
        values_a: Vec<f64>,
        sites_b: Vec<[f64; 2]>,
        values_b: Vec<f64>,
        sd: SpectralDensity,
        op: OperatorSpec,
        transforms: TransformTable<ParamKey>,
        quad: QuadratureConfig,
    ) -> Result<Self> {
        if sites_a.len() != values_a.len() || sites_b.len() != values_b.len() {
            return param_err(format!(
                "site/value counts disagree: {}/{} and {}/{}",
                sites_a.len(),
                values_a.len(),
                sites_b.len(),
                values_b.len()
            ));
        }
        if sites_a.is_empty() && sites_b.is_empty() {
            return param_err("a problem needs at least one datum");
        }
        let finite = |s: &[[f64; 2]], v: &[f64]| s.iter().flatten().chain(v).all(|x| x.is_finite());
        if !finite(&sites_a, &values_a) || !finite(&sites_b, &values_b) {
            return param_err("data must be finite");
        }
        op.check_dimension(sd.dim())?;
        let op = match framework {
            Framework::TimeIndependent => OperatorSpec { evolution: None, ..op },
            Framework::Evolution { dt, form } => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return param_err(format!("the evolution framework needs a positive time step, got {dt}"));
                }
                op.with_evolution(dt, form)?
            }
        };
        for e in transforms.entries() {
            let valid = match e.key {
                ParamKey::Spectral(t) => sd.get(t).is_ok(),
                ParamKey::Operator(p) => op.get(p).is_ok(),
                ParamKey::NoiseA | ParamKey::NoiseB => framework == Framework::TimeIndependent,
                ParamKey::NoiseShared => true,
            };
            if !valid {
                return param_err(format!("parameter '{}' does not apply to this problem", e.name));
            }
        }
        Ok(GpProblem {
            framework,
            sites_a,
            values_a,
            sites_b,
            values_b,
            sd,
            op,
            transforms,
            quad,
            cache: RuleCache::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values_a.len() + self.values_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn stacked_values(&self) -> Vec<f64> {
        self.values_a.iter().chain(&self.values_b).copied().collect()
    }

    /// Kernel, operator and noise standard deviations (first, second group)
    /// at a full constrained parameter vector.
    pub fn configure(&self, theta: &[f64]) -> Result<(SpectralDensity, OperatorSpec, [f64; 2])> {
        let entries = self.transforms.entries();
        if theta.len() != entries.len() {
            return param_err(format!("expected {} parameter values, got {}", entries.len(), theta.len()));
        }
        let mut sd = self.sd.clone();
        let mut op = self.op.clone();
        let mut noise = [0.0; 2];
        for (e, &v) in entries.iter().zip(theta) {
            match e.key {
                ParamKey::Spectral(t) => sd.set(t, v)?,
                ParamKey::Operator(p) => op.set(p, v)?,
                ParamKey::NoiseA => noise[0] = v,
                ParamKey::NoiseB => noise[1] = v,
                ParamKey::NoiseShared => noise = [v, v],
            }
        }
        Ok((sd, op, noise))
    }

    /// Constrained parameter vector at unconstrained coordinates.
    pub fn constrained(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.transforms.forward(z)
    }
}

/// The training covariance with its parameter derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAssembly {
    pub matrix: Matrix,
    /// ∂K/∂θ for each trainable entry, in table order.
    pub grads: Vec<Matrix>,
    /// Rows `0..first_len` belong to the first group.
    pub first_len: usize,
}

/// K = joint kernel matrix + noise variances on the diagonal, at a full
/// constrained parameter vector. Derivatives are taken with respect to the
/// constrained values of the trainable entries when `with_grads` is set.
pub fn assemble_covariance(problem: &GpProblem, theta: &[f64], with_grads: bool) -> Result<CovarianceAssembly> {
    let (sd, op, noise) = problem.configure(theta)?;
    let trainable: Vec<ParamKey> = problem.transforms.trainable().map(|e| e.key).collect();
    let block_params: Vec<BlockParam> =
        if with_grads { trainable.iter().filter_map(|k| k.block_param()).collect() } else { Vec::new() };
    let joint = joint_covariance(
        &problem.sites_a,
        &problem.sites_b,
        problem.framework.kinds(),
        &op,
        &sd,
        &problem.quad,
        &problem.cache,
        &block_params,
    )?;
    let na = joint.first_len;
    let n = joint.matrix.n;
    let mut matrix = joint.matrix;
    for i in 0..n {
        let s = if i < na { noise[0] } else { noise[1] };
        matrix.data[i * n + i] += s * s;
    }
    let mut grads = Vec::new();
    if with_grads {
        let mut block_grads = joint.grads.into_iter();
        for key in trainable {
            let g = match key {
                ParamKey::Spectral(_) | ParamKey::Operator(_) => block_grads.next().expect("one matrix per block param"),
                noise_key => {
                    let mut m = Matrix::zeros(n);
                    for i in 0..n {
                        let (applies, s) = match (noise_key, i < na) {
                            (ParamKey::NoiseA, true) => (true, noise[0]),
                            (ParamKey::NoiseB, false) => (true, noise[1]),
                            (ParamKey::NoiseShared, first) => (true, if first { noise[0] } else { noise[1] }),
                            _ => (false, 0.0),
                        };
                        if applies {
                            m.set(i, i, 2.0 * s);
                        }
                    }
                    m
                }
            };
            grads.push(g);
        }
    }
    Ok(CovarianceAssembly { matrix, grads, first_len: na })
}

/// Lower-triangular factor of K + jitter·I.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: Matrix,
    pub jitter_applied: f64,
    pub log_det: f64,
}

/// Factorizes without jitter; on failure returns the 1-based leading minor
/// that is not positive.
fn cholesky_plain(k: &Matrix, jitter: f64) -> std::result::Result<Matrix, usize> {
    let n = k.n;
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = k.get(j, j) + jitter;
        for p in 0..j {
            let v = l.get(j, p);
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j + 1);
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = k.get(i, j);
            let (ri, rj) = (&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            for p in 0..j {
                s -= ri[p] * rj[p];
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// Cholesky factorization with jitter escalation: 0, then 1e-10·d̄ growing
/// tenfold to 1e-6·d̄, where d̄ is the mean diagonal.
pub fn cholesky_with_jitter(k: &Matrix) -> Result<CholeskyFactor> {
    if k.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("covariance matrix has non-finite entries".into()));
    }
    let dbar = k.diagonal_mean().abs();
    let mut jitter = 0.0;
    let mut rel = JITTER_START;
    loop {
        match cholesky_plain(k, jitter) {
            Ok(lower) => {
                let log_det = 2.0 * (0..k.n).map(|i| lower.get(i, i).ln()).sum::<f64>();
                return Ok(CholeskyFactor { lower, jitter_applied: jitter, log_det });
            }
            Err(minor) => {
                if rel > JITTER_MAX * (1.0 + 1e-9) || dbar == 0.0 {
                    return Err(Error::Factorization { minor, jitter });
                }
                jitter = rel * dbar;
                rel *= 10.0;
            }
        }
    }
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.lower.n
    }

    /// Solves L z = b in place.
    fn forward(&self, b: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let row = &self.lower.data[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.lower.get(i, i);
        }
    }

    /// Solves Lᵀ z = b in place.
    fn backward(&self, b: &mut [f64]) {
        let n = self.n();
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.lower.get(j, i) * b[j];
            }
            b[i] = s / self.lower.get(i, i);
        }
    }

    /// K⁻¹ b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// ‖L⁻¹ b‖², i.e. bᵀK⁻¹b.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        let mut x = b.to_vec();
        self.forward(&mut x);
        x.iter().map(|v| v * v).sum()
    }

    /// K⁻¹ as a dense symmetric matrix.
    pub fn inverse(&self) -> Matrix {
        let n = self.n();
        // L⁻¹ column by column, then K⁻¹ = L⁻ᵀL⁻¹.
        let mut linv = Matrix::zeros(n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            self.forward(&mut e);
            for r in 0..n {
                linv.set(r, c, e[r]);
            }
        }
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (j..n).map(|k| linv.get(k, i) * linv.get(k, j)).sum();
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// +∞ when the parameters were rejected, the covariance overflowed, or it
    /// could not be factorized.
    pub nlml: f64,
    /// Gradient with respect to the unconstrained coordinates.
    pub grad: Option<Vec<f64>>,
    pub jitter: f64,
    pub failure: Option<Error>,
}

impl Evaluation {
    fn failed(err: Error, nz: usize, with_grad: bool) -> Self {
        Evaluation {
            nlml: f64::INFINITY,
            grad: with_grad.then(|| vec![0.0; nz]),
            jitter: f64::NAN,
            failure: Some(err),
        }
    }
}

/// NLML (and optionally its gradient) at unconstrained coordinates `z`.
pub fn evaluate(problem: &GpProblem, z: &[f64], with_grad: bool) -> Result<Evaluation> {
    if z.iter().any(|v| !v.is_finite()) {
        return param_err("unconstrained parameters must be finite");
    }
    let theta = problem.constrained(z)?;
    let assembly = match assemble_covariance(problem, &theta, with_grad) {
        Ok(a) => a,
        Err(e @ (Error::Parameter(_) | Error::Numeric(_))) => return Ok(Evaluation::failed(e, z.len(), with_grad)),
        Err(e) => return Err(e),
    };
    let chol = match cholesky_with_jitter(&assembly.matrix) {
        Ok(c) => c,
        Err(e @ (Error::Factorization { .. } | Error::Numeric(_))) => {
            return Ok(Evaluation::failed(e, z.len(), with_grad))
        }
        Err(e) => return Err(e),
    };
    let y = problem.stacked_values();
    let n = y.len();
    let alpha = chol.solve(&y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let nlml = 0.5 * fit + 0.5 * chol.log_det + 0.5 * n as f64 * (2.0 * PI).ln();

    let grad = if with_grad {
        let w = chol.inverse();
        let dtheta = problem.transforms.derivatives(z)?;
        let g = assembly
            .grads
            .iter()
            .zip(&dtheta)
            .map(|(dk, d)| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += (w.get(i, j) - alpha[i] * alpha[j]) * dk.get(i, j);
                    }
                }
                0.5 * acc * d
            })
            .collect();
        Some(g)
    } else {
        None
    };
    Ok(Evaluation { nlml, grad, jitter: chol.jitter_applied, failure: None })
}

pub fn nlml(problem: &GpProblem, z: &[f64]) -> Result<f64> {
    Ok(evaluate(problem, z, false)?.nlml)
}

pub fn nlml_grad(problem: &GpProblem, z: &[f64]) -> Result<Vec<f64>> {
    Ok(evaluate(problem, z, true)?.grad.expect("gradient requested"))
}

/// Posterior mean and standard deviation of one latent function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Conditions the joint process on the data at constrained parameters `theta`
/// and predicts the requested function at `query` sites.
pub fn posterior_predict(problem: &GpProblem, theta: &[f64], query: &[[f64; 2]], target: Target) -> Result<Prediction> {
    let (sd, op, _) = problem.configure(theta)?;
    let assembly = assemble_covariance(problem, theta, false)?;
    let chol = cholesky_with_jitter(&assembly.matrix)?;
    let alpha = chol.solve(&problem.stacked_values());
    let kinds = problem.framework.kinds();
    let (kind_a, kind_b, kind_self) = match target {
        Target::A => (kinds.first, kinds.cross, kinds.first),
        Target::B => (kinds.cross.transpose(), kinds.second, kinds.second),
    };
    let block = |kind: KernelBlockKind, lags: &[[f64; 2]]| -> Result<Vec<f64>> {
        Ok(kernel_block(kind, lags, &op, &sd, &problem.quad, &problem.cache, &[])?.values)
    };
    let prior = block(kind_self, &[[0.0, 0.0]])?[0];
    let nq = query.len();
    let (na, nb) = (problem.sites_a.len(), problem.sites_b.len());
    let cross = |sites: &[[f64; 2]], kind| -> Result<Vec<f64>> {
        let lags: Vec<[f64; 2]> =
            query.iter().flat_map(|q| sites.iter().map(move |s| [q[0] - s[0], q[1] - s[1]])).collect();
        block(kind, &lags)
    };
    let ka = cross(&problem.sites_a, kind_a)?;
    let kb = cross(&problem.sites_b, kind_b)?;

    let mut mean = Vec::with_capacity(nq);
    let mut std = Vec::with_capacity(nq);
    for q in 0..nq {
        let kq: Vec<f64> = ka[q * na..(q + 1) * na].iter().chain(&kb[q * nb..(q + 1) * nb]).copied().collect();
        mean.push(kq.iter().zip(&alpha).map(|(a, b)| a * b).sum());
        let var = prior - chol.quad_form(&kq);
        std.push(var.max(0.0).sqrt());
    }
    Ok(Prediction { mean, std })
}

/// Default transforms: σ, θ, γ and noise as logs; orders, p and ν as
/// sigmoids; coefficients unconstrained. ν and noise are trainable only when
/// requested.
pub fn default_transforms(
    framework: Framework,
    sd: &SpectralDensity,
    op: &OperatorSpec,
    train_nu: bool,
    noise_init: Option<[f64; 2]>,
) -> Result<TransformTable<ParamKey>> {
    let mut entries = Vec::new();
    for tag in sd.tags() {
        let (name, kind, trainable) = match tag {
            HyperParamTag::Sigma => ("sigma".to_string(), TransformKind::Log, true),
            HyperParamTag::Theta(i) => (indexed("theta", i, sd.dim()), TransformKind::Log, true),
            HyperParamTag::Nu(i) => (indexed("nu", i, sd.dim()), TransformKind::Sigmoid { lo: 0.26, hi: 30.0 }, train_nu),
        };
        entries.push(TransformEntry { name, key: ParamKey::Spectral(tag), kind, initial: sd.get(tag)?, trainable });
    }
    let nterms = op.params().len() / 2;
    for p in op.params() {
        let (name, kind) = match p {
            OperatorParam::Coeff(j) => (indexed("C", j, nterms), TransformKind::Identity),
            OperatorParam::Order(j) => (indexed("alpha", j, nterms), TransformKind::Sigmoid { lo: 0.0, hi: 2.0 }),
            OperatorParam::StableAlpha => ("alpha".to_string(), TransformKind::Sigmoid { lo: 0.0, hi: 2.0 }),
            OperatorParam::StableP => ("p".to_string(), TransformKind::Sigmoid { lo: 0.0, hi: 1.0 }),
            OperatorParam::StableGamma => ("gamma".to_string(), TransformKind::Log),
        };
        entries.push(TransformEntry { name, key: ParamKey::Operator(p), kind, initial: op.get(p)?, trainable: true });
    }
    let noise_entry = |name: &str, key, init: Option<f64>| TransformEntry {
        name: name.to_string(),
        key,
        kind: TransformKind::Log,
        initial: init.map_or(0.0, |v| v.max(NOISE_FLOOR)),
        trainable: init.is_some(),
    };
    match framework {
        Framework::TimeIndependent => {
            entries.push(noise_entry("noise_a", ParamKey::NoiseA, noise_init.map(|n| n[0])));
            entries.push(noise_entry("noise_b", ParamKey::NoiseB, noise_init.map(|n| n[1])));
        }
        Framework::Evolution { .. } => {
            entries.push(noise_entry("noise", ParamKey::NoiseShared, noise_init.map(|n| n[0])));
        }
    }
    TransformTable::new(entries)
}

fn indexed(base: &str, i: usize, count: usize) -> String {
    if count > 1 {
        format!("{base}{}", i + 1)
    } else {
        base.to_string()
    }
}

/// 1e-2 times the standard deviation of the values, floored at the noise floor.
pub fn noise_initial_guess(values: &[f64]) -> f64 {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (1e-2 * var.sqrt()).max(NOISE_FLOOR)
}
