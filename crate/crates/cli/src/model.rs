//! Turning a configuration and data into a trainable problem, and mapping
//! learned parameters back to the units of the data.

use fracgp::kernels::QuadratureConfig;
use fracgp::likelihood::{default_transforms, noise_initial_guess, Framework, GpProblem, ParamKey, Target};
use fracgp::operators::{
    EquationForm, Generator, MultiplierKind, MultiplierTerm, OperatorParam, OperatorSpec, StableDiffusionSpec,
};
use fracgp::optimize::{TrainResult, TransformKind, TransformTable};
use fracgp::spectral::{HyperParamTag, SpectralDensity};
use serde::{Deserialize, Serialize};

use crate::config::{FormName, KernelConfig, KernelFamilyName, OperatorConfig, RunConfig, TermKind, TransformName};
use crate::error::CliError;

/// Two groups of observations: (u, f) or (uⁿ, uⁿ⁻¹).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedData {
    pub dim: usize,
    pub sites_a: Vec<[f64; 2]>,
    pub values_a: Vec<f64>,
    pub sites_b: Vec<[f64; 2]>,
    pub values_b: Vec<f64>,
}

/// Affine change of coordinates x' = (x − c)/s_x and values v' = v/s_v.
///
/// Values are scaled without centering because a constant offset is not in
/// the kernel of the operators being learned. Both groups share one value
/// scale in the evolution framework, where the snapshots are related by a
/// linear map that a relative rescaling would distort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: [f64; 2],
    pub site_scale: f64,
    pub value_scale: [f64; 2],
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { center: [0.0; 2], site_scale: 1.0, value_scale: [1.0; 2] };

    pub fn fit(data: &GroupedData, shared_values: bool) -> Self {
        let sites: Vec<&[f64; 2]> = data.sites_a.iter().chain(&data.sites_b).collect();
        let n = sites.len() as f64;
        let mut center = [0.0; 2];
        for k in 0..data.dim {
            center[k] = sites.iter().map(|s| s[k]).sum::<f64>() / n;
        }
        let var = sites.iter().map(|s| (0..data.dim).map(|k| (s[k] - center[k]).powi(2)).sum::<f64>()).sum::<f64>()
            / (n * data.dim as f64);
        let rms = |v: &[f64]| {
            let s = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        };
        let value_scale = if shared_values {
            let all: Vec<f64> = data.values_a.iter().chain(&data.values_b).copied().collect();
            [rms(&all); 2]
        } else {
            [rms(&data.values_a), rms(&data.values_b)]
        };
        let site_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Standardization { center, site_scale, value_scale }
    }

    pub fn site(&self, s: &[f64; 2]) -> [f64; 2] {
        [(s[0] - self.center[0]) / self.site_scale, (s[1] - self.center[1]) / self.site_scale]
    }

    pub fn apply(&self, data: &GroupedData) -> GroupedData {
        GroupedData {
            dim: data.dim,
            sites_a: data.sites_a.iter().map(|s| self.site(s)).collect(),
            values_a: data.values_a.iter().map(|v| v / self.value_scale[0]).collect(),
            sites_b: data.sites_b.iter().map(|s| self.site(s)).collect(),
            values_b: data.values_b.iter().map(|v| v / self.value_scale[1]).collect(),
        }
    }

    /// Multiplier taking a parameter from training units to data units.
    /// `orders` gives the current order of each operator term.
    fn factor(&self, key: ParamKey, framework: Framework, orders: &[f64]) -> f64 {
        let [su, sf] = self.value_scale;
        let sx = self.site_scale;
        match key {
            ParamKey::Spectral(HyperParamTag::Sigma) => su,
            ParamKey::Spectral(HyperParamTag::Theta(_)) => sx,
            ParamKey::Spectral(HyperParamTag::Nu(_)) => 1.0,
            ParamKey::Operator(OperatorParam::Coeff(j)) => {
                let a = orders.get(j).copied().unwrap_or(0.0);
                match framework {
                    Framework::TimeIndependent => sf * sx.powf(a) / su,
                    Framework::Evolution { .. } => sx.powf(a),
                }
            }
            ParamKey::Operator(OperatorParam::StableGamma) => sx,
            ParamKey::Operator(_) => 1.0,
            ParamKey::NoiseA | ParamKey::NoiseShared => su,
            ParamKey::NoiseB => sf,
        }
    }
}

/// The spectral density a kernel table describes.
pub fn spectral_density(k: &KernelConfig, dim: usize) -> Result<SpectralDensity, CliError> {
    if k.theta.len() != dim {
        return Err(CliError::Config(format!("kernel.theta needs {dim} entries, got {}", k.theta.len())));
    }
    let sd = match k.family {
        KernelFamilyName::Matern => {
            if k.nu.len() != dim {
                return Err(CliError::Config(format!("kernel.nu needs {dim} entries, got {}", k.nu.len())));
            }
            SpectralDensity::matern(k.sigma, k.theta.clone(), k.nu.clone())?
        }
        KernelFamilyName::SquaredExponential => {
            if !k.nu.is_empty() {
                return Err(CliError::Config("kernel.nu applies to the Matérn family only".into()));
            }
            SpectralDensity::squared_exponential(k.sigma, k.theta.clone())?
        }
    };
    Ok(sd)
}

pub fn operator_spec(o: &OperatorConfig) -> Result<OperatorSpec, CliError> {
    match (&o.stable, o.terms.is_empty()) {
        (Some(s), true) => {
            let spec = StableDiffusionSpec { alpha: s.alpha, p: s.p, gamma: s.gamma };
            Ok(OperatorSpec::new(Generator::Stable(spec), None)?)
        }
        (None, false) => {
            let terms = o
                .terms
                .iter()
                .map(|t| {
                    let kind = match t.kind {
                        TermKind::FractionalLaplacian => MultiplierKind::FractionalLaplacian,
                        TermKind::RlLeft => MultiplierKind::RiemannLiouvilleLeft,
                        TermKind::RlRight => MultiplierKind::RiemannLiouvilleRight,
                    };
                    MultiplierTerm::new(kind, t.alpha, t.coeff)
                })
                .collect();
            Ok(OperatorSpec::terms(terms)?)
        }
        (Some(_), false) => Err(CliError::Config("operator: give either terms or stable, not both".into())),
        (None, true) => Err(CliError::Config("operator: needs terms or a stable generator".into())),
    }
}

pub fn framework(cfg: &RunConfig) -> Result<Framework, CliError> {
    match &cfg.evolution {
        Some(e) => Ok(Framework::Evolution {
            dt: e.dt,
            form: match e.form {
                FormName::Generator => EquationForm::Generator,
                FormName::Operator => EquationForm::Operator,
            },
        }),
        None => Ok(Framework::TimeIndependent),
    }
}

/// A problem in training units together with the map back to data units.
#[derive(Debug)]
pub struct Model {
    pub problem: GpProblem,
    pub standardization: Standardization,
}

/// One learned parameter in training and data units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub name: String,
    pub value: f64,
    pub raw: f64,
    pub trainable: bool,
}

impl Model {
    /// Builds the problem for `data` (in data units) from the config's
    /// kernel, operator, parameter overrides and noise settings. Initial
    /// values in the config are in data units.
    pub fn build(cfg: &RunConfig, framework: Framework, data: &GroupedData, op: OperatorSpec) -> Result<Self, CliError> {
        let shared = matches!(framework, Framework::Evolution { .. });
        let standardization = if cfg.standardize { Standardization::fit(data, shared) } else { Standardization::IDENTITY };
        let scaled = standardization.apply(data);
        let sd = spectral_density(cfg.kernel()?, data.dim)?;
        let kcfg = cfg.kernel()?;

        let noise_init = if cfg.noise.train {
            Some(match &cfg.noise.initial {
                Some(v) if v.len() == 2 => [v[0], v[1]],
                Some(v) if v.len() == 1 => [v[0], v[0]],
                Some(v) => return Err(CliError::Config(format!("noise.initial takes 1 or 2 values, got {}", v.len()))),
                None => {
                    let auto_a = noise_initial_guess(&data.values_a);
                    let auto_b = noise_initial_guess(&data.values_b);
                    if shared {
                        let all: Vec<f64> = data.values_a.iter().chain(&data.values_b).copied().collect();
                        [noise_initial_guess(&all); 2]
                    } else {
                        [auto_a, auto_b]
                    }
                }
            })
        } else {
            None
        };
        let mut table = default_transforms(framework, &sd, &op, kcfg.train_nu, noise_init)?;
        if !cfg.noise.train {
            if let Some(v) = &cfg.noise.initial {
                for e in table.entries().to_vec() {
                    let value = match e.key {
                        ParamKey::NoiseB => v.get(1).or(v.first()).copied(),
                        ParamKey::NoiseA | ParamKey::NoiseShared => v.first().copied(),
                        _ => None,
                    };
                    if let Some(value) = value {
                        table.entry_mut(&e.name).expect("entry from this table").initial = value;
                    }
                }
            }
        }
        apply_overrides(&mut table, cfg)?;

        // Initial values are given in data units; move them to training units.
        let orders = initial_orders(&table);
        for e in table.entries().to_vec() {
            let f = standardization.factor(e.key, framework, &orders);
            table.entry_mut(&e.name).expect("entry from this table").initial = e.initial / f;
        }
        // Validate trainable initials against their transforms once more.
        let table = TransformTable::new(table.entries().to_vec())?;
        let quad: QuadratureConfig = cfg.quadrature.into();
        let problem = GpProblem::new(
            framework,
            scaled.sites_a,
            scaled.values_a,
            scaled.sites_b,
            scaled.values_b,
            sd,
            op,
            table,
            quad,
        )?;
        Ok(Model { problem, standardization })
    }

    pub fn framework(&self) -> Framework {
        self.problem.framework
    }

    /// Every table entry at a full constrained vector, in both unit systems.
    pub fn report(&self, theta: &[f64]) -> Vec<ParamReport> {
        let entries = self.problem.transforms.entries();
        let orders: Vec<f64> = {
            let mut o = Vec::new();
            for (e, &v) in entries.iter().zip(theta) {
                if let ParamKey::Operator(OperatorParam::Order(j)) = e.key {
                    if o.len() <= j {
                        o.resize(j + 1, 0.0);
                    }
                    o[j] = v;
                }
            }
            o
        };
        entries
            .iter()
            .zip(theta)
            .map(|(e, &v)| ParamReport {
                name: e.name.clone(),
                value: v,
                raw: v * self.standardization.factor(e.key, self.framework(), &orders),
                trainable: e.trainable,
            })
            .collect()
    }

    pub fn learned(&self, result: &TrainResult) -> Vec<f64> {
        result.params.iter().map(|(_, v)| *v).collect()
    }

    /// Posterior mean, standard deviation and noise standard deviation of
    /// one group at query sites in data units, all in data units.
    pub fn predict(&self, theta: &[f64], query: &[[f64; 2]], target: Target) -> Result<Vec<[f64; 3]>, CliError> {
        let q: Vec<[f64; 2]> = query.iter().map(|s| self.standardization.site(s)).collect();
        let pred = fracgp::likelihood::posterior_predict(&self.problem, theta, &q, target)?;
        let (_, _, noise) = self.problem.configure(theta)?;
        let g = match target {
            Target::A => 0,
            Target::B => 1,
        };
        let s = self.standardization.value_scale[g];
        Ok(pred.mean.iter().zip(&pred.std).map(|(m, sd)| [m * s, sd * s, noise[g] * s]).collect())
    }
}

fn initial_orders(table: &TransformTable<ParamKey>) -> Vec<f64> {
    let mut o = Vec::new();
    for e in table.entries() {
        if let ParamKey::Operator(OperatorParam::Order(j)) = e.key {
            if o.len() <= j {
                o.resize(j + 1, 0.0);
            }
            o[j] = e.initial;
        }
    }
    o
}

fn apply_overrides(table: &mut TransformTable<ParamKey>, cfg: &RunConfig) -> Result<(), CliError> {
    for (name, ov) in &cfg.parameters {
        let entry = table
            .entry_mut(name)
            .ok_or_else(|| CliError::Config(format!("parameters.{name}: no such parameter in this model")))?;
        if let Some(t) = ov.transform {
            entry.kind = match t {
                TransformName::Identity => TransformKind::Identity,
                TransformName::Log => TransformKind::Log,
                TransformName::Sigmoid => {
                    let (lo, hi) = match (ov.lo, ov.hi) {
                        (Some(lo), Some(hi)) => (lo, hi),
                        _ => return Err(CliError::Config(format!("parameters.{name}: sigmoid needs lo and hi"))),
                    };
                    TransformKind::Sigmoid { lo, hi }
                }
            };
        } else if ov.lo.is_some() || ov.hi.is_some() {
            return Err(CliError::Config(format!("parameters.{name}: lo/hi need transform = \"sigmoid\"")));
        }
        if let Some(t) = ov.trainable {
            entry.trainable = t;
        }
        if let Some(v) = ov.initial {
            entry.initial = v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> GroupedData {
        GroupedData {
            dim: 1,
            sites_a: vec![[1.0, 0.0], [3.0, 0.0]],
            values_a: vec![2.0, -2.0],
            sites_b: vec![[5.0, 0.0]],
            values_b: vec![8.0],
        }
    }

    #[test]
    fn standardization_fit() {
        let s = Standardization::fit(&data(), false);
        assert_eq!(s.center[0], 3.0);
        assert!((s.site_scale - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.value_scale, [2.0, 8.0]);
        let shared = Standardization::fit(&data(), true);
        assert!((shared.value_scale[0] - 24.0f64.sqrt()).abs() < 1e-14);
        let scaled = s.apply(&data());
        assert_eq!(scaled.values_b, vec![1.0]);
        assert_eq!(scaled.sites_a[1], [0.0, 0.0]);
    }

    #[test]
    fn coefficient_back_transform() {
        let s = Standardization { center: [0.0; 2], site_scale: 2.0, value_scale: [3.0, 5.0] };
        let c = ParamKey::Operator(OperatorParam::Coeff(0));
        let f = s.factor(c, Framework::TimeIndependent, &[1.5]);
        assert!((f - 5.0 * 2f64.powf(1.5) / 3.0).abs() < 1e-14);
        let ev = Framework::Evolution { dt: 0.1, form: EquationForm::Generator };
        assert!((s.factor(c, ev, &[1.5]) - 2f64.powf(1.5)).abs() < 1e-14);
        assert_eq!(s.factor(ParamKey::Operator(OperatorParam::StableGamma), ev, &[]), 2.0);
    }
}
