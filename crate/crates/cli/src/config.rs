//! Run configuration: a TOML document validated against a closed schema.
//!
//! Every table rejects unknown keys. Relative data paths are resolved
//! against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fracgp::kernels::QuadratureConfig;
use fracgp::optimize::{LbfgsOptions, TrainOptions};
use fracgp::synth::SineSolution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Discover,
    DiscoverEvolution,
    CalibrateStable,
    BenchQuadrature,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub operator: Option<OperatorConfig>,
    /// Per-parameter overrides keyed by parameter name ("alpha", "C2", "nu", ...).
    #[serde(default)]
    pub parameters: BTreeMap<String, ParameterConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
    #[serde(default)]
    pub stable: Option<StableConfig>,
    #[serde(default)]
    pub bench: Option<BenchConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamilyName {
    Matern,
    SquaredExponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamilyName,
    #[serde(default = "one")]
    pub sigma: f64,
    /// One length scale per dimension.
    pub theta: Vec<f64>,
    /// One smoothness per dimension (Matérn only).
    #[serde(default)]
    pub nu: Vec<f64>,
    #[serde(default)]
    pub train_nu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    FractionalLaplacian,
    RlLeft,
    RlRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub kind: TermKind,
    pub alpha: f64,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableInit {
    pub alpha: f64,
    pub p: f64,
    pub gamma: f64,
}

/// Either a sum of multiplier terms or the stable-diffusion generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    #[serde(default)]
    pub terms: Vec<TermConfig>,
    #[serde(default)]
    pub stable: Option<StableInit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformName {
    Identity,
    Log,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterConfig {
    #[serde(default)]
    pub transform: Option<TransformName>,
    /// Sigmoid bounds.
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub trainable: Option<bool>,
    #[serde(default)]
    pub initial: Option<f64>,
}

/// Observation noise. With `train = true` and no `initial`, each group
/// starts at 1% of its value spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "yes")]
    pub train: bool,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { train: true, initial: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Discover mode: sites and values of u and of f.
    #[serde(default)]
    pub u: Option<PathBuf>,
    #[serde(default)]
    pub f: Option<PathBuf>,
    /// Evolution mode: the later snapshot and the earlier one.
    #[serde(default)]
    pub current: Option<PathBuf>,
    #[serde(default)]
    pub previous: Option<PathBuf>,
    /// Stable calibration: a time series.
    #[serde(default)]
    pub series: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthRecipe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SynthRecipe {
    /// u = e^{−x²} on a Latin-hypercube design, f = C (−Δ)^{α/2} u.
    #[serde(rename = "fracpoisson-1d")]
    FracPoisson1d {
        alpha: f64,
        coeff: f64,
        n_u: usize,
        n_f: usize,
        #[serde(default = "minus_two")]
        lo: f64,
        #[serde(default = "two")]
        hi: f64,
        #[serde(default)]
        noise_u: f64,
        #[serde(default)]
        noise_f: f64,
    },
    #[serde(rename = "fracpoisson-2d")]
    FracPoisson2d {
        alpha: f64,
        coeff: f64,
        n_u: usize,
        n_f: usize,
        #[serde(default = "minus_two")]
        lo: f64,
        #[serde(default = "two")]
        hi: f64,
        #[serde(default)]
        noise_u: f64,
        #[serde(default)]
        noise_f: f64,
    },
    /// Two time slices of a closed-form solution with u(0, x) = sin x.
    EvolutionSine {
        solution: SineSolution,
        t_current: f64,
        t_previous: f64,
        n_current: usize,
        n_previous: usize,
        #[serde(default)]
        lo: f64,
        #[serde(default = "two_pi")]
        hi: f64,
        #[serde(default)]
        noise: f64,
    },
    /// A path of the stable process with generator parameters (α, p, γ).
    StablePath { alpha: f64, p: f64, gamma: f64, dt: f64, steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSection {
    pub nodes_1d: usize,
    pub radial_2d: usize,
    pub angular_2d: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let q = QuadratureConfig::default();
        QuadratureSection { nodes_1d: q.nodes_1d, radial_2d: q.radial_2d, angular_2d: q.angular_2d }
    }
}

impl From<QuadratureSection> for QuadratureConfig {
    fn from(q: QuadratureSection) -> Self {
        QuadratureConfig { nodes_1d: q.nodes_1d, radial_2d: q.radial_2d, angular_2d: q.angular_2d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub restarts: usize,
    pub restart_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        OptimizerConfig {
            memory: t.lbfgs.memory,
            max_iter: t.lbfgs.max_iter,
            grad_tol: t.lbfgs.grad_tol,
            f_tol: t.lbfgs.f_tol,
            restarts: t.restarts,
            restart_scale: t.restart_scale,
        }
    }
}

impl OptimizerConfig {
    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            lbfgs: LbfgsOptions { memory: self.memory, max_iter: self.max_iter, grad_tol: self.grad_tol, f_tol: self.f_tol },
            restarts: self.restarts,
            restart_scale: self.restart_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormName {
    /// u_t = L u.
    Generator,
    /// u_t + L u = 0.
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    #[serde(default = "generator_form")]
    pub form: FormName,
}

/// How the series is rescaled before histogramming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    Factor(f64),
    Named(NamedScale),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedScale {
    /// √(number of increments in the series).
    SqrtLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableConfig {
    /// Time between consecutive series values.
    pub dt: f64,
    /// Lags (n, n + 1) of the earlier and later snapshot.
    #[serde(default = "default_lags")]
    pub lags: [usize; 2],
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Histogram range in rescaled units; defaults to the symmetric central 99%.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
    #[serde(default)]
    pub scale: Option<ScaleSpec>,
    /// Train even when a histogram has fewer than ten increments per bin.
    #[serde(default)]
    pub allow_sparse: bool,
    #[serde(default)]
    pub backtest: Option<BacktestConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    pub steps: usize,
    /// Per-step truncation in raw units; by default the histogram half-width
    /// carried back to one step with the learned order.
    #[serde(default)]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_nodes")]
    pub nodes: Vec<usize>,
    #[serde(default = "default_theta2")]
    pub theta2: Vec<f64>,
    /// Operator order for the one- and two-dimensional tables.
    #[serde(default = "half")]
    pub alpha_1d: f64,
    #[serde(default = "half")]
    pub alpha_2d: f64,
    #[serde(default = "default_lag_points_1d")]
    pub lag_points_1d: usize,
    #[serde(default = "default_lag_points_2d")]
    pub lag_points_2d: usize,
    #[serde(default = "default_reference_nodes")]
    pub reference_nodes: usize,
    #[serde(default = "default_angular")]
    pub angular: usize,
    /// Angular points of the reference rule; sharing the tested grid isolates
    /// the radial rule.
    #[serde(default = "default_reference_angular")]
    pub reference_angular: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Posterior grid; defaults to the data range with 101 (1D) or 31×31 (2D) points.
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub skip_posterior: bool,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> f64 {
    2.0
}
fn minus_two() -> f64 {
    -2.0
}
fn two_pi() -> f64 {
    2.0 * std::f64::consts::PI
}
fn yes() -> bool {
    true
}
fn generator_form() -> FormName {
    FormName::Generator
}
fn default_lags() -> [usize; 2] {
    [3, 4]
}
fn default_bins() -> usize {
    40
}
fn default_paths() -> usize {
    100
}
fn default_dims() -> Vec<usize> {
    vec![1, 2]
}
fn default_nodes() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_theta2() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn default_lag_points_1d() -> usize {
    201
}
fn default_lag_points_2d() -> usize {
    21
}
fn default_reference_nodes() -> usize {
    512
}
fn default_angular() -> usize {
    64
}
fn default_reference_angular() -> usize {
    64
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub quad_1d: Option<usize>,
    pub quad_2d: Option<(usize, usize)>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative data paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(data) = cfg.data.as_mut() {
            for p in [&mut data.u, &mut data.f, &mut data.current, &mut data.previous, &mut data.series].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.quad_1d {
            self.quadrature.nodes_1d = n;
        }
        if let Some((r, a)) = o.quad_2d {
            self.quadrature.radial_2d = r;
            self.quadrature.angular_2d = a;
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn kernel(&self) -> Result<&KernelConfig, CliError> {
        self.kernel.as_ref().ok_or_else(|| CliError::Config("missing [kernel] table".into()))
    }

    pub fn operator(&self) -> Result<&OperatorConfig, CliError> {
        self.operator.as_ref().ok_or_else(|| CliError::Config("missing [operator] table".into()))
    }

    pub fn data(&self) -> Result<&DataConfig, CliError> {
        self.data.as_ref().ok_or_else(|| CliError::Config("missing [data] table".into()))
    }
}

/// Parses "NxM" for the two-dimensional quadrature size.
pub fn parse_quad_2d(s: &str) -> Result<(usize, usize), String> {
    let (r, a) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NxM, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((parse(r)?, parse(a)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("mode = \"synth\"\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        let err = RunConfig::parse("mode = \"synth\"\n[optimizer]\nmax_iters = 3\n").unwrap_err();
        assert!(err.to_string().contains("max_iters"), "{err}");
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse("mode = \"bench-quadrature\"\n").unwrap();
        assert_eq!(cfg.mode, Mode::BenchQuadrature);
        assert_eq!(cfg.quadrature.nodes_1d, 64);
        assert_eq!(cfg.optimizer.max_iter, 2000);
        assert_eq!(BenchConfig::default().nodes, vec![8, 16, 32, 64]);
    }

    #[test]
    fn synth_recipes_parse() {
        let cfg = RunConfig::parse(
            "mode = \"synth\"\n[data.synth]\nrecipe = \"fracpoisson-1d\"\nalpha = 1.4\ncoeff = 1.25\nn_u = 7\nn_f = 11\n",
        )
        .unwrap();
        assert!(matches!(cfg.data.unwrap().synth, Some(SynthRecipe::FracPoisson1d { lo, .. }) if lo == -2.0));
        let cfg = RunConfig::parse(
            "mode = \"synth\"\n[data.synth]\nrecipe = \"evolution-sine\"\nsolution = \"advection\"\nt_current = 0.3\nt_previous = 0.2\nn_current = 3\nn_previous = 3\n",
        )
        .unwrap();
        assert!(matches!(cfg.data.unwrap().synth, Some(SynthRecipe::EvolutionSine { .. })));
    }

    #[test]
    fn scale_accepts_number_or_name() {
        let base = "mode = \"calibrate-stable\"\n[stable]\ndt = 1.0\n";
        let cfg = RunConfig::parse(&format!("{base}scale = 2.5\n")).unwrap();
        assert_eq!(cfg.stable.unwrap().scale, Some(ScaleSpec::Factor(2.5)));
        let cfg = RunConfig::parse(&format!("{base}scale = \"sqrt-length\"\n")).unwrap();
        assert_eq!(cfg.stable.unwrap().scale, Some(ScaleSpec::Named(NamedScale::SqrtLength)));
    }

    #[test]
    fn digest_tracks_content_and_overrides() {
        let mut a = RunConfig::parse("mode = \"bench-quadrature\"\n").unwrap();
        let b = a.clone();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        a.apply(&Overrides { seed: Some(9), ..Default::default() });
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn quad_2d_flag() {
        assert_eq!(parse_quad_2d("32x48"), Ok((32, 48)));
        assert!(parse_quad_2d("32").is_err());
    }
}
