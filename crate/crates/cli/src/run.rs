//! Executes a configuration and writes its outputs.
//!
//! Every run writes `manifest.json` (effective config, digest, seed and
//! versions) and `report.json`, plus mode-specific CSV files.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use fracgp::likelihood::{Framework, Target};
use fracgp::operators::{EquationForm, Generator};
use fracgp::optimize::{train, TrainResult};
use fracgp::operators::OperatorSpec;
use fracgp::stable::{
    backtest_paths, default_range, empirical_density, increments, rescale_series, EmpiricalDensity, StableParams,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{rows_to_csv, run_bench, BenchRow};
use crate::config::{BenchConfig, Mode, NamedScale, RunConfig, ScaleSpec};
use crate::error::CliError;
use crate::io::{read_series, read_sites, write_sites, write_table};
use crate::model::{framework, operator_spec, GroupedData, Model, ParamReport, Standardization};
use crate::recipes::{synthesize, Synthesized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub name: Option<String>,
    pub config_digest: String,
    pub seed: u64,
    pub train: Option<TrainResult>,
    /// Every model parameter in training units and in data units.
    pub parameters: Vec<ParamReport>,
    /// Quantities computed from the learned parameters.
    pub derived: BTreeMap<String, f64>,
    pub standardization: Option<Standardization>,
    pub bench: Option<Vec<BenchRow>>,
    pub warnings: Vec<String>,
    /// SHA-256 of each output file, keyed by file name.
    pub files: BTreeMap<String, String>,
    pub evaluations: usize,
    pub wall_time_s: f64,
}

impl RunReport {
    fn new(cfg: &RunConfig, digest: &str) -> Self {
        RunReport {
            mode: cfg.mode,
            name: cfg.name.clone(),
            config_digest: digest.to_string(),
            seed: cfg.seed,
            train: None,
            parameters: Vec::new(),
            derived: BTreeMap::new(),
            standardization: None,
            bench: None,
            warnings: Vec::new(),
            files: BTreeMap::new(),
            evaluations: 0,
            wall_time_s: 0.0,
        }
    }

    /// Data-unit value of a parameter.
    pub fn raw(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.raw)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    mode: Mode,
    seed: u64,
    config_digest: &'a str,
    threads: usize,
    config: &'a RunConfig,
}

struct Outputs<'a> {
    dir: &'a Path,
    digest: &'a str,
    files: BTreeMap<String, String>,
}

impl Outputs<'_> {
    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let bytes = std::fs::read(self.dir.join(name))?;
        self.files.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        write_table(&self.dir.join(name), self.digest, header, rows)?;
        self.record(name)
    }

    fn sites(&mut self, name: &str, dim: usize, sites: &[[f64; 2]], values: &[f64]) -> Result<(), CliError> {
        write_sites(&self.dir.join(name), self.digest, dim, sites, values)?;
        self.record(name)
    }
}

/// Runs `cfg`, writing every output into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let digest = cfg.digest();
    let manifest = Manifest {
        tool: "fracgp",
        version: env!("CARGO_PKG_VERSION"),
        mode: cfg.mode,
        seed: cfg.seed,
        config_digest: &digest,
        threads: rayon::current_num_threads(),
        config: cfg,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;

    let mut report = RunReport::new(cfg, &digest);
    let mut outputs = Outputs { dir: out, digest: &digest, files: BTreeMap::new() };
    match cfg.mode {
        Mode::Discover => run_discover(cfg, &mut report, &mut outputs)?,
        Mode::DiscoverEvolution => run_discover_evolution(cfg, &mut report, &mut outputs)?,
        Mode::CalibrateStable => run_calibrate_stable(cfg, &mut report, &mut outputs)?,
        Mode::BenchQuadrature => run_bench_quadrature(cfg, &mut report, &mut outputs)?,
        Mode::Synth => run_synth(cfg, &mut report, &mut outputs)?,
    }
    report.files = outputs.files;
    report.wall_time_s = start.elapsed().as_secs_f64();
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(report)
}

fn dim_of(cfg: &RunConfig) -> Result<usize, CliError> {
    let d = cfg.kernel()?.theta.len();
    if (1..=2).contains(&d) {
        Ok(d)
    } else {
        Err(CliError::Config(format!("kernel.theta must have 1 or 2 entries, got {d}")))
    }
}

/// The two site groups of a discover run, from a recipe or from CSV files.
fn load_groups(cfg: &RunConfig, dim: usize, names: [&str; 2]) -> Result<GroupedData, CliError> {
    let data = cfg.data()?;
    if let Some(recipe) = &data.synth {
        return match synthesize(recipe, cfg.seed)? {
            Synthesized::Groups(g) if g.dim == dim => Ok(g),
            Synthesized::Groups(g) => {
                Err(CliError::Config(format!("recipe produces {}-dimensional data but the kernel is {dim}-dimensional", g.dim)))
            }
            Synthesized::Series { .. } => Err(CliError::Config("this mode needs site data, not a time series".into())),
        };
    }
    let (pa, pb) = match cfg.mode {
        Mode::Discover => (&data.u, &data.f),
        _ => (&data.current, &data.previous),
    };
    let (pa, pb) = match (pa, pb) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Config(format!("data needs '{}' and '{}' files or a synth recipe", names[0], names[1]))),
    };
    let a = read_sites(pa, dim)?;
    let b = read_sites(pb, dim)?;
    Ok(GroupedData { dim, sites_a: a.sites, values_a: a.values, sites_b: b.sites, values_b: b.values })
}

fn train_model(cfg: &RunConfig, model: &Model, report: &mut RunReport) -> Result<Vec<f64>, CliError> {
    let opts = cfg.optimizer.train_options(cfg.seed);
    let mut result = train(&model.problem, &opts)?;
    result.config_digest = Some(report.config_digest.clone());
    let theta = model.learned(&result);
    report.parameters = model.report(&theta);
    report.evaluations = result.evaluations;
    report.standardization = cfg.standardize.then_some(model.standardization);
    if result.jitter.failed_evaluations > 0 {
        report
            .warnings
            .push(format!("{} likelihood evaluations were rejected as non-finite", result.jitter.failed_evaluations));
    }
    report.train = Some(result);
    Ok(theta)
}

/// Query sites spanning the data (or the configured range).
fn posterior_grid(cfg: &RunConfig, data: &GroupedData) -> Vec<[f64; 2]> {
    let (lo, hi, n) = match &cfg.output.grid {
        Some(g) => (g.lo, g.hi, g.points),
        None => {
            let coords = data.sites_a.iter().chain(&data.sites_b).flat_map(|s| s[..data.dim].to_vec());
            let (lo, hi) = coords.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            (lo, hi, if data.dim == 1 { 101 } else { 31 })
        }
    };
    let axis: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64).collect();
    if data.dim == 1 {
        axis.iter().map(|&x| [x, 0.0]).collect()
    } else {
        axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect()
    }
}

/// Posterior CSVs: sites, mean, std and the band mean ± 2√(std² + noise²).
fn write_posteriors(
    cfg: &RunConfig,
    model: &Model,
    theta: &[f64],
    data: &GroupedData,
    names: [&str; 2],
    outputs: &mut Outputs,
) -> Result<(), CliError> {
    if cfg.output.skip_posterior {
        return Ok(());
    }
    let query = posterior_grid(cfg, data);
    for (target, name) in [(Target::A, names[0]), (Target::B, names[1])] {
        let pred = model.predict(theta, &query, target)?;
        let rows: Vec<Vec<f64>> = query
            .iter()
            .zip(&pred)
            .map(|(q, &[m, s, n])| {
                let band = 2.0 * (s * s + n * n).sqrt();
                let mut row = q[..data.dim].to_vec();
                row.extend([m, s, m - band, m + band]);
                row
            })
            .collect();
        let header: &[&str] = if data.dim == 1 {
            &["x", "mean", "std", "band_lo", "band_hi"]
        } else {
            &["x1", "x2", "mean", "std", "band_lo", "band_hi"]
        };
        outputs.table(&format!("posterior_{name}.csv"), header, &rows)?;
    }
    Ok(())
}

fn run_discover(cfg: &RunConfig, report: &mut RunReport, outputs: &mut Outputs) -> Result<(), CliError> {
    if cfg.evolution.is_some() {
        return Err(CliError::Config("discover mode takes no [evolution] table".into()));
    }
    let dim = dim_of(cfg)?;
    let data = load_groups(cfg, dim, ["u", "f"])?;
    outputs.sites("data_u.csv", dim, &data.sites_a, &data.values_a)?;
    outputs.sites("data_f.csv", dim, &data.sites_b, &data.values_b)?;
    let op = operator_spec(cfg.operator()?)?;
    let model = Model::build(cfg, Framework::TimeIndependent, &data, op)?;
    let theta = train_model(cfg, &model, report)?;
    write_posteriors(cfg, &model, &theta, &data, ["u", "f"], outputs)
}

fn run_discover_evolution(cfg: &RunConfig, report: &mut RunReport, outputs: &mut Outputs) -> Result<(), CliError> {
    let fw = framework(cfg)?;
    if fw == Framework::TimeIndependent {
        return Err(CliError::Config("discover-evolution needs an [evolution] table with dt".into()));
    }
    let dim = dim_of(cfg)?;
    let data = load_groups(cfg, dim, ["current", "previous"])?;
    outputs.sites("data_current.csv", dim, &data.sites_a, &data.values_a)?;
    outputs.sites("data_previous.csv", dim, &data.sites_b, &data.values_b)?;
    let op = operator_spec(cfg.operator()?)?;
    let model = Model::build(cfg, fw, &data, op)?;
    let theta = train_model(cfg, &model, report)?;
    write_posteriors(cfg, &model, &theta, &data, ["current", "previous"], outputs)
}

/// The calibration inputs: the raw series, its rescaling and the two histograms.
struct StableInputs {
    raw: Vec<f64>,
    factor: f64,
    rescaling: fracgp::stable::Rescaling,
    range: (f64, f64),
    earlier: EmpiricalDensity,
    later: EmpiricalDensity,
    op: OperatorSpec,
    lags: [usize; 2],
    dt: f64,
}

impl StableInputs {
    fn groups(&self) -> GroupedData {
        GroupedData {
            dim: 1,
            sites_a: self.later.centers.iter().map(|&c| [c, 0.0]).collect(),
            values_a: self.later.density.clone(),
            sites_b: self.earlier.centers.iter().map(|&c| [c, 0.0]).collect(),
            values_b: self.earlier.density.clone(),
        }
    }

    fn framework(&self) -> Framework {
        Framework::Evolution { dt: (self.lags[1] - self.lags[0]) as f64 * self.dt, form: EquationForm::Generator }
    }
}

fn stable_inputs(cfg: &RunConfig) -> Result<StableInputs, CliError> {
    let sc = cfg.stable.as_ref().ok_or_else(|| CliError::Config("calibrate-stable needs a [stable] table".into()))?;
    if cfg.evolution.is_some() {
        return Err(CliError::Config("calibrate-stable derives its time step from stable.dt and stable.lags".into()));
    }
    if !(sc.dt > 0.0 && sc.dt.is_finite()) {
        return Err(CliError::Config(format!("stable.dt must be positive, got {}", sc.dt)));
    }
    let [l1, l2] = sc.lags;
    if l1 == 0 || l2 <= l1 {
        return Err(CliError::Config(format!("stable.lags must satisfy 0 < n1 < n2, got {:?}", sc.lags)));
    }
    let op = operator_spec(cfg.operator()?)?;
    if !matches!(op.generator, Generator::Stable(_)) {
        return Err(CliError::Config("calibrate-stable needs operator.stable".into()));
    }

    // The series in data units.
    let data = cfg.data()?;
    let raw: Vec<f64> = match (&data.synth, &data.series) {
        (Some(recipe), None) => match synthesize(recipe, cfg.seed)? {
            Synthesized::Series { dt, values } => {
                if (dt - sc.dt).abs() > 1e-12 * sc.dt {
                    return Err(CliError::Config(format!("recipe dt {dt} differs from stable.dt {}", sc.dt)));
                }
                values
            }
            Synthesized::Groups(_) => return Err(CliError::Config("calibrate-stable needs a stable-path recipe".into())),
        },
        (None, Some(path)) => {
            let s = read_series(path)?;
            if let Some(t) = &s.times {
                for w in t.windows(2) {
                    if ((w[1] - w[0]) - sc.dt).abs() > 1e-9 * sc.dt.max(1.0) {
                        return Err(CliError::Data(format!(
                            "series times step by {} but stable.dt is {}",
                            w[1] - w[0],
                            sc.dt
                        )));
                    }
                }
            }
            s.values
        }
        _ => return Err(CliError::Config("data needs exactly one of 'series' or a stable-path recipe".into())),
    };
    let factor = match sc.scale {
        None => 1.0,
        Some(ScaleSpec::Factor(f)) => f,
        Some(ScaleSpec::Named(NamedScale::SqrtLength)) => ((raw.len().max(2) - 1) as f64).sqrt(),
    };
    let (scaled, rescaling) = rescale_series(&raw, factor)?;
    if raw.len() <= l2 {
        return Err(CliError::Data(format!("series of {} values has no lag-{l2} increments", raw.len())));
    }
    let range = match sc.range {
        Some([lo, hi]) => (lo, hi),
        None => default_range(&increments(&scaled, l2))?,
    };
    let earlier = empirical_density(&scaled, l1, sc.dt, sc.bins, range)?;
    let later = empirical_density(&scaled, l2, sc.dt, sc.bins, range)?;
    Ok(StableInputs { raw, factor, rescaling, range, earlier, later, op, lags: sc.lags, dt: sc.dt })
}

/// The untrained model a training mode would fit, with parameters at the
/// configured initial values. Bench and synth configs have no model.
pub fn build_model(cfg: &RunConfig) -> Result<Model, CliError> {
    match cfg.mode {
        Mode::Discover => {
            let data = load_groups(cfg, dim_of(cfg)?, ["u", "f"])?;
            Model::build(cfg, Framework::TimeIndependent, &data, operator_spec(cfg.operator()?)?)
        }
        Mode::DiscoverEvolution => {
            let data = load_groups(cfg, dim_of(cfg)?, ["current", "previous"])?;
            Model::build(cfg, framework(cfg)?, &data, operator_spec(cfg.operator()?)?)
        }
        Mode::CalibrateStable => {
            let inputs = stable_inputs(cfg)?;
            Model::build(cfg, inputs.framework(), &inputs.groups(), inputs.op.clone())
        }
        Mode::BenchQuadrature | Mode::Synth => {
            Err(CliError::Config(format!("mode {:?} does not train a model", cfg.mode)))
        }
    }
}

fn run_calibrate_stable(cfg: &RunConfig, report: &mut RunReport, outputs: &mut Outputs) -> Result<(), CliError> {
    let sc = cfg.stable.as_ref().ok_or_else(|| CliError::Config("calibrate-stable needs a [stable] table".into()))?;
    let inputs = stable_inputs(cfg)?;
    let StableInputs { raw, factor, rescaling, range, earlier, later, .. } = &inputs;
    let (factor, range) = (*factor, *range);
    let l2 = sc.lags[1];
    let times: Vec<f64> = (0..raw.len()).map(|i| i as f64 * sc.dt).collect();
    outputs.table("series.csv", &["t", "value"], &times.iter().zip(raw).map(|(t, v)| vec![*t, *v]).collect::<Vec<_>>())?;
    for e in [earlier, later] {
        if e.sparse {
            let msg = format!(
                "lag-{} histogram keeps {} increments for {} bins (fewer than 10 per bin)",
                e.lag, e.sample_count, sc.bins
            );
            if !sc.allow_sparse {
                return Err(CliError::Data(format!("{msg}; set stable.allow_sparse = true to train anyway")));
            }
            report.warnings.push(msg);
        }
        if e.dropped > 0 {
            report.derived.insert(format!("dropped_lag{}", e.lag), e.dropped as f64);
        }
        outputs.table(
            &format!("histogram_lag{}.csv", e.lag),
            &["center", "density"],
            &e.centers.iter().zip(&e.density).map(|(c, d)| vec![*c, *d]).collect::<Vec<_>>(),
        )?;
    }

    let groups = inputs.groups();
    let model = Model::build(cfg, inputs.framework(), &groups, inputs.op.clone())?;
    let theta = train_model(cfg, &model, report)?;
    let get = |name: &str| report.raw(name).ok_or_else(|| CliError::Numeric(format!("missing parameter {name}")));
    let (alpha, p, gamma_scaled) = (get("alpha")?, get("p")?, get("gamma")?);
    let gamma = rescaling.raw_gamma(gamma_scaled);
    report.derived.insert("beta".into(), 2.0 * p - 1.0);
    report.derived.insert("gamma_scaled".into(), gamma_scaled);
    report.derived.insert("gamma_raw".into(), gamma);
    report.derived.insert("scale_factor".into(), factor);
    report.derived.insert("range_lo".into(), range.0);
    report.derived.insert("range_hi".into(), range.1);
    write_posteriors(cfg, &model, &theta, &groups, ["current", "previous"], outputs)?;

    if let Some(bt) = &sc.backtest {
        let half = range.0.abs().max(range.1.abs());
        let bound = bt.bound.unwrap_or(half / (factor * (l2 as f64).powf(1.0 / alpha)));
        report.derived.insert("truncation_bound".into(), bound);
        let law = StableParams::new(alpha, 2.0 * p - 1.0, gamma, 0.0)?;
        let start = *raw.last().expect("non-empty series");
        let paths = backtest_paths(&law, bound, start, bt.steps, bt.paths, cfg.seed.wrapping_add(1))?;
        let rows: Vec<Vec<f64>> = paths
            .iter()
            .enumerate()
            .flat_map(|(j, path)| path.iter().enumerate().map(move |(k, v)| vec![j as f64, k as f64, *v]))
            .collect();
        outputs.table("backtest_paths.csv", &["path", "step", "value"], &rows)?;
    }
    Ok(())
}

fn run_bench_quadrature(cfg: &RunConfig, report: &mut RunReport, outputs: &mut Outputs) -> Result<(), CliError> {
    let bc = cfg.bench.clone().unwrap_or_default();
    let rows = run_bench(&bc)?;
    let path = outputs.dir.join("bench_quadrature.csv");
    std::fs::write(&path, format!("# digest={}\n{}", outputs.digest, rows_to_csv(&rows)))?;
    outputs.record("bench_quadrature.csv")?;
    report.bench = Some(rows);
    Ok(())
}

fn run_synth(cfg: &RunConfig, _report: &mut RunReport, outputs: &mut Outputs) -> Result<(), CliError> {
    let recipe = cfg.data()?.synth.as_ref().ok_or_else(|| CliError::Config("synth mode needs data.synth".into()))?;
    match synthesize(recipe, cfg.seed)? {
        Synthesized::Groups(g) => {
            let names = match recipe {
                crate::config::SynthRecipe::EvolutionSine { .. } => ["current.csv", "previous.csv"],
                _ => ["u.csv", "f.csv"],
            };
            outputs.sites(names[0], g.dim, &g.sites_a, &g.values_a)?;
            outputs.sites(names[1], g.dim, &g.sites_b, &g.values_b)?;
        }
        Synthesized::Series { dt, values } => {
            let rows: Vec<Vec<f64>> = values.iter().enumerate().map(|(i, v)| vec![i as f64 * dt, *v]).collect();
            outputs.table("series.csv", &["t", "value"], &rows)?;
        }
    }
    Ok(())
}

/// The bench table a default configuration produces.
pub fn default_bench() -> Result<Vec<BenchRow>, CliError> {
    run_bench(&BenchConfig::default())
}
