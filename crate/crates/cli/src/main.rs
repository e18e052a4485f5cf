use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fracgp_cli::config::{parse_quad_2d, Mode};
use fracgp_cli::{run, CliError, Overrides, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Discover,
    DiscoverEvolution,
    CalibrateStable,
    BenchQuadrature,
    Synth,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Discover => Mode::Discover,
            ModeArg::DiscoverEvolution => Mode::DiscoverEvolution,
            ModeArg::CalibrateStable => Mode::CalibrateStable,
            ModeArg::BenchQuadrature => Mode::BenchQuadrature,
            ModeArg::Synth => Mode::Synth,
        }
    }
}

/// Learn fractional-order operators from data with physics-informed Gaussian processes.
#[derive(Debug, Parser)]
#[command(name = "fracgp", version)]
struct Args {
    /// Must match the `mode` key of the config file.
    mode: ModeArg,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: ./out/<config file stem>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// One-dimensional Gauss–Laguerre node count.
    #[arg(long = "quad-1d")]
    quad_1d: Option<usize>,
    /// Two-dimensional rule as RADIALxANGULAR, e.g. 64x64.
    #[arg(long = "quad-2d", value_parser = parse_quad_2d)]
    quad_2d: Option<(usize, usize)>,
    /// Worker threads for assembly and restarts.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(args: &Args) -> Result<fracgp_cli::RunReport, CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = RunConfig::load(&args.config)?;
    let requested: Mode = args.mode.into();
    if cfg.mode != requested {
        return Err(CliError::Config(format!(
            "command-line mode {requested:?} does not match config mode {:?}",
            cfg.mode
        )));
    }
    cfg.apply(&Overrides { seed: args.seed, quad_1d: args.quad_1d, quad_2d: args.quad_2d });
    let out = args.out.clone().unwrap_or_else(|| {
        let stem = args.config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        PathBuf::from("out").join(stem)
    });
    run(&cfg, &out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for p in &report.parameters {
                println!("{:>10} = {:<14.8} (data units: {:.8})", p.name, p.value, p.raw);
            }
            for (k, v) in &report.derived {
                println!("{k:>14} = {v:.8}");
            }
            if let Some(t) = &report.train {
                println!("nlml = {:.8}, {} evaluations, termination {:?}", t.nlml, t.evaluations, t.termination);
            }
            println!("wall time {:.2} s, digest {}", report.wall_time_s, report.config_digest);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
