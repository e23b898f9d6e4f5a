//! `cascade` command-line driver.
//!
//! Exit codes: 0 success, 1 error, 2 a protection plan failed verification.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cascade_core::harness::{
    default_gamma_grid, parse_scenario_config, run_scenario, run_sweep, CascadeModel,
    DisturbanceSpec, ScenarioConfig, SchemeChoice, WeightSpec,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascading-failure simulation and load-shedding protection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run(ScenarioArgs),
    /// Run NPS and RPS over a range of generator weights γ.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `lo:hi` over the grid 0.1..1 step 0.1, 2..10 step 1, or a comma list.
        #[arg(long, default_value = "0.1:10")]
        gammas: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    None,
    Nps,
    Rps,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Hard,
    Smooth,
}

/// Every flag overrides the matching field of `--config`.
#[derive(Args)]
struct ScenarioArgs {
    /// JSON scenario config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Case file (`.m` MATPOWER or `.json`).
    #[arg(long)]
    case: Option<PathBuf>,
    /// Comma-separated branch ids to sever.
    #[arg(long, value_delimiter = ',')]
    sever: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Shedding step.
    #[arg(long)]
    m: Option<usize>,
    /// RPS shedding steps `a,b` with b = a + 1.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    rps_steps: Option<Vec<usize>>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Flow threshold applied to every branch, in pu.
    #[arg(long)]
    threshold: Option<f64>,
    /// Generator weight; load weights stay 1.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    cascade_model: Option<ModelArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_scenario_config(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ScenarioConfig::default(),
        };
        if let Some(c) = &self.case {
            cfg.case_path = c.clone();
        }
        if let Some(ids) = &self.sever {
            cfg.disturbance = DisturbanceSpec::Sever(ids.clone());
        }
        if let Some(s) = self.scheme {
            cfg.scheme = match s {
                SchemeArg::None => SchemeChoice::None,
                SchemeArg::Nps => SchemeChoice::Nps,
                SchemeArg::Rps => SchemeChoice::Rps,
            };
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(steps) = &self.rps_steps {
            match steps.as_slice() {
                &[a, b] => cfg.rps_steps = Some((a, b)),
                _ => bail!("--rps-steps takes exactly two step numbers"),
            }
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(dt) = self.dt {
            cfg.solver.dt = dt;
        }
        if let Some(h) = self.horizon {
            cfg.solver.horizon = h;
            cfg.solver.max_time = cfg.solver.max_time.max(h);
        }
        if let Some(c) = self.threshold {
            cfg.thresholds.default = Some(c);
        }
        if let Some(g) = self.gamma {
            cfg.weights = WeightSpec::PerKind {
                load: 1.0,
                generator: g,
            };
        }
        if let Some(m) = self.cascade_model {
            cfg.cascade_model = match m {
                ModelArg::Hard => CascadeModel::Hard,
                ModelArg::Smooth => CascadeModel::Smooth,
            };
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if cfg.case_path.as_os_str().is_empty() {
            bail!("no case file given (use --case or case_path in --config)");
        }
        Ok(cfg)
    }
}

fn parse_gammas(spec: &str) -> Result<Vec<f64>> {
    if let Some((lo, hi)) = spec.split_once(':') {
        let lo: f64 = lo.trim().parse().context("bad γ lower bound")?;
        let hi: f64 = hi.trim().parse().context("bad γ upper bound")?;
        let grid = default_gamma_grid(lo, hi);
        if grid.is_empty() {
            bail!("no grid points in {spec}");
        }
        return Ok(grid);
    }
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad γ value '{s}'")))
        .collect()
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let report = run_scenario(&cfg)?;
            println!("status: {}", serde_json::to_string(&report.status)?.trim_matches('"'));
            if let Some(o) = &report.outcome {
                println!(
                    "objective: {}  fallback_used: {}  terminated_at: {}  connected: {}  total_power: {}",
                    o.objective,
                    o.plan.fallback_used,
                    o.trajectory.terminated_at,
                    o.final_metrics.n_connected,
                    o.final_metrics.total_power
                );
            } else if let Some(m) = &report.unprotected_metrics {
                println!("connected: {}  active: {}  total_power: {}", m.n_connected, m.n_active, m.total_power);
            }
            println!("outputs: {}", cfg.output_dir.display());
            Ok(report.exit_code() as u8)
        }
        Command::Sweep { scenario, gammas } => {
            let cfg = scenario.resolve()?;
            let gammas = parse_gammas(&gammas)?;
            let (rows, path) = run_sweep(&cfg, &gammas)?;
            println!("{} rows written to {}", rows.len(), path.display());
            Ok(if rows.iter().all(|r| r.verified) { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
