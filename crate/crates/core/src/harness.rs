//! Scenario runner, weight sweeps and output files.
//!
//! Every file written here is a pure function of the inputs. Wall-clock
//! data goes to `run.json` only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    metrics, simulate, trajectory_csv, trajectory_summary, Metrics, SmoothingParams,
    DEFAULT_MAX_STEPS,
};
use crate::error::{invalid, Result};
use crate::netmodel::{apply_disturbance, load_case_file, sever_branches, BusKind, PowerNetwork};
use crate::protection::{identify_disturbance, outcome_report, run_nps, run_rps, ProtectionOutcome};
use crate::solver::{SaddleState, Scheme, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    #[default]
    None,
    Nps,
    Rps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceSpec {
    /// Branch ids to open.
    Sever(Vec<usize>),
    /// Explicit δ per branch, in case order.
    Delta(Vec<f64>),
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        DisturbanceSpec::Sever(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSpec {
    Uniform,
    PerKind { load: f64, generator: f64 },
    Explicit(Vec<f64>),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Uniform
    }
}

impl WeightSpec {
    pub fn resolve(&self, network: &PowerNetwork) -> Result<DVector<f64>> {
        let n = network.n_buses();
        match self {
            WeightSpec::Uniform => Ok(DVector::from_element(n, 1.0)),
            WeightSpec::PerKind { load, generator } => Ok(DVector::from_iterator(
                n,
                network.buses().iter().map(|b| match b.kind {
                    BusKind::Load => *load,
                    BusKind::Generator => *generator,
                }),
            )),
            WeightSpec::Explicit(w) if w.len() == n => Ok(DVector::from_column_slice(w)),
            WeightSpec::Explicit(w) => Err(invalid(format!(
                "explicit weights have {} entries, network has {n} buses",
                w.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CascadeModel {
    /// Step-function tripping, used for prediction and re-simulation.
    #[default]
    Hard,
    /// Smooth survival curve with the configured σ.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSpec {
    /// Replaces every branch threshold when set. `None` keeps the case values.
    pub default: Option<f64>,
    /// Branch id → threshold, applied after `default`.
    pub overrides: BTreeMap<usize, f64>,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec {
            default: Some(1.0),
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub case_path: PathBuf,
    pub disturbance: DisturbanceSpec,
    pub scheme: SchemeChoice,
    pub m: usize,
    /// RPS shedding steps; must be consecutive. Defaults to (m−1, m).
    pub rps_steps: Option<(usize, usize)>,
    pub thresholds: ThresholdSpec,
    pub sigma: f64,
    pub cascade_model: CascadeModel,
    pub solver: SolverConfig,
    pub weights: WeightSpec,
    pub output_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            case_path: PathBuf::new(),
            disturbance: DisturbanceSpec::default(),
            scheme: SchemeChoice::None,
            m: 4,
            rps_steps: None,
            thresholds: ThresholdSpec::default(),
            sigma: 1e3,
            cascade_model: CascadeModel::Hard,
            solver: SolverConfig::default(),
            weights: WeightSpec::Uniform,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Parse a scenario config from JSON text.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| crate::Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

impl ScenarioConfig {
    /// Shedding step for the selected scheme, after applying `rps_steps`.
    pub fn shedding_step(&self) -> Result<usize> {
        match self.scheme {
            SchemeChoice::Rps => match self.rps_steps {
                Some((a, b)) if b == a + 1 => Ok(b),
                Some((a, b)) => Err(invalid(format!("rps_steps ({a}, {b}) are not consecutive"))),
                None => Ok(self.m),
            },
            _ => Ok(self.m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma must be positive and finite"));
        }
        let m = self.shedding_step()?;
        match self.scheme {
            SchemeChoice::Nps if m < 2 => Err(invalid("NPS needs m ≥ 2")),
            SchemeChoice::Rps if m < 3 => Err(invalid("RPS needs m ≥ 3")),
            _ => Ok(()),
        }
    }

    pub fn smoothing(&self) -> SmoothingParams {
        let smooth = SmoothingParams::smooth(self.sigma);
        match self.cascade_model {
            CascadeModel::Hard => SmoothingParams {
                hard_threshold: true,
                ..smooth
            },
            CascadeModel::Smooth => smooth,
        }
    }

    /// Load the case and apply threshold and weight settings.
    pub fn load_network(&self) -> Result<PowerNetwork> {
        let base = load_case_file(&self.case_path)?;
        let overrides: Vec<(usize, f64)> = self.thresholds.overrides.iter().map(|(&k, &v)| (k, v)).collect();
        let net = base.with_thresholds(self.thresholds.default, &overrides)?;
        let w = self.weights.resolve(&net)?;
        net.with_weights(&w)
    }

    pub fn delta(&self, network: &PowerNetwork) -> Result<DVector<f64>> {
        match &self.disturbance {
            DisturbanceSpec::Sever(ids) => sever_branches(network, ids),
            DisturbanceSpec::Delta(d) if d.len() == network.n_branches() => Ok(DVector::from_column_slice(d)),
            DisturbanceSpec::Delta(d) => Err(invalid(format!(
                "delta has {} entries, network has {} branches",
                d.len(),
                network.n_branches()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    NoDisturbance,
    Unprotected,
    Verified,
    Unverified,
}

#[derive(Debug)]
pub struct ScenarioReport {
    pub status: ScenarioStatus,
    pub network: PowerNetwork,
    pub outcome: Option<ProtectionOutcome>,
    pub unprotected_metrics: Option<Metrics>,
    pub files: Vec<PathBuf>,
}

impl ScenarioReport {
    /// 0 for success, 2 when a protection plan failed verification.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            ScenarioStatus::Unverified => 2,
            _ => 0,
        }
    }
}

/// Run the protection episode for a loaded network without writing files.
pub fn protect(
    network: &PowerNetwork,
    config: &ScenarioConfig,
) -> Result<Option<ProtectionOutcome>> {
    config.validate()?;
    let delta = config.delta(network)?;
    let observed = apply_disturbance(network, &delta)?;
    let Some(event) = identify_disturbance(network, &observed)? else {
        return Ok(None);
    };
    let m = config.shedding_step()?;
    let smoothing = config.smoothing();
    match config.scheme {
        SchemeChoice::Nps => run_nps(network, &event, m, &config.solver, &smoothing).map(Some),
        SchemeChoice::Rps => run_rps(network, &event, m, &config.solver, &smoothing).map(Some),
        SchemeChoice::None => Err(invalid("protect called with scheme none")),
    }
}

#[derive(Serialize)]
struct UnprotectedReport {
    scheme: &'static str,
    terminated_at: usize,
    quiescent: bool,
    final_metrics: Metrics,
}

#[derive(Serialize)]
struct NoDisturbanceReport {
    status: ScenarioStatus,
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

/// Run one configured scenario and write its outputs to `config.output_dir`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    let started = Instant::now();
    config.validate()?;
    let network = config.load_network()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let delta = config.delta(&network)?;
    let y1 = apply_disturbance(&network, &delta)?;
    let disturbed = identify_disturbance(&network, &y1)?.is_some();

    let (status, outcome, unprotected_metrics) = if !disturbed {
        let json = serde_json::to_string_pretty(&NoDisturbanceReport {
            status: ScenarioStatus::NoDisturbance,
        })?;
        write(dir, "report.json", &json, &mut files)?;
        (ScenarioStatus::NoDisturbance, None, None)
    } else if config.scheme == SchemeChoice::None {
        let traj = simulate(
            &network,
            &y1,
            &network.base_injections(),
            &config.smoothing(),
            DEFAULT_MAX_STEPS,
        )?;
        let m = metrics(&network, traj.last());
        let report = UnprotectedReport {
            scheme: "none",
            terminated_at: traj.terminated_at,
            quiescent: traj.quiescent,
            final_metrics: m,
        };
        write(dir, "report.json", &serde_json::to_string_pretty(&report)?, &mut files)?;
        write(dir, "cascade.csv", &trajectory_csv(&network, &traj), &mut files)?;
        let summary = serde_json::to_string_pretty(&trajectory_summary(&network, &traj))?;
        write(dir, "cascade_summary.json", &summary, &mut files)?;
        (ScenarioStatus::Unprotected, None, Some(m))
    } else {
        let outcome = protect(&network, config)?.expect("disturbance was detected");
        let report = outcome_report(&network, &outcome);
        write(dir, "report.json", &serde_json::to_string_pretty(&report)?, &mut files)?;
        files.extend(emit_plot_data(&network, &outcome, dir)?);
        let status = if outcome.verified {
            ScenarioStatus::Verified
        } else {
            ScenarioStatus::Unverified
        };
        let m = metrics(&network, outcome.unprotected.last());
        (status, Some(outcome), Some(m))
    };

    let meta = serde_json::json!({
        "status": status,
        "elapsed_ms": started.elapsed().as_millis() as u64,
        "crate_version": env!("CARGO_PKG_VERSION"),
    });
    write(dir, "run.json", &serde_json::to_string_pretty(&meta)?, &mut files)?;
    Ok(ScenarioReport {
        status,
        network,
        outcome,
        unprotected_metrics,
        files,
    })
}

/// Header and rows for a saddle trajectory.
///
/// Columns are `time`, then `P_<bus>` for a single block or
/// `P<step>_<bus>` for two, then `lambda_<branch>`, `tau_upper…`, `tau_lower…`.
pub fn solver_trajectory_csv(
    network: &PowerNetwork,
    block_steps: &[usize],
    edges: &[usize],
    trajectory: &[SaddleState],
) -> String {
    let bus_ids: Vec<usize> = network.buses().iter().map(|b| b.id).collect();
    let tag = |k: usize| {
        if block_steps.len() == 1 {
            String::new()
        } else {
            block_steps[k].to_string()
        }
    };
    let mut header = vec!["time".to_string()];
    for k in 0..block_steps.len() {
        header.extend(bus_ids.iter().map(|id| format!("P{}_{id}", tag(k))));
    }
    header.extend(edges.iter().map(|&l| format!("lambda_{}", network.branches()[l].id)));
    for (name, _) in [("tau_upper", ()), ("tau_lower", ())] {
        for k in 0..block_steps.len() {
            header.extend(bus_ids.iter().map(|id| format!("{name}{}_{id}", tag(k))));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for s in trajectory {
        let _ = write!(out, "{}", s.time);
        for v in s.flatten() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Write solver trajectory, protected cascade and shed CSVs for an outcome.
pub fn emit_plot_data(
    network: &PowerNetwork,
    outcome: &ProtectionOutcome,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let csv = solver_trajectory_csv(
        network,
        &outcome.block_steps,
        &outcome.constrained_edges,
        &outcome.solver.trajectory,
    );
    write(dir, "solver_trajectory.csv", &csv, &mut files)?;
    write(dir, "cascade.csv", &trajectory_csv(network, &outcome.unprotected), &mut files)?;
    write(dir, "cascade_protected.csv", &trajectory_csv(network, &outcome.trajectory), &mut files)?;
    let shed = outcome.shed_amounts();
    let mut csv = String::from("bus");
    for k in shed.keys() {
        let _ = write!(csv, ",step_{k}");
    }
    csv.push('\n');
    for (i, b) in network.buses().iter().enumerate() {
        let _ = write!(csv, "{}", b.id);
        for v in shed.values() {
            let _ = write!(csv, ",{}", v[i]);
        }
        csv.push('\n');
    }
    write(dir, "shed.csv", &csv, &mut files)?;
    Ok(files)
}

/// Largest ratio, over trajectory components, of the spread within
/// `[from, to]` to the spread within `[0, to]`. Components that never move
/// are skipped.
pub fn settling_ratio(trajectory: &[SaddleState], from: f64, to: f64) -> f64 {
    let eps = 1e-9;
    let window: Vec<Vec<f64>> = trajectory
        .iter()
        .filter(|s| s.time <= to + eps)
        .map(|s| s.flatten())
        .collect();
    let late: Vec<&Vec<f64>> = trajectory
        .iter()
        .zip(&window)
        .filter(|(s, _)| s.time + eps >= from)
        .map(|(_, v)| v)
        .collect();
    if window.is_empty() || late.is_empty() {
        return 0.0;
    }
    let spread = |rows: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = rows.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        hi - lo
    };
    let mut worst: f64 = 0.0;
    for c in 0..window[0].len() {
        let full = spread(&mut window.iter().map(|r| r[c]));
        if full <= 1e-12 {
            continue;
        }
        let tail = spread(&mut late.iter().map(|r| r[c]));
        worst = worst.max(tail / full);
    }
    worst
}

/// One line of a weight sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub scheme: Scheme,
    pub n_connected: usize,
    pub n_active: usize,
    pub total_power: f64,
    pub shed_power: f64,
    pub objective: f64,
    pub verified: bool,
    pub fallback_used: bool,
    /// Euler step actually used for this row.
    pub dt: f64,
    /// Set when the run failed; metric fields are then NaN or zero.
    pub error: Option<String>,
}

/// γ values 0.1, 0.2, …, 1, 2, …, 10 restricted to `[lo, hi]`.
pub fn default_gamma_grid(lo: f64, hi: f64) -> Vec<f64> {
    (1..=10)
        .map(|k| k as f64 / 10.0)
        .chain((2..=10).map(|k| k as f64))
        .filter(|g| *g >= lo - 1e-12 && *g <= hi + 1e-12)
        .collect()
}

/// Run NPS and RPS for each γ, with load weights 1 and generator weights γ.
///
/// NPS sheds at `base.m`; RPS uses `base.rps_steps` or (m−1, m). Rows come
/// back in γ order, NPS before RPS. A failed run is recorded in its row and
/// the sweep continues.
///
/// The Euler step is capped at 1/(2·max W²) per row. Past that the primal
/// update overshoots P⁰ and the iteration diverges.
pub fn weight_sweep(base: &ScenarioConfig, gammas: &[f64]) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() || gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(invalid("gamma values must be nonempty and positive"));
    }
    base.validate()?;
    let network = base.load_network()?;
    let observed = apply_disturbance(&network, &base.delta(&network)?)?;
    if identify_disturbance(&network, &observed)?.is_none() {
        return Err(invalid("sweep scenario has no disturbance"));
    }
    let jobs: Vec<(f64, Scheme)> = gammas
        .iter()
        .flat_map(|&g| [(g, Scheme::Nps), (g, Scheme::Rps)])
        .collect();
    jobs.par_iter()
        .map(|&(gamma, scheme)| {
            let mut cfg = base.clone();
            cfg.weights = WeightSpec::PerKind {
                load: 1.0,
                generator: gamma,
            };
            cfg.scheme = match scheme {
                Scheme::Nps => SchemeChoice::Nps,
                Scheme::Rps => SchemeChoice::Rps,
            };
            if scheme == Scheme::Nps {
                cfg.rps_steps = None;
            }
            let dt = cfg.solver.dt.min(0.5 / gamma.max(1.0).powi(2));
            cfg.solver.dt = dt;
            let outcome = cfg.load_network().and_then(|net| protect(&net, &cfg));
            Ok(match outcome {
                Ok(Some(o)) => SweepRow {
                    gamma,
                    scheme,
                    n_connected: o.final_metrics.n_connected,
                    n_active: o.final_metrics.n_active,
                    total_power: o.final_metrics.total_power,
                    shed_power: o.final_metrics.shed_power,
                    objective: o.objective,
                    verified: o.verified,
                    fallback_used: o.plan.fallback_used,
                    dt,
                    error: None,
                },
                Ok(None) => unreachable!("disturbance checked above"),
                Err(e) => SweepRow {
                    gamma,
                    scheme,
                    n_connected: 0,
                    n_active: 0,
                    total_power: f64::NAN,
                    shed_power: f64::NAN,
                    objective: f64::NAN,
                    verified: false,
                    fallback_used: false,
                    dt,
                    error: Some(e.to_string()),
                },
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "gamma,scheme,n_connected,n_active,total_power,shed_power,objective,verified,fallback_used,dt,error\n",
    );
    for r in rows {
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.gamma,
            r.scheme,
            r.n_connected,
            r.n_active,
            r.total_power,
            r.shed_power,
            r.objective,
            r.verified,
            r.fallback_used,
            r.dt,
            error
        );
    }
    out
}

/// Run a sweep and write `sweep.csv` into `base.output_dir`.
pub fn run_sweep(base: &ScenarioConfig, gammas: &[f64]) -> Result<(Vec<SweepRow>, PathBuf)> {
    let rows = weight_sweep(base, gammas)?;
    fs::create_dir_all(&base.output_dir)?;
    let path = base.output_dir.join("sweep.csv");
    fs::write(&path, sweep_csv(&rows))?;
    Ok((rows, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_grid() {
        let g = default_gamma_grid(0.1, 10.0);
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[18], 10.0);
        assert_eq!(default_gamma_grid(0.3, 0.5), vec![0.3, 0.4, 0.5]);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = parse_scenario_config(
            r#"{"case_path": "x.m", "disturbance": {"sever": [10]}, "scheme": "rps",
                "rps_steps": [3, 4], "weights": {"per_kind": {"load": 1, "generator": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.m, 4);
        assert_eq!(cfg.shedding_step().unwrap(), 4);
        assert_eq!(cfg.solver.dt, 0.1);
        let again = parse_scenario_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_steps() {
        let mut cfg = ScenarioConfig {
            scheme: SchemeChoice::Rps,
            rps_steps: Some((2, 4)),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.rps_steps = Some((1, 2));
        assert!(cfg.validate().is_err());
        cfg.scheme = SchemeChoice::Nps;
        cfg.m = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_config_field_is_an_error() {
        assert!(parse_scenario_config(r#"{"bogus": 1}"#).is_err());
    }
}
