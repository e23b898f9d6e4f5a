//! Protection episodes: detect a disturbance, predict the cascade, solve
//! for a shedding plan, apply it and verify the result.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::cascade::{
    metrics, simulate, simulate_scheduled, CascadeTrajectory, Metrics, SmoothingParams,
    DEFAULT_MAX_STEPS,
};
use crate::error::{invalid, Result};
use crate::netmodel::{apply_disturbance, PowerNetwork};
use crate::powerflow::{solve_flow, LIVE_ADMITTANCE};
use crate::solver::{
    build_nps_problem, build_rps_problem, exact_two_step_flows, integrate, kkt_residual,
    rps_linearize, Integration, KktResidual, Scheme, SheddingProblem, SolverConfig,
};

/// Slack allowed when checking flows against limits.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceEvent {
    /// δ = Y¹ − Y⁰.
    pub delta: DVector<f64>,
    pub detected_at_step: usize,
    /// Ids of branches that were live and are now open.
    pub severed_branches: Vec<usize>,
}

/// Compare observed admittances against the reference network.
///
/// Returns `None` when nothing changed.
pub fn identify_disturbance(
    reference: &PowerNetwork,
    observed: &DVector<f64>,
) -> Result<Option<DisturbanceEvent>> {
    if observed.len() != reference.n_branches() {
        return Err(invalid(format!(
            "observed admittance has {} entries, network has {} branches",
            observed.len(),
            reference.n_branches()
        )));
    }
    let y0 = reference.admittances();
    let delta = observed - &y0;
    if delta.iter().all(|&d| d == 0.0) {
        return Ok(None);
    }
    let severed_branches = reference
        .branches()
        .iter()
        .enumerate()
        .filter(|(l, _)| observed[*l] <= LIVE_ADMITTANCE && y0[*l] > 0.0)
        .map(|(_, br)| br.id)
        .collect();
    Ok(Some(DisturbanceEvent {
        delta,
        detected_at_step: 1,
        severed_branches,
    }))
}

/// Injections to enforce, keyed by cascade step. Each entry stays in force
/// until a later entry replaces it.
#[derive(Debug, Clone, PartialEq)]
pub struct SheddingPlan {
    pub per_step: BTreeMap<usize, DVector<f64>>,
    pub scheme: Scheme,
    pub fallback_used: bool,
}

impl SheddingPlan {
    pub fn injections_at(&self, step: usize, base: &DVector<f64>) -> DVector<f64> {
        self.per_step
            .range(..=step)
            .next_back()
            .map_or_else(|| base.clone(), |(_, p)| p.clone())
    }

    pub fn last_step(&self) -> usize {
        self.per_step.keys().next_back().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub branch: usize,
    pub flow: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowCheck {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

fn check(network: &PowerNetwork, y: &DVector<f64>, flows: &DVector<f64>, limits: &DVector<f64>) -> FlowCheck {
    let violations: Vec<Violation> = network
        .branches()
        .iter()
        .enumerate()
        .filter(|(l, _)| y[*l] > LIVE_ADMITTANCE && flows[*l].abs() > limits[*l] + VERIFY_TOL)
        .map(|(l, br)| Violation {
            branch: br.id,
            flow: flows[l].abs(),
            limit: limits[l],
        })
        .collect();
    FlowCheck {
        ok: violations.is_empty(),
        violations,
    }
}

/// Exact flows at (Y, P) checked against per-branch `limits` on live branches.
pub fn verify_flows(
    network: &PowerNetwork,
    y: &DVector<f64>,
    p: &DVector<f64>,
    limits: &DVector<f64>,
) -> Result<FlowCheck> {
    if limits.len() != network.n_branches() {
        return Err(invalid("limit vector has wrong length"));
    }
    let flows = solve_flow(network, y, p)?.branch_flows;
    Ok(check(network, y, &flows, limits))
}

/// Result of one protection episode.
#[derive(Debug, Clone)]
pub struct ProtectionOutcome {
    pub scheme: Scheme,
    pub m: usize,
    pub plan: SheddingPlan,
    /// `Σ_k ‖W ∘ (Pᵏ − P⁰)‖²` over the applied plan.
    pub objective: f64,
    pub final_metrics: Metrics,
    pub verified: bool,
    pub violations: Vec<Violation>,
    /// Cascade with the plan applied.
    pub trajectory: CascadeTrajectory,
    pub unprotected: CascadeTrajectory,
    /// Integration that produced the applied plan.
    pub solver: Integration,
    /// Branch indices behind `solver`'s multipliers.
    pub constrained_edges: Vec<usize>,
    /// Steps of `solver`'s primal blocks.
    pub block_steps: Vec<usize>,
    pub kkt: KktResidual,
    /// RPS only: the two-step integration, kept even when the fallback is used.
    pub rps_solver: Option<Integration>,
    /// RPS only: exact step-m flows under the two-step plan.
    pub exact_check: Option<FlowCheck>,
    pub base_injection: DVector<f64>,
    pub weights: DVector<f64>,
}

impl ProtectionOutcome {
    /// P − P⁰ per bus for each planned step. Positive values shed load,
    /// negative values cut generation.
    pub fn shed_amounts(&self) -> BTreeMap<usize, DVector<f64>> {
        self.plan
            .per_step
            .iter()
            .map(|(&k, p)| (k, p - &self.base_injection))
            .collect()
    }

    /// ‖W ∘ (Pᵏ − P⁰)‖² per planned step.
    pub fn step_mismatch(&self) -> BTreeMap<usize, f64> {
        self.plan
            .per_step
            .iter()
            .map(|(&k, p)| (k, (p - &self.base_injection).component_mul(&self.weights).norm_squared()))
            .collect()
    }
}

fn clamp_box(p: &DVector<f64>, problem: &SheddingProblem) -> DVector<f64> {
    DVector::from_iterator(
        p.len(),
        (0..p.len()).map(|i| p[i].clamp(problem.lower[i], problem.upper[i])),
    )
}

struct Solved {
    blocks: Vec<DVector<f64>>,
    integration: Integration,
    kkt: KktResidual,
    edges: Vec<usize>,
    block_steps: Vec<usize>,
}

fn solve(problem: &SheddingProblem, config: &SolverConfig) -> Result<Solved> {
    let integration = integrate(problem, config)?;
    let kkt = kkt_residual(&integration.solution, problem);
    let blocks = integration
        .solution
        .primal
        .iter()
        .map(|p| clamp_box(p, problem))
        .collect();
    Ok(Solved {
        blocks,
        integration,
        kkt,
        edges: problem.constrained_edges.clone(),
        block_steps: problem.block_steps(),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    network: &PowerNetwork,
    y1: &DVector<f64>,
    scheme: Scheme,
    m: usize,
    plan: SheddingPlan,
    unprotected: CascadeTrajectory,
    solved: Solved,
    rps_solver: Option<Integration>,
    exact_check: Option<FlowCheck>,
    smoothing: &SmoothingParams,
) -> Result<ProtectionOutcome> {
    let p0 = network.base_injections();
    let trajectory = simulate_scheduled(
        network,
        y1,
        |k| plan.injections_at(k, &p0),
        plan.last_step(),
        smoothing,
        DEFAULT_MAX_STEPS.max(plan.last_step() + 1),
    )?;
    let limits = network.flow_thresholds();
    let at_m = trajectory.at(m);
    let last = trajectory.last();
    let step_check = check(network, &at_m.admittance, &at_m.flows, &limits);
    let final_check = check(network, &last.admittance, &last.flows, &limits);
    let verified = trajectory.quiescent && step_check.ok && final_check.ok;
    let mut violations = step_check.violations;
    violations.extend(final_check.violations);
    let applied: Vec<DVector<f64>> = plan.per_step.values().cloned().collect();
    let applied_objective: f64 = applied
        .iter()
        .map(|p| (p - &p0).component_mul(&network.weights()).norm_squared())
        .sum();
    Ok(ProtectionOutcome {
        scheme,
        m,
        objective: applied_objective,
        final_metrics: metrics(network, last),
        verified,
        violations,
        trajectory,
        unprotected,
        solver: solved.integration,
        constrained_edges: solved.edges,
        block_steps: solved.block_steps,
        kkt: solved.kkt,
        rps_solver,
        exact_check,
        base_injection: p0,
        weights: network.weights(),
        plan,
    })
}

/// Non-recurring scheme: shed once, at step m.
pub fn run_nps(
    network: &PowerNetwork,
    event: &DisturbanceEvent,
    m: usize,
    solver_config: &SolverConfig,
    smoothing: &SmoothingParams,
) -> Result<ProtectionOutcome> {
    if m < 2 {
        return Err(invalid("NPS needs m ≥ 2"));
    }
    let y1 = apply_disturbance(network, &event.delta)?;
    let p0 = network.base_injections();
    let unprotected = simulate(network, &y1, &p0, smoothing, DEFAULT_MAX_STEPS.max(m))?;
    let problem = build_nps_problem(network, &unprotected, m)?;
    let solved = solve(&problem, solver_config)?;
    let plan = SheddingPlan {
        per_step: BTreeMap::from([(m, solved.blocks[0].clone())]),
        scheme: Scheme::Nps,
        fallback_used: false,
    };
    finish(network, &y1, Scheme::Nps, m, plan, unprotected, solved, None, None, smoothing)
}

/// Recurring scheme: shed at steps m−1 and m using a linearized step-m
/// flow model, falling back to the NPS plan if the exact step-m flows
/// under the two-step plan break a limit.
pub fn run_rps(
    network: &PowerNetwork,
    event: &DisturbanceEvent,
    m: usize,
    solver_config: &SolverConfig,
    smoothing: &SmoothingParams,
) -> Result<ProtectionOutcome> {
    if m < 3 {
        return Err(invalid("RPS needs m ≥ 3"));
    }
    let y1 = apply_disturbance(network, &event.delta)?;
    let p0 = network.base_injections();
    let unprotected = simulate(network, &y1, &p0, smoothing, DEFAULT_MAX_STEPS.max(m))?;
    let smooth = smoothing.as_smooth();
    let y_prev = unprotected.at(m - 1).admittance.clone();
    let model = rps_linearize(network, &y_prev, &p0, &smooth)?;
    let problem = build_rps_problem(network, model, m)?;
    let solved = solve(&problem, solver_config)?;

    let (p_prev, p_curr) = (solved.blocks[0].clone(), solved.blocks[1].clone());
    let flows = exact_two_step_flows(network, &y_prev, &p_prev, &p_curr, &smooth)?;
    let y_m = {
        let f = solve_flow(network, &y_prev, &p_prev)?.branch_flows;
        crate::cascade::next_admittance(network, &y_prev, &f, &smooth)
    };
    let exact = check(network, &y_m, &flows, &network.flow_thresholds());

    if exact.ok {
        let plan = SheddingPlan {
            per_step: BTreeMap::from([(m - 1, p_prev), (m, p_curr)]),
            scheme: Scheme::Rps,
            fallback_used: false,
        };
        let rps = solved.integration.clone();
        return finish(
            network,
            &y1,
            Scheme::Rps,
            m,
            plan,
            unprotected,
            solved,
            Some(rps),
            Some(exact),
            smoothing,
        );
    }

    let nps_problem = build_nps_problem(network, &unprotected, m)?;
    let nps = solve(&nps_problem, solver_config)?;
    let plan = SheddingPlan {
        per_step: BTreeMap::from([(m, nps.blocks[0].clone())]),
        scheme: Scheme::Rps,
        fallback_used: true,
    };
    finish(
        network,
        &y1,
        Scheme::Rps,
        m,
        plan,
        unprotected,
        nps,
        Some(solved.integration),
        Some(exact),
        smoothing,
    )
}

/// JSON report of one outcome.
#[derive(Debug, Serialize)]
pub struct OutcomeReport {
    pub scheme: Scheme,
    pub m: usize,
    pub objective: f64,
    pub fallback_used: bool,
    pub verified: bool,
    pub bus_ids: Vec<usize>,
    /// Step → P − P⁰ per bus, in `bus_ids` order.
    pub shed: BTreeMap<usize, Vec<f64>>,
    pub step_mismatch: BTreeMap<usize, f64>,
    pub final_metrics: Metrics,
    pub terminated_at: usize,
    pub quiescent: bool,
    pub violations: Vec<Violation>,
    pub solver_converged: bool,
    pub solver_steps: usize,
    pub solver_time: f64,
    pub kkt: KktResidual,
    pub exact_check: Option<FlowCheck>,
    pub unprotected_terminated_at: usize,
    pub unprotected_final_metrics: Metrics,
}

pub fn outcome_report(network: &PowerNetwork, outcome: &ProtectionOutcome) -> OutcomeReport {
    OutcomeReport {
        scheme: outcome.scheme,
        m: outcome.m,
        objective: outcome.objective,
        fallback_used: outcome.plan.fallback_used,
        verified: outcome.verified,
        bus_ids: network.buses().iter().map(|b| b.id).collect(),
        shed: outcome
            .shed_amounts()
            .into_iter()
            .map(|(k, v)| (k, v.iter().copied().collect()))
            .collect(),
        step_mismatch: outcome.step_mismatch(),
        final_metrics: outcome.final_metrics,
        terminated_at: outcome.trajectory.terminated_at,
        quiescent: outcome.trajectory.quiescent,
        violations: outcome.violations.clone(),
        solver_converged: outcome.solver.converged,
        solver_steps: outcome.solver.steps,
        solver_time: outcome.solver.solution.time,
        kkt: outcome.kkt,
        exact_check: outcome.exact_check.clone(),
        unprotected_terminated_at: outcome.unprotected.terminated_at,
        unprotected_final_metrics: metrics(network, outcome.unprotected.last()),
    }
}
