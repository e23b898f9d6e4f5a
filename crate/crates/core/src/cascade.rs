//! Discrete cascade dynamics `Y^{k+1} = G(flows^k) ∘ Y^k`.

use std::fmt::Write as _;
use std::f64::consts::PI;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::netmodel::PowerNetwork;
use crate::powerflow::{solve_flow, LIVE_ADMITTANCE};

/// Cascade stops once no admittance moves by more than this.
pub const QUIESCENCE_TOL: f64 = 1e-9;

/// A branch counts as active when |flow| exceeds this.
pub const ACTIVE_FLOW: f64 = 1e-6;

pub const DEFAULT_MAX_STEPS: usize = 50;

/// Survival model for an over-threshold branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingParams {
    /// Steepness σ of the smooth survival curve.
    pub sigma: f64,
    /// Use the step function 1{|f| ≤ c + trip_tolerance} instead.
    pub hard_threshold: bool,
    /// Slack before a branch trips in hard mode.
    pub trip_tolerance: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams::smooth(1e3)
    }
}

impl SmoothingParams {
    pub fn smooth(sigma: f64) -> Self {
        SmoothingParams {
            sigma,
            hard_threshold: false,
            trip_tolerance: 1e-6,
        }
    }

    /// Step-function survival. σ = 10³ is kept for anything that needs the
    /// smooth curve, such as linearization.
    pub fn hard() -> Self {
        SmoothingParams {
            sigma: 1e3,
            hard_threshold: true,
            trip_tolerance: 1e-6,
        }
    }

    /// Same σ with the smooth curve switched on.
    pub fn as_smooth(&self) -> Self {
        SmoothingParams {
            hard_threshold: false,
            ..*self
        }
    }

    fn band(&self, c: f64) -> (f64, f64) {
        let w = PI / (2.0 * self.sigma);
        ((c * c - w).max(0.0).sqrt(), (c * c + w).sqrt())
    }
}

/// Probability-like survival factor g(f; c) in [0, 1].
///
/// Smooth form: 1 below `√(c² − π/2σ)`, 0 above `√(c² + π/2σ)`, and
/// `(1 − sin(σ(f² − c²)))/2` in between.
pub fn survival_factor(flow: f64, threshold: f64, params: &SmoothingParams) -> f64 {
    let a = flow.abs();
    if params.hard_threshold {
        return if a <= threshold + params.trip_tolerance { 1.0 } else { 0.0 };
    }
    let (lo, hi) = params.band(threshold);
    if a >= hi {
        0.0
    } else if a <= lo {
        1.0
    } else {
        0.5 * (1.0 - (params.sigma * (flow * flow - threshold * threshold)).sin())
    }
}

/// dg/df of the smooth survival factor.
pub fn survival_derivative(flow: f64, threshold: f64, params: &SmoothingParams) -> Result<f64> {
    if params.hard_threshold {
        return Err(Error::HardThreshold("survival_derivative"));
    }
    let (lo, hi) = params.band(threshold);
    let a = flow.abs();
    if a >= hi || a <= lo {
        return Ok(0.0);
    }
    let s = params.sigma;
    Ok(-s * flow * (s * (flow * flow - threshold * threshold)).cos())
}

/// Network state at one cascade step.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    /// 1-based step index.
    pub step: usize,
    pub admittance: DVector<f64>,
    /// Flows under `admittance` and `injections`.
    pub flows: DVector<f64>,
    /// Injections in force at this step.
    pub injections: DVector<f64>,
}

impl CascadeState {
    pub fn new(
        network: &PowerNetwork,
        step: usize,
        admittance: DVector<f64>,
        injections: DVector<f64>,
    ) -> Result<Self> {
        let flows = solve_flow(network, &admittance, &injections)?.branch_flows;
        Ok(CascadeState {
            step,
            admittance,
            flows,
            injections,
        })
    }
}

/// `G(flows) ∘ Y` for the given flows.
pub fn next_admittance(
    network: &PowerNetwork,
    admittance: &DVector<f64>,
    flows: &DVector<f64>,
    params: &SmoothingParams,
) -> DVector<f64> {
    DVector::from_iterator(
        admittance.len(),
        network
            .branches()
            .iter()
            .enumerate()
            .map(|(l, br)| survival_factor(flows[l], br.flow_threshold, params) * admittance[l]),
    )
}

/// One cascade step.
///
/// Flows are computed at `(state.admittance, injections)`, branches are
/// thinned by the survival factor, and the returned state carries the new
/// admittances with flows under the same injections.
pub fn cascade_step(
    network: &PowerNetwork,
    state: &CascadeState,
    injections: &DVector<f64>,
    params: &SmoothingParams,
) -> Result<CascadeState> {
    let flows = if injections == &state.injections {
        state.flows.clone()
    } else {
        solve_flow(network, &state.admittance, injections)?.branch_flows
    };
    let y = next_admittance(network, &state.admittance, &flows, params);
    CascadeState::new(network, state.step + 1, y, injections.clone())
}

/// Sequence of cascade states starting at step 1.
#[derive(Debug, Clone)]
pub struct CascadeTrajectory {
    pub states: Vec<CascadeState>,
    /// Step of the last recorded state.
    pub terminated_at: usize,
    /// False when `max_steps` was reached while admittances were still moving.
    pub quiescent: bool,
}

impl CascadeTrajectory {
    pub fn last(&self) -> &CascadeState {
        self.states.last().expect("trajectory is never empty")
    }

    /// State at `step`, or the last state if the cascade stopped earlier.
    pub fn at(&self, step: usize) -> &CascadeState {
        let i = step.saturating_sub(1).min(self.states.len() - 1);
        &self.states[i]
    }
}

/// Run the cascade from Y¹ with constant injections.
pub fn simulate(
    network: &PowerNetwork,
    y1: &DVector<f64>,
    injections: &DVector<f64>,
    params: &SmoothingParams,
    max_steps: usize,
) -> Result<CascadeTrajectory> {
    simulate_scheduled(network, y1, |_| injections.clone(), 0, params, max_steps)
}

/// Run the cascade with step-dependent injections.
///
/// `schedule(k)` gives the injections in force at step k. Quiescence is only
/// declared at steps ≥ `last_change`, so a scheduled intervention is always
/// applied before the run may stop.
pub fn simulate_scheduled(
    network: &PowerNetwork,
    y1: &DVector<f64>,
    schedule: impl Fn(usize) -> DVector<f64>,
    last_change: usize,
    params: &SmoothingParams,
    max_steps: usize,
) -> Result<CascadeTrajectory> {
    if max_steps == 0 {
        return Err(invalid("max_steps must be at least 1"));
    }
    let mut states = vec![CascadeState::new(network, 1, y1.clone(), schedule(1))?];
    loop {
        let cur = states.last().expect("non-empty");
        let y = next_admittance(network, &cur.admittance, &cur.flows, params);
        let next = CascadeState::new(network, cur.step + 1, y, schedule(cur.step + 1))?;
        let moved = (&next.admittance - &cur.admittance).amax();
        if moved <= QUIESCENCE_TOL && cur.step >= last_change {
            let step = cur.step;
            return Ok(CascadeTrajectory {
                states,
                terminated_at: step,
                quiescent: true,
            });
        }
        if states.len() >= max_steps {
            let step = cur.step;
            return Ok(CascadeTrajectory {
                states,
                terminated_at: step,
                quiescent: false,
            });
        }
        states.push(next);
    }
}

/// Summary numbers for one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Branches with Y > 1e-9.
    pub n_connected: usize,
    /// Branches with |flow| > 1e-6.
    pub n_active: usize,
    /// Σ |flow|.
    pub total_power: f64,
    /// Σ |P⁰ − P|.
    pub shed_power: f64,
}

pub fn metrics(network: &PowerNetwork, state: &CascadeState) -> Metrics {
    let p0 = network.base_injections();
    Metrics {
        n_connected: state.admittance.iter().filter(|&&y| y > LIVE_ADMITTANCE).count(),
        n_active: state.flows.iter().filter(|f| f.abs() > ACTIVE_FLOW).count(),
        total_power: state.flows.iter().map(|f| f.abs()).sum(),
        shed_power: (&p0 - &state.injections).iter().map(|d| d.abs()).sum(),
    }
}

/// `step,branch,admittance,flow` rows, one per branch per step.
pub fn trajectory_csv(network: &PowerNetwork, traj: &CascadeTrajectory) -> String {
    let mut out = String::from("step,branch,admittance,flow\n");
    for s in &traj.states {
        for (l, br) in network.branches().iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", s.step, br.id, s.admittance[l], s.flows[l]);
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct StepSummary {
    pub step: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Serialize)]
pub struct TrajectorySummary {
    pub terminated_at: usize,
    pub quiescent: bool,
    pub steps: Vec<StepSummary>,
}

pub fn trajectory_summary(network: &PowerNetwork, traj: &CascadeTrajectory) -> TrajectorySummary {
    TrajectorySummary {
        terminated_at: traj.terminated_at,
        quiescent: traj.quiescent,
        steps: traj
            .states
            .iter()
            .map(|s| StepSummary {
                step: s.step,
                metrics: metrics(network, s),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_json_case;

    fn two_bus(p: f64) -> PowerNetwork {
        parse_json_case(&format!(
            r#"{{"buses": [{{"id": 1, "kind": "generator", "p0": {p}, "pmin": 0, "pmax": 2}},
                          {{"id": 2, "kind": "load", "p0": -{p}, "pmin": -2, "pmax": 0}}],
                "branches": [{{"id": 1, "from": 1, "to": 2, "y": 1.0, "c": 1.0}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn survival_edges() {
        let p = SmoothingParams::smooth(1e3);
        assert_eq!(survival_factor(0.5, 1.0, &p), 1.0);
        assert_eq!(survival_factor(1.01, 1.0, &p), 0.0);
        assert!((survival_factor(1.0, 1.0, &p) - 0.5).abs() < 1e-15);
        assert!((survival_factor(-1.0, 1.0, &p) - 0.5).abs() < 1e-15);
        let h = SmoothingParams::hard();
        assert_eq!(survival_factor(1.0, 1.0, &h), 1.0);
        assert_eq!(survival_factor(1.1, 1.0, &h), 0.0);
        assert!(survival_derivative(0.5, 1.0, &h).is_err());
        assert_eq!(survival_derivative(0.5, 1.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn undisturbed_light_load_quiesces_at_once() {
        let net = two_bus(0.5);
        let t = simulate(&net, &net.admittances(), &net.base_injections(), &SmoothingParams::default(), 50)
            .unwrap();
        assert_eq!(t.terminated_at, 1);
        assert!(t.quiescent);
    }

    #[test]
    fn overload_trips_then_stops() {
        let net = two_bus(1.5);
        let t = simulate(&net, &net.admittances(), &net.base_injections(), &SmoothingParams::default(), 50)
            .unwrap();
        assert_eq!(t.terminated_at, 2);
        assert_eq!(t.states[1].admittance[0], 0.0);
        let m = metrics(&net, t.last());
        assert_eq!(m.n_connected, 0);
        assert_eq!(m.n_active, 0);
    }

    #[test]
    fn max_steps_cuts_short() {
        let net = two_bus(1.5);
        let t = simulate(&net, &net.admittances(), &net.base_injections(), &SmoothingParams::hard(), 1)
            .unwrap();
        assert_eq!(t.states.len(), 1);
        assert!(!t.quiescent);
    }
}
