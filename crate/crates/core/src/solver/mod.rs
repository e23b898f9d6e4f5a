//! Load-shedding problems and their projected saddle-point dynamics.
//!
//! Both schemes reduce to the same shape: minimize
//! `Σ_k ‖W ∘ (Pᵏ − P⁰)‖²` over one or two injection blocks, subject to box
//! bounds on every block and `h_e² ≤ σ_e²` for each constrained edge, where
//! `h = offset + Σ_k R_k Pᵏ` is affine in the blocks. NPS has one block and
//! `R` is the injection Jacobian at the frozen admittances. RPS has two
//! blocks whose `R` come from a [`LinearFlowModel`].

mod dynamics;
mod linearize;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeTrajectory;
use crate::error::{invalid, Result};
use crate::netmodel::PowerNetwork;
use crate::powerflow::{flow_jacobian_injections, LIVE_ADMITTANCE};

pub use dynamics::{
    integrate, kkt_residual, lagrangian, nps_lagrangian, nps_rhs, objective, projection, rhs,
    rps_rhs, Integration, KktResidual,
};
pub use linearize::{exact_two_step_flows, rps_linearize, LinearFlowModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Nps,
    Rps,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Nps => "nps",
            Scheme::Rps => "rps",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Euler step in seconds.
    pub dt: f64,
    /// Integration always covers at least [0, horizon].
    pub horizon: f64,
    /// Stop once ‖state change‖∞ over one step falls to this.
    pub convergence_tol: f64,
    pub kkt_tol: f64,
    /// Hard stop when convergence is not reached.
    pub max_time: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.1,
            horizon: 10.0,
            convergence_tol: 1e-9,
            kkt_tol: 1e-4,
            max_time: 2000.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(invalid("horizon must be at least dt"));
        }
        if !(self.max_time >= self.horizon) {
            return Err(invalid("max_time must be at least horizon"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(invalid("convergence_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// Affine constraint map `h = offset + Σ_k blocks[k] · Pᵏ` over the
/// constrained edges.
#[derive(Debug, Clone)]
pub struct ConstraintMap {
    pub offset: DVector<f64>,
    pub blocks: Vec<DMatrix<f64>>,
}

impl ConstraintMap {
    pub fn eval(&self, primal: &[DVector<f64>]) -> DVector<f64> {
        let mut h = self.offset.clone();
        for (r, p) in self.blocks.iter().zip(primal) {
            h.gemv(1.0, r, p, 1.0);
        }
        h
    }
}

/// Data of one shedding problem.
#[derive(Debug, Clone)]
pub struct SheddingProblem<'a> {
    pub variant: Scheme,
    pub network: &'a PowerNetwork,
    /// Step m at which the flow constraint applies.
    pub step: usize,
    /// Yᵐ for NPS, Y^{m−1} for RPS.
    pub frozen_admittance: DVector<f64>,
    pub base_injection: DVector<f64>,
    pub weights: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Branch indices of the constrained edges.
    pub constrained_edges: Vec<usize>,
    /// σ_e per constrained edge.
    pub flow_limits: DVector<f64>,
    pub constraints: ConstraintMap,
    pub model: Option<LinearFlowModel>,
}

impl<'a> SheddingProblem<'a> {
    pub fn n_blocks(&self) -> usize {
        self.constraints.blocks.len()
    }

    pub fn n_buses(&self) -> usize {
        self.base_injection.len()
    }

    /// Steps at which the blocks are applied.
    pub fn block_steps(&self) -> Vec<usize> {
        match self.variant {
            Scheme::Nps => vec![self.step],
            Scheme::Rps => vec![self.step - 1, self.step],
        }
    }

    /// Constrained-edge flows for the given blocks.
    pub fn edge_flows(&self, primal: &[DVector<f64>]) -> DVector<f64> {
        self.constraints.eval(primal)
    }

    /// Same problem with every box, weight and limit kept but a new
    /// constraint map. Used by tests to build oracles.
    pub fn with_constraints(&self, constraints: ConstraintMap) -> Self {
        SheddingProblem {
            constraints,
            ..self.clone()
        }
    }
}

fn live_edges(network: &PowerNetwork, y: &DVector<f64>) -> (Vec<usize>, DVector<f64>) {
    let edges: Vec<usize> = (0..network.n_branches()).filter(|&l| y[l] > LIVE_ADMITTANCE).collect();
    let limits = DVector::from_iterator(
        edges.len(),
        edges.iter().map(|&l| network.branches()[l].flow_threshold),
    );
    (edges, limits)
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// NPS problem constrained at step m of an unprotected trajectory.
///
/// If the trajectory stopped before m, its last state is used.
pub fn build_nps_problem<'a>(
    network: &'a PowerNetwork,
    cascade: &CascadeTrajectory,
    m: usize,
) -> Result<SheddingProblem<'a>> {
    if m < 1 {
        return Err(invalid("shedding step m must be at least 1"));
    }
    let y = cascade.at(m).admittance.clone();
    nps_problem_at(network, &y, m)
}

/// NPS problem for explicit frozen admittances.
pub fn nps_problem_at<'a>(
    network: &'a PowerNetwork,
    frozen: &DVector<f64>,
    m: usize,
) -> Result<SheddingProblem<'a>> {
    let (edges, limits) = live_edges(network, frozen);
    let jac = flow_jacobian_injections(network, frozen)?;
    let n_e = edges.len();
    Ok(SheddingProblem {
        variant: Scheme::Nps,
        network,
        step: m,
        frozen_admittance: frozen.clone(),
        base_injection: network.base_injections(),
        weights: network.weights(),
        lower: network.injection_min(),
        upper: network.injection_max(),
        constrained_edges: edges.clone(),
        flow_limits: limits,
        constraints: ConstraintMap {
            offset: DVector::zeros(n_e),
            blocks: vec![select_rows(&jac, &edges)],
        },
        model: None,
    })
}

/// RPS problem over steps m−1 and m from a linearization at Y^{m−1}.
///
/// Constrained edges are those alive in Yᵐ under P⁰.
pub fn build_rps_problem<'a>(
    network: &'a PowerNetwork,
    model: LinearFlowModel,
    m: usize,
) -> Result<SheddingProblem<'a>> {
    if m < 2 {
        return Err(invalid("RPS needs m ≥ 2"));
    }
    let (edges, limits) = live_edges(network, &model.admittance_at_base);
    let prev = select_rows(&model.coeff_prev, &edges);
    let curr = select_rows(&model.coeff_curr, &edges);
    let constant = DVector::from_iterator(edges.len(), edges.iter().map(|&l| model.constant[l]));
    let offset = constant - &prev * &model.base_injection;
    Ok(SheddingProblem {
        variant: Scheme::Rps,
        network,
        step: m,
        frozen_admittance: model.admittance_prev.clone(),
        base_injection: network.base_injections(),
        weights: network.weights(),
        lower: network.injection_min(),
        upper: network.injection_max(),
        constrained_edges: edges,
        flow_limits: limits,
        constraints: ConstraintMap {
            offset,
            blocks: vec![prev, curr],
        },
        model: Some(model),
    })
}

/// Primal-dual state of the saddle dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    /// One block (NPS) or two blocks (RPS: P^{m−1}, Pᵐ).
    pub primal: Vec<DVector<f64>>,
    pub lambda: DVector<f64>,
    pub tau_upper: Vec<DVector<f64>>,
    pub tau_lower: Vec<DVector<f64>>,
    pub time: f64,
}

impl SaddleState {
    /// P = P⁰ in every block, all multipliers zero.
    pub fn initial(problem: &SheddingProblem) -> Self {
        let k = problem.n_blocks();
        let n = problem.n_buses();
        SaddleState {
            primal: vec![problem.base_injection.clone(); k],
            lambda: DVector::zeros(problem.constrained_edges.len()),
            tau_upper: vec![DVector::zeros(n); k],
            tau_lower: vec![DVector::zeros(n); k],
            time: 0.0,
        }
    }

    fn vectors(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.primal
            .iter()
            .chain(std::iter::once(&self.lambda))
            .chain(self.tau_upper.iter())
            .chain(self.tau_lower.iter())
    }

    fn vectors_mut(&mut self) -> impl Iterator<Item = &mut DVector<f64>> {
        self.primal
            .iter_mut()
            .chain(std::iter::once(&mut self.lambda))
            .chain(self.tau_upper.iter_mut())
            .chain(self.tau_lower.iter_mut())
    }

    /// All components flattened in the order primal, λ, τ̄, τ̲.
    pub fn flatten(&self) -> Vec<f64> {
        self.vectors().flat_map(|v| v.iter().copied()).collect()
    }

    /// `self + h · other`, time unchanged.
    pub fn axpy(&self, h: f64, other: &SaddleState) -> SaddleState {
        let mut out = self.clone();
        for (a, b) in out.vectors_mut().zip(other.vectors()) {
            a.axpy(h, b, 1.0);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &SaddleState) -> f64 {
        self.vectors()
            .zip(other.vectors())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.vectors().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn clamp_multipliers(&mut self) {
        let clamp = |v: &mut DVector<f64>| v.apply(|x| *x = x.max(0.0));
        clamp(&mut self.lambda);
        self.tau_upper.iter_mut().for_each(clamp);
        self.tau_lower.iter_mut().for_each(clamp);
    }
}
