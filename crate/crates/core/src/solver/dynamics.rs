use nalgebra::DVector;

use super::{SaddleState, Scheme, SheddingProblem, SolverConfig};
use crate::error::{invalid, Error, Result};

/// `[x]⁺_y`: x when y > 0, otherwise max(x, 0).
pub fn projection(x: f64, y: f64) -> Result<f64> {
    if y < 0.0 {
        return Err(Error::NegativeMultiplier(y));
    }
    Ok(project(x, y))
}

fn project(x: f64, y: f64) -> f64 {
    if y > 0.0 {
        x
    } else {
        x.max(0.0)
    }
}

/// `Σ_k ‖W ∘ (Pᵏ − P⁰)‖²`.
pub fn objective(primal: &[DVector<f64>], problem: &SheddingProblem) -> f64 {
    primal
        .iter()
        .map(|p| (p - &problem.base_injection).component_mul(&problem.weights).norm_squared())
        .sum()
}

/// Full Lagrangian of either scheme.
pub fn lagrangian(state: &SaddleState, problem: &SheddingProblem) -> f64 {
    let h = problem.edge_flows(&state.primal);
    let mut l = objective(&state.primal, problem);
    for e in 0..h.len() {
        l += state.lambda[e] * (h[e] * h[e] - problem.flow_limits[e].powi(2));
    }
    for (k, p) in state.primal.iter().enumerate() {
        l += state.tau_upper[k].dot(&(p - &problem.upper));
        l += state.tau_lower[k].dot(&(&problem.lower - p));
    }
    l
}

pub fn nps_lagrangian(state: &SaddleState, problem: &SheddingProblem) -> Result<f64> {
    require(problem, Scheme::Nps)?;
    Ok(lagrangian(state, problem))
}

fn require(problem: &SheddingProblem, variant: Scheme) -> Result<()> {
    if problem.variant != variant {
        return Err(invalid(format!("expected a {variant} problem, got {}", problem.variant)));
    }
    Ok(())
}

/// ∇_{Pᵏ} L for every block.
fn primal_gradient(state: &SaddleState, problem: &SheddingProblem, h: &DVector<f64>) -> Vec<DVector<f64>> {
    let w2 = problem.weights.component_mul(&problem.weights);
    let lh = state.lambda.component_mul(h);
    state
        .primal
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut g = (p - &problem.base_injection).component_mul(&w2) * 2.0;
            g.gemv_tr(2.0, &problem.constraints.blocks[k], &lh, 1.0);
            g += &state.tau_upper[k];
            g -= &state.tau_lower[k];
            g
        })
        .collect()
}

/// Right-hand side of the projected saddle dynamics.
///
/// `Ṗᵏ = −∇_{Pᵏ} L`, `λ̇ = [h² − σ²]⁺_λ`, `τ̄̇ᵏ = [Pᵏ − P̄]⁺_τ̄`,
/// `τ̲̇ᵏ = [P̲ − Pᵏ]⁺_τ̲`. The returned state has time 0.
pub fn rhs(state: &SaddleState, problem: &SheddingProblem) -> SaddleState {
    let h = problem.edge_flows(&state.primal);
    let primal = primal_gradient(state, problem, &h)
        .into_iter()
        .map(|g| -g)
        .collect();
    let lambda = DVector::from_iterator(
        h.len(),
        (0..h.len()).map(|e| project(h[e] * h[e] - problem.flow_limits[e].powi(2), state.lambda[e])),
    );
    let n = problem.n_buses();
    let tau_upper = state
        .primal
        .iter()
        .zip(&state.tau_upper)
        .map(|(p, t)| DVector::from_iterator(n, (0..n).map(|i| project(p[i] - problem.upper[i], t[i]))))
        .collect();
    let tau_lower = state
        .primal
        .iter()
        .zip(&state.tau_lower)
        .map(|(p, t)| DVector::from_iterator(n, (0..n).map(|i| project(problem.lower[i] - p[i], t[i]))))
        .collect();
    SaddleState {
        primal,
        lambda,
        tau_upper,
        tau_lower,
        time: 0.0,
    }
}

pub fn nps_rhs(state: &SaddleState, problem: &SheddingProblem) -> Result<SaddleState> {
    require(problem, Scheme::Nps)?;
    Ok(rhs(state, problem))
}

pub fn rps_rhs(state: &SaddleState, problem: &SheddingProblem) -> Result<SaddleState> {
    require(problem, Scheme::Rps)?;
    Ok(rhs(state, problem))
}

/// Output of [`integrate`].
#[derive(Debug, Clone)]
pub struct Integration {
    pub solution: SaddleState,
    /// Every Euler iterate, starting with the initial state.
    pub trajectory: Vec<SaddleState>,
    pub converged: bool,
    pub steps: usize,
}

/// Forward-Euler integration of the saddle dynamics from P = P⁰ with zero
/// multipliers.
///
/// Runs at least to `config.horizon`, then until the per-step change drops
/// to `convergence_tol` or `max_time` is reached.
pub fn integrate(problem: &SheddingProblem, config: &SolverConfig) -> Result<Integration> {
    config.validate()?;
    let mut state = SaddleState::initial(problem);
    let mut trajectory = vec![state.clone()];
    let mut steps = 0;
    let eps = 1e-9 * config.dt;
    let converged = loop {
        let d = rhs(&state, problem);
        let mut next = state.axpy(config.dt, &d);
        next.clamp_multipliers();
        steps += 1;
        next.time = steps as f64 * config.dt;
        if !next.is_finite() {
            return Err(Error::Divergence {
                step: steps,
                time: next.time,
            });
        }
        let change = next.max_abs_diff(&state);
        state = next;
        trajectory.push(state.clone());
        if state.time + eps >= config.horizon && change <= config.convergence_tol {
            break true;
        }
        if state.time + eps >= config.max_time {
            break false;
        }
    };
    Ok(Integration {
        solution: state,
        trajectory,
        converged,
        steps,
    })
}

/// ∞-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub comp_slack: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feas)
            .max(self.dual_feas)
            .max(self.comp_slack)
    }
}

pub fn kkt_residual(state: &SaddleState, problem: &SheddingProblem) -> KktResidual {
    let h = problem.edge_flows(&state.primal);
    let stationarity = primal_gradient(state, problem, &h)
        .iter()
        .map(|g| g.amax())
        .fold(0.0, f64::max);
    let mut primal_feas: f64 = 0.0;
    let mut comp_slack: f64 = 0.0;
    let mut dual_feas: f64 = 0.0;
    for e in 0..h.len() {
        let slack = h[e] * h[e] - problem.flow_limits[e].powi(2);
        primal_feas = primal_feas.max(slack);
        comp_slack = comp_slack.max((state.lambda[e] * slack).abs());
        dual_feas = dual_feas.max(-state.lambda[e]);
    }
    for (k, p) in state.primal.iter().enumerate() {
        for i in 0..p.len() {
            let up = p[i] - problem.upper[i];
            let lo = problem.lower[i] - p[i];
            primal_feas = primal_feas.max(up).max(lo);
            comp_slack = comp_slack
                .max((state.tau_upper[k][i] * up).abs())
                .max((state.tau_lower[k][i] * lo).abs());
            dual_feas = dual_feas
                .max(-state.tau_upper[k][i])
                .max(-state.tau_lower[k][i]);
        }
    }
    KktResidual {
        stationarity,
        primal_feas,
        dual_feas,
        comp_slack,
    }
}
