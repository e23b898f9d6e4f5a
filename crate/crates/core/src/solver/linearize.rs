use nalgebra::{DMatrix, DVector};

use crate::cascade::{next_admittance, survival_derivative, SmoothingParams};
use crate::error::{invalid, Result};
use crate::netmodel::PowerNetwork;
use crate::powerflow::{flow_jacobian_admittance, flow_jacobian_injections, solve_flow};

/// First-order model of the step-m flows as a function of the injections
/// at steps m−1 and m, expanded about (P⁰, P⁰):
///
/// `P̂ᵐ = constant + coeff_prev (P^{m−1} − P⁰) + coeff_curr Pᵐ`.
///
/// All rows are per branch (n_b); restriction to the constrained edges
/// happens when the problem is built.
#[derive(Debug, Clone)]
pub struct LinearFlowModel {
    pub constant: DVector<f64>,
    pub coeff_prev: DMatrix<f64>,
    pub coeff_curr: DMatrix<f64>,
    pub base_injection: DVector<f64>,
    /// Y^{m−1}.
    pub admittance_prev: DVector<f64>,
    /// Yᵐ reached when P^{m−1} = P⁰.
    pub admittance_at_base: DVector<f64>,
    pub smoothing: SmoothingParams,
}

impl LinearFlowModel {
    pub fn evaluate(&self, p_prev: &DVector<f64>, p_curr: &DVector<f64>) -> DVector<f64> {
        &self.constant + &self.coeff_prev * (p_prev - &self.base_injection) + &self.coeff_curr * p_curr
    }
}

/// Linearize the two-step flow map at Y^{m−1} about (P⁰, P⁰).
///
/// The chain is `coeff_prev = ∂F/∂Y (Yᵐ, P⁰) · diag(g′(f^{m−1}) ∘ Y^{m−1}) · ∂F/∂P (Y^{m−1})`
/// and `coeff_curr = ∂F/∂P (Yᵐ)`. Needs the smooth survival model.
pub fn rps_linearize(
    network: &PowerNetwork,
    y_prev: &DVector<f64>,
    p0: &DVector<f64>,
    params: &SmoothingParams,
) -> Result<LinearFlowModel> {
    if y_prev.len() != network.n_branches() || p0.len() != network.n_buses() {
        return Err(invalid("linearization inputs have wrong dimensions"));
    }
    let flows_prev = solve_flow(network, y_prev, p0)?.branch_flows;
    let mut chain = DVector::zeros(network.n_branches());
    for (l, br) in network.branches().iter().enumerate() {
        chain[l] = survival_derivative(flows_prev[l], br.flow_threshold, params)? * y_prev[l];
    }
    let y_m = next_admittance(network, y_prev, &flows_prev, params);
    let coeff_curr = flow_jacobian_injections(network, &y_m)?;
    let coeff_prev = if chain.iter().all(|&c| c == 0.0) {
        DMatrix::zeros(network.n_branches(), network.n_buses())
    } else {
        let jy = flow_jacobian_admittance(network, &y_m, p0)?.matrix;
        let mut jp = flow_jacobian_injections(network, y_prev)?;
        for (mut row, &c) in jp.row_iter_mut().zip(chain.iter()) {
            row *= c;
        }
        jy * jp
    };
    let exact = solve_flow(network, &y_m, p0)?.branch_flows;
    let constant = exact - &coeff_curr * p0;
    Ok(LinearFlowModel {
        constant,
        coeff_prev,
        coeff_curr,
        base_injection: p0.clone(),
        admittance_prev: y_prev.clone(),
        admittance_at_base: y_m,
        smoothing: *params,
    })
}

/// Exact step-m flows after injecting `p_prev` at step m−1 and `p_curr` at
/// step m, starting from Y^{m−1}.
pub fn exact_two_step_flows(
    network: &PowerNetwork,
    y_prev: &DVector<f64>,
    p_prev: &DVector<f64>,
    p_curr: &DVector<f64>,
    params: &SmoothingParams,
) -> Result<DVector<f64>> {
    let f = solve_flow(network, y_prev, p_prev)?.branch_flows;
    let y_m = next_admittance(network, y_prev, &f, params);
    Ok(solve_flow(network, &y_m, p_curr)?.branch_flows)
}
