//! DC power flow through the pseudoinverse of the weighted Laplacian.
//!
//! With incidence `A` and admittances `Y`, `B = Aᵀ diag(Y) A`, angles are
//! `θ = B⁺ P` and branch flows are `Y ∘ (A θ)`. On a disconnected network
//! the pseudoinverse solves each island independently, provided each island
//! is balanced.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::netmodel::PowerNetwork;

/// Admittances at or below this count as severed.
pub const LIVE_ADMITTANCE: f64 = 1e-9;

/// Relative eigenvalue cutoff used by [`generalized_inverse`].
pub const PINV_RCOND: f64 = 1e-9;

/// Result of [`solve_flow`].
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub angles: DVector<f64>,
    pub branch_flows: DVector<f64>,
    pub laplacian_pinv: DMatrix<f64>,
    /// Island label per bus (0-based, in order of first appearance).
    pub components: Vec<usize>,
    /// Net injection per island.
    pub component_imbalance: Vec<f64>,
}

impl FlowSolution {
    /// Fail if any island's net injection exceeds `tol`.
    pub fn ensure_balanced(&self, tol: f64) -> Result<()> {
        match self
            .component_imbalance
            .iter()
            .enumerate()
            .find(|(_, v)| v.abs() > tol)
        {
            Some((component, &imbalance)) => Err(Error::InfeasibleFlow {
                component,
                imbalance,
            }),
            None => Ok(()),
        }
    }
}

fn check_admittance(network: &PowerNetwork, y: &DVector<f64>) -> Result<()> {
    if y.len() != network.n_branches() {
        return Err(invalid(format!(
            "admittance vector has {} entries, network has {} branches",
            y.len(),
            network.n_branches()
        )));
    }
    if let Some(l) = y.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid(format!(
            "admittance of branch {} is {}",
            network.branches()[l].id,
            y[l]
        )));
    }
    Ok(())
}

/// Weighted Laplacian `Aᵀ diag(Y) A`.
pub fn laplacian(network: &PowerNetwork, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_admittance(network, y)?;
    let n = network.n_buses();
    let mut b = DMatrix::zeros(n, n);
    for (br, &yl) in network.branches().iter().zip(y.iter()) {
        let (i, j) = (br.from_bus, br.to_bus);
        b[(i, i)] += yl;
        b[(j, j)] += yl;
        b[(i, j)] -= yl;
        b[(j, i)] -= yl;
    }
    Ok(b)
}

/// Moore–Penrose pseudoinverse of a symmetric matrix.
///
/// Eigenvalues below `PINV_RCOND · λmax` are treated as zero.
pub fn generalized_inverse(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !b.is_square() {
        return Err(invalid("pseudoinverse needs a square matrix"));
    }
    let scale = b.amax().max(1.0);
    let asym = (b - b.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let n = b.nrows();
    // nalgebra's SymmetricEigen occasionally returns a wrong basis on
    // well-conditioned Laplacians, so the decomposition goes through faer
    let eig = faer::Mat::<f64>::from_fn(n, n, |i, j| b[(i, j)])
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| invalid(format!("eigendecomposition failed: {e:?}")))?;
    let (vecs, vals) = (eig.U(), eig.S());
    let lmax = (0..n).fold(0.0_f64, |m, k| m.max(vals[k].abs()));
    let mut out = DMatrix::zeros(n, n);
    if lmax == 0.0 {
        return Ok(out);
    }
    let cut = PINV_RCOND * lmax;
    for k in 0..n {
        let lam = vals[k];
        if lam.abs() > cut {
            let v = DVector::from_fn(n, |i, _| vecs[(i, k)]);
            out.ger(1.0 / lam, &v, &v, 1.0);
        }
    }
    Ok((&out + out.transpose()) * 0.5)
}

/// Islands of the live subgraph (Y > [`LIVE_ADMITTANCE`]).
pub fn components(network: &PowerNetwork, y: &DVector<f64>) -> Vec<usize> {
    let n = network.n_buses();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (br, &yl) in network.branches().iter().zip(y.iter()) {
        if yl > LIVE_ADMITTANCE {
            let (a, b) = (root(&mut parent, br.from_bus), root(&mut parent, br.to_bus));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[i] = label[r];
    }
    out
}

/// Solve the DC flow for admittances `y` and injections `p`.
///
/// Unbalanced islands are not an error here; their imbalance is reported in
/// [`FlowSolution::component_imbalance`] and the pseudoinverse returns the
/// least-squares angles. Use [`FlowSolution::ensure_balanced`] for a strict
/// check.
pub fn solve_flow(network: &PowerNetwork, y: &DVector<f64>, p: &DVector<f64>) -> Result<FlowSolution> {
    if p.len() != network.n_buses() {
        return Err(invalid(format!(
            "injection vector has {} entries, network has {} buses",
            p.len(),
            network.n_buses()
        )));
    }
    let b = laplacian(network, y)?;
    let pinv = generalized_inverse(&b)?;
    let angles = &pinv * p;
    let branch_flows = branch_flows(network, y, &angles);
    let comps = components(network, y);
    let n_comp = comps.iter().max().map_or(0, |m| m + 1);
    let mut imbalance = vec![0.0; n_comp];
    for (i, &c) in comps.iter().enumerate() {
        imbalance[c] += p[i];
    }
    Ok(FlowSolution {
        angles,
        branch_flows,
        laplacian_pinv: pinv,
        components: comps,
        component_imbalance: imbalance,
    })
}

fn branch_flows(network: &PowerNetwork, y: &DVector<f64>, angles: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        network.n_branches(),
        network
            .branches()
            .iter()
            .zip(y.iter())
            .map(|(br, &yl)| yl * (angles[br.from_bus] - angles[br.to_bus])),
    )
}

/// `∂flows/∂P = diag(Y) A B⁺` (n_b × n).
pub fn flow_jacobian_injections(network: &PowerNetwork, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let pinv = generalized_inverse(&laplacian(network, y)?)?;
    let mut j = network.incidence() * pinv;
    for (mut row, &yl) in j.row_iter_mut().zip(y.iter()) {
        row *= yl;
    }
    Ok(j)
}

/// Jacobian of the flows with respect to the admittances.
#[derive(Debug, Clone)]
pub struct AdmittanceJacobian {
    /// n_b × n_b, entry (l, q) = ∂flow_l / ∂Y_q.
    pub matrix: DMatrix<f64>,
    /// Columns q where the flow map is not differentiable: the endpoints of
    /// branch q lie in different islands, so raising Y_q changes the rank
    /// of B.
    pub non_smooth: Vec<usize>,
}

/// `∂flows/∂Y` at (Y, P).
///
/// With `M = A B⁺ Aᵀ` and angle differences `d = A θ`,
/// `∂flow_l/∂Y_q = δ_lq d_l − Y_l M_lq d_q`. Valid where the island
/// structure is locally constant.
pub fn flow_jacobian_admittance(
    network: &PowerNetwork,
    y: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<AdmittanceJacobian> {
    let sol = solve_flow(network, y, p)?;
    let a = network.incidence();
    let m = a * &sol.laplacian_pinv * a.transpose();
    let d = a * &sol.angles;
    let nb = network.n_branches();
    let mut jac = DMatrix::zeros(nb, nb);
    for q in 0..nb {
        for l in 0..nb {
            jac[(l, q)] = -y[l] * m[(l, q)] * d[q];
        }
        jac[(q, q)] += d[q];
    }
    let non_smooth = network
        .branches()
        .iter()
        .enumerate()
        .filter(|(_, br)| sol.components[br.from_bus] != sol.components[br.to_bus])
        .map(|(q, _)| q)
        .collect();
    Ok(AdmittanceJacobian {
        matrix: jac,
        non_smooth,
    })
}
