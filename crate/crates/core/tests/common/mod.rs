#![allow(dead_code)]

use std::path::PathBuf;

use cascade_core::cascade::SmoothingParams;
use cascade_core::netmodel::{load_case_file, Branch, Bus, BusKind, PowerNetwork};
use cascade_core::powerflow::solve_flow;
use cascade_core::solver::{rps_linearize, SaddleState, SheddingProblem, SolverConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default solver settings with room for slow settling: with tight limits
/// the multiplier dynamics scale with σ and can take 10⁴ s to settle.
pub fn toy_config(dt: f64) -> SolverConfig {
    SolverConfig {
        dt,
        max_time: 1e5,
        ..SolverConfig::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// IEEE 57 with every threshold at 1 pu.
pub fn ieee57() -> PowerNetwork {
    load_case_file(&data_path("case57.m"))
        .unwrap()
        .with_thresholds(Some(1.0), &[])
        .unwrap()
}

pub struct BusSpec {
    pub p0: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn bus(p0: f64, lo: f64, hi: f64) -> BusSpec {
    BusSpec { p0, lo, hi }
}

/// Network from bus specs and `(from, to, y, c)` edges with 0-based endpoints.
pub fn network(buses: &[BusSpec], edges: &[(usize, usize, f64, f64)]) -> PowerNetwork {
    let buses = buses
        .iter()
        .enumerate()
        .map(|(i, b)| Bus {
            id: i + 1,
            kind: if b.p0 > 0.0 { BusKind::Generator } else { BusKind::Load },
            base_injection: b.p0,
            injection_min: b.lo,
            injection_max: b.hi,
            weight: 1.0,
        })
        .collect();
    let branches = edges
        .iter()
        .enumerate()
        .map(|(l, &(f, t, y, c))| Branch {
            id: l + 1,
            from_bus: f,
            to_bus: t,
            admittance: y,
            flow_threshold: c,
        })
        .collect();
    PowerNetwork::new(buses, branches, 100.0).unwrap()
}

/// Random connected network with n buses: a random spanning tree plus
/// `extra` chords. Injections are balanced; generators may drop to zero and
/// loads may be shed fully.
pub fn random_network(r: &mut impl Rng, n: usize, extra: usize, limit: f64) -> PowerNetwork {
    let mut edges = Vec::new();
    for i in 1..n {
        let j = r.gen_range(0..i);
        edges.push((j, i, r.gen_range(0.5..3.0), limit));
    }
    for _ in 0..extra {
        let a = r.gen_range(0..n);
        let b = r.gen_range(0..n);
        if a != b && !edges.iter().any(|e| (e.0 == a && e.1 == b) || (e.0 == b && e.1 == a)) {
            edges.push((a.min(b), a.max(b), r.gen_range(0.5..3.0), limit));
        }
    }
    let mut p: Vec<f64> = (0..n).map(|_| r.gen_range(-1.5..1.5)).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    let buses: Vec<BusSpec> = p
        .iter()
        .map(|&v| if v > 0.0 { bus(v, 0.0, v + 0.5) } else { bus(v, v, 0.0) })
        .collect();
    network(&buses, &edges)
}

/// Random 3–5 bus network whose thresholds sit at 0.5–1.1 of the base-case
/// flows, so some flow limits bind.
pub fn nps_toy(r: &mut impl Rng) -> PowerNetwork {
    let n = r.gen_range(3..=5);
    let extra = r.gen_range(0..3);
    let net = random_network(r, n, extra, 1.0);
    let flows = solve_flow(&net, &net.admittances(), &net.base_injections()).unwrap().branch_flows;
    let overrides: Vec<(usize, f64)> = net
        .branches()
        .iter()
        .enumerate()
        .map(|(l, br)| (br.id, (flows[l].abs() * r.gen_range(0.5..1.1)).max(0.05)))
        .collect();
    net.with_thresholds(None, &overrides).unwrap()
}

/// Random 3–4 bus network with thresholds near the base-case flows so that,
/// with a small σ, step-(m−1) flows sit inside the survival band and move
/// the step-m flows.
pub fn rps_toy(r: &mut impl Rng, sigma: f64) -> PowerNetwork {
    loop {
        let n = r.gen_range(3..=4);
        let extra = r.gen_range(1..3);
        let net = random_network(r, n, extra, 1.0);
        let flows = solve_flow(&net, &net.admittances(), &net.base_injections()).unwrap().branch_flows;
        let overrides: Vec<(usize, f64)> = net
            .branches()
            .iter()
            .enumerate()
            .map(|(l, br)| (br.id, (flows[l].abs() * r.gen_range(0.8..1.2)).max(0.3)))
            .collect();
        let net = net.with_thresholds(None, &overrides).unwrap();
        let model = rps_linearize(&net, &net.admittances(), &net.base_injections(), &SmoothingParams::smooth(sigma)).unwrap();
        if model.coeff_prev.amax() > 0.05 {
            return net;
        }
    }
}

/// Random symmetric weighted Laplacian, possibly disconnected.
pub fn random_laplacian(r: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, n);
    let density = r.gen_range(0.1..0.9);
    for i in 0..n {
        for j in (i + 1)..n {
            if r.gen_bool(density) {
                let y = r.gen_range(0.01..10.0);
                b[(i, i)] += y;
                b[(j, j)] += y;
                b[(i, j)] -= y;
                b[(j, i)] -= y;
            }
        }
    }
    b
}

/// Optimum of a shedding problem with the quadratic flow constraints
/// replaced by `−σ ≤ h ≤ σ`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: Vec<DVector<f64>>,
    pub lambda: DVector<f64>,
    pub tau_upper: Vec<DVector<f64>>,
    pub tau_lower: Vec<DVector<f64>>,
    pub objective: f64,
}

impl QpSolution {
    pub fn state(&self) -> SaddleState {
        SaddleState {
            primal: self.primal.clone(),
            lambda: self.lambda.clone(),
            tau_upper: self.tau_upper.clone(),
            tau_lower: self.tau_lower.clone(),
            time: 0.0,
        }
    }
}

/// Exact QP by enumerating active sets in order of size.
///
/// Variables are the stacked blocks. Constraint rows come in exclusive
/// pairs (upper/lower flow limit of an edge, upper/lower bound of a
/// variable), so at most one row of each pair enters a candidate set. The
/// first candidate whose KKT system has nonnegative multipliers and a
/// feasible solution is the unique optimum of the strictly convex problem.
/// `None` means the problem is infeasible.
pub fn qp_oracle(problem: &SheddingProblem) -> Option<QpSolution> {
    let k = problem.n_blocks();
    let n = problem.n_buses();
    let nv = k * n;
    let ne = problem.constrained_edges.len();
    let w2 = problem.weights.component_mul(&problem.weights);

    // rows: G x ≤ g; pairs[p] = (row+, row−)
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut g_rhs: Vec<f64> = Vec::new();
    let mut pairs = Vec::new();
    for e in 0..ne {
        let mut row = DVector::zeros(nv);
        for b in 0..k {
            for i in 0..n {
                row[b * n + i] = problem.constraints.blocks[b][(e, i)];
            }
        }
        let off = problem.constraints.offset[e];
        let s = problem.flow_limits[e];
        pairs.push((g_rows.len(), g_rows.len() + 1));
        g_rows.push(row.clone());
        g_rhs.push(s - off);
        g_rows.push(-row);
        g_rhs.push(s + off);
    }
    for b in 0..k {
        for i in 0..n {
            let mut row = DVector::zeros(nv);
            row[b * n + i] = 1.0;
            pairs.push((g_rows.len(), g_rows.len() + 1));
            g_rows.push(row.clone());
            g_rhs.push(problem.upper[i]);
            g_rows.push(-row);
            g_rhs.push(-problem.lower[i]);
        }
    }
    let q_diag = DVector::from_iterator(nv, (0..nv).map(|v| 2.0 * w2[v % n]));
    let c = DVector::from_iterator(nv, (0..nv).map(|v| -2.0 * w2[v % n] * problem.base_injection[v % n]));

    let feasible = |x: &DVector<f64>| g_rows.iter().zip(&g_rhs).all(|(r, &b)| r.dot(x) <= b + 1e-9);

    let np = pairs.len();
    for size in 0..=nv.min(np) {
        let mut found = None;
        combos(np, size, &mut |pick: &[usize]| {
            // each picked pair contributes one of its two rows
            let total = 1usize << pick.len();
            for mask in 0..total {
                let rows: Vec<usize> = pick
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| if mask >> j & 1 == 0 { pairs[p].0 } else { pairs[p].1 })
                    .collect();
                if let Some((x, mu)) = kkt_solve(&q_diag, &c, &g_rows, &g_rhs, &rows) {
                    if mu.iter().all(|&m| m >= -1e-10) && feasible(&x) {
                        found = Some((x, rows, mu));
                        return true;
                    }
                }
            }
            false
        });
        if let Some((x, rows, mu)) = found {
            return Some(assemble(problem, &x, &rows, &mu, ne));
        }
    }
    None
}

fn assemble(problem: &SheddingProblem, x: &DVector<f64>, rows: &[usize], mu: &DVector<f64>, ne: usize) -> QpSolution {
    let k = problem.n_blocks();
    let n = problem.n_buses();
    let primal: Vec<DVector<f64>> = (0..k).map(|b| x.rows(b * n, n).into_owned()).collect();
    let mut lambda = DVector::zeros(ne);
    let mut tau_upper = vec![DVector::zeros(n); k];
    let mut tau_lower = vec![DVector::zeros(n); k];
    for (&r, &m) in rows.iter().zip(mu.iter()) {
        let m = m.max(0.0);
        if r < 2 * ne {
            let e = r / 2;
            lambda[e] += m / (2.0 * problem.flow_limits[e]);
        } else {
            let v = (r - 2 * ne) / 2;
            let (b, i) = (v / n, v % n);
            if (r - 2 * ne) % 2 == 0 {
                tau_upper[b][i] += m;
            } else {
                tau_lower[b][i] += m;
            }
        }
    }
    let objective = primal
        .iter()
        .map(|p| (p - &problem.base_injection).component_mul(&problem.weights).norm_squared())
        .sum();
    QpSolution {
        primal,
        lambda,
        tau_upper,
        tau_lower,
        objective,
    }
}

fn kkt_solve(
    q: &DVector<f64>,
    c: &DVector<f64>,
    g: &[DVector<f64>],
    h: &[f64],
    rows: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let nv = q.len();
    let na = rows.len();
    let mut k = DMatrix::zeros(nv + na, nv + na);
    let mut rhs = DVector::zeros(nv + na);
    for v in 0..nv {
        k[(v, v)] = q[v];
        rhs[v] = -c[v];
    }
    for (a, &r) in rows.iter().enumerate() {
        for v in 0..nv {
            k[(v, nv + a)] = g[r][v];
            k[(nv + a, v)] = g[r][v];
        }
        rhs[nv + a] = h[r];
    }
    let sol = k.clone().lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) || (&k * &sol - &rhs).amax() > 1e-8 {
        return None;
    }
    // reject rank-deficient active sets
    let svals = k.singular_values();
    if svals.min() < 1e-10 * svals.max() {
        return None;
    }
    Some((sol.rows(0, nv).into_owned(), sol.rows(nv, na).into_owned()))
}

/// Visit every `size`-subset of `0..n`; stop when `f` returns true.
fn combos(n: usize, size: usize, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    fn rec(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if left == 0 {
            return f(cur);
        }
        for i in start..=n - left {
            cur.push(i);
            if rec(i + 1, n, left - 1, cur, f) {
                return true;
            }
            cur.pop();
        }
        false
    }
    if size > n {
        return false;
    }
    rec(0, n, size, &mut Vec::new(), f)
}

/// Central finite difference of `f` along each coordinate of `x`.
pub fn fd_gradient(x: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        }),
    )
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
