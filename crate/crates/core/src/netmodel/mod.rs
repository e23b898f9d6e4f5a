//! Network data model: buses, branches, incidence matrix and case loading.
//!
//! Bus and branch ids are the 1-based external ids from the case file.
//! Everything else in the crate addresses buses and branches by their
//! 0-based position in [`PowerNetwork::buses`] / [`PowerNetwork::branches`].

mod json;
mod matpower;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use json::{parse_json_case, write_json_case};
pub use matpower::parse_matpower;

/// Largest allowed |Σ P⁰| after netting, in pu.
pub const BALANCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Net injection P⁰ in pu (generation minus load).
    pub base_injection: f64,
    pub injection_min: f64,
    pub injection_max: f64,
    /// Shedding cost weight W.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: usize,
    /// Internal bus index.
    pub from_bus: usize,
    /// Internal bus index.
    pub to_bus: usize,
    pub admittance: f64,
    pub flow_threshold: f64,
}

/// A validated DC network.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    incidence: DMatrix<f64>,
    base_mva: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Json,
    Matpower,
}

impl CaseFormat {
    /// `.m` is MATPOWER, anything else is treated as JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("m") => CaseFormat::Matpower,
            _ => CaseFormat::Json,
        }
    }
}

fn validation(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation {
        location: location.into(),
        message: message.into(),
    }
}

impl PowerNetwork {
    /// Build and validate a network.
    ///
    /// Checks endpoints, positive admittances and thresholds, positive
    /// weights, `pmin <= p0 <= pmax` and total balance within [`BALANCE_TOL`].
    pub fn new(buses: Vec<Bus>, branches: Vec<Branch>, base_mva: f64) -> Result<Self> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(validation("base_mva", format!("must be positive, got {base_mva}")));
        }
        if buses.is_empty() {
            return Err(validation("buses", "network has no buses"));
        }
        let mut seen = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            let loc = format!("bus {}", b.id);
            if seen.insert(b.id, i).is_some() {
                return Err(validation(loc, "duplicate bus id"));
            }
            for (name, v) in [
                ("p0", b.base_injection),
                ("pmin", b.injection_min),
                ("pmax", b.injection_max),
                ("weight", b.weight),
            ] {
                if !v.is_finite() {
                    return Err(validation(&loc, format!("{name} is not finite")));
                }
            }
            if b.weight <= 0.0 {
                return Err(validation(&loc, format!("weight must be positive, got {}", b.weight)));
            }
            let slack = 1e-9 * (1.0 + b.base_injection.abs());
            if b.base_injection < b.injection_min - slack || b.base_injection > b.injection_max + slack
            {
                return Err(validation(
                    &loc,
                    format!(
                        "p0 = {} outside [{}, {}]",
                        b.base_injection, b.injection_min, b.injection_max
                    ),
                ));
            }
        }
        let mut ids = HashMap::new();
        for br in &branches {
            let loc = format!("branch {}", br.id);
            if ids.insert(br.id, ()).is_some() {
                return Err(validation(loc, "duplicate branch id"));
            }
            if br.from_bus >= buses.len() || br.to_bus >= buses.len() {
                return Err(validation(loc, "endpoint out of range"));
            }
            if br.from_bus == br.to_bus {
                return Err(validation(loc, "self-loop"));
            }
            if !(br.admittance.is_finite() && br.admittance > 0.0) {
                return Err(validation(
                    loc,
                    format!("admittance must be positive, got {}", br.admittance),
                ));
            }
            if !(br.flow_threshold.is_finite() && br.flow_threshold > 0.0) {
                return Err(validation(
                    loc,
                    format!("flow threshold must be positive, got {}", br.flow_threshold),
                ));
            }
        }
        let total: f64 = buses.iter().map(|b| b.base_injection).sum();
        if total.abs() > BALANCE_TOL {
            return Err(validation(
                "buses",
                format!("net injection {total:e} pu exceeds balance tolerance"),
            ));
        }
        let incidence = build_incidence(buses.len(), &branches);
        Ok(PowerNetwork {
            buses,
            branches,
            incidence,
            base_mva,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// n_b × n incidence matrix, +1 at the from bus and −1 at the to bus.
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn base_injections(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_buses(), self.buses.iter().map(|b| b.base_injection))
    }

    pub fn injection_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_buses(), self.buses.iter().map(|b| b.injection_min))
    }

    pub fn injection_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_buses(), self.buses.iter().map(|b| b.injection_max))
    }

    pub fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_buses(), self.buses.iter().map(|b| b.weight))
    }

    pub fn admittances(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_branches(), self.branches.iter().map(|b| b.admittance))
    }

    pub fn flow_thresholds(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_branches(),
            self.branches.iter().map(|b| b.flow_threshold),
        )
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn branch_index(&self, id: usize) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    /// Copy with new per-bus weights.
    pub fn with_weights(&self, weights: &DVector<f64>) -> Result<Self> {
        if weights.len() != self.n_buses() {
            return Err(crate::error::invalid("weight vector has wrong length"));
        }
        let mut buses = self.buses.clone();
        for (b, &w) in buses.iter_mut().zip(weights.iter()) {
            b.weight = w;
        }
        PowerNetwork::new(buses, self.branches.clone(), self.base_mva)
    }

    /// Copy with every branch threshold set to `limit`, then per-id overrides applied.
    pub fn with_thresholds(
        &self,
        default: Option<f64>,
        overrides: &[(usize, f64)],
    ) -> Result<Self> {
        let mut branches = self.branches.clone();
        if let Some(c) = default {
            for b in &mut branches {
                b.flow_threshold = c;
            }
        }
        for &(id, c) in overrides {
            let b = branches
                .iter_mut()
                .find(|b| b.id == id)
                .ok_or_else(|| validation(format!("threshold override {id}"), "unknown branch id"))?;
            b.flow_threshold = c;
        }
        PowerNetwork::new(self.buses.clone(), branches, self.base_mva)
    }
}

fn build_incidence(n: usize, branches: &[Branch]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(branches.len(), n);
    for (l, br) in branches.iter().enumerate() {
        a[(l, br.from_bus)] = 1.0;
        a[(l, br.to_bus)] = -1.0;
    }
    a
}

/// Incidence matrix of `network` (n_b × n).
pub fn incidence_matrix(network: &PowerNetwork) -> DMatrix<f64> {
    network.incidence.clone()
}

/// Parse a case from raw bytes.
pub fn load_case(bytes: &[u8], format: CaseFormat) -> Result<PowerNetwork> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        location: format!("byte {}", e.valid_up_to()),
        message: "input is not valid UTF-8".into(),
    })?;
    match format {
        CaseFormat::Json => parse_json_case(text),
        CaseFormat::Matpower => parse_matpower(text),
    }
}

/// Read and parse a case file, choosing the format from the extension.
pub fn load_case_file(path: &Path) -> Result<PowerNetwork> {
    let bytes = std::fs::read(path)?;
    load_case(&bytes, CaseFormat::from_path(path))
}

/// Post-disturbance admittances Y¹ = Y⁰ + δ.
///
/// Entries that land within 1e-12 of zero are snapped to zero. Any negative
/// result is an error.
pub fn apply_disturbance(network: &PowerNetwork, delta: &DVector<f64>) -> Result<DVector<f64>> {
    if delta.len() != network.n_branches() {
        return Err(crate::error::invalid(format!(
            "disturbance has {} entries, network has {} branches",
            delta.len(),
            network.n_branches()
        )));
    }
    let mut y = network.admittances() + delta;
    for (l, v) in y.iter_mut().enumerate() {
        if v.abs() <= 1e-12 {
            *v = 0.0;
        }
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::InvalidDisturbance {
                branch: network.branches[l].id,
                value: *v,
            });
        }
    }
    Ok(y)
}

/// Disturbance that severs the listed branch ids (δ_l = −Y⁰_l).
pub fn sever_branches(network: &PowerNetwork, ids: &[usize]) -> Result<DVector<f64>> {
    let mut delta = DVector::zeros(network.n_branches());
    for &id in ids {
        let l = network
            .branch_index(id)
            .ok_or_else(|| crate::error::invalid(format!("unknown branch id {id}")))?;
        delta[l] = -network.branches[l].admittance;
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: usize, p0: f64) -> Bus {
        Bus {
            id,
            kind: if p0 > 0.0 { BusKind::Generator } else { BusKind::Load },
            base_injection: p0,
            injection_min: p0.min(0.0),
            injection_max: p0.max(0.0),
            weight: 1.0,
        }
    }

    fn branch(id: usize, f: usize, t: usize) -> Branch {
        Branch {
            id,
            from_bus: f,
            to_bus: t,
            admittance: 1.0,
            flow_threshold: 1.0,
        }
    }

    #[test]
    fn incidence_rows_sum_to_zero() {
        let net = PowerNetwork::new(
            vec![bus(1, 1.0), bus(2, 0.0), bus(3, -1.0)],
            vec![branch(1, 0, 1), branch(2, 1, 2), branch(3, 0, 2)],
            100.0,
        )
        .unwrap();
        let a = net.incidence();
        for r in 0..3 {
            assert_eq!(a.row(r).sum(), 0.0);
        }
        assert_eq!(a[(1, 1)], 1.0);
        assert_eq!(a[(1, 2)], -1.0);
    }

    #[test]
    fn rejects_unbalanced() {
        let err = PowerNetwork::new(vec![bus(1, 1.0), bus(2, -0.5)], vec![branch(1, 0, 1)], 100.0);
        assert!(matches!(err, Err(Error::Validation { .. })));
    }

    #[test]
    fn rejects_bad_admittance() {
        let mut br = branch(4, 0, 1);
        br.admittance = 0.0;
        let err = PowerNetwork::new(vec![bus(1, 1.0), bus(2, -1.0)], vec![br], 100.0).unwrap_err();
        assert!(err.to_string().contains("branch 4"));
    }

    #[test]
    fn sever_and_over_sever() {
        let net =
            PowerNetwork::new(vec![bus(1, 1.0), bus(2, -1.0)], vec![branch(1, 0, 1)], 100.0).unwrap();
        let d = sever_branches(&net, &[1]).unwrap();
        assert_eq!(apply_disturbance(&net, &d).unwrap()[0], 0.0);
        let too_much = DVector::from_element(1, -1.5);
        assert!(matches!(
            apply_disturbance(&net, &too_much),
            Err(Error::InvalidDisturbance { branch: 1, .. })
        ));
    }
}
