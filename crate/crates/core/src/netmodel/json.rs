use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{validation, Branch, Bus, BusKind, PowerNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDoc {
    #[serde(default = "default_base")]
    base_mva: f64,
    buses: Vec<BusDoc>,
    branches: Vec<BranchDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: usize,
    kind: BusKind,
    p0: f64,
    pmin: f64,
    pmax: f64,
    #[serde(default = "one")]
    weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchDoc {
    id: usize,
    from: usize,
    to: usize,
    y: f64,
    #[serde(default = "one")]
    c: f64,
}

fn default_base() -> f64 {
    100.0
}

fn one() -> f64 {
    1.0
}

/// Parse the native JSON case format.
///
/// ```json
/// { "base_mva": 100,
///   "buses":    [{"id": 1, "kind": "generator", "p0": 1.0, "pmin": 0.0, "pmax": 2.0, "weight": 1.0}],
///   "branches": [{"id": 1, "from": 1, "to": 2, "y": 10.0, "c": 1.0}] }
/// ```
///
/// Injections are in pu. `from`/`to` are bus ids.
pub fn parse_json_case(text: &str) -> Result<PowerNetwork> {
    let doc: CaseDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut index = HashMap::new();
    let mut buses = Vec::with_capacity(doc.buses.len());
    for (i, b) in doc.buses.iter().enumerate() {
        if index.insert(b.id, i).is_some() {
            return Err(validation(format!("buses[{i}].id"), format!("duplicate bus id {}", b.id)));
        }
        buses.push(Bus {
            id: b.id,
            kind: b.kind,
            base_injection: b.p0,
            injection_min: b.pmin,
            injection_max: b.pmax,
            weight: b.weight,
        });
    }
    let mut branches = Vec::with_capacity(doc.branches.len());
    for (i, br) in doc.branches.iter().enumerate() {
        let lookup = |id: usize, field: &str| {
            index.get(&id).copied().ok_or_else(|| {
                validation(format!("branches[{i}].{field}"), format!("unknown bus id {id}"))
            })
        };
        branches.push(Branch {
            id: br.id,
            from_bus: lookup(br.from, "from")?,
            to_bus: lookup(br.to, "to")?,
            admittance: br.y,
            flow_threshold: br.c,
        });
    }
    PowerNetwork::new(buses, branches, doc.base_mva)
}

/// Serialize a network in the native JSON format.
pub fn write_json_case(network: &PowerNetwork) -> String {
    let doc = CaseDoc {
        base_mva: network.base_mva,
        buses: network
            .buses
            .iter()
            .map(|b| BusDoc {
                id: b.id,
                kind: b.kind,
                p0: b.base_injection,
                pmin: b.injection_min,
                pmax: b.injection_max,
                weight: b.weight,
            })
            .collect(),
        branches: network
            .branches
            .iter()
            .map(|br| BranchDoc {
                id: br.id,
                from: network.buses[br.from_bus].id,
                to: network.buses[br.to_bus].id,
                y: br.admittance,
                c: br.flow_threshold,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("case document serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{"base_mva": 100,
        "buses": [{"id": 1, "kind": "generator", "p0": 1.0, "pmin": 0.0, "pmax": 2.0},
                  {"id": 2, "kind": "load", "p0": -1.0, "pmin": -1.0, "pmax": 0.0}],
        "branches": [{"id": 1, "from": 1, "to": 2, "y": 1.0, "c": 1.0}]}"#;

    #[test]
    fn parses_two_bus() {
        let net = parse_json_case(TWO_BUS).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.buses()[0].weight, 1.0);
        assert_eq!(net.branches()[0].to_bus, 1);
    }

    #[test]
    fn unknown_bus_reports_field() {
        let bad = TWO_BUS.replace(r#""to": 2"#, r#""to": 99"#);
        let err = parse_json_case(&bad).unwrap_err().to_string();
        assert!(err.contains("branches[0].to"), "{err}");
        assert!(err.contains("99"));
    }

    #[test]
    fn syntax_error_has_line() {
        let err = parse_json_case("{\n \"buses\": [").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
