//! Reader for MATPOWER version-2 case files.
//!
//! Only the fields needed by the DC model are read:
//! `mpc.baseMVA`, `mpc.bus` (BUS_I, TYPE, PD), `mpc.gen` (GEN_BUS, PG,
//! GEN_STATUS, PMAX) and `mpc.branch` (F_BUS, T_BUS, BR_X, RATE_A, TAP,
//! BR_STATUS). Other assignments are skipped.

use std::collections::HashMap;

use super::{validation, Branch, Bus, BusKind, PowerNetwork};
use crate::error::{Error, Result};

struct Matrix {
    name: String,
    rows: Vec<Vec<f64>>,
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// Drop `%` comments while leaving quoted strings and line breaks intact.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut quoted = false;
        for c in line.chars() {
            match c {
                '\'' => quoted = !quoted,
                '%' if !quoted => break,
                _ => {}
            }
            out.push(c);
        }
        out.push('\n');
    }
    out
}

fn line_of(text: &str, pos: usize) -> usize {
    text[..pos].bytes().filter(|&b| b == b'\n').count() + 1
}

fn parse_rows(name: &str, body: &str, first_line: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut line = first_line;
    for chunk in body.split_inclusive(['\n', ';']) {
        let row_line = line;
        if chunk.ends_with('\n') {
            line += 1;
        }
        let chunk = chunk.trim_end_matches(['\n', ';']).replace("...", " ");
        let tokens: Vec<&str> = chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(tokens.len());
        for t in tokens {
            let v: f64 = t.parse().map_err(|_| {
                parse_err(
                    format!("mpc.{name} row {} (line {row_line})", rows.len() + 1),
                    format!("invalid number '{t}'"),
                )
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Split the text into `mpc.<name> = <value>` assignments.
fn scan(text: &str) -> Result<(HashMap<String, String>, Vec<Matrix>)> {
    let mut scalars = HashMap::new();
    let mut matrices = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find("mpc.") {
        let start = pos + off + 4;
        let name_len = text[start..]
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(text.len() - start);
        let name = &text[start..start + name_len];
        let mut cur = start + name_len;
        cur += text[cur..].len() - text[cur..].trim_start().len();
        if !text[cur..].starts_with('=') || text[cur..].starts_with("==") {
            pos = cur.max(pos + off + 1);
            continue;
        }
        cur += 1;
        cur += text[cur..].len() - text[cur..].trim_start().len();
        let line = line_of(text, cur);
        match text[cur..].chars().next() {
            Some(open @ ('[' | '{')) => {
                let close = if open == '[' { ']' } else { '}' };
                let end = text[cur..].find(close).ok_or_else(|| {
                    parse_err(format!("mpc.{name} (line {line})"), format!("missing closing '{close}'"))
                })?;
                if open == '[' {
                    let body = &text[cur + 1..cur + end];
                    matrices.push(Matrix {
                        name: name.to_string(),
                        rows: parse_rows(name, body, line)?,
                    });
                }
                pos = cur + end + 1;
            }
            _ => {
                let end = text[cur..].find([';', '\n']).unwrap_or(text.len() - cur);
                scalars.insert(name.to_string(), text[cur..cur + end].trim().to_string());
                pos = cur + end;
            }
        }
    }
    Ok((scalars, matrices))
}

fn col(row: &[f64], idx: usize, default: f64) -> f64 {
    row.get(idx).copied().unwrap_or(default)
}

fn require_cols(name: &str, i: usize, row: &[f64], n: usize) -> Result<()> {
    if row.len() < n {
        return Err(parse_err(
            format!("mpc.{name} row {}", i + 1),
            format!("expected at least {n} columns, found {}", row.len()),
        ));
    }
    Ok(())
}

fn as_id(v: f64, location: String) -> Result<usize> {
    if v.is_finite() && v >= 1.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(validation(location, format!("'{v}' is not a positive integer id")))
    }
}

/// Parse MATPOWER case text into a validated network.
///
/// Branch ids are 1-based row numbers in `mpc.branch`; out-of-service rows
/// are dropped but keep their numbering. Admittance is `1/(x·tap)` with a
/// zero tap read as 1. Thresholds are `RATE_A/baseMVA`, or 1 pu when RATE_A
/// is zero.
pub fn parse_matpower(text: &str) -> Result<PowerNetwork> {
    let clean = strip_comments(text);
    let (scalars, matrices) = scan(&clean)?;
    let base_mva: f64 = scalars
        .get("baseMVA")
        .ok_or_else(|| parse_err("mpc.baseMVA", "missing"))?
        .parse()
        .map_err(|_| parse_err("mpc.baseMVA", "not a number"))?;
    let find = |name: &str| matrices.iter().rev().find(|m| m.name == name);
    let bus_m = find("bus").ok_or_else(|| parse_err("mpc.bus", "missing"))?;
    let branch_m = find("branch").ok_or_else(|| parse_err("mpc.branch", "missing"))?;
    let empty = Vec::new();
    let gen_rows = find("gen").map(|m| &m.rows).unwrap_or(&empty);

    let mut index = HashMap::new();
    let mut pd = Vec::with_capacity(bus_m.rows.len());
    let mut ids = Vec::with_capacity(bus_m.rows.len());
    for (i, row) in bus_m.rows.iter().enumerate() {
        require_cols("bus", i, row, 3)?;
        let id = as_id(row[0], format!("mpc.bus row {} (BUS_I)", i + 1))?;
        if index.insert(id, i).is_some() {
            return Err(validation(format!("mpc.bus row {}", i + 1), format!("duplicate bus id {id}")));
        }
        ids.push(id);
        pd.push(row[2]);
    }

    let n = ids.len();
    let mut pg = vec![0.0; n];
    let mut cap = vec![0.0; n];
    let mut has_gen = vec![false; n];
    for (i, row) in gen_rows.iter().enumerate() {
        require_cols("gen", i, row, 2)?;
        if col(row, 7, 1.0) <= 0.0 {
            continue;
        }
        let loc = format!("mpc.gen row {} (GEN_BUS)", i + 1);
        let id = as_id(row[0], loc.clone())?;
        let b = *index
            .get(&id)
            .ok_or_else(|| validation(loc, format!("references unknown bus {id}")))?;
        pg[b] += row[1];
        cap[b] += col(row, 8, row[1]).max(row[1]);
        has_gen[b] = true;
    }

    let buses = (0..n)
        .map(|b| {
            let load = pd[b] / base_mva;
            let p0 = pg[b] / base_mva - load;
            Bus {
                id: ids[b],
                kind: if has_gen[b] { BusKind::Generator } else { BusKind::Load },
                base_injection: p0,
                injection_min: (-load).min(0.0),
                injection_max: cap[b].max(0.0) / base_mva + (-load).max(0.0),
                weight: 1.0,
            }
        })
        .collect();

    let mut branches = Vec::with_capacity(branch_m.rows.len());
    for (i, row) in branch_m.rows.iter().enumerate() {
        require_cols("branch", i, row, 4)?;
        if col(row, 10, 1.0) <= 0.0 {
            continue;
        }
        let row_loc = |field: &str| format!("mpc.branch row {} ({field})", i + 1);
        let endpoint = |v: f64, field: &str| -> Result<usize> {
            let id = as_id(v, row_loc(field))?;
            index
                .get(&id)
                .copied()
                .ok_or_else(|| validation(row_loc(field), format!("references unknown bus {id}")))
        };
        let from_bus = endpoint(row[0], "F_BUS")?;
        let to_bus = endpoint(row[1], "T_BUS")?;
        let tap = match col(row, 8, 0.0) {
            t if t == 0.0 => 1.0,
            t => t,
        };
        let admittance = 1.0 / (row[3] * tap);
        if !(admittance.is_finite() && admittance > 0.0) {
            return Err(validation(
                row_loc("BR_X"),
                format!("x = {}, tap = {tap} gives non-positive admittance", row[3]),
            ));
        }
        let rate = col(row, 5, 0.0);
        branches.push(Branch {
            id: i + 1,
            from_bus,
            to_bus,
            admittance,
            flow_threshold: if rate > 0.0 { rate / base_mva } else { 1.0 },
        });
    }
    PowerNetwork::new(buses, branches, base_mva)
}
