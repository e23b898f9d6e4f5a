mod common;

use cascade_core::netmodel::{
    apply_disturbance, load_case, parse_json_case, parse_matpower, sever_branches, write_json_case,
    BusKind, CaseFormat,
};
use cascade_core::Error;
use nalgebra::DVector;
use proptest::prelude::*;

#[test]
fn ieee57_shape() {
    let net = common::ieee57();
    assert_eq!(net.n_buses(), 57);
    assert_eq!(net.n_branches(), 80);
    assert!(net.base_injections().sum().abs() <= 1e-6);
    let gens: Vec<usize> = net
        .buses()
        .iter()
        .filter(|b| b.kind == BusKind::Generator)
        .map(|b| b.id)
        .collect();
    assert_eq!(gens, vec![1, 2, 3, 6, 8, 9, 12]);
    let b10 = &net.branches()[9];
    assert_eq!((b10.id, net.buses()[b10.from_bus].id, net.buses()[b10.to_bus].id), (10, 9, 11));
}

#[test]
fn ieee57_incidence_rows() {
    let net = common::ieee57();
    let a = net.incidence();
    for r in 0..a.nrows() {
        assert_eq!(a.row(r).sum(), 0.0);
        assert_eq!(a.row(r).iter().filter(|v| **v != 0.0).count(), 2);
    }
}

#[test]
fn branch_10_severed() {
    let net = common::ieee57();
    let d = sever_branches(&net, &[10]).unwrap();
    let y1 = apply_disturbance(&net, &d).unwrap();
    assert_eq!(y1[9], 0.0);
    assert_eq!(y1.iter().filter(|v| **v == 0.0).count(), 1);
}

#[test]
fn unbalanced_matpower_rejected() {
    let text = std::fs::read_to_string(common::data_path("case57.m")).unwrap();
    let skewed = text.replace("\t1\t450.8\t", "\t1\t128.9\t");
    assert_ne!(skewed, text);
    match parse_matpower(&skewed) {
        Err(Error::Validation { message, .. }) => assert!(message.contains("balance"), "{message}"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn unknown_bus_in_branch_row() {
    let text = std::fs::read_to_string(common::data_path("case57.m")).unwrap();
    let bad = text.replacen("\t9\t11\t", "\t9\t99\t", 1);
    let err = parse_matpower(&bad).unwrap_err().to_string();
    assert!(err.contains("mpc.branch row 10"), "{err}");
    assert!(err.contains("99"), "{err}");
}

#[test]
fn load_case_is_deterministic() {
    let bytes = std::fs::read(common::data_path("case57.m")).unwrap();
    let a = load_case(&bytes, CaseFormat::Matpower).unwrap();
    let b = load_case(&bytes, CaseFormat::Matpower).unwrap();
    assert_eq!(a, b);
    assert_eq!(write_json_case(&a), write_json_case(&b));
}

#[test]
fn non_utf8_is_a_parse_error() {
    assert!(matches!(load_case(&[0xff, 0xfe], CaseFormat::Json), Err(Error::Parse { .. })));
}

#[test]
fn sample_cases_load() {
    for name in ["two_bus.json", "triangle.json"] {
        let text = std::fs::read_to_string(common::data_path(name)).unwrap();
        parse_json_case(&text).unwrap();
    }
}

proptest! {
    #[test]
    fn json_round_trip(seed in any::<u64>(), n in 2usize..8, extra in 0usize..6) {
        let mut r = common::rng(seed);
        let net = common::random_network(&mut r, n, extra, 1.0);
        let back = parse_json_case(&write_json_case(&net)).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn parsers_never_panic(s in "\\PC{0,200}") {
        let _ = parse_matpower(&s);
        let _ = parse_json_case(&s);
    }

    #[test]
    fn matpower_fragments_never_panic(rows in prop::collection::vec(prop::collection::vec(-5.0f64..60.0, 0..12), 0..6)) {
        let body: Vec<String> = rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")).collect();
        let text = format!("mpc.baseMVA = 100;\nmpc.bus = [\n{}\n];\nmpc.branch = [{}];", body.join(";\n"), body.join(";"));
        let _ = parse_matpower(&text);
    }

    #[test]
    fn disturbances_add(seed in any::<u64>(), a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let mut r = common::rng(seed);
        let net = common::random_network(&mut r, 5, 3, 1.0);
        let y0 = net.admittances();
        let d1 = -&y0 * a;
        let d2 = -&y0 * b;
        let stepwise = apply_disturbance(&net, &d1).unwrap() + &d2;
        let joint = apply_disturbance(&net, &(&d1 + &d2)).unwrap();
        prop_assert!((stepwise - joint).amax() <= 1e-15 * y0.amax());
    }

    #[test]
    fn disturbance_within_range_is_accepted(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let mut r = common::rng(seed);
        let net = common::random_network(&mut r, 5, 3, 1.0);
        let delta = -net.admittances() * frac;
        let y = apply_disturbance(&net, &delta).unwrap();
        prop_assert!(y.iter().all(|v| *v >= 0.0));
        let over = -net.admittances() * (1.0 + frac) - DVector::from_element(net.n_branches(), 1e-3);
        prop_assert!(apply_disturbance(&net, &over).is_err());
    }
}

#[test]
fn fuzz_seeds_parse() {
    let corpus = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let seeds = |target: &str| {
        let mut v: Vec<String> = std::fs::read_dir(corpus.join(target))
            .unwrap()
            .map(|e| std::fs::read_to_string(e.unwrap().path()).unwrap())
            .collect();
        v.sort();
        assert!(!v.is_empty(), "{target}");
        v
    };
    for text in seeds("parse_matpower") {
        parse_matpower(&text).unwrap();
    }
    for text in seeds("parse_json_case") {
        parse_json_case(&text).unwrap();
    }
    for text in seeds("parse_scenario_config") {
        cascade_core::harness::parse_scenario_config(&text).unwrap();
    }
}
