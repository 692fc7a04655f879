use std::path::Path;

use nlfactor::model::generate_synthetic;
use nlfactor::solver::{bcd_run, SolverConfig, TraceRow};
use nlfactor::SyntheticConfig;
use nlfactor_experiments::trace_io::{read_trace, write_trace, write_trace_to, TRACE_HEADER};
use proptest::prelude::*;

fn row(iter: usize, loss: f64) -> TraceRow {
    TraceRow {
        iter,
        loss,
        data_term: loss,
        balance_term: 0.0,
        tikhonov_term: 0.0,
        delta_fro: None,
        phi_h_err: None,
        e_t: None,
        d_t: None,
        v_t: None,
        regret_avg: None,
        wall_ms: None,
    }
}

fn hand_trace() -> Vec<TraceRow> {
    vec![
        TraceRow {
            data_term: 1.25,
            balance_term: 0.25,
            delta_fro: Some(2.0),
            e_t: Some(0.1),
            d_t: Some(4.0),
            v_t: Some(4.1),
            regret_avg: Some(0.5),
            ..row(0, 1.5)
        },
        TraceRow {
            delta_fro: Some(1.9999999999999998),
            ..row(1, 1e-7)
        },
        TraceRow {
            data_term: 1e20,
            balance_term: 0.30000000000000004,
            phi_h_err: Some(0.001),
            wall_ms: Some(12.5),
            ..row(2, 123456789.0)
        },
    ]
}

#[test]
fn hand_trace_matches_golden_file() {
    let mut out = Vec::new();
    write_trace_to(&hand_trace(), &mut out).unwrap();
    let expected =
        std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/trace_golden.csv")).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), String::from_utf8(expected).unwrap());
}

#[test]
fn golden_file_reads_back_to_the_hand_trace() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/trace_golden.csv");
    assert_eq!(read_trace(&path).unwrap(), hand_trace());
}

#[test]
fn zero_iteration_trace_has_one_row() {
    let (obs, truth) = generate_synthetic(&SyntheticConfig::new(12, 10, 2, 80)).unwrap();
    let cfg = SolverConfig {
        r: 2,
        max_iters: 0,
        ..SolverConfig::default()
    };
    let trace = bcd_run(&obs, &cfg, Some(&truth)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trace(&trace.rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], TRACE_HEADER);
    assert_eq!(read_trace(&path).unwrap(), trace.rows);
}

#[test]
fn wrong_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "iter,loss\n0,1.0\n").unwrap();
    assert!(read_trace(&path).is_err());
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        Just(0.0),
        Just(-0.0)
    ]
}

proptest! {
    #[test]
    fn traces_round_trip_bit_exactly(
        vals in prop::collection::vec((finite(), finite(), prop::option::of(finite()), prop::option::of(finite())), 1..20),
    ) {
        let rows: Vec<TraceRow> = vals
            .iter()
            .enumerate()
            .map(|(k, &(a, b, c, d))| TraceRow { balance_term: b, delta_fro: c, wall_ms: d, v_t: c, ..row(k, a) })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace(&rows, &path).unwrap();
        let back = read_trace(&path).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (x, y) in back.iter().zip(&rows) {
            prop_assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            prop_assert_eq!(x.balance_term.to_bits(), y.balance_term.to_bits());
            prop_assert_eq!(x.delta_fro.map(f64::to_bits), y.delta_fro.map(f64::to_bits));
            prop_assert_eq!(x.wall_ms.map(f64::to_bits), y.wall_ms.map(f64::to_bits));
        }
    }
}
