use nlfactor::model::{generate_synthetic, SamplingScheme};
use nlfactor::objective::ObjectiveParams;
use nlfactor::solver::{
    bcd_run, bcd_run_with, freeze_phi_mode, FittedLink, SolverConfig, StandardObjective, TraceRow, TraceSink,
};
use nlfactor::{AnalyticLink, FactorMatrix, SyntheticConfig};

#[derive(Default)]
struct Recorder {
    rows: usize,
    checkpoints: Vec<usize>,
}

impl TraceSink for Recorder {
    fn row(&mut self, _row: &TraceRow) {
        self.rows += 1;
    }

    fn checkpoint(&mut self, iter: usize, z: &FactorMatrix, _link: &FittedLink) {
        assert!(z.is_finite());
        self.checkpoints.push(iter);
    }
}

fn easy_instance() -> SyntheticConfig {
    let mut s = SyntheticConfig::new(30, 30, 2, 600);
    s.sampling = SamplingScheme::WithoutReplacement;
    s.seed = 4;
    s
}

#[test]
fn frozen_identity_recovers_an_easy_instance() {
    let synth = easy_instance();
    let (obs, truth) = generate_synthetic(&synth).unwrap();
    let mut cfg = freeze_phi_mode(&SolverConfig::default(), AnalyticLink::Identity);
    cfg.r = 2;
    cfg.zeta = 0.3 / synth.spectrum[0];
    cfg.max_iters = 1500;
    cfg.diag_every = 100;
    cfg.record_wall_time = false;
    let trace = bcd_run(&obs, &cfg, Some(&truth)).unwrap();
    let first = trace.rows[0].delta_fro.unwrap();
    let last = trace.rows.last().unwrap().delta_fro.unwrap();
    assert!(last < 0.1 * first, "delta {first} -> {last}");
}

#[test]
fn sink_sees_every_row_and_each_diagnostic_checkpoint() {
    let (obs, truth) = generate_synthetic(&easy_instance()).unwrap();
    let cfg = SolverConfig {
        r: 2,
        max_iters: 53,
        diag_every: 25,
        zeta: 1e-4,
        record_wall_time: false,
        ..SolverConfig::default()
    };
    let mut rec = Recorder::default();
    let objective = StandardObjective(cfg.params);
    let trace = bcd_run_with(&obs, &cfg, Some(&truth), &objective, &mut rec).unwrap();
    assert_eq!(rec.rows, 54);
    assert_eq!(trace.rows.len(), 54);
    assert_eq!(rec.checkpoints, vec![0, 25, 50, 53]);
    for r in &trace.rows {
        assert_eq!(r.v_t.is_some(), rec.checkpoints.contains(&r.iter), "iter {}", r.iter);
        assert!(r.wall_ms.is_none());
    }
}

#[test]
fn repeated_runs_match_exactly() {
    let (obs, truth) = generate_synthetic(&easy_instance()).unwrap();
    let cfg = SolverConfig {
        r: 2,
        max_iters: 40,
        diag_every: 10,
        params: ObjectiveParams::new(0.5, 1e-2).unwrap(),
        record_wall_time: false,
        ..SolverConfig::default()
    };
    let a = bcd_run(&obs, &cfg, Some(&truth)).unwrap();
    let b = bcd_run(&obs, &cfg, Some(&truth)).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.z, b.z);
}
