use nlfactor::model::{NoiseModel, SamplingScheme};
use nlfactor::objective::DataScale;
use nlfactor::solver::{IncoherentProjection, LinkMode};
use nlfactor::{AnalyticLink, ProjectionMode};
use nlfactor_experiments::config::{Experiment, Settings};
use nlfactor_experiments::data::{RatingsFormat, SplitStrategy};

const FILE: &str = r#"
[synth]
n = 40
t = 30
r = 2
m = 900
sampling = "without-replacement"
noise = "uniform"
sigma = 0.1
link = "sigmoid"

[solver]
r = 2
zeta = 2e-4
lambda = 0.25
data_scale = "mean"
kernel = "laplacian"
bandwidth = 0.7
monotone = "qp"
projection = true
mu = 4.5
link = "learn"
max_iters = 12

[preset]
grid = [0.0, 0.5]
seeds = [3, 4]

[data]
path = "/data/ratings.csv"
holdout = 0.2
strategy = "uniform"
"#;

#[test]
fn file_values_reach_every_section() {
    let s = Settings::parse(FILE).unwrap();
    let mut exp = Experiment::default();
    exp.apply(&s).unwrap();
    assert_eq!((exp.synth.n, exp.synth.t, exp.synth.r, exp.synth.m), (40, 30, 2, 900));
    assert_eq!(exp.synth.sampling, SamplingScheme::WithoutReplacement);
    assert_eq!(exp.synth.noise, NoiseModel::Uniform { sigma: 0.1 });
    assert_eq!(exp.synth.link, AnalyticLink::Sigmoid);
    assert_eq!(exp.synth.spectrum.len(), 2);
    assert_eq!(exp.solver.zeta, 2e-4);
    assert_eq!(exp.solver.params.lambda, 0.25);
    assert_eq!(exp.solver.params.scale, DataScale::Mean);
    assert_eq!(exp.solver.kernel.unwrap().family_name(), "laplacian");
    assert_eq!(exp.solver.monotone_mode, ProjectionMode::Qp);
    assert_eq!(
        exp.solver.incoherent_projection,
        IncoherentProjection::On { beta_override: None }
    );
    assert_eq!(exp.solver.mu_estimate, Some(4.5));
    assert_eq!(exp.solver.link_mode, LinkMode::Learn);
    assert_eq!(exp.solver.max_iters, 12);
    let data = exp.data.unwrap();
    assert_eq!(data.format, RatingsFormat::MovielensCsv);
    assert_eq!(data.split.holdout_fraction, 0.2);
    assert_eq!(data.split.strategy, SplitStrategy::Uniform);
    assert_eq!(s.list::<f64>("preset.grid").unwrap(), Some(vec![0.0, 0.5]));
    assert_eq!(s.list::<u64>("preset.seeds").unwrap(), Some(vec![3, 4]));
}

#[test]
fn command_line_overrides_win() {
    let mut s = Settings::parse(FILE).unwrap();
    let cli = {
        let mut c = Settings::default();
        c.set_pair("solver.max_iters=99").unwrap();
        c.set_pair("solver.link = identity").unwrap();
        c
    };
    s.merge(&cli);
    let mut exp = Experiment::default();
    exp.apply(&s).unwrap();
    assert_eq!(exp.solver.max_iters, 99);
    assert_eq!(exp.solver.link_mode, LinkMode::Frozen(AnalyticLink::Identity));
    // a frozen link has nothing to project
    assert_eq!(exp.solver.monotone_mode, ProjectionMode::None);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    assert!(Settings::parse("[solver]\nzeta_typo = 1\n").is_err());
    assert!(Settings::parse("zeta = 1\n").is_err());
    let mut s = Settings::default();
    assert!(s.set_pair("solver.zeta").is_err());
    s.set("solver.zeta", "fast").unwrap();
    assert!(Experiment::default().apply(&s).is_err());
    let mut neg = Settings::default();
    neg.set("solver.eta", "-1").unwrap();
    assert!(Experiment::default().apply(&neg).is_err());
    let mut kernel = Settings::default();
    kernel.set("solver.kernel", "gaussian").unwrap();
    assert!(Experiment::default().apply(&kernel).is_err());
}

#[test]
fn absolute_step_replaces_a_relative_one() {
    let mut exp = Experiment::default();
    exp.steps.zeta_rel = Some(0.3);
    let mut s = Settings::default();
    s.set("solver.zeta", "1e-3").unwrap();
    exp.apply(&s).unwrap();
    assert_eq!(exp.steps.zeta_rel, None);
    assert_eq!(exp.solver.zeta, 1e-3);
}
