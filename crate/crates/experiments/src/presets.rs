//! Named experiment presets and the summary tables they produce.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nlfactor::model::{generate_synthetic, NoiseModel, SamplingScheme};
use nlfactor::objective::DataScale;
use nlfactor::solver::{freeze_phi_mode, IncoherentProjection, LinkMode, PhiInit, SolverConfig};
use nlfactor::{AnalyticLink, ProjectionMode, SyntheticConfig};

use crate::config::{Experiment, RelativeSteps, Settings};
use crate::data::{load_ratings, split, RatingsDataset, RatingsFormat};
use crate::error::{Error, Result};
use crate::run::{run_single, RunOutcome};
use crate::trace_io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    NoiseSweep,
    SampleSizeSweep,
    AlphaSweep,
    RegretCurve,
    Movielens,
    Jester,
    Custom,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::NoiseSweep,
        PresetName::SampleSizeSweep,
        PresetName::AlphaSweep,
        PresetName::RegretCurve,
        PresetName::Movielens,
        PresetName::Jester,
        PresetName::Custom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::NoiseSweep => "noise-sweep",
            PresetName::SampleSizeSweep => "sample-size-sweep",
            PresetName::AlphaSweep => "alpha-sweep",
            PresetName::RegretCurve => "regret-curve",
            PresetName::Movielens => "movielens",
            PresetName::Jester => "jester",
            PresetName::Custom => "custom",
        }
    }

    fn is_real_data(&self) -> bool {
        matches!(self, PresetName::Movielens | PresetName::Jester)
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// The four method variants run on real data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Identity,
    IdentityProjected,
    NonlinearProjected,
    NonlinearMonotone,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Identity,
        Variant::IdentityProjected,
        Variant::NonlinearProjected,
        Variant::NonlinearMonotone,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Identity => "id",
            Variant::IdentityProjected => "id-proj",
            Variant::NonlinearProjected => "nl-proj",
            Variant::NonlinearMonotone => "nl-monotone",
        }
    }

    fn configure(&self, exp: &mut Experiment) {
        let projected = IncoherentProjection::On { beta_override: None };
        match self {
            Variant::Identity | Variant::IdentityProjected => {
                exp.solver = freeze_phi_mode(&exp.solver, AnalyticLink::Identity);
                exp.center = true;
                if *self == Variant::IdentityProjected {
                    exp.solver.incoherent_projection = projected;
                }
            }
            Variant::NonlinearProjected | Variant::NonlinearMonotone => {
                exp.solver.link_mode = LinkMode::Learn;
                exp.center = false;
                exp.solver.incoherent_projection = projected;
                exp.solver.monotone_mode = if *self == Variant::NonlinearMonotone {
                    ProjectionMode::Qp
                } else {
                    ProjectionMode::None
                };
            }
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: PresetName,
    /// Swept values, kept as text; their meaning depends on the preset.
    pub grid: Vec<String>,
    pub seeds: Vec<u64>,
    pub base: Experiment,
}

/// `n = T = 100`, `r = 3`, `M = 5000`, sigmoid link, joint learning with the
/// default solver settings.
fn shared_parameter_base() -> Experiment {
    let mut synth = SyntheticConfig::new(100, 100, 3, 5000);
    synth.link = AnalyticLink::Sigmoid;
    Experiment {
        synth,
        solver: SolverConfig {
            r: 3,
            max_iters: 2000,
            diag_every: 25,
            ..SolverConfig::default()
        },
        ..Experiment::default()
    }
}

fn strings<T: ToString>(xs: &[T]) -> Vec<String> {
    xs.iter().map(T::to_string).collect()
}

impl ExperimentPreset {
    pub fn builtin(name: PresetName) -> Self {
        let (grid, seeds, base) = match name {
            PresetName::NoiseSweep => {
                let mut base = shared_parameter_base();
                base.solver = freeze_phi_mode(&base.solver, AnalyticLink::Sigmoid);
                base.solver.diag_every = 500;
                base.steps = RelativeSteps {
                    zeta_rel: Some(0.1),
                    eta_rel: None,
                };
                (strings(&["0", "0.05", "0.1", "0.2"]), vec![0, 1, 2], base)
            }
            PresetName::SampleSizeSweep => {
                let mut synth = SyntheticConfig::new(200, 200, 5, 1000);
                synth.sampling = SamplingScheme::WithoutReplacement;
                let solver = SolverConfig {
                    r: 5,
                    max_iters: 5000,
                    diag_every: 500,
                    ..SolverConfig::default()
                };
                let base = Experiment {
                    synth,
                    solver: freeze_phi_mode(&solver, AnalyticLink::Identity),
                    steps: RelativeSteps {
                        zeta_rel: Some(0.3),
                        eta_rel: None,
                    },
                    ..Experiment::default()
                };
                (strings(&[1, 2, 3, 4, 5, 6, 7, 8]), vec![0, 1, 2], base)
            }
            PresetName::AlphaSweep => {
                let mut base = shared_parameter_base();
                base.solver.diag_every = 100;
                (strings(&["0.0001", "0.001", "0.01", "0.1"]), vec![0], base)
            }
            PresetName::RegretCurve => {
                let base = shared_parameter_base();
                (strings(&AnalyticLink::ALL), vec![0, 1, 2], base)
            }
            PresetName::Movielens | PresetName::Jester => {
                let r = if name == PresetName::Movielens { 10 } else { 5 };
                let solver = SolverConfig {
                    r,
                    max_iters: 500,
                    diag_every: 25,
                    phi_init: PhiInit::MeanOffset,
                    rescale: Some(false),
                    params: SolverConfig::default().params.with_scale(DataScale::Sum),
                    ..SolverConfig::default()
                };
                let base = Experiment {
                    solver,
                    steps: RelativeSteps {
                        zeta_rel: Some(0.3),
                        eta_rel: Some(0.5),
                    },
                    ..Experiment::default()
                };
                let grid = Variant::ALL.iter().map(|v| v.as_str().to_string()).collect();
                (grid, vec![0], base)
            }
            PresetName::Custom => (vec!["-".to_string()], vec![0], Experiment::default()),
        };
        ExperimentPreset {
            name,
            grid,
            seeds,
            base,
        }
    }

    /// Apply overrides from `s`; `preset.grid` and `preset.seeds` replace the lists.
    pub fn apply(&mut self, s: &Settings) -> Result<()> {
        self.base.apply(s)?;
        if let Some(grid) = s.list::<String>("preset.grid")? {
            self.grid = grid;
        }
        if let Some(seeds) = s.list::<u64>("preset.seeds")? {
            self.seeds = seeds;
        }
        if self.name == PresetName::Jester {
            if let Some(d) = self.base.data.as_mut() {
                if s.raw("data.format").is_none() {
                    d.format = RatingsFormat::JesterDense;
                }
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("preset grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("preset seed list is empty".into()));
        }
        for g in &self.grid {
            self.configure(g, 0)?;
        }
        if self.name == PresetName::NoiseSweep && !self.grid.iter().any(|g| g.parse::<f64>() == Ok(0.0)) {
            return Err(Error::Config(
                "noise-sweep grid must contain 0 for normalization".into(),
            ));
        }
        if self.name.is_real_data() && self.base.data.is_none() {
            return Err(Error::Config(format!(
                "preset `{}` needs data.path (datasets are not downloaded)",
                self.name.as_str()
            )));
        }
        Ok(())
    }

    /// The experiment for one grid value and seed, and its method label.
    pub fn configure(&self, grid_value: &str, seed: u64) -> Result<(Experiment, String)> {
        let mut exp = self.base.clone();
        exp.synth.seed = seed;
        exp.solver.seed = seed;
        if let Some(d) = exp.data.as_mut() {
            d.split.seed = seed;
        }
        let num = || {
            grid_value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("grid value `{grid_value}` is not a number")))
        };
        match self.name {
            PresetName::NoiseSweep => {
                let sigma = num()?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("noise level must be >= 0, got {sigma}")));
                }
                exp.synth.noise = if sigma == 0.0 {
                    NoiseModel::None
                } else {
                    NoiseModel::Gaussian { sigma }
                };
            }
            PresetName::SampleSizeSweep => {
                let mult = num()?;
                if !(mult > 0.0 && mult.is_finite()) {
                    return Err(Error::Config(format!("sample multiple must be positive, got {mult}")));
                }
                exp.synth.m = (mult * (exp.synth.n * exp.synth.r) as f64).round() as usize;
            }
            PresetName::AlphaSweep => exp.solver.params.alpha = num()?,
            PresetName::RegretCurve => exp.synth.link = grid_value.parse()?,
            PresetName::Movielens | PresetName::Jester => grid_value.parse::<Variant>()?.configure(&mut exp),
            PresetName::Custom => {}
        }
        exp.solver.validate()?;
        let method = match (self.name.is_real_data(), exp.solver.link_mode) {
            (true, _) => grid_value.to_string(),
            (false, LinkMode::Frozen(a)) => format!("frozen-{a}"),
            (false, LinkMode::Learn) => "joint".to_string(),
        };
        Ok((exp, format!("{method}/seed{seed}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub preset: String,
    pub grid_value: String,
    pub method: String,
    pub best_iter: Option<usize>,
    pub train_rmse: Option<f64>,
    pub val_rmse: Option<f64>,
    /// Final `||Delta||_F`; divided by the same seed's noiseless value in the noise sweep.
    pub delta_fro_final: Option<f64>,
    pub wall_s: Option<f64>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    /// Incoherent-set radius, when the projection is on.
    pub beta: Option<f64>,
    pub trace_path: Option<PathBuf>,
    pub error: Option<String>,
}

pub const SUMMARY_HEADER: &str =
    "preset,grid_value,method,best_iter,train_rmse,val_rmse,delta_fro_final,wall_s,x_min,x_max,beta";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

fn opt_csv(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn opt_table(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for r in &self.rows {
            let fields = [
                r.preset.clone(),
                r.grid_value.clone(),
                r.method.clone(),
                r.best_iter.map(|i| i.to_string()).unwrap_or_default(),
                opt_csv(r.train_rmse),
                opt_csv(r.val_rmse),
                opt_csv(r.delta_fro_final),
                opt_csv(r.wall_s),
                opt_csv(r.x_min),
                opt_csv(r.x_max),
                opt_csv(r.beta),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Column-aligned text table; failed runs get a trailing error line.
    pub fn to_table(&self) -> String {
        let header: Vec<String> = SUMMARY_HEADER.split(',').map(str::to_string).collect();
        let mut cells = vec![header];
        for r in &self.rows {
            cells.push(vec![
                r.preset.clone(),
                r.grid_value.clone(),
                r.method.clone(),
                r.best_iter.map(|i| i.to_string()).unwrap_or_else(|| "-".into()),
                opt_table(r.train_rmse),
                opt_table(r.val_rmse),
                opt_table(r.delta_fro_final),
                r.wall_s.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()),
                opt_table(r.x_min),
                opt_table(r.x_max),
                opt_table(r.beta),
            ]);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (k, row) in cells.iter().enumerate() {
            let line: Vec<String> = row.iter().zip(&widths).map(|(v, &w)| format!("{v:>w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if k > 0 {
                if let Some(e) = &self.rows[k - 1].error {
                    let _ = writeln!(out, "    error: {e}");
                }
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv = dir.join("summary.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = dir.join("summary.txt");
        fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))
    }
}

/// Summary line for one run.
pub fn summary_row(
    preset: &str,
    grid_value: &str,
    method: &str,
    outcome: &Result<RunOutcome>,
    trace_path: Option<PathBuf>,
) -> SummaryRow {
    let mut row = SummaryRow {
        preset: preset.to_string(),
        grid_value: grid_value.to_string(),
        method: method.to_string(),
        best_iter: None,
        train_rmse: None,
        val_rmse: None,
        delta_fro_final: None,
        wall_s: None,
        x_min: None,
        x_max: None,
        beta: None,
        trace_path,
        error: None,
    };
    match outcome {
        Ok(o) => {
            let last = o.trace.rows.last().expect("a trace has at least one row");
            row.best_iter = Some(o.best.iter);
            row.train_rmse = Some(o.best.train_rmse);
            row.val_rmse = o.best.val_rmse;
            row.delta_fro_final = last.delta_fro;
            row.wall_s = last.wall_ms.map(|ms| ms / 1e3);
            row.x_min = Some(o.best.x_min);
            row.x_max = Some(o.best.x_max);
            row.beta = o.trace.beta;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn file_slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Run every grid value and seed, writing one trace per run under
/// `out_dir/traces` plus `summary.csv` and `summary.txt`. A failing run is
/// recorded in its summary row and the sweep continues.
pub fn run_preset(preset: &ExperimentPreset, out_dir: &Path) -> Result<Summary> {
    preset.validate()?;
    let traces = out_dir.join("traces");
    fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    let dataset: Option<RatingsDataset> = match &preset.base.data {
        Some(d) if preset.name.is_real_data() || preset.name == PresetName::Custom => {
            Some(load_ratings(&d.path, d.format)?)
        }
        _ => None,
    };

    let mut summary = Summary::default();
    for g in &preset.grid {
        for &seed in &preset.seeds {
            let (exp, method) = preset.configure(g, seed)?;
            let path = traces.join(format!("{}__{}.csv", file_slug(g), file_slug(&method)));
            let outcome = match &dataset {
                Some(ds) => {
                    let spec = exp.data.as_ref().expect("dataset implies a source").split;
                    let parts = split(ds, &spec);
                    let train = parts.train_set()?;
                    let val = parts.val_set().ok();
                    run_single(&exp, &train, val.as_ref(), None, Some(&path))
                }
                None => generate_synthetic(&exp.synth)
                    .map_err(Error::from)
                    .and_then(|(obs, truth)| run_single(&exp, &obs, None, Some(&truth), Some(&path))),
            };
            let row = summary_row(preset.name.as_str(), g, &method, &outcome, Some(path));
            summary.rows.push(row);
        }
    }
    if preset.name == PresetName::NoiseSweep {
        normalize_noise_sweep(&mut summary);
    }
    summary.write(out_dir)?;
    Ok(summary)
}

/// Divide each final error by the noiseless run with the same method and seed.
fn normalize_noise_sweep(summary: &mut Summary) {
    let reference: Vec<(String, Option<f64>)> = summary
        .rows
        .iter()
        .filter(|r| r.grid_value.parse::<f64>() == Ok(0.0))
        .map(|r| (r.method.clone(), r.delta_fro_final))
        .collect();
    for r in &mut summary.rows {
        let base = reference.iter().find(|(m, _)| *m == r.method).and_then(|(_, d)| *d);
        r.delta_fro_final = match (r.delta_fro_final, base) {
            (Some(d), Some(b)) => Some(d / b),
            _ => None,
        };
    }
}
