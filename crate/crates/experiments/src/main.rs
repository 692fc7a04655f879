use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlfactor::model::generate_synthetic;
use nlfactor::{GroundTruth, ObservationSet};
use nlfactor_experiments::config::{Experiment, Settings};
use nlfactor_experiments::data::{load_ratings, split, RatingsFormat};
use nlfactor_experiments::files::{load_json, read_observations, save_json, write_observations, ModelFile, TruthFile};
use nlfactor_experiments::metrics::rmse;
use nlfactor_experiments::presets::{run_preset, summary_row, ExperimentPreset, PresetName, Summary};
use nlfactor_experiments::run::run_single;
use nlfactor_experiments::{Error, Result};

#[derive(Parser)]
#[command(name = "nlfactor", version, about = "Nonlinear factor model fitting and experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML settings file with [synth], [solver], [preset] and [data] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for data generation, the solver and the split; replaces the preset seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Iterations between full diagnostics.
    #[arg(long, global = true)]
    diag_every: Option<usize>,

    /// Override one setting, e.g. `--set solver.max_iters=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic instance and write observations.csv and truth.json.
    Synth,
    /// Fit one model and write trace.csv, model.json and a summary.
    Fit(FitArgs),
    /// Run a named experiment preset.
    Preset {
        /// noise-sweep, sample-size-sweep, alpha-sweep, regret-curve, movielens, jester or custom.
        name: String,
    },
    /// Report the RMSE of a saved model on a set of observations.
    Eval(EvalArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Observation triples written by `synth`.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Ground truth written by `synth`, enabling recovery diagnostics.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Observation triples to score.
    #[arg(long, conflicts_with = "ratings")]
    obs: Option<PathBuf>,
    /// Ratings file to score; scored on the validation part of `[data]`'s split.
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long, default_value = "movielens-csv")]
    format: String,
}

fn settings(g: &Global) -> Result<Settings> {
    let mut s = match &g.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(seed) = g.seed {
        let seed = seed.to_string();
        for key in ["synth.seed", "solver.seed", "data.split_seed", "preset.seeds"] {
            s.set(key, &seed)?;
        }
    }
    if let Some(d) = g.diag_every {
        s.set("solver.diag_every", &d.to_string())?;
    }
    for pair in &g.overrides {
        s.set_pair(pair)?;
    }
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn synth(exp: &Experiment, out: &Path) -> Result<()> {
    create_dir(out)?;
    let (obs, truth) = generate_synthetic(&exp.synth)?;
    write_observations(&obs, &out.join("observations.csv"))?;
    save_json(&TruthFile::new(&truth, exp.synth.link), &out.join("truth.json"))?;
    println!(
        "wrote {} samples of a {}x{} rank-{} instance to {}",
        obs.len(),
        obs.n(),
        obs.t(),
        exp.synth.r,
        out.display()
    );
    Ok(())
}

fn fit(exp: &Experiment, args: &FitArgs, out: &Path) -> Result<()> {
    create_dir(out)?;
    let truth: Option<GroundTruth> = match &args.truth {
        Some(p) => Some(load_json::<TruthFile>(p)?.ground_truth()?),
        None => None,
    };
    let (train, val, truth): (ObservationSet, Option<ObservationSet>, Option<GroundTruth>) =
        match (&args.obs, &exp.data) {
            (Some(p), _) => (read_observations(p)?, None, truth),
            (None, Some(d)) => {
                let ds = load_ratings(&d.path, d.format)?;
                let parts = split(&ds, &d.split);
                (parts.train_set()?, parts.val_set().ok(), None)
            }
            (None, None) => {
                let (obs, t) = generate_synthetic(&exp.synth)?;
                (obs, None, Some(t))
            }
        };
    let trace_path = out.join("trace.csv");
    let outcome = run_single(exp, &train, val.as_ref(), truth.as_ref(), Some(&trace_path));
    if let Ok(o) = &outcome {
        save_json(
            &ModelFile::new(&o.trace.z, &o.trace.link, o.shift),
            &out.join("model.json"),
        )?;
    }
    let summary = Summary {
        rows: vec![summary_row("fit", "-", "fit", &outcome, Some(trace_path))],
    };
    summary.write(out)?;
    print!("{}", summary.to_table());
    outcome.map(|_| ())
}

fn eval(exp: &Experiment, args: &EvalArgs) -> Result<()> {
    let model: ModelFile = load_json(&args.model)?;
    let z = model.factors()?;
    let link = model.fitted_link()?;
    let obs = match (&args.obs, &args.ratings) {
        (Some(p), _) => read_observations(p)?,
        (None, Some(p)) => {
            let format: RatingsFormat = args.format.parse()?;
            let ds = load_ratings(p, format)?;
            let spec = exp.data.as_ref().map(|d| d.split);
            match spec {
                Some(spec) => split(&ds, &spec).val_set()?,
                None => ds.to_observations()?,
            }
        }
        (None, None) => return Err(Error::Config("eval needs --obs or --ratings".into())),
    };
    if obs.n() != model.n || obs.t() != model.t {
        return Err(Error::Config(format!(
            "observations are {}x{} but the model is {}x{}",
            obs.n(),
            obs.t(),
            model.n,
            model.t
        )));
    }
    let shifted = obs.map_responses(|y| y - model.shift);
    println!("rmse {} over {} samples", rmse(&shifted, &z, &link), obs.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let s = settings(&cli.global)?;
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let out = &cli.global.out;
    match &cli.command {
        Command::Preset { name } => {
            let name: PresetName = name.parse()?;
            let mut preset = ExperimentPreset::builtin(name);
            preset.apply(&s)?;
            let dir = out.join(name.as_str());
            let summary = run_preset(&preset, &dir)?;
            print!("{}", summary.to_table());
            println!("summary and traces in {}", dir.display());
            Ok(())
        }
        cmd => {
            let mut exp = Experiment::default();
            exp.apply(&s)?;
            match cmd {
                Command::Synth => synth(&exp, out),
                Command::Fit(args) => fit(&exp, args, out),
                Command::Eval(args) => eval(&exp, args),
                Command::Preset { .. } => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
