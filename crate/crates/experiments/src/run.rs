//! One solver run with streamed trace output and best-checkpoint tracking.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nlfactor::linalg::top_singular_value;
use nlfactor::model::zero_filled_matrix;
use nlfactor::objective::DataScale;
use nlfactor::solver::{
    bcd_run_with, FittedLink, LinkMode, SolverConfig, SolverTrace, StandardObjective, TraceRow, TraceSink,
};
use nlfactor::{FactorMatrix, GroundTruth, Link, ObservationSet};

use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::metrics::{rmse, x_range};
use crate::trace_io::{format_row, TRACE_HEADER};

/// Metrics at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub iter: usize,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: SolverTrace,
    /// Lowest validation RMSE among checkpoints, or the final one without validation data.
    pub best: Checkpoint,
    /// Subtracted from responses before fitting; add it back to predictions.
    pub shift: f64,
    /// The configuration after relative step sizes were resolved.
    pub config: SolverConfig,
}

struct RunSink<'a> {
    out: Option<BufWriter<File>>,
    io_error: Option<std::io::Error>,
    train: &'a ObservationSet,
    val: Option<&'a ObservationSet>,
    best: Option<Checkpoint>,
    last: Option<Checkpoint>,
}

impl RunSink<'_> {
    fn write(&mut self, line: &str) {
        if self.io_error.is_some() {
            return;
        }
        if let Some(w) = self.out.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                self.io_error = Some(e);
            }
        }
    }
}

impl TraceSink for RunSink<'_> {
    fn row(&mut self, row: &TraceRow) {
        self.write(&format_row(row));
    }

    fn checkpoint(&mut self, iter: usize, z: &FactorMatrix, link: &FittedLink) {
        let (x_min, x_max) = x_range(self.train, z);
        let cp = Checkpoint {
            iter,
            train_rmse: rmse(self.train, z, link),
            val_rmse: self.val.map(|v| rmse(v, z, link)),
            x_min,
            x_max,
        };
        let better = match (self.best, cp.val_rmse) {
            (None, _) => true,
            (Some(b), Some(v)) => b.val_rmse.is_some_and(|bv| v < bv),
            (Some(_), None) => false,
        };
        if better {
            self.best = Some(cp);
        }
        self.last = Some(cp);
    }
}

/// Top singular value of the zero-filled, rescaled observation matrix.
pub fn reference_sigma1(obs: &ObservationSet) -> f64 {
    top_singular_value(&zero_filled_matrix(obs, !obs.is_complete()))
}

/// Resolve relative step sizes against the problem scale.
pub fn resolve_steps(exp: &Experiment, obs: &ObservationSet, truth: Option<&GroundTruth>) -> SolverConfig {
    let mut cfg = exp.solver.clone();
    let w = match cfg.params.scale {
        DataScale::Mean => 1.0 / obs.len() as f64,
        DataScale::Sum => 1.0,
    };
    if let Some(rel) = exp.steps.zeta_rel {
        let slope = match cfg.link_mode {
            LinkMode::Frozen(a) if a.derivative(0.0) > 0.0 => a.derivative(0.0),
            _ => 1.0,
        };
        let sigma1 = match truth {
            Some(t) => top_singular_value(&t.z_star.product()),
            None => {
                let shifted = match cfg.link_mode {
                    LinkMode::Frozen(a) => obs.map_responses(|y| (y - a.value(0.0)) / slope),
                    LinkMode::Learn => {
                        let mean = obs.mean_response();
                        obs.map_responses(|y| y - mean)
                    }
                };
                reference_sigma1(&shifted)
            }
        };
        cfg.zeta = rel / (w * sigma1 * slope * slope);
    }
    if let Some(rel) = exp.steps.eta_rel {
        cfg.eta = rel / (w * obs.len() as f64);
    }
    cfg
}

/// Fit `train`, tracking validation RMSE at diagnostic iterations and streaming
/// the trace to `trace_path` when given.
pub fn run_single(
    exp: &Experiment,
    train: &ObservationSet,
    val: Option<&ObservationSet>,
    truth: Option<&GroundTruth>,
    trace_path: Option<&Path>,
) -> Result<RunOutcome> {
    let shift = if exp.center { train.mean_response() } else { 0.0 };
    let train = train.map_responses(|y| y - shift);
    let val = val.map(|v| v.map_responses(|y| y - shift));
    let cfg = resolve_steps(exp, &train, truth);

    let out = match trace_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
            writeln!(w, "{TRACE_HEADER}").map_err(|e| Error::io(p, e))?;
            Some(w)
        }
        None => None,
    };
    let mut sink = RunSink {
        out,
        io_error: None,
        train: &train,
        val: val.as_ref(),
        best: None,
        last: None,
    };
    let result = bcd_run_with(&train, &cfg, truth, &StandardObjective(cfg.params), &mut sink);
    if let (Some(p), Some(mut w)) = (trace_path, sink.out.take()) {
        if let Some(e) = sink.io_error.take() {
            return Err(Error::io(p, e));
        }
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    let trace = result?;
    let best = if val.is_some() { sink.best } else { sink.last };
    let best = best.expect("the final iteration is always a checkpoint");
    Ok(RunOutcome {
        trace,
        best,
        shift,
        config: cfg,
    })
}

/// Predict `phi(<Z_i, Z_{n+t}>) + shift`.
pub fn predict(z: &FactorMatrix, link: &dyn Link, shift: f64, row: usize, col: usize) -> f64 {
    link.value(z.entry(row, col)) + shift
}
