//! Observation triples, fitted models and synthetic ground truth on disk.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nlfactor::kernel::LinkRecord;
use nlfactor::model::TrueLink;
use nlfactor::solver::FittedLink;
use nlfactor::{AnalyticLink, FactorMatrix, GroundTruth, LinkFunction, ObservationSet, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace_io::fmt_f64;

/// Writes `# n=<n> t=<t>`, a `row,col,y` header, then one line per sample.
pub fn write_observations(obs: &ObservationSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "# n={} t={}", obs.n(), obs.t())?;
        writeln!(w, "row,col,y")?;
        for s in obs.samples() {
            writeln!(w, "{},{},{}", s.row, s.col, fmt_f64(s.y))?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line: line as u64,
        msg,
    };
    let mut dims = None;
    let mut samples = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = k + 1;
        match k {
            0 => {
                let parse = |key: &str| {
                    line.split_whitespace()
                        .find_map(|tok| tok.strip_prefix(key))
                        .and_then(|v| v.parse::<usize>().ok())
                };
                match (parse("n="), parse("t=")) {
                    (Some(n), Some(t)) if line.starts_with('#') => dims = Some((n, t)),
                    _ => return Err(bad(lineno, "expected `# n=<n> t=<t>`".into())),
                }
            }
            1 if line.trim() == "row,col,y" => {}
            1 => return Err(bad(lineno, "expected header `row,col,y`".into())),
            _ => {
                let f: Vec<&str> = line.split(',').map(str::trim).collect();
                if f.len() != 3 {
                    return Err(bad(lineno, format!("expected 3 fields, found {}", f.len())));
                }
                let row = f[0].parse().map_err(|_| bad(lineno, format!("bad row `{}`", f[0])))?;
                let col = f[1]
                    .parse()
                    .map_err(|_| bad(lineno, format!("bad column `{}`", f[1])))?;
                let y = f[2].parse().map_err(|_| bad(lineno, format!("bad value `{}`", f[2])))?;
                samples.push(Sample { row, col, y });
            }
        }
    }
    let (n, t) = dims.ok_or_else(|| Error::EmptyDataset { path: path.into() })?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset { path: path.into() });
    }
    Ok(ObservationSet::new(n, t, samples)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SavedLink {
    Frozen { link: AnalyticLink },
    Learned { record: LinkRecord },
}

/// A fitted `Z`, link and response shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    /// Row-major `(n+T) x r`.
    pub z: Vec<f64>,
    pub shift: f64,
    pub link: SavedLink,
}

impl ModelFile {
    pub fn new(z: &FactorMatrix, link: &FittedLink, shift: f64) -> Self {
        let link = match link {
            FittedLink::Frozen(a) => SavedLink::Frozen { link: *a },
            FittedLink::Learned(l) => SavedLink::Learned { record: l.to_record() },
        };
        ModelFile {
            n: z.n(),
            t: z.t(),
            r: z.rank(),
            z: z.as_slice().to_vec(),
            shift,
            link,
        }
    }

    pub fn factors(&self) -> Result<FactorMatrix> {
        Ok(FactorMatrix::new(self.n, self.t, self.r, self.z.clone())?)
    }

    pub fn fitted_link(&self) -> Result<FittedLink> {
        Ok(match &self.link {
            SavedLink::Frozen { link } => FittedLink::Frozen(*link),
            SavedLink::Learned { record } => FittedLink::Learned(LinkFunction::from_record(record)?),
        })
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Ground truth of a synthetic instance with an analytic link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    pub z_star: Vec<f64>,
    pub link: AnalyticLink,
    pub sigma: f64,
}

impl TruthFile {
    pub fn new(truth: &GroundTruth, link: AnalyticLink) -> Self {
        let z = &truth.z_star;
        TruthFile {
            n: z.n(),
            t: z.t(),
            r: z.rank(),
            z_star: z.as_slice().to_vec(),
            link,
            sigma: truth.sigma,
        }
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let z = FactorMatrix::new(self.n, self.t, self.r, self.z_star.clone())?;
        Ok(GroundTruth::from_factors(z, TrueLink::Analytic(self.link), self.sigma))
    }
}
