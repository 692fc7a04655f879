//! Flat `section.key = value` settings read from a TOML file and overridden
//! from the command line.
//!
//! ```toml
//! [synth]
//! n = 100
//! link = "sigmoid"
//!
//! [solver]
//! zeta = 1e-5
//! monotone = "qp"
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nlfactor::diagnostics::PhiSharpOptions;
use nlfactor::model::{NoiseModel, SamplingScheme};
use nlfactor::objective::DataScale;
use nlfactor::solver::{IncoherentProjection, LinkMode, PhiInit, SolverConfig};
use nlfactor::{KernelSpec, ProjectionMode, SyntheticConfig};

use crate::data::{RatingsFormat, SplitSpec, SplitStrategy};
use crate::error::{Error, Result};

/// Every key the tool understands, as `section.key`.
pub const KNOWN_KEYS: &[&str] = &[
    "synth.n",
    "synth.t",
    "synth.r",
    "synth.m",
    "synth.sampling",
    "synth.noise",
    "synth.sigma",
    "synth.link",
    "synth.scale",
    "synth.kappa",
    "synth.seed",
    "solver.r",
    "solver.zeta",
    "solver.zeta_rel",
    "solver.eta",
    "solver.eta_rel",
    "solver.lambda",
    "solver.alpha",
    "solver.data_scale",
    "solver.kernel",
    "solver.bandwidth",
    "solver.monotone",
    "solver.xi",
    "solver.big_xi",
    "solver.grid_points",
    "solver.range_lo",
    "solver.range_hi",
    "solver.qp_iterations",
    "solver.projection",
    "solver.beta",
    "solver.mu",
    "solver.max_iters",
    "solver.phi_init",
    "solver.diag_every",
    "solver.gamma",
    "solver.link",
    "solver.compress_spacing",
    "solver.rescale",
    "solver.dense_limit",
    "solver.low_rank_tol",
    "solver.sharp_subsample",
    "solver.record_wall_time",
    "solver.seed",
    "solver.center",
    "preset.grid",
    "preset.seeds",
    "data.path",
    "data.format",
    "data.holdout",
    "data.strategy",
    "data.split_seed",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn scalar_string(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(format!("{f:?}")),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut s = Settings::default();
        for (section, body) in table {
            let body = body
                .as_table()
                .ok_or_else(|| Error::Config(format!("top-level key `{section}` must be inside a section")))?;
            for (key, v) in body {
                let full = format!("{section}.{key}");
                let text = match v {
                    toml::Value::Array(items) => items
                        .iter()
                        .map(|x| scalar_string(x).ok_or_else(|| Error::Config(format!("`{full}`: nested value"))))
                        .collect::<Result<Vec<_>>>()?
                        .join(","),
                    other => {
                        scalar_string(other).ok_or_else(|| Error::Config(format!("`{full}`: unsupported value")))?
                    }
                };
                s.set(&full, &text)?;
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| Error::Config(format!("`{key}` item `{s}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }
}

fn set_if<T>(s: &Settings, key: &str, slot: &mut T) -> Result<()>
where
    T: FromStr,
    T::Err: Display,
{
    if let Some(v) = s.get(key)? {
        *slot = v;
    }
    Ok(())
}

/// Where a fit reads its observations from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub path: PathBuf,
    pub format: RatingsFormat,
    pub split: SplitSpec,
}

/// Step sizes given relative to the problem scale instead of absolutely.
///
/// `zeta = zeta_rel / (w * sigma_1 * s^2)` where `w` is the data weight,
/// `sigma_1` the top singular value of the reference matrix and `s` the slope of
/// a frozen link at 0 (1 otherwise). `eta = eta_rel / (w * M)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RelativeSteps {
    pub zeta_rel: Option<f64>,
    pub eta_rel: Option<f64>,
}

/// Everything a single run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub synth: SyntheticConfig,
    pub solver: SolverConfig,
    pub steps: RelativeSteps,
    /// Subtract the mean training response before fitting.
    pub center: bool,
    pub data: Option<DataSource>,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            synth: SyntheticConfig::new(100, 100, 3, 5000),
            solver: SolverConfig::default(),
            steps: RelativeSteps::default(),
            center: false,
            data: None,
        }
    }
}

fn parse_sampling(s: &str) -> Result<SamplingScheme> {
    match s {
        "with-replacement" => Ok(SamplingScheme::WithReplacement),
        "without-replacement" => Ok(SamplingScheme::WithoutReplacement),
        "complete" => Ok(SamplingScheme::Complete),
        other => Err(Error::Config(format!("unknown sampling `{other}`"))),
    }
}

impl Experiment {
    /// Overwrite the fields named in `s`.
    pub fn apply(&mut self, s: &Settings) -> Result<()> {
        self.apply_synth(s)?;
        self.apply_solver(s)?;
        self.apply_data(s)
    }

    fn apply_synth(&mut self, s: &Settings) -> Result<()> {
        let c = &mut self.synth;
        set_if(s, "synth.n", &mut c.n)?;
        set_if(s, "synth.t", &mut c.t)?;
        set_if(s, "synth.r", &mut c.r)?;
        set_if(s, "synth.m", &mut c.m)?;
        set_if(s, "synth.link", &mut c.link)?;
        set_if(s, "synth.seed", &mut c.seed)?;
        if let Some(v) = s.raw("synth.sampling") {
            c.sampling = parse_sampling(v)?;
        }
        let sigma: Option<f64> = s.get("synth.sigma")?;
        let noise = s.raw("synth.noise").map(str::to_string);
        match (noise.as_deref(), sigma) {
            (Some("none"), _) => c.noise = NoiseModel::None,
            (Some("gaussian") | None, Some(sigma)) => c.noise = NoiseModel::Gaussian { sigma },
            (Some("uniform"), Some(sigma)) => c.noise = NoiseModel::Uniform { sigma },
            (Some("gaussian" | "uniform"), None) => return Err(Error::Config("synth.noise needs synth.sigma".into())),
            (Some(other), _) => return Err(Error::Config(format!("unknown noise `{other}`"))),
            (None, None) => {}
        }
        let scale: Option<f64> = s.get("synth.scale")?;
        let kappa: Option<f64> = s.get("synth.kappa")?;
        if scale.is_some()
            || kappa.is_some()
            || s.raw("synth.n").is_some()
            || s.raw("synth.t").is_some()
            || s.raw("synth.r").is_some()
        {
            let top = scale.unwrap_or(1.0) * ((c.n as f64 * c.t as f64) / c.r as f64).sqrt();
            c.spectrum = nlfactor::model::linear_spectrum(top, kappa.unwrap_or(2.0), c.r);
        }
        Ok(())
    }

    fn apply_solver(&mut self, s: &Settings) -> Result<()> {
        let c = &mut self.solver;
        set_if(s, "solver.r", &mut c.r)?;
        set_if(s, "solver.zeta", &mut c.zeta)?;
        set_if(s, "solver.eta", &mut c.eta)?;
        if s.raw("solver.zeta").is_some() {
            self.steps.zeta_rel = None;
        }
        if s.raw("solver.eta").is_some() {
            self.steps.eta_rel = None;
        }
        if let Some(v) = s.get("solver.zeta_rel")? {
            self.steps.zeta_rel = Some(v);
        }
        if let Some(v) = s.get("solver.eta_rel")? {
            self.steps.eta_rel = Some(v);
        }
        set_if(s, "solver.lambda", &mut c.params.lambda)?;
        set_if(s, "solver.alpha", &mut c.params.alpha)?;
        set_if::<DataScale>(s, "solver.data_scale", &mut c.params.scale)?;
        let family = s.raw("solver.kernel");
        let bandwidth: Option<f64> = s.get("solver.bandwidth")?;
        match (family, bandwidth) {
            (Some(f), Some(h)) => c.kernel = Some(KernelSpec::from_name(f, h)?),
            (None, Some(h)) => c.kernel = Some(KernelSpec::gaussian(h)?),
            (Some(f), None) => return Err(Error::Config(format!("kernel `{f}` needs solver.bandwidth"))),
            (None, None) => {}
        }
        set_if::<ProjectionMode>(s, "solver.monotone", &mut c.monotone_mode)?;
        set_if(s, "solver.xi", &mut c.monotone.xi)?;
        set_if(s, "solver.big_xi", &mut c.monotone.big_xi)?;
        set_if(s, "solver.grid_points", &mut c.monotone.grid_points)?;
        set_if(s, "solver.qp_iterations", &mut c.monotone.qp_iterations)?;
        match (s.get::<f64>("solver.range_lo")?, s.get::<f64>("solver.range_hi")?) {
            (Some(lo), Some(hi)) => c.monotone.range = Some((lo, hi)),
            (None, None) => {}
            _ => return Err(Error::Config("solver.range_lo and solver.range_hi go together".into())),
        }
        let beta: Option<f64> = s.get("solver.beta")?;
        match (s.get::<bool>("solver.projection")?, beta) {
            (Some(false), _) => c.incoherent_projection = IncoherentProjection::Off,
            (Some(true), b) | (None, b @ Some(_)) => {
                c.incoherent_projection = IncoherentProjection::On { beta_override: b }
            }
            (None, None) => {}
        }
        if let Some(mu) = s.get("solver.mu")? {
            c.mu_estimate = Some(mu);
        }
        set_if(s, "solver.max_iters", &mut c.max_iters)?;
        set_if::<PhiInit>(s, "solver.phi_init", &mut c.phi_init)?;
        set_if(s, "solver.diag_every", &mut c.diag_every)?;
        set_if(s, "solver.gamma", &mut c.gamma)?;
        if let Some(v) = s.raw("solver.link") {
            c.link_mode = match v {
                "learn" => LinkMode::Learn,
                other => LinkMode::Frozen(other.parse()?),
            };
            if let LinkMode::Frozen(_) = c.link_mode {
                c.monotone_mode = ProjectionMode::None;
            }
        }
        if let Some(h) = s.get("solver.compress_spacing")? {
            c.compress_spacing = Some(h);
        }
        if let Some(b) = s.get("solver.rescale")? {
            c.rescale = Some(b);
        }
        let sharp: &mut PhiSharpOptions = &mut c.sharp;
        set_if(s, "solver.dense_limit", &mut sharp.dense_limit)?;
        set_if(s, "solver.low_rank_tol", &mut sharp.low_rank_tol)?;
        if let Some(k) = s.get("solver.sharp_subsample")? {
            sharp.subsample = Some(k);
        }
        set_if(s, "solver.record_wall_time", &mut c.record_wall_time)?;
        set_if(s, "solver.seed", &mut c.seed)?;
        c.validate()?;
        set_if(s, "solver.center", &mut self.center)?;
        Ok(())
    }

    fn apply_data(&mut self, s: &Settings) -> Result<()> {
        let path: Option<PathBuf> = s.get("data.path")?;
        let Some(path) = path.or_else(|| self.data.as_ref().map(|d| d.path.clone())) else {
            return Ok(());
        };
        let mut source = self.data.clone().unwrap_or(DataSource {
            path: path.clone(),
            format: RatingsFormat::MovielensCsv,
            split: SplitSpec::new(0.1, SplitStrategy::RowStratified, 0)?,
        });
        source.path = path;
        set_if(s, "data.format", &mut source.format)?;
        let holdout = s.get("data.holdout")?.unwrap_or(source.split.holdout_fraction);
        let strategy = s.get("data.strategy")?.unwrap_or(source.split.strategy);
        let seed = s.get("data.split_seed")?.unwrap_or(source.split.seed);
        source.split = SplitSpec::new(holdout, strategy, seed)?;
        self.data = Some(source);
        Ok(())
    }
}
