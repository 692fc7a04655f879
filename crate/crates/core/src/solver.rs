//! Projected block coordinate descent.
//!
//! Each iteration takes a projected gradient step in `Z` with `phi_t` held
//! fixed, then a projected functional gradient step in `phi` evaluated at the
//! new `Z_{t+1}`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{link_error, phi_sharp_fit, procrustes_align, PhiSharpOptions, ReferenceGrid};
use crate::error::{Error, Result};
use crate::kernel::{
    compress_dictionary, default_bandwidth, project_monotone, KernelSpec, LinkFunction, MonotoneBounds, ProjectionMode,
};
use crate::linalg::truncated_svd;
use crate::link::{AnalyticLink, Link};
use crate::model::{zero_filled_matrix, FactorMatrix, GroundTruth, ObservationSet};
use crate::objective::{self, sample_points, LossTerms, ObjectiveParams};

/// Whether the link is learned or held at a known analytic function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkMode {
    Learn,
    Frozen(AnalyticLink),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiInit {
    Zero,
    /// Empty dictionary with offset equal to the mean response.
    MeanOffset,
    /// `phi#(Z_0)` around the mean offset.
    KernelRidgeWarmstart,
}

impl std::str::FromStr for PhiInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => Ok(PhiInit::Zero),
            "mean-offset" => Ok(PhiInit::MeanOffset),
            "kernel-ridge-warmstart" => Ok(PhiInit::KernelRidgeWarmstart),
            other => Err(Error::InvalidConfig(format!("unknown phi init `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncoherentProjection {
    Off,
    On { beta_override: Option<f64> },
}

/// Derivative box and grid for the monotone projection. A missing range is
/// taken from the sample points at `Z_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSpec {
    pub xi: f64,
    pub big_xi: f64,
    pub grid_points: usize,
    pub range: Option<(f64, f64)>,
    pub qp_iterations: usize,
}

impl Default for MonotoneSpec {
    fn default() -> Self {
        MonotoneSpec {
            xi: 1e-3,
            big_xi: 10.0,
            grid_points: 12,
            range: None,
            qp_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub r: usize,
    pub zeta: f64,
    pub eta: f64,
    pub params: ObjectiveParams,
    /// `None` picks a gaussian with the default bandwidth over the `Z_0` sample points.
    pub kernel: Option<KernelSpec>,
    pub monotone: MonotoneSpec,
    pub monotone_mode: ProjectionMode,
    pub incoherent_projection: IncoherentProjection,
    /// `None` uses the ground truth's incoherence when supplied, else 3.
    pub mu_estimate: Option<f64>,
    pub max_iters: usize,
    pub phi_init: PhiInit,
    pub diag_every: usize,
    pub gamma: f64,
    pub link_mode: LinkMode,
    /// Dictionary snapping grid; `None` means bandwidth / 10.
    pub compress_spacing: Option<f64>,
    /// Zero-filled init rescaling; `None` rescales unless every cell is observed.
    pub rescale: Option<bool>,
    pub sharp: PhiSharpOptions,
    pub record_wall_time: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            r: 3,
            zeta: 1e-5,
            eta: 1e-4,
            params: ObjectiveParams::default().with_scale(objective::DataScale::Sum),
            kernel: None,
            monotone: MonotoneSpec::default(),
            monotone_mode: ProjectionMode::None,
            incoherent_projection: IncoherentProjection::Off,
            mu_estimate: None,
            max_iters: 1000,
            phi_init: PhiInit::MeanOffset,
            diag_every: 25,
            gamma: 1.0,
            link_mode: LinkMode::Learn,
            compress_spacing: None,
            rescale: None,
            sharp: PhiSharpOptions::default(),
            record_wall_time: true,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidConfig("rank must be >= 1".into()));
        }
        for (name, v) in [("zeta", self.zeta), ("eta", self.eta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.diag_every == 0 {
            return Err(Error::InvalidConfig("diag_every must be >= 1".into()));
        }
        self.params.validate()?;
        if let Some(mu) = self.mu_estimate {
            if !(mu >= 1.0) {
                return Err(Error::InvalidConfig(format!("mu must be >= 1, got {mu}")));
            }
        }
        if let IncoherentProjection::On { beta_override: Some(b) } = self.incoherent_projection {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidConfig(format!("beta must be positive, got {b}")));
            }
        }
        if let Some(h) = self.compress_spacing {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "compress spacing must be positive, got {h}"
                )));
            }
        }
        if self.monotone_mode != ProjectionMode::None {
            let m = &self.monotone;
            if !(m.xi > 0.0 && m.xi <= m.big_xi && m.big_xi.is_finite()) || m.grid_points < 2 {
                return Err(Error::InvalidConfig("invalid monotone bounds".into()));
            }
        }
        Ok(())
    }
}

/// Hold `phi` at `link` and skip its update.
pub fn freeze_phi_mode(cfg: &SolverConfig, link: AnalyticLink) -> SolverConfig {
    SolverConfig {
        link_mode: LinkMode::Frozen(link),
        monotone_mode: ProjectionMode::None,
        ..cfg.clone()
    }
}

/// The link carried by the solver.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedLink {
    Learned(LinkFunction),
    Frozen(AnalyticLink),
}

impl FittedLink {
    pub fn learned(&self) -> Option<&LinkFunction> {
        match self {
            FittedLink::Learned(l) => Some(l),
            FittedLink::Frozen(_) => None,
        }
    }
}

impl Link for FittedLink {
    fn value(&self, x: f64) -> f64 {
        match self {
            FittedLink::Learned(l) => l.value(x),
            FittedLink::Frozen(a) => a.value(x),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            FittedLink::Learned(l) => l.derivative(x),
            FittedLink::Frozen(a) => a.derivative(x),
        }
    }

    fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        match self {
            FittedLink::Learned(l) => LinkFunction::value_and_derivative(l, x),
            FittedLink::Frozen(a) => a.value_and_derivative(x),
        }
    }

    fn norm_sq(&self) -> f64 {
        match self {
            FittedLink::Learned(l) => l.rkhs_norm_sq(),
            FittedLink::Frozen(_) => 0.0,
        }
    }
}

/// One trace row. Diagnostics that were not computed at this iteration are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub data_term: f64,
    pub balance_term: f64,
    pub tikhonov_term: f64,
    pub delta_fro: Option<f64>,
    pub phi_h_err: Option<f64>,
    pub e_t: Option<f64>,
    pub d_t: Option<f64>,
    pub v_t: Option<f64>,
    pub regret_avg: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// Receives rows as they are produced, and checkpoints at diagnostic iterations.
pub trait TraceSink {
    fn row(&mut self, row: &TraceRow);

    fn checkpoint(&mut self, _iter: usize, _z: &FactorMatrix, _link: &FittedLink) {}
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn row(&mut self, _row: &TraceRow) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
    pub z: FactorMatrix,
    pub link: FittedLink,
    pub kernel: KernelSpec,
    pub bounds: Option<MonotoneBounds>,
    /// Row-norm radius of the incoherent set, when the projection is on.
    pub beta: Option<f64>,
    /// Non-zero columns of the SVD initialization.
    pub init_rank: usize,
}

/// The two block updates the solver needs. The default implementation is
/// [`StandardObjective`]; tests substitute recording stubs.
pub trait BlockObjective {
    fn loss(&self, obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link) -> LossTerms;

    fn grad_z(&self, obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link) -> FactorMatrix;

    fn phi_step(
        &self,
        obs: &ObservationSet,
        z: &FactorMatrix,
        phi: &LinkFunction,
        eta: f64,
        spacing: f64,
    ) -> Result<LinkFunction>;
}

pub struct StandardObjective(pub ObjectiveParams);

impl BlockObjective for StandardObjective {
    fn loss(&self, obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link) -> LossTerms {
        objective::loss(obs, z, phi, &self.0)
    }

    fn grad_z(&self, obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link) -> FactorMatrix {
        objective::grad_z(obs, z, phi, &self.0)
    }

    fn phi_step(
        &self,
        obs: &ObservationSet,
        z: &FactorMatrix,
        phi: &LinkFunction,
        eta: f64,
        spacing: f64,
    ) -> Result<LinkFunction> {
        objective::phi_step(obs, z, phi, &self.0, eta, spacing)
    }
}

/// `Z_0 = [U S^{1/2}; V S^{1/2}]` from the rank-`r` SVD of the zero-filled
/// observation matrix.
pub fn init_svd(obs: &ObservationSet, r: usize, rescale: bool) -> Result<FactorMatrix> {
    let max = obs.n().min(obs.t());
    if r > max {
        return Err(Error::RankTooLarge { rank: r, max });
    }
    let m = zero_filled_matrix(obs, rescale);
    let (u, s, v) = truncated_svd(&m, r);
    let mut z = FactorMatrix::zeros(obs.n(), obs.t(), r);
    for (a, sv) in s.iter().enumerate() {
        let root = sv.max(0.0).sqrt();
        if root == 0.0 {
            continue;
        }
        for i in 0..obs.n() {
            z.row_mut(i)[a] = u[(i, a)] * root;
        }
        for t in 0..obs.t() {
            z.row_mut(obs.n() + t)[a] = v[(t, a)] * root;
        }
    }
    Ok(z)
}

/// Clip every row of `z` to Euclidean norm at most `beta` (up to rounding).
pub fn project_incoherent(z: &FactorMatrix, beta: f64) -> FactorMatrix {
    let mut out = z.clone();
    for j in 0..out.rows() {
        let norm = out.row_norm(j);
        // the slack keeps the projection idempotent under rounding
        if norm > beta * (1.0 + 4.0 * f64::EPSILON) {
            let s = beta / norm;
            out.row_mut(j).iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// `beta = (4/3) sqrt(mu / (n+T)) ||Z_0||_F`.
pub fn compute_beta(z0: &FactorMatrix, mu: f64) -> Result<f64> {
    if !(mu >= 1.0 && mu.is_finite()) {
        return Err(Error::InvalidConfig(format!("mu must be >= 1, got {mu}")));
    }
    Ok(4.0 / 3.0 * (mu / z0.rows() as f64).sqrt() * z0.frobenius_norm())
}

const DEFAULT_MU: f64 = 3.0;

pub fn bcd_run(obs: &ObservationSet, cfg: &SolverConfig, truth: Option<&GroundTruth>) -> Result<SolverTrace> {
    bcd_run_with(obs, cfg, truth, &StandardObjective(cfg.params), &mut NullSink)
}

/// [`bcd_run`] with a custom objective and a streaming sink.
pub fn bcd_run_with(
    obs: &ObservationSet,
    cfg: &SolverConfig,
    truth: Option<&GroundTruth>,
    objective: &dyn BlockObjective,
    sink: &mut dyn TraceSink,
) -> Result<SolverTrace> {
    cfg.validate()?;
    if let Some(t) = truth {
        if t.z_star.n() != obs.n() || t.z_star.t() != obs.t() || t.z_star.rank() != cfg.r {
            return Err(Error::DimensionMismatch(
                "ground truth does not match the observations and rank".into(),
            ));
        }
    }
    let start = Instant::now();
    let rescale = cfg.rescale.unwrap_or(!obs.is_complete());

    // Initial link and the response transform the SVD init sees.
    let offset0 = match (cfg.link_mode, cfg.phi_init) {
        (LinkMode::Frozen(_), _) | (_, PhiInit::Zero) => 0.0,
        _ => obs.mean_response(),
    };
    let (shift, slope) = match cfg.link_mode {
        LinkMode::Frozen(a) => {
            let s = a.derivative(0.0);
            (a.value(0.0), if s > 0.0 { s } else { 1.0 })
        }
        LinkMode::Learn => (offset0, 1.0),
    };
    let centered = obs.map_responses(|y| (y - shift) / slope);
    let z_init = init_svd(&centered, cfg.r, rescale)?;
    let init_rank = (0..cfg.r)
        .filter(|&a| (0..z_init.rows()).any(|j| z_init.row(j)[a] != 0.0))
        .count();

    let beta = match cfg.incoherent_projection {
        IncoherentProjection::Off => None,
        IncoherentProjection::On { beta_override: Some(b) } => Some(b),
        IncoherentProjection::On { beta_override: None } => {
            let mu = cfg.mu_estimate.or(truth.map(|t| t.mu.max(1.0))).unwrap_or(DEFAULT_MU);
            Some(compute_beta(&z_init, mu)?)
        }
    };
    let project_z = |z: FactorMatrix| match beta {
        Some(b) => project_incoherent(&z, b),
        None => z,
    };
    let mut z = project_z(z_init);

    let x0 = sample_points(obs, &z);
    let kernel = match cfg.kernel {
        Some(k) => k,
        None => KernelSpec::gaussian(default_bandwidth(&x0, cfg.monotone.grid_points))?,
    };
    let spacing = cfg.compress_spacing.unwrap_or(kernel.bandwidth() / 10.0);
    let bounds = if cfg.monotone_mode != ProjectionMode::None {
        let (lo, hi) = cfg.monotone.range.unwrap_or_else(|| {
            let g = ReferenceGrid::covering(&x0);
            (g.lo, g.hi)
        });
        let mut b = MonotoneBounds::new(cfg.monotone.xi, cfg.monotone.big_xi, cfg.monotone.grid_points, lo, hi)?;
        b.qp_iterations = cfg.monotone.qp_iterations;
        Some(b)
    } else {
        None
    };
    let project_phi = |phi: LinkFunction| -> Result<LinkFunction> {
        match bounds {
            Some(b) => project_monotone(&phi, &b, cfg.monotone_mode),
            None => Ok(phi),
        }
    };

    let mut link = match cfg.link_mode {
        LinkMode::Frozen(a) => FittedLink::Frozen(a),
        LinkMode::Learn => {
            let phi = match cfg.phi_init {
                PhiInit::Zero => LinkFunction::zero(kernel),
                PhiInit::MeanOffset => LinkFunction::constant(kernel, offset0),
                PhiInit::KernelRidgeWarmstart => {
                    let fit = phi_sharp_fit(obs, &z, &kernel, &cfg.params, offset0, &cfg.sharp)?;
                    compress_dictionary(&fit.link, spacing)?
                }
            };
            FittedLink::Learned(project_phi(phi)?)
        }
    };

    let reference = truth.map(|t| ReferenceGrid::covering(&sample_points(obs, &t.z_star)));
    let mut diag = DiagState::default();
    let mut rows = Vec::with_capacity(cfg.max_iters + 1);

    let mut emit = |iter: usize,
                    z: &FactorMatrix,
                    link: &FittedLink,
                    terms: LossTerms,
                    diag: &mut DiagState,
                    sink: &mut dyn TraceSink|
     -> Result<()> {
        if !terms.total.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        let full = iter.is_multiple_of(cfg.diag_every) || iter == cfg.max_iters;
        let delta = match truth {
            Some(t) => Some(procrustes_align(z, &t.z_star)?.delta_fro),
            None => None,
        };
        let d_t = delta.map(|d| d * d);
        let mut row = TraceRow {
            iter,
            loss: terms.total,
            data_term: terms.data,
            balance_term: terms.balance,
            tikhonov_term: terms.tikhonov,
            delta_fro: delta,
            phi_h_err: None,
            e_t: None,
            d_t,
            v_t: None,
            regret_avg: None,
            wall_ms: None,
        };
        if full {
            if let FittedLink::Learned(phi) = link {
                if let (Some(t), Some(grid)) = (truth, reference) {
                    row.phi_h_err = Some(link_error(phi, &t.link, grid)?);
                }
                if cfg.params.alpha > 0.0 {
                    let fit = phi_sharp_fit(obs, z, phi.kernel(), &cfg.params, phi.offset(), &cfg.sharp)?;
                    let e_t = fit.distance_sq(phi);
                    row.e_t = Some(e_t);
                    row.v_t = d_t.map(|d| e_t + cfg.gamma * d);
                    let gap = terms.total - fit.loss(obs, z, &cfg.params);
                    row.regret_avg = Some(diag.push_gap(iter, gap));
                }
            }
            sink.checkpoint(iter, z, link);
        }
        if cfg.record_wall_time {
            row.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        }
        sink.row(&row);
        rows.push(row);
        Ok(())
    };

    let terms = objective.loss(obs, &z, &link);
    emit(0, &z, &link, terms, &mut diag, sink)?;

    for iter in 1..=cfg.max_iters {
        let gz = objective.grad_z(obs, &z, &link);
        let mut next = z.clone();
        next.axpy(-cfg.zeta, &gz);
        z = project_z(next);
        if !z.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        if let FittedLink::Learned(phi) = &link {
            let stepped = objective
                .phi_step(obs, &z, phi, cfg.eta, spacing)
                .map_err(|e| match e {
                    Error::Diverged { .. } => Error::Diverged { iter },
                    other => other,
                })?;
            link = FittedLink::Learned(project_phi(stepped)?);
        }
        let terms = objective.loss(obs, &z, &link);
        emit(iter, &z, &link, terms, &mut diag, sink)?;
    }

    Ok(SolverTrace {
        rows,
        z,
        link,
        kernel,
        bounds,
        beta,
        init_rank,
    })
}

/// Running regret average from gaps at diagnostic iterations. Gaps between
/// diagnostic points are linearly interpolated; the average at `T` is over
/// iterations `0..=T`.
#[derive(Debug, Default)]
struct DiagState {
    last: Option<(usize, f64)>,
    sum: f64,
}

impl DiagState {
    fn push_gap(&mut self, iter: usize, gap: f64) -> f64 {
        match self.last {
            None => {
                // anything before the first diagnostic point is carried flat
                self.sum = gap * (iter + 1) as f64;
            }
            Some((t0, g0)) => {
                let span = (iter - t0) as f64;
                for k in 1..=(iter - t0) {
                    let w = k as f64 / span;
                    self.sum += g0 + w * (gap - g0);
                }
            }
        }
        self.last = Some((iter, gap));
        self.sum / (iter + 1) as f64
    }
}
