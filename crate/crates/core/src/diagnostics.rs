//! Ground-truth and theory-facing metrics: Procrustes alignment, the
//! phi-subproblem minimizer `phi#(Z)`, the Lyapunov potential, regret and
//! link-estimation error.
//!
//! `phi#` here is the unconstrained minimizer over H. The monotone class is a
//! subset, so regret gaps measured against it upper-bound the constrained ones.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, interpolate_on_grid, KernelSpec, LinkFunction};
use crate::linalg::{min_eigenvalue, pivoted_cholesky, polar_orthogonal, refined_spd_solve};
use crate::link::Link;
use crate::model::{FactorMatrix, ObservationSet, TrueLink};
use crate::objective::{balance_term, loss, sample_points, ObjectiveParams};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub rotation: DMatrix<f64>,
    pub delta: FactorMatrix,
    pub delta_fro: f64,
}

/// `R(Z) = argmin_{R R^T = I} ||Z - Z* R||_F`, from the SVD of `Z*^T Z`.
pub fn procrustes_align(z: &FactorMatrix, z_star: &FactorMatrix) -> Result<AlignmentResult> {
    if !z.same_shape(z_star) {
        return Err(Error::DimensionMismatch(format!(
            "cannot align {}x{} against {}x{}",
            z.rows(),
            z.rank(),
            z_star.rows(),
            z_star.rank()
        )));
    }
    let a = z_star.to_dmatrix().transpose() * z.to_dmatrix();
    let rotation = polar_orthogonal(&a);
    let mut delta = z_star.mul_right(&rotation);
    delta.axpy(-1.0, z);
    let delta = delta.scaled(-1.0);
    let delta_fro = delta.frobenius_norm();
    Ok(AlignmentResult {
        rotation,
        delta,
        delta_fro,
    })
}

/// Solution of `(ridge I + 2K) beta = 2 targets` and the residual `targets - K beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
    pub residual: DVector<f64>,
}

/// Dense kernel ridge solve with iterative refinement.
pub fn kernel_ridge(points: &[f64], targets: &[f64], kernel: &KernelSpec, ridge: f64) -> Result<RidgeFit> {
    if points.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points but {} targets",
            points.len(),
            targets.len()
        )));
    }
    if !(ridge.is_finite() && ridge > 0.0) {
        return Err(Error::InvalidConfig(format!("ridge must be positive, got {ridge}")));
    }
    let k = gram_matrix(kernel, points);
    let mut a = &k * 2.0;
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    let y = DVector::from_column_slice(targets);
    let rhs = &y * 2.0;
    let (beta, res) = refined_spd_solve(&a, 0.0, &rhs, 10).ok_or(Error::IllConditioned {
        ridge,
        residual: f64::INFINITY,
    })?;
    if !(res <= 1e-9 * rhs.amax().max(1.0)) {
        return Err(Error::IllConditioned { ridge, residual: res });
    }
    let residual = &y - &k * &beta;
    Ok(RidgeFit { beta, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSharpOptions {
    /// Largest sample count solved with a dense Gram; above it a pivoted
    /// Cholesky factor and the Woodbury identity are used.
    pub dense_limit: usize,
    /// Stop the pivoted Cholesky once every remaining diagonal is below this.
    pub low_rank_tol: f64,
    /// Fit on a uniform subsample of this many samples instead of all of them.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for PhiSharpOptions {
    fn default() -> Self {
        PhiSharpOptions {
            dense_limit: 600,
            low_rank_tol: 1e-13,
            subsample: None,
            seed: 0,
        }
    }
}

/// `phi#(Z)` together with quantities that make it cheap to compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpFit {
    pub link: LinkFunction,
    /// Sample points the fit used, in sample order.
    pub points: Vec<f64>,
    /// Coefficients aligned with `points` (before duplicate merging).
    pub beta: Vec<f64>,
    /// `(K beta)_k`: the kernel part of `phi#` at each point.
    pub fitted: Vec<f64>,
    /// `||phi#||_H^2 = beta^T K beta`.
    pub norm_sq: f64,
    pub subsampled: bool,
}

impl SharpFit {
    /// `<phi, phi#>_H`.
    pub fn inner_with(&self, phi: &LinkFunction) -> f64 {
        self.points
            .iter()
            .zip(&self.beta)
            .map(|(&x, &b)| b * phi.kernel_part(x))
            .sum()
    }

    /// `||phi - phi#||_H^2` by expanding the square.
    pub fn distance_sq(&self, phi: &LinkFunction) -> f64 {
        (phi.rkhs_norm_sq() - 2.0 * self.inner_with(phi) + self.norm_sq).max(0.0)
    }

    /// `L(phi#, Z)`.
    pub fn loss(&self, obs: &ObservationSet, z: &FactorMatrix, params: &ObjectiveParams) -> f64 {
        if self.subsampled {
            return loss(obs, z, &self.link, params).total;
        }
        let offset = self.link.offset();
        let g: Vec<f64> = obs.responses().zip(&self.fitted).map(|(y, f)| y - offset - f).collect();
        let data = params.weight(g.len()) * g.iter().map(|v| v * v).sum::<f64>();
        data + balance_term(z, params.lambda) + 0.5 * params.alpha * self.norm_sq
    }
}

/// `phi#(Z) = argmin_phi L(phi, Z)` with the offset held at `offset`.
///
/// Under data weight `w` the stationarity condition is
/// `(alpha/w I + 2K) beta = 2 (y - offset)`.
pub fn phi_sharp(
    obs: &ObservationSet,
    z: &FactorMatrix,
    kernel: &KernelSpec,
    params: &ObjectiveParams,
    offset: f64,
    opts: &PhiSharpOptions,
) -> Result<LinkFunction> {
    Ok(phi_sharp_fit(obs, z, kernel, params, offset, opts)?.link)
}

pub fn phi_sharp_fit(
    obs: &ObservationSet,
    z: &FactorMatrix,
    kernel: &KernelSpec,
    params: &ObjectiveParams,
    offset: f64,
    opts: &PhiSharpOptions,
) -> Result<SharpFit> {
    if !(params.alpha > 0.0) {
        return Err(Error::InvalidConfig("phi# needs alpha > 0".into()));
    }
    let mut x = sample_points(obs, z);
    let mut y: Vec<f64> = obs.responses().map(|v| v - offset).collect();
    let mut m = obs.len();
    let mut subsampled = false;
    if let Some(size) = opts.subsample {
        if size < m {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut keep = index::sample(&mut rng, m, size).into_vec();
            keep.sort_unstable();
            x = keep.iter().map(|&i| x[i]).collect();
            y = keep.iter().map(|&i| y[i]).collect();
            m = size;
            subsampled = true;
        }
    }
    let ridge = params.alpha / params.weight(m);
    let (beta, fitted, norm_sq) = if m <= opts.dense_limit {
        let fit = kernel_ridge(&x, &y, kernel, ridge)?;
        let fitted: Vec<f64> = y.iter().zip(fit.residual.iter()).map(|(a, e)| a - e).collect();
        let beta: Vec<f64> = fit.beta.iter().cloned().collect();
        let norm: f64 = beta.iter().zip(&fitted).map(|(b, f)| b * f).sum();
        (beta, fitted, norm.max(0.0))
    } else {
        low_rank_ridge(&x, &y, kernel, ridge, opts.low_rank_tol)?
    };
    let link = LinkFunction::from_atoms(*kernel, &x, &beta, offset)?;
    Ok(SharpFit {
        link,
        points: x,
        beta,
        fitted,
        norm_sq,
        subsampled,
    })
}

/// `(ridge I + 2 F F^T)^{-1} 2y` via Woodbury, where `F F^T ~ K`.
/// Returns `(beta, F F^T beta, beta^T F F^T beta)`.
fn low_rank_ridge(
    x: &[f64],
    y: &[f64],
    kernel: &KernelSpec,
    ridge: f64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let m = x.len();
    let diag: Vec<f64> = x.iter().map(|&a| kernel.eval(a, a)).collect();
    let f = pivoted_cholesky(&diag, |j| x.iter().map(|&a| kernel.eval(a, x[j])).collect(), tol, m);
    let yv = DVector::from_column_slice(y);
    let p = f.ncols();
    let mut inner = f.transpose() * &f * 2.0;
    for i in 0..p {
        inner[(i, i)] += ridge;
    }
    let fty = f.transpose() * &yv;
    let (s, res) = refined_spd_solve(&inner, 0.0, &fty, 10).ok_or(Error::IllConditioned {
        ridge,
        residual: f64::INFINITY,
    })?;
    if !(res <= 1e-9 * fty.amax().max(1.0)) {
        return Err(Error::IllConditioned { ridge, residual: res });
    }
    // beta = (2/ridge) (y - 2 F s)
    let beta = (yv - &f * s * 2.0) * (2.0 / ridge);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::IllConditioned {
            ridge,
            residual: f64::INFINITY,
        });
    }
    let u = f.transpose() * &beta;
    let fitted = &f * &u;
    Ok((
        beta.iter().cloned().collect(),
        fitted.iter().cloned().collect(),
        u.norm_squared(),
    ))
}

/// Residual bound check on noiseless data, with the ridge taken literally as `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `||e||_2 / sqrt(M)` against `alpha sqrt(B_K) ||phi*||_H / (alpha + 2 lambda_min(K))`.
pub fn residual_bound_check(
    obs: &ObservationSet,
    z: &FactorMatrix,
    kernel: &KernelSpec,
    alpha: f64,
    phi_star_norm: f64,
) -> Result<ResidualBound> {
    let x = sample_points(obs, z);
    let y: Vec<f64> = obs.responses().collect();
    let fit = kernel_ridge(&x, &y, kernel, alpha)?;
    let m = x.len() as f64;
    let lhs = fit.residual.norm() / m.sqrt();
    let lam = min_eigenvalue(&gram_matrix(kernel, &x)).max(0.0);
    let rhs = alpha * kernel.b_k.sqrt() * phi_star_norm / (alpha + 2.0 * lam);
    Ok(ResidualBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    /// `||phi_t - phi#(Z_t)||_H^2`.
    pub e_t: f64,
    /// `||Delta(Z_t)||_F^2`; needs `Z*`.
    pub d_t: Option<f64>,
    pub gamma: f64,
    /// `E_t + gamma D_t`.
    pub v_t: Option<f64>,
    /// `||phi#(Z_t) - phi*||_H`; needs `phi*`.
    pub chi: Option<f64>,
}

/// Reference range for comparing a learned link against an analytic one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGrid {
    pub lo: f64,
    pub hi: f64,
}

impl ReferenceGrid {
    /// Covers the given points.
    pub fn covering(points: &[f64]) -> Self {
        let lo = points.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            ReferenceGrid { lo, hi }
        } else {
            let c = if lo.is_finite() { lo } else { 0.0 };
            ReferenceGrid {
                lo: c - 1.0,
                hi: c + 1.0,
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn potential(
    obs: &ObservationSet,
    z: &FactorMatrix,
    phi: &LinkFunction,
    z_star: Option<&FactorMatrix>,
    phi_star: Option<(&TrueLink, ReferenceGrid)>,
    params: &ObjectiveParams,
    gamma: f64,
    opts: &PhiSharpOptions,
) -> Result<PotentialReport> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
    }
    let sharp = phi_sharp(obs, z, phi.kernel(), params, phi.offset(), opts)?;
    let e_t = phi.distance_sq(&sharp)?;
    let d_t = match z_star {
        Some(zs) => Some(procrustes_align(z, zs)?.delta_fro.powi(2)),
        None => None,
    };
    let chi = match phi_star {
        Some((link, grid)) => Some(link_error(&sharp, link, grid)?),
        None => None,
    };
    Ok(PotentialReport {
        e_t,
        d_t,
        gamma,
        v_t: d_t.map(|d| e_t + gamma * d),
        chi,
    })
}

/// `L(phi, Z) - L(phi#(Z), Z)`.
pub fn regret_gap(
    obs: &ObservationSet,
    z: &FactorMatrix,
    phi: &LinkFunction,
    params: &ObjectiveParams,
    opts: &PhiSharpOptions,
) -> Result<f64> {
    let sharp = phi_sharp_fit(obs, z, phi.kernel(), params, phi.offset(), opts)?;
    Ok(loss(obs, z, phi, params).total - sharp.loss(obs, z, params))
}

/// Running averages `R_T = (1/T) sum_{t <= T} gap_t` over a sequence of iterates.
pub fn regret(
    iterates: &[(LinkFunction, FactorMatrix)],
    obs: &ObservationSet,
    params: &ObjectiveParams,
    opts: &PhiSharpOptions,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(iterates.len());
    let mut total = 0.0;
    for (t, (phi, z)) in iterates.iter().enumerate() {
        total += regret_gap(obs, z, phi, params, opts)?;
        out.push(total / (t + 1) as f64);
    }
    Ok(out)
}

/// Reference-grid spacing as a multiple of the bandwidth; keeps the
/// interpolation Gram well conditioned.
const REFERENCE_SPACING: f64 = 0.8;

/// `||phi - phi*||_H`. An analytic `phi*` is replaced by its kernel
/// interpolant (minus `phi`'s offset) on a grid over `grid`.
pub fn link_error(phi: &LinkFunction, phi_star: &TrueLink, grid: ReferenceGrid) -> Result<f64> {
    let target = match phi_star {
        TrueLink::Dictionary(d) => d.clone(),
        TrueLink::Analytic(a) => analytic_reference(phi.kernel(), a, phi.offset(), grid)?,
    };
    Ok(phi.distance_sq(&target)?.sqrt())
}

/// Kernel interpolant of `link - offset` on a uniform grid over `grid`.
pub fn analytic_reference(
    kernel: &KernelSpec,
    link: &dyn Link,
    offset: f64,
    grid: ReferenceGrid,
) -> Result<LinkFunction> {
    let h = kernel.bandwidth();
    let points = (((grid.hi - grid.lo) / (REFERENCE_SPACING * h)).ceil() as usize + 1).clamp(2, 400);
    interpolate_on_grid(kernel, grid.lo, grid.hi, points, offset, |x| link.value(x))
}
