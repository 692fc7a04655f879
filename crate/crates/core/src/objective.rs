//! The regularized loss
//!
//! `L(phi, Z) = w sum_k g_k^2 + (lambda/4) ||Z^T D Z||_F^2 + (alpha/2) ||phi||_H^2`
//!
//! with `g_k = y_k - phi(x_k)`, `x_k = <Z_{i_k}, Z_{n+t_k}>`, `D = diag(I_n, -I_T)`
//! and data weight `w` (`1/M` or `1`, see [`DataScale`]), plus both block gradients.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::LinkFunction;
use crate::link::Link;
use crate::model::{dot, FactorMatrix, ObservationSet};

/// Fixed reduction chunk; partial sums are combined in chunk order.
const CHUNK: usize = 1024;

/// Weight on the squared residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataScale {
    /// `(1/M) sum g_k^2`.
    Mean,
    /// `sum g_k^2`, the scaling under which `(alpha I + 2K) beta = 2y` is the
    /// exact phi-subproblem minimizer.
    Sum,
}

impl std::str::FromStr for DataScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(DataScale::Mean),
            "sum" => Ok(DataScale::Sum),
            other => Err(Error::InvalidConfig(format!("unknown data scale `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub lambda: f64,
    pub alpha: f64,
    pub scale: DataScale,
}

impl ObjectiveParams {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        let p = ObjectiveParams {
            lambda,
            alpha,
            scale: DataScale::Mean,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_scale(mut self, scale: DataScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Data weight `w` for `m` samples.
    pub fn weight(&self, m: usize) -> f64 {
        match self.scale {
            DataScale::Mean => 1.0 / m as f64,
            DataScale::Sum => 1.0,
        }
    }
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        ObjectiveParams {
            lambda: 0.5,
            alpha: 1e-3,
            scale: DataScale::Mean,
        }
    }
}

/// The three loss terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub data: f64,
    pub balance: f64,
    pub tikhonov: f64,
}

/// `grad_phi L = decay * phi + sum_k new_coeffs[k] K(new_centers[k], .)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiGradient {
    pub decay: f64,
    pub new_centers: Vec<f64>,
    pub new_coeffs: Vec<f64>,
}

impl PhiGradient {
    /// `phi - eta * grad`, followed by dictionary compression when a spacing
    /// is given. The offset decays with the coefficients.
    pub fn apply(&self, phi: &LinkFunction, eta: f64, spacing: Option<f64>) -> Result<LinkFunction> {
        let shrink = 1.0 - eta * self.decay;
        let mut centers = Vec::with_capacity(phi.len() + self.new_centers.len());
        let mut coeffs = Vec::with_capacity(centers.capacity());
        centers.extend_from_slice(phi.centers());
        coeffs.extend(phi.coeffs().iter().map(|b| b * shrink));
        centers.extend_from_slice(&self.new_centers);
        coeffs.extend(self.new_coeffs.iter().map(|b| -eta * b));
        let offset = phi.offset() * shrink;
        if centers.iter().chain(&coeffs).any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::Diverged { iter: 0 });
        }
        match spacing {
            Some(h) if centers.iter().any(|c| (c / h).abs() >= 9.0e18) => Err(Error::Diverged { iter: 0 }),
            Some(h) => Ok(crate::kernel::snap_atoms(*phi.kernel(), &centers, &coeffs, offset, h)),
            None => LinkFunction::from_atoms(*phi.kernel(), &centers, &coeffs, offset),
        }
    }

    /// The gradient as an element of H (offset-free).
    pub fn as_dictionary(&self, phi: &LinkFunction) -> Result<LinkFunction> {
        let centers: Vec<f64> = phi.centers().iter().chain(&self.new_centers).cloned().collect();
        let coeffs: Vec<f64> = phi
            .coeffs()
            .iter()
            .map(|b| self.decay * b)
            .chain(self.new_coeffs.iter().cloned())
            .collect();
        LinkFunction::from_atoms(*phi.kernel(), &centers, &coeffs, 0.0)
    }

    /// `<grad, psi>_H` for an offset-free direction `psi`.
    pub fn directional(&self, phi: &LinkFunction, psi: &LinkFunction) -> Result<f64> {
        let grad = self.as_dictionary(phi)?;
        let plus = grad.distance_sq(&psi.clone().with_offset(0.0).negated())?;
        let minus = grad.distance_sq(psi)?;
        Ok(0.25 * (plus - minus))
    }

    pub fn is_zero(&self) -> bool {
        self.decay == 0.0 && self.new_coeffs.iter().all(|&b| b == 0.0)
    }
}

/// Per-sample inner products `x_k` in sample order.
pub fn sample_points(obs: &ObservationSet, z: &FactorMatrix) -> Vec<f64> {
    let n = z.n();
    obs.samples()
        .par_iter()
        .map(|s| dot(z.row(s.row), z.row(n + s.col)))
        .collect()
}

/// `(x_k, g_k)` in sample order.
pub fn residuals(obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link) -> (Vec<f64>, Vec<f64>) {
    let x = sample_points(obs, z);
    let g = obs
        .samples()
        .par_iter()
        .zip(x.par_iter())
        .map(|(s, &xk)| s.y - phi.value(xk))
        .collect();
    (x, g)
}

/// Sum of squares with a thread-count-independent reduction order.
pub(crate) fn chunked_sum_sq(v: &[f64]) -> f64 {
    let parts: Vec<f64> = v
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|a| a * a).sum::<f64>())
        .collect();
    parts.iter().sum()
}

/// `(lambda/4) ||Z^T D Z||_F^2`.
pub fn balance_term(z: &FactorMatrix, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    0.25 * lambda * z.balance_core().norm_squared()
}

pub fn loss(obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link, params: &ObjectiveParams) -> LossTerms {
    let (_, g) = residuals(obs, z, phi);
    loss_from_residuals(&g, z, phi, params)
}

pub(crate) fn loss_from_residuals(g: &[f64], z: &FactorMatrix, phi: &dyn Link, params: &ObjectiveParams) -> LossTerms {
    let data = params.weight(g.len()) * chunked_sum_sq(g);
    let balance = balance_term(z, params.lambda);
    let tikhonov = if params.alpha == 0.0 {
        0.0
    } else {
        0.5 * params.alpha * phi.norm_sq()
    };
    LossTerms {
        total: data + balance + tikhonov,
        data,
        balance,
        tikhonov,
    }
}

/// `grad_Z L = -2w sum_k g_k phi'(x_k) (A_k + A_k^T) Z + lambda D Z (Z^T D Z)`.
pub fn grad_z(obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link, params: &ObjectiveParams) -> FactorMatrix {
    let n = z.n();
    let w = params.weight(obs.len());
    let weights: Vec<f64> = obs
        .samples()
        .par_iter()
        .map(|s| {
            let x = dot(z.row(s.row), z.row(n + s.col));
            let (v, d) = phi.value_and_derivative(x);
            -2.0 * w * (s.y - v) * d
        })
        .collect();
    let mut out = FactorMatrix::zeros(z.n(), z.t(), z.rank());
    // sequential scatter keeps the summation order fixed
    for (s, &c) in obs.samples().iter().zip(&weights) {
        if c == 0.0 {
            continue;
        }
        let (li, fi) = (s.row, n + s.col);
        for a in 0..z.rank() {
            let zf = z.row(fi)[a];
            let zl = z.row(li)[a];
            out.row_mut(li)[a] += c * zf;
            out.row_mut(fi)[a] += c * zl;
        }
    }
    if params.lambda != 0.0 {
        add_balance_gradient(&mut out, z, params.lambda);
    }
    out
}

/// `out += lambda D Z (Z^T D Z)` through the `r x r` core.
fn add_balance_gradient(out: &mut FactorMatrix, z: &FactorMatrix, lambda: f64) {
    let core: DMatrix<f64> = z.balance_core();
    let r = z.rank();
    let n = z.n();
    for j in 0..z.rows() {
        let sign = if j < n { lambda } else { -lambda };
        let zr = z.row(j).to_vec();
        let row = out.row_mut(j);
        for b in 0..r {
            let mut acc = 0.0;
            for a in 0..r {
                acc += zr[a] * core[(a, b)];
            }
            row[b] += sign * acc;
        }
    }
}

/// `grad_phi L = -2w sum_k g_k K(x_k, .) + alpha phi`, evaluated at `z`.
/// Samples with `g_k = 0` contribute no atom.
pub fn grad_phi(obs: &ObservationSet, z: &FactorMatrix, phi: &dyn Link, params: &ObjectiveParams) -> PhiGradient {
    let (x, g) = residuals(obs, z, phi);
    let w = params.weight(obs.len());
    let mut new_centers = Vec::with_capacity(x.len());
    let mut new_coeffs = Vec::with_capacity(x.len());
    for (xk, gk) in x.into_iter().zip(g) {
        if gk != 0.0 {
            new_centers.push(xk);
            new_coeffs.push(-2.0 * w * gk);
        }
    }
    PhiGradient {
        decay: params.alpha,
        new_centers,
        new_coeffs,
    }
}

/// One gradient step on phi with dictionary compression at `spacing`.
pub fn phi_step(
    obs: &ObservationSet,
    z: &FactorMatrix,
    phi: &LinkFunction,
    params: &ObjectiveParams,
    eta: f64,
    spacing: f64,
) -> Result<LinkFunction> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    grad_phi(obs, z, phi, params).apply(phi, eta, Some(spacing))
}
