//! The scalar RKHS in which the link function lives.
//!
//! A learned link is a finite kernel dictionary
//! `phi(x) = offset + sum_j beta_j K(c_j, x)` with sorted, distinct centers.
//! The offset is a norm-free constant: it shifts values but does not enter
//! `||phi||_H`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, refined_spd_solve};
use crate::link::Link;

/// Kernels decay below ~1e-18 beyond this many bandwidths; terms past it are skipped.
const GAUSSIAN_RADIUS: f64 = 9.0;
const LAPLACIAN_RADIUS: f64 = 42.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `exp(-(a-b)^2 / (2 h^2))`
    Gaussian { bandwidth: f64 },
    /// `exp(-|a-b| / s)`
    Laplacian { scale: f64 },
}

/// A kernel plus the constants the analysis refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// `sup_x K(x, x)`.
    pub b_k: f64,
    /// Lipschitz constant of `x -> K(x, .)` in H-norm.
    pub lipschitz_k: f64,
    /// Lipschitz constant of `x -> d/dx K(x, .)` in H-norm.
    pub lipschitz_kprime: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        // ||K(x,.) - K(y,.)||^2 = 2 - 2 exp(-d^2/2h^2) <= d^2/h^2, and the
        // fourth mixed derivative at the diagonal is 3/h^4.
        Ok(KernelSpec {
            family: KernelFamily::Gaussian { bandwidth },
            b_k: 1.0,
            lipschitz_k: 1.0 / bandwidth,
            lipschitz_kprime: 3f64.sqrt() / (bandwidth * bandwidth),
        })
    }

    /// Laplacian kernel. Its sections are only Hölder-1/2 in H-norm, so the
    /// Lipschitz fields are infinite.
    pub fn laplacian(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {scale}")));
        }
        Ok(KernelSpec {
            family: KernelFamily::Laplacian { scale },
            b_k: 1.0,
            lipschitz_k: f64::INFINITY,
            lipschitz_kprime: f64::INFINITY,
        })
    }

    /// Bandwidth `h` (gaussian) or scale `s` (laplacian).
    pub fn bandwidth(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian { bandwidth } => bandwidth,
            KernelFamily::Laplacian { scale } => scale,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            KernelFamily::Gaussian { .. } => "gaussian",
            KernelFamily::Laplacian { .. } => "laplacian",
        }
    }

    pub fn from_name(family: &str, bandwidth: f64) -> Result<Self> {
        match family {
            "gaussian" => KernelSpec::gaussian(bandwidth),
            "laplacian" => KernelSpec::laplacian(bandwidth),
            other => Err(Error::InvalidConfig(format!("unknown kernel `{other}`"))),
        }
    }

    /// Distance beyond which the kernel is treated as zero.
    pub fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian { bandwidth } => GAUSSIAN_RADIUS * bandwidth,
            KernelFamily::Laplacian { scale } => LAPLACIAN_RADIUS * scale,
        }
    }

    #[inline]
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian { bandwidth } => {
                let d = (a - b) / bandwidth;
                (-0.5 * d * d).exp()
            }
            KernelFamily::Laplacian { scale } => (-(a - b).abs() / scale).exp(),
        }
    }

    /// `d/dx K(c, x)`.
    #[inline]
    pub fn deriv(&self, c: f64, x: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                -(x - c) / h2 * self.eval(c, x)
            }
            KernelFamily::Laplacian { scale } => {
                let d = x - c;
                if d == 0.0 {
                    0.0
                } else {
                    -d.signum() / scale * self.eval(c, x)
                }
            }
        }
    }
}

/// `K(a, b)`.
pub fn kernel_eval(spec: &KernelSpec, a: f64, b: f64) -> f64 {
    spec.eval(a, b)
}

/// Full Gram matrix `K[i][j] = K(points[i], points[j])`.
pub fn gram_matrix(spec: &KernelSpec, points: &[f64]) -> DMatrix<f64> {
    let m = points.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = spec.eval(points[i], points[i]);
        for j in 0..i {
            let v = spec.eval(points[i], points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Kernel dictionary `offset + sum_j coeffs[j] K(centers[j], .)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkFunction {
    kernel: KernelSpec,
    centers: Vec<f64>,
    coeffs: Vec<f64>,
    offset: f64,
}

impl LinkFunction {
    /// Build from strictly increasing centers.
    pub fn new(kernel: KernelSpec, centers: Vec<f64>, coeffs: Vec<f64>, offset: f64) -> Result<Self> {
        if centers.len() != coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} centers but {} coefficients",
                centers.len(),
                coeffs.len()
            )));
        }
        if centers.iter().chain(&coeffs).any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::InvalidConfig("dictionary entries must be finite".into()));
        }
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "dictionary centers must be strictly increasing".into(),
            ));
        }
        Ok(LinkFunction {
            kernel,
            centers,
            coeffs,
            offset,
        })
    }

    /// Build from arbitrary atoms: sort by center and sum coefficients that
    /// share a center, in input order.
    pub fn from_atoms(kernel: KernelSpec, centers: &[f64], coeffs: &[f64], offset: f64) -> Result<Self> {
        if centers.len() != coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} centers but {} coefficients",
                centers.len(),
                coeffs.len()
            )));
        }
        let mut order: Vec<usize> = (0..centers.len()).collect();
        order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
        let mut cs: Vec<f64> = Vec::with_capacity(centers.len());
        let mut bs: Vec<f64> = Vec::with_capacity(centers.len());
        for idx in order {
            let c = centers[idx];
            if cs.last() == Some(&c) {
                *bs.last_mut().expect("paired") += coeffs[idx];
            } else {
                cs.push(c);
                bs.push(coeffs[idx]);
            }
        }
        LinkFunction::new(kernel, cs, bs, offset)
    }

    pub fn zero(kernel: KernelSpec) -> Self {
        LinkFunction {
            kernel,
            centers: Vec::new(),
            coeffs: Vec::new(),
            offset: 0.0,
        }
    }

    pub fn constant(kernel: KernelSpec, offset: f64) -> Self {
        LinkFunction {
            offset,
            ..LinkFunction::zero(kernel)
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    /// `-phi`, offset included.
    pub fn negated(&self) -> Self {
        LinkFunction {
            kernel: self.kernel,
            centers: self.centers.clone(),
            coeffs: self.coeffs.iter().map(|b| -b).collect(),
            offset: -self.offset,
        }
    }

    /// `sum_j |beta_j|`.
    pub fn coeff_l1(&self) -> f64 {
        self.coeffs.iter().map(|b| b.abs()).sum()
    }

    fn window(&self, x: f64) -> std::ops::Range<usize> {
        let rad = self.kernel.support_radius();
        let lo = self.centers.partition_point(|&c| c < x - rad);
        let hi = self.centers.partition_point(|&c| c <= x + rad);
        lo..hi
    }

    /// `<phi, K(x, .)>_H`, i.e. the value without the offset.
    pub fn kernel_part(&self, x: f64) -> f64 {
        self.window(x)
            .map(|j| self.coeffs[j] * self.kernel.eval(self.centers[j], x))
            .sum()
    }

    /// `phi(x)` and `phi'(x)` in one pass over the dictionary.
    pub fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut d = 0.0;
        for j in self.window(x) {
            let c = self.centers[j];
            let b = self.coeffs[j];
            v += b * self.kernel.eval(c, x);
            d += b * self.kernel.deriv(c, x);
        }
        (self.offset + v, d)
    }

    /// `beta^T K beta` over the dictionary centers.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let rad = self.kernel.support_radius();
        let n = self.centers.len();
        let mut total = 0.0;
        let mut lo = 0;
        for i in 0..n {
            let ci = self.centers[i];
            while self.centers[lo] < ci - rad {
                lo += 1;
            }
            let mut row = 0.0;
            for j in lo..n {
                let cj = self.centers[j];
                if cj > ci + rad {
                    break;
                }
                row += self.coeffs[j] * self.kernel.eval(ci, cj);
            }
            total += self.coeffs[i] * row;
        }
        total.max(0.0)
    }

    /// `||self - other||_H^2` from the merged dictionary. Offsets are ignored.
    pub fn distance_sq(&self, other: &LinkFunction) -> Result<f64> {
        if self.kernel != other.kernel {
            return Err(Error::InvalidConfig(
                "H-distance needs both functions on the same kernel".into(),
            ));
        }
        let centers: Vec<f64> = self.centers.iter().chain(&other.centers).cloned().collect();
        let coeffs: Vec<f64> = self
            .coeffs
            .iter()
            .cloned()
            .chain(other.coeffs.iter().map(|b| -b))
            .collect();
        Ok(LinkFunction::from_atoms(self.kernel, &centers, &coeffs, 0.0)?.rkhs_norm_sq())
    }

    /// Evaluate at many points (parallel, order-preserving).
    pub fn values(&self, xs: &[f64]) -> Vec<f64> {
        use rayon::prelude::*;
        xs.par_iter().map(|&x| self.value(x)).collect()
    }

    pub fn to_record(&self) -> LinkRecord {
        LinkRecord {
            kernel_family: self.kernel.family_name().to_string(),
            bandwidth: self.kernel.bandwidth(),
            offset: self.offset,
            centers: self.centers.clone(),
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn from_record(rec: &LinkRecord) -> Result<Self> {
        let kernel = KernelSpec::from_name(&rec.kernel_family, rec.bandwidth)?;
        LinkFunction::new(kernel, rec.centers.clone(), rec.coeffs.clone(), rec.offset)
    }
}

impl Link for LinkFunction {
    fn value(&self, x: f64) -> f64 {
        self.offset + self.kernel_part(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.window(x)
            .map(|j| self.coeffs[j] * self.kernel.deriv(self.centers[j], x))
            .sum()
    }

    fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        LinkFunction::value_and_derivative(self, x)
    }

    fn norm_sq(&self) -> f64 {
        self.rkhs_norm_sq()
    }
}

/// Flat serialized form of a [`LinkFunction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub kernel_family: String,
    pub bandwidth: f64,
    pub offset: f64,
    pub centers: Vec<f64>,
    pub coeffs: Vec<f64>,
}

/// `phi(x)`.
pub fn link_eval(phi: &LinkFunction, x: f64) -> f64 {
    phi.value(x)
}

/// `phi'(x)`.
pub fn link_deriv(phi: &LinkFunction, x: f64) -> f64 {
    phi.derivative(x)
}

/// `||phi||_H^2 = beta^T K beta`.
pub fn rkhs_norm_sq(phi: &LinkFunction) -> f64 {
    phi.rkhs_norm_sq()
}

/// Snap every center to the nearest multiple of `grid_spacing` and merge
/// coefficients that land on the same grid point.
pub fn compress_dictionary(phi: &LinkFunction, grid_spacing: f64) -> Result<LinkFunction> {
    if !(grid_spacing.is_finite() && grid_spacing > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid spacing must be positive, got {grid_spacing}"
        )));
    }
    if phi.centers.iter().any(|c| (c / grid_spacing).abs() >= 9.0e18) {
        return Err(Error::InvalidConfig("center too far out for the snapping grid".into()));
    }
    Ok(snap_atoms(
        phi.kernel,
        &phi.centers,
        &phi.coeffs,
        phi.offset,
        grid_spacing,
    ))
}

/// Snap `(centers, coeffs)` to the grid `k * spacing`, summing per grid point
/// in input order.
pub(crate) fn snap_atoms(
    kernel: KernelSpec,
    centers: &[f64],
    coeffs: &[f64],
    offset: f64,
    spacing: f64,
) -> LinkFunction {
    if centers.is_empty() {
        return LinkFunction::constant(kernel, offset);
    }
    let keys: Vec<i64> = centers.iter().map(|c| (c / spacing).round() as i64).collect();
    let kmin = *keys.iter().min().expect("non-empty");
    let kmax = *keys.iter().max().expect("non-empty");
    let span = (kmax as i128 - kmin as i128) as u128 + 1;
    let (out_c, out_b) = if span <= 4 * keys.len() as u128 + 1024 {
        let mut acc = vec![0.0; span as usize];
        let mut hit = vec![false; span as usize];
        for (k, b) in keys.iter().zip(coeffs) {
            let slot = (k - kmin) as usize;
            acc[slot] += b;
            hit[slot] = true;
        }
        let mut cs = Vec::new();
        let mut bs = Vec::new();
        for (slot, (b, h)) in acc.into_iter().zip(hit).enumerate() {
            if h {
                cs.push((kmin + slot as i64) as f64 * spacing);
                bs.push(b);
            }
        }
        (cs, bs)
    } else {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by_key(|&i| keys[i]);
        let mut cs: Vec<f64> = Vec::new();
        let mut bs: Vec<f64> = Vec::new();
        let mut last: Option<i64> = None;
        for i in order {
            if last == Some(keys[i]) {
                *bs.last_mut().expect("paired") += coeffs[i];
            } else {
                cs.push(keys[i] as f64 * spacing);
                bs.push(coeffs[i]);
                last = Some(keys[i]);
            }
        }
        (cs, bs)
    };
    LinkFunction {
        kernel,
        centers: out_c,
        coeffs: out_b,
        offset,
    }
}

/// Derivative bounds `xi <= f' <= Xi` enforced on an `m`-point grid over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneBounds {
    pub xi: f64,
    pub big_xi: f64,
    pub grid_points: usize,
    pub lo: f64,
    pub hi: f64,
    /// Projected-gradient iterations for [`ProjectionMode::Qp`].
    pub qp_iterations: usize,
}

impl MonotoneBounds {
    pub fn new(xi: f64, big_xi: f64, grid_points: usize, lo: f64, hi: f64) -> Result<Self> {
        let b = MonotoneBounds {
            xi,
            big_xi,
            grid_points,
            lo,
            hi,
            qp_iterations: 500,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi <= self.big_xi && self.big_xi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < xi <= Xi < inf, got xi={} Xi={}",
                self.xi, self.big_xi
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig("monotone grid needs >= 2 points".into()));
        }
        if !(self.lo < self.hi && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "projection range [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let m = self.grid_points;
        let step = (self.hi - self.lo) / (m - 1) as f64;
        (0..m).map(|i| self.lo + step * i as f64).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.grid_points - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    None,
    SlopeClip,
    Qp,
}

impl std::str::FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(ProjectionMode::None),
            "slope-clip" => Ok(ProjectionMode::SlopeClip),
            "qp" => Ok(ProjectionMode::Qp),
            other => Err(Error::InvalidConfig(format!("unknown projection mode `{other}`"))),
        }
    }
}

/// Finite-difference slopes of `f` on the bounds' grid.
pub fn grid_slopes(f: &dyn Link, bounds: &MonotoneBounds) -> Vec<f64> {
    let grid = bounds.grid();
    let dx = bounds.spacing();
    grid.windows(2).map(|w| (f.value(w[1]) - f.value(w[0])) / dx).collect()
}

/// Project `phi` toward the monotone class with derivative in `[xi, Xi]`.
///
/// `SlopeClip` clamps grid slopes and re-interpolates; `Qp` starts from the
/// slope-clip solution and runs projected gradient on the H-distance.
pub fn project_monotone(phi: &LinkFunction, bounds: &MonotoneBounds, mode: ProjectionMode) -> Result<LinkFunction> {
    if mode == ProjectionMode::None {
        return Ok(phi.clone());
    }
    bounds.validate()?;
    let grid = bounds.grid();
    let m = grid.len();
    let dx = bounds.spacing();
    let offset = phi.offset;

    let values: Vec<f64> = grid.iter().map(|&g| phi.kernel_part(g)).collect();
    let slopes: Vec<f64> = values
        .windows(2)
        .map(|w| ((w[1] - w[0]) / dx).clamp(bounds.xi, bounds.big_xi))
        .collect();
    let mid = (m - 1) / 2;
    let mut anchor_free = vec![0.0; m];
    for i in 1..m {
        anchor_free[i] = anchor_free[i - 1] + dx * slopes[i - 1];
    }
    let start = values[mid] - anchor_free[mid];

    let interp = GridInterpolator::new(&phi.kernel, &grid, dx)?;
    let mut u = Vec::with_capacity(m);
    u.push(start);
    u.extend_from_slice(&slopes);

    if mode == ProjectionMode::Qp {
        u = qp_refine(phi, bounds, &interp, &values, u)?;
    }
    let targets = DVector::from_vec(cumulative_values(&u, dx));
    let coeffs = interp.solve(&targets)?;
    LinkFunction::new(phi.kernel, grid, coeffs.iter().cloned().collect(), offset)
}

/// Grid values from `(v_0, s_1..s_{m-1})`.
fn cumulative_values(u: &[f64], dx: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(u.len());
    v.push(u[0]);
    for i in 1..u.len() {
        let prev = v[i - 1];
        v.push(prev + dx * u[i]);
    }
    v
}

/// Kernel interpolation on a fixed grid. Tries an exact Cholesky solve first
/// and falls back to a jittered one; both are refined against the exact Gram.
struct GridInterpolator {
    gram: DMatrix<f64>,
    jitter: f64,
    tol: f64,
}

impl GridInterpolator {
    fn new(kernel: &KernelSpec, grid: &[f64], dx: f64) -> Result<Self> {
        let gram = gram_matrix(kernel, grid);
        let jitter = 1e-8 * gram.trace() / grid.len() as f64;
        // keeps reconstructed grid slopes within 1e-9 of their targets
        let tol = 0.4e-9 * dx;
        Ok(GridInterpolator { gram, jitter, tol })
    }

    fn raw_solve(&self, targets: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        let exact = refined_spd_solve(&self.gram, 0.0, targets, 20);
        match exact {
            Some((x, res)) if res <= self.tol && x.iter().all(|c| c.is_finite()) => Some((x, res)),
            _ => {
                let jittered = refined_spd_solve(&self.gram, self.jitter, targets, 200)?;
                match exact {
                    Some(e) if e.1 < jittered.1 => Some(e),
                    _ => Some(jittered),
                }
            }
        }
    }

    fn solve(&self, targets: &DVector<f64>) -> Result<DVector<f64>> {
        let m = targets.len();
        let (coeffs, residual) = self.raw_solve(targets).ok_or(Error::SingularGram {
            points: m,
            residual: f64::INFINITY,
        })?;
        if !(residual <= self.tol) || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::SingularGram { points: m, residual });
        }
        Ok(coeffs)
    }
}

/// Projected gradient on `J(u) = a^T K a - 2 a^T p` with `a = K^{-1} L u`,
/// where `L` maps `(v_0, slopes)` to grid values. Slopes are boxed to
/// `[xi, Xi]`; `v_0` is free. Monotone descent from the slope-clip start.
fn qp_refine(
    phi: &LinkFunction,
    bounds: &MonotoneBounds,
    interp: &GridInterpolator,
    values: &[f64],
    start: Vec<f64>,
) -> Result<Vec<f64>> {
    let m = start.len();
    let dx = bounds.spacing();
    let lmat = DMatrix::from_fn(m, m, |i, j| {
        if j == 0 {
            1.0
        } else if j <= i {
            dx
        } else {
            0.0
        }
    });
    // B = K^{-1} L, column by column through the refined solver
    let mut b = DMatrix::zeros(m, m);
    for j in 0..m {
        let col = interp.solve(&lmat.column(j).into_owned())?;
        b.set_column(j, &col);
    }
    let p = DVector::from_column_slice(values);
    let kb = &interp.gram * &b;
    let mut q = b.transpose() * &kb;
    q = (&q + q.transpose()) * 0.5;
    let lin = b.transpose() * &p;
    let lmax = max_eigenvalue(&q);
    if !(lmax.is_finite() && lmax > 0.0) {
        return Ok(start);
    }
    let objective = |u: &DVector<f64>| (u.transpose() * &q * u)[(0, 0)] - 2.0 * lin.dot(u);
    let project = |u: &mut DVector<f64>| {
        for i in 1..m {
            u[i] = u[i].clamp(bounds.xi, bounds.big_xi);
        }
    };
    let mut u = DVector::from_vec(start);
    let mut best = objective(&u);
    for _ in 0..bounds.qp_iterations {
        let grad = &q * &u - &lin;
        let mut next = &u - grad / lmax;
        project(&mut next);
        let val = objective(&next);
        if !(val <= best) {
            break;
        }
        best = val;
        u = next;
    }
    let _ = phi;
    Ok(u.iter().cloned().collect())
}

/// Interpolate `f - offset` onto a uniform grid dictionary over `[lo, hi]`.
pub fn interpolate_on_grid(
    kernel: &KernelSpec,
    lo: f64,
    hi: f64,
    points: usize,
    offset: f64,
    f: impl Fn(f64) -> f64,
) -> Result<LinkFunction> {
    if points < 2 || !(lo < hi) {
        return Err(Error::InvalidConfig("interpolation grid is empty".into()));
    }
    let dx = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + dx * i as f64).collect();
    let interp = GridInterpolator::new(kernel, &grid, dx)?;
    let targets = DVector::from_iterator(points, grid.iter().map(|&g| f(g) - offset));
    let scale = targets.amax().max(1.0);
    let (coeffs, residual) = interp.raw_solve(&targets).ok_or(Error::SingularGram {
        points,
        residual: f64::INFINITY,
    })?;
    if !(residual <= 1e-8 * scale) {
        return Err(Error::SingularGram { points, residual });
    }
    LinkFunction::new(*kernel, grid, coeffs.iter().cloned().collect(), offset)
}

/// Bandwidth heuristic `0.5 * width / sqrt(m)`; falls back to the median
/// pairwise distance when the points span no width, and to 1 after that.
pub fn default_bandwidth(points: &[f64], grid_points: usize) -> f64 {
    let lo = points.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    if width.is_finite() && width > 0.0 {
        return 0.5 * width / (grid_points.max(1) as f64).sqrt();
    }
    let take = points.len().min(200);
    let mut dists = Vec::new();
    for i in 0..take {
        for j in 0..i {
            let d = (points[i] - points[j]).abs();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    dists[dists.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g1() -> KernelSpec {
        KernelSpec::gaussian(1.0).unwrap()
    }

    fn random_dictionary(rng: &mut ChaCha8Rng, size: usize, kernel: KernelSpec) -> LinkFunction {
        let centers: Vec<f64> = (0..size).map(|_| rng.random_range(-3.0..3.0)).collect();
        let coeffs: Vec<f64> = (0..size).map(|_| rng.random_range(-1.0..1.0)).collect();
        LinkFunction::from_atoms(kernel, &centers, &coeffs, 0.0).unwrap()
    }

    #[test]
    fn gaussian_kernel_values() {
        let k = g1();
        for &x in &[-4.0, 0.0, 2.5] {
            assert_eq!(kernel_eval(&k, x, x), 1.0);
        }
        let d = (2.0 * 2f64.ln()).sqrt();
        assert!((kernel_eval(&k, 0.0, d) - 0.5).abs() < 1e-15);
        assert_eq!(kernel_eval(&k, 0.3, -1.7), kernel_eval(&k, -1.7, 0.3));
    }

    #[test]
    fn empty_and_single_atom_links() {
        let zero = LinkFunction::zero(g1());
        assert_eq!(link_eval(&zero, 1.3), 0.0);
        assert_eq!(link_deriv(&zero, 1.3), 0.0);
        let one = LinkFunction::new(g1(), vec![0.0], vec![1.0], 0.0).unwrap();
        assert_eq!(link_eval(&one, 0.0), 1.0);
        assert_eq!(link_deriv(&one, 0.0), 0.0);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &h in &[0.1, 0.5, 2.0] {
            let phi = random_dictionary(&mut rng, 12, KernelSpec::gaussian(h).unwrap());
            for k in 0..41 {
                let x = -10.0 + 0.5 * k as f64;
                let step = 1e-5;
                let fd = (link_eval(&phi, x + step) - link_eval(&phi, x - step)) / (2.0 * step);
                assert!((fd - link_deriv(&phi, x)).abs() < 1e-6, "h={h} x={x}");
            }
        }
    }

    #[test]
    fn gram_examples() {
        let k = g1();
        assert_eq!(gram_matrix(&k, &[0.7]), DMatrix::from_element(1, 1, 1.0));
        let two = gram_matrix(&k, &[0.2, 0.2]);
        assert_eq!(two, DMatrix::from_element(2, 2, 1.0));
        let pts = [0.1, -0.4, 1.3];
        let g = gram_matrix(&k, &pts);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = pts[i] - pts[j];
                assert_eq!(g[(i, j)], (-d * d / 2.0).exp());
            }
        }
    }

    #[test]
    fn norm_examples() {
        let k = g1();
        let single = LinkFunction::new(k, vec![0.4], vec![-3.0], 0.0).unwrap();
        assert!((rkhs_norm_sq(&single) - 9.0).abs() < 1e-14);
        let d = (2.0 * 2f64.ln()).sqrt();
        let pair = LinkFunction::new(k, vec![0.0, d], vec![1.0, 1.0], 0.0).unwrap();
        assert!((rkhs_norm_sq(&pair) - 3.0).abs() < 1e-14);
        let close = LinkFunction::new(k, vec![0.0, 1e-6], vec![1.0, -1.0], 0.0).unwrap();
        assert!(rkhs_norm_sq(&close) < 1e-11);
        // offset is norm-free
        assert_eq!(rkhs_norm_sq(&single.clone().with_offset(10.0)), rkhs_norm_sq(&single));
    }

    #[test]
    fn windowed_norm_matches_dense_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kernel = KernelSpec::gaussian(0.3).unwrap();
        let phi = random_dictionary(&mut rng, 40, kernel);
        let g = gram_matrix(&kernel, phi.centers());
        let b = DVector::from_column_slice(phi.coeffs());
        let dense = (b.transpose() * g * &b)[(0, 0)];
        assert!((dense - rkhs_norm_sq(&phi)).abs() < 1e-12 * dense.max(1.0));
    }

    #[test]
    fn from_atoms_merges_duplicates() {
        let phi = LinkFunction::from_atoms(g1(), &[1.0, -1.0, 1.0], &[0.5, 2.0, 0.25], 0.0).unwrap();
        assert_eq!(phi.centers(), &[-1.0, 1.0]);
        assert_eq!(phi.coeffs(), &[2.0, 0.75]);
        assert!(LinkFunction::new(g1(), vec![1.0, 1.0], vec![0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn compress_examples() {
        let k = g1();
        let on_grid = LinkFunction::new(k, vec![-0.2, 0.0, 0.30000000000000004], vec![1.0, 2.0, 3.0], 0.5).unwrap();
        let snapped = compress_dictionary(&on_grid, 0.1).unwrap();
        let again = compress_dictionary(&snapped, 0.1).unwrap();
        assert_eq!(snapped, again);

        let merge = LinkFunction::new(k, vec![0.01, 0.02], vec![1.0, 1.0], 0.0).unwrap();
        let merged = compress_dictionary(&merge, 0.1).unwrap();
        assert_eq!(merged.centers(), &[0.0]);
        assert_eq!(merged.coeffs(), &[2.0]);
        assert!(compress_dictionary(&merge, 0.0).is_err());
    }

    #[test]
    fn compress_error_is_bounded_on_dense_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = random_dictionary(&mut rng, 200, g1());
        let spacing = 1e-3;
        let out = compress_dictionary(&phi, spacing).unwrap();
        let l1 = phi.coeff_l1();
        let mut worst: f64 = 0.0;
        for k in 0..=4000 {
            let x = -5.0 + 10.0 * k as f64 / 4000.0;
            worst = worst.max((link_eval(&phi, x) - link_eval(&out, x)).abs());
        }
        assert!(worst <= 1e-2 * l1);
        assert!(worst <= l1 * phi.kernel().lipschitz_k * spacing / 2.0);
        assert!(out.len() as f64 <= 6.0 / spacing + 1.0);
    }

    #[test]
    fn point_evaluation_is_bounded_by_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let phi = random_dictionary(&mut rng, 8, g1()).with_offset(2.0);
            let bound = (phi.rkhs_norm_sq() * phi.kernel().b_k).sqrt();
            for k in 0..30 {
                let x = -4.0 + 0.27 * k as f64;
                assert!((phi.value(x) - phi.offset()).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn reproducing_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_dictionary(&mut rng, 10, g1()).with_offset(-0.7);
        for &x in &[-1.0, 0.2, 2.9] {
            let inner: f64 = phi
                .centers()
                .iter()
                .zip(phi.coeffs())
                .map(|(c, b)| b * kernel_eval(phi.kernel(), *c, x))
                .sum();
            assert!((inner - (link_eval(&phi, x) - phi.offset())).abs() < 1e-15);
        }
    }

    #[test]
    fn gram_is_psd_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let pts: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = gram_matrix(&g1(), &pts);
            assert!(min_eigenvalue(&g) >= -1e-10 * g.trace());
        }
    }

    fn bounds() -> MonotoneBounds {
        MonotoneBounds::new(0.1, 10.0, 7, -2.0, 2.0).unwrap()
    }

    fn within(slopes: &[f64], b: &MonotoneBounds) -> bool {
        slopes.iter().all(|&s| s >= b.xi - 1e-9 && s <= b.big_xi + 1e-9)
    }

    #[test]
    fn slope_clip_keeps_feasible_function() {
        let b = bounds();
        let kernel = g1();
        let f = interpolate_on_grid(&kernel, -2.0, 2.0, 7, 0.3, |x| 0.3 + x + 0.1 * x.sin()).unwrap();
        assert!(within(&grid_slopes(&f, &b), &b));
        let p = project_monotone(&f, &b, ProjectionMode::SlopeClip).unwrap();
        for g in b.grid() {
            assert!((p.value(g) - f.value(g)).abs() < 1e-9);
        }
    }

    #[test]
    fn slope_clip_fully_clamps_decreasing_function() {
        let b = bounds();
        let f = interpolate_on_grid(&g1(), -2.0, 2.0, 7, 0.0, |x| -x).unwrap();
        let p = project_monotone(&f, &b, ProjectionMode::SlopeClip).unwrap();
        for s in grid_slopes(&p, &b) {
            assert!((s - 0.1).abs() < 1e-9, "slope {s}");
        }
        assert!(within(&grid_slopes(&p, &b), &b));
    }

    #[test]
    fn slope_clip_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = bounds();
        for _ in 0..10 {
            let phi = random_dictionary(&mut rng, 6, g1());
            let once = project_monotone(&phi, &b, ProjectionMode::SlopeClip).unwrap();
            let twice = project_monotone(&once, &b, ProjectionMode::SlopeClip).unwrap();
            for g in b.grid() {
                assert!((once.value(g) - twice.value(g)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn qp_is_feasible_and_no_farther_than_slope_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = bounds();
        for _ in 0..10 {
            let phi = random_dictionary(&mut rng, 6, g1());
            let clip = project_monotone(&phi, &b, ProjectionMode::SlopeClip).unwrap();
            let qp = project_monotone(&phi, &b, ProjectionMode::Qp).unwrap();
            assert!(within(&grid_slopes(&qp, &b), &b));
            let d_qp = qp.distance_sq(&phi).unwrap().sqrt();
            let d_clip = clip.distance_sq(&phi).unwrap().sqrt();
            assert!(d_qp <= d_clip + 1e-6, "qp {d_qp} clip {d_clip}");
        }
    }

    #[test]
    fn none_mode_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = random_dictionary(&mut rng, 5, g1());
        assert_eq!(project_monotone(&phi, &bounds(), ProjectionMode::None).unwrap(), phi);
    }

    #[test]
    fn too_fine_grid_is_reported() {
        let b = MonotoneBounds::new(0.1, 10.0, 400, -1.0, 1.0).unwrap();
        let phi = LinkFunction::new(g1(), vec![0.0], vec![1.0], 0.0).unwrap();
        assert!(matches!(
            project_monotone(&phi, &b, ProjectionMode::SlopeClip),
            Err(Error::SingularGram { .. })
        ));
    }

    #[test]
    fn record_round_trip() {
        let phi = LinkFunction::new(g1(), vec![-1.0, 2.0], vec![0.5, -0.25], 3.0).unwrap();
        assert_eq!(LinkFunction::from_record(&phi.to_record()).unwrap(), phi);
    }

    #[test]
    fn bandwidth_heuristic() {
        assert!((default_bandwidth(&[0.0, 4.0, 1.0], 16) - 0.5).abs() < 1e-15);
        assert_eq!(default_bandwidth(&[2.0, 2.0], 16), 1.0);
    }
}
