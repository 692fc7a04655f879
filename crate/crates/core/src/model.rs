//! Observation containers, the stacked factor matrix, and the synthetic
//! data-generation process.
//!
//! An `n x T` matrix `X = U V^T` is carried as the stacked `(n+T) x r` matrix
//! `Z = [U; V]`. Rows `0..n` are the loading block, rows `n..n+T` the factor
//! block. An observation `(i, t, y)` sees the link applied to
//! `<Z_i, Z_{n+t}>`, the `(i, t)` entry of `X`.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::LinkFunction;
use crate::link::{AnalyticLink, Link};

/// One observed entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub row: usize,
    pub col: usize,
    pub y: f64,
}

/// The observed triples together with the matrix dimensions.
///
/// Samples keep their insertion order. Repeated cells are legal and each
/// repetition is a separate loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n: usize,
    t: usize,
    samples: Vec<Sample>,
}

impl ObservationSet {
    pub fn new(n: usize, t: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig(
                "an observation set needs at least one sample".into(),
            ));
        }
        for s in &samples {
            if s.row >= n {
                return Err(Error::IndexOutOfRange {
                    what: "row",
                    index: s.row,
                    bound: n,
                });
            }
            if s.col >= t {
                return Err(Error::IndexOutOfRange {
                    what: "column",
                    index: s.col,
                    bound: t,
                });
            }
        }
        Ok(ObservationSet { n, t, samples })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of factor columns `T`.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Sample count `M`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn responses(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.y)
    }

    pub fn mean_response(&self) -> f64 {
        self.responses().sum::<f64>() / self.len() as f64
    }

    /// True when every cell of the `n x T` grid is observed exactly once.
    pub fn is_complete(&self) -> bool {
        let cells = match self.n.checked_mul(self.t) {
            Some(c) => c,
            None => return false,
        };
        if self.samples.len() != cells {
            return false;
        }
        let mut seen = vec![false; cells];
        for s in &self.samples {
            let k = s.row * self.t + s.col;
            if seen[k] {
                return false;
            }
            seen[k] = true;
        }
        true
    }

    /// Copy of this set with every response passed through `f`.
    pub fn map_responses(&self, f: impl Fn(f64) -> f64) -> ObservationSet {
        ObservationSet {
            n: self.n,
            t: self.t,
            samples: self.samples.iter().map(|s| Sample { y: f(s.y), ..*s }).collect(),
        }
    }
}

/// The stacked `(n+T) x r` factor matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    n: usize,
    t: usize,
    r: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(n: usize, t: usize, r: usize, data: Vec<f64>) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        let rows = n
            .checked_add(t)
            .and_then(|rows| rows.checked_mul(r).map(|_| rows))
            .ok_or_else(|| Error::DimensionOverflow(format!("({n}+{t}) x {r}")))?;
        if data.len() != rows * r {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {}x{} factor matrix, got {}",
                rows * r,
                rows,
                r,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("factor matrix entries must be finite".into()));
        }
        Ok(FactorMatrix { n, t, r, data })
    }

    pub fn zeros(n: usize, t: usize, r: usize) -> Self {
        FactorMatrix {
            n,
            t,
            r,
            data: vec![0.0; (n + t) * r],
        }
    }

    /// Stack a loading block `u` (`n x r`) over a factor block `v` (`T x r`).
    pub fn from_blocks(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "blocks have {} and {} columns",
                u.ncols(),
                v.ncols()
            )));
        }
        let stacked = DMatrix::from_fn(u.nrows() + v.nrows(), u.ncols(), |i, j| {
            if i < u.nrows() {
                u[(i, j)]
            } else {
                v[(i - u.nrows(), j)]
            }
        });
        FactorMatrix::from_dmatrix(u.nrows(), v.nrows(), &stacked)
    }

    pub fn from_dmatrix(n: usize, t: usize, m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != n + t {
            return Err(Error::DimensionMismatch(format!(
                "expected {} rows, got {}",
                n + t,
                m.nrows()
            )));
        }
        let r = m.ncols();
        let mut data = Vec::with_capacity(m.nrows() * r);
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
        FactorMatrix::new(n, t, r, data)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows(), self.r, &self.data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    /// Total row count `n + T`.
    pub fn rows(&self) -> usize {
        self.n + self.t
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.r..(j + 1) * self.r]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.r..(j + 1) * self.r]
    }

    /// Loading row `i` (row `i` of the `U` block).
    pub fn loading(&self, i: usize) -> &[f64] {
        self.row(i)
    }

    /// Factor row `t` (row `n + t`, i.e. row `t` of the `V` block).
    pub fn factor(&self, t: usize) -> &[f64] {
        self.row(self.n + t)
    }

    /// `<A_k, Z Z^T>` for the cell `(i, t)` without bounds checks beyond slicing.
    #[inline]
    pub fn entry(&self, i: usize, t: usize) -> f64 {
        dot(self.loading(i), self.factor(t))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn row_norm(&self, j: usize) -> f64 {
        self.row(j).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||Z||_{2,inf}`, the largest row norm.
    pub fn max_row_norm(&self) -> f64 {
        (0..self.rows()).map(|j| self.row_norm(j)).fold(0.0, f64::max)
    }

    /// `(n+T) ||Z||_{2,inf}^2 / ||Z||_F^2`.
    pub fn incoherence(&self) -> f64 {
        let fro2 = self.data.iter().map(|v| v * v).sum::<f64>();
        if fro2 == 0.0 {
            return 1.0;
        }
        let max2 = (0..self.rows())
            .map(|j| self.row(j).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        self.rows() as f64 * max2 / fro2
    }

    /// The `r x r` core `Z^T D Z = U^T U - V^T V`.
    pub fn balance_core(&self) -> DMatrix<f64> {
        let r = self.r;
        let mut core = DMatrix::zeros(r, r);
        for j in 0..self.rows() {
            let sign = if j < self.n { 1.0 } else { -1.0 };
            let row = self.row(j);
            for a in 0..r {
                let ra = sign * row[a];
                for b in 0..r {
                    core[(a, b)] += ra * row[b];
                }
            }
        }
        core
    }

    /// The `n x T` product `X = U V^T`.
    pub fn product(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.t, |i, t| self.entry(i, t))
    }

    /// `Z R` for an `r x r` matrix `R`.
    pub fn mul_right(&self, rot: &DMatrix<f64>) -> FactorMatrix {
        assert_eq!(rot.nrows(), self.r, "rotation has wrong row count");
        let rc = rot.ncols();
        let mut data = vec![0.0; self.rows() * rc];
        for j in 0..self.rows() {
            let row = self.row(j);
            for b in 0..rc {
                data[j * rc + b] = (0..self.r).map(|a| row[a] * rot[(a, b)]).sum();
            }
        }
        FactorMatrix {
            n: self.n,
            t: self.t,
            r: rc,
            data,
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &FactorMatrix) {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch in axpy");
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn scaled(&self, a: f64) -> FactorMatrix {
        FactorMatrix {
            data: self.data.iter().map(|v| a * v).collect(),
            ..self.clone()
        }
    }

    /// Multiply the loading block by `a` and the factor block by `b`.
    pub fn rescale_blocks(&self, a: f64, b: f64) -> FactorMatrix {
        let mut out = self.clone();
        let split = self.n * self.r;
        out.data[..split].iter_mut().for_each(|v| *v *= a);
        out.data[split..].iter_mut().for_each(|v| *v *= b);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &FactorMatrix) -> bool {
        self.n == other.n && self.t == other.t && self.r == other.r
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x_k = <A_k, Z Z^T>`: the dot product of loading row `i` and factor row `t`.
pub fn sample_inner_product(z: &FactorMatrix, i: usize, t: usize) -> Result<f64> {
    if i >= z.n() {
        return Err(Error::IndexOutOfRange {
            what: "row",
            index: i,
            bound: z.n(),
        });
    }
    if t >= z.t() {
        return Err(Error::IndexOutOfRange {
            what: "column",
            index: t,
            bound: z.t(),
        });
    }
    Ok(z.entry(i, t))
}

/// Dense `n x T` matrix of observed responses with zeros in unobserved cells.
///
/// Repeated cells are averaged. With `rescale`, observed cells are multiplied
/// by `nT/M`, the inverse sampling probability.
pub fn zero_filled_matrix(obs: &ObservationSet, rescale: bool) -> DMatrix<f64> {
    let (n, t) = (obs.n(), obs.t());
    let mut sum = DMatrix::zeros(n, t);
    let mut count = DMatrix::<u32>::zeros(n, t);
    for s in obs.samples() {
        sum[(s.row, s.col)] += s.y;
        count[(s.row, s.col)] += 1;
    }
    let factor = if rescale {
        (n as f64 * t as f64) / obs.len() as f64
    } else {
        1.0
    };
    for (v, &c) in sum.iter_mut().zip(count.iter()) {
        if c > 0 {
            *v = *v / c as f64 * factor;
        }
    }
    sum
}

/// How cells are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    /// i.i.d. uniform cells; repeats allowed.
    WithReplacement,
    /// `M` distinct cells chosen uniformly.
    WithoutReplacement,
    /// Every cell once, in row-major order.
    Complete,
}

/// Additive idiosyncratic noise `u_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    Gaussian {
        sigma: f64,
    },
    /// Uniform on `[-sigma sqrt 3, sigma sqrt 3]`: variance `sigma^2`, bounded.
    Uniform {
        sigma: f64,
    },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma } | NoiseModel::Uniform { sigma } => sigma,
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
            NoiseModel::Uniform { sigma } => {
                let half = sigma * 3f64.sqrt();
                rng.random_range(-half..=half)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    /// Requested sample count; ignored under complete sampling.
    pub m: usize,
    pub sampling: SamplingScheme,
    pub noise: NoiseModel,
    pub link: AnalyticLink,
    /// Singular values of `X* = U* Sigma* V*^T`, length `r`.
    pub spectrum: Vec<f64>,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Noiseless identity-link instance with the default spectrum.
    pub fn new(n: usize, t: usize, r: usize, m: usize) -> Self {
        SyntheticConfig {
            n,
            t,
            r,
            m,
            sampling: SamplingScheme::WithReplacement,
            noise: NoiseModel::None,
            link: AnalyticLink::Identity,
            spectrum: Self::default_spectrum(n, t, r, 1.0),
            seed: 0,
        }
    }

    /// Linearly spaced singular values from `scale * sqrt(nT/r)` down to half of
    /// that (condition number 2). Entries of `X*` are then of order `scale`.
    pub fn default_spectrum(n: usize, t: usize, r: usize, scale: f64) -> Vec<f64> {
        let top = scale * ((n as f64 * t as f64) / r as f64).sqrt();
        linear_spectrum(top, 2.0, r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.r == 0 {
            return Err(Error::InvalidConfig("n, T and r must be positive".into()));
        }
        if self.r > self.n.min(self.t) {
            return Err(Error::RankTooLarge {
                rank: self.r,
                max: self.n.min(self.t),
            });
        }
        let cells = self
            .n
            .checked_mul(self.t)
            .ok_or_else(|| Error::DimensionOverflow(format!("{} x {}", self.n, self.t)))?;
        self.n
            .checked_add(self.t)
            .and_then(|rows| rows.checked_mul(self.r))
            .ok_or_else(|| Error::DimensionOverflow(format!("({}+{}) x {}", self.n, self.t, self.r)))?;
        if self.spectrum.len() != self.r {
            return Err(Error::InvalidConfig(format!(
                "spectrum has {} values for rank {}",
                self.spectrum.len(),
                self.r
            )));
        }
        if self.spectrum.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig(
                "singular values must be positive and finite".into(),
            ));
        }
        if self.noise.sigma() < 0.0 || !self.noise.sigma().is_finite() {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        match self.sampling {
            SamplingScheme::Complete => {}
            _ if self.m == 0 => return Err(Error::InvalidConfig("sample count must be >= 1".into())),
            SamplingScheme::WithoutReplacement if self.m > cells => {
                return Err(Error::TooManySamples {
                    requested: self.m,
                    n: self.n,
                    t: self.t,
                })
            }
            _ => {}
        }
        Ok(())
    }

    /// Effective sample count (`n T` under complete sampling).
    pub fn sample_count(&self) -> usize {
        match self.sampling {
            SamplingScheme::Complete => self.n * self.t,
            _ => self.m,
        }
    }
}

/// `r` values spaced linearly from `top` down to `top / kappa`.
pub fn linear_spectrum(top: f64, kappa: f64, r: usize) -> Vec<f64> {
    if r == 1 {
        return vec![top];
    }
    let bottom = top / kappa;
    (0..r)
        .map(|k| top + (bottom - top) * k as f64 / (r - 1) as f64)
        .collect()
}

/// The link that generated the data.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueLink {
    Analytic(AnalyticLink),
    Dictionary(LinkFunction),
}

impl Link for TrueLink {
    fn value(&self, x: f64) -> f64 {
        match self {
            TrueLink::Analytic(l) => l.value(x),
            TrueLink::Dictionary(d) => d.value(x),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            TrueLink::Analytic(l) => l.derivative(x),
            TrueLink::Dictionary(d) => d.derivative(x),
        }
    }

    fn norm_sq(&self) -> f64 {
        match self {
            TrueLink::Analytic(_) => 0.0,
            TrueLink::Dictionary(d) => d.norm_sq(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub z_star: FactorMatrix,
    pub link: TrueLink,
    pub sigma: f64,
    /// `sigma*_1 / sigma*_r`.
    pub kappa: f64,
    /// Incoherence of `Z*`.
    pub mu: f64,
}

impl GroundTruth {
    /// Build the ground-truth record, deriving `kappa` from the singular values of
    /// `X* = U V^T` and `mu` from the rows of `Z*`.
    pub fn from_factors(z_star: FactorMatrix, link: TrueLink, sigma: f64) -> Self {
        let sv = z_star.product().singular_values();
        let top = sv.iter().cloned().fold(0.0, f64::max);
        let mut sorted: Vec<f64> = sv.iter().cloned().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let r = z_star.rank().min(sorted.len());
        let bottom = sorted[r - 1];
        let kappa = if bottom > 0.0 { top / bottom } else { f64::INFINITY };
        let mu = z_star.incoherence();
        GroundTruth {
            z_star,
            link,
            sigma,
            kappa,
            mu,
        }
    }
}

/// `n x r` matrix with orthonormal columns from the QR of a standard-normal draw.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    q.columns(0, cols).into_owned()
}

/// Draw `Z* = [U sqrt(S); V sqrt(S)]` and the observations it generates.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(ObservationSet, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u = random_orthonormal(cfg.n, cfg.r, &mut rng);
    let v = random_orthonormal(cfg.t, cfg.r, &mut rng);
    let root = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        cfg.r,
        cfg.spectrum.iter().map(|s| s.sqrt()),
    ));
    let z_star = FactorMatrix::from_blocks(&(&u * &root), &(&v * &root))?;
    let obs = observe(&z_star, &TrueLink::Analytic(cfg.link), cfg, &mut rng)?;
    let truth = GroundTruth::from_factors(z_star, TrueLink::Analytic(cfg.link), cfg.noise.sigma());
    Ok((obs, truth))
}

/// Sample cells per `cfg.sampling` and emit `y_k = phi(<A_k, Z Z^T>) + u_k`.
pub fn observe(z: &FactorMatrix, link: &dyn Link, cfg: &SyntheticConfig, rng: &mut impl Rng) -> Result<ObservationSet> {
    let (n, t) = (z.n(), z.t());
    let cells: Vec<(usize, usize)> = match cfg.sampling {
        SamplingScheme::Complete => (0..n).flat_map(|i| (0..t).map(move |c| (i, c))).collect(),
        SamplingScheme::WithReplacement => (0..cfg.m)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..t)))
            .collect(),
        SamplingScheme::WithoutReplacement => {
            let total = n * t;
            if cfg.m > total {
                return Err(Error::TooManySamples { requested: cfg.m, n, t });
            }
            index::sample(rng, total, cfg.m)
                .into_iter()
                .map(|k| (k / t, k % t))
                .collect()
        }
    };
    let samples = cells
        .into_iter()
        .map(|(row, col)| {
            let clean = link.value(z.entry(row, col));
            Sample {
                row,
                col,
                y: clean + cfg.noise.draw(rng),
            }
        })
        .collect();
    ObservationSet::new(n, t, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_factor(n: usize, t: usize) -> FactorMatrix {
        FactorMatrix::new(n, t, 1, vec![1.0; n + t]).unwrap()
    }

    #[test]
    fn identity_all_ones_gives_unit_responses() {
        let z = ones_factor(2, 2);
        let mut cfg = SyntheticConfig::new(2, 2, 1, 4);
        cfg.sampling = SamplingScheme::Complete;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = observe(&z, &AnalyticLink::Identity, &cfg, &mut rng).unwrap();
        assert_eq!(obs.len(), 4);
        assert!(obs.responses().all(|y| y == 1.0));
        assert!(obs.is_complete());
    }

    #[test]
    fn complete_identity_matches_product() {
        let mut cfg = SyntheticConfig::new(3, 2, 2, 0);
        cfg.sampling = SamplingScheme::Complete;
        cfg.seed = 17;
        let (obs, truth) = generate_synthetic(&cfg).unwrap();
        assert_eq!(obs.len(), 6);
        let z = &truth.z_star;
        for s in obs.samples() {
            // brute-force U V^T entry
            let mut expect = 0.0;
            for a in 0..2 {
                expect += z.as_slice()[s.row * 2 + a] * z.as_slice()[(3 + s.col) * 2 + a];
            }
            assert!((s.y - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn sigmoid_responses_land_in_unit_interval() {
        let mut cfg = SyntheticConfig::new(100, 100, 3, 5000);
        cfg.link = AnalyticLink::Sigmoid;
        let (obs, _) = generate_synthetic(&cfg).unwrap();
        assert_eq!(obs.len(), 5000);
        assert!(obs.responses().all(|y| y > 0.0 && y < 1.0));
        cfg.noise = NoiseModel::Gaussian { sigma: 0.1 };
        let (noisy, truth) = generate_synthetic(&cfg).unwrap();
        assert_eq!(noisy.len(), 5000);
        assert_eq!(truth.sigma, 0.1);
    }

    #[test]
    fn inner_product_examples() {
        let z = FactorMatrix::new(1, 1, 2, vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        assert_eq!(sample_inner_product(&z, 0, 0).unwrap(), 1.0);
        let e = FactorMatrix::new(1, 1, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(sample_inner_product(&e, 0, 0).unwrap(), 1.0);
        let zero = FactorMatrix::new(1, 1, 2, vec![0.0, 0.0, 3.0, -1.0]).unwrap();
        assert_eq!(sample_inner_product(&zero, 0, 0).unwrap(), 0.0);
        assert!(matches!(
            sample_inner_product(&z, 1, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(sample_inner_product(&z, 0, 5).is_err());
    }

    #[test]
    fn zero_filled_examples() {
        let single = ObservationSet::new(2, 2, vec![Sample { row: 0, col: 0, y: 5.0 }]).unwrap();
        let m = zero_filled_matrix(&single, false);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 0.0]));

        let dup = ObservationSet::new(
            2,
            2,
            vec![Sample { row: 0, col: 0, y: 1.0 }, Sample { row: 0, col: 0, y: 3.0 }],
        )
        .unwrap();
        assert_eq!(zero_filled_matrix(&dup, false)[(0, 0)], 2.0);
        // rescale by nT/M = 4/2
        assert_eq!(zero_filled_matrix(&dup, true)[(0, 0)], 4.0);
    }

    #[test]
    fn complete_rescale_is_identity() {
        let mut cfg = SyntheticConfig::new(4, 3, 2, 0);
        cfg.sampling = SamplingScheme::Complete;
        let (obs, truth) = generate_synthetic(&cfg).unwrap();
        let a = zero_filled_matrix(&obs, false);
        let b = zero_filled_matrix(&obs, true);
        assert_eq!(a, b);
        assert!((a - truth.z_star.product()).abs().max() < 1e-13);
    }

    #[test]
    fn without_replacement_rejects_oversampling() {
        let mut cfg = SyntheticConfig::new(3, 3, 1, 10);
        cfg.sampling = SamplingScheme::WithoutReplacement;
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(Error::TooManySamples { requested: 10, .. })
        ));
        cfg.m = 9;
        let (obs, _) = generate_synthetic(&cfg).unwrap();
        assert!(obs.is_complete() || obs.len() == 9);
        let mut cells: Vec<_> = obs.samples().iter().map(|s| (s.row, s.col)).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 9);
    }

    #[test]
    fn overflowing_dimensions_are_rejected() {
        let cfg = SyntheticConfig {
            spectrum: vec![1.0],
            ..SyntheticConfig::new(usize::MAX / 2, usize::MAX / 2, 1, 1)
        };
        assert!(matches!(cfg.validate(), Err(Error::DimensionOverflow(_))));
    }

    #[test]
    fn balance_core_vanishes_for_balanced_blocks() {
        let z = FactorMatrix::new(2, 2, 1, vec![3.0, 4.0, 0.0, 5.0]).unwrap();
        assert_eq!(z.balance_core()[(0, 0)], 0.0);
        let w = FactorMatrix::new(1, 1, 1, vec![2.0, 1.0]).unwrap();
        assert_eq!(w.balance_core()[(0, 0)], 3.0);
    }
}
