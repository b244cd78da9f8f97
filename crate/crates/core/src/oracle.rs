//! Stochastic Riemannian gradients for decentralized PCA.
//!
//! Agent `i` holds a data matrix `A_i` and the local cost
//! `f_i(X) = −½ tr(Xᵀ A_iᵀA_i X)`; the network minimizes the average of the
//! `f_i` over `St(n, r)`. Rows of `A_i` are the data samples: drawing a row
//! `a` uniformly and returning `P_X(−m_i a aᵀ X)` is an unbiased estimate of
//! `grad f_i(X)`.
//!
//! Generated instances store rows already divided by `√m_i`, so `A_iᵀA_i` is
//! the agent's sample covariance and the objective stays `O(1)` regardless of
//! how many rows each agent holds.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stiefel::{check_same_shape, gaussian_matrix, project_tangent, StiefelPoint, TangentVector};

/// Number of stochastic samples. Wide enough for geometric schedules run for
/// several hundred iterations; larger sizes saturate at `u128::MAX`.
pub type SampleCount = u128;

/// Per-iteration mini-batch size `N_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleSchedule {
    /// `N_k = Q`.
    Constant(u64),
    /// `N_k = ⌊(k+1)^a⌋`.
    Polynomial(f64),
    /// `N_k = ⌈q^{−k}⌉`.
    Geometric(f64),
}

impl SampleSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SampleSchedule::Constant(0) => {
                Err(Error::Schedule("constant batch size must be at least 1".into()))
            }
            SampleSchedule::Polynomial(a) if !(a > 0.0 && a.is_finite()) => Err(Error::Schedule(
                format!("polynomial exponent {a} must be positive"),
            )),
            SampleSchedule::Geometric(q) if !(q > 0.0 && q < 1.0) => Err(Error::Schedule(format!(
                "geometric ratio {q} must lie in (0, 1)"
            ))),
            _ => Ok(()),
        }
    }

    /// `N_k` for iteration index `k ≥ 0`. Always at least 1.
    pub fn sample_size(&self, k: u64) -> Result<SampleCount> {
        self.validate()?;
        let n = match *self {
            SampleSchedule::Constant(q) => q as SampleCount,
            SampleSchedule::Polynomial(a) => ((k as f64 + 1.0).powf(a)).floor() as SampleCount,
            SampleSchedule::Geometric(q) => q.powf(-(k as f64)).ceil() as SampleCount,
        };
        Ok(n.max(1))
    }
}

impl fmt::Display for SampleSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSchedule::Constant(q) => write!(f, "constant:{q}"),
            SampleSchedule::Polynomial(a) => write!(f, "polynomial:{a}"),
            SampleSchedule::Geometric(q) => write!(f, "geometric:{q}"),
        }
    }
}

impl FromStr for SampleSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Schedule(format!("expected `<kind>:<value>`, got `{s}`")))?;
        let bad = || Error::Schedule(format!("bad schedule parameter in `{s}`"));
        let sched = match kind.trim() {
            "constant" => SampleSchedule::Constant(value.trim().parse().map_err(|_| bad())?),
            "polynomial" => SampleSchedule::Polynomial(value.trim().parse().map_err(|_| bad())?),
            "geometric" => SampleSchedule::Geometric(value.trim().parse().map_err(|_| bad())?),
            other => return Err(Error::Schedule(format!("unknown schedule kind `{other}`"))),
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Parameters of a synthetic PCA instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaParams {
    pub agents: usize,
    pub rows_per_agent: usize,
    pub dim: usize,
    pub rank: usize,
    /// Gap `λ_r − λ_{r+1}` of the population covariance.
    pub eigengap: f64,
    pub seed: u64,
}

impl Default for PcaParams {
    fn default() -> Self {
        Self {
            agents: 4,
            rows_per_agent: 2500,
            dim: 8,
            rank: 3,
            eigengap: 0.8,
            seed: 0,
        }
    }
}

/// Constants of the Lipschitz-type bounds for `f` on the manifold.
#[derive(Clone, Copy, Debug)]
pub struct Smoothness<T> {
    /// Euclidean gradient Lipschitz constant `L = ‖C̄‖₂`.
    pub l: T,
    /// `L_g = L + max‖∇f‖₂`, for the quadratic upper bound.
    pub l_g: T,
    /// `L_G = L + 2 max‖∇f‖₂`, Lipschitz constant of the Riemannian gradient.
    pub l_big_g: T,
}

/// A decentralized PCA problem.
#[derive(Clone, Debug)]
pub struct PcaProblem<T: Real> {
    data: Vec<DMatrix<T>>,
    covariances: Vec<DMatrix<T>>,
    mean_covariance: DMatrix<T>,
    /// Eigenvalues of the mean covariance, descending.
    spectrum: DVector<T>,
    f_star: T,
    x_star: StiefelPoint<T>,
    sample_bound: T,
}

impl<T: Real> PcaProblem<T> {
    /// Builds a problem from per-agent data matrices (rows are samples).
    pub fn from_data(data: Vec<DMatrix<T>>, rank: usize) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| Error::Oracle("a PCA problem needs at least one agent".into()))?;
        let dim = first.ncols();
        if rank == 0 || rank >= dim {
            return Err(Error::Parameter(format!(
                "target rank {rank} must satisfy 1 <= r < n = {dim}"
            )));
        }
        for (i, a) in data.iter().enumerate() {
            if a.nrows() == 0 {
                return Err(Error::Oracle(format!("agent {i} has an empty data matrix")));
            }
            if a.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "agent {i} data has {} columns, expected {dim}",
                    a.ncols()
                )));
            }
        }
        let covariances: Vec<DMatrix<T>> = data.iter().map(|a| a.tr_mul(a)).collect();
        let n_agents = T::from_usize(data.len()).unwrap();
        let mut mean_covariance = DMatrix::<T>::zeros(dim, dim);
        for c in &covariances {
            mean_covariance += c;
        }
        mean_covariance /= n_agents;
        // enforce exact symmetry before the eigensolver
        mean_covariance = (&mean_covariance + mean_covariance.transpose()) * T::lit(0.5);

        let eig = SymmetricEigen::new(mean_covariance.clone());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let spectrum = DVector::from_iterator(dim, order.iter().map(|&j| eig.eigenvalues[j]));
        let x_star_raw = DMatrix::from_fn(dim, rank, |row, c| eig.eigenvectors[(row, order[c])]);
        let x_star = StiefelPoint::project(&x_star_raw)?;
        let f_star = -T::lit(0.5) * spectrum.rows(0, rank).sum();

        let sample_bound = data
            .iter()
            .map(|a| {
                let m = T::from_usize(a.nrows()).unwrap();
                let max_row = a
                    .row_iter()
                    .map(|row| row.norm_squared())
                    .fold(T::zero(), |acc, v| if v > acc { v } else { acc });
                m * max_row
            })
            .fold(T::zero(), |acc, v| if v > acc { v } else { acc });

        Ok(Self {
            data,
            covariances,
            mean_covariance,
            spectrum,
            f_star,
            x_star,
            sample_bound,
        })
    }

    /// Draws a synthetic instance: rows `x = diag(λ)^{1/2} z / √m` with
    /// `z ~ N(0, I_n)`, `λ_j = 1` for `j ≤ r` and `λ_j = 1 − Δ` otherwise.
    pub fn generate(params: &PcaParams) -> Result<Self> {
        let PcaParams {
            agents,
            rows_per_agent,
            dim,
            rank,
            eigengap,
            seed,
        } = *params;
        if !(eigengap > 0.0 && eigengap <= 1.0) {
            return Err(Error::Parameter(format!(
                "eigengap {eigengap} must lie in (0, 1]"
            )));
        }
        if agents == 0 || rows_per_agent == 0 {
            return Err(Error::Parameter(
                "need at least one agent and one row per agent".into(),
            ));
        }
        if rank == 0 || rank >= dim {
            return Err(Error::Parameter(format!(
                "target rank {rank} must satisfy 1 <= r < n = {dim}"
            )));
        }
        let scale: Vec<f64> = (0..dim)
            .map(|j| {
                let lambda = if j < rank { 1.0 } else { 1.0 - eigengap };
                lambda.sqrt() / (rows_per_agent as f64).sqrt()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..agents)
            .map(|_| {
                let mut a = DMatrix::<T>::zeros(rows_per_agent, dim);
                for row in 0..rows_per_agent {
                    for (col, s) in scale.iter().enumerate() {
                        let z: f64 = rng.sample(StandardNormal);
                        a[(row, col)] = T::lit(z * s);
                    }
                }
                a
            })
            .collect();
        Self::from_data(data, rank)
    }

    pub fn n_agents(&self) -> usize {
        self.data.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_covariance.nrows()
    }

    pub fn rank(&self) -> usize {
        self.x_star.r()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.dim(), self.rank())
    }

    pub fn rows(&self, agent: usize) -> usize {
        self.data[agent].nrows()
    }

    pub fn data(&self, agent: usize) -> &DMatrix<T> {
        &self.data[agent]
    }

    pub fn covariance(&self, agent: usize) -> &DMatrix<T> {
        &self.covariances[agent]
    }

    pub fn mean_covariance(&self) -> &DMatrix<T> {
        &self.mean_covariance
    }

    /// Eigenvalues of `(1/N) Σ A_iᵀA_i`, descending.
    pub fn spectrum(&self) -> &DVector<T> {
        &self.spectrum
    }

    pub fn f_star(&self) -> T {
        self.f_star
    }

    pub fn x_star(&self) -> &StiefelPoint<T> {
        &self.x_star
    }

    /// `f(X) = −(1/2N) Σ_i tr(Xᵀ A_iᵀA_i X)`.
    pub fn objective(&self, x: &StiefelPoint<T>) -> T {
        objective_of(&self.mean_covariance, x.matrix())
    }

    pub fn local_objective(&self, agent: usize, x: &StiefelPoint<T>) -> T {
        objective_of(&self.covariances[agent], x.matrix())
    }

    /// `∇f_i(X) = −A_iᵀA_i X`.
    pub fn euclidean_gradient(&self, agent: usize, x: &StiefelPoint<T>) -> DMatrix<T> {
        -(&self.covariances[agent] * x.matrix())
    }

    /// `grad f_i(X)`.
    pub fn exact_gradient(&self, agent: usize, x: &StiefelPoint<T>) -> TangentVector<T> {
        let g = self.euclidean_gradient(agent, x);
        TangentVector::new_unchecked(x.clone(), project_tangent(x.matrix(), &g))
    }

    /// `grad f(X)`: the average Euclidean gradient, then projected.
    pub fn exact_global_gradient(&self, x: &StiefelPoint<T>) -> TangentVector<T> {
        let g = -(&self.mean_covariance * x.matrix());
        TangentVector::new_unchecked(x.clone(), project_tangent(x.matrix(), &g))
    }

    pub fn smoothness(&self) -> Smoothness<T> {
        let l = self.spectrum[0].abs();
        Smoothness {
            l,
            l_g: l + l,
            l_big_g: l + l + l,
        }
    }

    /// Upper bound on `‖G_i(X, ξ)‖_F` for a single row sample.
    pub fn sample_bound(&self) -> T {
        self.sample_bound
    }

    /// Upper bound on `‖grad f_i(X)‖_F` over the manifold: `√r · max_i ‖A_iᵀA_i‖₂`.
    pub fn gradient_bound(&self) -> T {
        let r = T::from_usize(self.rank()).unwrap();
        self.covariances
            .iter()
            .map(|c| {
                SymmetricEigen::new(c.clone())
                    .eigenvalues
                    .iter()
                    .fold(T::zero(), |acc, l| if l.abs() > acc { l.abs() } else { acc })
            })
            .fold(T::zero(), |acc, v| if v > acc { v } else { acc })
            * r.sqrt()
    }

    /// Writes the instance in the binary cache format (see README).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<instance cache>", e);
        w.write_all(CACHE_MAGIC).map_err(io)?;
        w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
        for v in [self.n_agents(), self.dim(), self.rank()] {
            w.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
        }
        for a in &self.data {
            w.write_all(&(a.nrows() as u64).to_le_bytes()).map_err(io)?;
        }
        for a in &self.data {
            for row in a.row_iter() {
                for v in row.iter() {
                    w.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<instance cache>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Oracle("not a PCA instance cache (bad magic)".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf).map_err(io)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(Error::Oracle(format!(
                "unsupported instance cache version {version}"
            )));
        }
        let agents = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let rank = read_u32(&mut r)? as usize;
        let mut rows = Vec::with_capacity(agents);
        let mut u64buf = [0u8; 8];
        for _ in 0..agents {
            r.read_exact(&mut u64buf).map_err(io)?;
            rows.push(u64::from_le_bytes(u64buf) as usize);
        }
        let mut data = Vec::with_capacity(agents);
        for &m in &rows {
            let mut a = DMatrix::<T>::zeros(m, dim);
            for row in 0..m {
                for col in 0..dim {
                    r.read_exact(&mut u64buf).map_err(io)?;
                    a[(row, col)] = T::lit(f64::from_le_bytes(u64buf));
                }
            }
            data.push(a);
        }
        Self::from_data(data, rank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

pub const CACHE_MAGIC: &[u8; 8] = b"DRSGTPCA";
const CACHE_VERSION: u32 = 1;

fn objective_of<T: Real>(cov: &DMatrix<T>, x: &DMatrix<T>) -> T {
    -T::lit(0.5) * x.dot(&(cov * x))
}

/// Convenience wrapper around [`PcaProblem::generate`].
pub fn generate_pca_instance<T: Real>(params: &PcaParams) -> Result<PcaProblem<T>> {
    PcaProblem::generate(params)
}

/// An averaged stochastic gradient `F_i(X)` and the number of samples behind it.
#[derive(Clone, Debug)]
pub struct GradientSample<T: Real> {
    pub value: TangentVector<T>,
    pub samples_used: SampleCount,
}

/// Source of averaged stochastic Riemannian gradients.
pub trait GradientOracle<T: Real>: Send + Sync {
    fn problem(&self) -> &PcaProblem<T>;

    /// `F_i(X) = (1/n) Σ_j G_i(X, ξ_j)` for `n = n_samples` i.i.d. draws.
    fn draw(
        &self,
        agent: usize,
        x: &StiefelPoint<T>,
        n_samples: SampleCount,
        rng: &mut ChaCha8Rng,
    ) -> Result<GradientSample<T>>;

    fn n_agents(&self) -> usize {
        self.problem().n_agents()
    }
}

fn check_draw<T: Real>(
    problem: &PcaProblem<T>,
    agent: usize,
    x: &StiefelPoint<T>,
    n_samples: SampleCount,
) -> Result<()> {
    if agent >= problem.n_agents() {
        return Err(Error::Oracle(format!(
            "agent {agent} out of range 0..{}",
            problem.n_agents()
        )));
    }
    if n_samples == 0 {
        return Err(Error::Oracle("at least one sample is required".into()));
    }
    if problem.rows(agent) == 0 {
        return Err(Error::Oracle(format!("agent {agent} has no data")));
    }
    if x.shape() != problem.shape() {
        return Err(Error::Dimension(format!(
            "point has shape {:?}, problem expects {:?}",
            x.shape(),
            problem.shape()
        )));
    }
    Ok(())
}

/// Uniform row sampling with replacement, importance weight `m_i`.
///
/// Batches no larger than the agent's row count are drawn row by row. Larger
/// batches draw the multinomial row counts directly (a chain of binomials),
/// and batches beyond `u64::MAX` use the Gaussian limit of those counts.
#[derive(Clone, Debug)]
pub struct RowSampling<T: Real> {
    problem: Arc<PcaProblem<T>>,
}

impl<T: Real> RowSampling<T> {
    pub fn new(problem: Arc<PcaProblem<T>>) -> Self {
        Self { problem }
    }

    /// `−m_i Σ_j w_j a_j a_jᵀ X` projected, for row weights summing to one.
    fn weighted_gradient(&self, agent: usize, x: &StiefelPoint<T>, weights: &[f64]) -> DMatrix<T> {
        let a = &self.problem.data[agent];
        let m = T::from_usize(a.nrows()).unwrap();
        let ax = a * x.matrix();
        let mut weighted = ax;
        for (row, w) in weighted.row_iter_mut().zip(weights) {
            let w = T::lit(*w);
            for v in row {
                *v *= w;
            }
        }
        let g = -(a.tr_mul(&weighted) * m);
        project_tangent(x.matrix(), &g)
    }
}

impl<T: Real> GradientOracle<T> for RowSampling<T> {
    fn problem(&self) -> &PcaProblem<T> {
        &self.problem
    }

    fn draw(
        &self,
        agent: usize,
        x: &StiefelPoint<T>,
        n_samples: SampleCount,
        rng: &mut ChaCha8Rng,
    ) -> Result<GradientSample<T>> {
        check_draw(&self.problem, agent, x, n_samples)?;
        let a = &self.problem.data[agent];
        let rows = a.nrows();
        let value = if n_samples <= rows as SampleCount {
            let n = n_samples as usize;
            let m = T::from_usize(rows).unwrap();
            let mut sum = DMatrix::<T>::zeros(x.n(), x.r());
            for _ in 0..n {
                let idx = rng.random_range(0..rows);
                let row = a.row(idx).transpose();
                let coeffs = x.matrix().tr_mul(&row);
                // per-sample gradient −m a aᵀX, before averaging
                sum.ger(T::one(), &row, &coeffs, T::one());
                debug_assert!(
                    (m * row.norm() * coeffs.norm()).as_f64()
                        <= self.problem.sample_bound.as_f64() * (1.0 + 1e-9)
                );
            }
            let g = -(sum * (m / T::from_usize(n).unwrap()));
            project_tangent(x.matrix(), &g)
        } else if n_samples <= u64::MAX as SampleCount {
            let mut remaining = n_samples as u64;
            let mut weights = vec![0.0; rows];
            for (j, w) in weights.iter_mut().enumerate() {
                let count = if j + 1 == rows {
                    remaining
                } else if remaining == 0 {
                    0
                } else {
                    let p = 1.0 / (rows - j) as f64;
                    Binomial::new(remaining, p)
                        .map_err(|e| Error::Oracle(format!("binomial draw failed: {e}")))?
                        .sample(rng)
                };
                remaining -= count;
                *w = count as f64 / n_samples as f64;
            }
            self.weighted_gradient(agent, x, &weights)
        } else {
            let p = 1.0 / rows as f64;
            let sp = p.sqrt();
            let z: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
            let zsum: f64 = z.iter().sum::<f64>() * sp;
            let scale = 1.0 / (n_samples as f64).sqrt();
            let weights: Vec<f64> = z.iter().map(|zj| p + (sp * zj - p * zsum) * scale).collect();
            self.weighted_gradient(agent, x, &weights)
        };
        Ok(GradientSample {
            value: TangentVector::new_unchecked(x.clone(), value),
            samples_used: n_samples,
        })
    }
}

/// Enumerates every row of `A_i` exactly once, giving the exact local
/// gradient through the sampling code path. Ignores the requested batch size
/// and reports the rows actually used.
#[derive(Clone, Debug)]
pub struct FullBatch<T: Real> {
    problem: Arc<PcaProblem<T>>,
}

impl<T: Real> FullBatch<T> {
    pub fn new(problem: Arc<PcaProblem<T>>) -> Self {
        Self { problem }
    }
}

impl<T: Real> GradientOracle<T> for FullBatch<T> {
    fn problem(&self) -> &PcaProblem<T> {
        &self.problem
    }

    fn draw(
        &self,
        agent: usize,
        x: &StiefelPoint<T>,
        n_samples: SampleCount,
        _rng: &mut ChaCha8Rng,
    ) -> Result<GradientSample<T>> {
        check_draw(&self.problem, agent, x, n_samples)?;
        let a = &self.problem.data[agent];
        let mut sum = DMatrix::<T>::zeros(x.n(), x.r());
        for row in a.row_iter() {
            let row = row.transpose();
            let coeffs = x.matrix().tr_mul(&row);
            sum.ger(T::one(), &row, &coeffs, T::one());
        }
        let value = project_tangent(x.matrix(), &(-sum));
        Ok(GradientSample {
            value: TangentVector::new_unchecked(x.clone(), value),
            samples_used: a.nrows() as SampleCount,
        })
    }
}

/// Exact local gradient plus projected Gaussian noise with
/// `E‖G − grad f_i(X)‖_F² = σ²` per sample, so a batch of `n` has
/// variance exactly `σ²/n`.
#[derive(Clone, Debug)]
pub struct SyntheticNoise<T: Real> {
    problem: Arc<PcaProblem<T>>,
    sigma: T,
}

impl<T: Real> SyntheticNoise<T> {
    pub fn new(problem: Arc<PcaProblem<T>>, sigma: T) -> Result<Self> {
        if !(sigma >= T::zero()) {
            return Err(Error::Parameter(format!(
                "noise level {sigma} must be nonnegative"
            )));
        }
        Ok(Self { problem, sigma })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Dimension of `T_X St(n, r)`: `nr − r(r+1)/2`.
    fn tangent_dim(&self) -> usize {
        let (n, r) = self.problem.shape();
        n * r - r * (r + 1) / 2
    }
}

impl<T: Real> GradientOracle<T> for SyntheticNoise<T> {
    fn problem(&self) -> &PcaProblem<T> {
        &self.problem
    }

    fn draw(
        &self,
        agent: usize,
        x: &StiefelPoint<T>,
        n_samples: SampleCount,
        rng: &mut ChaCha8Rng,
    ) -> Result<GradientSample<T>> {
        check_draw(&self.problem, agent, x, n_samples)?;
        let exact = self.problem.exact_gradient(agent, x).into_matrix();
        // the mean of n i.i.d. Gaussians is one Gaussian with variance scaled by 1/n
        let noise = gaussian_matrix::<T, _>(x.n(), x.r(), rng);
        let scale = self.sigma.as_f64() / ((n_samples as f64) * self.tangent_dim() as f64).sqrt();
        let value = exact + project_tangent(x.matrix(), &noise) * T::lit(scale);
        Ok(GradientSample {
            value: TangentVector::new_unchecked(x.clone(), value),
            samples_used: n_samples,
        })
    }
}

/// Monte-Carlo estimate of `E‖F_i(X) − grad f_i(X)‖_F²` at batch size `batch`.
pub fn empirical_variance<T: Real, O: GradientOracle<T> + ?Sized>(
    oracle: &O,
    agent: usize,
    x: &StiefelPoint<T>,
    batch: SampleCount,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let exact = oracle.problem().exact_gradient(agent, x);
    let mut acc = 0.0;
    for _ in 0..draws {
        let s = oracle.draw(agent, x, batch, rng)?;
        check_same_shape(exact.matrix(), s.value.matrix(), "variance estimate")?;
        acc += (s.value.matrix() - exact.matrix()).norm_squared().as_f64();
    }
    Ok(acc / draws as f64)
}
