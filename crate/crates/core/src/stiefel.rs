//! Geometry of the Stiefel manifold `St(n, r) = { X ∈ ℝ^{n×r} : XᵀX = I_r }`.
//!
//! Points and tangent vectors are dense `nalgebra` matrices wrapped in
//! newtypes that check their invariant on construction. The metric is the
//! Euclidean one inherited from `ℝ^{n×r}`, so every norm below is Frobenius.
//!
//! The operations here are pure; nothing holds interior state.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Unconstrained `n×r` matrix: trackers, Euclidean gradients, averages.
pub type AmbientMatrix<T> = DMatrix<T>;

/// An `n×r` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint<T: Real> {
    data: DMatrix<T>,
}

impl<T: Real> StiefelPoint<T> {
    /// Wraps `data` after checking `‖XᵀX − I‖_F ≤ T::ORTHONORMALITY_TOL`.
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        Self::with_tolerance(data, T::ORTHONORMALITY_TOL)
    }

    pub fn with_tolerance(data: DMatrix<T>, tol: f64) -> Result<Self> {
        let (n, r) = data.shape();
        if r == 0 || r > n {
            return Err(Error::Dimension(format!(
                "a Stiefel point needs 1 <= r <= n, got {n}x{r}"
            )));
        }
        let defect = orthonormality_defect(&data).as_f64();
        if !(defect <= tol) {
            return Err(Error::Contract(format!(
                "columns are not orthonormal: ‖XᵀX − I‖_F = {defect:e} > {tol:e}"
            )));
        }
        Ok(Self { data })
    }

    /// Skips validation. Used on the simulator hot path, where iterates are
    /// re-audited periodically instead.
    pub fn new_unchecked(data: DMatrix<T>) -> Self {
        Self { data }
    }

    /// First `r` columns of the `n×n` identity.
    pub fn identity(n: usize, r: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, r))
    }

    /// Nearest point on the manifold to `m` (its polar factor).
    pub fn project(m: &DMatrix<T>) -> Result<Self> {
        let (factor, _) = polar_factor(m, T::lit(T::RANK_TOL))?;
        Ok(Self { data: factor })
    }

    /// A point drawn from the uniform (Haar) distribution, via the polar
    /// factor of a Gaussian matrix.
    pub fn random<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Result<Self> {
        if r == 0 || r > n {
            return Err(Error::Dimension(format!(
                "a Stiefel point needs 1 <= r <= n, got {n}x{r}"
            )));
        }
        loop {
            let g = gaussian_matrix::<T, R>(n, r, rng);
            if let Ok(p) = Self::project(&g) {
                return Ok(p);
            }
        }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn r(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.data
    }

    pub fn orthonormality_defect(&self) -> T {
        orthonormality_defect(&self.data)
    }
}

/// A tangent vector together with the point it is attached to.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T: Real> {
    data: DMatrix<T>,
    base: StiefelPoint<T>,
}

impl<T: Real> TangentVector<T> {
    /// Checks `‖baseᵀ·data + dataᵀ·base‖_F ≤ T::TANGENCY_TOL`.
    pub fn new(base: StiefelPoint<T>, data: DMatrix<T>) -> Result<Self> {
        check_same_shape(base.matrix(), &data, "tangent vector")?;
        let defect = tangency_defect(base.matrix(), &data).as_f64();
        if !(defect <= T::TANGENCY_TOL) {
            return Err(Error::Contract(format!(
                "matrix is not tangent: ‖Xᵀv + vᵀX‖_F = {defect:e} > {:e}",
                T::TANGENCY_TOL
            )));
        }
        Ok(Self { data, base })
    }

    pub fn new_unchecked(base: StiefelPoint<T>, data: DMatrix<T>) -> Self {
        Self { data, base }
    }

    pub fn zero(base: StiefelPoint<T>) -> Self {
        let (n, r) = base.shape();
        Self {
            data: DMatrix::zeros(n, r),
            base,
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn base(&self) -> &StiefelPoint<T> {
        &self.base
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.data
    }

    pub fn norm(&self) -> T {
        self.data.norm()
    }

    pub fn scaled(mut self, s: T) -> Self {
        self.data *= s;
        self
    }

    pub fn tangency_defect(&self) -> T {
        tangency_defect(self.base.matrix(), &self.data)
    }
}

/// `‖XᵀX − I_r‖_F`.
pub fn orthonormality_defect<T: Real>(x: &DMatrix<T>) -> T {
    let gram = x.tr_mul(x);
    (gram - DMatrix::<T>::identity(x.ncols(), x.ncols())).norm()
}

/// `‖Xᵀv + vᵀX‖_F`.
pub fn tangency_defect<T: Real>(x: &DMatrix<T>, v: &DMatrix<T>) -> T {
    let s = x.tr_mul(v);
    (&s + s.transpose()).norm()
}

/// `Y − ½X(XᵀY + YᵀX)` on raw matrices, no checks.
pub fn project_tangent<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>) -> DMatrix<T> {
    let s = x.tr_mul(y);
    let sym = (&s + s.transpose()) * T::lit(0.5);
    y - x * sym
}

/// Orthogonal projection of an ambient matrix onto `T_X St(n, r)`.
pub fn tangent_projection<T: Real>(
    x: &StiefelPoint<T>,
    y: &AmbientMatrix<T>,
) -> Result<TangentVector<T>> {
    check_same_shape(x.matrix(), y, "tangent projection")?;
    Ok(TangentVector {
        data: project_tangent(x.matrix(), y),
        base: x.clone(),
    })
}

/// Polar factor `UVᵀ` of a thin SVD `M = UΣVᵀ`, together with `σ_min(M)`.
///
/// Fails with [`Error::DegenerateMean`] when `σ_min < rank_tol`, since the
/// factor is no longer unique.
pub fn polar_factor<T: Real>(m: &DMatrix<T>, rank_tol: T) -> Result<(DMatrix<T>, T)> {
    let (n, r) = m.shape();
    if r == 0 || r > n {
        return Err(Error::Dimension(format!(
            "polar factor needs a tall matrix, got {n}x{r}"
        )));
    }
    let (u, sigma, v) = thin_svd(m)?;
    let sigma_min = sigma.iter().copied().reduce(|a, b| a.min(b)).unwrap_or(T::zero());
    if !(sigma_min >= rank_tol) {
        return Err(Error::DegenerateMean {
            sigma_min: sigma_min.as_f64(),
            tol: rank_tol.as_f64(),
        });
    }
    Ok((u * v.transpose(), sigma_min))
}

/// Thin SVD `M = U·diag(σ)·Vᵀ` of a tall matrix, returned as `(U, σ, V)`.
///
/// Computed in double precision with `faer`; the `nalgebra` SVD loses
/// accuracy on small matrices with clustered singular values.
pub(crate) fn thin_svd<T: Real>(m: &DMatrix<T>) -> Result<(DMatrix<T>, Vec<T>, DMatrix<T>)> {
    let (n, r) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(n, r, |i, j| m[(i, j)].as_f64());
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Contract(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let sigma = svd.S().column_vector();
    let k = r.min(n);
    Ok((
        DMatrix::from_fn(n, k, |i, j| T::lit(u[(i, j)])),
        (0..k).map(|i| T::lit(sigma[i])).collect(),
        DMatrix::from_fn(r, k, |i, j| T::lit(v[(i, j)])),
    ))
}

/// `R_X(v) = (X + v)(I + vᵀv)^{-1/2}`, computed as the polar factor of `X + v`.
pub fn polar_retraction<T: Real>(
    x: &StiefelPoint<T>,
    v: &TangentVector<T>,
) -> Result<StiefelPoint<T>> {
    check_retraction_inputs(x, v)?;
    let (factor, _) = polar_factor(&(x.matrix() + v.matrix()), T::lit(T::RANK_TOL))?;
    Ok(StiefelPoint::new_unchecked(factor))
}

/// Same map as [`polar_retraction`], evaluated through the closed form
/// `(X + v)(I + vᵀv)^{-1/2}` with a symmetric eigendecomposition.
pub fn polar_retraction_closed_form<T: Real>(
    x: &StiefelPoint<T>,
    v: &TangentVector<T>,
) -> Result<StiefelPoint<T>> {
    check_retraction_inputs(x, v)?;
    let r = x.r();
    let gram = DMatrix::<T>::identity(r, r) + v.matrix().tr_mul(v.matrix());
    let eig = SymmetricEigen::new(gram);
    let inv_sqrt = eig.eigenvalues.map(|l| T::one() / l.sqrt());
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();
    Ok(StiefelPoint::new_unchecked((x.matrix() + v.matrix()) * root))
}

/// Polar retraction on raw matrices. `v` is assumed tangent at `x`.
pub(crate) fn retract_raw<T: Real>(x: &DMatrix<T>, v: &DMatrix<T>) -> Result<DMatrix<T>> {
    polar_factor(&(x + v), T::lit(T::RANK_TOL)).map(|(f, _)| f)
}

fn check_retraction_inputs<T: Real>(x: &StiefelPoint<T>, v: &TangentVector<T>) -> Result<()> {
    check_same_shape(x.matrix(), v.matrix(), "retraction")?;
    let offset = (v.base().matrix() - x.matrix()).norm().as_f64();
    if offset > T::ORTHONORMALITY_TOL {
        return Err(Error::Contract(format!(
            "tangent vector is attached to a different point (offset {offset:e})"
        )));
    }
    let defect = v.tangency_defect().as_f64();
    if !(defect <= T::TANGENCY_TOL) {
        return Err(Error::Contract(format!(
            "retraction input is not tangent: ‖Xᵀv + vᵀX‖_F = {defect:e}"
        )));
    }
    Ok(())
}

/// `X̄ = (1/N) Σ X_i`.
pub fn euclidean_mean<T: Real>(points: &[StiefelPoint<T>]) -> Result<AmbientMatrix<T>> {
    let first = points
        .first()
        .ok_or_else(|| Error::Dimension("mean of an empty point set".into()))?;
    let mut sum = DMatrix::<T>::zeros(first.n(), first.r());
    for p in points {
        check_same_shape(first.matrix(), p.matrix(), "mean")?;
        sum += p.matrix();
    }
    Ok(sum / T::from_usize(points.len()).expect("point count fits the scalar"))
}

/// The induced arithmetic mean: the point of `St(n, r)` minimizing
/// `Σ_i ‖Y − X_i‖_F²`, i.e. the polar factor of the Euclidean mean.
pub fn induced_arithmetic_mean<T: Real>(points: &[StiefelPoint<T>]) -> Result<StiefelPoint<T>> {
    let mean = euclidean_mean(points)?;
    StiefelPoint::project(&mean)
}

/// `Σ_i ‖X_i − X̂‖_F²` where `X̂` is the induced arithmetic mean.
pub fn consensus_error<T: Real>(points: &[StiefelPoint<T>]) -> Result<T> {
    let center = induced_arithmetic_mean(points)?;
    Ok(squared_spread(points, &center))
}

/// `Σ_i ‖X_i − center‖_F²`.
pub fn squared_spread<T: Real>(points: &[StiefelPoint<T>], center: &StiefelPoint<T>) -> T {
    points.iter().fold(T::zero(), |acc, p| {
        acc + (p.matrix() - center.matrix()).norm_squared()
    })
}

/// `d_s(X, X*) = min_{QᵀQ = I} ‖XQ − X*‖_F`, with `Q = UVᵀ` from the SVD of `XᵀX*`.
///
/// The residual is formed explicitly rather than through `2r − 2Σσ_i` so
/// that distances near zero keep full precision.
pub fn procrustes_distance<T: Real>(x: &StiefelPoint<T>, xstar: &StiefelPoint<T>) -> Result<T> {
    check_same_shape(x.matrix(), xstar.matrix(), "procrustes distance")?;
    let q = optimal_rotation(x.matrix(), xstar.matrix())?;
    Ok((x.matrix() * q - xstar.matrix()).norm())
}

/// Orthogonal `Q` minimizing `‖XQ − Y‖_F`.
pub fn optimal_rotation<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (u, _, v) = thin_svd(&x.tr_mul(y))?;
    Ok(u * v.transpose())
}

/// Membership of a stacked configuration in the local region `S = S₁ ∩ S₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionReport<T> {
    /// `‖X − X̂‖_F²`, compared against `N δ₁²`.
    pub consensus_sq: T,
    /// `max_i ‖X_i − X̂‖_F`, compared against `δ₂`.
    pub max_deviation: T,
    pub in_s1: bool,
    pub in_s2: bool,
}

impl<T> RegionReport<T> {
    pub fn in_region(&self) -> bool {
        self.in_s1 && self.in_s2
    }
}

/// Default region radii: `δ₂ = 1/6` and the largest admissible `δ₁ = δ₂/(5√r)`.
pub fn default_region_radii(r: usize) -> (f64, f64) {
    let delta2 = 1.0 / 6.0;
    (delta2 / (5.0 * (r as f64).sqrt()), delta2)
}

pub fn region_membership<T: Real>(
    points: &[StiefelPoint<T>],
    delta1: f64,
    delta2: f64,
) -> Result<RegionReport<T>> {
    let first = points
        .first()
        .ok_or_else(|| Error::Dimension("region check on an empty point set".into()))?;
    let r = first.r() as f64;
    // small slack so that the boundary values 1/6 and δ₂/(5√r) are admissible
    let slack = 1e-12;
    if !(delta2 > 0.0 && delta2 <= 1.0 / 6.0 + slack) {
        return Err(Error::Parameter(format!(
            "region radius delta2 = {delta2} must lie in (0, 1/6]"
        )));
    }
    let delta1_max = delta2 / (5.0 * r.sqrt());
    if !(delta1 > 0.0 && delta1 <= delta1_max + slack) {
        return Err(Error::Parameter(format!(
            "region radius delta1 = {delta1} must lie in (0, {delta1_max}]"
        )));
    }
    let center = induced_arithmetic_mean(points)?;
    let consensus_sq = squared_spread(points, &center);
    let max_deviation = points.iter().fold(T::zero(), |acc, p| {
        let d = (p.matrix() - center.matrix()).norm();
        if d > acc {
            d
        } else {
            acc
        }
    });
    let n_agents = points.len() as f64;
    Ok(RegionReport {
        in_s1: consensus_sq.as_f64() <= n_agents * delta1 * delta1,
        in_s2: max_deviation.as_f64() <= delta2,
        consensus_sq,
        max_deviation,
    })
}

pub(crate) fn gaussian_matrix<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

pub(crate) fn check_same_shape<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: expected {:?}, got {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
