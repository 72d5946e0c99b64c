//! Gaussian-kernel ridge regression learners.
//!
//! A kernel learner minimizes
//! `sum_i g_i f(x_i) + h_i f(x_i)^2 / 2 + lambda ||f||_H^2 / 2`
//! over the RKHS of `K(a, b) = exp(-||a - b||^2 / rho^2)`. With
//! `D = diag(sqrt(h))` and `y = -g / h` the minimizer is `f(x) = k(x)^T alpha`
//! with `alpha = D (D K D + lambda I)^{-1} D y`.
//!
//! In Nyström mode `K` is replaced by `C W^{-1} C^T`, where `W` is the kernel
//! among `l` sampled anchor rows and `C` the kernel between all rows and the
//! anchors. Pushing the Woodbury identity through the solution gives
//! coefficients against the anchors directly:
//! `beta = (lambda W + C^T H C)^{-1} C^T (-g)`, an `l x l` solve.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// First diagonal jitter, relative to the mean diagonal entry.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-||x1 - x2||^2 / rho^2)`
#[inline]
pub fn gaussian_kernel(x1: &[f64], x2: &[f64], rho: f64) -> f64 {
    (-squared_distance(x1, x2) / (rho * rho)).exp()
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn kernel_matrix(a: &Matrix, b: &Matrix, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), b.rows(), |i, j| gaussian_kernel(a.row(i), b.row(j), rho))
}

/// Symmetric kernel matrix of the rows of `a`, evaluating each pair once.
pub fn gram_matrix(a: &Matrix, rho: f64) -> DMatrix<f64> {
    let n = a.rows();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = 1.0;
        for i in j + 1..n {
            let v = gaussian_kernel(a.row(i), a.row(j), rho);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factorization with escalating diagonal jitter: starts at
/// `JITTER_START * trace / dim` and multiplies by ten up to `JITTER_MAX`.
pub fn cholesky_jittered(mut a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let dim = a.nrows();
    if dim == 0 {
        return Err(Error::invalid("cannot factorize an empty matrix"));
    }
    let scale = a.trace() / dim as f64;
    if !scale.is_finite() {
        return Err(Error::NonFinite("kernel system".into()));
    }
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut rel = JITTER_START;
    let mut applied = 0.0;
    loop {
        let jitter = rel * scale;
        for i in 0..dim {
            a[(i, i)] += jitter - applied;
        }
        applied = jitter;
        let last = rel >= JITTER_MAX * (1.0 - 1e-9);
        if last {
            return Cholesky::new(a).ok_or_else(|| {
                Error::Factorization(format!(
                    "{dim}x{dim} kernel system is not positive definite even with jitter {jitter:e}; \
                     check rho and lambda"
                ))
            });
        }
        if let Some(c) = Cholesky::new(a.clone()) {
            return Ok(c);
        }
        rel *= 10.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    Exact,
    Nystrom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub rho: f64,
    pub lambda: f64,
    /// Number of Nyström anchor rows; exact kernel when `None`.
    pub nystrom_samples: Option<usize>,
    pub seed: u64,
}

impl KernelConfig {
    pub fn exact(rho: f64, lambda: f64) -> Self {
        Self {
            rho,
            lambda,
            nystrom_samples: None,
            seed: 0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("kernel range must be positive, got {}", self.rho)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if let Some(l) = self.nystrom_samples {
            if l == 0 || l > n {
                return Err(Error::invalid(format!("need 1 <= nystrom samples <= {n}, got {l}")));
            }
        }
        Ok(())
    }
}

/// A fitted RKHS function `x -> sum_j alpha_j K(anchor_j, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelLearner {
    anchors: Arc<Matrix>,
    alpha: Vec<f64>,
    rho: f64,
    lambda: f64,
    mode: KernelMode,
}

impl KernelLearner {
    pub fn new(anchors: Arc<Matrix>, alpha: Vec<f64>, rho: f64, lambda: f64, mode: KernelMode) -> Result<Self> {
        if anchors.rows() != alpha.len() {
            return Err(Error::invalid("one coefficient per anchor required"));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("kernel coefficients".into()));
        }
        if !(rho > 0.0) {
            return Err(Error::invalid("kernel range must be positive"));
        }
        Ok(Self {
            anchors,
            alpha,
            rho,
            lambda,
            mode,
        })
    }

    pub fn anchors(&self) -> &Arc<Matrix> {
        &self.anchors
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.anchors
            .row_iter()
            .zip(&self.alpha)
            .map(|(a, w)| w * gaussian_kernel(a, x, self.rho))
            .sum()
    }

    pub fn predict_matrix(&self, features: &Matrix) -> Vec<f64> {
        features.row_iter().map(|x| self.predict(x)).collect()
    }

    /// Squared RKHS norm `alpha^T K alpha`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let k = gram_matrix(&self.anchors, self.rho);
        let a = DVector::from_column_slice(&self.alpha);
        a.dot(&(&k * &a))
    }
}

/// Uniformly sampled anchor rows with the factorized anchor kernel matrix.
#[derive(Debug, Clone)]
pub struct NystromFactor {
    indices: Vec<usize>,
    samples: Arc<Matrix>,
    rho: f64,
    gram: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
    cross: Option<DMatrix<f64>>,
}

/// Row indices of the Nyström sample: `l` of `n` drawn uniformly without
/// replacement, sorted.
pub fn nystrom_indices(n: usize, l: usize, seed: u64) -> Result<Vec<usize>> {
    if l == 0 || l > n {
        return Err(Error::invalid(format!("need 1 <= nystrom samples <= {n}, got {l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, l).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Samples anchors with `config.seed` and factorizes their kernel matrix.
pub fn build_nystrom(features: &Matrix, config: &KernelConfig) -> Result<NystromFactor> {
    config.validate(features.rows())?;
    let l = config
        .nystrom_samples
        .ok_or_else(|| Error::invalid("no nystrom sample count configured"))?;
    let indices = nystrom_indices(features.rows(), l, config.seed)?;
    let samples = Arc::new(features.select_rows(&indices));
    let gram = gram_matrix(&samples, config.rho);
    let gram_chol = cholesky_jittered(gram.clone())?;
    let cross = kernel_matrix(features, &samples, config.rho);
    Ok(NystromFactor {
        indices,
        samples,
        rho: config.rho,
        gram,
        gram_chol,
        cross: Some(cross),
    })
}

impl NystromFactor {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn samples(&self) -> &Arc<Matrix> {
        &self.samples
    }

    pub fn rank_bound(&self) -> usize {
        self.samples.rows()
    }

    pub fn cross(&self) -> Option<&DMatrix<f64>> {
        self.cross.as_ref()
    }

    /// `C W^{-1} C^T` for the rows the factor was built on.
    pub fn approximate_kernel_matrix(&self) -> Result<DMatrix<f64>> {
        let c = self
            .cross
            .as_ref()
            .ok_or_else(|| Error::invalid("nystrom factor has no cross matrix"))?;
        let w_inv_ct = self.gram_chol.solve(&c.transpose());
        Ok(c * w_inv_ct)
    }

    /// Applies `W^{-1}` to `v`.
    pub fn solve_gram(&self, v: &DVector<f64>) -> DVector<f64> {
        self.gram_chol.solve(v)
    }

    /// Drops the `n x l` cross matrix.
    pub fn without_cross(mut self) -> Self {
        self.cross = None;
        self
    }
}

/// Kernel quantities shared by every boosting iteration: anchors, the kernel
/// between training rows and anchors, and (Nyström only) the anchor Gram
/// matrix.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    anchors: Arc<Matrix>,
    rho: f64,
    lambda: f64,
    mode: KernelMode,
    cross: DMatrix<f64>,
    gram: Option<DMatrix<f64>>,
}

impl KernelBasis {
    /// Builds the exact or Nyström basis for `features` as configured.
    pub fn new(features: &Matrix, config: &KernelConfig) -> Result<Self> {
        config.validate(features.rows())?;
        match config.nystrom_samples {
            None => Ok(Self::exact(features, config.rho, config.lambda)),
            Some(_) => Ok(Self::nystrom(build_nystrom(features, config)?, config.lambda)),
        }
    }

    pub fn exact(features: &Matrix, rho: f64, lambda: f64) -> Self {
        Self::exact_shared(Arc::new(features.clone()), rho, lambda)
    }

    /// Exact basis whose anchors are the (shared) training rows.
    pub fn exact_shared(features: Arc<Matrix>, rho: f64, lambda: f64) -> Self {
        let cross = gram_matrix(&features, rho);
        Self {
            anchors: features,
            rho,
            lambda,
            mode: KernelMode::Exact,
            cross,
            gram: None,
        }
    }

    pub fn nystrom(factor: NystromFactor, lambda: f64) -> Self {
        let cross = factor.cross.expect("nystrom factor built without cross matrix");
        Self {
            anchors: factor.samples,
            rho: factor.rho,
            lambda,
            mode: KernelMode::Nystrom,
            cross,
            gram: Some(factor.gram),
        }
    }

    pub fn anchors(&self) -> &Arc<Matrix> {
        &self.anchors
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_rows(&self) -> usize {
        self.cross.nrows()
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.rows()
    }

    /// Kernel between the training rows and the anchors.
    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// Kernel between arbitrary rows and the anchors.
    pub fn cross_with(&self, features: &Matrix) -> DMatrix<f64> {
        kernel_matrix(features, &self.anchors, self.rho)
    }

    /// Fitted values `cross * alpha` on the training rows.
    pub fn fitted_values(&self, alpha: &[f64]) -> Vec<f64> {
        mat_vec(&self.cross, alpha)
    }

    pub fn learner(&self, alpha: Vec<f64>) -> Result<KernelLearner> {
        KernelLearner::new(self.anchors.clone(), alpha, self.rho, self.lambda, self.mode)
    }

    /// Coefficients of the penalized Newton step for one gradient/Hessian
    /// column. Refactorizes on every call.
    pub fn solve_newton(&self, grad: &[f64], hess: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_rows();
        if grad.len() != n || hess.len() != n {
            return Err(Error::invalid("gradient/Hessian length does not match rows"));
        }
        if let Some(bad) = hess.iter().find(|h| !(**h > 0.0)) {
            return Err(Error::invalid(format!("Hessians must be positive, found {bad}")));
        }
        match self.mode {
            KernelMode::Exact => {
                let d: Vec<f64> = hess.iter().map(|h| h.sqrt()).collect();
                let mut a = DMatrix::from_fn(n, n, |i, j| d[i] * self.cross[(i, j)] * d[j]);
                for i in 0..n {
                    a[(i, i)] += self.lambda;
                }
                let chol = cholesky_jittered(a)?;
                // D y = -g / sqrt(h)
                let rhs = DVector::from_iterator(n, grad.iter().zip(&d).map(|(g, di)| -g / di));
                let sol = chol.solve(&rhs);
                Ok(sol.iter().zip(&d).map(|(s, di)| s * di).collect())
            }
            KernelMode::Nystrom => {
                let gram = self.gram.as_ref().expect("nystrom basis without gram");
                let mut hc = self.cross.clone();
                for (i, mut row) in hc.row_iter_mut().enumerate() {
                    row *= hess[i];
                }
                let a = gram * self.lambda + self.cross.tr_mul(&hc);
                let chol = cholesky_jittered(a)?;
                Ok(self.nystrom_rhs_solve(&chol, grad))
            }
        }
    }

    fn nystrom_rhs_solve(&self, chol: &Cholesky<f64, Dyn>, grad: &[f64]) -> Vec<f64> {
        let neg_g = DVector::from_iterator(grad.len(), grad.iter().map(|g| -g));
        chol.solve(&self.cross.tr_mul(&neg_g)).iter().copied().collect()
    }
}

/// Cached factorization for gradient boosting (`h = 1`), where the kernel
/// system does not change between iterations.
#[derive(Debug, Clone)]
pub struct GradientKernel {
    basis: KernelBasis,
    chol: Cholesky<f64, Dyn>,
}

impl GradientKernel {
    /// Factorizes `K + lambda I` (exact) or `lambda W + C^T C` (Nyström).
    pub fn new(basis: KernelBasis) -> Result<Self> {
        let a = match basis.mode {
            KernelMode::Exact => {
                let mut a = basis.cross.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += basis.lambda;
                }
                a
            }
            KernelMode::Nystrom => {
                let gram = basis.gram.as_ref().expect("nystrom basis without gram");
                gram * basis.lambda + basis.cross.tr_mul(&basis.cross)
            }
        };
        let chol = cholesky_jittered(a)?;
        Ok(Self { basis, chol })
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    /// Coefficients for the gradient column `grad`.
    pub fn solve(&self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.basis.n_rows() {
            return Err(Error::invalid("gradient length does not match rows"));
        }
        Ok(match self.basis.mode {
            KernelMode::Exact => {
                let rhs = DVector::from_iterator(grad.len(), grad.iter().map(|g| -g));
                self.chol.solve(&rhs).iter().copied().collect()
            }
            KernelMode::Nystrom => self.basis.nystrom_rhs_solve(&self.chol, grad),
        })
    }
}

/// Penalized Newton step for one gradient/Hessian column.
pub fn fit_kernel_newton(
    features: &Matrix,
    grad: &[f64],
    hess: &[f64],
    config: &KernelConfig,
) -> Result<KernelLearner> {
    let basis = KernelBasis::new(features, config)?;
    let alpha = basis.solve_newton(grad, hess)?;
    basis.learner(alpha)
}

/// Gradient step (`h = 1`) reusing the cached factorization.
pub fn fit_kernel_gradient(cache: &GradientKernel, grad: &[f64]) -> Result<KernelLearner> {
    let alpha = cache.solve(grad)?;
    cache.basis.learner(alpha)
}

/// `m * v` for a column-major matrix.
pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let v = DVector::from_column_slice(v);
    (m * v).iter().copied().collect()
}

/// How the kernel range is derived from nearest-neighbor distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoMode {
    /// The kernel decays to 0.01 at the mean k-nearest-neighbor distance.
    Decay01,
    /// The range equals the mean distance to all other rows.
    Slow,
}

/// Mean over rows of the mean distance to their `k` nearest other rows, for
/// each `k` in `ks`.
pub fn knn_mean_distances(features: &Matrix, ks: &[usize]) -> Result<Vec<f64>> {
    let m = features.rows();
    if m < 2 {
        return Err(Error::invalid("nearest-neighbor distances need at least two rows"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > m - 1) {
        return Err(Error::invalid(format!("neighbor count {k} outside 1..={}", m - 1)));
    }
    let mut totals = vec![0.0; ks.len()];
    let mut dist = Vec::with_capacity(m - 1);
    for i in 0..m {
        dist.clear();
        let xi = features.row(i);
        for j in 0..m {
            if j != i {
                dist.push(squared_distance(xi, features.row(j)).sqrt());
            }
        }
        dist.sort_unstable_by(f64::total_cmp);
        let mut prefix = 0.0;
        let mut next = 0;
        let mut order: Vec<usize> = (0..ks.len()).collect();
        order.sort_by_key(|&q| ks[q]);
        for (pos, d) in dist.iter().enumerate() {
            prefix += d;
            while next < order.len() && ks[order[next]] == pos + 1 {
                totals[order[next]] += prefix / (pos + 1) as f64;
                next += 1;
            }
        }
    }
    Ok(totals.into_iter().map(|t| t / m as f64).collect())
}

pub fn knn_mean_distance(features: &Matrix, k: usize) -> Result<f64> {
    Ok(knn_mean_distances(features, &[k])?[0])
}

/// Range for which `exp(-d^2 / rho^2) = 0.01` at distance `d`.
pub fn rho_from_decay_distance(d: f64) -> f64 {
    d / 100f64.ln().sqrt()
}

/// Kernel range from the rows of `features` (training rows or Nyström
/// samples). `k` is ignored in slow mode.
pub fn select_rho(features: &Matrix, k: usize, mode: RhoMode) -> Result<f64> {
    let rho = match mode {
        RhoMode::Decay01 => rho_from_decay_distance(knn_mean_distance(features, k)?),
        RhoMode::Slow => knn_mean_distance(features, features.rows().saturating_sub(1).max(1))?,
    };
    if !(rho > 0.0) {
        return Err(Error::invalid("all rows coincide; kernel range would be zero"));
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, scale: f64) -> Matrix {
        let data = (0..n * p)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Matrix::new(n, p, data).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.3), 1.0);
        assert_relative_eq!(gaussian_kernel(&[0.0], &[2.0], 2.0), (-1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(gaussian_kernel(&[0.0, 0.0], &[3.0, 4.0], 5.0), 0.3678794, epsilon = 1e-7);
    }

    #[test]
    fn kernel_matrix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 8, 3, 1.0);
        let k = kernel_matrix(&x, &x, 0.8);
        assert_eq!(k, gram_matrix(&x, 0.8));
        for i in 0..8 {
            assert_eq!(k[(i, i)], 1.0);
        }
        let eig = SymmetricEigen::new(k).eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-10));
        let one = Matrix::from_rows(&[[0.5, 1.0]]).unwrap();
        assert_eq!(kernel_matrix(&one, &one, 1.0)[(0, 0)], 1.0);
    }

    #[test]
    fn newton_scalar_cases() {
        let x = Matrix::from_rows(&[[0.0]]).unwrap();
        let cfg = KernelConfig::exact(1.0, 1.0);
        let l = fit_kernel_newton(&x, &[-2.0], &[1.0], &cfg).unwrap();
        assert_relative_eq!(l.alpha()[0], 1.0, epsilon = 1e-9);
        let l = fit_kernel_newton(&x, &[-4.0], &[4.0], &cfg).unwrap();
        // D = 2, D y = 2, (D K D + 1)^{-1} = 1/5
        assert_relative_eq!(l.alpha()[0], 0.8, epsilon = 1e-9);
        // generic quadratic minimizer: argmin_a g k a + h (k a)^2 / 2 + lambda k a^2 / 2
        let (g, h, lam) = (-4.0, 4.0, 1.0);
        assert_relative_eq!(-g / (h + lam), 0.8);
    }

    /// Solves the first-order conditions of the penalized quadratic in
    /// `alpha` with a dense LU: `(H K + lambda I) alpha = -g`.
    fn first_order_oracle(k: &DMatrix<f64>, g: &[f64], h: &[f64], lambda: f64) -> Vec<f64> {
        let n = g.len();
        let a = DMatrix::from_fn(n, n, |i, j| h[i] * k[(i, j)] + if i == j { lambda } else { 0.0 });
        let b = DVector::from_iterator(n, g.iter().map(|v| -v));
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn newton_matches_first_order_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = random_matrix(&mut rng, 25, 2, 1.0);
        let f: Vec<f64> = (0..25).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..25).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let gh = crate::losses::Loss::Logistic.gradient_hessian(&y, &f, true);
        let cfg = KernelConfig::exact(0.7, 0.5);
        let learner = fit_kernel_newton(&x, gh.grad(0), gh.hess(0), &cfg).unwrap();
        let oracle = first_order_oracle(&gram_matrix(&x, 0.7), gh.grad(0), gh.hess(0), 0.5);
        assert!(max_abs_diff(learner.alpha(), &oracle) < 1e-8);
    }

    #[test]
    fn gradient_solver_matches_newton_with_unit_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 30, 2, 1.0);
        let g: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = KernelConfig::exact(0.5, 1.0);
        let cache = GradientKernel::new(KernelBasis::new(&x, &cfg).unwrap()).unwrap();
        let a = fit_kernel_gradient(&cache, &g).unwrap();
        let b = fit_kernel_newton(&x, &g, &[1.0; 30], &cfg).unwrap();
        assert!(max_abs_diff(a.alpha(), b.alpha()) < 1e-10);

        let zero = fit_kernel_gradient(&cache, &[0.0; 30]).unwrap();
        assert!(zero.alpha().iter().all(|&v| v == 0.0));

        // one factorization, two right-hand sides
        let g2: Vec<f64> = g.iter().map(|v| v * v - 0.3).collect();
        let first = fit_kernel_gradient(&cache, &g).unwrap();
        let second = fit_kernel_gradient(&cache, &g2).unwrap();
        let fresh = GradientKernel::new(KernelBasis::new(&x, &cfg).unwrap()).unwrap();
        assert!(max_abs_diff(first.alpha(), a.alpha()) < 1e-12);
        assert!(max_abs_diff(second.alpha(), fresh.solve(&g2).unwrap().as_slice()) < 1e-12);
    }

    #[test]
    fn predict_examples() {
        let anchors = Arc::new(Matrix::from_rows(&[[0.5, -1.0]]).unwrap());
        let zero = KernelLearner::new(anchors.clone(), vec![0.0], 1.0, 1.0, KernelMode::Exact).unwrap();
        assert_eq!(zero.predict(&[3.0, 3.0]), 0.0);
        let two = KernelLearner::new(anchors, vec![2.0], 1.0, 1.0, KernelMode::Exact).unwrap();
        assert_eq!(two.predict(&[0.5, -1.0]), 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 10, 2, 1.0);
        let alpha: Vec<f64> = (0..10).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let l1: f64 = alpha.iter().map(|a| a.abs()).sum();
        let rho = 0.3;
        let learner = KernelLearner::new(Arc::new(x.clone()), alpha, rho, 1.0, KernelMode::Exact).unwrap();
        // every anchor lies within radius 10; probe at distance >= 5 rho from all
        let max_norm = x.row_iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let far = [max_norm + 5.0 * rho, 0.0];
        assert!(learner.predict(&far).abs() < 1e-8 * l1);
        assert!(KernelLearner::new(Arc::new(x), vec![1.0], 1.0, 1.0, KernelMode::Exact).is_err());
    }

    #[test]
    fn nystrom_with_all_rows_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 15, 2, 2.0);
        let cfg = KernelConfig {
            rho: 0.8,
            lambda: 1.0,
            nystrom_samples: Some(15),
            seed: 7,
        };
        let f = build_nystrom(&x, &cfg).unwrap();
        let approx = f.approximate_kernel_matrix().unwrap();
        let exact = gram_matrix(&x, 0.8);
        assert!((approx - exact).abs().max() < 1e-8);
    }

    #[test]
    fn nystrom_rank_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 40, 2, 1.0);
        let cfg = KernelConfig {
            rho: 1.0,
            lambda: 1.0,
            nystrom_samples: Some(10),
            seed: 11,
        };
        let f = build_nystrom(&x, &cfg).unwrap();
        assert_eq!(f.indices().len(), 10);
        let eig = SymmetricEigen::new(f.approximate_kernel_matrix().unwrap()).eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-8));
        let top = eig.iter().copied().fold(0.0, f64::max);
        let rank = eig.iter().filter(|&&e| e > 1e-9 * top).count();
        assert!(rank <= 10, "rank {rank}");
    }

    #[test]
    fn nystrom_solve_matches_dense_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 30;
        let x = random_matrix(&mut rng, n, 2, 1.0);
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.25)).collect();
        let cfg = KernelConfig {
            rho: 0.9,
            lambda: 0.7,
            nystrom_samples: Some(8),
            seed: 3,
        };
        let factor = build_nystrom(&x, &cfg).unwrap();
        let k_approx = factor.approximate_kernel_matrix().unwrap();
        let cross = factor.cross().unwrap().clone();
        // dense closed form with the approximate kernel, mapped onto the anchors
        let d: Vec<f64> = h.iter().map(|v| v.sqrt()).collect();
        let mut a = DMatrix::from_fn(n, n, |i, j| d[i] * k_approx[(i, j)] * d[j]);
        for i in 0..n {
            a[(i, i)] += 0.7;
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|i| -g[i] / d[i]));
        let sol = a.lu().solve(&rhs).unwrap();
        let alpha_full = DVector::from_iterator(n, (0..n).map(|i| d[i] * sol[i]));
        let beta_dense = factor.solve_gram(&cross.tr_mul(&alpha_full));

        let basis = KernelBasis::nystrom(factor, 0.7);
        let beta = basis.solve_newton(&g, &h).unwrap();
        let fitted_dense: Vec<f64> = (&k_approx * &alpha_full).iter().copied().collect();
        assert!(max_abs_diff(&basis.fitted_values(&beta), &fitted_dense) < 1e-8);
        assert!(max_abs_diff(&beta, beta_dense.as_slice()) < 1e-6 * (1.0 + beta_dense.amax()));

        // gradient cache agrees with h = 1
        let cache = GradientKernel::new(basis.clone()).unwrap();
        let b1 = cache.solve(&g).unwrap();
        let b2 = basis.solve_newton(&g, &[1.0; 30]).unwrap();
        assert!(max_abs_diff(&b1, &b2) < 1e-9 * (1.0 + b2.iter().map(|v| v.abs()).fold(0.0, f64::max)));
    }

    #[test]
    fn jitter_rescues_duplicate_rows() {
        let x = Matrix::from_rows(&[[0.0], [0.0], [1.0]]).unwrap();
        let cfg = KernelConfig {
            rho: 1.0,
            lambda: 0.0,
            nystrom_samples: Some(3),
            seed: 0,
        };
        assert!(build_nystrom(&x, &cfg).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_jittered(bad), Err(Error::Factorization(_))));
    }

    #[test]
    fn rho_selection() {
        let d = 100f64.ln().sqrt();
        let x = Matrix::from_rows(&[[0.0], [d]]).unwrap();
        assert_relative_eq!(select_rho(&x, 1, RhoMode::Decay01).unwrap(), 1.0, epsilon = 1e-12);
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert_relative_eq!(select_rho(&x, 1, RhoMode::Decay01).unwrap(), 0.4659906, epsilon = 1e-7);
        assert_relative_eq!(select_rho(&x, 1, RhoMode::Slow).unwrap(), 1.0);
        // the decay is exactly 1% at the mean distance
        let rho = rho_from_decay_distance(2.5);
        assert_relative_eq!(gaussian_kernel(&[0.0], &[2.5], rho), 0.01, epsilon = 1e-12);

        let one = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(select_rho(&one, 1, RhoMode::Decay01).is_err());
        assert!(select_rho(&x, 2, RhoMode::Decay01).is_err());
        let same = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(select_rho(&same, 1, RhoMode::Decay01).is_err());
    }

    #[test]
    fn knn_distances_by_hand() {
        // points 0, 1, 3 on a line
        let x = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let d = knn_mean_distances(&x, &[2, 1]).unwrap();
        // k = 1: (1 + 1 + 2) / 3; k = 2: ((1+3)/2 + (1+2)/2 + (2+3)/2) / 3
        assert_relative_eq!(d[1], 4.0 / 3.0);
        assert_relative_eq!(d[0], (2.0 + 1.5 + 2.5) / 3.0);
    }

    fn objective(learner: &KernelLearner, x: &Matrix, g: &[f64], h: &[f64], lambda: f64) -> f64 {
        let f = learner.predict_matrix(x);
        let fit: f64 = (0..g.len()).map(|i| g[i] * f[i] + 0.5 * h[i] * f[i] * f[i]).sum();
        fit + 0.5 * lambda * learner.rkhs_norm_sq()
    }

    fn instance(seed: u64) -> (Matrix, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..20);
        let p = rng.gen_range(1..4);
        let x = random_matrix(&mut rng, n, p, 1.0);
        let g = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = (0..n).map(|_| rng.gen_range(0.01..0.25)).collect();
        (x, g, h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn newton_step_decreases_penalized_objective(seed in any::<u64>(), lambda in 0.01f64..5.0) {
            let (x, g, h) = instance(seed);
            let learner = fit_kernel_newton(&x, &g, &h, &KernelConfig::exact(0.8, lambda)).unwrap();
            prop_assert!(objective(&learner, &x, &g, &h, lambda) < 0.0);
            let zero = fit_kernel_newton(&x, &vec![0.0; g.len()], &h, &KernelConfig::exact(0.8, lambda)).unwrap();
            prop_assert_eq!(objective(&zero, &x, &vec![0.0; g.len()], &h, lambda), 0.0);
        }

        #[test]
        fn three_algebraic_forms_agree(seed in any::<u64>()) {
            // widely spaced points keep K well conditioned
            let (x, g, h) = instance(seed);
            let x = x.scaled(3.0);
            let lambda = 0.3;
            let k = gram_matrix(&x, 0.8);
            let eig = SymmetricEigen::new(k.clone()).eigenvalues;
            prop_assume!(eig.min() > 1e-6 * eig.max());
            let n = g.len();
            let hm = DMatrix::from_diagonal(&DVector::from_column_slice(&h));
            let y = DVector::from_iterator(n, (0..n).map(|i| -g[i] / h[i]));
            let eye = DMatrix::<f64>::identity(n, n);
            let form1 = (&k * &hm * &k + &k * lambda).lu().solve(&(&k * &hm * &y)).unwrap();
            let form2 = (&hm * &k + &eye * lambda).lu().solve(&(&hm * &y)).unwrap();
            let learner = fit_kernel_newton(&x, &g, &h, &KernelConfig::exact(0.8, lambda)).unwrap();
            prop_assert!(max_abs_diff(learner.alpha(), form1.as_slice()) < 1e-7);
            prop_assert!(max_abs_diff(learner.alpha(), form2.as_slice()) < 1e-7);
        }

        #[test]
        fn larger_lambda_shrinks(seed in any::<u64>(), lambda in 0.01f64..2.0) {
            // unit Hessians: the shrinkage is then exact in the eigenbasis of K
            let (x, g, h) = instance(seed);
            let h = vec![1.0; h.len()];
            let small = fit_kernel_newton(&x, &g, &h, &KernelConfig::exact(0.8, lambda)).unwrap();
            let large = fit_kernel_newton(&x, &g, &h, &KernelConfig::exact(0.8, lambda * 2.0)).unwrap();
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!(norm(large.alpha()) <= norm(small.alpha()) * (1.0 + 1e-9));
            let fs = small.predict_matrix(&x);
            let fl = large.predict_matrix(&x);
            prop_assert!(norm(&fl) <= norm(&fs) * (1.0 + 1e-9));
        }

        #[test]
        fn joint_permutation_leaves_prediction(seed in any::<u64>()) {
            let (x, g, h) = instance(seed);
            let learner = fit_kernel_newton(&x, &g, &h, &KernelConfig::exact(0.8, 1.0)).unwrap();
            let n = x.rows();
            let perm: Vec<usize> = (0..n).rev().collect();
            let permuted = KernelLearner::new(
                Arc::new(x.select_rows(&perm)),
                perm.iter().map(|&i| learner.alpha()[i]).collect(),
                0.8, 1.0, KernelMode::Exact,
            ).unwrap();
            let probe = [0.3, -0.2, 0.1];
            let probe = &probe[..x.cols()];
            prop_assert!((learner.predict(probe) - permuted.predict(probe)).abs() < 1e-12);
        }
    }
}
