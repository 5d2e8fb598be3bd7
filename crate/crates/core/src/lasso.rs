//! Lasso regression by cyclic coordinate descent.
//!
//! Objective: `(1/2m)·||y - Xw - c||² + λ·||w||₁` with an unpenalized
//! intercept `c`. The solver works on the centered covariance ("Gram") form,
//! so one `Gram` per design matrix serves any number of responses.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::LassoError;

pub const GRID_POINTS: usize = 50;
pub const GRID_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Convergence threshold on the largest coordinate change in a sweep.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            tol: 1e-6,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub nnz: usize,
    pub converged: bool,
}

impl LassoSolution {
    fn new(weights: Vec<f64>, intercept: f64, lambda: f64, converged: bool) -> Self {
        let nnz = weights.iter().filter(|w| w.abs() > 0.0).count();
        LassoSolution {
            weights,
            intercept,
            lambda,
            nnz,
            converged,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.nnz == 0
    }
}

/// Maximum number of non-zero weights allowed per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityTarget {
    pub max_nnz: usize,
}

impl SparsityTarget {
    pub fn new(max_nnz: usize) -> Self {
        SparsityTarget { max_nnz }
    }

    pub fn check(&self, d: usize) -> Result<(), String> {
        if self.max_nnz == 0 {
            Err(format!("sparsity target must be at least 1 (got 0, {d} features)"))
        } else {
            Ok(())
        }
    }
}

impl Default for SparsityTarget {
    fn default() -> Self {
        SparsityTarget { max_nnz: 2 }
    }
}

#[inline]
pub fn soft_threshold(c: f64, lambda: f64) -> f64 {
    if c > lambda {
        c - lambda
    } else if c < -lambda {
        c + lambda
    } else {
        0.0
    }
}

/// Column means and the centered second-moment matrix `(1/m) Xcᵀ Xc`.
#[derive(Debug, Clone)]
pub struct Gram {
    m: usize,
    d: usize,
    means: Vec<f64>,
    cov: Vec<f64>,
}

/// A response projected onto a `Gram`'s design matrix.
#[derive(Debug, Clone)]
pub struct Correlations {
    y_mean: f64,
    /// `(1/m) Xcᵀ (y - ȳ)`
    xty: Vec<f64>,
}

impl Gram {
    pub fn new(x: ArrayView2<f64>) -> Result<Self, LassoError> {
        let (m, d) = x.dim();
        if m == 0 {
            return Err(LassoError::Empty);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LassoError::NonFinite);
        }
        let means: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / m as f64).collect();
        let mut cov = vec![0.0; d * d];
        for row in x.rows() {
            for j in 0..d {
                let a = row[j] - means[j];
                if a == 0.0 {
                    continue;
                }
                for k in j..d {
                    cov[j * d + k] += a * (row[k] - means[k]);
                }
            }
        }
        for j in 0..d {
            for k in j..d {
                let v = cov[j * d + k] / m as f64;
                cov[j * d + k] = v;
                cov[k * d + j] = v;
            }
        }
        Ok(Gram { m, d, means, cov })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn correlations(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Correlations, LassoError> {
        if y.len() != self.m || x.nrows() != self.m {
            return Err(LassoError::ShapeMismatch {
                rows: x.nrows(),
                len: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LassoError::NonFinite);
        }
        let y_mean = y.sum() / self.m as f64;
        let mut xty = vec![0.0; self.d];
        for (row, &yi) in x.rows().into_iter().zip(y.iter()) {
            let r = yi - y_mean;
            for j in 0..self.d {
                xty[j] += (row[j] - self.means[j]) * r;
            }
        }
        for v in &mut xty {
            *v /= self.m as f64;
        }
        Ok(Correlations { y_mean, xty })
    }

    /// Smallest λ at which the all-zero solution satisfies the optimality
    /// conditions.
    pub fn lambda_max(&self, corr: &Correlations) -> f64 {
        corr.xty.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn intercept(&self, corr: &Correlations, w: &[f64]) -> f64 {
        corr.y_mean - self.means.iter().zip(w).map(|(m, w)| m * w).sum::<f64>()
    }

    /// Coordinate descent from `w` (warm start), in place. Returns
    /// `(converged, sweeps)`.
    fn descend(
        &self,
        corr: &Correlations,
        lambda: f64,
        w: &mut [f64],
        cfg: &LassoConfig,
    ) -> (bool, usize) {
        let d = self.d;
        // q = xty - G w
        let mut q: Vec<f64> = (0..d)
            .map(|j| corr.xty[j] - (0..d).map(|k| self.cov[j * d + k] * w[k]).sum::<f64>())
            .collect();
        for sweep in 1..=cfg.max_iters {
            let mut max_change: f64 = 0.0;
            for j in 0..d {
                let gjj = self.cov[j * d + j];
                if gjj <= 0.0 {
                    w[j] = 0.0;
                    continue;
                }
                let old = w[j];
                let new = soft_threshold(q[j] + gjj * old, lambda) / gjj;
                let delta = new - old;
                if delta != 0.0 {
                    w[j] = new;
                    // the Gram matrix is symmetric, so row j is column j
                    let row = &self.cov[j * d..(j + 1) * d];
                    for (qk, g) in q.iter_mut().zip(row) {
                        *qk -= g * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < cfg.tol {
                return (true, sweep);
            }
        }
        (false, cfg.max_iters)
    }

    pub fn solve(
        &self,
        corr: &Correlations,
        lambda: f64,
        warm: Option<&[f64]>,
        cfg: &LassoConfig,
    ) -> Result<LassoSolution, LassoError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(LassoError::InvalidLambda(lambda));
        }
        let mut w = warm.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.d]);
        let (converged, _) = self.descend(corr, lambda, &mut w, cfg);
        let intercept = self.intercept(corr, &w);
        Ok(LassoSolution::new(w, intercept, lambda, converged))
    }

    /// Warm-started solutions along `lambda_grid(lambda_max)`, largest λ first.
    pub fn path(&self, corr: &Correlations, cfg: &LassoConfig) -> Vec<LassoSolution> {
        let grid = lambda_grid(self.lambda_max(corr));
        let mut w = vec![0.0; self.d];
        grid.into_iter()
            .map(|lambda| {
                let (converged, _) = self.descend(corr, lambda, &mut w, cfg);
                LassoSolution::new(w.clone(), self.intercept(corr, &w), lambda, converged)
            })
            .collect()
    }

    pub fn fit_with_sparsity(
        &self,
        corr: &Correlations,
        target: SparsityTarget,
        cfg: &LassoConfig,
    ) -> LassoSolution {
        select_sparse(self.path(corr, cfg), target)
    }
}

/// `GRID_POINTS` geometrically spaced values from `lambda_max` down to
/// `lambda_max * GRID_RATIO`.
pub fn lambda_grid(lambda_max: f64) -> Vec<f64> {
    let n = GRID_POINTS;
    (0..n)
        .map(|i| lambda_max * GRID_RATIO.powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Picks the smallest-λ solution with `nnz <= max_nnz`. If that one is
/// all-zero, falls back to the sparsest non-zero solution on the path (largest
/// λ among ties), when there is one.
fn select_sparse(path: Vec<LassoSolution>, target: SparsityTarget) -> LassoSolution {
    let chosen = path
        .iter()
        .rposition(|s| s.nnz <= target.max_nnz)
        .unwrap_or(0);
    if !path[chosen].is_zero() {
        return path[chosen].clone();
    }
    let fallback = path
        .iter()
        .filter(|s| !s.is_zero())
        .min_by_key(|s| s.nnz);
    fallback.unwrap_or(&path[chosen]).clone()
}

pub fn fit_lasso(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LassoSolution, LassoError> {
    let gram = Gram::new(x)?;
    let corr = gram.correlations(x, y)?;
    gram.solve(&corr, lambda, None, &LassoConfig { tol, max_iters })
}

pub fn fit_with_sparsity(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    target: SparsityTarget,
    cfg: &LassoConfig,
) -> Result<LassoSolution, LassoError> {
    let gram = Gram::new(x)?;
    let corr = gram.correlations(x, y)?;
    Ok(gram.fit_with_sparsity(&corr, target, cfg))
}

pub fn lasso_path(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &LassoConfig,
) -> Result<Vec<LassoSolution>, LassoError> {
    let gram = Gram::new(x)?;
    let corr = gram.correlations(x, y)?;
    Ok(gram.path(&corr, cfg))
}

/// `(1/2m)·RSS + λ·||w||₁`, evaluated directly on the data.
pub fn objective(x: ArrayView2<f64>, y: ArrayView1<f64>, w: &[f64], intercept: f64, lambda: f64) -> f64 {
    let m = y.len() as f64;
    let rss: f64 = x
        .rows()
        .into_iter()
        .zip(y.iter())
        .map(|(row, &yi)| {
            let pred = intercept + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            (yi - pred).powi(2)
        })
        .sum();
    rss / (2.0 * m) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the Lasso optimality conditions, using the gradient
/// of the `(1/2m)·RSS` term.
pub fn kkt_violation(x: ArrayView2<f64>, y: ArrayView1<f64>, sol: &LassoSolution) -> f64 {
    let (m, d) = x.dim();
    let mut grad = vec![0.0; d];
    for (row, &yi) in x.rows().into_iter().zip(y.iter()) {
        let resid = yi - sol.intercept - row.iter().zip(&sol.weights).map(|(a, b)| a * b).sum::<f64>();
        for j in 0..d {
            grad[j] -= row[j] * resid / m as f64;
        }
    }
    grad.iter()
        .zip(&sol.weights)
        .map(|(&g, &w)| {
            if w != 0.0 {
                (g + sol.lambda * w.signum()).abs()
            } else {
                (g.abs() - sol.lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(m: usize, d: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((m, d), |_| rng.gen_range(-1.0..1.0));
        let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = Array1::from_shape_fn(m, |i| {
            (0..d).map(|j| x[[i, j]] * beta[j]).sum::<f64>() + 0.3 + rng.gen_range(-0.5..0.5)
        });
        (x, y)
    }

    #[test]
    fn one_dimensional_least_squares() {
        let x = array![[1.0], [-1.0]];
        let y = array![2.0, -2.0];
        let s = fit_lasso(x.view(), y.view(), 0.0, 1e-12, 100).unwrap();
        assert!((s.weights[0] - 2.0).abs() < 1e-12);
        assert!(s.intercept.abs() < 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn soft_threshold_kills_coordinate() {
        // a = mean(x²) = 1, c = mean(x·y) = 2, so w = sign(c)·max(|c|-λ, 0)/a.
        let x = array![[1.0], [-1.0]];
        let y = array![2.0, -2.0];
        for (lambda, expected) in [(0.5, 1.5), (1.9, 0.1), (2.0, 0.0), (3.0, 0.0)] {
            let s = fit_lasso(x.view(), y.view(), lambda, 1e-12, 100).unwrap();
            assert!((s.weights[0] - expected).abs() < 1e-12, "λ={lambda}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        let x = array![[1.0], [f64::NAN]];
        let y = array![1.0, 2.0];
        assert!(matches!(
            fit_lasso(x.view(), y.view(), 0.1, 1e-6, 10),
            Err(LassoError::NonFinite)
        ));
        let x = array![[1.0], [2.0]];
        let y = array![1.0, f64::INFINITY];
        assert!(matches!(
            fit_lasso(x.view(), y.view(), 0.1, 1e-6, 10),
            Err(LassoError::NonFinite)
        ));
    }

    /// Projected (sign-split) subgradient oracle: w = u - v with u, v ≥ 0,
    /// smooth objective, projected gradient steps with a fixed step size.
    fn subgradient_oracle(x: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> f64 {
        let (m, d) = x.dim();
        let mf = m as f64;
        let mut u = vec![0.0; d];
        let mut v = vec![0.0; d];
        let mut c = 0.0;
        let step = 0.2;
        for _ in 0..200_000 {
            let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            let mut g = vec![0.0; d];
            let mut gc = 0.0;
            for i in 0..m {
                let r = (0..d).map(|j| x[[i, j]] * w[j]).sum::<f64>() + c - y[i];
                for j in 0..d {
                    g[j] += x[[i, j]] * r / mf;
                }
                gc += r / mf;
            }
            for j in 0..d {
                u[j] = (u[j] - step * (g[j] + lambda)).max(0.0);
                v[j] = (v[j] - step * (-g[j] + lambda)).max(0.0);
            }
            c -= step * gc;
        }
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        objective(x.view(), y.view(), &w, c, lambda)
    }

    #[test]
    fn matches_subgradient_oracle() {
        let (x, y) = random_problem(20, 5, 7);
        let s = fit_lasso(x.view(), y.view(), 0.1, 1e-12, 100_000).unwrap();
        let ours = objective(x.view(), y.view(), &s.weights, s.intercept, 0.1);
        let oracle = subgradient_oracle(&x, &y, 0.1);
        assert!((ours - oracle).abs() < 1e-8, "{ours} vs {oracle}");
    }

    #[test]
    fn kkt_holds_at_convergence() {
        for seed in 0..10 {
            let (x, y) = random_problem(40, 6, seed);
            for lambda in [0.01, 0.1, 0.5] {
                let s = fit_lasso(x.view(), y.view(), lambda, 1e-10, 10_000).unwrap();
                assert!(s.converged);
                assert!(kkt_violation(x.view(), y.view(), &s) <= 1e-6);
                assert_eq!(s.nnz, s.weights.iter().filter(|w| w.abs() > 0.0).count());
            }
        }
    }

    #[test]
    fn objective_never_increases_across_sweeps() {
        let (x, y) = random_problem(30, 6, 3);
        let gram = Gram::new(x.view()).unwrap();
        let corr = gram.correlations(x.view(), y.view()).unwrap();
        let one_sweep = LassoConfig { tol: 0.0, max_iters: 1 };
        let mut w = vec![0.0; 6];
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            gram.descend(&corr, 0.05, &mut w, &one_sweep);
            let obj = objective(x.view(), y.view(), &w, gram.intercept(&corr, &w), 0.05);
            assert!(obj <= prev + 1e-12);
            prev = obj;
        }
    }

    #[test]
    fn sparsity_recovers_single_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((200, 6), |_| rng.gen_range(-1.0..1.0));
        let y = x.column(3).mapv(|v| 4.0 * v + 1.0);
        let s = fit_with_sparsity(x.view(), y.view(), SparsityTarget::new(2), &LassoConfig::default())
            .unwrap();
        assert!((1..=2).contains(&s.nnz));
        let dominant = (0..6)
            .max_by(|&a, &b| s.weights[a].abs().total_cmp(&s.weights[b].abs()))
            .unwrap();
        assert_eq!(dominant, 3);
        // exhaustive oracle over the grid: nothing below the chosen λ has nnz ≤ 2
        let path = lasso_path(x.view(), y.view(), &LassoConfig::default()).unwrap();
        assert!(path.iter().filter(|p| p.lambda < s.lambda).all(|p| p.nnz > 2));
    }

    #[test]
    fn constant_response_gives_zero_weights() {
        let (x, _) = random_problem(20, 4, 1);
        let y = Array1::from_elem(20, 3.5);
        let s = fit_with_sparsity(x.view(), y.view(), SparsityTarget::new(2), &LassoConfig::default())
            .unwrap();
        assert!(s.is_zero());
        assert!((s.intercept - 3.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_lambda_matches_least_squares() {
        let (x, y) = random_problem(200, 4, 5);
        let s = fit_lasso(x.view(), y.view(), 1e-13, 1e-14, 100_000).unwrap();
        // normal equations on [X, 1]
        let ols = normal_equations(&x, &y);
        for j in 0..4 {
            assert!((s.weights[j] - ols[j]).abs() < 1e-8, "{} vs {}", s.weights[j], ols[j]);
        }
        assert!((s.intercept - ols[4]).abs() < 1e-8);
    }

    #[test]
    fn grid_bottom_close_to_least_squares() {
        // unit-variance, nearly orthogonal columns
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r3 = 3f64.sqrt();
        let x = Array2::from_shape_fn((400, 4), |_| rng.gen_range(-r3..r3));
        let y = Array1::from_shape_fn(400, |i| {
            0.5 * x[[i, 0]] - 0.3 * x[[i, 1]] + 0.2 * x[[i, 3]] + rng.gen_range(-0.1..0.1)
        });
        let cfg = LassoConfig { tol: 1e-12, max_iters: 100_000 };
        let s = fit_with_sparsity(x.view(), y.view(), SparsityTarget::new(4), &cfg).unwrap();
        let ols = normal_equations(&x, &y);
        for j in 0..4 {
            assert!((s.weights[j] - ols[j]).abs() < 1e-4, "{} vs {}", s.weights[j], ols[j]);
        }
    }

    fn normal_equations(x: &Array2<f64>, y: &Array1<f64>) -> Vec<f64> {
        let (m, d) = x.dim();
        let n = d + 1;
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..m {
            let mut row: Vec<f64> = x.row(i).to_vec();
            row.push(1.0);
            for p in 0..n {
                for q in 0..n {
                    a[p][q] += row[p] * row[q];
                }
                a[p][n] += row[p] * y[i];
            }
        }
        // Gauss-Jordan with partial pivoting
        for col in 0..n {
            let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    #[test]
    fn lambda_max_yields_all_zero() {
        let (x, y) = random_problem(30, 5, 2);
        let path = lasso_path(x.view(), y.view(), &LassoConfig::default()).unwrap();
        assert_eq!(path.len(), GRID_POINTS);
        assert_eq!(path[0].nnz, 0);
        let ratio = path.last().unwrap().lambda / path[0].lambda;
        assert!((ratio - GRID_RATIO).abs() < 1e-15);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn nnz_shrinks_as_lambda_grows(seed in 0u64..10_000, m in 10usize..60, d in 1usize..8) {
            let (x, y) = random_problem(m, d, seed);
            let path = lasso_path(x.view(), y.view(), &LassoConfig::default()).unwrap();
            proptest::prop_assert_eq!(path[0].nnz, 0);
            // path runs from large to small λ
            for pair in path.windows(2) {
                proptest::prop_assert!(pair[1].nnz + 1 >= pair[0].nnz);
            }
        }
    }
}
