//! Convex learning tasks: per-sample loss and gradient, empirical risk,
//! curvature constants and exact or high-precision optima.
//!
//! Smooth kinds (least squares, ridge, multinomial logistic with an ℓ2 term)
//! satisfy the strong-convexity and smoothness conditions the convergence
//! bounds need. The lasso kind only exists to reproduce the two-device toy
//! problem; it has no gradient and cannot be trained with SGD.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Gradient-norm tolerance for the iterative logistic solver.
pub const LOGISTIC_TOLERANCE: f64 = 1e-10;
const LOGISTIC_MAX_ITERS: usize = 200_000;
const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// `½(xᵀw − y)²`
    LeastSquares,
    /// `½(xᵀw − y)² + (reg/2)‖w‖²`
    Ridge { reg: f64 },
    /// `(y − xᵀw)² + reg·‖w‖₁`
    Lasso { reg: f64 },
    /// Softmax cross-entropy over `classes` plus `(reg/2)‖w‖²`.
    Logistic { reg: f64, classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureBounds {
    /// Strong-convexity constant.
    pub mu: f64,
    /// Smoothness constant.
    pub lambda: f64,
    /// Per-sample gradient spread at the optimum.
    pub sigma_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    kind: LossKind,
    features: usize,
}

impl Objective {
    pub fn new(kind: LossKind, features: usize) -> Result<Self> {
        if features == 0 {
            return Err(Error::config("dim", "feature dimension must be positive"));
        }
        match kind {
            LossKind::Ridge { reg } | LossKind::Lasso { reg } if !(reg > 0.0 && reg.is_finite()) => {
                Err(Error::config("reg", "regularization must be positive"))
            }
            LossKind::Logistic { reg, classes } => {
                if !(reg > 0.0 && reg.is_finite()) {
                    Err(Error::config("reg", "regularization must be positive"))
                } else if classes < 2 {
                    Err(Error::config("classes", "need at least two classes"))
                } else {
                    Ok(Objective { kind, features })
                }
            }
            _ => Ok(Objective { kind, features }),
        }
    }

    pub fn least_squares(features: usize) -> Self {
        Objective::new(LossKind::LeastSquares, features).expect("valid")
    }

    pub fn ridge(features: usize, reg: f64) -> Result<Self> {
        Objective::new(LossKind::Ridge { reg }, features)
    }

    pub fn lasso(features: usize, reg: f64) -> Result<Self> {
        Objective::new(LossKind::Lasso { reg }, features)
    }

    pub fn logistic(features: usize, classes: usize, reg: f64) -> Result<Self> {
        Objective::new(LossKind::Logistic { reg, classes }, features)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Length of the parameter vector.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            LossKind::Logistic { classes, .. } => classes * self.features,
            _ => self.features,
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, LossKind::Lasso { .. })
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.kind, LossKind::Logistic { .. })
    }

    fn l2(&self) -> f64 {
        match self.kind {
            LossKind::Ridge { reg } | LossKind::Logistic { reg, .. } => reg,
            _ => 0.0,
        }
    }

    fn check(&self, w: &[f64], s: &Sample) -> Result<()> {
        if w.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: w.len(),
            });
        }
        if s.x.len() != self.features {
            return Err(Error::DimensionMismatch {
                expected: self.features,
                got: s.x.len(),
            });
        }
        if let LossKind::Logistic { classes, .. } = self.kind {
            if s.class() >= classes {
                return Err(Error::config("label", format!("class {} out of range", s.y)));
            }
        }
        Ok(())
    }

    fn check_smooth(&self) -> Result<()> {
        if self.is_smooth() {
            Ok(())
        } else {
            Err(Error::Unsupported("the lasso objective has no gradient"))
        }
    }

    /// Softmax probabilities of `w` at `x`.
    fn softmax(&self, w: &[f64], x: &[f64], classes: usize) -> Vec<f64> {
        let d = self.features;
        let mut logits: Vec<f64> = (0..classes)
            .map(|c| w[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in &mut logits {
            *l = (*l - max).exp();
            total += *l;
        }
        for l in &mut logits {
            *l /= total;
        }
        logits
    }

    pub fn loss(&self, w: &[f64], s: &Sample) -> Result<f64> {
        self.check(w, s)?;
        let sq = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
        let residual = || w.iter().zip(&s.x).map(|(a, b)| a * b).sum::<f64>() - s.y;
        Ok(match self.kind {
            LossKind::LeastSquares => 0.5 * residual().powi(2),
            LossKind::Ridge { reg } => 0.5 * residual().powi(2) + 0.5 * reg * sq(w),
            LossKind::Lasso { reg } => {
                residual().powi(2) + reg * w.iter().map(|v| v.abs()).sum::<f64>()
            }
            LossKind::Logistic { reg, classes } => {
                let d = self.features;
                let logits: Vec<f64> = (0..classes)
                    .map(|c| w[c * d..(c + 1) * d].iter().zip(&s.x).map(|(a, b)| a * b).sum())
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                lse - logits[s.class()] + 0.5 * reg * sq(w)
            }
        })
    }

    /// Adds `scale · ∇F(w; s)` to `out`.
    fn accumulate_grad(&self, w: &[f64], s: &Sample, scale: f64, out: &mut [f64]) {
        match self.kind {
            LossKind::LeastSquares | LossKind::Ridge { .. } => {
                let r = w.iter().zip(&s.x).map(|(a, b)| a * b).sum::<f64>() - s.y;
                let reg = self.l2();
                for ((o, &x), &wj) in out.iter_mut().zip(&s.x).zip(w) {
                    *o += scale * (x * r + reg * wj);
                }
            }
            LossKind::Logistic { reg, classes } => {
                let d = self.features;
                let p = self.softmax(w, &s.x, classes);
                let y = s.class();
                for c in 0..classes {
                    let coef = p[c] - if c == y { 1.0 } else { 0.0 };
                    let row = c * d..(c + 1) * d;
                    for ((o, &x), &wj) in out[row.clone()].iter_mut().zip(&s.x).zip(&w[row]) {
                        *o += scale * (coef * x + reg * wj);
                    }
                }
            }
            LossKind::Lasso { .. } => unreachable!("checked by caller"),
        }
    }

    pub fn grad(&self, w: &[f64], s: &Sample) -> Result<ParamVector> {
        self.check_smooth()?;
        self.check(w, s)?;
        let mut g = ParamVector::zeros(self.param_dim());
        self.accumulate_grad(w, s, 1.0, &mut g);
        Ok(g)
    }

    /// In-place SGD step `w ← w − step·∇F(w; s)`.
    pub fn descend(&self, w: &mut [f64], s: &Sample, step: f64) -> Result<()> {
        self.check_smooth()?;
        self.check(w, s)?;
        match self.kind {
            LossKind::LeastSquares | LossKind::Ridge { .. } => {
                let r = w.iter().zip(&s.x).map(|(a, b)| a * b).sum::<f64>() - s.y;
                let reg = self.l2();
                for (wj, &x) in w.iter_mut().zip(&s.x) {
                    *wj -= step * (x * r + reg * *wj);
                }
            }
            LossKind::Logistic { reg, classes } => {
                let d = self.features;
                let p = self.softmax(w, &s.x, classes);
                let y = s.class();
                for c in 0..classes {
                    let coef = p[c] - if c == y { 1.0 } else { 0.0 };
                    for (wj, &x) in w[c * d..(c + 1) * d].iter_mut().zip(&s.x) {
                        *wj -= step * (coef * x + reg * *wj);
                    }
                }
            }
            LossKind::Lasso { .. } => unreachable!(),
        }
        Ok(())
    }

    /// Mean per-sample loss over `data`.
    pub fn empirical_risk(&self, w: &[f64], data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for s in data.iter() {
            total += self.loss(w, s)?;
        }
        Ok(total / data.len() as f64)
    }

    /// Full-batch mean gradient.
    pub fn full_gradient(&self, w: &[f64], data: &Dataset) -> Result<ParamVector> {
        self.weighted_gradient(w, &[(data, 1.0)])
    }

    /// `Σ_k weight_k · ∇F_k(w)` with `F_k` the empirical risk of part `k`.
    pub fn weighted_gradient(&self, w: &[f64], parts: &[(&Dataset, f64)]) -> Result<ParamVector> {
        self.check_smooth()?;
        let mut g = ParamVector::zeros(self.param_dim());
        for (data, weight) in parts {
            if data.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let scale = weight / data.len() as f64;
            for s in data.iter() {
                self.check(w, s)?;
                self.accumulate_grad(w, s, scale, &mut g);
            }
        }
        Ok(g)
    }

    /// Predicted class (classification kinds only).
    pub fn predict_class(&self, w: &[f64], x: &[f64]) -> Result<usize> {
        let LossKind::Logistic { classes, .. } = self.kind else {
            return Err(Error::Unsupported("class prediction on a regression objective"));
        };
        let d = self.features;
        let score = |c: usize| -> f64 { w[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum() };
        let mut best = 0;
        let mut best_score = score(0);
        for c in 1..classes {
            let sc = score(c);
            if sc > best_score {
                best = c;
                best_score = sc;
            }
        }
        Ok(best)
    }

    /// Fraction of samples whose predicted class matches the label.
    pub fn accuracy(&self, w: &[f64], data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut correct = 0usize;
        for s in data.iter() {
            if self.predict_class(w, &s.x)? == s.class() {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// `Σ_k weight_k · X_kᵀX_k / m_k` (feature second-moment matrix).
    fn second_moment(&self, parts: &[(&Dataset, f64)]) -> DMatrix<f64> {
        let d = self.features;
        let mut m = DMatrix::zeros(d, d);
        for (data, weight) in parts {
            let scale = weight / data.len() as f64;
            for s in data.iter() {
                let x = DVector::from_column_slice(&s.x);
                m += scale * &x * x.transpose();
            }
        }
        m
    }

    /// Hessian of the full-batch risk at `w` (smooth kinds).
    pub fn hessian(&self, w: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
        self.check_smooth()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = self.param_dim();
        match self.kind {
            LossKind::LeastSquares | LossKind::Ridge { .. } => {
                Ok(self.second_moment(&[(data, 1.0)]) + DMatrix::identity(n, n) * self.l2())
            }
            LossKind::Logistic { reg, classes } => {
                let d = self.features;
                let mut h = DMatrix::identity(n, n) * reg;
                let scale = 1.0 / data.len() as f64;
                for s in data.iter() {
                    let p = self.softmax(w, &s.x, classes);
                    for a in 0..classes {
                        for b in 0..classes {
                            let coef = scale * (if a == b { p[a] } else { 0.0 } - p[a] * p[b]);
                            if coef == 0.0 {
                                continue;
                            }
                            for i in 0..d {
                                for j in 0..d {
                                    h[(a * d + i, b * d + j)] += coef * s.x[i] * s.x[j];
                                }
                            }
                        }
                    }
                }
                Ok(h)
            }
            LossKind::Lasso { .. } => unreachable!(),
        }
    }

    /// Strong convexity, smoothness and gradient-noise constants of the
    /// empirical risk over `data`.
    ///
    /// For quadratic kinds `mu` and `lambda` are the extreme eigenvalues of
    /// `XᵀX/m + reg·I`. For the logistic kind `mu = reg` (the softmax Hessian
    /// is singular along the all-classes direction) and `lambda` uses the
    /// global bound `diag(p) − ppᵀ ⪯ ½I`, so it holds for every `w`.
    /// `sigma_sq` is the largest squared deviation of a per-sample gradient
    /// from the full gradient, evaluated at the optimum.
    pub fn curvature(&self, data: &Dataset) -> Result<CurvatureBounds> {
        self.check_smooth()?;
        let w_star = self.optimum_oracle(data)?;
        self.curvature_at(&w_star, data, None)
    }

    /// Same constants as [`Objective::curvature`] with the gradient spread
    /// taken at `w` around `reference` (see [`Objective::gradient_spread`]).
    pub fn curvature_at(&self, w: &[f64], data: &Dataset, reference: Option<&ParamVector>) -> Result<CurvatureBounds> {
        self.check_smooth()?;
        let (mu, lambda) = match self.kind {
            LossKind::Logistic { reg, .. } => {
                let (_, top) = extreme_eigenvalues(&self.second_moment(&[(data, 1.0)]));
                (reg, 0.5 * top + reg)
            }
            _ => extreme_eigenvalues(&self.hessian(w, data)?),
        };
        let sigma_sq = self.gradient_spread(w, data, reference)?;
        Ok(CurvatureBounds {
            mu: mu.max(0.0),
            lambda,
            sigma_sq,
        })
    }

    /// `max_s ‖∇F(w; s) − g‖²` over `data`, where `g` is `reference` or, when
    /// absent, the full gradient of `data` at `w`.
    pub fn gradient_spread(
        &self,
        w: &[f64],
        data: &Dataset,
        reference: Option<&ParamVector>,
    ) -> Result<f64> {
        let owned;
        let centre = match reference {
            Some(g) => g,
            None => {
                owned = self.full_gradient(w, data)?;
                &owned
            }
        };
        let mut worst = 0.0f64;
        for s in data.iter() {
            let g = self.grad(w, s)?;
            worst = worst.max(g.dist_sq(centre));
        }
        Ok(worst)
    }

    /// Minimizer of the empirical risk over `data`.
    ///
    /// Least squares and ridge use the normal equations; logistic runs
    /// accelerated full-batch gradient descent until the gradient norm drops
    /// below [`LOGISTIC_TOLERANCE`]. For lasso the minimized cost is the
    /// summed form `Σ (y − xᵀw)² + reg·‖w‖₁`, solved by exact cyclic
    /// coordinate minimization.
    pub fn optimum_oracle(&self, data: &Dataset) -> Result<ParamVector> {
        self.weighted_optimum(&[(data, 1.0)])
    }

    /// Minimizer of `Σ_k weight_k · F_k(w)`; weights are normalized to sum 1.
    pub fn weighted_optimum(&self, parts: &[(&Dataset, f64)]) -> Result<ParamVector> {
        if parts.is_empty() || parts.iter().any(|(d, _)| d.is_empty()) {
            return Err(Error::EmptyDataset);
        }
        for (data, _) in parts {
            if data.dim() != self.features {
                return Err(Error::DimensionMismatch {
                    expected: self.features,
                    got: data.dim(),
                });
            }
        }
        let total: f64 = parts.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) || parts.iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::Precondition("part weights must be nonnegative with positive sum".into()));
        }
        let parts: Vec<(&Dataset, f64)> = parts.iter().map(|(d, w)| (*d, w / total)).collect();
        match self.kind {
            LossKind::LeastSquares | LossKind::Ridge { .. } => Ok(self.quadratic_optimum(&parts)),
            LossKind::Logistic { .. } => self.logistic_optimum(&parts),
            LossKind::Lasso { reg } => {
                if parts.len() != 1 {
                    return Err(Error::Unsupported("weighted lasso optimum"));
                }
                Ok(lasso_coordinate_descent(parts[0].0, reg))
            }
        }
    }

    fn quadratic_optimum(&self, parts: &[(&Dataset, f64)]) -> ParamVector {
        let d = self.features;
        let h = self.second_moment(parts) + DMatrix::identity(d, d) * self.l2();
        let mut b = DVector::zeros(d);
        for (data, weight) in parts {
            let scale = weight / data.len() as f64;
            for s in data.iter() {
                b += DVector::from_column_slice(&s.x) * (scale * s.y);
            }
        }
        let solution = match h.clone().cholesky() {
            Some(chol) => chol.solve(&b),
            // Rank-deficient least squares: minimum-norm solution.
            None => h
                .svd(true, true)
                .solve(&b, 1e-12)
                .expect("SVD with both factors computed"),
        };
        ParamVector::new(solution.iter().copied().collect())
    }

    fn logistic_optimum(&self, parts: &[(&Dataset, f64)]) -> Result<ParamVector> {
        let LossKind::Logistic { reg, .. } = self.kind else {
            unreachable!()
        };
        let (_, top) = extreme_eigenvalues(&self.second_moment(parts));
        let lambda = 0.5 * top + reg;
        let step = 1.0 / lambda;
        let momentum = {
            let root = (reg / lambda).sqrt();
            (1.0 - root) / (1.0 + root)
        };
        let n = self.param_dim();
        let mut w = ParamVector::zeros(n);
        let mut prev = w.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..LOGISTIC_MAX_ITERS {
            let g = self.weighted_gradient(&w, parts)?;
            residual = g.norm();
            if residual <= LOGISTIC_TOLERANCE {
                return Ok(w);
            }
            let mut look = w.clone();
            for i in 0..n {
                look[i] = w[i] + momentum * (w[i] - prev[i]);
            }
            let g_look = self.weighted_gradient(&look, parts)?;
            prev = w;
            look.axpy(-step, &g_look);
            w = look;
            if !w.is_finite() {
                break;
            }
        }
        Err(Error::NonConvergence {
            iterations: LOGISTIC_MAX_ITERS,
            residual,
        })
    }
}

/// Exact cyclic coordinate minimization of `Σ (y − xᵀw)² + reg·‖w‖₁`.
///
/// Each coordinate update solves `min_w a w² − 2 b w + reg |w|` in closed
/// form: `w = soft(b, reg/2) / a`.
fn lasso_coordinate_descent(data: &Dataset, reg: f64) -> ParamVector {
    let d = data.dim();
    let mut w = vec![0.0; d];
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut moved = 0.0f64;
        for j in 0..d {
            let a: f64 = data.iter().map(|s| s.x[j] * s.x[j]).sum();
            let old = w[j];
            let new = if a == 0.0 {
                0.0
            } else {
                let b: f64 = data
                    .iter()
                    .map(|s| {
                        let partial: f64 = (0..d).filter(|&l| l != j).map(|l| s.x[l] * w[l]).sum();
                        s.x[j] * (s.y - partial)
                    })
                    .sum();
                let shrunk = b.abs() - reg / 2.0;
                if shrunk <= 0.0 {
                    0.0
                } else {
                    b.signum() * shrunk / a
                }
            };
            w[j] = new;
            moved = moved.max((new - old).abs());
        }
        if moved == 0.0 {
            break;
        }
    }
    ParamVector::new(w)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
