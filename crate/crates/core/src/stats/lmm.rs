//! Random-intercept linear mixed model fit by REML.
//!
//! Model: `y = Xβ + Zu + ε`, `u ~ N(0, σ²_task I)`, `ε ~ N(0, σ²_resid I)`,
//! where `Z` maps each row to its group. With `λ = σ²_task / σ²_resid` the
//! marginal covariance is `σ²_resid · V(λ)`, `V = I + λ ZZᵀ`, and both `β`
//! and `σ²_resid` have closed forms given `λ`. The restricted likelihood is
//! therefore profiled to a scalar function of `log λ` and maximized by a
//! grid bracket followed by Brent's method. The maximizer is then polished
//! by bisection on the analytic score, whose precision is not limited by
//! rounding in the likelihood value. `λ = 0` is admitted as a boundary
//! solution.
//!
//! `V` is block diagonal with blocks `I + λ11ᵀ`, so every quantity reduces
//! to per-group sums:
//!
//! ```text
//! (I + λ11ᵀ)⁻¹ = I − w·11ᵀ,  w = λ / (1 + λ n_g)
//! log|I + λ11ᵀ| = log(1 + λ n_g)
//! ```
//!
//! With `P = V⁻¹ − V⁻¹X(XᵀV⁻¹X)⁻¹XᵀV⁻¹` the score is
//!
//! ```text
//! ∂ℓ_R/∂λ = ½[(n − p)·‖ZᵀPy‖² / yᵀPy − tr(ZᵀPZ)]
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Search interval for `log λ`.
pub const LOG_LAMBDA_BOUNDS: (f64, f64) = (-30.0, 30.0);
const REL_TOL: f64 = 1e-10;
const MAX_BRENT_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedEffect {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmmFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub df: usize,
    pub p: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    pub cov_beta: Vec<Vec<f64>>,
    pub sigma2_task: f64,
    pub sigma2_resid: f64,
    pub lambda: f64,
    pub reml_loglik: f64,
    pub n_obs: usize,
    pub n_groups: usize,
}

impl LmmFit {
    pub fn effect(&self, name: &str) -> Option<FixedEffect> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(FixedEffect {
            name: self.names[i].clone(),
            estimate: self.beta[i],
            se: self.se[i],
            t: self.t[i],
            p: self.p[i],
            ci95: self.ci95[i],
        })
    }

    pub fn effects(&self) -> Vec<FixedEffect> {
        self.names.iter().filter_map(|n| self.effect(n)).collect()
    }
}

/// Data and sufficient statistics for one model.
#[derive(Debug, Clone)]
pub struct LmmProblem {
    names: Vec<String>,
    y: DVector<f64>,
    x: DMatrix<f64>,
    /// Row indices per group.
    groups: Vec<Vec<usize>>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    /// Per group: column sums of X and sum of y.
    group_x_sums: Vec<DVector<f64>>,
    group_y_sums: Vec<f64>,
}

struct AtLambda {
    beta: DVector<f64>,
    resid: DVector<f64>,
    a_inv: DMatrix<f64>,
    sigma2: f64,
    loglik: f64,
}

impl LmmProblem {
    /// `group_of[i]` is the group label of row `i`; labels need not be
    /// contiguous.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, names: Vec<String>, group_of: &[usize]) -> Result<Self> {
        let n = y.len();
        let p = x.ncols();
        if x.nrows() != n || group_of.len() != n || names.len() != p {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch: {n} responses, X is {}x{}, {} group labels, {} names",
                x.nrows(),
                p,
                group_of.len(),
                names.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in response or design".into()));
        }
        let aliased = aliased_columns(&x);
        if !aliased.is_empty() {
            return Err(Error::RankDeficient(aliased.into_iter().map(|j| names[j].clone()).collect()));
        }
        if n <= p {
            return Err(Error::InvalidData(format!("{n} observations for {p} fixed effects")));
        }

        let mut label_index = std::collections::BTreeMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, &g) in group_of.iter().enumerate() {
            let idx = *label_index.entry(g).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[idx].push(i);
        }
        if groups.len() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 groups for a random intercept, got {}",
                groups.len()
            )));
        }

        let y = DVector::from_vec(y);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let group_x_sums = groups
            .iter()
            .map(|rows| {
                let mut s = DVector::zeros(p);
                for &r in rows {
                    s += x.row(r).transpose();
                }
                s
            })
            .collect();
        let group_y_sums = groups.iter().map(|rows| rows.iter().map(|&r| y[r]).sum()).collect();
        Ok(LmmProblem {
            names,
            y,
            x,
            groups,
            xtx,
            xty,
            group_x_sums,
            group_y_sums,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_params(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    fn solve(&self, lambda: f64) -> Result<AtLambda> {
        let n = self.n_obs();
        let p = self.n_params();
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        let mut log_det_v = 0.0;
        let weights: Vec<f64> = self
            .groups
            .iter()
            .map(|rows| {
                let ng = rows.len() as f64;
                log_det_v += (lambda * ng).ln_1p();
                lambda / (1.0 + lambda * ng)
            })
            .collect();
        for ((s, &t), &w) in self.group_x_sums.iter().zip(&self.group_y_sums).zip(&weights) {
            if w != 0.0 {
                a -= w * s * s.transpose();
                b -= w * t * s;
            }
        }
        let chol = a.clone().cholesky().ok_or_else(|| {
            Error::Numerical(format!("XᵀV⁻¹X is not positive definite at λ = {lambda:e}"))
        })?;
        let beta = chol.solve(&b);
        let log_det_a = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();

        let resid = &self.y - &self.x * &beta;
        let mut quad = resid.norm_squared();
        for (rows, &w) in self.groups.iter().zip(&weights) {
            if w != 0.0 {
                let s: f64 = rows.iter().map(|&r| resid[r]).sum();
                quad -= w * s * s;
            }
        }
        let dof = (n - p) as f64;
        let sigma2 = quad / dof;
        if !(sigma2 > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive residual variance {sigma2:e} at λ = {lambda:e}"
            )));
        }
        let loglik = -0.5 * (dof * (1.0 + (2.0 * std::f64::consts::PI * sigma2).ln()) + log_det_v + log_det_a);
        Ok(AtLambda {
            beta,
            resid,
            a_inv: chol.inverse(),
            sigma2,
            loglik,
        })
    }

    /// Profiled restricted log-likelihood at variance ratio `lambda ≥ 0`.
    pub fn reml_loglik(&self, lambda: f64) -> Result<f64> {
        Ok(self.solve(lambda)?.loglik)
    }

    /// Derivative of the profiled restricted log-likelihood with respect to
    /// `log λ`, at `lambda > 0`.
    pub fn reml_score(&self, lambda: f64) -> Result<f64> {
        let sol = self.solve(lambda)?;
        let dof = (self.n_obs() - self.n_params()) as f64;
        let quad = sol.sigma2 * dof;
        let mut zpy_sq = 0.0;
        let mut trace = 0.0;
        for (rows, s) in self.groups.iter().zip(&self.group_x_sums) {
            let ng = rows.len() as f64;
            let d = 1.0 + lambda * ng;
            let rs: f64 = rows.iter().map(|&r| sol.resid[r]).sum();
            zpy_sq += (rs / d).powi(2);
            trace += ng / d - (s.transpose() * &sol.a_inv * s)[(0, 0)] / (d * d);
        }
        Ok(lambda * 0.5 * (dof * zpy_sq / quad - trace))
    }

    /// Bisection on the score around `theta` (log λ). Returns `theta`
    /// unchanged when no sign change is found nearby.
    fn polish(&self, theta: f64) -> Result<f64> {
        let score = |t: f64| self.reml_score(t.exp());
        let s0 = score(theta)?;
        if s0 == 0.0 {
            return Ok(theta);
        }
        let mut step = 1e-8 * theta.abs().max(1.0);
        let mut other = None;
        while step < 1.0 {
            let t = theta + step.copysign(s0);
            if score(t)?.signum() != s0.signum() {
                other = Some(t);
                break;
            }
            step *= 4.0;
        }
        let Some(other) = other else { return Ok(theta) };
        let (mut lo, mut hi) = if s0 > 0.0 { (theta, other) } else { (other, theta) };
        // score > 0 at lo, < 0 at hi
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let s = score(mid)?;
            if s == 0.0 {
                return Ok(mid);
            }
            if s > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Full fit with the variance ratio held at `lambda`.
    pub fn fit_at(&self, lambda: f64) -> Result<LmmFit> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("variance ratio must be finite and >= 0, got {lambda}")));
        }
        let sol = self.solve(lambda)?;
        let df = self.n_obs() - self.n_params();
        let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        let t_crit = dist.inverse_cdf(0.975);
        let cov = sol.a_inv * sol.sigma2;
        let beta: Vec<f64> = sol.beta.iter().copied().collect();
        let se: Vec<f64> = (0..beta.len()).map(|i| cov[(i, i)].sqrt()).collect();
        let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
        let p = t.iter().map(|t| (2.0 * dist.sf(t.abs())).min(1.0)).collect();
        let ci95 = beta.iter().zip(&se).map(|(b, s)| (b - t_crit * s, b + t_crit * s)).collect();
        Ok(LmmFit {
            names: self.names.clone(),
            beta,
            se,
            t,
            df,
            p,
            ci95,
            cov_beta: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
            sigma2_task: lambda * sol.sigma2,
            sigma2_resid: sol.sigma2,
            lambda,
            reml_loglik: sol.loglik,
            n_obs: self.n_obs(),
            n_groups: self.n_groups(),
        })
    }

    /// REML estimate of the variance ratio.
    pub fn optimize_lambda(&self) -> Result<f64> {
        let (lo, hi) = LOG_LAMBDA_BOUNDS;
        let f = |theta: f64| self.reml_loglik(theta.exp());

        let grid: Vec<f64> = (0..=((hi - lo) as usize)).map(|i| lo + i as f64).collect();
        let values = grid.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        let best = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();

        let boundary = self.reml_loglik(0.0)?;
        if best == 0 {
            // likelihood still rising toward λ → 0
            return Ok(0.0);
        }
        let a = grid[best - 1];
        let b = grid[(best + 1).min(grid.len() - 1)];
        let (theta, value) = brent_max(&f, a, grid[best], b)?;
        if boundary >= value {
            return Ok(0.0);
        }
        let polished = self.polish(theta)?;
        if polished > lo && polished < hi {
            Ok(polished.exp())
        } else {
            Ok(theta.exp())
        }
    }

    pub fn fit(&self) -> Result<LmmFit> {
        let lambda = self.optimize_lambda()?;
        self.fit_at(lambda)
    }
}

/// Columns that lie in the span of earlier columns (modified Gram–Schmidt).
fn aliased_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for q in &basis {
            let proj = q.dot(&v);
            v -= proj * q;
        }
        let rem = v.norm();
        if norm == 0.0 || rem <= 1e-9 * norm {
            aliased.push(j);
        } else {
            basis.push(v / rem);
        }
    }
    aliased
}

/// Brent's method (golden section with parabolic steps) maximizing `f` on
/// `[a, b]`, starting from interior point `x0`.
fn brent_max(f: &dyn Fn(f64) -> Result<f64>, a: f64, x0: f64, b: f64) -> Result<(f64, f64)> {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    const ZEPS: f64 = 1e-12;
    let neg = |t: f64| f(t).map(|v| -v);

    let (mut a, mut b) = (a.min(b), a.max(b));
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let mut fx = neg(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut trace: Vec<(f64, f64)> = Vec::new();

    for _ in 0..MAX_BRENT_ITERS {
        let xm = 0.5 * (a + b);
        let tol1 = REL_TOL * x.abs() + ZEPS;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Ok((x, -fx));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = neg(u)?;
        trace.push((u, -fu));
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    let tail: Vec<String> = trace
        .iter()
        .rev()
        .take(8)
        .map(|(t, l)| format!("logλ={t:.12} ℓ={l:.12}"))
        .collect();
    Err(Error::NonConvergence(format!(
        "{MAX_BRENT_ITERS} iterations; last evaluations: {}",
        tail.join("; ")
    )))
}

/// Convenience wrapper: REML fit of `y ~ X + (1|group)`.
pub fn fit_reml(y: Vec<f64>, x: DMatrix<f64>, names: Vec<String>, group_of: &[usize]) -> Result<LmmFit> {
    LmmProblem::new(y, x, names, group_of)?.fit()
}
