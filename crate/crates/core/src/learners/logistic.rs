//! L2-regularized logistic regression.
//!
//! Minimizes `0.5 * |w|^2 + C * sum_i log(1 + exp(-y_i (w . x_i + b)))` over
//! standardized features with an unpenalized intercept `b`, using damped
//! Newton steps until the gradient's max-norm drops to `tol * min(1, C)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{check_labels, check_width};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for LrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 100,
            tol: 1e-6,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// log(1 + exp(z)) without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Objective over a parameter vector `[w_0 .. w_{p-1}, b]`.
pub struct LogisticObjective<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    c: f64,
}

impl<'a> LogisticObjective<'a> {
    /// `y` holds -1/+1 labels; `x` is already standardized.
    pub fn new(x: &'a Matrix, y: &'a [f64], c: f64) -> Self {
        Self { x, y, c }
    }

    pub fn dim(&self) -> usize {
        self.x.cols() + 1
    }

    fn margin(&self, theta: &[f64], i: usize) -> f64 {
        let p = self.x.cols();
        let row = self.x.row(i);
        row.iter().zip(&theta[..p]).map(|(a, b)| a * b).sum::<f64>() + theta[p]
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let p = self.x.cols();
        let penalty: f64 = 0.5 * theta[..p].iter().map(|w| w * w).sum::<f64>();
        let loss: f64 = (0..self.x.rows())
            .map(|i| softplus(-self.y[i] * self.margin(theta, i)))
            .sum();
        penalty + self.c * loss
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.x.cols();
        let mut g: Vec<f64> = theta[..p].to_vec();
        g.push(0.0);
        for i in 0..self.x.rows() {
            let y = self.y[i];
            // d/dm log(1 + exp(-y m)) = -y * sigmoid(-y m)
            let coef = -self.c * y * sigmoid(-y * self.margin(theta, i));
            for (gj, xj) in g[..p].iter_mut().zip(self.x.row(i)) {
                *gj += coef * xj;
            }
            g[p] += coef;
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.x.cols();
        let d = p + 1;
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut ext = vec![0.0; d];
        ext[p] = 1.0;
        for i in 0..self.x.rows() {
            let s = sigmoid(self.margin(theta, i));
            let wgt = self.c * s * (1.0 - s);
            if wgt == 0.0 {
                continue;
            }
            ext[..p].copy_from_slice(self.x.row(i));
            for a in 0..d {
                let wa = wgt * ext[a];
                if wa == 0.0 {
                    continue;
                }
                for b in a..d {
                    h[(a, b)] += wa * ext[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 0..p {
            h[(j, j)] += 1.0;
        }
        h
    }

    /// Damped Newton iteration from `start`. Returns the final parameters,
    /// the iteration count and whether the gradient tolerance was met.
    pub fn minimize(&self, start: &[f64], max_iter: usize, tol: f64) -> (Vec<f64>, usize, bool) {
        let d = self.dim();
        let mut theta = start.to_vec();
        let mut f = self.value(&theta);
        for iter in 0..max_iter {
            let g = self.gradient(&theta);
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax <= tol {
                return (theta, iter, true);
            }
            let mut h = self.hessian(&theta);
            let rhs = DVector::from_iterator(d, g.iter().map(|v| -v));
            let step = loop {
                if let Some(chol) = h.clone().cholesky() {
                    break chol.solve(&rhs);
                }
                // only the intercept row can be singular; nudge the diagonal
                for j in 0..d {
                    h[(j, j)] += 1e-10 * (1.0 + h[(j, j)].abs());
                }
            };
            let slope: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
                let fc = self.value(&cand);
                if fc <= f + 1e-4 * t * slope {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // no decrease representable in floating point
                let g = self.gradient(&theta);
                let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                return (theta, iter + 1, gmax <= tol);
            }
        }
        let g = self.gradient(&theta);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (theta, max_iter, gmax <= tol)
    }
}

pub fn fit_lr(x: &Matrix, y: &[bool], params: &LrParams) -> Result<LogisticModel> {
    check_labels(x, y)?;
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::config("lr.c", "C must be positive"));
    }
    let standardizer = if params.standardize {
        Standardizer::fit(x)
    } else {
        Standardizer::identity(x.cols())
    };
    let z = standardizer.transform(x);
    let signs: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let objective = LogisticObjective::new(&z, &signs, params.c);
    // the loss term scales with C; without this a tiny C would satisfy the
    // test at the starting point and leave the intercept unfitted
    let tol = params.tol * params.c.min(1.0);
    let (theta, iterations, converged) = objective.minimize(&vec![0.0; objective.dim()], params.max_iter, tol);
    if !converged {
        log::debug!("logistic regression (C={}) stopped after {iterations} iterations without meeting tol", params.c);
    }
    let p = x.cols();
    Ok(LogisticModel {
        standardizer,
        weights: theta[..p].to_vec(),
        intercept: theta[p],
        iterations,
        converged,
    })
}

impl LogisticModel {
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_row(&self, row: &[f64], scratch: &mut [f64]) -> f64 {
        self.standardizer.transform_row_into(row, scratch);
        scratch.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.intercept
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<bool>> {
        check_width(self.width(), x)?;
        let mut scratch = vec![0.0; self.width()];
        // probability > 0.5 is the same as a positive margin
        Ok(x.iter_rows().map(|r| self.decision_row(r, &mut scratch) > 0.0).collect())
    }
}
