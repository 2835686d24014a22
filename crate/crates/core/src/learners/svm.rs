//! Soft-margin RBF support vector machine trained by sequential minimal
//! optimization with second-order working-set selection.
//!
//! The solver works on the minimization form of the dual,
//! `f(a) = 0.5 a'Qa - sum(a)` with `Q_ij = y_i y_j K(x_i, x_j)`,
//! subject to `0 <= a_i <= C` and `sum(a_i y_i) = 0`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{check_labels, check_width};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    /// Cap on pair updates.
    pub max_iter: usize,
    /// KKT violation tolerance.
    pub tol: f64,
    pub standardize: bool,
    /// Kernel column cache budget in MiB.
    pub cache_mb: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: 0.1,
            max_iter: 10_000,
            tol: 1e-3,
            standardize: true,
            cache_mb: 64,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config("svm.c", "C must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("svm.gamma", "gamma must be positive"));
        }
        Ok(())
    }
}

/// Rows scored per block in batch prediction.
const PREDICT_BLOCK: usize = 512;

/// Kernel terms with a smaller exponent are taken as 0. `exp(-708)` is
/// still a normal float, so no term ever goes subnormal.
const EXP_FLOOR: f64 = -708.0;

/// Squared distance with four independent accumulators so the loop
/// vectorizes.
#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (u, v) in ca.zip(cb) {
        for k in 0..4 {
            let d = u[k] - v[k];
            acc[k] += d * d;
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(u, v)| (u - v) * (u - v)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (u, v) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += u[k] * v[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(u, v)| u * v).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `exp(x)` for each `x` in `[EXP_FLOOR, 0]`, accurate to a few ulp.
/// Lanes are independent and branch-free so the loops vectorize; libm
/// calls would not.
#[inline(always)]
#[allow(clippy::excessive_precision)] // constants as published
fn exp_lanes<const L: usize>(x: [f64; L]) -> [f64; L] {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    // Cephes rational approximation of exp on |r| <= ln(2)/2
    const P: [f64; 3] = [1.261_771_930_748_105_908_78e-4, 3.029_944_077_074_419_613_00e-2, 9.999_999_999_999_999_999_10e-1];
    const Q: [f64; 4] = [
        3.001_985_051_386_644_550_42e-6,
        2.524_483_403_496_841_041_92e-3,
        2.272_655_482_081_550_287_66e-1,
        2.000_000_000_000_000_000_09,
    ];
    let mut out = [0.0; L];
    for i in 0..L {
        let t = x[i] * std::f64::consts::LOG2_E + SHIFT;
        let k = t - SHIFT;
        let ki = (t.to_bits() as i64).wrapping_sub(SHIFT.to_bits() as i64);
        let r = (x[i] - k * LN2_HI) - k * LN2_LO;
        let rr = r * r;
        let p = r * ((P[0] * rr + P[1]) * rr + P[2]);
        let q = ((Q[0] * rr + Q[1]) * rr + Q[2]) * rr + Q[3];
        let e = 1.0 + 2.0 * (p / (q - p));
        out[i] = e * f64::from_bits(((ki + 1023) as u64) << 52);
    }
    out
}

/// `exp(-gamma * d2)` per lane, zero below the floor.
#[inline(always)]
fn kernel_lanes<const L: usize>(d2: [f64; L], gamma: f64) -> [f64; L] {
    let mut e = [0.0; L];
    for i in 0..L {
        let v = -gamma * d2[i];
        e[i] = if v > EXP_FLOOR { v } else { EXP_FLOOR };
    }
    let mut v = exp_lanes(e);
    for i in 0..L {
        if -gamma * d2[i] <= EXP_FLOOR {
            v[i] = 0.0;
        }
    }
    v
}

#[inline]
fn kernel_from_sq_dist(d2: f64, gamma: f64) -> f64 {
    kernel_lanes([d2], gamma)[0]
}

/// Turns a column of dot products with `x` into kernel values in place.
#[inline(always)]
fn kernel_column_generic(dots: &mut [f64], sv_norms: &[f64], x_norm: f64, gamma: f64) {
    const L: usize = 8;
    let d2 = |dot: f64, sv_norm: f64| {
        let v = sv_norm + x_norm - 2.0 * dot;
        if v > 0.0 {
            v
        } else {
            0.0
        }
    };
    let mut chunks = dots.chunks_exact_mut(L);
    let mut norms = sv_norms.chunks_exact(L);
    for (c, n) in (&mut chunks).zip(&mut norms) {
        let mut lane = [0.0; L];
        for i in 0..L {
            lane[i] = d2(c[i], n[i]);
        }
        c.copy_from_slice(&kernel_lanes(lane, gamma));
    }
    for (c, n) in chunks.into_remainder().iter_mut().zip(norms.remainder()) {
        *c = kernel_from_sq_dist(d2(*c, *n), gamma);
    }
}

/// The same code compiled for AVX2. Without FMA contraction the results
/// are bit-identical to the baseline build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_column_avx2(dots: &mut [f64], sv_norms: &[f64], x_norm: f64, gamma: f64) {
    kernel_column_generic(dots, sv_norms, x_norm, gamma)
}

fn kernel_column(dots: &mut [f64], sv_norms: &[f64], x_norm: f64, gamma: f64) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { kernel_column_avx2(dots, sv_norms, x_norm, gamma) };
    }
    kernel_column_generic(dots, sv_norms, x_norm, gamma)
}

#[inline]
fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    kernel_from_sq_dist(sq_dist(a, b), gamma)
}

/// Least-recently-used cache of kernel columns.
struct KernelCache<'a> {
    x: &'a Matrix,
    gamma: f64,
    capacity: usize,
    columns: HashMap<usize, (Vec<f64>, u64)>,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a Matrix, gamma: f64, cache_mb: usize) -> Self {
        let per_column = x.rows().max(1) * std::mem::size_of::<f64>();
        let capacity = ((cache_mb << 20) / per_column).max(2);
        Self {
            x,
            gamma,
            capacity,
            columns: HashMap::new(),
            clock: 0,
        }
    }

    fn column(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let clock = self.clock;
        if !self.columns.contains_key(&i) {
            if self.columns.len() >= self.capacity {
                let oldest = self
                    .columns
                    .iter()
                    .min_by_key(|(_, (_, stamp))| *stamp)
                    .map(|(&k, _)| k)
                    .expect("non-empty cache");
                self.columns.remove(&oldest);
            }
            let xi = self.x.row(i);
            let col = self.x.iter_rows().map(|xt| rbf(xi, xt, self.gamma)).collect();
            self.columns.insert(i, (col, clock));
        }
        let entry = self.columns.get_mut(&i).expect("just inserted");
        entry.1 = clock;
        &entry.0
    }
}

/// Dual solution of one SMO run.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = sum a_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `sum(a) - 0.5 a'Qa` after each pair update, when
    /// requested.
    pub objective_trace: Option<Vec<f64>>,
}

/// Runs SMO on already-transformed features. `y` holds -1/+1 labels.
pub fn solve_smo(x: &Matrix, y: &[f64], params: &SvmParams, trace: bool) -> SmoSolution {
    let n = x.rows();
    let c = params.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut cache = KernelCache::new(x, params.gamma, params.cache_mb);
    let mut objective_trace = trace.then(Vec::new);
    let mut iterations = 0;
    let mut converged = false;

    // K(x, x) = 1 for the RBF kernel
    let qd = 1.0;
    while iterations < params.max_iter {
        // i: maximal violator among indices that may move up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = if y[t] > 0.0 {
                (alpha[t] < c).then_some(-grad[t])
            } else {
                (alpha[t] > 0.0).then_some(grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let ki: Vec<f64> = cache.column(i).to_vec();

        // j: second-order choice among indices that may move down
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            let (movable, grad_diff, g2) = if y[t] > 0.0 {
                (alpha[t] > 0.0, gmax + grad[t], grad[t])
            } else {
                (alpha[t] < c, gmax - grad[t], -grad[t])
            };
            if !movable {
                continue;
            }
            if g2 >= gmax2 {
                gmax2 = g2;
            }
            if grad_diff > 0.0 {
                // y_i y_t Q_it = K_it
                let quad = qd + qd - 2.0 * ki[t];
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < params.tol || j == usize::MAX {
            converged = true;
            break;
        }
        let kj: Vec<f64> = cache.column(j).to_vec();

        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = qd + qd + 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = qd + qd - 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
        iterations += 1;
        if let Some(tr) = objective_trace.as_mut() {
            // f = 0.5 * sum a_t (G_t - 1); the dual value is -f
            let f: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() * 0.5;
            tr.push(-f);
        }
    }

    let rho = compute_rho(&alpha, &grad, y, c);
    SmoSolution {
        alpha,
        rho,
        iterations,
        converged,
        objective_trace,
    }
}

fn compute_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Dual objective `sum(a) - 0.5 a'Qa`, computed directly from the kernel.
pub fn dual_objective(x: &Matrix, y: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let n = x.rows();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] == 0.0 {
                continue;
            }
            quad += alpha[i] * alpha[j] * y[i] * y[j] * rbf(x.row(i), x.row(j), gamma);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub standardizer: Standardizer,
    pub gamma: f64,
    /// Standardized support vectors.
    pub support_vectors: Matrix,
    /// `alpha_i * y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_svm(x: &Matrix, y: &[bool], params: &SvmParams) -> Result<SvmModel> {
    check_labels(x, y)?;
    params.validate()?;
    let standardizer = if params.standardize {
        Standardizer::fit(x)
    } else {
        Standardizer::identity(x.cols())
    };
    let z = standardizer.transform(x);
    let signs: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let sol = solve_smo(&z, &signs, params, false);
    if !sol.converged {
        log::debug!(
            "SMO (C={}, gamma={}) hit max_iter={} before KKT tolerance",
            params.c,
            params.gamma,
            params.max_iter
        );
    }
    let support: Vec<usize> = (0..z.rows()).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(SvmModel {
        standardizer,
        gamma: params.gamma,
        support_vectors: z.select_rows(&support),
        dual_coef: support.iter().map(|&i| sol.alpha[i] * signs[i]).collect(),
        rho: sol.rho,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

impl SvmModel {
    pub fn width(&self) -> usize {
        self.standardizer.width()
    }

    pub fn decision_row(&self, row: &[f64], scratch: &mut [f64]) -> f64 {
        self.standardizer.transform_row_into(row, scratch);
        let mut sum = 0.0;
        for (sv, coef) in self.support_vectors.iter_rows().zip(&self.dual_coef) {
            sum += coef * rbf(sv, scratch, self.gamma);
        }
        sum - self.rho
    }

    /// Decision values for every row. Kernel blocks come from one matrix
    /// product using `|a-b|^2 = |a|^2 + |b|^2 - 2a.b`.
    pub fn decision_function(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_width(self.width(), x)?;
        let (m, p) = (self.support_vectors.rows(), self.width());
        if m == 0 {
            return Ok(vec![-self.rho; x.rows()]);
        }
        let sv = DMatrix::from_row_slice(m, p, self.support_vectors.as_slice());
        let sv_norms: Vec<f64> = self.support_vectors.iter_rows().map(|r| dot(r, r)).collect();
        let mut out = Vec::with_capacity(x.rows());
        let mut block = Vec::with_capacity(PREDICT_BLOCK * p);
        let mut start = 0;
        while start < x.rows() {
            let end = (start + PREDICT_BLOCK).min(x.rows());
            block.clear();
            block.resize((end - start) * p, 0.0);
            for (i, chunk) in (start..end).zip(block.chunks_exact_mut(p)) {
                self.standardizer.transform_row_into(x.row(i), chunk);
            }
            // column j of `zt` is row start + j
            let zt = DMatrix::from_column_slice(p, end - start, &block);
            let mut dots = &sv * &zt;
            for (j, z) in block.chunks_exact(p).enumerate() {
                let z_norm = dot(z, z);
                let col = &mut dots.as_mut_slice()[j * m..(j + 1) * m];
                kernel_column(col, &sv_norms, z_norm, self.gamma);
                out.push(dot(col, &self.dual_coef) - self.rho);
            }
            start = end;
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<bool>> {
        Ok(self.decision_function(x)?.into_iter().map(|d| d > 0.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_is_separable_with_rbf() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let y = [true, true, false, false];
        let params = SvmParams {
            c: 1000.0,
            gamma: 10.0,
            standardize: false,
            ..Default::default()
        };
        let m = fit_svm(&x, &y, &params).unwrap();
        assert!(m.converged);
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        assert!(matches!(fit_svm(&x, &[false, false], &SvmParams::default()), Err(Error::SingleClass)));
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let y: Vec<bool> = (0..40).map(|i| (i * 7) % 3 == 0).collect();
        let params = SvmParams {
            c: 100.0,
            gamma: 1.0,
            max_iter: 3,
            ..Default::default()
        };
        let m = fit_svm(&Matrix::from_rows(&rows), &y, &params).unwrap();
        assert_eq!(m.iterations, 3);
        assert!(!m.converged);
    }

    #[test]
    fn batched_decision_matches_rowwise() {
        let rows: Vec<Vec<f64>> = (0..1100)
            .map(|i| (0..7).map(|j| ((i * 31 + j * 17) as f64 * 0.013).sin() * (j + 1) as f64).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<bool> = rows.iter().map(|r| r[0] + 0.5 * r[3] > 0.1).collect();
        let params = SvmParams {
            c: 10.0,
            gamma: 0.5,
            ..Default::default()
        };
        let m = fit_svm(&x, &y, &params).unwrap();
        let batch = m.decision_function(&x).unwrap();
        let mut scratch = vec![0.0; 7];
        for (i, b) in batch.iter().enumerate() {
            let d = m.decision_row(x.row(i), &mut scratch);
            assert!((d - b).abs() < 1e-9, "row {i}: {d} vs {b}");
        }
    }

    #[test]
    fn kernel_exp_matches_libm() {
        let mut worst: f64 = 0.0;
        for i in 0..=200_000 {
            let x = EXP_FLOOR * i as f64 / 200_000.0;
            let rel = (exp_lanes([x])[0] - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
        }
        assert!(worst < 1e-15, "worst relative error {worst}");
        assert_eq!(kernel_from_sq_dist(0.0, 3.0), 1.0);
        assert_eq!(kernel_from_sq_dist(800.0, 1.0), 0.0);
    }

    #[test]
    fn vector_paths_agree_bitwise() {
        let norms: Vec<f64> = (0..203).map(|i| 20.0 + (i as f64 * 0.7).sin() * 5.0).collect();
        let dots: Vec<f64> = (0..203).map(|i| (i as f64 * 0.37).cos() * 12.0).collect();
        for gamma in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let mut a = dots.clone();
            let mut b = dots.clone();
            kernel_column(&mut a, &norms, 21.5, gamma);
            kernel_column_generic(&mut b, &norms, 21.5, gamma);
            assert_eq!(a, b);
            for (k, (&d, &n)) in a.iter().zip(dots.iter().zip(&norms)) {
                let direct = kernel_from_sq_dist((n + 21.5 - 2.0 * d).max(0.0), gamma);
                assert_eq!(*k, direct);
            }
        }
    }
}
