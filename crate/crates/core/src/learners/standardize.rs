use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Per-column z-scoring captured at fit time. Constant columns keep a scale
/// of 1, so they map to 0 instead of NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut means = vec![0.0; p];
        for row in x.iter_rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let denom = n.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= denom);
        let mut scales = vec![0.0; p];
        for row in x.iter_rows() {
            for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
                let d = v - m;
                *s += d * d;
            }
        }
        for s in &mut scales {
            let sd = (*s / denom).sqrt();
            *s = if sd > 1e-12 && sd.is_finite() { sd } else { 1.0 };
        }
        Self { means, scales }
    }

    pub fn identity(width: usize) -> Self {
        Self {
            means: vec![0.0; width],
            scales: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn transform_row_into(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.means).zip(&self.scales) {
            *o = (v - m) / s;
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.transform_row_into(x.row(i), out.row_mut(i));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_maps_to_zero() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 4.0], vec![1.0, 6.0]]);
        let s = Standardizer::fit(&x);
        assert_eq!(s.scales[0], 1.0);
        let z = s.transform(&x);
        assert!(z.as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(z.column(0), vec![0.0, 0.0, 0.0]);
        let mean: f64 = z.column(1).iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
    }
}
