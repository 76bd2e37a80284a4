//! Design-matrix expansions used by the parametric learners.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// Intercept and main terms.
    Main,
    /// Intercept, main terms and every pairwise product of main terms.
    MainInteractions,
    /// Intercept and powers `x_j^k` for `k = 1..=degree`.
    Polynomial(u8),
}

impl Basis {
    /// Expands `x` (one row per subject) into a design with a leading column of ones.
    pub fn expand(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let p = x.ncols();
        let width = self.width(p);
        let mut out = DMatrix::zeros(n, width);
        for i in 0..n {
            out[(i, 0)] = 1.0;
            let mut c = 1;
            for j in 0..p {
                out[(i, c)] = x[(i, j)];
                c += 1;
            }
            match *self {
                Basis::Main => {}
                Basis::MainInteractions => {
                    for j in 0..p {
                        for k in (j + 1)..p {
                            out[(i, c)] = x[(i, j)] * x[(i, k)];
                            c += 1;
                        }
                    }
                }
                Basis::Polynomial(degree) => {
                    for d in 2..=degree as i32 {
                        for j in 0..p {
                            out[(i, c)] = x[(i, j)].powi(d);
                            c += 1;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn width(&self, p: usize) -> usize {
        match *self {
            Basis::Main => 1 + p,
            Basis::MainInteractions => 1 + p + p * (p.saturating_sub(1)) / 2,
            Basis::Polynomial(d) => 1 + p * d.max(1) as usize,
        }
    }
}

/// Centers and scales every non-intercept column; drops constant and duplicated columns.
#[derive(Debug, Clone)]
pub struct Standardizer {
    keep: Vec<usize>,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(design: &DMatrix<f64>) -> Self {
        let n = design.nrows() as f64;
        let mut keep: Vec<usize> = Vec::new();
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        let mut kept_cols: Vec<Vec<f64>> = Vec::new();
        for j in 1..design.ncols() {
            let col = design.column(j);
            let m = col.sum() / n;
            let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if !(s > 1e-12 * (1.0 + m.abs())) {
                continue;
            }
            let z: Vec<f64> = col.iter().map(|v| (v - m) / s).collect();
            let duplicate = kept_cols
                .iter()
                .any(|other| other.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-10));
            if duplicate {
                continue;
            }
            kept_cols.push(z);
            keep.push(j);
            mean.push(m);
            sd.push(s);
        }
        Standardizer { keep, mean, sd }
    }

    pub fn transform(&self, design: &DMatrix<f64>) -> DMatrix<f64> {
        let n = design.nrows();
        let mut out = DMatrix::zeros(n, 1 + self.keep.len());
        for i in 0..n {
            out[(i, 0)] = 1.0;
        }
        for (c, &j) in self.keep.iter().enumerate() {
            for i in 0..n {
                out[(i, c + 1)] = (design[(i, j)] - self.mean[c]) / self.sd[c];
            }
        }
        out
    }
}
