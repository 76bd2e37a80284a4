//! k-nearest-neighbour conditional mean with Laplace-style smoothing.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KnnFit {
    k: usize,
    x: DMatrix<f64>,
    y: Vec<f64>,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl KnnFit {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("knn needs k >= 1".into()));
        }
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(Error::DimensionMismatch("knn training rows".into()));
        }
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            mean.push(m);
            sd.push(if s > 0.0 { s } else { 1.0 });
        }
        let mut z = x.clone();
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                z[(i, j)] = (x[(i, j)] - mean[j]) / sd[j];
            }
        }
        Ok(KnnFit {
            k: k.min(x.nrows()),
            x: z,
            y: y.to_vec(),
            mean,
            sd,
        })
    }

    /// `(Σ y over the k nearest + 0.5) / (k + 1)`, always strictly inside (0, 1).
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x_new.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "knn trained on {} columns, got {}",
                self.x.ncols(),
                x_new.ncols()
            )));
        }
        let p = self.x.ncols();
        let n_train = self.x.nrows();
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n_train);
        let mut out = Vec::with_capacity(x_new.nrows());
        for i in 0..x_new.nrows() {
            let q: Vec<f64> = (0..p).map(|j| (x_new[(i, j)] - self.mean[j]) / self.sd[j]).collect();
            dist.clear();
            for t in 0..n_train {
                let d: f64 = (0..p)
                    .map(|j| {
                        let diff = self.x[(t, j)] - q[j];
                        diff * diff
                    })
                    .sum();
                dist.push((d, t));
            }
            // ties resolved by training index for determinism
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if self.k < n_train {
                dist.select_nth_unstable_by(self.k - 1, cmp);
            }
            let total: f64 = dist[..self.k].iter().map(|&(_, t)| self.y[t]).sum();
            out.push((total + 0.5) / (self.k as f64 + 1.0));
        }
        Ok(out)
    }
}
