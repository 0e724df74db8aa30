use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Principal component projection `y = P^T (x - mean)` with orthonormal
/// columns in `P`, ordered by decreasing variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Row-major `[input_dim, dim]`.
    pub components: Vec<f64>,
    input_dim: usize,
    dim: usize,
}

impl Pca {
    pub fn fit(data: &[Vec<f64>], dim: usize) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(Error::arg("PCA needs at least two points"));
        }
        let d = data[0].len();
        if data.iter().any(|x| x.len() != d) {
            return Err(Error::dim("PCA: points have different dimensions"));
        }
        if dim == 0 || dim > d {
            return Err(Error::arg(format!("PCA output dimension must be in 1..={d}, got {dim}")));
        }
        let mut mean = vec![0.0; d];
        for x in data {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centred = vec![0.0; d];
        for x in data {
            centred.iter_mut().zip(x.iter().zip(&mean)).for_each(|(c, (v, m))| *c = v - m);
            for i in 0..d {
                let ci = centred[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..d {
                    cov[(i, j)] += ci * centred[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = vec![0.0; d * dim];
        for (c, &src) in order.iter().take(dim).enumerate() {
            let col = eig.eigenvectors.column(src);
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
            let s = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d {
                components[i * dim + c] = s * col[i];
            }
        }
        Ok(Self {
            mean,
            components,
            input_dim: d,
            dim,
        })
    }

    pub fn from_parts(mean: Vec<f64>, components: Vec<f64>, dim: usize) -> Result<Self> {
        let input_dim = mean.len();
        if components.len() != input_dim * dim {
            return Err(Error::dim(format!(
                "PCA components have {} values, expected {input_dim} x {dim}",
                components.len()
            )));
        }
        Ok(Self {
            mean,
            components,
            input_dim,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dim(format!("PCA expects {} values, got {}", self.input_dim, x.len())));
        }
        let mut y = vec![0.0; self.dim];
        for (i, (&v, &m)) in x.iter().zip(&self.mean).enumerate() {
            let c = v - m;
            let row = &self.components[i * self.dim..(i + 1) * self.dim];
            y.iter_mut().zip(row).for_each(|(o, &p)| *o += c * p);
        }
        Ok(y)
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        (0..self.input_dim)
            .map(|i| {
                let row = &self.components[i * self.dim..(i + 1) * self.dim];
                self.mean[i] + row.iter().zip(y).map(|(p, v)| p * v).sum::<f64>()
            })
            .collect()
    }
}
