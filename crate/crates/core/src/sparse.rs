//! Compressed sparse row storage for real symmetric operators.

use nalgebra::DMatrix;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub dim: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from unordered triplets; duplicates are summed and explicit zeros kept out.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&lr), Some(&lc)) = (rows.last(), indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            indices.push(c);
            values.push(v);
        }
        let mut keep_r = Vec::with_capacity(rows.len());
        let mut keep_c = Vec::with_capacity(rows.len());
        let mut keep_v = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(indices).zip(values) {
            if v != 0.0 {
                keep_r.push(r);
                keep_c.push(c);
                keep_v.push(v);
            }
        }
        for &r in &keep_r {
            indptr[r + 1] += 1;
        }
        for i in 0..dim {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            dim,
            indptr,
            indices: keep_c,
            values: keep_v,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Csr {
            dim,
            indptr: vec![0; dim + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x, sequential so that results do not depend on the thread pool.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y);
        y
    }

    /// Parallel over rows; each row sum is computed in a fixed order.
    pub fn par_matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .into_par_iter()
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        Csr::from_triplets(self.dim, trip)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                worst = worst.max((v - t.get(i, j)).abs());
            }
            for (j, v) in t.row(i) {
                worst = worst.max((v - self.get(i, j)).abs());
            }
        }
        worst
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }
}

/// Several operators sharing one union sparsity pattern, so that linear
/// combinations are a single pass over aligned value arrays.
#[derive(Debug, Clone)]
pub struct UnionPattern {
    pub pattern: Csr,
    pub parts: Vec<Vec<f64>>,
}

impl UnionPattern {
    pub fn new(ops: &[&Csr]) -> Self {
        let dim = ops[0].dim;
        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::new();
        for i in 0..dim {
            let mut cols: Vec<usize> = ops.iter().flat_map(|op| op.row(i).map(|(j, _)| j)).collect();
            cols.sort_unstable();
            cols.dedup();
            indices.extend(cols);
            indptr[i + 1] = indices.len();
        }
        let parts = ops
            .iter()
            .map(|op| {
                let mut vals = vec![0.0; indices.len()];
                for i in 0..dim {
                    let r = indptr[i]..indptr[i + 1];
                    for (j, v) in op.row(i) {
                        let k = indices[r.clone()].binary_search(&j).unwrap();
                        vals[r.start + k] = v;
                    }
                }
                vals
            })
            .collect();
        let pattern = Csr {
            dim,
            indptr,
            values: vec![0.0; indices.len()],
            indices,
        };
        UnionPattern { pattern, parts }
    }

    pub fn combine(&self, coeffs: &[f64]) -> Csr {
        let mut out = self.pattern.clone();
        for (k, v) in out.values.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, part) in coeffs.iter().zip(&self.parts) {
                acc += c * part[k];
            }
            *v = acc;
        }
        out
    }
}
