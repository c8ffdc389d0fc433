//! Dense Hermitian helpers shared by the state and order-parameter code.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Eigendecomposition with eigenvalues ascending and eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct HermEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn is_real(m: &CMat) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

pub fn to_real(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

/// Real symmetric eigendecomposition sorted ascending.
pub fn sym_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Hermitian eigendecomposition; takes the real path when every entry is real.
pub fn herm_eigen(m: &CMat) -> HermEigen {
    let n = m.nrows();
    if is_real(m) {
        let (values, v) = sym_eigen(to_real(m));
        return HermEigen {
            values,
            vectors: to_complex(&v),
        };
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    HermEigen { values, vectors }
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn hermiticity_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).norm()
}

/// V diag(f(λ)) V†.
pub fn spectral_map(e: &HermEigen, f: impl Fn(f64) -> f64) -> CMat {
    let n = e.values.len();
    let mut scaled = e.vectors.clone();
    for (j, &v) in e.values.iter().enumerate() {
        let s = f(v);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    &scaled * e.vectors.adjoint()
}

/// tr(A† B).
pub fn frob_inner(a: &CMat, b: &CMat) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn trace(m: &CMat) -> C64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn pauli(c: char) -> CMat {
    let z = ZERO;
    let o = ONE;
    let i = C64::new(0.0, 1.0);
    match c {
        'I' => CMat::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => CMat::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => CMat::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => panic!("unknown Pauli label {c}"),
    }
}

/// Tensor product of single-site Paulis, leftmost label on the most significant site.
pub fn pauli_string(label: &str) -> CMat {
    label
        .chars()
        .fold(CMat::identity(1, 1), |acc, c| kron(&acc, &pauli(c)))
}

pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> CMat {
    CMat::from_row_slice(rows, cols, &data.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = real_matrix(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let e = herm_eigen(&m);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let back = spectral_map(&e, |x| x);
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn complex_path_matches_pauli_y() {
        let e = herm_eigen(&pauli('Y'));
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pauli_string_ordering() {
        let zi = pauli_string("ZI");
        assert_eq!(zi[(2, 2)], C64::new(-1.0, 0.0));
        assert_eq!(zi[(1, 1)], C64::new(1.0, 0.0));
    }
}
