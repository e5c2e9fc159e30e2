//! Small helpers for Hermitian matrices.

use nalgebra::{Complex, SymmetricEigen};

use crate::{CMatrix, CVector};

/// Eigenpairs of a Hermitian matrix, eigenvalues in descending order.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Column `k` belongs to `values[k]`.
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(m: &CMatrix) -> HermitianEigen {
    let sym = hermitian_part(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    HermitianEigen { values, vectors }
}

/// `(M + M^H) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex::new(0.5, 0.0)
}

/// `x x^H`.
pub fn outer(x: &CVector) -> CMatrix {
    x * x.adjoint()
}

/// `Re Tr{A B}` for Hermitian `A`, `B`.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| (x * y).re).sum()
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, c| acc.max(c.norm()))
}

/// Largest deviation of `m` from being Hermitian.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Rotates `v` so its first non-negligible entry is real and positive.
pub fn canonical_phase(v: &CVector) -> CVector {
    let pivot = v.iter().copied().find(|c| c.norm() > 1e-12 * v.norm().max(f64::MIN_POSITIVE));
    match pivot {
        Some(p) => v * Complex::new(p.norm(), 0.0) / p,
        None => v.clone(),
    }
}
