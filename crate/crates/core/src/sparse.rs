// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Row-compressed operators for the inner loops of the integrators.
//!
//! Ladder and Pauli operators embedded in the full space have at most a few
//! nonzeros per row, so products with a dense density matrix cost nnz·N
//! instead of N³. Dense `ComplexMatrix` stays the public currency.

use nalgebra::DMatrix;

use crate::operators::{ComplexMatrix, C64};

#[derive(Clone, Debug)]
pub struct SparseOp {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOp {
    /// Drops entries with modulus at or below `drop_tol`.
    pub fn from_dense(m: &ComplexMatrix, drop_tol: f64) -> Self {
        assert!(m.is_square(), "sparse operators must be square");
        let n = m.rows();
        let d = m.as_dmatrix();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..n {
            for c in 0..n {
                let v = d[(r, c)];
                if v.norm() > drop_tol {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|r| self.cols[self.row_ptr[r]..self.row_ptr[r + 1]].iter().all(|&c| c == r))
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k])] = self.vals[k];
            }
        }
        ComplexMatrix::from_dmatrix(m)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_dense(&self.to_dense().dagger(), 0.0)
    }

    /// out = S·x
    pub fn left_mul(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = self.n;
        let ncols = x.ncols();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for j in 0..ncols {
            let xc = &xs[j * n..(j + 1) * n];
            let oc = &mut os[j * n..(j + 1) * n];
            for r in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.vals[k] * xc[self.cols[k]];
                }
                oc[r] = acc;
            }
        }
    }

    /// out = x·S†
    pub fn right_mul_adj(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = self.n;
        let nrows = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for j in 0..n {
            let oc = &mut os[j * nrows..(j + 1) * nrows];
            oc.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for k in self.row_ptr[j]..self.row_ptr[j + 1] {
                let w = self.vals[k].conj();
                let c = self.cols[k];
                let xc = &xs[c * nrows..(c + 1) * nrows];
                for (o, v) in oc.iter_mut().zip(xc) {
                    *o += w * v;
                }
            }
        }
    }

    /// tr(S·ρ)
    pub fn expectation(&self, rho: &DMatrix<C64>) -> C64 {
        let n = self.n;
        let rs = rho.as_slice();
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                // ρ[c, r] lives at column r, row c
                acc += self.vals[k] * rs[r * n + self.cols[k]];
            }
        }
        acc
    }
}

/// Operators sharing one sparsity pattern whose weighted sum is rebuilt
/// every step without reallocating.
#[derive(Clone, Debug)]
pub struct LinearCombo {
    op: SparseOp,
    parts: Vec<Vec<C64>>,
}

impl LinearCombo {
    pub fn new(parts: &[&ComplexMatrix]) -> Self {
        assert!(!parts.is_empty(), "a combination needs at least one operator");
        let n = parts[0].rows();
        let mask = DMatrix::from_fn(n, n, |r, c| {
            let any = parts.iter().any(|m| m.as_dmatrix()[(r, c)] != C64::new(0.0, 0.0));
            C64::new(if any { 1.0 } else { 0.0 }, 0.0)
        });
        let op = SparseOp::from_dense(&ComplexMatrix::from_dmatrix(mask), 0.0);
        let parts = parts
            .iter()
            .map(|m| {
                let d = m.as_dmatrix();
                let mut v = Vec::with_capacity(op.nnz());
                for r in 0..n {
                    for k in op.row_ptr[r]..op.row_ptr[r + 1] {
                        v.push(d[(r, op.cols[k])]);
                    }
                }
                v
            })
            .collect();
        Self { op, parts }
    }

    /// Sets the operator to Σ_k w_k·part_k and returns it.
    pub fn assemble(&mut self, weights: &[C64]) -> &SparseOp {
        assert_eq!(weights.len(), self.parts.len());
        for (i, v) in self.op.vals.iter_mut().enumerate() {
            *v = weights.iter().zip(&self.parts).map(|(w, p)| w * p[i]).sum();
        }
        &self.op
    }
}

/// out = a·b for square matrices of equal size.
pub fn gemm(a: &DMatrix<C64>, b: &DMatrix<C64>, out: &mut DMatrix<C64>) {
    let n = a.nrows();
    assert!(a.is_square() && b.shape() == (n, n) && out.shape() == (n, n));
    let one = [1.0, 0.0];
    let zero = [0.0, 0.0];
    let ld = n as isize;
    // SAFETY: Complex<f64> is repr(C) with layout [re, im]; all three
    // buffers are contiguous column-major n×n, and `out` does not alias the
    // inputs because it is borrowed mutably.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            n,
            n,
            n,
            one,
            a.as_ptr() as *const [f64; 2],
            1,
            ld,
            b.as_ptr() as *const [f64; 2],
            1,
            ld,
            zero,
            out.as_mut_ptr() as *mut [f64; 2],
            1,
            ld,
        );
    }
}

/// x ← (I ⊗ V)·x where V acts on the last `m` indices.
pub fn apply_inner_left(x: &mut DMatrix<C64>, v: &DMatrix<C64>, scratch: &mut Vec<C64>) {
    let n = x.nrows();
    let m = v.nrows();
    debug_assert_eq!(n % m, 0);
    let blocks = n / m;
    scratch.resize(m, C64::new(0.0, 0.0));
    let ncols = x.ncols();
    let xs = x.as_mut_slice();
    for j in 0..ncols {
        for b in 0..blocks {
            let base = j * n + b * m;
            for t in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for tp in 0..m {
                    acc += v[(t, tp)] * xs[base + tp];
                }
                scratch[t] = acc;
            }
            xs[base..base + m].copy_from_slice(&scratch[..m]);
        }
    }
}

/// x ← (I ⊗ V)·x·(I ⊗ V)† where V acts on the last `m` indices.
pub fn apply_inner_unitary(x: &mut DMatrix<C64>, v: &DMatrix<C64>, scratch: &mut Vec<C64>) {
    let n = x.nrows();
    let m = v.nrows();
    debug_assert_eq!(n % m, 0);
    let blocks = n / m;
    apply_inner_left(x, v, scratch);
    // right: column groups (o, ·) mix with conj(V)
    let mut col_tmp = vec![C64::new(0.0, 0.0); n * m];
    let xs = x.as_mut_slice();
    for b in 0..blocks {
        col_tmp.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for t in 0..m {
            let dst = &mut col_tmp[t * n..(t + 1) * n];
            for tp in 0..m {
                let w = v[(t, tp)].conj();
                let src = &xs[(b * m + tp) * n..(b * m + tp + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        xs[b * m * n..(b + 1) * m * n].copy_from_slice(&col_tmp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{embed, fock_annihilation, HilbertSpec, Slot};

    fn random_matrix(n: usize, seed: u64) -> DMatrix<C64> {
        let mut s = seed;
        DMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            C64::new(a, b)
        })
    }

    #[test]
    fn sparse_products_match_dense() {
        let sp = HilbertSpec::new(3, 4).unwrap();
        let a = embed(&fock_annihilation(4).unwrap(), Slot::Tlr, &sp).unwrap();
        let s = SparseOp::from_dense(&a, 0.0);
        assert_eq!(s.nnz(), 18);
        let x = random_matrix(sp.dim(), 7);
        let mut out = DMatrix::zeros(sp.dim(), sp.dim());
        s.left_mul(&x, &mut out);
        assert!((&out - a.as_dmatrix() * &x).norm() < 1e-13);
        s.right_mul_adj(&x, &mut out);
        assert!((&out - &x * a.as_dmatrix().adjoint()).norm() < 1e-13);
        let tr = (a.as_dmatrix() * &x).trace();
        assert!((s.expectation(&x) - tr).norm() < 1e-13);
    }

    #[test]
    fn gemm_matches_nalgebra_product() {
        for n in [1, 5, 30] {
            let a = random_matrix(n, 1);
            let b = random_matrix(n, 2);
            let mut out = DMatrix::zeros(n, n);
            gemm(&a, &b, &mut out);
            assert!((&out - &a * &b).norm() < 1e-12);
        }
    }

    #[test]
    fn linear_combo_matches_dense_sum() {
        let a = fock_annihilation(5).unwrap();
        let ad = a.dagger();
        let num = &ad * &a;
        let mut lc = LinearCombo::new(&[&a, &ad, &num]);
        let w = [C64::new(0.5, 0.1), C64::new(-2.0, 0.0), C64::new(0.0, 3.0)];
        let want = &(&a.scale(w[0]) + &ad.scale(w[1])) + &num.scale(w[2]);
        let got = lc.assemble(&w).to_dense();
        assert!((got - want).frobenius_norm() < 1e-14);
    }

    #[test]
    fn inner_unitary_matches_kron() {
        let n_outer = 3;
        let m = 4;
        let h = random_matrix(m, 3);
        let h = ComplexMatrix::from_dmatrix(&h + h.adjoint());
        let v = h.unitary_exp(0.3);
        let full = ComplexMatrix::identity(n_outer).kron(&v);
        let x0 = random_matrix(n_outer * m, 11);
        let want = full.as_dmatrix() * &x0 * full.as_dmatrix().adjoint();
        let mut x = x0.clone();
        let mut scratch = Vec::new();
        apply_inner_unitary(&mut x, v.as_dmatrix(), &mut scratch);
        assert!((&x - want).norm() < 1e-12);
    }
}
