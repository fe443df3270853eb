// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense operator algebra on truncated tensor-product spaces.
//!
//! Factor order is always beam ⊗ qubit ⊗ resonator. The resonator index
//! varies fastest in the flattened basis.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

/// Dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix({}x{})", self.rows(), self.cols())
    }
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(rows: usize, cols: usize, entries: &[C64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("{rows}x{cols} matrix")));
        }
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} entries", rows * cols),
                found: format!("{} entries", entries.len()),
            });
        }
        Ok(Self(DMatrix::from_row_slice(rows, cols, entries)))
    }

    pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        let c: Vec<C64> = entries.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::new(rows, cols, &c)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[C64]) -> Self {
        let mut m = DMatrix::zeros(d.len(), d.len());
        for (k, &v) in d.iter().enumerate() {
            m[(k, k)] = v;
        }
        Self(m)
    }

    pub fn from_dmatrix(m: DMatrix<C64>) -> Self {
        Self(m)
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn as_dmatrix_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.0[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.0[(r, c)] = v;
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                out.push(self.0[(r, c)]);
            }
        }
        out
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        Self(&self.0 * C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self * other - other * self
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    /// Relative Frobenius norm of the anti-Hermitian part.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.frobenius_norm();
        if n == 0.0 {
            return 0.0;
        }
        let d = &self.0 - self.0.adjoint();
        d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / n
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.hermiticity_defect() <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// exp(−i·θ·H) for Hermitian H via its eigendecomposition.
    pub fn unitary_exp(&self, theta: f64) -> Self {
        let h = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let w = eig.eigenvectors;
        let mut wd = w.clone();
        for (k, lam) in eig.eigenvalues.iter().enumerate() {
            let ph = C64::from_polar(1.0, -theta * lam);
            for r in 0..wd.nrows() {
                wd[(r, k)] *= ph;
            }
        }
        Self(wd * w.adjoint())
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Add for ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(self.0 + rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl Sub for ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(self.0 - rhs.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Mul for ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(self.0 * rhs.0)
    }
}

impl Neg for ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-self.0)
    }
}

/// Tensor factor of the full space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Beam,
    Qubit,
    Tlr,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Beam => "beam",
            Slot::Qubit => "qubit",
            Slot::Tlr => "tlr",
        }
    }
}

/// Truncations of the full beam ⊗ qubit ⊗ resonator space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HilbertSpec {
    pub n_beam: usize,
    pub n_tlr: usize,
}

impl HilbertSpec {
    pub const N_QUBIT: usize = 2;

    pub fn new(n_beam: usize, n_tlr: usize) -> Result<Self> {
        if n_beam < 2 || n_tlr < 2 {
            return Err(Error::Dimension(format!(
                "truncations must be >= 2 (beam {n_beam}, tlr {n_tlr})"
            )));
        }
        Ok(Self { n_beam, n_tlr })
    }

    pub fn dim(&self) -> usize {
        self.n_beam * Self::N_QUBIT * self.n_tlr
    }

    pub fn slot_dim(&self, slot: Slot) -> usize {
        match slot {
            Slot::Beam => self.n_beam,
            Slot::Qubit => Self::N_QUBIT,
            Slot::Tlr => self.n_tlr,
        }
    }

    pub fn factor_space(&self) -> FactorSpace {
        FactorSpace {
            factors: vec![
                (Slot::Beam, self.n_beam),
                (Slot::Qubit, Self::N_QUBIT),
                (Slot::Tlr, self.n_tlr),
            ],
        }
    }
}

/// Ordered list of tensor factors a state lives on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorSpace {
    factors: Vec<(Slot, usize)>,
}

impl FactorSpace {
    pub fn new(mut factors: Vec<(Slot, usize)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Dimension("empty factor list".into()));
        }
        factors.sort_by_key(|f| f.0);
        for w in factors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidSlot(format!("duplicate slot {}", w[0].0.name())));
            }
        }
        if factors.iter().any(|f| f.1 < 2) {
            return Err(Error::Dimension("factor dimension below 2".into()));
        }
        Ok(Self { factors })
    }

    pub fn beam(n: usize) -> Result<Self> {
        Self::new(vec![(Slot::Beam, n)])
    }

    pub fn factors(&self) -> &[(Slot, usize)] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.1).product()
    }

    pub fn slot_dim(&self, slot: Slot) -> Option<usize> {
        self.factors.iter().find(|f| f.0 == slot).map(|f| f.1)
    }

    /// Dimension of factors after `slot` in the ordering.
    pub fn inner_dim(&self, slot: Slot) -> Option<usize> {
        let pos = self.factors.iter().position(|f| f.0 == slot)?;
        Some(self.factors[pos + 1..].iter().map(|f| f.1).product())
    }
}

/// Density matrix tagged with the space it lives on.
#[derive(Clone, Debug)]
pub struct DensityState {
    pub space: FactorSpace,
    pub matrix: ComplexMatrix,
}

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const NEGATIVITY_TOL: f64 = 1e-8;

impl DensityState {
    /// Validating constructor: Hermitian, unit trace, positive within tolerances.
    pub fn new(space: FactorSpace, matrix: ComplexMatrix) -> Result<Self> {
        let s = Self::new_unchecked(space, matrix)?;
        let defect = s.matrix.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::Dimension(format!("state not Hermitian (defect {defect:.3e})")));
        }
        let tr = s.matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Dimension(format!("state trace {tr} differs from 1")));
        }
        let lo = s.min_eigenvalue();
        if lo < -NEGATIVITY_TOL {
            return Err(Error::Dimension(format!("state eigenvalue {lo:.3e} below tolerance")));
        }
        Ok(s)
    }

    /// Shape-checked constructor without physical validation.
    pub fn new_unchecked(space: FactorSpace, matrix: ComplexMatrix) -> Result<Self> {
        let n = space.dim();
        if matrix.rows() != n || matrix.cols() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                found: format!("{}x{}", matrix.rows(), matrix.cols()),
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn from_pure(space: FactorSpace, psi: &[C64]) -> Result<Self> {
        let n = space.dim();
        if psi.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("vector of {n}"),
                found: format!("vector of {}", psi.len()),
            });
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm == 0.0 {
            return Err(Error::Dimension("zero state vector".into()));
        }
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = psi[r] * psi[c].conj() / norm;
            }
        }
        Self::new(space, ComplexMatrix(m))
    }

    /// Fock state |k⟩ on a single beam factor of `levels`.
    pub fn beam_fock(levels: usize, k: usize) -> Result<Self> {
        if k >= levels {
            return Err(Error::Dimension(format!("Fock index {k} >= {levels}")));
        }
        let mut psi = vec![C64::new(0.0, 0.0); levels];
        psi[k] = C64::new(1.0, 0.0);
        Self::from_pure(FactorSpace::beam(levels)?, &psi)
    }

    /// Truncated thermal state, renormalized after truncation.
    pub fn beam_thermal(levels: usize, nbar: f64) -> Result<Self> {
        let d = thermal_populations(levels, nbar)?;
        let diag: Vec<C64> = d.iter().map(|&p| C64::new(p, 0.0)).collect();
        Self::new(FactorSpace::beam(levels)?, ComplexMatrix::from_diagonal(&diag))
    }

    /// Truncated coherent state |β⟩, renormalized.
    pub fn beam_coherent(levels: usize, beta: C64) -> Result<Self> {
        Self::from_pure(FactorSpace::beam(levels)?, &coherent_amplitudes(levels, beta))
    }

    /// Tensor product of single-factor states, in canonical order.
    pub fn product(parts: &[&DensityState]) -> Result<Self> {
        let mut factors = Vec::new();
        let mut sorted: Vec<&DensityState> = parts.to_vec();
        sorted.sort_by_key(|s| s.space.factors()[0].0);
        let mut m: Option<ComplexMatrix> = None;
        for s in sorted {
            factors.extend_from_slice(s.space.factors());
            m = Some(match m {
                None => s.matrix.clone(),
                Some(acc) => acc.kron(&s.matrix),
            });
        }
        let space = FactorSpace::new(factors)?;
        Self::new_unchecked(space, m.ok_or(Error::EmptyInput)?)
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.hermitian_eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Population of the top two Fock levels of `slot`.
    pub fn leakage(&self, slot: Slot) -> Result<f64> {
        let n = self
            .space
            .slot_dim(slot)
            .ok_or_else(|| Error::InvalidSlot(slot.name().into()))?;
        let reduced = partial_trace(self, &[slot])?;
        let lo = n.saturating_sub(2);
        Ok((lo..n).map(|k| reduced.matrix.get(k, k).re).sum())
    }
}

/// Bose occupation probabilities truncated at `levels` and renormalized.
pub fn thermal_populations(levels: usize, nbar: f64) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(Error::Dimension(format!("levels {levels} < 2")));
    }
    if nbar < 0.0 {
        return Err(Error::NegativeInput(format!("nbar {nbar}")));
    }
    let q = nbar / (1.0 + nbar);
    let mut p: Vec<f64> = (0..levels).map(|k| q.powi(k as i32)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok(p)
}

/// Fock amplitudes of a coherent state, truncated (not renormalized).
pub fn coherent_amplitudes(levels: usize, beta: C64) -> Vec<C64> {
    let mut out = Vec::with_capacity(levels);
    let mut amp = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for k in 0..levels {
        out.push(amp);
        amp = amp * beta / ((k + 1) as f64).sqrt();
    }
    out
}

/// Annihilation operator on `levels` Fock states.
pub fn fock_annihilation(levels: usize) -> Result<ComplexMatrix> {
    if levels < 2 {
        return Err(Error::Dimension(format!("levels {levels} < 2")));
    }
    let mut m = DMatrix::zeros(levels, levels);
    for n in 1..levels {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(ComplexMatrix(m))
}

pub fn number_operator(levels: usize) -> Result<ComplexMatrix> {
    let a = fock_annihilation(levels)?;
    Ok(&a.dagger() * &a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

/// Pauli matrices in the basis (|e⟩, |g⟩) with σ_z = diag(1, −1).
pub fn pauli(which: Pauli) -> ComplexMatrix {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let e = match which {
        Pauli::X => [z, o, o, z],
        Pauli::Y => [z, -I, I, z],
        Pauli::Z => [o, z, z, -o],
        Pauli::Plus => [z, o, z, z],
        Pauli::Minus => [z, z, o, z],
    };
    ComplexMatrix(DMatrix::from_row_slice(2, 2, &e))
}

/// Kronecker embedding of a single-factor operator into the full space.
pub fn embed(op: &ComplexMatrix, slot: Slot, space: &HilbertSpec) -> Result<ComplexMatrix> {
    let d = space.slot_dim(slot);
    if op.rows() != d || op.cols() != d {
        return Err(Error::ShapeMismatch {
            expected: format!("{d}x{d} for {}", slot.name()),
            found: format!("{}x{}", op.rows(), op.cols()),
        });
    }
    let id = |n| ComplexMatrix::identity(n);
    Ok(match slot {
        Slot::Beam => op.kron(&id(HilbertSpec::N_QUBIT * space.n_tlr)),
        Slot::Qubit => id(space.n_beam).kron(op).kron(&id(space.n_tlr)),
        Slot::Tlr => id(space.n_beam * HilbertSpec::N_QUBIT).kron(op),
    })
}

fn check_square_pair(c: &ComplexMatrix, rho: &DensityState) -> Result<()> {
    let n = rho.dim();
    if c.rows() != n || c.cols() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n}"),
            found: format!("{}x{}", c.rows(), c.cols()),
        });
    }
    Ok(())
}

/// D[c]ρ = cρc† − ½c†cρ − ½ρc†c.
pub fn dissipator(c: &ComplexMatrix, rho: &DensityState) -> Result<ComplexMatrix> {
    check_square_pair(c, rho)?;
    let r = &rho.matrix.0;
    let cm = &c.0;
    let cd = cm.adjoint();
    let cdc = &cd * cm;
    let out = cm * r * &cd - (&cdc * r + r * &cdc) * C64::new(0.5, 0.0);
    Ok(ComplexMatrix(out))
}

/// H[c]ρ = cρ + ρc† − ⟨c + c†⟩ρ.
pub fn meas_superop(c: &ComplexMatrix, rho: &DensityState) -> Result<ComplexMatrix> {
    check_square_pair(c, rho)?;
    let r = &rho.matrix.0;
    let cm = &c.0;
    let cr = cm * r;
    let mean = cr.trace() + cr.trace().conj();
    let out = &cr + cr.adjoint() - r * mean;
    Ok(ComplexMatrix(out))
}

/// tr(op·ρ).
pub fn expectation(op: &ComplexMatrix, rho: &DensityState) -> Result<C64> {
    check_square_pair(op, rho)?;
    Ok(trace_product(&op.0, &rho.matrix.0))
}

/// tr(A·B) without forming the product.
pub fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        for k in 0..a.ncols() {
            acc += a[(j, k)] * b[(k, j)];
        }
    }
    acc
}

/// Reduced state on the slots in `keep`.
pub fn partial_trace(rho: &DensityState, keep: &[Slot]) -> Result<DensityState> {
    if keep.is_empty() {
        return Err(Error::InvalidSlot("empty keep set".into()));
    }
    let factors = rho.space.factors();
    for s in keep {
        if !factors.iter().any(|f| f.0 == *s) {
            return Err(Error::InvalidSlot(format!("{} not in state space", s.name())));
        }
    }
    let dims: Vec<usize> = factors.iter().map(|f| f.1).collect();
    let kept: Vec<bool> = factors.iter().map(|f| keep.contains(&f.0)).collect();
    let out_factors: Vec<(Slot, usize)> =
        factors.iter().filter(|f| keep.contains(&f.0)).copied().collect();
    let out_space = FactorSpace::new(out_factors)?;
    let nk = out_space.dim();
    let n = rho.dim();

    // split each flat index into (kept index, traced index)
    let split = |mut idx: usize| -> (usize, usize) {
        let mut k_idx = 0usize;
        let mut t_idx = 0usize;
        let mut k_mul = 1usize;
        let mut t_mul = 1usize;
        for f in (0..dims.len()).rev() {
            let digit = idx % dims[f];
            idx /= dims[f];
            if kept[f] {
                k_idx += digit * k_mul;
                k_mul *= dims[f];
            } else {
                t_idx += digit * t_mul;
                t_mul *= dims[f];
            }
        }
        (k_idx, t_idx)
    };
    let parts: Vec<(usize, usize)> = (0..n).map(split).collect();
    let mut out = DMatrix::zeros(nk, nk);
    let m = &rho.matrix.0;
    for j in 0..n {
        let (kj, tj) = parts[j];
        for i in 0..n {
            let (ki, ti) = parts[i];
            if ti == tj {
                out[(ki, kj)] += m[(i, j)];
            }
        }
    }
    DensityState::new_unchecked(out_space, ComplexMatrix(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn annihilation_small_cases() {
        let a2 = fock_annihilation(2).unwrap();
        assert_eq!(a2.to_row_major(), vec![c(0.0), c(1.0), c(0.0), c(0.0)]);
        let a3 = fock_annihilation(3).unwrap();
        assert_abs_diff_eq!(a3.get(1, 2).re, 2f64.sqrt(), epsilon = 1e-15);
        assert!(fock_annihilation(1).is_err());
    }

    #[test]
    fn commutator_defect_confined_to_top_level() {
        // [a,a†] = diag(1,...,1,-(N-1)) by direct product
        let a = fock_annihilation(10).unwrap();
        let comm = a.commutator(&a.dagger());
        for r in 0..10 {
            for col in 0..10 {
                let want = if r != col {
                    0.0
                } else if r == 9 {
                    -9.0
                } else {
                    1.0
                };
                assert_abs_diff_eq!(comm.get(r, col).re, want, epsilon = 1e-12);
                assert_abs_diff_eq!(comm.get(r, col).im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pauli_algebra() {
        assert_eq!(pauli(Pauli::Z).to_row_major(), vec![c(1.0), c(0.0), c(0.0), c(-1.0)]);
        let pm = &pauli(Pauli::Plus) * &pauli(Pauli::Minus);
        assert_eq!(pm.to_row_major(), vec![c(1.0), c(0.0), c(0.0), c(0.0)]);
        let x = &pauli(Pauli::Plus) + &pauli(Pauli::Minus);
        assert_eq!(x, pauli(Pauli::X));
        let y = (&pauli(Pauli::Plus) - &pauli(Pauli::Minus)).scale(-I);
        assert_eq!(y, pauli(Pauli::Y));
    }

    #[test]
    fn embed_identity_trace_and_commutation() {
        let sp = HilbertSpec::new(3, 4).unwrap();
        for slot in [Slot::Beam, Slot::Qubit, Slot::Tlr] {
            let id = ComplexMatrix::identity(sp.slot_dim(slot));
            assert_eq!(embed(&id, slot, &sp).unwrap(), ComplexMatrix::identity(sp.dim()));
        }
        let b = embed(&fock_annihilation(3).unwrap(), Slot::Beam, &sp).unwrap();
        let a = embed(&fock_annihilation(4).unwrap(), Slot::Tlr, &sp).unwrap();
        assert_eq!(b.commutator(&a).frobenius_norm(), 0.0);
        let n = number_operator(4).unwrap();
        let tr = embed(&n, Slot::Tlr, &sp).unwrap().trace().re;
        assert_abs_diff_eq!(tr, n.trace().re * 6.0, epsilon = 1e-12);
        assert!(embed(&n, Slot::Beam, &sp).is_err());
    }

    #[test]
    fn dissipator_hand_example() {
        // D[a]|1><1| = |0><0| - |1><1| at 3 levels
        let a = fock_annihilation(3).unwrap();
        let rho = DensityState::beam_fock(3, 1).unwrap();
        let d = dissipator(&a, &rho).unwrap();
        let want = ComplexMatrix::from_diagonal(&[c(1.0), c(-1.0), c(0.0)]);
        assert!((&d - &want).frobenius_norm() < 1e-15);
        let id = ComplexMatrix::identity(3);
        assert!(dissipator(&id, &rho).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn meas_superop_brute_force_and_eigenstate() {
        let a = fock_annihilation(8).unwrap();
        let rho = DensityState::beam_coherent(8, C64::new(0.7, -0.4)).unwrap();
        let got = meas_superop(&a, &rho).unwrap();
        // entrywise evaluation of aρ + ρa† − ⟨a + a†⟩ρ
        let r = &rho.matrix;
        let mut mean = C64::new(0.0, 0.0);
        for i in 0..8 {
            for k in 0..8 {
                mean += a.get(i, k) * r.get(k, i) + a.get(k, i).conj() * r.get(k, i);
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                let mut v = -mean * r.get(i, j);
                for k in 0..8 {
                    v += a.get(i, k) * r.get(k, j) + r.get(i, k) * a.get(j, k).conj();
                }
                assert_abs_diff_eq!((got.get(i, j) - v).norm(), 0.0, epsilon = 1e-13);
            }
        }
        let z = pauli(Pauli::Z);
        let up = DensityState::from_pure(FactorSpace::new(vec![(Slot::Qubit, 2)]).unwrap(), &[c(1.0), c(0.0)]).unwrap();
        assert!(meas_superop(&z, &up).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn thermal_expectation_geometric_series() {
        let rho = DensityState::beam_thermal(60, 1.5).unwrap();
        let n = number_operator(60).unwrap();
        // truncated geometric series: sum k q^k / sum q^k with q = 0.6
        let q: f64 = 0.6;
        let num: f64 = (0..60).map(|k| k as f64 * q.powi(k)).sum();
        let den: f64 = (0..60).map(|k| q.powi(k)).sum();
        let got = expectation(&n, &rho).unwrap();
        assert_abs_diff_eq!(got.re, num / den, epsilon = 1e-12);
        assert!((got.re - 1.5).abs() < 1e-6);
        assert_abs_diff_eq!(expectation(&n, &DensityState::beam_fock(60, 0).unwrap()).unwrap().re, 0.0);
    }

    #[test]
    fn partial_trace_product_and_bell() {
        let sp = HilbertSpec::new(3, 2).unwrap();
        let rb = DensityState::beam_thermal(3, 0.4).unwrap();
        let qs = FactorSpace::new(vec![(Slot::Qubit, 2)]).unwrap();
        let rq = DensityState::from_pure(qs, &[c(0.6), C64::new(0.0, 0.8)]).unwrap();
        let ts = FactorSpace::new(vec![(Slot::Tlr, 2)]).unwrap();
        let rt = DensityState::from_pure(ts, &[c(1.0), c(1.0)]).unwrap();
        let full = DensityState::product(&[&rt, &rb, &rq]).unwrap();
        assert_eq!(full.dim(), sp.dim());
        let back = partial_trace(&full, &[Slot::Beam]).unwrap();
        assert!((&back.matrix - &rb.matrix).frobenius_norm() < 1e-14);
        let bq = partial_trace(&full, &[Slot::Qubit, Slot::Beam]).unwrap();
        assert_abs_diff_eq!(bq.trace().re, 1.0, epsilon = 1e-12);

        let bell_space = FactorSpace::new(vec![(Slot::Qubit, 2), (Slot::Tlr, 2)]).unwrap();
        let bell = DensityState::from_pure(bell_space, &[c(1.0), c(0.0), c(0.0), c(1.0)]).unwrap();
        let half = partial_trace(&bell, &[Slot::Tlr]).unwrap();
        let mixed = ComplexMatrix::identity(2).scale_re(0.5);
        assert!((&half.matrix - &mixed).frobenius_norm() < 1e-15);
        assert!(partial_trace(&bell, &[Slot::Beam]).is_err());
    }
}
