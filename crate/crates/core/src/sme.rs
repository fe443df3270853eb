// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Diffusive stochastic master equation stepper shared by the full and the
//! beam-only models.
//!
//! dρ = −i[H₀ + u·X, ρ]dt + Σ_k D[c_k]ρ dt + s·H[L]ρ dW,  dY = s⟨L + L†⟩dt + dW.
//!
//! `Scheme::Euler` applies one Euler–Maruyama update to the whole generator.
//! `Scheme::Split` propagates H₀ exactly over two half steps around a
//! first-order Kraus update of the dissipative and measurement terms, and
//! applies the control term as an exact unitary. Plain Euler–Maruyama
//! amplifies an undamped oscillation by (ω·dt)² per step, which outruns the
//! mechanical damping unless ω·dt ≪ γ/ω.
//!
//! The measurement update is
//!
//! ρ' ∝ KρK† + (Jρ + ρJ† + Σ_k c_k ρ c_k† − s²LρL†)dt,
//! K = 1 + s·L·dY + ½s²·L²(dY² − dt),  J = −½Σc†c,
//!
//! which carries the Itô second-order terms of the measurement back-action
//! and so avoids the spread of conditional variances that a term linear in
//! dW produces. The dissipator stays linear in dt: its fixed point is then
//! the exact stationary state of the generator, and factors that share no
//! operator keep evolving independently.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operators::{ComplexMatrix, C64, I, NEGATIVITY_TOL};
use crate::sparse::{apply_inner_left, gemm, LinearCombo, SparseOp};

/// Entries of the exact propagators below this modulus are dropped.
pub const PROPAGATOR_DROP_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Split,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Split => "split",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "euler" => Some(Scheme::Euler),
            "split" => Some(Scheme::Split),
            _ => None,
        }
    }
}

/// Hermitian control generator X acting on the last `x.rows()` indices.
#[derive(Clone, Debug)]
pub struct ControlOp {
    /// X embedded in the full space.
    pub full: SparseOp,
    eig_vectors: DMatrix<C64>,
    eig_vectors_adj: DMatrix<C64>,
    eig_values: Vec<f64>,
}

impl ControlOp {
    pub fn new(local: &ComplexMatrix, full: &ComplexMatrix) -> Self {
        let h = local.as_dmatrix();
        let eig = ((h + h.adjoint()) * C64::new(0.5, 0.0)).symmetric_eigen();
        Self {
            full: SparseOp::from_dense(full, 0.0),
            eig_vectors_adj: eig.eigenvectors.adjoint(),
            eig_vectors: eig.eigenvectors,
            eig_values: eig.eigenvalues.iter().copied().collect(),
        }
    }

    pub fn local_dim(&self) -> usize {
        self.eig_values.len()
    }

    /// exp(−iθX) restricted to the local factor.
    pub fn local_unitary(&self, theta: f64) -> DMatrix<C64> {
        let m = self.local_dim();
        let mut w = DMatrix::zeros(m, m);
        let mut out = DMatrix::zeros(m, m);
        self.local_unitary_into(theta, &mut w, &mut out);
        out
    }

    fn local_unitary_into(&self, theta: f64, w: &mut DMatrix<C64>, out: &mut DMatrix<C64>) {
        w.copy_from(&self.eig_vectors);
        for (k, lam) in self.eig_values.iter().enumerate() {
            let ph = C64::from_polar(1.0, -theta * lam);
            w.column_mut(k).iter_mut().for_each(|z| *z *= ph);
        }
        gemm(w, &self.eig_vectors_adj, out);
    }
}

/// Static description of an SME.
#[derive(Clone, Debug)]
pub struct SmeModel {
    pub h0: ComplexMatrix,
    /// Lindblad operators with rates absorbed.
    pub channels: Vec<ComplexMatrix>,
    /// Monitored operator without rate.
    pub measured: ComplexMatrix,
    /// √(η·γ) prefactor of the measurement term.
    pub meas_strength: f64,
    pub control: Option<ControlOp>,
}

/// Step counters for the structural checks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub steps: u64,
    pub repairs: u64,
    pub positivity_checks: u64,
    pub max_antihermitian: f64,
    pub max_trace_drift: f64,
}

impl StepStats {
    pub fn merge(&mut self, other: &StepStats) {
        self.steps += other.steps;
        self.repairs += other.repairs;
        self.positivity_checks += other.positivity_checks;
        self.max_antihermitian = self.max_antihermitian.max(other.max_antihermitian);
        self.max_trace_drift = self.max_trace_drift.max(other.max_trace_drift);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub dy: f64,
    /// ⟨L + L†⟩ on the state the measurement acted on.
    pub meas_mean: f64,
}

/// Exact propagator, stored sparse when that is cheaper.
#[derive(Clone, Debug)]
struct Propagator {
    dense: DMatrix<C64>,
    dense_adj: DMatrix<C64>,
    sparse: Option<SparseOp>,
}

impl Propagator {
    fn new(u: &ComplexMatrix) -> Self {
        let n = u.rows();
        let sp = SparseOp::from_dense(u, PROPAGATOR_DROP_TOL);
        // a sparse product costs 2·nnz·n against n³ for gemm
        let sparse = if 4 * sp.nnz() <= n * n { Some(sp) } else { None };
        Self { dense: u.as_dmatrix().clone(), dense_adj: u.as_dmatrix().adjoint(), sparse }
    }

    fn apply(&self, rho: &mut DMatrix<C64>, t1: &mut DMatrix<C64>) {
        match &self.sparse {
            Some(op) => {
                op.left_mul(rho, t1);
                op.right_mul_adj(t1, rho);
            }
            None => {
                gemm(&self.dense, rho, t1);
                gemm(t1, &self.dense_adj, rho);
            }
        }
    }
}

#[derive(Clone, Debug)]
struct SplitParts {
    half: Propagator,
    full: Propagator,
    /// I, L, L²
    kraus: LinearCombo,
    /// U†·O·U for observables queried while a half step is pending.
    half_adj: DMatrix<C64>,
}

/// Observable usable on states with a pending half step.
#[derive(Clone, Debug)]
pub struct Observable {
    lab: SparseOp,
    shifted: Option<DMatrix<C64>>,
}

/// Precompiled stepper for a fixed model and dt.
#[derive(Clone, Debug)]
pub struct SmeStepper {
    scheme: Scheme,
    dt: f64,
    dim: usize,
    /// −iH₀ − ½Σc†c for Euler, −½Σc†c for Split.
    j_op: SparseOp,
    h0: SparseOp,
    channels: Vec<SparseOp>,
    measured: SparseOp,
    meas_strength: f64,
    split: Option<SplitParts>,
    control: Option<ControlOp>,
    /// Check positivity every this many steps; 0 disables.
    pub positivity_stride: u64,
    pub clamp_negativity: bool,
    /// Fuse the closing half step with the next opening one. The caller must
    /// then call `sync` before reading ρ, or query it through `expect`.
    pub merge_half_steps: bool,
    pending: bool,
    pub stats: StepStats,
    t1: DMatrix<C64>,
    t2: DMatrix<C64>,
    acc: DMatrix<C64>,
    prop: DMatrix<C64>,
    prop_adj: DMatrix<C64>,
    local_w: DMatrix<C64>,
    local_v: DMatrix<C64>,
    scratch: Vec<C64>,
}

impl SmeStepper {
    pub fn new(model: &SmeModel, dt: f64, scheme: Scheme) -> Result<Self> {
        let dim = model.h0.rows();
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        for c in model.channels.iter().chain(std::iter::once(&model.measured)) {
            if c.rows() != dim || c.cols() != dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("{dim}x{dim}"),
                    found: format!("{}x{}", c.rows(), c.cols()),
                });
            }
        }
        if let Some(ctrl) = &model.control {
            if dim % ctrl.local_dim() != 0 {
                return Err(Error::ShapeMismatch {
                    expected: format!("a factor of {dim}"),
                    found: format!("{}", ctrl.local_dim()),
                });
            }
        }
        let mut decay = ComplexMatrix::zeros(dim, dim);
        for c in &model.channels {
            decay = &decay + &(&c.dagger() * c);
        }
        let damp = decay.scale_re(-0.5);
        let (j, split) = match scheme {
            Scheme::Euler => (&damp + &model.h0.scale(-I), None),
            Scheme::Split => {
                let half = model.h0.unitary_exp(0.5 * dt);
                let l2 = &model.measured * &model.measured;
                let id = ComplexMatrix::identity(dim);
                let parts = SplitParts {
                    half_adj: half.as_dmatrix().adjoint(),
                    half: Propagator::new(&half),
                    full: Propagator::new(&model.h0.unitary_exp(dt)),
                    kraus: LinearCombo::new(&[&id, &model.measured, &l2]),
                };
                (damp.clone(), Some(parts))
            }
        };
        let zeros = || DMatrix::zeros(dim, dim);
        let m = model.control.as_ref().map_or(0, |c| c.local_dim());
        Ok(Self {
            scheme,
            dt,
            dim,
            j_op: SparseOp::from_dense(&j, 0.0),
            h0: SparseOp::from_dense(&model.h0, 0.0),
            channels: model.channels.iter().map(|c| SparseOp::from_dense(c, 0.0)).collect(),
            measured: SparseOp::from_dense(&model.measured, 0.0),
            meas_strength: model.meas_strength,
            split,
            control: model.control.clone(),
            positivity_stride: 1,
            clamp_negativity: true,
            merge_half_steps: false,
            pending: false,
            stats: StepStats::default(),
            t1: zeros(),
            t2: zeros(),
            acc: zeros(),
            prop: zeros(),
            prop_adj: zeros(),
            local_w: DMatrix::zeros(m, m),
            local_v: DMatrix::zeros(m, m),
            scratch: Vec::new(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn measured(&self) -> &SparseOp {
        &self.measured
    }

    pub fn meas_strength(&self) -> f64 {
        self.meas_strength
    }

    /// ⟨L + L†⟩ = 2 Re tr(Lρ).
    pub fn measurement_mean(&self, rho: &DMatrix<C64>) -> f64 {
        2.0 * self.measured.expectation(rho).re
    }

    /// Whether ρ still lacks its closing half step.
    pub fn is_pending(&self) -> bool {
        self.pending
    }

    /// Applies a pending half step so that ρ is the state at the step end.
    pub fn sync(&mut self, rho: &mut DMatrix<C64>) {
        if self.pending {
            if let Some(sp) = &self.split {
                sp.half.apply(rho, &mut self.t1);
            }
            self.pending = false;
        }
    }

    pub fn observable(&self, op: &ComplexMatrix) -> Observable {
        let shifted = self.split.as_ref().map(|sp| &sp.half_adj * op.as_dmatrix() * &sp.half.dense);
        Observable { lab: SparseOp::from_dense(op, 0.0), shifted }
    }

    /// tr(Oρ) on the synchronized state, whether or not a half step is pending.
    pub fn expect(&self, obs: &Observable, rho: &DMatrix<C64>) -> C64 {
        match (&obs.shifted, self.pending) {
            (Some(m), true) => {
                // tr(MA) = Σ_ij M[i, j]·A[j, i]
                let n = self.dim;
                let ms = m.as_slice();
                let rs = rho.as_slice();
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n {
                    for i in 0..n {
                        acc += ms[j * n + i] * rs[i * n + j];
                    }
                }
                acc
            }
            _ => obs.lab.expectation(rho),
        }
    }

    /// Advances ρ by one step under control amplitude `u` and increment `dw`.
    pub fn step(&mut self, rho: &mut DMatrix<C64>, u: f64, dw: f64, step_index: usize) -> Result<StepOutput> {
        let out = match self.scheme {
            Scheme::Euler => self.euler_step(rho, u, dw),
            Scheme::Split => self.split_step(rho, u, dw),
        };
        self.finish(rho, step_index)?;
        Ok(out)
    }

    fn euler_step(&mut self, rho: &mut DMatrix<C64>, u: f64, dw: f64) -> StepOutput {
        let dt = self.dt;
        // deterministic part: Jρ + ρJ† + Σ cρc†
        self.j_op.left_mul(rho, &mut self.t1);
        self.acc.copy_from(&self.t1);
        self.acc += self.t1.adjoint();
        if u != 0.0 {
            if let Some(ctrl) = &self.control {
                // −iu(Xρ − ρX)
                ctrl.full.left_mul(rho, &mut self.t1);
                let k = C64::new(0.0, -u);
                self.acc += &self.t1 * k;
                self.acc += self.t1.adjoint() * k.conj();
            }
        }
        for c in &self.channels {
            c.left_mul(rho, &mut self.t1);
            c.right_mul_adj(&self.t1, &mut self.t2);
            self.acc += &self.t2;
        }

        // measurement: s·dW·(Lρ + ρL† − ⟨L + L†⟩ρ)
        self.measured.left_mul(rho, &mut self.t1);
        let mean = 2.0 * self.t1.trace().re;
        let s = self.meas_strength;
        let dy = s * mean * dt + dw;
        let w = s * dw;
        let rs = rho.as_mut_slice();
        let acc = self.acc.as_slice();
        let n = self.dim;
        // t1 holds Lρ; its adjoint entry (i, j) is conj(t1[j, i])
        let t1 = self.t1.as_slice();
        for col in 0..n {
            for row in 0..n {
                let idx = col * n + row;
                let lrho = t1[idx];
                let rhol = t1[row * n + col].conj();
                rs[idx] += acc[idx] * dt + (lrho + rhol - rs[idx] * mean) * w;
            }
        }
        StepOutput { dy, meas_mean: mean }
    }

    fn split_step(&mut self, rho: &mut DMatrix<C64>, u: f64, dw: f64) -> StepOutput {
        let dt = self.dt;
        let Some(sp) = self.split.as_mut() else { unreachable!("split parts exist for Scheme::Split") };
        let opening = if self.pending { &sp.full } else { &sp.half };
        match (&self.control, u != 0.0) {
            (Some(ctrl), true) => {
                // fuse exp(−iu·X·dt) with the opening propagator
                ctrl.local_unitary_into(u * dt, &mut self.local_w, &mut self.local_v);
                if ctrl.local_dim() == self.dim {
                    gemm(&self.local_v, &opening.dense, &mut self.prop);
                } else {
                    self.prop.copy_from(&opening.dense);
                    apply_inner_left(&mut self.prop, &self.local_v, &mut self.scratch);
                }
                self.prop.adjoint_to(&mut self.prop_adj);
                gemm(&self.prop, rho, &mut self.t1);
                gemm(&self.t1, &self.prop_adj, rho);
            }
            _ => opening.apply(rho, &mut self.t1),
        }

        let mean = 2.0 * self.measured.expectation(rho).re;
        let s = self.meas_strength;
        let dy = s * mean * dt + dw;
        let one = C64::new(1.0, 0.0);
        // dt·(Jρ + ρJ†)
        self.j_op.left_mul(rho, &mut self.t1);
        let ts = self.t1.as_slice();
        let n = self.dim;
        for (idx, a) in self.acc.as_mut_slice().iter_mut().enumerate() {
            let (row, col) = (idx % n, idx / n);
            *a = (ts[idx] + ts[row * n + col].conj()) * dt;
        }
        let k = sp.kraus.assemble(&[one, C64::new(s * dy, 0.0), C64::new(0.5 * s * s * (dy * dy - dt), 0.0)]);
        k.left_mul(rho, &mut self.t1);
        k.right_mul_adj(&self.t1, &mut self.t2);
        add_scaled(&mut self.acc, &self.t2, 1.0);
        for c in &self.channels {
            c.left_mul(rho, &mut self.t1);
            c.right_mul_adj(&self.t1, &mut self.t2);
            add_scaled(&mut self.acc, &self.t2, dt);
        }
        if s != 0.0 {
            self.measured.left_mul(rho, &mut self.t1);
            self.measured.right_mul_adj(&self.t1, &mut self.t2);
            add_scaled(&mut self.acc, &self.t2, -s * s * dt);
        }
        std::mem::swap(rho, &mut self.acc);

        if self.merge_half_steps {
            self.pending = true;
        } else {
            sp.half.apply(rho, &mut self.t1);
        }
        StepOutput { dy, meas_mean: mean }
    }

    fn finish(&mut self, rho: &mut DMatrix<C64>, step_index: usize) -> Result<()> {
        self.stats.steps += 1;
        let n = self.dim;
        let check = self.positivity_stride > 0 && self.stats.steps % self.positivity_stride == 0;
        if check {
            let mut num = 0.0;
            let mut den = 0.0;
            for c in 0..n {
                for r in 0..n {
                    num += (rho[(r, c)] - rho[(c, r)].conj()).norm_sqr();
                    den += rho[(r, c)].norm_sqr();
                }
            }
            let defect = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
            self.stats.max_antihermitian = self.stats.max_antihermitian.max(defect);
        }
        // symmetrize
        for c in 0..n {
            for r in 0..c {
                let z = (rho[(r, c)] + rho[(c, r)].conj()) * 0.5;
                rho[(r, c)] = z;
                rho[(c, r)] = z.conj();
            }
            let d = rho[(c, c)].re;
            rho[(c, c)] = C64::new(d, 0.0);
        }
        let tr: f64 = (0..n).map(|k| rho[(k, k)].re).sum();
        if !tr.is_finite() || tr <= 0.0 {
            return Err(Error::Blowup { step: step_index });
        }
        self.stats.max_trace_drift = self.stats.max_trace_drift.max((tr - 1.0).abs());
        *rho /= C64::new(tr, 0.0);
        if check && self.clamp_negativity {
            self.stats.positivity_checks += 1;
            if repair_positivity(rho) {
                self.stats.repairs += 1;
            }
        }
        if !rho[(0, 0)].re.is_finite() {
            return Err(Error::Blowup { step: step_index });
        }
        Ok(())
    }

    /// H₀ as a sparse operator.
    pub fn hamiltonian(&self) -> &SparseOp {
        &self.h0
    }
}

/// acc += k·x
fn add_scaled(acc: &mut DMatrix<C64>, x: &DMatrix<C64>, k: f64) {
    for (a, v) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += v * k;
    }
}

/// Clamps eigenvalues below −tolerance. Returns true when a repair happened.
///
/// A Cholesky factorization of ρ + tol·I succeeds exactly when no eigenvalue
/// lies below −tol, so the eigendecomposition only runs on failure.
pub fn repair_positivity(rho: &mut DMatrix<C64>) -> bool {
    let n = rho.nrows();
    if cholesky_succeeds(rho, NEGATIVITY_TOL) {
        return false;
    }
    let eig = rho.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| if l < -NEGATIVITY_TOL { 0.0 } else { l }).collect();
    let s: f64 = vals.iter().sum();
    vals.iter_mut().for_each(|l| *l /= s);
    let w = &eig.eigenvectors;
    let mut wd = w.clone();
    for (k, l) in vals.iter().enumerate() {
        for r in 0..n {
            wd[(r, k)] *= C64::new(*l, 0.0);
        }
    }
    *rho = wd * w.adjoint();
    true
}

/// Whether ρ + shift·I admits a Cholesky factor with positive real pivots.
fn cholesky_succeeds(rho: &DMatrix<C64>, shift: f64) -> bool {
    let n = rho.nrows();
    let mut l = DMatrix::<C64>::zeros(n, n);
    for j in 0..n {
        let mut d = rho[(j, j)].re + shift;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut z = rho[(i, j)];
            for k in 0..j {
                z -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = z / d;
        }
    }
    true
}
