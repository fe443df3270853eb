// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Beam-only model after adiabatic elimination of the qubit and resonator.
//!
//! With σ_z → −1 the resonator follows a ≈ C1·b + C2·b†, which turns the
//! monitored resonator channel into a monitored beam channel and the
//! feedback into a two-photon term ξ_M·b² + h.c. plus a linear drive.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::ControlGains;
use crate::full_sme::{BeamMoments, Probes, Sample, TrajectoryRecord};
use crate::gaussian::{
    evolve, hermitian_quadrature, quadratic_form, stationary_flow, FlowConfig, LinearGaussianModel, Moments,
};
use crate::operators::{
    dissipator, expectation, fock_annihilation, meas_superop, ComplexMatrix, DensityState, C64, I,
};
use crate::rng::NormalStream;
use crate::sme::{ControlOp, Observable, Scheme, SmeModel, SmeStepper, StepStats};
use crate::sparse::SparseOp;
use crate::system::{DerivedParams, PhysicalParams};

/// |χ| below this multiple of ω_T² is rejected.
pub const CHI_SINGULAR_FRACTION: f64 = 1e-6;
/// Default upper bound on each region ratio.
pub const REGION_THRESHOLD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedCoeffs {
    pub c1: C64,
    pub c2: C64,
    pub chi: f64,
    pub alpha_x: C64,
    pub alpha_p: C64,
    pub xi_m: C64,
    pub g_mt: f64,
}

impl ReducedCoeffs {
    /// Coefficients with the resonator channel removed (C1 = C2 = 0).
    pub fn detached(&self) -> Self {
        let z = C64::new(0.0, 0.0);
        Self { c1: z, c2: z, alpha_x: z, alpha_p: z, xi_m: z, ..*self }
    }
}

/// χ = (γ_T/4)(γ_T + 4v_p) + ω_T(ω_T − 2v_x).
pub fn chi(g: &ControlGains, omega_t: f64, gamma_t: f64) -> f64 {
    0.25 * gamma_t * (gamma_t + 4.0 * g.v_p) + omega_t * (omega_t - 2.0 * g.v_x)
}

/// C1 = (g/χ)[(v_p + γ_T/2) − i(ω_T − v_x)], C2 = (g/χ)(v_p + i·v_x).
///
/// C2 is the stationary solution of the closed-loop resonator equation at
/// σ_z = −1. ξ_M = ω_T·C2*·C1 − i·g·C2*.
pub fn compute_coeffs(g: &ControlGains, d: &DerivedParams, p: &PhysicalParams) -> Result<ReducedCoeffs> {
    coeffs_from(g, p.omega_t, p.gamma_t, d.g_mt)
}

pub fn coeffs_from(g: &ControlGains, omega_t: f64, gamma_t: f64, g_mt: f64) -> Result<ReducedCoeffs> {
    let chi = chi(g, omega_t, gamma_t);
    let limit = CHI_SINGULAR_FRACTION * omega_t * omega_t;
    if !(chi.abs() >= limit) {
        return Err(Error::NearSingularGain { chi, limit });
    }
    let k = g_mt / chi;
    let c1 = C64::new(g.v_p + 0.5 * gamma_t, -(omega_t - g.v_x)) * k;
    let c2 = C64::new(g.v_p, g.v_x) * k;
    let xi_m = c2.conj() * c1 * omega_t - I * g_mt * c2.conj();
    Ok(ReducedCoeffs {
        c1,
        c2,
        chi,
        alpha_x: c1 + c2.conj(),
        alpha_p: -I * c1 + I * c2.conj(),
        xi_m,
        g_mt,
    })
}

/// Re ξ_M ≈ (ω_T g²/χ²)(v_p² − v_x²).
pub fn re_xi_approx(g: &ControlGains, rc: &ReducedCoeffs, omega_t: f64) -> f64 {
    omega_t * rc.g_mt * rc.g_mt / (rc.chi * rc.chi) * (g.v_p * g.v_p - g.v_x * g.v_x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    SqueezeX,
    SqueezeP,
    Cool,
}

impl Purpose {
    pub fn name(self) -> &'static str {
        match self {
            Purpose::SqueezeX => "squeeze-x",
            Purpose::SqueezeP => "squeeze-p",
            Purpose::Cool => "cool",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "squeeze-x" => Some(Purpose::SqueezeX),
            "squeeze-p" => Some(Purpose::SqueezeP),
            "cool" => Some(Purpose::Cool),
            _ => None,
        }
    }

    /// Sweep window of v_p/ω_T at v_x = ω_T/2.
    pub fn window(self) -> (f64, f64) {
        match self {
            Purpose::SqueezeX => (0.5, 1.0),
            Purpose::SqueezeP => (0.3, 0.5),
            Purpose::Cool => (0.3, 1.0),
        }
    }
}

/// Slack on window edges, relative to ω_T.
const WINDOW_EDGE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RegionReport {
    /// γ_T/(γ_T + 4v_p), (ω_T − 2v_x)/ω_T and γ_T·g²·ω_T²/(ω_M·χ²).
    pub ratios: [f64; 3],
    pub threshold: f64,
    /// threshold − ratio for each ratio; negative means outside.
    pub margins: [f64; 3],
    pub ratios_ok: bool,
    pub in_window: bool,
    pub purpose: Purpose,
}

impl RegionReport {
    pub fn pass(&self) -> bool {
        self.ratios_ok && self.in_window
    }
}

/// Evaluates the three region ratios and the purpose window. A ratio passes
/// when it lies in [0, threshold); the lower end is closed because
/// v_x = ω_T/2 puts the second ratio at exactly zero.
pub fn check_gain_region(
    g: &ControlGains,
    d: &DerivedParams,
    p: &PhysicalParams,
    purpose: Purpose,
    threshold: f64,
) -> RegionReport {
    let chi = chi(g, p.omega_t, p.gamma_t);
    let ratios = [
        p.gamma_t / (p.gamma_t + 4.0 * g.v_p),
        (p.omega_t - 2.0 * g.v_x) / p.omega_t,
        p.gamma_t * d.g_mt * d.g_mt * p.omega_t * p.omega_t / (p.omega_m * chi * chi),
    ];
    let margins = ratios.map(|r| threshold - r);
    let ratios_ok = ratios.iter().all(|&r| r.is_finite() && (0.0..threshold).contains(&r));
    let (lo, hi) = purpose.window();
    let r = g.v_p / p.omega_t;
    let in_window = (g.v_x / p.omega_t - 0.5).abs() <= WINDOW_EDGE_TOL
        && r >= lo - WINDOW_EDGE_TOL
        && r <= hi + WINDOW_EDGE_TOL;
    RegionReport { ratios, threshold, margins, ratios_ok, in_window, purpose }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    /// Predicted variances in units of ħ.
    pub v_x: f64,
    pub v_p: f64,
    /// ξ from the exact Re ξ_M.
    pub xi: f64,
    /// ξ from the approximate Re ξ_M.
    pub xi_approx: f64,
    pub re_xi_m: f64,
    pub re_xi_m_approx: f64,
}

/// ξ = (ω_M − 2Re ξ_M)/(ω_M + 2Re ξ_M), V_x = ½√(ξ/η), V_p = ½/√(ξη).
pub fn closed_form_prediction(
    g: &ControlGains,
    rc: &ReducedCoeffs,
    d: &DerivedParams,
    p: &PhysicalParams,
) -> Result<Prediction> {
    let _ = d;
    let re = rc.xi_m.re;
    let re_approx = re_xi_approx(g, rc, p.omega_t);
    let xi_of = |r: f64| (p.omega_m - 2.0 * r) / (p.omega_m + 2.0 * r);
    let xi = xi_of(re);
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::OutOfValidity(format!("xi = {xi} is not positive")));
    }
    Ok(Prediction {
        v_x: 0.5 * (xi / p.eta).sqrt(),
        v_p: 0.5 / (xi * p.eta).sqrt(),
        xi,
        xi_approx: xi_of(re_approx),
        re_xi_m: re,
        re_xi_m_approx: re_approx,
    })
}

/// Beam-mode data shared by both engines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedParams {
    pub omega_m: f64,
    pub gamma_m: f64,
    pub nbar_m: f64,
    pub gamma_t: f64,
    pub eta: f64,
}

impl ReducedParams {
    pub fn new(p: &PhysicalParams, d: &DerivedParams) -> Self {
        Self {
            omega_m: p.omega_m,
            gamma_m: d.gamma_m,
            nbar_m: d.nbar_m,
            gamma_t: p.gamma_t,
            eta: p.eta,
        }
    }

    pub fn meas_strength(&self) -> f64 {
        (self.eta * self.gamma_t).sqrt()
    }
}

/// Moment model of the reduced equation.
pub fn reduced_gaussian_model(rp: &ReducedParams, rc: &ReducedCoeffs, g: &ControlGains) -> LinearGaussianModel {
    let z = C64::new(0.0, 0.0);
    let sq = |x: f64| C64::new(x.sqrt(), 0.0);
    let f_x = hermitian_quadrature(rc.alpha_x);
    let f_p = hermitian_quadrature(rc.alpha_p);
    let st = rp.gamma_t.sqrt();
    LinearGaussianModel {
        g: quadratic_form(rp.omega_m, rc.xi_m),
        channels: vec![
            (sq(rp.gamma_m * (rp.nbar_m + 1.0)), z),
            (z, sq(rp.gamma_m * rp.nbar_m)),
            (rc.c1 * st, rc.c2 * st),
        ],
        measured: Some(((rc.c1, rc.c2), rp.meas_strength())),
        f_ctrl: f_x,
        fb_row: f_x * (-g.v_x) + f_p * g.v_p,
    }
}

/// Stationary reduced moments in units of ħ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryMoments {
    pub v_xm: f64,
    pub v_pm: f64,
    pub c_xmpm: f64,
    pub v_mean_xm: f64,
    pub v_mean_pm: f64,
    pub mean_xm: f64,
    pub mean_pm: f64,
    pub nbar: f64,
    pub windows: usize,
}

impl StationaryMoments {
    pub fn from_moments(m: &Moments, windows: usize) -> Self {
        Self {
            v_xm: m.v[(0, 0)],
            v_pm: m.v[(1, 1)],
            c_xmpm: m.v[(0, 1)],
            v_mean_xm: m.m[(0, 0)],
            v_mean_pm: m.m[(1, 1)],
            mean_xm: m.mean[0],
            mean_pm: m.mean[1],
            nbar: m.occupation(),
            windows,
        }
    }
}

/// Integrates the covariance and mean-covariance equations to stationarity.
pub fn gaussian_moment_flow(
    g: &ControlGains,
    rc: &ReducedCoeffs,
    rp: &ReducedParams,
    x0: &Moments,
    cfg: &FlowConfig,
) -> Result<StationaryMoments> {
    let model = reduced_gaussian_model(rp, rc, g);
    let r = stationary_flow(&model, x0, cfg)?;
    Ok(StationaryMoments::from_moments(&r.moments, r.windows))
}

/// Moments after a finite time, for comparison with ensembles.
pub fn gaussian_moments_at(g: &ControlGains, rc: &ReducedCoeffs, rp: &ReducedParams, x0: &Moments, t: f64) -> Moments {
    evolve(&reduced_gaussian_model(rp, rc, g), x0, t, 0.02)
}

/// Beam operators of the reduced equation on `levels` Fock states.
#[derive(Clone, Debug)]
pub struct ReducedOperators {
    pub b: ComplexMatrix,
    pub h0: ComplexMatrix,
    pub collapse: ComplexMatrix,
    pub x_op: ComplexMatrix,
    pub p_op: ComplexMatrix,
}

impl ReducedOperators {
    pub fn new(levels: usize, rp: &ReducedParams, rc: &ReducedCoeffs) -> Result<Self> {
        let b = fock_annihilation(levels)?;
        let bd = b.dagger();
        let b2 = &b * &b;
        let h0 = &(&(&bd * &b).scale_re(rp.omega_m) + &b2.scale(rc.xi_m)) + &b2.dagger().scale(rc.xi_m.conj());
        let collapse = &b.scale(rc.c1) + &bd.scale(rc.c2);
        let x_op = &b.scale(rc.alpha_x) + &bd.scale(rc.alpha_x.conj());
        let p_op = &b.scale(rc.alpha_p) + &bd.scale(rc.alpha_p.conj());
        Ok(Self { b, h0, collapse, x_op, p_op })
    }
}

/// One literal Euler–Maruyama step of the reduced equation with the
/// self-consistent control ũ = −v_x⟨X⟩ + v_p⟨P⟩ taken from `rho`.
#[allow(clippy::too_many_arguments)]
pub fn reduced_sme_step(
    rho: &DensityState,
    rc: &ReducedCoeffs,
    rp: &ReducedParams,
    g: &ControlGains,
    dw: f64,
    dt: f64,
) -> Result<(DensityState, f64)> {
    let ops = ReducedOperators::new(rho.dim(), rp, rc)?;
    let u = -g.v_x * expectation(&ops.x_op, rho)?.re + g.v_p * expectation(&ops.p_op, rho)?.re;
    let h = &ops.h0 + &ops.x_op.scale_re(u);
    let mut drift = (&h * &rho.matrix - &rho.matrix * &h).scale(-I);
    let bd = ops.b.dagger();
    drift = &drift + &dissipator(&bd.scale_re((rp.gamma_m * rp.nbar_m).sqrt()), rho)?;
    drift = &drift + &dissipator(&ops.b.scale_re((rp.gamma_m * (rp.nbar_m + 1.0)).sqrt()), rho)?;
    drift = &drift + &dissipator(&ops.collapse.scale_re(rp.gamma_t.sqrt()), rho)?;
    let s = rp.meas_strength();
    let meas = meas_superop(&ops.collapse, rho)?;
    let mean = 2.0 * expectation(&ops.collapse, rho)?.re;
    let next = &rho.matrix + &(&drift.scale_re(dt) + &meas.scale_re(s * dw));
    if !next.all_finite() {
        return Err(Error::Blowup { step: 0 });
    }
    let sym = (&next + &next.dagger()).scale_re(0.5);
    let tr = sym.trace().re;
    let out = DensityState::new_unchecked(rho.space.clone(), sym.scale_re(1.0 / tr))?;
    Ok((out, s * mean * dt + dw))
}

/// Compiled reduced density-matrix engine.
#[derive(Clone, Debug)]
pub struct ReducedSme {
    pub levels: usize,
    pub gains: ControlGains,
    pub dt: f64,
    pub scheme: Scheme,
    pub positivity_stride: u64,
    template: SmeStepper,
    x_obs: Observable,
    p_obs: Observable,
    x_op: SparseOp,
    p_op: SparseOp,
}

/// Final beam moments of one reduced trajectory.
#[derive(Clone, Debug)]
pub struct ReducedOutcome {
    pub moments: BeamMoments,
    pub stats: StepStats,
    /// Smallest V_x·V_p seen at the sampled steps.
    pub min_robertson: f64,
    /// Population of the top two Fock levels at the end.
    pub leakage: f64,
    pub final_state: DMatrix<C64>,
}

impl ReducedSme {
    pub fn new(
        levels: usize,
        rp: &ReducedParams,
        rc: &ReducedCoeffs,
        g: &ControlGains,
        dt: f64,
        scheme: Scheme,
    ) -> Result<Self> {
        let ops = ReducedOperators::new(levels, rp, rc)?;
        let bd = ops.b.dagger();
        let sme = SmeModel {
            h0: ops.h0.clone(),
            channels: vec![
                bd.scale_re((rp.gamma_m * rp.nbar_m).sqrt()),
                ops.b.scale_re((rp.gamma_m * (rp.nbar_m + 1.0)).sqrt()),
                ops.collapse.scale_re(rp.gamma_t.sqrt()),
            ],
            measured: ops.collapse.clone(),
            meas_strength: rp.meas_strength(),
            control: Some(ControlOp::new(&ops.x_op, &ops.x_op)),
        };
        let mut template = SmeStepper::new(&sme, dt, scheme)?;
        template.merge_half_steps = true;
        Ok(Self {
            levels,
            gains: *g,
            dt,
            scheme,
            positivity_stride: 1,
            x_obs: template.observable(&ops.x_op),
            p_obs: template.observable(&ops.p_op),
            x_op: SparseOp::from_dense(&ops.x_op, 0.0),
            p_op: SparseOp::from_dense(&ops.p_op, 0.0),
            template,
        })
    }

    pub fn control(&self, rho: &DMatrix<C64>) -> f64 {
        -self.gains.v_x * self.x_op.expectation(rho).re + self.gains.v_p * self.p_op.expectation(rho).re
    }

    /// Runs trajectory `index` for `steps` steps from `rho0`. The Robertson
    /// product is sampled every `sample_every` steps.
    pub fn run(
        &self,
        rho0: &DMatrix<C64>,
        steps: usize,
        seed: u64,
        index: u64,
        sample_every: usize,
    ) -> Result<ReducedOutcome> {
        self.run_inner(rho0, steps, seed, index, sample_every, None)
    }

    /// As `run`, also recording a sample every `record_stride` steps.
    pub fn run_recorded(
        &self,
        rho0: &DMatrix<C64>,
        steps: usize,
        seed: u64,
        index: u64,
        record_stride: usize,
    ) -> Result<(ReducedOutcome, TrajectoryRecord)> {
        let mut samples = Vec::with_capacity(steps / record_stride.max(1) + 1);
        let out = self.run_inner(rho0, steps, seed, index, record_stride, Some(&mut samples))?;
        let record = TrajectoryRecord {
            dt: self.dt,
            meas_strength: self.template.meas_strength(),
            samples,
            stats: out.stats,
            warnings: Vec::new(),
        };
        Ok((out, record))
    }

    fn run_inner(
        &self,
        rho0: &DMatrix<C64>,
        steps: usize,
        seed: u64,
        index: u64,
        sample_every: usize,
        mut record: Option<&mut Vec<Sample>>,
    ) -> Result<ReducedOutcome> {
        let mut st = self.template.clone();
        st.positivity_stride = self.positivity_stride;
        let probes = Probes::beam(self.levels)?;
        let mut rng = NormalStream::substream(seed, index);
        let mut rho = rho0.clone();
        let mut min_rob = f64::INFINITY;
        for k in 0..steps {
            let u = -self.gains.v_x * st.expect(&self.x_obs, &rho).re + self.gains.v_p * st.expect(&self.p_obs, &rho).re;
            let dw = rng.wiener(self.dt);
            let out = st.step(&mut rho, u, dw, k)?;
            if sample_every > 0 && (k + 1) % sample_every == 0 {
                st.sync(&mut rho);
                let m = probes.beam_moments(&rho);
                min_rob = min_rob.min(m.v_x() * m.v_p());
                if let Some(rec) = record.as_deref_mut() {
                    let t = (k + 1) as f64 * self.dt;
                    rec.push(probes.sample(&rho, t, out.dy, u, st.stats.repairs, out.meas_mean));
                }
            }
        }
        st.sync(&mut rho);
        let moments = probes.beam_moments(&rho);
        min_rob = min_rob.min(moments.v_x() * moments.v_p());
        let n = self.levels;
        let leakage = rho[(n - 1, n - 1)].re + rho[(n - 2, n - 2)].re;
        Ok(ReducedOutcome { moments, stats: st.stats, min_robertson: min_rob, leakage, final_state: rho })
    }

    /// Independent trajectories on the rayon pool, ordered by index.
    pub fn ensemble(
        &self,
        rho0: &DMatrix<C64>,
        steps: usize,
        seed: u64,
        n_traj: usize,
        sample_every: usize,
    ) -> Result<Vec<ReducedOutcome>> {
        (0..n_traj as u64)
            .into_par_iter()
            .map(|i| self.run(rho0, steps, seed, i, sample_every))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::M2;
    use crate::system::{derive_params, reference_overrides, EpsDeltaConvention};

    fn reference() -> (PhysicalParams, DerivedParams) {
        let p = PhysicalParams::reference_device();
        let d = derive_params(&p, &reference_overrides(), EpsDeltaConvention::Angular).unwrap();
        (p, d)
    }

    #[test]
    fn zero_gains_collapse() {
        let (p, d) = reference();
        let rc = compute_coeffs(&ControlGains::default(), &d, &p).unwrap();
        assert_eq!(rc.c2, C64::new(0.0, 0.0));
        assert_eq!(rc.xi_m, C64::new(0.0, 0.0));
        let ops = ReducedOperators::new(6, &ReducedParams::new(&p, &d), &rc).unwrap();
        // no b² entries: H is diagonal
        for r in 0..6 {
            for c in 0..6 {
                if r != c {
                    assert_eq!(ops.h0.get(r, c), C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn alpha_identities() {
        let (p, d) = reference();
        for (vx, vp) in [(0.5, 0.75), (0.1, -0.3), (0.9, 0.2)] {
            let g = ControlGains::new(vx * p.omega_t, vp * p.omega_t);
            let rc = compute_coeffs(&g, &d, &p).unwrap();
            assert_eq!(rc.alpha_x, rc.c1 + rc.c2.conj());
            assert_eq!(rc.alpha_p, -I * rc.c1 + I * rc.c2.conj());
        }
    }

    #[test]
    fn coefficients_solve_the_stationary_resonator_equation() {
        // 0 = (−iω_T − γ_T/2 + iv_x − v_p)·a + (iv_x + v_p)·a† + g·b at σ_z = −1,
        // together with its adjoint, solved as a linear system in (a, a†)
        let (p, d) = reference();
        let g = ControlGains::new(0.5 * p.omega_t, 0.75 * p.omega_t);
        let (w, gt, gm) = (p.omega_t, p.gamma_t, d.g_mt);
        let m11 = C64::new(-0.5 * gt - g.v_p, -w + g.v_x);
        let m12 = C64::new(g.v_p, g.v_x);
        let m21 = C64::new(g.v_p, -g.v_x);
        let m22 = C64::new(-0.5 * gt - g.v_p, w - g.v_x);
        let det = m11 * m22 - m12 * m21;
        // a = C1 b + C2 b†: right-hand side −g·(b, b†)
        let c1 = (m22 * (-gm)) / det;
        let c2 = (-m12 * (-gm)) / det;
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        // χ cancels ω_T² to about ω_T²/290 here, which costs two to three digits
        assert!((rc.c1 - c1).norm() < 1e-12 * c1.norm());
        assert!((rc.c2 - c2).norm() < 1e-12 * c2.norm());
        assert!((det.re - rc.chi).abs() < 1e-12 * rc.chi.abs());
    }

    #[test]
    fn frozen_coefficients_at_the_squeezing_point() {
        // exact rational evaluation of the same inputs, rounded to 17 digits
        let (p, d) = reference();
        let g = ControlGains::new(0.5 * p.omega_t, 0.75 * p.omega_t);
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        let want_c1 = C64::new(0.24537925696594426, -0.16308049535603714);
        let want_c2 = C64::new(0.2446207430340557, 0.16308049535603714);
        let want_xi = C64::new(898170160.7855562, -2166500384.200733);
        assert!((rc.c1 - want_c1).norm() < 1e-14 * want_c1.norm(), "{:?}", rc.c1);
        assert!((rc.c2 - want_c2).norm() < 1e-14 * want_c2.norm(), "{:?}", rc.c2);
        assert!((rc.xi_m - want_xi).norm() < 1e-13 * want_xi.norm(), "{:?}", rc.xi_m);
    }

    #[test]
    fn near_singular_gains_are_rejected() {
        let (p, d) = reference();
        // χ = 0 at v_p = 0 requires ω_T(ω_T − 2v_x) = −γ_T²/4
        let vx = 0.5 * (p.omega_t + p.gamma_t * p.gamma_t / (4.0 * p.omega_t));
        let r = compute_coeffs(&ControlGains::new(vx, 0.0), &d, &p);
        assert!(matches!(r, Err(Error::NearSingularGain { .. })));
    }

    #[test]
    fn region_examples() {
        let (p, d) = reference();
        let w = p.omega_t;
        let r = check_gain_region(&ControlGains::new(0.5 * w, 0.75 * w), &d, &p, Purpose::SqueezeX, REGION_THRESHOLD);
        assert!(r.pass(), "{r:?}");
        let r = check_gain_region(&ControlGains::new(0.5 * w, 0.4 * w), &d, &p, Purpose::SqueezeP, REGION_THRESHOLD);
        assert!(r.pass(), "{r:?}");
        let r = check_gain_region(&ControlGains::default(), &d, &p, Purpose::Cool, REGION_THRESHOLD);
        assert!(!r.pass());
        assert_eq!(r.ratios[0], 1.0);
        assert_eq!(r.ratios[1], 1.0);
    }

    #[test]
    fn prediction_examples() {
        let (mut p, d) = reference();
        p.eta = 0.6;
        let g = ControlGains::new(0.0, 0.0);
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        let pr = closed_form_prediction(&g, &rc, &d, &p).unwrap();
        assert_eq!(pr.xi, 1.0);
        assert!((pr.v_x - 0.5 / 0.6f64.sqrt()).abs() < 1e-15);
        assert!((pr.v_x - 0.6455).abs() < 1e-4);
        let w = p.omega_t;
        let g = ControlGains::new(0.5 * w, 0.75 * w);
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        let pr = closed_form_prediction(&g, &rc, &d, &p).unwrap();
        assert!(pr.re_xi_m_approx > 0.0 && pr.xi_approx < 1.0);
        assert!(pr.v_x < 0.5 / p.eta.sqrt());
        // equal gains cancel the approximate two-photon strength
        let g = ControlGains::new(0.4 * w, 0.4 * w);
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        assert_eq!(re_xi_approx(&g, &rc, w), 0.0);
    }

    #[test]
    fn thermal_competition_fixed_point() {
        let (p, d) = reference();
        let rp = ReducedParams::new(&p, &d);
        let g = ControlGains::default();
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        let r = gaussian_moment_flow(&g, &rc, &rp, &Moments::thermal(rp.nbar_m), &FlowConfig::for_rate(rp.gamma_m))
            .unwrap();
        let want = rp.gamma_m * rp.nbar_m / (rp.gamma_m + rp.gamma_t * rc.c1.norm_sqr());
        assert!((r.nbar - want).abs() < 1e-6 * want);
    }

    #[test]
    fn pure_two_photon_evolution_preserves_the_covariance_determinant() {
        let rp = ReducedParams { omega_m: 1.0, gamma_m: 0.0, nbar_m: 0.0, gamma_t: 0.0, eta: 0.0 };
        let rc = ReducedCoeffs {
            c1: C64::new(0.0, 0.0),
            c2: C64::new(0.0, 0.0),
            chi: 1.0,
            alpha_x: C64::new(0.0, 0.0),
            alpha_p: C64::new(0.0, 0.0),
            xi_m: C64::new(0.3, 0.0),
            g_mt: 0.0,
        };
        let x0 = Moments { v: M2::new(0.7, 0.1, 0.1, 0.5), ..Moments::thermal(0.0) };
        let m = gaussian_moments_at(&ControlGains::default(), &rc, &rp, &x0, 3.0);
        assert!((m.v.determinant() - x0.v.determinant()).abs() < 1e-10);
        // G = diag(1.6, 0.4): elliptic rotation, one principal variance shrinks while the other grows
        let e0 = x0.v.symmetric_eigenvalues();
        let e1 = m.v.symmetric_eigenvalues();
        assert!((e0[0] - e1[0]).abs() > 1e-3);
        assert!(((e0[0] * e0[1]) - (e1[0] * e1[1])).abs() < 1e-10);
    }

    #[test]
    fn compiled_euler_matches_literal_step() {
        let (p, d) = reference();
        let mut rp = ReducedParams::new(&p, &d);
        rp.gamma_m = p.omega_m / 20.0;
        let w = p.omega_t;
        let g = ControlGains::new(0.5 * w, 0.75 * w);
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        let dt = 1e-3 / p.omega_m;
        let eng = ReducedSme::new(8, &rp, &rc, &g, dt, Scheme::Euler).unwrap();
        let rho0 = DensityState::beam_coherent(8, C64::new(0.4, -0.2)).unwrap();
        let (lit, dy) = reduced_sme_step(&rho0, &rc, &rp, &g, 2e-7, dt).unwrap();
        let mut st = eng.template.clone();
        st.merge_half_steps = false;
        st.positivity_stride = 0;
        let mut rho = rho0.matrix.as_dmatrix().clone();
        let u = eng.control(&rho);
        let out = st.step(&mut rho, u, 2e-7, 0).unwrap();
        assert!((ComplexMatrix::from_dmatrix(rho) - lit.matrix).frobenius_norm() < 1e-12);
        assert!((out.dy - dy).abs() < 1e-18);
    }

    #[test]
    fn reduced_trajectories_are_reproducible() {
        let (p, d) = reference();
        let mut rp = ReducedParams::new(&p, &d);
        rp.gamma_m = p.omega_m / 20.0;
        let g = ControlGains::new(0.5 * p.omega_t, 0.75 * p.omega_t);
        let rc = compute_coeffs(&g, &d, &p).unwrap();
        let eng = ReducedSme::new(10, &rp, &rc, &g, 0.05 / p.omega_m, Scheme::Split).unwrap();
        let rho0 = DensityState::beam_thermal(10, 0.5).unwrap();
        let a = eng.run(rho0.matrix.as_dmatrix(), 200, 3, 1, 10).unwrap();
        let b = eng.run(rho0.matrix.as_dmatrix(), 200, 3, 1, 10).unwrap();
        assert_eq!(a.final_state, b.final_state);
    }
}
