// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Quadratures, conditional variances and reductions over the noise
//! ensemble. Everything is in units of ħ.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::full_sme::BeamMoments;
use crate::operators::{embed, expectation, fock_annihilation, partial_trace, ComplexMatrix, DensityState, HilbertSpec, Slot, I};
use crate::system::{HBAR, K_B, TWO_PI};

/// Smallest conditional variance accepted before it counts as negative.
pub const VARIANCE_FLOOR: f64 = -1e-10;
/// Slack on the Robertson bound for truncated states.
pub const ROBERTSON_TOL: f64 = 1e-8;
/// Products up to this multiple of 1/(4η) count as near the efficiency limit.
pub const NEAR_LIMIT_FACTOR: f64 = 2.0;
/// Standard errors are unreliable below this many trajectories.
pub const MIN_TRAJECTORIES_FOR_SE: usize = 30;

/// x = (c + c†)/√2 and p = −i(c − c†)/√2 for the beam (M) and resonator (T).
#[derive(Clone, Debug)]
pub struct QuadratureSet {
    pub x_m: ComplexMatrix,
    pub p_m: ComplexMatrix,
    pub x_t: ComplexMatrix,
    pub p_t: ComplexMatrix,
}

fn quadratures(c: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let cd = c.dagger();
    ((c + &cd).scale_re(s), (c - &cd).scale(-I * s))
}

impl QuadratureSet {
    pub fn new(space: &HilbertSpec) -> Result<Self> {
        let b = embed(&fock_annihilation(space.n_beam)?, Slot::Beam, space)?;
        let a = embed(&fock_annihilation(space.n_tlr)?, Slot::Tlr, space)?;
        let (x_m, p_m) = quadratures(&b);
        let (x_t, p_t) = quadratures(&a);
        Ok(Self { x_m, p_m, x_t, p_t })
    }

    /// Beam quadratures on the beam space alone; the resonator pair is empty.
    pub fn beam(levels: usize) -> Result<(ComplexMatrix, ComplexMatrix)> {
        Ok(quadratures(&fock_annihilation(levels)?))
    }
}

/// (V_x, V_p) of the beam in state `rho`, tracing out the other factors.
pub fn conditional_variances(rho: &DensityState) -> Result<(f64, f64)> {
    let beam = if rho.space.factors().len() == 1 {
        if rho.space.factors()[0].0 != Slot::Beam {
            return Err(Error::ShapeMismatch { expected: "a beam factor".into(), found: rho.space.factors()[0].0.name().into() });
        }
        rho.clone()
    } else {
        partial_trace(rho, &[Slot::Beam])?
    };
    let (x, p) = QuadratureSet::beam(beam.dim())?;
    let var = |q: &ComplexMatrix| -> Result<f64> {
        let m = expectation(q, &beam)?.re;
        Ok(expectation(&(q * q), &beam)?.re - m * m)
    };
    let (vx, vp) = (var(&x)?, var(&p)?);
    if vx < VARIANCE_FLOOR || vp < VARIANCE_FLOOR {
        return Err(Error::NegativeInput(format!("conditional variances ({vx:.3e}, {vp:.3e})")));
    }
    Ok((vx, vp))
}

/// Conditional first and second moments of one trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub v_x: f64,
    pub v_p: f64,
}

impl From<&BeamMoments> for QuadMoments {
    fn from(m: &BeamMoments) -> Self {
        Self { mean_x: m.exp_x(), mean_p: m.exp_p(), v_x: m.v_x(), v_p: m.v_p() }
    }
}

impl QuadMoments {
    fn total_cmp(&self, other: &Self) -> Ordering {
        self.mean_x
            .total_cmp(&other.mean_x)
            .then(self.mean_p.total_cmp(&other.mean_p))
            .then(self.v_x.total_cmp(&other.v_x))
            .then(self.v_p.total_cmp(&other.v_p))
    }
}

/// A statistic with its jackknife standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// |a − b| in units of the combined standard error.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = self.se.hypot(other.se);
        if se > 0.0 {
            (self.value - other.value).abs() / se
        } else if self.value == other.value {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Ensemble statistics over the measurement noise.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    /// Mean of the conditional means.
    pub mean_xm: Estimate,
    pub mean_pm: Estimate,
    /// Averaged conditional variances.
    pub v_xm: Estimate,
    pub v_pm: Estimate,
    /// Spread of the conditional means (1/N normalization).
    pub v_mean_xm: Estimate,
    pub v_mean_pm: Estimate,
    /// Total variances V + V_mean.
    pub v_total_xm: Estimate,
    pub v_total_pm: Estimate,
    pub nbar: Estimate,
    pub teff_angular: Option<f64>,
    pub teff_linear: Option<f64>,
    pub n_traj: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    n: f64,
    mx: f64,
    mp: f64,
    vx: f64,
    vp: f64,
    mx2: f64,
    mp2: f64,
}

impl Sums {
    fn add(&mut self, q: &QuadMoments, sign: f64) {
        self.n += sign;
        self.mx += sign * q.mean_x;
        self.mp += sign * q.mean_p;
        self.vx += sign * q.v_x;
        self.vp += sign * q.v_p;
        self.mx2 += sign * q.mean_x * q.mean_x;
        self.mp2 += sign * q.mean_p * q.mean_p;
    }

    /// [x̄, p̄, V_x, V_p, V_⟨x⟩, V_⟨p⟩, total x, total p, n̄]
    fn stats(&self) -> [f64; 9] {
        let n = self.n;
        let (mx, mp) = (self.mx / n, self.mp / n);
        let (vx, vp) = (self.vx / n, self.vp / n);
        let vmx = (self.mx2 / n - mx * mx).max(0.0);
        let vmp = (self.mp2 / n - mp * mp).max(0.0);
        let nbar = 0.5 * (vx + vp) - 0.5 + 0.5 * (vmx + vmp) + 0.5 * (mx * mx + mp * mp);
        [mx, mp, vx, vp, vmx, vmp, vx + vmx, vp + vmp, nbar]
    }
}

/// Reduces per-trajectory moments. The input is sorted first, so the result
/// is bit-identical under any reordering or batching of trajectories.
pub fn ensemble_reduce(trajectories: &[QuadMoments], omega_m: f64) -> Result<EnsembleStats> {
    if trajectories.is_empty() {
        return Err(Error::EmptyInput);
    }
    if trajectories.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: trajectories.len() });
    }
    let mut sorted = trajectories.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut all = Sums::default();
    for q in &sorted {
        all.add(q, 1.0);
    }
    let full = all.stats();
    // jackknife over leave-one-out sums
    let n = sorted.len() as f64;
    let mut jmean = [0.0; 9];
    let mut loo = Vec::with_capacity(sorted.len());
    for q in &sorted {
        let mut s = all;
        s.add(q, -1.0);
        let st = s.stats();
        for k in 0..9 {
            jmean[k] += st[k] / n;
        }
        loo.push(st);
    }
    let mut se = [0.0; 9];
    for st in &loo {
        for k in 0..9 {
            se[k] += (st[k] - jmean[k]).powi(2);
        }
    }
    let est = |k: usize| Estimate { value: full[k], se: ((n - 1.0) / n * se[k]).sqrt() };
    let mut warnings = Vec::new();
    if sorted.len() < MIN_TRAJECTORIES_FOR_SE {
        warnings.push(format!(
            "{} trajectories; standard errors need at least {MIN_TRAJECTORIES_FOR_SE}",
            sorted.len()
        ));
    }
    let nbar = est(8);
    let teff = |c| effective_temperature(nbar.value, omega_m, c).ok();
    Ok(EnsembleStats {
        mean_xm: est(0),
        mean_pm: est(1),
        v_xm: est(2),
        v_pm: est(3),
        v_mean_xm: est(4),
        v_mean_pm: est(5),
        v_total_xm: est(6),
        v_total_pm: est(7),
        nbar,
        teff_angular: teff(TempConvention::Angular),
        teff_linear: teff(TempConvention::Linear),
        n_traj: sorted.len(),
        warnings,
    })
}

/// Energy quantum used in the occupation–temperature relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TempConvention {
    /// ħ·ω_M with ω_M in rad/s.
    Angular,
    /// ħ·(ω_M/2π): the frequency in Hz taken as if it were rad/s. This is
    /// the convention under which the quoted millikelvin temperatures follow
    /// from the quoted occupations.
    Linear,
}

impl TempConvention {
    pub fn name(self) -> &'static str {
        match self {
            TempConvention::Angular => "angular",
            TempConvention::Linear => "linear",
        }
    }

    fn quantum(self, omega_m: f64) -> f64 {
        match self {
            TempConvention::Angular => HBAR * omega_m,
            TempConvention::Linear => HBAR * omega_m / TWO_PI,
        }
    }
}

/// T = E / (k_B ln((n̄ + 1)/n̄)) in kelvin.
pub fn effective_temperature(nbar: f64, omega_m: f64, convention: TempConvention) -> Result<f64> {
    if !(nbar > 0.0) || !nbar.is_finite() {
        return Err(Error::OutOfValidity(format!("effective temperature needs nbar > 0, got {nbar}")));
    }
    // ln(1 + 1/n̄) keeps precision at large n̄
    Ok(convention.quantum(omega_m) / (K_B * (1.0 / nbar).ln_1p()))
}

/// Inverse of `effective_temperature`.
pub fn occupation_at(t: f64, omega_m: f64, convention: TempConvention) -> f64 {
    1.0 / (convention.quantum(omega_m) / (K_B * t)).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UncertaintyClass {
    /// Below ¼: impossible for a quantum state.
    BelowRobertson,
    /// Within `NEAR_LIMIT_FACTOR` of 1/(4η).
    NearEfficiencyLimit,
    ThermalScale,
}

impl UncertaintyClass {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintyClass::BelowRobertson => "below-robertson",
            UncertaintyClass::NearEfficiencyLimit => "near-efficiency-limit",
            UncertaintyClass::ThermalScale => "thermal-scale",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyReport {
    pub product: f64,
    /// product / (1/(4η))
    pub limit_ratio: f64,
    pub class: UncertaintyClass,
    pub squeezed_x: bool,
    pub squeezed_p: bool,
}

pub fn uncertainty_product(v_x: f64, v_p: f64, eta: f64) -> Result<UncertaintyReport> {
    if v_x < 0.0 || v_p < 0.0 || !v_x.is_finite() || !v_p.is_finite() {
        return Err(Error::NegativeInput(format!("variances ({v_x}, {v_p})")));
    }
    let product = v_x * v_p;
    let limit = 0.25 / eta;
    let class = if product < 0.25 - ROBERTSON_TOL {
        UncertaintyClass::BelowRobertson
    } else if product <= NEAR_LIMIT_FACTOR * limit {
        UncertaintyClass::NearEfficiencyLimit
    } else {
        UncertaintyClass::ThermalScale
    };
    Ok(UncertaintyReport { product, limit_ratio: product / limit, class, squeezed_x: v_x < 0.5, squeezed_p: v_p < 0.5 })
}
