// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Conditional evolution of the joint beam ⊗ qubit ⊗ resonator state under
//! homodyne monitoring of the resonator.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operators::{
    dissipator, fock_annihilation, meas_superop, ComplexMatrix, DensityState, FactorSpace, HilbertSpec, Slot, C64,
    I,
};
use crate::rng::NormalStream;
use crate::sme::{ControlOp, Scheme, SmeModel, SmeStepper, StepStats};
use crate::sparse::SparseOp;
use crate::system::{effective_from_ops, rwa_from_ops, DerivedParams, FullOperators, PhysicalParams};

/// Above this value of dt × (largest rate or frequency) a warning is recorded.
pub const STABILITY_GUARD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HamiltonianKind {
    Rwa,
    Effective,
}

impl HamiltonianKind {
    pub fn name(self) -> &'static str {
        match self {
            HamiltonianKind::Rwa => "rwa",
            HamiltonianKind::Effective => "effective",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "rwa" => Some(HamiltonianKind::Rwa),
            "effective" => Some(HamiltonianKind::Effective),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmeConfig {
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub hamiltonian_kind: HamiltonianKind,
    /// Trace renormalization and positivity check stride.
    pub renormalize_every: usize,
    pub clamp_negativity: bool,
    /// Sample the record every this many steps.
    pub record_stride: usize,
    pub scheme: Scheme,
}

impl SmeConfig {
    /// dt = 2π/(200·ω_S).
    pub fn default_for(d: &DerivedParams, steps: usize, seed: u64) -> Self {
        Self {
            dt: std::f64::consts::TAU / (200.0 * d.omega_s),
            steps,
            seed,
            hamiltonian_kind: HamiltonianKind::Effective,
            renormalize_every: 1,
            clamp_negativity: true,
            record_stride: 1,
            scheme: Scheme::Split,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.renormalize_every == 0 || self.record_stride == 0 {
            return Err(Error::Config("renormalize_every and record_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Channel rates of the full model.
fn full_channels(ops: &FullOperators, p: &PhysicalParams, d: &DerivedParams) -> Vec<ComplexMatrix> {
    let bd = ops.b.dagger();
    vec![
        bd.scale_re((d.gamma_m * d.nbar_m).sqrt()),
        ops.b.scale_re((d.gamma_m * (d.nbar_m + 1.0)).sqrt()),
        ops.sz.scale_re(p.gamma_s.sqrt() * p.m_phi),
        ops.sm.scale_re(p.gamma_s.sqrt() * p.m_r),
        ops.a.scale_re(p.gamma_t.sqrt()),
    ]
}

/// One literal Euler–Maruyama step of the full conditional master equation
/// with dense operators, followed by symmetrization and trace renormalization.
pub fn sme_step(
    rho: &DensityState,
    h: &ComplexMatrix,
    d: &DerivedParams,
    p: &PhysicalParams,
    space: &HilbertSpec,
    dw: f64,
    dt: f64,
) -> Result<(DensityState, f64)> {
    let ops = FullOperators::new(*space)?;
    let mut drift = (h * &rho.matrix - &rho.matrix * h).scale(-I);
    for c in full_channels(&ops, p, d) {
        drift = &drift + &dissipator(&c, rho)?;
    }
    let s = (p.eta * p.gamma_t).sqrt();
    let meas = meas_superop(&ops.a, rho)?;
    let mean = 2.0 * crate::operators::expectation(&ops.a, rho)?.re;
    let next = &rho.matrix + &(&drift.scale_re(dt) + &meas.scale_re(s * dw));
    if !next.all_finite() {
        return Err(Error::Blowup { step: 0 });
    }
    let sym = (&next + &next.dagger()).scale_re(0.5);
    let tr = sym.trace().re;
    let out = DensityState::new_unchecked(rho.space.clone(), sym.scale_re(1.0 / tr))?;
    Ok((out, s * mean * dt + dw))
}

/// The compiled full model.
#[derive(Clone, Debug)]
pub struct FullModel {
    pub space: HilbertSpec,
    pub sme: SmeModel,
    /// Largest rate or frequency, for the stability guard.
    pub fastest: f64,
}

impl FullModel {
    pub fn new(p: &PhysicalParams, d: &DerivedParams, space: HilbertSpec, kind: HamiltonianKind) -> Result<Self> {
        let ops = FullOperators::new(space)?;
        let h0 = match kind {
            HamiltonianKind::Rwa => rwa_from_ops(&ops, p.omega_m, p.omega_t, d.omega_s, d.g_ms, p.g_st, 0.0),
            HamiltonianKind::Effective => effective_from_ops(&ops, p, d, 0.0),
        };
        let a_local = fock_annihilation(space.n_tlr)?;
        let x_local = &a_local + &a_local.dagger();
        let control = ControlOp::new(&x_local, &ops.xa());
        let fastest = [
            p.omega_m,
            p.omega_t,
            d.omega_s,
            p.gamma_s,
            p.gamma_t,
            d.gamma_m * (d.nbar_m + 1.0),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        Ok(Self {
            space,
            sme: SmeModel {
                h0,
                channels: full_channels(&ops, p, d),
                measured: ops.a.clone(),
                meas_strength: (p.eta * p.gamma_t).sqrt(),
                control: Some(control),
            },
            fastest,
        })
    }
}

/// Feedback hook. The controller only sees the measurement record.
pub trait Controller {
    /// Control amplitude for the next step.
    fn control(&mut self) -> f64;
    /// Consumes the record increment of the step just taken.
    fn observe(&mut self, dy: f64) -> Result<()>;
}

/// u ≡ 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullController;

impl Controller for NullController {
    fn control(&mut self) -> f64 {
        0.0
    }

    fn observe(&mut self, _dy: f64) -> Result<()> {
        Ok(())
    }
}

/// One sampled row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub dy: f64,
    pub u: f64,
    pub exp_xm: f64,
    pub exp_pm: f64,
    pub v_xm: f64,
    pub v_pm: f64,
    pub exp_xt: f64,
    pub exp_pt: f64,
    pub exp_sz: f64,
    pub repairs: u64,
    /// ⟨a + a†⟩ on the state the measurement acted on.
    pub meas_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub meas_strength: f64,
    pub samples: Vec<Sample>,
    pub stats: StepStats,
    pub warnings: Vec<String>,
}

pub const TRAJECTORY_COLUMNS: [&str; 11] = [
    "time_s", "dY", "u", "exp_xM", "exp_pM", "V_xM", "V_pM", "exp_xT", "exp_pT", "exp_sz", "repairs",
];

impl TrajectoryRecord {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(TRAJECTORY_COLUMNS)?;
        for s in &self.samples {
            wr.write_record(&[
                fmt(s.time),
                fmt(s.dy),
                fmt(s.u),
                fmt(s.exp_xm),
                fmt(s.exp_pm),
                fmt(s.v_xm),
                fmt(s.v_pm),
                fmt(s.exp_xt),
                fmt(s.exp_pt),
                fmt(s.exp_sz),
                s.repairs.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// Beam moments in units of ħ.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BeamMoments {
    pub mean_b: C64,
    pub b2: C64,
    pub nb: f64,
}

impl BeamMoments {
    pub fn exp_x(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.mean_b.re
    }

    pub fn exp_p(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.mean_b.im
    }

    /// ⟨x²⟩ − ⟨x⟩² with x = (b + b†)/√2.
    pub fn v_x(&self) -> f64 {
        self.b2.re + self.nb + 0.5 - 2.0 * self.mean_b.re * self.mean_b.re
    }

    /// ⟨p²⟩ − ⟨p⟩² with p = −i(b − b†)/√2.
    pub fn v_p(&self) -> f64 {
        -self.b2.re + self.nb + 0.5 - 2.0 * self.mean_b.im * self.mean_b.im
    }
}

/// Sparse probes for the recorded moments.
#[derive(Clone, Debug)]
pub struct Probes {
    b: SparseOp,
    b2: SparseOp,
    nb: SparseOp,
    a: Option<SparseOp>,
    sz: Option<SparseOp>,
}

impl Probes {
    pub fn full(space: &HilbertSpec) -> Result<Self> {
        let ops = FullOperators::new(*space)?;
        Ok(Self {
            b: SparseOp::from_dense(&ops.b, 0.0),
            b2: SparseOp::from_dense(&(&ops.b * &ops.b), 0.0),
            nb: SparseOp::from_dense(&ops.nb(), 0.0),
            a: Some(SparseOp::from_dense(&ops.a, 0.0)),
            sz: Some(SparseOp::from_dense(&ops.sz, 0.0)),
        })
    }

    pub fn beam(levels: usize) -> Result<Self> {
        let b = fock_annihilation(levels)?;
        Ok(Self {
            b: SparseOp::from_dense(&b, 0.0),
            b2: SparseOp::from_dense(&(&b * &b), 0.0),
            nb: SparseOp::from_dense(&(&b.dagger() * &b), 0.0),
            a: None,
            sz: None,
        })
    }

    pub fn beam_moments(&self, rho: &DMatrix<C64>) -> BeamMoments {
        BeamMoments {
            mean_b: self.b.expectation(rho),
            b2: self.b2.expectation(rho),
            nb: self.nb.expectation(rho).re,
        }
    }

    pub(crate) fn sample(&self, rho: &DMatrix<C64>, time: f64, dy: f64, u: f64, repairs: u64, meas_mean: f64) -> Sample {
        let m = self.beam_moments(rho);
        let a = self.a.as_ref().map(|a| a.expectation(rho)).unwrap_or_default();
        let sz = self.sz.as_ref().map(|s| s.expectation(rho).re).unwrap_or(0.0);
        Sample {
            time,
            dy,
            u,
            exp_xm: m.exp_x(),
            exp_pm: m.exp_p(),
            v_xm: m.v_x(),
            v_pm: m.v_p(),
            exp_xt: std::f64::consts::SQRT_2 * a.re,
            exp_pt: std::f64::consts::SQRT_2 * a.im,
            exp_sz: sz,
            repairs,
            meas_mean,
        }
    }
}

/// Thermal beam at `nbar`, qubit in its ground state, resonator in vacuum.
pub fn joint_initial_state(space: &HilbertSpec, nbar: f64) -> Result<DensityState> {
    let beam = DensityState::beam_thermal(space.n_beam, nbar)?;
    // σ_z = −1 on the second basis state
    let qubit = DensityState::new(
        FactorSpace::new(vec![(Slot::Qubit, 2)])?,
        ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 0.0, 1.0])?,
    )?;
    let tlr = DensityState::new(
        FactorSpace::new(vec![(Slot::Tlr, space.n_tlr)])?,
        DensityState::beam_fock(space.n_tlr, 0)?.matrix,
    )?;
    DensityState::product(&[&beam, &qubit, &tlr])
}

/// Final state, record and moments of one trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryOutcome {
    pub record: TrajectoryRecord,
    pub final_state: DMatrix<C64>,
    pub final_moments: BeamMoments,
}

/// Steps an SME from `rho0` with fresh increments from the substream
/// `seed ⊕ index`. Shared by the full and the beam-only engines.
#[allow(clippy::too_many_arguments)]
pub fn run_stepper(
    stepper: &mut SmeStepper,
    probes: &Probes,
    rho0: &DMatrix<C64>,
    steps: usize,
    record_stride: usize,
    seed: u64,
    index: u64,
    controller: &mut dyn Controller,
    dw_override: Option<&[f64]>,
) -> Result<TrajectoryOutcome> {
    let dt = stepper.dt();
    let mut rng = NormalStream::substream(seed, index);
    let mut rho = rho0.clone();
    let mut samples = Vec::with_capacity(steps / record_stride + 1);
    stepper.merge_half_steps = true;
    for k in 0..steps {
        let u = controller.control();
        let dw = match dw_override {
            Some(ws) => ws[k],
            None => rng.wiener(dt),
        };
        let out = stepper.step(&mut rho, u, dw, k)?;
        controller.observe(out.dy)?;
        if (k + 1) % record_stride == 0 {
            stepper.sync(&mut rho);
            samples.push(probes.sample(&rho, (k + 1) as f64 * dt, out.dy, u, stepper.stats.repairs, out.meas_mean));
        }
    }
    stepper.sync(&mut rho);
    let final_moments = probes.beam_moments(&rho);
    Ok(TrajectoryOutcome {
        record: TrajectoryRecord {
            dt,
            meas_strength: stepper.meas_strength(),
            samples,
            stats: stepper.stats,
            warnings: Vec::new(),
        },
        final_state: rho,
        final_moments,
    })
}

/// Prepares a stepper for the full model.
pub fn full_stepper(model: &FullModel, cfg: &SmeConfig) -> Result<SmeStepper> {
    cfg.validate()?;
    let mut st = SmeStepper::new(&model.sme, cfg.dt, cfg.scheme)?;
    st.positivity_stride = cfg.renormalize_every as u64;
    st.clamp_negativity = cfg.clamp_negativity;
    Ok(st)
}

fn guard_warnings(model: &FullModel, cfg: &SmeConfig) -> Vec<String> {
    let r = cfg.dt * model.fastest;
    if r >= STABILITY_GUARD {
        vec![format!("dt x fastest scale = {r:.3} exceeds {STABILITY_GUARD}")]
    } else {
        Vec::new()
    }
}

/// Single trajectory number `index` of the ensemble seeded by `cfg.seed`.
pub fn simulate_trajectory(
    model: &FullModel,
    rho0: &DensityState,
    cfg: &SmeConfig,
    controller: &mut dyn Controller,
    index: u64,
) -> Result<TrajectoryOutcome> {
    let template = full_stepper(model, cfg)?;
    let probes = Probes::full(&model.space)?;
    trajectory_from(&template, &probes, model, rho0, cfg, controller, index)
}

fn trajectory_from(
    template: &SmeStepper,
    probes: &Probes,
    model: &FullModel,
    rho0: &DensityState,
    cfg: &SmeConfig,
    controller: &mut dyn Controller,
    index: u64,
) -> Result<TrajectoryOutcome> {
    let mut st = template.clone();
    let mut out = run_stepper(
        &mut st,
        probes,
        rho0.matrix.as_dmatrix(),
        cfg.steps,
        cfg.record_stride,
        cfg.seed,
        index,
        controller,
        None,
    )?;
    out.record.warnings = guard_warnings(model, cfg);
    Ok(out)
}

/// Independent trajectories on the rayon pool; output order follows the index.
/// The propagators are compiled once and shared by all members.
pub fn simulate_ensemble<F, C>(
    model: &FullModel,
    rho0: &DensityState,
    cfg: &SmeConfig,
    n_traj: usize,
    make_controller: F,
) -> Result<Vec<TrajectoryOutcome>>
where
    F: Fn(u64) -> C + Sync,
    C: Controller,
{
    let template = full_stepper(model, cfg)?;
    let probes = Probes::full(&model.space)?;
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = make_controller(i);
            trajectory_from(&template, &probes, model, rho0, cfg, &mut c, i)
        })
        .collect()
}

/// Sample statistics of the reconstructed innovations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnovationReport {
    pub count: usize,
    pub dt: f64,
    pub mean: f64,
    pub variance: f64,
    /// Lag-one autocorrelation pooled over trajectories.
    pub lag1: f64,
    pub mean_bound: f64,
    pub mean_ok: bool,
    pub variance_ok: bool,
}

/// Fewest trajectories accepted by `innovation_stats`.
pub const MIN_INNOVATION_TRAJECTORIES: usize = 30;
/// Allowed relative deviation of var(dW)/dt from one.
pub const INNOVATION_VARIANCE_TOL: f64 = 0.05;

/// Reconstructs dW = dY − s⟨a + a†⟩dt and checks the Wiener contract.
pub fn innovation_stats(records: &[TrajectoryRecord]) -> Result<InnovationReport> {
    if records.len() < MIN_INNOVATION_TRAJECTORIES {
        return Err(Error::TooFewSamples {
            needed: MIN_INNOVATION_TRAJECTORIES,
            got: records.len(),
        });
    }
    let dt = records[0].dt;
    for r in records {
        if r.dt != dt {
            return Err(Error::DtMismatch { plant: dt, filter: r.dt });
        }
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut lag_num = 0.0;
    for r in records {
        let mut prev: Option<f64> = None;
        for s in &r.samples {
            let dw = reconstruct_dw(r, s);
            n += 1;
            sum += dw;
            sum2 += dw * dw;
            if let Some(p) = prev {
                lag_num += p * dw;
            }
            prev = Some(dw);
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mean = sum / n as f64;
    let variance = sum2 / n as f64 - mean * mean;
    let pairs = n - records.len();
    let lag1 = if pairs > 0 && variance > 0.0 {
        (lag_num / pairs as f64) / variance
    } else {
        0.0
    };
    let mean_bound = 4.0 * (dt / n as f64).sqrt();
    Ok(InnovationReport {
        count: n,
        dt,
        mean,
        variance,
        lag1,
        mean_bound,
        mean_ok: mean.abs() < mean_bound,
        variance_ok: (variance / dt - 1.0).abs() <= INNOVATION_VARIANCE_TOL,
    })
}

pub fn reconstruct_dw(r: &TrajectoryRecord, s: &Sample) -> f64 {
    s.dy - r.meas_strength * s.meas_mean * r.dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{embed, expectation, partial_trace, thermal_populations};
    use crate::system::{derive_params, reference_overrides, EpsDeltaConvention};

    fn small() -> (PhysicalParams, DerivedParams, HilbertSpec) {
        let p = PhysicalParams::reference_device();
        let d = derive_params(&p, &reference_overrides(), EpsDeltaConvention::Angular).unwrap();
        (p, d, HilbertSpec::new(3, 2, ).unwrap())
    }

    fn ground_product(space: &HilbertSpec, beam: usize, qubit_up: bool, tlr: usize) -> DensityState {
        let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
        let q = if qubit_up { 0 } else { 1 };
        psi[(beam * 2 + q) * space.n_tlr + tlr] = C64::new(1.0, 0.0);
        DensityState::from_pure(space.factor_space(), &psi).unwrap()
    }

    #[test]
    fn literal_step_agrees_with_compiled_euler() {
        let (p, d, space) = small();
        let model = FullModel::new(&p, &d, space, HamiltonianKind::Effective).unwrap();
        let cfg = SmeConfig {
            dt: 1e-13,
            scheme: Scheme::Euler,
            ..SmeConfig::default_for(&d, 1, 0)
        };
        let mut st = full_stepper(&model, &cfg).unwrap();
        st.positivity_stride = 0;
        // a superposition in the resonator so the measurement term acts
        let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
        psi[(0 * 2 + 1) * 2] = C64::new(0.8, 0.0);
        psi[(0 * 2 + 1) * 2 + 1] = C64::new(0.0, 0.6);
        let rho0 = DensityState::from_pure(space.factor_space(), &psi).unwrap();
        let h = build_h(&p, &d, &space);
        let (lit, dy_lit) = sme_step(&rho0, &h, &d, &p, &space, 3e-7, cfg.dt).unwrap();
        let mut rho = rho0.matrix.as_dmatrix().clone();
        let out = st.step(&mut rho, 0.0, 3e-7, 0).unwrap();
        let diff = (ComplexMatrix::from_dmatrix(rho) - lit.matrix.clone()).frobenius_norm();
        assert!(diff < 1e-12, "diff {diff}");
        assert!((out.dy - dy_lit).abs() < 1e-18);
    }

    fn build_h(p: &PhysicalParams, d: &DerivedParams, space: &HilbertSpec) -> ComplexMatrix {
        crate::system::build_effective_hamiltonian(p, d, space, 0.0).unwrap()
    }

    #[test]
    fn resonator_population_decays_at_gamma_t() {
        let (mut p, mut d, _) = small();
        let space = HilbertSpec::new(2, 3).unwrap();
        d.gamma_m = 0.0;
        d.g_mt = 0.0;
        d.g_ms = 0.0;
        p.g_st = 0.0;
        p.gamma_s = 0.0;
        p.eta = 0.0;
        let dt = 1e-11;
        let rho0 = ground_product(&space, 0, false, 1);
        let h = build_h(&p, &d, &space);
        let na = &embed(&fock_annihilation(3).unwrap(), Slot::Tlr, &space).unwrap().dagger()
            * &embed(&fock_annihilation(3).unwrap(), Slot::Tlr, &space).unwrap();
        let mut rho = rho0;
        let steps = 500;
        for _ in 0..steps {
            rho = sme_step(&rho, &h, &d, &p, &space, 0.0, dt).unwrap().0;
        }
        let n = expectation(&na, &rho).unwrap().re;
        let t = steps as f64 * dt;
        let want = (-p.gamma_t * t).exp();
        assert!(((n - want) / want).abs() < 2.0 * dt * p.gamma_t, "{n} vs {want}");
    }

    #[test]
    fn beam_channels_relax_to_thermal_occupation() {
        let (mut p, mut d, _) = small();
        let space = HilbertSpec::new(14, 2).unwrap();
        p.gamma_s = 0.0;
        p.gamma_t = 0.0;
        p.eta = 0.0;
        d.nbar_m = 0.5;
        d.gamma_m = p.omega_m / 50.0;
        let model = FullModel::new(&p, &d, space, HamiltonianKind::Effective).unwrap();
        let cfg = SmeConfig {
            dt: 0.02 / p.omega_m,
            steps: 60_000,
            ..SmeConfig::default_for(&d, 0, 1)
        };
        let rho0 = ground_product(&space, 3, false, 0);
        let out = simulate_trajectory(&model, &rho0, &cfg, &mut NullController, 0).unwrap();
        // the thermal fixed point truncated at 14 levels
        let pops = thermal_populations(14, 0.5).unwrap();
        let want: f64 = pops.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
        assert!((out.final_moments.nb - want).abs() < 1e-4, "{} vs {want}", out.final_moments.nb);
    }

    #[test]
    fn null_controller_vacuum_is_constant_without_couplings() {
        let (mut p, mut d, space) = small();
        d.g_mt = 0.0;
        d.g_ms = 0.0;
        p.g_st = 0.0;
        d.nbar_m = 0.0;
        let model = FullModel::new(&p, &d, space, HamiltonianKind::Effective).unwrap();
        let cfg = SmeConfig::default_for(&d, 300, 5);
        let rho0 = ground_product(&space, 0, false, 0);
        let out = simulate_trajectory(&model, &rho0, &cfg, &mut NullController, 0).unwrap();
        for s in &out.record.samples {
            assert!(s.exp_xm.abs() < 1e-12 && s.exp_xt.abs() < 1e-12);
            assert!((s.v_xm - 0.5).abs() < 1e-12 && (s.v_pm - 0.5).abs() < 1e-12);
            assert!((s.exp_sz + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let (p, d, space) = small();
        let model = FullModel::new(&p, &d, space, HamiltonianKind::Rwa).unwrap();
        let cfg = SmeConfig::default_for(&d, 200, 99);
        let rho0 = ground_product(&space, 1, true, 1);
        let a = simulate_trajectory(&model, &rho0, &cfg, &mut NullController, 4).unwrap();
        let b = simulate_trajectory(&model, &rho0, &cfg, &mut NullController, 4).unwrap();
        assert_eq!(a.record, b.record);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.record.write_csv(&mut ba).unwrap();
        b.record.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let header = String::from_utf8(ba).unwrap();
        assert!(header.starts_with("time_s,dY,u,exp_xM,exp_pM,V_xM,V_pM,exp_xT,exp_pT,exp_sz,repairs"));
    }

    #[test]
    fn replayed_increments_are_recovered() {
        let (p, d, space) = small();
        let model = FullModel::new(&p, &d, space, HamiltonianKind::Effective).unwrap();
        let cfg = SmeConfig::default_for(&d, 50, 0);
        let mut st = full_stepper(&model, &cfg).unwrap();
        let probes = Probes::full(&space).unwrap();
        let ws: Vec<f64> = (0..50).map(|k| ((k as f64) * 0.37).sin() * cfg.dt.sqrt()).collect();
        let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
        psi[2] = C64::new(0.6, 0.0);
        psi[3] = C64::new(0.8, 0.0);
        let rho0 = DensityState::from_pure(space.factor_space(), &psi).unwrap();
        let out = run_stepper(&mut st, &probes, rho0.matrix.as_dmatrix(), 50, 1, 0, 0, &mut NullController, Some(&ws))
            .unwrap();
        for (s, w) in out.record.samples.iter().zip(&ws) {
            assert!((reconstruct_dw(&out.record, s) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn innovation_stats_rejects_small_sets_and_checks_noise() {
        let rec = TrajectoryRecord {
            dt: 1e-3,
            meas_strength: 0.0,
            samples: Vec::new(),
            stats: StepStats::default(),
            warnings: Vec::new(),
        };
        assert!(matches!(innovation_stats(&[rec.clone()]), Err(Error::TooFewSamples { .. })));
        // η = 0: dY is the increment itself
        let recs: Vec<TrajectoryRecord> = (0..40)
            .map(|i| {
                let mut s = NormalStream::substream(17, i);
                let mut r = rec.clone();
                r.samples = (0..2000)
                    .map(|_| Sample {
                        time: 0.0,
                        dy: s.wiener(1e-3),
                        u: 0.0,
                        exp_xm: 0.0,
                        exp_pm: 0.0,
                        v_xm: 0.5,
                        v_pm: 0.5,
                        exp_xt: 0.0,
                        exp_pt: 0.0,
                        exp_sz: -1.0,
                        repairs: 0,
                        meas_mean: 0.3,
                    })
                    .collect();
                r
            })
            .collect();
        let rep = innovation_stats(&recs).unwrap();
        assert!(rep.mean_ok && rep.variance_ok);
        assert!(rep.lag1.abs() < 3.0 / (rep.count as f64).sqrt());
    }

    #[test]
    fn uncoupled_factors_evolve_independently() {
        let (mut p, mut d, _) = small();
        let space = HilbertSpec::new(4, 3).unwrap();
        d.g_mt = 0.0;
        d.g_ms = 0.0;
        p.g_st = 0.0;
        p.eta = 0.0;
        let model = FullModel::new(&p, &d, space, HamiltonianKind::Effective).unwrap();
        let cfg = SmeConfig { steps: 400, ..SmeConfig::default_for(&d, 0, 3) };
        let beam = DensityState::beam_thermal(4, 0.4).unwrap();
        let qubit = DensityState::new(
            FactorSpace::new(vec![(Slot::Qubit, 2)]).unwrap(),
            ComplexMatrix::from_real(2, 2, &[0.5, 0.5, 0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let tlr = DensityState::new(
            FactorSpace::new(vec![(Slot::Tlr, 3)]).unwrap(),
            DensityState::beam_coherent(3, C64::new(0.3, 0.1)).unwrap().matrix,
        )
        .unwrap();
        let rho0 = DensityState::product(&[&beam, &qubit, &tlr]).unwrap();
        let out = simulate_trajectory(&model, &rho0, &cfg, &mut NullController, 0).unwrap();
        let full = DensityState::new_unchecked(space.factor_space(), ComplexMatrix::from_dmatrix(out.final_state)).unwrap();
        let beam_only = partial_trace(&full, &[Slot::Beam]).unwrap();

        // beam alone under the same channels and Hamiltonian
        let b = fock_annihilation(4).unwrap();
        let sme = SmeModel {
            h0: (&b.dagger() * &b).scale_re(p.omega_m),
            channels: vec![
                b.dagger().scale_re((d.gamma_m * d.nbar_m).sqrt()),
                b.scale_re((d.gamma_m * (d.nbar_m + 1.0)).sqrt()),
            ],
            measured: b.clone(),
            meas_strength: 0.0,
            control: None,
        };
        let mut st = SmeStepper::new(&sme, cfg.dt, Scheme::Split).unwrap();
        let mut rho = beam.matrix.as_dmatrix().clone();
        for k in 0..400 {
            st.step(&mut rho, 0.0, 0.0, k).unwrap();
        }
        let diff = (beam_only.matrix - ComplexMatrix::from_dmatrix(rho)).frobenius_norm();
        assert!(diff < 1e-8, "{diff}");
    }
}
