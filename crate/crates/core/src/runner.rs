// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Orchestration of derive, sweep, crosscheck and simulate runs.
//!
//! Every run writes a manifest whose non-comment lines are the resolved
//! configuration, so a manifest can be fed back as a config file.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{Engine, RunConfig};
use crate::error::{Error, Result};
use crate::estimator::{
    run_closed_loop, save_loop_csv, ControlGains, Filter, FilterController, FilterModel, FilterScheme, FilterState,
    LoopRow, Plant,
};
use crate::full_sme::{
    joint_initial_state, simulate_ensemble, simulate_trajectory, Controller, FullModel, NullController, SmeConfig,
    TrajectoryRecord,
};
use crate::gaussian::{FlowConfig, Moments};
use crate::metrics::{effective_temperature, ensemble_reduce, Estimate, QuadMoments, TempConvention};
use crate::operators::{DensityState, HilbertSpec, C64};
use crate::reduced::{
    check_gain_region, closed_form_prediction, compute_coeffs, gaussian_moment_flow, ReducedParams, ReducedSme,
};
use crate::rng::derive_seed;
use crate::sme::StepStats;
use crate::system::{derive_params, validate_regime, DerivedKey, DerivedParams, PhysicalParams, RegimeReport};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Agreement threshold in combined standard errors.
pub const CROSSCHECK_SIGMAS: f64 = 3.0;

/// Relative slack when checking that a step divides a time span.
pub const GRID_TOL: f64 = 1e-9;

/// Conditional states sampled per trajectory for the Robertson check.
const ROBERTSON_SAMPLES: usize = 100;

/// Derived parameters and the regime report of a configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub derived: DerivedParams,
    pub regime: RegimeReport,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let derived = derive_params(&cfg.physical, &cfg.overrides, cfg.convention)?;
    let regime = validate_regime(&cfg.physical, &derived);
    Ok(Prepared { derived, regime })
}

/// Formula and effective values side by side.
pub fn derived_table(d: &DerivedParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>22} {:>22}  {}", "quantity", "formula", "used", "source");
    for k in DerivedKey::ALL {
        let src = if d.provenance.overridden.contains(&k) { "override" } else { "formula" };
        let _ = writeln!(s, "{:<10} {:>22.10e} {:>22.10e}  {src}", k.name(), d.formula_value(k), d.value(k));
    }
    let _ = writeln!(s, "beta_L = {:.10}, U_0 = {:.6e} J", d.beta_l, d.u_0);
    let _ = writeln!(s, "Delta_MS = {:.6e} rad/s, Delta_ST = {:.6e} rad/s", d.delta_ms, d.delta_st);
    let _ = write!(s, "eps/Delta convention: {}", d.provenance.convention.name());
    s
}

/// Text printed by the `derive` subcommand.
pub fn derive_report(cfg: &RunConfig) -> Result<String> {
    let pr = prepare(cfg)?;
    Ok(format!("{}\n\nregime checks:\n{}", derived_table(&pr.derived), pr.regime))
}

/// Inputs and provenance of one run.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config: RunConfig,
    pub derived_table: String,
    pub regime: String,
    pub version: &'static str,
    /// Wall-clock seconds per stage.
    pub stages: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl RunManifest {
    fn new(cfg: &RunConfig, pr: &Prepared) -> Self {
        Self {
            config: cfg.clone(),
            derived_table: derived_table(&pr.derived),
            regime: pr.regime.to_string(),
            version: CODE_VERSION,
            stages: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Only the configuration lines are uncommented.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let comment = |s: &mut String, text: &str| {
            for line in text.lines() {
                let _ = writeln!(s, "# {line}");
            }
        };
        comment(&mut s, &format!("run manifest, {}", self.version));
        s.push_str(&self.config.to_config_string());
        comment(&mut s, "\nderived parameters:");
        comment(&mut s, &self.derived_table);
        comment(&mut s, "\nregime checks:");
        comment(&mut s, &self.regime);
        comment(&mut s, "\nstages (wall clock):");
        for (name, secs) in &self.stages {
            comment(&mut s, &format!("{name}: {secs:.3} s"));
        }
        for n in &self.notes {
            comment(&mut s, &format!("note: {n}"));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.cfg");
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}

/// Number of steps of size `dt` covering `span`, if it divides exactly.
fn grid_steps(span: f64, dt: f64) -> Option<usize> {
    let n = span / dt;
    let r = n.round();
    ((n - r).abs() <= GRID_TOL * n.max(1.0) && r >= 1.0).then_some(r as usize)
}

/// Step size and count of the reduced and full engines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
    pub full_dt: f64,
    pub full_steps: usize,
}

impl TimeGrid {
    /// Steps are rounded when the horizon is not an exact multiple;
    /// `issues` reports that case.
    pub fn new(cfg: &RunConfig, d: &DerivedParams) -> Self {
        let horizon = cfg.horizon_gm / d.gamma_m;
        let dt = cfg.dt_wm / cfg.physical.omega_m;
        let full_dt = cfg.full_dt_wm / cfg.physical.omega_m;
        let round = |x: f64| ((horizon / x).round() as usize).max(1);
        Self { horizon, dt, steps: round(dt), full_dt, full_steps: round(full_dt) }
    }

    /// Configuration inconsistencies between the engines' time grids.
    pub fn issues(&self, with_full: bool) -> Vec<String> {
        let mut out = Vec::new();
        if grid_steps(self.horizon, self.dt).is_none() {
            out.push(format!("horizon {:.6e} s is not a multiple of dt {:.6e} s", self.horizon, self.dt));
        }
        if with_full {
            if grid_steps(self.horizon, self.full_dt).is_none() {
                out.push(format!(
                    "horizon {:.6e} s is not a multiple of the full-engine dt {:.6e} s",
                    self.horizon, self.full_dt
                ));
            }
            if grid_steps(self.dt, self.full_dt).is_none() {
                out.push(format!(
                    "dt mismatch: reduced dt {:.6e} s is not a multiple of full-engine dt {:.6e} s",
                    self.dt, self.full_dt
                ));
            }
        }
        out
    }
}

/// Beam moments produced by one engine at one gain pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineResult {
    pub v_xm: Estimate,
    pub v_pm: Estimate,
    pub v_total_xm: Estimate,
    pub v_total_pm: Estimate,
    pub nbar: Estimate,
    pub stats: StepStats,
    /// Smallest V_x·V_p over the sampled conditional states.
    pub min_robertson: f64,
    /// Largest |tr ρ − 1| plus Hermiticity defect over the final states.
    pub final_defect: f64,
    pub n_traj: usize,
    pub warnings: Vec<String>,
}

/// |tr ρ − 1| + max |ρ − ρ†|.
fn state_defect(rho: &nalgebra::DMatrix<C64>) -> f64 {
    let tr = rho.trace();
    let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    (tr - C64::new(1.0, 0.0)).norm() + herm
}

impl EngineResult {
    fn exact(v_x: f64, v_p: f64, vt_x: f64, vt_p: f64, nbar: f64) -> Self {
        let e = |value| Estimate { value, se: 0.0 };
        Self {
            v_xm: e(v_x),
            v_pm: e(v_p),
            v_total_xm: e(vt_x),
            v_total_pm: e(vt_p),
            nbar: e(nbar),
            stats: StepStats::default(),
            min_robertson: v_x * v_p,
            final_defect: 0.0,
            n_traj: 0,
            warnings: Vec::new(),
        }
    }

    fn from_ensemble(
        q: &[QuadMoments],
        omega_m: f64,
        stats: StepStats,
        min_robertson: f64,
        final_defect: f64,
    ) -> Result<Self> {
        let s = ensemble_reduce(q, omega_m)?;
        Ok(Self {
            v_xm: s.v_xm,
            v_pm: s.v_pm,
            v_total_xm: s.v_total_xm,
            v_total_pm: s.v_total_pm,
            nbar: s.nbar,
            stats,
            min_robertson,
            final_defect,
            n_traj: s.n_traj,
            warnings: s.warnings,
        })
    }

    /// Positivity repairs per step.
    pub fn repair_fraction(&self) -> f64 {
        if self.stats.steps == 0 {
            0.0
        } else {
            self.stats.repairs as f64 / self.stats.steps as f64
        }
    }
}

/// Null control at zero gains, the estimator loop otherwise.
enum LoopController {
    Null(NullController),
    Filter(Box<FilterController>),
}

impl Controller for LoopController {
    fn control(&mut self) -> f64 {
        match self {
            LoopController::Null(c) => c.control(),
            LoopController::Filter(c) => c.control(),
        }
    }

    fn observe(&mut self, dy: f64) -> Result<()> {
        match self {
            LoopController::Null(c) => c.observe(dy),
            LoopController::Filter(c) => c.observe(dy),
        }
    }
}

fn estimator(p: &PhysicalParams, d: &DerivedParams, g: &ControlGains, dt: f64) -> Result<Filter> {
    Filter::new(FilterModel::new(p, d), *g, dt, FilterScheme::Exponential, FilterState::ground(C64::new(0.0, 0.0)))
}

fn is_zero(g: &ControlGains) -> bool {
    g.v_x == 0.0 && g.v_p == 0.0
}

/// Runs `engine` at gains `g` from the thermal beam state.
pub fn run_engine(
    engine: Engine,
    cfg: &RunConfig,
    d: &DerivedParams,
    g: &ControlGains,
    seed: u64,
    n_traj: usize,
) -> Result<EngineResult> {
    let p = &cfg.physical;
    let rp = ReducedParams::new(p, d);
    let grid = TimeGrid::new(cfg, d);
    match engine {
        Engine::ReducedGaussian => {
            let rc = compute_coeffs(g, d, p)?;
            let st = gaussian_moment_flow(g, &rc, &rp, &Moments::thermal(rp.nbar_m), &FlowConfig::for_rate(rp.gamma_m))?;
            Ok(EngineResult::exact(
                st.v_xm,
                st.v_pm,
                st.v_xm + st.v_mean_xm,
                st.v_pm + st.v_mean_pm,
                st.nbar,
            ))
        }
        Engine::ReducedSme => {
            let rc = compute_coeffs(g, d, p)?;
            let mut eng = ReducedSme::new(cfg.reduced_levels, &rp, &rc, g, grid.dt, cfg.scheme)?;
            eng.positivity_stride = cfg.positivity_stride;
            let rho0 = DensityState::beam_thermal(cfg.reduced_levels, rp.nbar_m)?;
            let every = (grid.steps / ROBERTSON_SAMPLES).max(1);
            let outs = eng.ensemble(rho0.matrix.as_dmatrix(), grid.steps, seed, n_traj, every)?;
            let mut stats = StepStats::default();
            let mut min_rob = f64::INFINITY;
            for o in &outs {
                stats.merge(&o.stats);
                min_rob = min_rob.min(o.min_robertson);
            }
            let q: Vec<QuadMoments> = outs.iter().map(|o| QuadMoments::from(&o.moments)).collect();
            let defect = outs.iter().map(|o| state_defect(&o.final_state)).fold(0.0, f64::max);
            let mut r = EngineResult::from_ensemble(&q, p.omega_m, stats, min_rob, defect)?;
            let leak = outs.iter().map(|o| o.leakage).fold(0.0, f64::max);
            if leak > 1e-3 {
                r.warnings.push(format!("top Fock levels hold up to {leak:.2e} of the population"));
            }
            Ok(r)
        }
        Engine::Full => {
            let space = HilbertSpec::new(cfg.n_beam, cfg.n_tlr)?;
            let model = FullModel::new(p, d, space, cfg.hamiltonian)?;
            let stride = (grid.full_steps / ROBERTSON_SAMPLES).max(1);
            let scfg = SmeConfig {
                dt: grid.full_dt,
                steps: grid.full_steps,
                seed,
                hamiltonian_kind: cfg.hamiltonian,
                renormalize_every: cfg.positivity_stride as usize,
                clamp_negativity: true,
                record_stride: stride,
                scheme: cfg.scheme,
            };
            let rho0 = joint_initial_state(&space, d.nbar_m)?;
            let filter = estimator(p, d, g, grid.full_dt)?;
            let zero = is_zero(g);
            let outs = simulate_ensemble(&model, &rho0, &scfg, n_traj, |_| {
                if zero {
                    LoopController::Null(NullController)
                } else {
                    LoopController::Filter(Box::new(FilterController::new(filter.clone())))
                }
            })?;
            let mut stats = StepStats::default();
            let mut min_rob = f64::INFINITY;
            for o in &outs {
                stats.merge(&o.record.stats);
                for s in &o.record.samples {
                    min_rob = min_rob.min(s.v_xm * s.v_pm);
                }
                min_rob = min_rob.min(o.final_moments.v_x() * o.final_moments.v_p());
            }
            let q: Vec<QuadMoments> = outs.iter().map(|o| QuadMoments::from(&o.final_moments)).collect();
            let defect = outs.iter().map(|o| state_defect(&o.final_state)).fold(0.0, f64::max);
            let mut r = EngineResult::from_ensemble(&q, p.omega_m, stats, min_rob, defect)?;
            if let Some(w) = outs.first().and_then(|o| o.record.warnings.first()) {
                r.warnings.push(w.clone());
            }
            Ok(r)
        }
        Engine::FilterSelfloop => Err(Error::Config(
            "filter-selfloop produces no beam ensemble; use it with simulate".into(),
        )),
    }
}

pub const SWEEP_COLUMNS: [&str; 20] = [
    "v_p_over_wT",
    "v_x_over_wT",
    "VxM_c",
    "VpM_c",
    "VxM_uc",
    "VpM_uc",
    "product_c",
    "product_uc",
    "xi",
    "VxM_pred",
    "VpM_pred",
    "nbar_c",
    "nbar_uc",
    "Teff_c",
    "Teff_uc",
    "Teff_c_angular",
    "Teff_uc_angular",
    "nbar_c_se",
    "nbar_uc_se",
    "flags",
];

/// One sweep point. Variances in units of ħ; temperatures in kelvin with
/// the unsuffixed columns under the linear convention.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub v_p_over_wt: f64,
    pub v_x_over_wt: f64,
    pub vxm_c: f64,
    pub vpm_c: f64,
    pub vxm_uc: f64,
    pub vpm_uc: f64,
    pub xi: f64,
    pub vxm_pred: f64,
    pub vpm_pred: f64,
    pub nbar_c: f64,
    pub nbar_uc: f64,
    pub nbar_c_se: f64,
    pub nbar_uc_se: f64,
    pub teff_c: f64,
    pub teff_uc: f64,
    pub teff_c_angular: f64,
    pub teff_uc_angular: f64,
    pub flags: Vec<String>,
    /// Engine bookkeeping of the controlled run, if it completed.
    pub controlled: Option<EngineResult>,
}

impl SweepRow {
    pub fn product_c(&self) -> f64 {
        self.vxm_c * self.vpm_c
    }

    pub fn product_uc(&self) -> f64 {
        self.vxm_uc * self.vpm_uc
    }

    pub fn diverged(&self) -> bool {
        self.flags.iter().any(|f| f.starts_with("diverged"))
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub uncontrolled: Option<EngineResult>,
    pub manifest: RunManifest,
}

fn teff(nbar: f64, omega_m: f64, c: TempConvention) -> f64 {
    effective_temperature(nbar, omega_m, c).unwrap_or(f64::NAN)
}

/// Controlled run at every sweep point against the zero-gain baseline.
/// Divergence flags the row; with `strict` it aborts the sweep, as does a
/// failed regime check.
pub fn run_sweep(cfg: &RunConfig, strict: bool) -> Result<SweepOutput> {
    if cfg.engine == Engine::FilterSelfloop {
        return Err(Error::Config("sweep needs a beam engine, not filter-selfloop".into()));
    }
    let t0 = Instant::now();
    let pr = prepare(cfg)?;
    let mut manifest = RunManifest::new(cfg, &pr);
    manifest.stages.push(("derive".into(), t0.elapsed().as_secs_f64()));
    let regime_ok = pr.regime.all_pass();
    if strict && !regime_ok {
        let failed: Vec<_> = pr.regime.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(Error::Regime(format!("strict mode: failed regime checks: {}", failed.join(", "))));
    }
    let d = &pr.derived;
    let p = &cfg.physical;
    let n_traj = cfg.n_traj;
    let grid = TimeGrid::new(cfg, d);
    for issue in grid.issues(cfg.engine == Engine::Full) {
        manifest.notes.push(issue);
    }

    let t1 = Instant::now();
    let base = run_engine(cfg.engine, cfg, d, &ControlGains::default(), derive_seed(cfg.seed, 0), n_traj);
    manifest.stages.push(("uncontrolled".into(), t1.elapsed().as_secs_f64()));
    if strict {
        if let Err(e) = &base {
            return Err(Error::Regime(format!("strict mode: uncontrolled run diverged: {e}")));
        }
    }

    let t2 = Instant::now();
    let v_x = cfg.gains.v_x();
    let points = cfg.gains.v_p_values();
    let results: Vec<(f64, Result<EngineResult>)> = points
        .par_iter()
        .enumerate()
        .map(|(k, &vp)| {
            let g = ControlGains::new(v_x * p.omega_t, vp * p.omega_t);
            (vp, run_engine(cfg.engine, cfg, d, &g, derive_seed(cfg.seed, k as u64 + 1), n_traj))
        })
        .collect();
    manifest.stages.push(("controlled".into(), t2.elapsed().as_secs_f64()));
    if strict {
        if let Some((vp, Err(e))) = results.iter().find(|r| r.1.is_err()) {
            return Err(Error::Regime(format!("strict mode: run at v_p/omega_T = {vp} diverged: {e}")));
        }
    }

    let nan = f64::NAN;
    let (uc, base_flag) = match &base {
        Ok(r) => (Some(r.clone()), None),
        Err(e) => (None, Some(format!("diverged-uncontrolled: {e}"))),
    };
    let rows = results
        .into_iter()
        .map(|(vp, res)| {
            let g = ControlGains::new(v_x * p.omega_t, vp * p.omega_t);
            let mut flags = Vec::new();
            if !regime_ok {
                flags.push("regime".to_string());
            }
            if let Some(f) = &base_flag {
                flags.push(f.clone());
            }
            let pred = compute_coeffs(&g, d, p).and_then(|rc| closed_form_prediction(&g, &rc, d, p));
            if pred.is_err() {
                flags.push("prediction-invalid".into());
            }
            if let (Some(purpose), Ok(_)) = (cfg.purpose, compute_coeffs(&g, d, p)) {
                if !check_gain_region(&g, d, p, purpose, cfg.region_threshold).pass() {
                    flags.push("region".into());
                }
            } else if cfg.purpose.is_some() {
                flags.push("region".into());
            }
            let ctl = match res {
                Ok(r) => {
                    flags.extend(r.warnings.iter().map(|w| format!("warning: {w}")));
                    Some(r)
                }
                Err(e) => {
                    flags.push(format!("diverged: {e}"));
                    None
                }
            };
            let pick = |r: &Option<EngineResult>, f: fn(&EngineResult) -> f64| r.as_ref().map_or(nan, f);
            let nbar_c = pick(&ctl, |r| r.nbar.value);
            let nbar_uc = pick(&uc, |r| r.nbar.value);
            SweepRow {
                v_p_over_wt: vp,
                v_x_over_wt: v_x,
                vxm_c: pick(&ctl, |r| r.v_xm.value),
                vpm_c: pick(&ctl, |r| r.v_pm.value),
                vxm_uc: pick(&uc, |r| r.v_xm.value),
                vpm_uc: pick(&uc, |r| r.v_pm.value),
                xi: pred.as_ref().map_or(nan, |q| q.xi),
                vxm_pred: pred.as_ref().map_or(nan, |q| q.v_x),
                vpm_pred: pred.as_ref().map_or(nan, |q| q.v_p),
                nbar_c,
                nbar_uc,
                nbar_c_se: pick(&ctl, |r| r.nbar.se),
                nbar_uc_se: pick(&uc, |r| r.nbar.se),
                teff_c: teff(nbar_c, p.omega_m, TempConvention::Linear),
                teff_uc: teff(nbar_uc, p.omega_m, TempConvention::Linear),
                teff_c_angular: teff(nbar_c, p.omega_m, TempConvention::Angular),
                teff_uc_angular: teff(nbar_uc, p.omega_m, TempConvention::Angular),
                flags,
                controlled: ctl,
            }
        })
        .collect();
    Ok(SweepOutput { rows, uncontrolled: uc, manifest })
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        let mut rec: Vec<String> = [
            r.v_p_over_wt,
            r.v_x_over_wt,
            r.vxm_c,
            r.vpm_c,
            r.vxm_uc,
            r.vpm_uc,
            r.product_c(),
            r.product_uc(),
            r.xi,
            r.vxm_pred,
            r.vpm_pred,
            r.nbar_c,
            r.nbar_uc,
            r.teff_c,
            r.teff_uc,
            r.teff_c_angular,
            r.teff_uc_angular,
            r.nbar_c_se,
            r.nbar_uc_se,
        ]
        .into_iter()
        .map(num)
        .collect();
        rec.push(r.flags.join("; "));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `sweep.csv` and `manifest.cfg` into `dir`.
pub fn save_sweep(out: &SweepOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_sweep_csv(&out.rows, std::fs::File::create(dir.join("sweep.csv"))?)?;
    out.manifest.write(dir)?;
    Ok(())
}

/// One compared moment.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentCheck {
    pub point: String,
    pub quantity: &'static str,
    pub left: (&'static str, Estimate),
    pub right: (&'static str, Estimate),
    /// Gated checks decide pass/fail; the rest are reported only.
    pub gated: bool,
}

impl MomentCheck {
    pub fn z(&self) -> f64 {
        self.left.1.z_score(&self.right.1)
    }

    pub fn pass(&self) -> bool {
        !self.gated || self.z() <= CROSSCHECK_SIGMAS
    }
}

#[derive(Clone, Debug)]
pub struct CrosscheckReport {
    pub checks: Vec<MomentCheck>,
    /// Inconsistent configuration or failed engines; any entry fails the report.
    pub issues: Vec<String>,
    /// Per engine run: label and result.
    pub runs: Vec<(String, EngineResult)>,
    pub manifest: RunManifest,
}

impl CrosscheckReport {
    pub fn pass(&self) -> bool {
        self.issues.is_empty() && self.checks.iter().all(|c| c.pass())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:<12} {:<13} {:>14} {:>11} {:<13} {:>14} {:>11} {:>8}  result",
            "point", "quantity", "engine", "value", "se", "engine", "value", "se", "z"
        );
        for c in &self.checks {
            let verdict = match (c.gated, c.pass()) {
                (false, _) => "info",
                (true, true) => "pass",
                (true, false) => "FAIL",
            };
            let _ = writeln!(
                s,
                "{:<18} {:<12} {:<13} {:>14.8} {:>11.3e} {:<13} {:>14.8} {:>11.3e} {:>8.3}  {verdict}",
                c.point, c.quantity, c.left.0, c.left.1.value, c.left.1.se, c.right.0, c.right.1.value, c.right.1.se, c.z()
            );
        }
        for (label, r) in &self.runs {
            if r.stats.steps > 0 {
                let _ = writeln!(
                    s,
                    "{label}: {} trajectories, {} steps, {} positivity repairs, min V_x*V_p {:.10}",
                    r.n_traj, r.stats.steps, r.stats.repairs, r.min_robertson
                );
            }
            for w in &r.warnings {
                let _ = writeln!(s, "{label}: warning: {w}");
            }
        }
        for i in &self.issues {
            let _ = writeln!(s, "issue: {i}");
        }
        let _ = write!(s, "overall: {}", if self.pass() { "PASS" } else { "FAIL" });
        s
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "point", "quantity", "engine_a", "value_a", "se_a", "engine_b", "value_b", "se_b", "z", "gated", "pass",
        ])?;
        for c in &self.checks {
            wr.write_record([
                c.point.clone(),
                c.quantity.to_string(),
                c.left.0.to_string(),
                num(c.left.1.value),
                num(c.left.1.se),
                c.right.0.to_string(),
                num(c.right.1.value),
                num(c.right.1.se),
                num(c.z()),
                c.gated.to_string(),
                c.pass().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `crosscheck.txt`, `crosscheck.csv` and `manifest.cfg`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("crosscheck.txt"), self.render() + "\n")?;
        self.write_csv(std::fs::File::create(dir.join("crosscheck.csv"))?)?;
        self.manifest.write(dir)?;
        Ok(())
    }
}

fn compare(
    out: &mut Vec<MomentCheck>,
    point: &str,
    (ln, l): (&'static str, &EngineResult),
    (rn, r): (&'static str, &EngineResult),
    conditional_gated: bool,
) {
    let rows: [(&'static str, fn(&EngineResult) -> Estimate, bool); 5] = [
        ("V_x total", |e| e.v_total_xm, true),
        ("V_p total", |e| e.v_total_pm, true),
        ("nbar", |e| e.nbar, true),
        ("V_x cond", |e| e.v_xm, conditional_gated),
        ("V_p cond", |e| e.v_pm, conditional_gated),
    ];
    for (q, f, gated) in rows {
        out.push(MomentCheck { point: point.into(), quantity: q, left: (ln, f(l)), right: (rn, f(r)), gated });
    }
}

/// Gaussian stationary moments against the reduced density-matrix ensemble
/// at zero gains and at each configured gain pair; optionally the full model
/// against the reduced ensemble at zero gains.
///
/// Conditional variances are reported but not gated: their time-step bias
/// is larger than their ensemble standard error at practical dt.
pub fn run_crosscheck(cfg: &RunConfig) -> Result<CrosscheckReport> {
    let t0 = Instant::now();
    let pr = prepare(cfg)?;
    let d = &pr.derived;
    let p = &cfg.physical;
    let mut manifest = RunManifest::new(cfg, &pr);
    manifest.stages.push(("derive".into(), t0.elapsed().as_secs_f64()));
    let grid = TimeGrid::new(cfg, d);
    let mut issues = grid.issues(cfg.crosscheck_full);
    let mut checks = Vec::new();
    let mut runs = Vec::new();

    let v_x = cfg.gains.v_x();
    let mut points = vec![(0.0, 0.0)];
    for vp in cfg.gains.v_p_values() {
        if !(v_x == 0.0 && vp == 0.0) {
            points.push((v_x, vp));
        }
    }
    for (k, &(vx, vp)) in points.iter().enumerate() {
        let label = format!("vx={vx},vp={vp}");
        let g = ControlGains::new(vx * p.omega_t, vp * p.omega_t);
        let t = Instant::now();
        let seed = derive_seed(cfg.seed, k as u64);
        let gauss = run_engine(Engine::ReducedGaussian, cfg, d, &g, seed, 1);
        let sme = run_engine(Engine::ReducedSme, cfg, d, &g, seed, cfg.n_traj);
        manifest.stages.push((format!("reduced engines at {label}"), t.elapsed().as_secs_f64()));
        match (&gauss, &sme) {
            (Ok(a), Ok(b)) => compare(&mut checks, &label, ("gaussian", a), ("reduced-sme", b), false),
            _ => {
                for e in [gauss.as_ref().err(), sme.as_ref().err()].into_iter().flatten() {
                    issues.push(format!("{label}: {e}"));
                }
            }
        }
        if k == 0 {
            // thermal competition between the bath and the resonator channel
            if let Ok(rc) = compute_coeffs(&g, d, p) {
                let anchor = d.gamma_m * d.nbar_m / (d.gamma_m + p.gamma_t * rc.c1.norm_sqr());
                let a = EngineResult::exact(0.0, 0.0, 0.0, 0.0, anchor);
                if let Ok(b) = &sme {
                    checks.push(MomentCheck {
                        point: label.clone(),
                        quantity: "nbar",
                        left: ("fixed-point", a.nbar),
                        right: ("reduced-sme", b.nbar),
                        gated: true,
                    });
                }
                if cfg.crosscheck_full {
                    let t = Instant::now();
                    match run_engine(Engine::Full, cfg, d, &g, derive_seed(seed, 1), cfg.full_n_traj) {
                        Ok(f) => {
                            if let Ok(b) = &sme {
                                compare(&mut checks, &label, ("full", &f), ("reduced-sme", b), true);
                            }
                            checks.push(MomentCheck {
                                point: label.clone(),
                                quantity: "nbar",
                                left: ("full", f.nbar),
                                right: ("fixed-point", a.nbar),
                                gated: false,
                            });
                            runs.push(("full".to_string(), f));
                        }
                        Err(e) => issues.push(format!("{label}: full engine: {e}")),
                    }
                    manifest.stages.push(("full engine".into(), t.elapsed().as_secs_f64()));
                }
            }
        }
        if let Ok(b) = sme {
            runs.push((format!("reduced-sme {label}"), b));
        }
    }
    manifest.notes.extend(issues.iter().cloned());
    Ok(CrosscheckReport { checks, issues, runs, manifest })
}

/// Output of a single-trajectory run.
#[derive(Clone, Debug, Default)]
pub struct SimulateOutput {
    pub record: Option<TrajectoryRecord>,
    pub loop_rows: Option<Vec<LoopRow>>,
    pub manifest: Option<RunManifest>,
}

impl SimulateOutput {
    /// Writes `trajectory.csv` and/or `loop.csv`, and `manifest.cfg`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if let Some(r) = &self.record {
            r.save_csv(&dir.join("trajectory.csv"))?;
        }
        if let Some(rows) = &self.loop_rows {
            save_loop_csv(rows, &dir.join("loop.csv"))?;
        }
        if let Some(m) = &self.manifest {
            m.write(dir)?;
        }
        Ok(())
    }
}

/// Trajectory 0 of the configured engine at the first gain pair, recorded
/// at every step.
pub fn run_simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    let t0 = Instant::now();
    let pr = prepare(cfg)?;
    let d = &pr.derived;
    let p = &cfg.physical;
    let mut manifest = RunManifest::new(cfg, &pr);
    let grid = TimeGrid::new(cfg, d);
    let vp = cfg.gains.v_p_values()[0];
    let g = ControlGains::new(cfg.gains.v_x() * p.omega_t, vp * p.omega_t);
    let mut out = SimulateOutput::default();
    match cfg.engine {
        Engine::Full => {
            let space = HilbertSpec::new(cfg.n_beam, cfg.n_tlr)?;
            let model = FullModel::new(p, d, space, cfg.hamiltonian)?;
            let scfg = SmeConfig {
                dt: grid.full_dt,
                steps: grid.full_steps,
                seed: cfg.seed,
                hamiltonian_kind: cfg.hamiltonian,
                renormalize_every: cfg.positivity_stride as usize,
                clamp_negativity: true,
                record_stride: 1,
                scheme: cfg.scheme,
            };
            let rho0 = joint_initial_state(&space, d.nbar_m)?;
            let mut c = FilterController::new(estimator(p, d, &g, grid.full_dt)?);
            let r = simulate_trajectory(&model, &rho0, &scfg, &mut c, 0)?;
            out.record = Some(r.record);
            out.loop_rows = Some(c.series);
        }
        Engine::ReducedSme => {
            let rp = ReducedParams::new(p, d);
            let rc = compute_coeffs(&g, d, p)?;
            let mut eng = ReducedSme::new(cfg.reduced_levels, &rp, &rc, &g, grid.dt, cfg.scheme)?;
            eng.positivity_stride = cfg.positivity_stride;
            let rho0 = DensityState::beam_thermal(cfg.reduced_levels, rp.nbar_m)?;
            let (_, rec) = eng.run_recorded(rho0.matrix.as_dmatrix(), grid.steps, cfg.seed, 0, 1)?;
            out.record = Some(rec);
        }
        Engine::FilterSelfloop => {
            let run = run_closed_loop(
                estimator(p, d, &g, grid.dt)?,
                Plant::SelfLoop { seed: cfg.seed, index: 0 },
                grid.steps,
            )?;
            out.loop_rows = Some(run.rows);
        }
        Engine::ReducedGaussian => {
            return Err(Error::Config("reduced-gaussian has no trajectories; use sweep".into()));
        }
    }
    manifest.stages.push(("simulate".into(), t0.elapsed().as_secs_f64()));
    out.manifest = Some(manifest);
    Ok(out)
}
