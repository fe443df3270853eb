// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Semiclassical estimator driving the feedback loop.
//!
//! The filter tracks the qubit Bloch vector, the mode amplitudes ⟨b⟩ and ⟨a⟩,
//! and the resonator quadrature covariance (V_xT, V_pT, C) in units of ħ. The
//! controller reads only this state; the plant is seen through dY alone.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::full_sme::{fmt, simulate_trajectory, Controller, FullModel, SmeConfig, TrajectoryOutcome};
use crate::operators::{DensityState, C64};
use crate::rng::NormalStream;
use crate::system::{DerivedParams, PhysicalParams};

/// Tolerance on |s| ≤ 1 for the Bloch vector.
pub const BLOCH_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub b_mean: C64,
    pub a_mean: C64,
    pub v_xt: f64,
    pub v_pt: f64,
    pub c_xtpt: f64,
}

impl FilterState {
    /// Qubit in its ground state, resonator in vacuum, beam amplitude `b`.
    pub fn ground(b: C64) -> Self {
        Self {
            sx: 0.0,
            sy: 0.0,
            sz: -1.0,
            b_mean: b,
            a_mean: C64::new(0.0, 0.0),
            v_xt: 0.5,
            v_pt: 0.5,
            c_xtpt: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.sx,
            self.sy,
            self.sz,
            self.b_mean.re,
            self.b_mean.im,
            self.a_mean.re,
            self.a_mean.im,
            self.v_xt,
            self.v_pt,
            self.c_xtpt,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    pub fn bloch_norm(&self) -> f64 {
        (self.sx * self.sx + self.sy * self.sy + self.sz * self.sz).sqrt()
    }

    /// Checks the Bloch bound and the covariance bounds.
    pub fn check_invariants(&self) -> Result<()> {
        if self.bloch_norm() > 1.0 + BLOCH_TOL {
            return Err(Error::Config(format!("Bloch vector length {} exceeds 1", self.bloch_norm())));
        }
        if self.v_xt < 0.0 || self.v_pt < 0.0 || self.c_xtpt.abs() > (self.v_xt * self.v_pt).sqrt() + 1e-9 {
            return Err(Error::Config("resonator covariance is not positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlGains {
    pub v_x: f64,
    pub v_p: f64,
}

impl ControlGains {
    pub fn new(v_x: f64, v_p: f64) -> Self {
        Self { v_x, v_p }
    }
}

/// u = −2v_x Re⟨a⟩ + 2v_p Im⟨a⟩.
pub fn feedback_u(f: &FilterState, g: &ControlGains) -> f64 {
    -2.0 * g.v_x * f.a_mean.re + 2.0 * g.v_p * f.a_mean.im
}

/// Constants entering the filter equations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterModel {
    pub omega_s: f64,
    pub omega_m: f64,
    pub omega_t: f64,
    pub g_mt: f64,
    pub gamma_m: f64,
    pub gamma_t: f64,
    pub gamma_s: f64,
    pub eta: f64,
    pub m_phi: f64,
    pub m_r: f64,
}

impl FilterModel {
    pub fn new(p: &PhysicalParams, d: &DerivedParams) -> Self {
        Self {
            omega_s: d.omega_s,
            omega_m: p.omega_m,
            omega_t: p.omega_t,
            g_mt: d.g_mt,
            gamma_m: d.gamma_m,
            gamma_t: p.gamma_t,
            gamma_s: p.gamma_s,
            eta: p.eta,
            m_phi: p.m_phi,
            m_r: p.m_r,
        }
    }

    /// Transverse Bloch damping 2γ_S(M_φ² + M_r²/4).
    pub fn dephasing(&self) -> f64 {
        2.0 * self.gamma_s * (self.m_phi * self.m_phi + 0.25 * self.m_r * self.m_r)
    }

    /// Longitudinal relaxation γ_S·M_r².
    pub fn relaxation(&self) -> f64 {
        self.gamma_s * self.m_r * self.m_r
    }

    /// √(ηγ_T).
    pub fn meas_strength(&self) -> f64 {
        (self.eta * self.gamma_t).sqrt()
    }

    /// Noise gain of ⟨a⟩: √(ηγ_T)(V_xT + iC − ½).
    pub fn noise_gain(&self, f: &FilterState) -> C64 {
        C64::new(f.v_xt - 0.5, f.c_xtpt) * self.meas_strength()
    }

    /// Real linear generator of (Re b, Im b, Re a, Im a) at fixed σ_z, with
    /// the feedback term −iu folded in.
    pub fn mode_generator(&self, sz: f64, g: &ControlGains) -> Matrix4<f64> {
        let k = self.g_mt * sz;
        let hm = 0.5 * self.gamma_m;
        let ht = 0.5 * self.gamma_t;
        Matrix4::new(
            -hm, self.omega_m, k, 0.0,
            -self.omega_m, -hm, 0.0, k,
            -k, 0.0, -ht, self.omega_t,
            0.0, -k, -self.omega_t + 2.0 * g.v_x, -ht - 2.0 * g.v_p,
        )
    }

    /// d⟨b⟩/dt, d⟨a⟩/dt without noise.
    fn mode_drift(&self, f: &FilterState, g: &ControlGains) -> (C64, C64) {
        let i = C64::new(0.0, 1.0);
        let u = feedback_u(f, g);
        let db = -i * self.omega_m * f.b_mean + f.a_mean * (self.g_mt * f.sz) - f.b_mean * (0.5 * self.gamma_m);
        let da = -i * self.omega_t * f.a_mean - f.b_mean * (self.g_mt * f.sz) - f.a_mean * (0.5 * self.gamma_t) - i * u;
        (db, da)
    }

    /// Right-hand side of the covariance equations.
    pub fn variance_rhs(&self, v_x: f64, v_p: f64, c: f64) -> (f64, f64, f64) {
        let gt = self.gamma_t;
        let wt = self.omega_t;
        let k = 2.0 * self.eta * gt;
        (
            -gt * v_x + 2.0 * wt * c + 0.5 * gt - k * (v_x - 0.5) * (v_x - 0.5),
            -gt * v_p - 2.0 * wt * c + 0.5 * gt - k * c * c,
            -gt * c + wt * v_p - wt * v_x - k * (v_x - 0.5) * c,
        )
    }
}

fn check_finite(f: FilterState) -> Result<FilterState> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::Blowup { step: 0 })
    }
}

/// One Euler–Maruyama step of the Bloch and mode amplitude equations.
/// Covariances are left untouched; see `variance_step`.
pub fn mb_step(f: &FilterState, m: &FilterModel, g: &ControlGains, dw: f64, dt: f64) -> Result<FilterState> {
    let gd = m.dephasing();
    let gr = m.relaxation();
    let (db, da) = m.mode_drift(f, g);
    let mut n = *f;
    n.sx = f.sx + dt * (-m.omega_s * f.sy - gd * f.sx);
    n.sy = f.sy + dt * (m.omega_s * f.sx - gd * f.sy);
    n.sz = f.sz + dt * (-gr * f.sz - gr);
    n.b_mean = f.b_mean + db * dt;
    n.a_mean = f.a_mean + da * dt + m.noise_gain(f) * dw;
    check_finite(n)
}

/// One Euler step of the resonator covariance equations.
pub fn variance_step(f: &FilterState, m: &FilterModel, dt: f64) -> FilterState {
    let (dx, dp, dc) = m.variance_rhs(f.v_xt, f.v_pt, f.c_xtpt);
    FilterState {
        v_xt: f.v_xt + dt * dx,
        v_pt: f.v_pt + dt * dp,
        c_xtpt: f.c_xtpt + dt * dc,
        ..*f
    }
}

/// One classical RK4 step of the resonator covariance equations.
pub fn variance_step_rk4(f: &FilterState, m: &FilterModel, dt: f64) -> FilterState {
    let y0 = (f.v_xt, f.v_pt, f.c_xtpt);
    let add = |y: (f64, f64, f64), k: (f64, f64, f64), h: f64| (y.0 + h * k.0, y.1 + h * k.1, y.2 + h * k.2);
    let rhs = |y: (f64, f64, f64)| m.variance_rhs(y.0, y.1, y.2);
    let k1 = rhs(y0);
    let k2 = rhs(add(y0, k1, 0.5 * dt));
    let k3 = rhs(add(y0, k2, 0.5 * dt));
    let k4 = rhs(add(y0, k3, dt));
    FilterState {
        v_xt: y0.0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        v_pt: y0.1 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        c_xtpt: y0.2 + dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
        ..*f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterScheme {
    /// `mb_step` then `variance_step`.
    Euler,
    /// Exact propagation of the linear drift over the step at frozen σ_z,
    /// Euler–Maruyama noise, RK4 covariances. Euler–Maruyama on an undamped
    /// oscillator grows by ω²dt per unit time, which exceeds γ_M/2 for any
    /// practical dt at GHz frequencies.
    Exponential,
}

impl FilterScheme {
    pub fn name(self) -> &'static str {
        match self {
            FilterScheme::Euler => "euler",
            FilterScheme::Exponential => "exponential",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "euler" => Some(FilterScheme::Euler),
            "exponential" => Some(FilterScheme::Exponential),
            _ => None,
        }
    }
}

/// Filter integrator with the propagator cached for the last σ_z value.
#[derive(Clone, Debug)]
pub struct Filter {
    pub model: FilterModel,
    pub gains: ControlGains,
    pub dt: f64,
    pub scheme: FilterScheme,
    pub state: FilterState,
    cache: Option<(f64, Matrix4<f64>)>,
}

impl Filter {
    pub fn new(model: FilterModel, gains: ControlGains, dt: f64, scheme: FilterScheme, f0: FilterState) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        f0.check_invariants()?;
        Ok(Self { model, gains, dt, scheme, state: f0, cache: None })
    }

    pub fn u(&self) -> f64 {
        feedback_u(&self.state, &self.gains)
    }

    /// Predicted record slope s⟨a + a†⟩.
    pub fn record_mean(&self) -> f64 {
        self.model.meas_strength() * 2.0 * self.state.a_mean.re
    }

    /// Advances the filter with innovation `dw`.
    pub fn step(&mut self, dw: f64, index: usize) -> Result<()> {
        let next = match self.scheme {
            FilterScheme::Euler => {
                let n = mb_step(&self.state, &self.model, &self.gains, dw, self.dt);
                n.map(|n| variance_step(&n, &self.model, self.dt))
            }
            FilterScheme::Exponential => Ok(self.exponential_step(dw)),
        };
        match next {
            Ok(n) if n.is_finite() => {
                self.state = n;
                Ok(())
            }
            _ => Err(Error::Blowup { step: index }),
        }
    }

    fn exponential_step(&mut self, dw: f64) -> FilterState {
        let f = self.state;
        let m = &self.model;
        let dt = self.dt;
        let prop = match self.cache {
            Some((sz, p)) if sz == f.sz => p,
            _ => {
                let p = (m.mode_generator(f.sz, &self.gains) * dt).exp();
                self.cache = Some((f.sz, p));
                p
            }
        };
        let y = prop * Vector4::new(f.b_mean.re, f.b_mean.im, f.a_mean.re, f.a_mean.im);
        let noise = m.noise_gain(&f) * dw;
        let decay = (-m.dephasing() * dt).exp();
        let (s, c) = (m.omega_s * dt).sin_cos();
        let relax = (-m.relaxation() * dt).exp();
        let v = variance_step_rk4(&f, m, dt);
        FilterState {
            sx: decay * (c * f.sx - s * f.sy),
            sy: decay * (s * f.sx + c * f.sy),
            sz: -1.0 + (f.sz + 1.0) * relax,
            b_mean: C64::new(y[0], y[1]),
            a_mean: C64::new(y[2], y[3]) + noise,
            ..v
        }
    }
}

/// Reads the plant record and emits u from the filter state.
#[derive(Clone, Debug)]
pub struct FilterController {
    pub filter: Filter,
    pub series: Vec<LoopRow>,
    step: usize,
}

impl FilterController {
    pub fn new(filter: Filter) -> Self {
        Self { filter, series: Vec::new(), step: 0 }
    }
}

impl Controller for FilterController {
    fn control(&mut self) -> f64 {
        self.filter.u()
    }

    fn observe(&mut self, dy: f64) -> Result<()> {
        let u = self.filter.u();
        let dw = dy - self.filter.record_mean() * self.filter.dt;
        self.filter.step(dw, self.step)?;
        self.step += 1;
        self.series.push(LoopRow {
            time: self.step as f64 * self.filter.dt,
            state: self.filter.state,
            u,
            dy,
        });
        Ok(())
    }
}

/// One row of the closed-loop series: the filter state after the step, the
/// control applied during it and the record increment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopRow {
    pub time: f64,
    pub state: FilterState,
    pub u: f64,
    pub dy: f64,
}

pub const LOOP_COLUMNS: [&str; 13] = [
    "time_s", "sx", "sy", "sz", "re_b", "im_b", "re_a", "im_a", "VxT", "VpT", "CxTpT", "u", "dY",
];

pub fn write_loop_csv<W: Write>(rows: &[LoopRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(LOOP_COLUMNS)?;
    for r in rows {
        let s = &r.state;
        wr.write_record(&[
            fmt(r.time),
            fmt(s.sx),
            fmt(s.sy),
            fmt(s.sz),
            fmt(s.b_mean.re),
            fmt(s.b_mean.im),
            fmt(s.a_mean.re),
            fmt(s.a_mean.im),
            fmt(s.v_xt),
            fmt(s.v_pt),
            fmt(s.c_xtpt),
            fmt(r.u),
            fmt(r.dy),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_loop_csv(rows: &[LoopRow], path: &Path) -> Result<()> {
    write_loop_csv(rows, std::fs::File::create(path)?)
}

/// Source of the record consumed by the filter.
pub enum Plant<'a> {
    /// The filter's own innovation, drawn from the substream `seed ⊕ index`.
    SelfLoop { seed: u64, index: u64 },
    /// A recorded dY series sampled at `dt`.
    Replay { dy: &'a [f64], dt: f64 },
    /// The full conditional state of the joint system.
    FullSme {
        model: &'a FullModel,
        rho0: &'a DensityState,
        cfg: &'a SmeConfig,
        index: u64,
    },
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub rows: Vec<LoopRow>,
    /// Present for the full-system plant.
    pub plant: Option<TrajectoryOutcome>,
}

/// Runs the filter in lock-step with a plant for `steps` steps.
pub fn run_closed_loop(filter: Filter, plant: Plant<'_>, steps: usize) -> Result<ClosedLoopRun> {
    match plant {
        Plant::SelfLoop { seed, index } => {
            let mut rng = NormalStream::substream(seed, index);
            let mut c = FilterController::new(filter);
            c.series.reserve(steps);
            for _ in 0..steps {
                let dw = rng.wiener(c.filter.dt);
                let dy = c.filter.record_mean() * c.filter.dt + dw;
                c.observe(dy)?;
            }
            Ok(ClosedLoopRun { rows: c.series, plant: None })
        }
        Plant::Replay { dy, dt } => {
            if dt != filter.dt {
                return Err(Error::DtMismatch { plant: dt, filter: filter.dt });
            }
            let mut c = FilterController::new(filter);
            for &y in dy.iter().take(steps) {
                c.observe(y)?;
            }
            Ok(ClosedLoopRun { rows: c.series, plant: None })
        }
        Plant::FullSme { model, rho0, cfg, index } => {
            if cfg.dt != filter.dt {
                return Err(Error::DtMismatch { plant: cfg.dt, filter: filter.dt });
            }
            let cfg = SmeConfig { steps, ..cfg.clone() };
            let mut c = FilterController::new(filter);
            let out = simulate_trajectory(model, rho0, &cfg, &mut c, index)?;
            Ok(ClosedLoopRun { rows: c.series, plant: Some(out) })
        }
    }
}

/// Least-squares slope of ln|⟨b⟩| against time, negated.
pub fn fitted_decay_rate(rows: &[LoopRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.state.b_mean.norm() > 0.0)
        .map(|r| (r.time, r.state.b_mean.norm().ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    -num / den
}
