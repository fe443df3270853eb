// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Moment dynamics of a single bosonic mode with quadratic Hamiltonian,
//! linear Lindblad channels, one homodyne-monitored channel and linear
//! feedback of the conditional mean.
//!
//! Quadratures r = (q, p) with b = (q + ip)/√2 and [q, p] = i, so the vacuum
//! covariance is ½·I. A linear operator c = c_b·b + c_bd·b† is written as
//! c = λ·r. The conditional covariance V obeys a Riccati equation and stays
//! deterministic; the conditional mean is an Ornstein–Uhlenbeck process whose
//! stationary covariance M solves a Lyapunov equation.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::operators::C64;

pub type M2 = Matrix2<f64>;
pub type V2 = Vector2<f64>;

/// Symplectic form with ṙ = Σ·∇H.
pub fn sigma() -> M2 {
    M2::new(0.0, 1.0, -1.0, 0.0)
}

/// Quadrature coefficients λ of c = c_b·b + c_bd·b†.
pub fn lambda(c_b: C64, c_bd: C64) -> (C64, C64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ((c_b + c_bd) * s, (c_b - c_bd) * C64::new(0.0, s))
}

/// Real vector f with α·b + α*·b† = f·r.
pub fn hermitian_quadrature(alpha: C64) -> V2 {
    let s = std::f64::consts::SQRT_2;
    V2::new(s * alpha.re, -s * alpha.im)
}

/// Quadratic form G of ω·b†b + ξ·b² + ξ*·b†² (up to a constant), H = ½ rᵀGr.
pub fn quadratic_form(omega: f64, xi: C64) -> M2 {
    M2::new(
        omega + 2.0 * xi.re,
        -2.0 * xi.im,
        -2.0 * xi.im,
        omega - 2.0 * xi.re,
    )
}

#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    /// Hamiltonian quadratic form.
    pub g: M2,
    /// Lindblad channels (c_b, c_bd) with rates absorbed.
    pub channels: Vec<(C64, C64)>,
    /// Monitored operator (c_b, c_bd) without rate, and √(ηγ) prefactor.
    pub measured: Option<((C64, C64), f64)>,
    /// Control enters as H_fb = u·(f_ctrl·r) with u = fb_row·⟨r⟩.
    pub f_ctrl: V2,
    pub fb_row: V2,
}

/// Covariance, classical mean covariance and ensemble mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub v: M2,
    pub m: M2,
    pub mean: V2,
}

impl Moments {
    pub fn thermal(nbar: f64) -> Self {
        Self {
            v: M2::identity() * (nbar + 0.5),
            m: M2::zeros(),
            mean: V2::zeros(),
        }
    }

    fn axpy(&self, h: f64, d: &Moments) -> Moments {
        Moments {
            v: self.v + d.v * h,
            m: self.m + d.m * h,
            mean: self.mean + d.mean * h,
        }
    }

    fn values(&self) -> [f64; 8] {
        [
            self.v[(0, 0)],
            self.v[(1, 1)],
            self.v[(0, 1)],
            self.m[(0, 0)],
            self.m[(1, 1)],
            self.m[(0, 1)],
            self.mean[0],
            self.mean[1],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|x| x.is_finite())
    }

    /// E⟨b†b⟩ = tr(V + M)/2 − ½ + |mean|²/2
    pub fn occupation(&self) -> f64 {
        0.5 * (self.v.trace() + self.m.trace()) - 0.5 + 0.5 * self.mean.norm_squared()
    }
}

impl LinearGaussianModel {
    fn n_matrix(&self) -> (M2, M2) {
        let mut re = M2::zeros();
        let mut im = M2::zeros();
        for &(cb, cbd) in &self.channels {
            let (l0, l1) = lambda(cb, cbd);
            let l = [l0, l1];
            for j in 0..2 {
                for k in 0..2 {
                    let z = l[j] * l[k].conj();
                    re[(j, k)] += z.re;
                    im[(j, k)] += z.im;
                }
            }
        }
        (re, im)
    }

    /// Drift of the conditional mean without feedback.
    pub fn drift(&self) -> M2 {
        let (_, im) = self.n_matrix();
        sigma() * self.g - sigma() * im
    }

    pub fn diffusion(&self) -> M2 {
        let (re, _) = self.n_matrix();
        sigma() * re * sigma().transpose()
    }

    pub fn feedback_matrix(&self) -> M2 {
        (sigma() * self.f_ctrl) * self.fb_row.transpose()
    }

    pub fn closed_loop_drift(&self) -> M2 {
        self.drift() + self.feedback_matrix()
    }

    /// Kalman-type gain of the conditional mean for covariance `v`.
    pub fn gain(&self, v: &M2) -> V2 {
        match self.measured {
            None => V2::zeros(),
            Some(((cb, cbd), s)) => {
                let (m0, m1) = lambda(cb, cbd);
                let re_mu = V2::new(m0.re, m1.re);
                let im_mu = V2::new(m0.im, m1.im);
                (v * re_mu * 2.0 - sigma() * im_mu) * s
            }
        }
    }

    /// Coefficient row h with dY = h·⟨r⟩dt + dW.
    pub fn record_row(&self) -> V2 {
        match self.measured {
            None => V2::zeros(),
            Some(((cb, cbd), s)) => {
                let (m0, m1) = lambda(cb, cbd);
                V2::new(m0.re, m1.re) * (2.0 * s)
            }
        }
    }

    pub fn riccati_rhs(&self, v: &M2) -> M2 {
        let a = self.drift();
        let k = self.gain(v);
        a * v + v * a.transpose() + self.diffusion() - k * k.transpose()
    }

    fn rhs(&self, x: &Moments, a: &M2, af: &M2, d: &M2) -> Moments {
        let k = self.gain(&x.v);
        let kk = k * k.transpose();
        Moments {
            v: a * x.v + x.v * a.transpose() + d - kk,
            m: af * x.m + x.m * af.transpose() + kk,
            mean: af * x.mean,
        }
    }

    /// Largest rate scale, used to pick the RK4 step.
    fn rate_scale(&self, x: &Moments) -> f64 {
        let a = self.closed_loop_drift();
        let k = self.gain(&x.v);
        let row = |m: &M2| (0..2).map(|r| m[(r, 0)].abs() + m[(r, 1)].abs()).fold(0.0, f64::max);
        let s = self.measured.map(|(_, s)| s).unwrap_or(0.0);
        row(&a) + row(&self.drift()) + 4.0 * s * k.norm() + 1e-300
    }
}

/// Convergence policy for the stationary flow.
#[derive(Clone, Copy, Debug)]
pub struct FlowConfig {
    /// Length of one convergence window (s).
    pub window: f64,
    /// Give up after this many windows.
    pub max_windows: usize,
    /// Relative change allowed across one window.
    pub rel_tol: f64,
    /// RK4 step as a fraction of the inverse rate scale.
    pub step_fraction: f64,
    /// Values larger than this count as divergence.
    pub blowup: f64,
}

impl FlowConfig {
    pub fn for_rate(gamma_m: f64) -> Self {
        Self {
            window: 1.0 / gamma_m,
            max_windows: 200,
            rel_tol: 1e-10,
            step_fraction: 0.05,
            blowup: 1e12,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FlowResult {
    pub moments: Moments,
    pub windows: usize,
    pub time: f64,
}

fn rk4_step(model: &LinearGaussianModel, x: &Moments, h: f64, a: &M2, af: &M2, d: &M2) -> Moments {
    let k1 = model.rhs(x, a, af, d);
    let k2 = model.rhs(&x.axpy(0.5 * h, &k1), a, af, d);
    let k3 = model.rhs(&x.axpy(0.5 * h, &k2), a, af, d);
    let k4 = model.rhs(&x.axpy(h, &k3), a, af, d);
    Moments {
        v: x.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * (h / 6.0),
        m: x.m + (k1.m + k2.m * 2.0 + k3.m * 2.0 + k4.m) * (h / 6.0),
        mean: x.mean + (k1.mean + k2.mean * 2.0 + k3.mean * 2.0 + k4.mean) * (h / 6.0),
    }
}

/// Integrates the moment ODEs for a fixed duration.
pub fn evolve(model: &LinearGaussianModel, x0: &Moments, duration: f64, step_fraction: f64) -> Moments {
    let a = model.drift();
    let af = model.closed_loop_drift();
    let d = model.diffusion();
    let mut x = *x0;
    let mut t = 0.0;
    while t < duration {
        let h = (step_fraction / model.rate_scale(&x)).min(duration - t);
        x = rk4_step(model, &x, h, &a, &af, &d);
        t += h;
    }
    x
}

/// Integrates to stationarity, checking relative change once per window.
pub fn stationary_flow(model: &LinearGaussianModel, x0: &Moments, cfg: &FlowConfig) -> Result<FlowResult> {
    let a = model.drift();
    let af = model.closed_loop_drift();
    let d = model.diffusion();
    let mut x = *x0;
    let mut t = 0.0;
    for w in 1..=cfg.max_windows {
        let start = x;
        let t_end = w as f64 * cfg.window;
        while t < t_end {
            let h = (cfg.step_fraction / model.rate_scale(&x)).min(t_end - t);
            x = rk4_step(model, &x, h, &a, &af, &d);
            t += h;
        }
        if !x.is_finite() || x.values().iter().any(|v| v.abs() > cfg.blowup) {
            return Err(Error::NonConvergence {
                horizon: t,
                detail: format!("moments diverged after {w} windows"),
            });
        }
        let now = x.values();
        let before = start.values();
        // unit floor: moments are in units of ħ, where ½ is the vacuum scale
        let converged = now
            .iter()
            .zip(before.iter())
            .all(|(n, b)| (n - b).abs() <= cfg.rel_tol * n.abs().max(1.0));
        if converged {
            return Ok(FlowResult { moments: x, windows: w, time: t });
        }
    }
    Err(Error::NonConvergence {
        horizon: t,
        detail: format!("relative change above {:.1e} after {} windows", cfg.rel_tol, cfg.max_windows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thermal_model(gamma: f64, nbar: f64, omega: f64) -> LinearGaussianModel {
        LinearGaussianModel {
            g: quadratic_form(omega, C64::new(0.0, 0.0)),
            channels: vec![
                (C64::new((gamma * (nbar + 1.0)).sqrt(), 0.0), C64::new(0.0, 0.0)),
                (C64::new(0.0, 0.0), C64::new((gamma * nbar).sqrt(), 0.0)),
            ],
            measured: None,
            f_ctrl: V2::zeros(),
            fb_row: V2::zeros(),
        }
    }

    #[test]
    fn thermal_fixed_point() {
        let m = thermal_model(0.1, 2.0, 1.0);
        assert!((m.drift() - M2::new(-0.05, 1.0, -1.0, -0.05)).norm() < 1e-15);
        assert!((m.diffusion() - M2::identity() * 0.25).norm() < 1e-15);
        let r = stationary_flow(&m, &Moments::thermal(0.0), &FlowConfig::for_rate(0.1)).unwrap();
        assert!((r.moments.v - M2::identity() * 2.5).norm() < 1e-9);
        assert!(r.moments.m.norm() < 1e-12);
    }

    #[test]
    fn quadrature_helpers() {
        // b = (q + ip)/√2 ⇒ λ_b = (1, i)/√2
        let (l0, l1) = lambda(C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((l0 - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((l1 - C64::new(0.0, s)).norm() < 1e-15);
        // b + b† = √2 q
        let f = hermitian_quadrature(C64::new(1.0, 0.0));
        assert!((f - V2::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn measured_vacuum_stays_pure() {
        // zero temperature damping measured with unit efficiency keeps the vacuum
        let gamma = 0.3;
        let mut m = thermal_model(gamma, 0.0, 1.0);
        m.measured = Some(((C64::new(1.0, 0.0), C64::new(0.0, 0.0)), gamma.sqrt()));
        let v0 = M2::identity() * 0.5;
        assert!(m.riccati_rhs(&v0).norm() < 1e-15);
        assert!(m.gain(&v0).norm() < 1e-15);
    }
}
