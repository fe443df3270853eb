// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! Flat `key = value` run configuration.
//!
//! Rates and frequencies are rad/s. A rate key may instead carry a `_GHz`,
//! `_MHz` or `_kHz` suffix, in which case the value is a frequency in that
//! unit and is multiplied by 2π. Unknown keys, duplicated keys and suffixes
//! on dimensionless keys are errors. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::full_sme::HamiltonianKind;
use crate::reduced::{Purpose, REGION_THRESHOLD};
use crate::sme::Scheme;
use crate::system::{DerivedKey, EpsDeltaConvention, Overrides, PhysicalParams, TWO_PI};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Full,
    ReducedSme,
    ReducedGaussian,
    FilterSelfloop,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Full, Engine::ReducedSme, Engine::ReducedGaussian, Engine::FilterSelfloop];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Full => "full",
            Engine::ReducedSme => "reduced-sme",
            Engine::ReducedGaussian => "reduced-gaussian",
            Engine::FilterSelfloop => "filter-selfloop",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

/// Values of v_p/ω_T at fixed v_x/ω_T.
#[derive(Clone, Debug, PartialEq)]
pub enum GainSpec {
    List { v_x: f64, v_p: Vec<f64> },
    Sweep { v_x: f64, start: f64, stop: f64, points: usize },
}

impl GainSpec {
    pub fn v_x(&self) -> f64 {
        match self {
            GainSpec::List { v_x, .. } | GainSpec::Sweep { v_x, .. } => *v_x,
        }
    }

    /// The v_p/ω_T values in sweep order.
    pub fn v_p_values(&self) -> Vec<f64> {
        match self {
            GainSpec::List { v_p, .. } => v_p.clone(),
            GainSpec::Sweep { start, stop, points, .. } => {
                if *points == 1 {
                    return vec![*start];
                }
                let step = (stop - start) / (*points - 1) as f64;
                (0..*points).map(|k| if k + 1 == *points { *stop } else { start + step * k as f64 }).collect()
            }
        }
    }
}

/// A validated run configuration in SI units.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub physical: PhysicalParams,
    pub overrides: Overrides,
    pub convention: EpsDeltaConvention,
    pub n_beam: usize,
    pub n_tlr: usize,
    pub reduced_levels: usize,
    /// dt·ω_M
    pub dt_wm: f64,
    /// Horizon in units of 1/γ_M.
    pub horizon_gm: f64,
    /// dt·ω_M for the full engine inside a crosscheck.
    pub full_dt_wm: f64,
    pub seed: u64,
    pub n_traj: usize,
    pub full_n_traj: usize,
    pub gains: GainSpec,
    pub engine: Engine,
    pub purpose: Option<Purpose>,
    pub region_threshold: f64,
    pub hamiltonian: HamiltonianKind,
    pub scheme: Scheme,
    pub positivity_stride: u64,
    pub crosscheck_full: bool,
    pub output_dir: String,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Rate,
    Real,
    Count,
    Text,
}

struct KeySpec {
    name: &'static str,
    kind: Kind,
    required: bool,
}

const fn key(name: &'static str, kind: Kind, required: bool) -> KeySpec {
    KeySpec { name, kind, required }
}

const KEYS: &[KeySpec] = &[
    key("L", Kind::Real, true),
    key("C_J", Kind::Real, true),
    key("I_c", Kind::Real, true),
    key("m", Kind::Real, true),
    key("eta", Kind::Real, true),
    key("omega_M", Kind::Rate, true),
    key("Bl", Kind::Real, true),
    key("Q", Kind::Real, true),
    key("T_bath", Kind::Real, true),
    key("phi_e", Kind::Real, true),
    key("gamma_S", Kind::Rate, true),
    key("gamma_T", Kind::Rate, true),
    key("g_ST", Kind::Rate, true),
    key("omega_T", Kind::Rate, true),
    key("M_phi", Kind::Real, true),
    key("M_r", Kind::Real, true),
    key("engine", Kind::Text, true),
    key("seed", Kind::Count, true),
    key("n_traj", Kind::Count, true),
    key("v_x_over_wT", Kind::Real, true),
    key("v_p_over_wT", Kind::Text, false),
    key("v_p_over_wT_start", Kind::Real, false),
    key("v_p_over_wT_stop", Kind::Real, false),
    key("v_p_points", Kind::Count, false),
    key("override_epsilon", Kind::Rate, false),
    key("override_Delta", Kind::Rate, false),
    key("override_omega_S", Kind::Rate, false),
    key("override_g_MS", Kind::Rate, false),
    key("override_g_MT", Kind::Rate, false),
    key("override_gamma_M", Kind::Rate, false),
    key("override_nbar_M", Kind::Real, false),
    key("eps_delta_convention", Kind::Text, false),
    key("n_beam", Kind::Count, false),
    key("n_tlr", Kind::Count, false),
    key("reduced_levels", Kind::Count, false),
    key("dt_wM", Kind::Real, false),
    key("horizon_gM", Kind::Real, false),
    key("full_dt_wM", Kind::Real, false),
    key("full_n_traj", Kind::Count, false),
    key("purpose", Kind::Text, false),
    key("region_threshold", Kind::Real, false),
    key("hamiltonian", Kind::Text, false),
    key("scheme", Kind::Text, false),
    key("positivity_stride", Kind::Count, false),
    key("crosscheck_full", Kind::Text, false),
    key("output_dir", Kind::Text, false),
];

const SUFFIXES: [(&str, f64); 3] = [("_GHz", 1e9), ("_MHz", 1e6), ("_kHz", 1e3)];

/// Names of every required key, in schema order.
pub fn required_keys() -> Vec<&'static str> {
    KEYS.iter().filter(|k| k.required).map(|k| k.name).collect()
}

fn lookup(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// Splits `raw` into a schema key and the frequency unit of its suffix.
fn resolve_key(raw: &str) -> Result<(&'static KeySpec, Option<f64>)> {
    if let Some(spec) = lookup(raw) {
        return Ok((spec, None));
    }
    for (suffix, scale) in SUFFIXES {
        if let Some(base) = raw.strip_suffix(suffix) {
            return match lookup(base) {
                Some(spec) if spec.kind == Kind::Rate => Ok((spec, Some(scale))),
                Some(_) => Err(Error::Config(format!("unit suffix {suffix} on dimensionless key {base}"))),
                None => Err(Error::Config(format!("unknown key {raw}"))),
            };
        }
    }
    Err(Error::Config(format!("unknown key {raw}")))
}

#[derive(Clone, Debug)]
enum Value {
    Num(f64),
    Int(u64),
    Text(String),
}

fn parse_pairs(text: &str) -> Result<BTreeMap<&'static str, Value>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        let (spec, unit) = resolve_key(k).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
            other => other,
        })?;
        let value = match spec.kind {
            Kind::Text => Value::Text(v.to_string()),
            Kind::Count => {
                let n: u64 = v
                    .parse()
                    .map_err(|_| Error::Config(format!("line {}: {k} must be a non-negative integer", lineno + 1)))?;
                Value::Int(n)
            }
            Kind::Rate | Kind::Real => {
                let x: f64 = v.parse().map_err(|_| Error::Config(format!("line {}: {k} must be a number", lineno + 1)))?;
                if !x.is_finite() {
                    return Err(Error::Config(format!("line {}: {k} must be finite", lineno + 1)));
                }
                // 2π·(x·unit) reproduces literals written as TWO_PI * 4.3e9
                Value::Num(unit.map_or(x, |u| TWO_PI * (x * u)))
            }
        };
        if out.insert(spec.name, value).is_some() {
            return Err(Error::Config(format!("line {}: {} given twice", lineno + 1, spec.name)));
        }
    }
    Ok(out)
}

struct Fields(BTreeMap<&'static str, Value>);

impl Fields {
    fn num(&self, k: &str) -> Option<f64> {
        match self.0.get(k) {
            Some(Value::Num(x)) => Some(*x),
            Some(Value::Int(n)) => Some(*n as f64),
            _ => None,
        }
    }

    fn int(&self, k: &str) -> Option<u64> {
        match self.0.get(k) {
            Some(Value::Int(n)) => Some(*n),
            _ => None,
        }
    }

    fn req(&self, k: &str) -> f64 {
        self.num(k).expect("required keys are checked before extraction")
    }

    fn text(&self, k: &str) -> Option<&str> {
        match self.0.get(k) {
            Some(Value::Text(s)) => Some(s.as_str()),
            _ => None,
        }
    }

    fn count(&self, k: &str, default: usize) -> usize {
        self.int(k).map_or(default, |n| n as usize)
    }
}

/// Parses configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let f = Fields(parse_pairs(text)?);
    let missing: Vec<&str> = required_keys().into_iter().filter(|k| !f.0.contains_key(k)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
    }
    let physical = PhysicalParams {
        l_ind: f.req("L"),
        c_j: f.req("C_J"),
        i_c: f.req("I_c"),
        mass: f.req("m"),
        eta: f.req("eta"),
        omega_m: f.req("omega_M"),
        bl: f.req("Bl"),
        q: f.req("Q"),
        t_bath: f.req("T_bath"),
        phi_e: f.req("phi_e"),
        gamma_s: f.req("gamma_S"),
        gamma_t: f.req("gamma_T"),
        g_st: f.req("g_ST"),
        omega_t: f.req("omega_T"),
        m_phi: f.req("M_phi"),
        m_r: f.req("M_r"),
    };
    physical.validate()?;

    let mut overrides = Overrides::new();
    for k in DerivedKey::ALL {
        if let Some(v) = f.num(&format!("override_{}", k.name())) {
            overrides.insert(k, v);
        }
    }
    let convention = match f.text("eps_delta_convention").unwrap_or("angular") {
        "angular" => EpsDeltaConvention::Angular,
        "linear" => EpsDeltaConvention::Linear,
        other => return Err(Error::Config(format!("eps_delta_convention must be angular or linear, got {other}"))),
    };
    let engine_name = f.text("engine").unwrap_or_default();
    let engine = Engine::from_name(engine_name).ok_or_else(|| {
        let names: Vec<_> = Engine::ALL.iter().map(|e| e.name()).collect();
        Error::Config(format!("engine must be one of {}, got {engine_name}", names.join(", ")))
    })?;

    let v_x = f.req("v_x_over_wT");
    let sweep_keys = ["v_p_over_wT_start", "v_p_over_wT_stop", "v_p_points"];
    let n_sweep = sweep_keys.iter().filter(|k| f.0.contains_key(*k)).count();
    let gains = match (f.text("v_p_over_wT"), n_sweep) {
        (Some(list), 0) => {
            let v_p = list
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad v_p_over_wT entry {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            GainSpec::List { v_x, v_p }
        }
        (None, 3) => GainSpec::Sweep {
            v_x,
            start: f.req("v_p_over_wT_start"),
            stop: f.req("v_p_over_wT_stop"),
            points: f.count("v_p_points", 0),
        },
        _ => {
            return Err(Error::Config(
                "give either v_p_over_wT or all of v_p_over_wT_start, v_p_over_wT_stop, v_p_points".into(),
            ))
        }
    };
    if gains.v_p_values().is_empty() {
        return Err(Error::Config("the gain sweep is empty".into()));
    }
    let purpose = match f.text("purpose") {
        None => None,
        Some(s) => Some(Purpose::from_name(s).ok_or_else(|| Error::Config(format!("unknown purpose {s}")))?),
    };
    let hamiltonian = match f.text("hamiltonian") {
        None => HamiltonianKind::Effective,
        Some(s) => HamiltonianKind::from_name(s).ok_or_else(|| Error::Config(format!("unknown hamiltonian {s}")))?,
    };
    let scheme = match f.text("scheme") {
        None => Scheme::Split,
        Some(s) => Scheme::from_name(s).ok_or_else(|| Error::Config(format!("unknown scheme {s}")))?,
    };
    let crosscheck_full = match f.text("crosscheck_full").unwrap_or("false") {
        "true" => true,
        "false" => false,
        other => return Err(Error::Config(format!("crosscheck_full must be true or false, got {other}"))),
    };
    let cfg = RunConfig {
        physical,
        overrides,
        convention,
        n_beam: f.count("n_beam", 15),
        n_tlr: f.count("n_tlr", 8),
        reduced_levels: f.count("reduced_levels", 30),
        dt_wm: f.num("dt_wM").unwrap_or(0.05),
        horizon_gm: f.num("horizon_gM").unwrap_or(8.0),
        full_dt_wm: f.num("full_dt_wM").unwrap_or(0.05),
        seed: f.int("seed").unwrap_or_default(),
        n_traj: f.count("n_traj", 0),
        full_n_traj: f.count("full_n_traj", 200),
        gains,
        engine,
        purpose,
        region_threshold: f.num("region_threshold").unwrap_or(REGION_THRESHOLD),
        hamiltonian,
        scheme,
        positivity_stride: f.count("positivity_stride", 1) as u64,
        crosscheck_full,
        output_dir: f.text("output_dir").unwrap_or("out").to_string(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Shipped presets, by name.
pub const PRESETS: [(&str, &str); 6] = [
    ("device", include_str!("../presets/device.cfg")),
    ("squeeze_x", include_str!("../presets/squeeze_x.cfg")),
    ("squeeze_p", include_str!("../presets/squeeze_p.cfg")),
    ("cool", include_str!("../presets/cool.cfg")),
    ("crosscheck_small", include_str!("../presets/crosscheck_small.cfg")),
    ("crosscheck_softened", include_str!("../presets/crosscheck_softened.cfg")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("unknown preset {name}; available: {}", names.join(", ")))
    })
}

pub fn load_preset(name: &str) -> Result<RunConfig> {
    parse_config(preset_text(name)?)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_wM", self.dt_wm),
            ("horizon_gM", self.horizon_gm),
            ("full_dt_wM", self.full_dt_wm),
            ("region_threshold", self.region_threshold),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.positivity_stride == 0 {
            return Err(Error::Config("positivity_stride must be at least 1".into()));
        }
        if self.n_traj == 0 || self.full_n_traj == 0 {
            return Err(Error::Config("n_traj and full_n_traj must be at least 1".into()));
        }
        if self.reduced_levels < 3 || self.n_beam < 2 || self.n_tlr < 2 {
            return Err(Error::Config("truncations must be at least 2 (3 for reduced_levels)".into()));
        }
        if let GainSpec::Sweep { points, .. } = self.gains {
            if points == 0 {
                return Err(Error::Config("v_p_points must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Canonical text that parses back to an identical configuration.
    pub fn to_config_string(&self) -> String {
        let p = &self.physical;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        for (k, v) in [
            ("L", p.l_ind),
            ("C_J", p.c_j),
            ("I_c", p.i_c),
            ("m", p.mass),
            ("eta", p.eta),
            ("omega_M", p.omega_m),
            ("Bl", p.bl),
            ("Q", p.q),
            ("T_bath", p.t_bath),
            ("phi_e", p.phi_e),
            ("gamma_S", p.gamma_s),
            ("gamma_T", p.gamma_t),
            ("g_ST", p.g_st),
            ("omega_T", p.omega_t),
            ("M_phi", p.m_phi),
            ("M_r", p.m_r),
        ] {
            put(k, format!("{v:?}"));
        }
        for (k, v) in &self.overrides {
            put(&format!("override_{}", k.name()), format!("{v:?}"));
        }
        put("eps_delta_convention", self.convention.name().into());
        put("engine", self.engine.name().into());
        put("seed", self.seed.to_string());
        put("n_traj", self.n_traj.to_string());
        put("full_n_traj", self.full_n_traj.to_string());
        match &self.gains {
            GainSpec::List { v_x, v_p } => {
                put("v_x_over_wT", format!("{v_x:?}"));
                put("v_p_over_wT", v_p.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "));
            }
            GainSpec::Sweep { v_x, start, stop, points } => {
                put("v_x_over_wT", format!("{v_x:?}"));
                put("v_p_over_wT_start", format!("{start:?}"));
                put("v_p_over_wT_stop", format!("{stop:?}"));
                put("v_p_points", points.to_string());
            }
        }
        put("n_beam", self.n_beam.to_string());
        put("n_tlr", self.n_tlr.to_string());
        put("reduced_levels", self.reduced_levels.to_string());
        put("dt_wM", format!("{:?}", self.dt_wm));
        put("horizon_gM", format!("{:?}", self.horizon_gm));
        put("full_dt_wM", format!("{:?}", self.full_dt_wm));
        if let Some(pu) = self.purpose {
            put("purpose", pu.name().into());
        }
        put("region_threshold", format!("{:?}", self.region_threshold));
        put("hamiltonian", self.hamiltonian.name().into());
        put("scheme", self.scheme.name().into());
        put("positivity_stride", self.positivity_stride.to_string());
        put("crosscheck_full", self.crosscheck_full.to_string());
        put("output_dir", self.output_dir.clone());
        s
    }
}
