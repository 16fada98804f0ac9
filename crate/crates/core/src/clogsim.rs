//! Lumped clogging simulator.
//!
//! The particle fraction relaxes towards a regime-dependent equilibrium,
//! `dΓ/dt = λ(Γ_eq − Γ)`, and the deposit mass grows as
//! `dm/dt = Φ_p(Γ) + Φ_s` where `Φ_p` is the vena contracta flux and `Φ_s` a
//! regime constant. The deposit volume `m / (ρ_p (1 − ε_c))` drives the
//! empirical clogging correlation. Cleanings scale the mass at grid points.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{FailedRow, Provenance, TrajectoryDataset};
use crate::probmodel::InputModel;

/// Inputs in dataset order.
pub const INPUT_NAMES: [&str; 7] = ["alpha", "beta", "eps_e", "eps_c", "d_p", "gamma_p0", "a_v"];

const PRESET_JSON: &str = include_str!("../presets/sg-clogging-7d.json");

#[derive(Debug, Error)]
pub enum SimError {
    #[error("constant '{name}' must be {rule}, got {value}")]
    InvalidConstant { name: &'static str, rule: &'static str, value: f64 },
    #[error("rho_p ({rho_p}) must exceed rho_l ({rho_l})")]
    DensityOrder { rho_p: f64, rho_l: f64 },
    #[error("viscosity mu_l is zero")]
    ZeroViscosity,
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("no regime parameters for species {species:?} at {ph:?} pH")]
    MissingRegime { species: Species, ph: Ph },
    #[error("input vector has {got} entries, expected 7")]
    InputLength { got: usize },
    #[error("input '{name}' is out of range: {value}")]
    InvalidInput { name: &'static str, value: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("k_v calibration failed: {0}")]
    Calibration(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("dataset: {0}")]
    Dataset(#[from] crate::dataio::DataError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Chi1,
    Chi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ph {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleaningKind {
    Curative,
    Preventive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub t_start: f64,
    pub species: Species,
    pub ph: Ph,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cleaning {
    pub t: f64,
    pub kind: CleaningKind,
}

/// Equilibrium particle fraction and soluble flux (kg/yr) for one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeParams {
    pub species: Species,
    pub ph: Ph,
    pub gamma_eq: f64,
    pub soluble_flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub k_v: f64,
    pub rho_p: f64,
    pub rho_l: f64,
    pub u_z: f64,
    pub mu_l: f64,
    /// Relaxation rate of the particle fraction (1/yr).
    pub lambda: f64,
    /// Velocity reduction per unit `ε_e`.
    pub drag: f64,
    /// Deposit volume unit in m³; `β` is expressed per this unit.
    pub volume_unit: f64,
    pub r_curative: f64,
    pub r_preventive: f64,
    pub regimes: Vec<RegimeParams>,
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_v", self.k_v),
            ("rho_p", self.rho_p),
            ("rho_l", self.rho_l),
            ("u_z", self.u_z),
            ("lambda", self.lambda),
            ("volume_unit", self.volume_unit),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidConstant { name, rule: "positive", value });
            }
        }
        if self.mu_l == 0.0 {
            return Err(SimError::ZeroViscosity);
        }
        if !(self.mu_l.is_finite() && self.mu_l > 0.0) {
            return Err(SimError::InvalidConstant { name: "mu_l", rule: "positive", value: self.mu_l });
        }
        if self.rho_p <= self.rho_l {
            return Err(SimError::DensityOrder { rho_p: self.rho_p, rho_l: self.rho_l });
        }
        if !(self.drag.is_finite() && (0.0..1.0).contains(&self.drag)) {
            return Err(SimError::InvalidConstant { name: "drag", rule: "in [0, 1)", value: self.drag });
        }
        for (name, value) in [("r_curative", self.r_curative), ("r_preventive", self.r_preventive)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(SimError::InvalidConstant { name, rule: "in (0, 1)", value });
            }
        }
        if self.r_curative >= self.r_preventive {
            return Err(SimError::InvalidConstant {
                name: "r_curative",
                rule: "below r_preventive",
                value: self.r_curative,
            });
        }
        for r in &self.regimes {
            for (name, value) in [("gamma_eq", r.gamma_eq), ("soluble_flux", r.soluble_flux)] {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(SimError::InvalidConstant { name, rule: "non-negative", value });
                }
            }
        }
        Ok(())
    }

    pub fn regime(&self, species: Species, ph: Ph) -> Result<&RegimeParams> {
        self.regimes
            .iter()
            .find(|r| r.species == species && r.ph == ph)
            .ok_or(SimError::MissingRegime { species, ph })
    }

    pub fn cleaning_factor(&self, kind: CleaningKind) -> f64 {
        match kind {
            CleaningKind::Curative => self.r_curative,
            CleaningKind::Preventive => self.r_preventive,
        }
    }
}

fn default_substeps() -> usize {
    4
}

/// Schedule, output grid and constants for a simulation campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t_f: f64,
    pub n_steps: usize,
    pub segments: Vec<Segment>,
    pub cleanings: Vec<Cleaning>,
    pub constants: PhysicalConstants,
    /// RK4 substeps per output interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

impl SimConfig {
    pub fn preset() -> Self {
        serde_json::from_str(PRESET_JSON).expect("bundled preset parses")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| SimError::Json {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `"preset"` or a path to a JSON config.
    pub fn resolve(spec: &str) -> Result<Self> {
        if spec == "preset" || spec == "sg-clogging-7d" {
            Ok(Self::preset())
        } else {
            Self::load(Path::new(spec))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.n_steps;
        (0..n)
            .map(|k| if k + 1 == n { self.t_f } else { self.t_f * k as f64 / (n - 1) as f64 })
            .collect()
    }

    /// Grid position nearest to `t`.
    pub fn snap(&self, t: f64) -> usize {
        let k = (t / self.t_f * (self.n_steps - 1) as f64).round();
        (k.max(0.0) as usize).min(self.n_steps - 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if !(self.t_f.is_finite() && self.t_f > 0.0) {
            return Err(SimError::Schedule(format!("t_f must be positive, got {}", self.t_f)));
        }
        if self.n_steps < 2 {
            return Err(SimError::Schedule(format!("n_steps must be at least 2, got {}", self.n_steps)));
        }
        if self.substeps == 0 {
            return Err(SimError::Schedule("substeps must be at least 1".into()));
        }
        match self.segments.first() {
            None => return Err(SimError::Schedule("no segments".into())),
            Some(s) if s.t_start != 0.0 => {
                return Err(SimError::Schedule(format!("first segment starts at {}, not 0", s.t_start)))
            }
            _ => {}
        }
        for w in self.segments.windows(2) {
            if !(w[1].t_start > w[0].t_start) {
                return Err(SimError::Schedule(format!(
                    "segment starts must increase ({} then {})",
                    w[0].t_start, w[1].t_start
                )));
            }
        }
        if let Some(s) = self.segments.last() {
            if s.t_start >= self.t_f {
                return Err(SimError::Schedule(format!("segment at {} starts after t_f", s.t_start)));
            }
        }
        for s in &self.segments {
            self.constants.regime(s.species, s.ph)?;
        }
        for w in self.cleanings.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(SimError::Schedule(format!(
                    "cleaning times must increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        for c in &self.cleanings {
            if !(c.t > 0.0 && c.t <= self.t_f) {
                return Err(SimError::Schedule(format!("cleaning at {} is outside (0, t_f]", c.t)));
            }
        }
        Ok(())
    }

    /// Segment governing the output interval starting at grid point `k`.
    pub fn segment_at_step(&self, k: usize) -> &Segment {
        let mut current = &self.segments[0];
        for s in &self.segments {
            if self.snap(s.t_start) <= k {
                current = s;
            }
        }
        current
    }

    /// Grid position of each segment midpoint.
    pub fn segment_midpoints(&self) -> Vec<usize> {
        (0..self.segments.len())
            .map(|j| {
                let end = self.segments.get(j + 1).map_or(self.t_f, |s| s.t_start);
                self.snap(0.5 * (self.segments[j].t_start + end))
            })
            .collect()
    }

    /// Grid ranges `[start, end]` for each segment.
    pub fn segment_steps(&self) -> Vec<(usize, usize)> {
        (0..self.segments.len())
            .map(|j| {
                let start = self.snap(self.segments[j].t_start);
                let end = self.segments.get(j + 1).map_or(self.n_steps - 1, |s| self.snap(s.t_start));
                (start, end)
            })
            .collect()
    }

    /// Same config without cleaning events.
    pub fn without_cleanings(&self) -> Self {
        Self {
            cleanings: Vec::new(),
            ..self.clone()
        }
    }
}

/// Deposition flux `a_v k_v (ρ_p − ρ_l) U_z² d_p² Γ / μ_l`.
#[allow(clippy::too_many_arguments)]
pub fn vena_contracta_flux(a_v: f64, k_v: f64, rho_p: f64, rho_l: f64, u_z: f64, d_p: f64, mu_l: f64, gamma: f64) -> Result<f64> {
    if mu_l == 0.0 {
        return Err(SimError::ZeroViscosity);
    }
    Ok(a_v * k_v * (rho_p - rho_l) * u_z * u_z * d_p * d_p / mu_l * gamma)
}

/// `α (1 − exp(−β V_c))`.
pub fn clogging_rate(alpha: f64, beta: f64, v_c: f64) -> f64 {
    alpha * -(-beta * v_c).exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub tau_c: Vec<f64>,
    pub m_c: Vec<f64>,
}

impl Trajectory {
    /// Per-interval clogging increments `τ(t_{k+1}) − τ(t_k)`.
    pub fn increments(&self) -> Vec<f64> {
        self.tau_c.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Inputs {
    alpha: f64,
    beta: f64,
    eps_e: f64,
    eps_c: f64,
    d_p: f64,
    gamma0: f64,
    a_v: f64,
}

fn parse_inputs(x: &[f64]) -> Result<Inputs> {
    if x.len() != 7 {
        return Err(SimError::InputLength { got: x.len() });
    }
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(SimError::InvalidInput { name: INPUT_NAMES[i], value: v });
        }
    }
    let inp = Inputs {
        alpha: x[0],
        beta: x[1],
        eps_e: x[2],
        eps_c: x[3],
        d_p: x[4],
        gamma0: x[5],
        a_v: x[6],
    };
    if inp.eps_c >= 1.0 {
        return Err(SimError::InvalidInput { name: "eps_c", value: inp.eps_c });
    }
    Ok(inp)
}

/// Trajectory of one input vector `(α, β, ε_e, ε_c, d_p, Γ_p(0), a_v)`.
pub fn simulate(x: &[f64], cfg: &SimConfig) -> Result<Trajectory> {
    let inp = parse_inputs(x)?;
    let c = &cfg.constants;
    let times = cfg.times();
    let n = times.len();
    let u = c.u_z * (1.0 - c.drag * inp.eps_e);
    // Φ_p = coeff · Γ.
    let coeff = vena_contracta_flux(inp.a_v, c.k_v, c.rho_p, c.rho_l, u, inp.d_p, c.mu_l, 1.0)?;
    let volume = |m: f64| m / (c.rho_p * (1.0 - inp.eps_c)) / c.volume_unit;
    let tau = |m: f64| clogging_rate(inp.alpha, inp.beta, volume(m)).clamp(0.0, 100.0);

    let mut events: Vec<Option<f64>> = vec![None; n];
    for ev in &cfg.cleanings {
        let k = cfg.snap(ev.t);
        let r = c.cleaning_factor(ev.kind);
        events[k] = Some(events[k].unwrap_or(1.0) * r);
    }

    let mut g = inp.gamma0;
    let mut m = 0.0f64;
    let mut tau_c = vec![0.0; n];
    let mut m_c = vec![0.0; n];
    if let Some(r) = events[0] {
        m *= r;
    }
    for k in 0..n - 1 {
        let seg = cfg.segment_at_step(k);
        let reg = c.regime(seg.species, seg.ph)?;
        let (geq, phi_s, lam) = (reg.gamma_eq, reg.soluble_flux, c.lambda);
        let h = (times[k + 1] - times[k]) / cfg.substeps as f64;
        for _ in 0..cfg.substeps {
            let f = |g: f64| (lam * (geq - g), coeff * g + phi_s);
            let (a1, b1) = f(g);
            let (a2, b2) = f(g + 0.5 * h * a1);
            let (a3, b3) = f(g + 0.5 * h * a2);
            let (a4, b4) = f(g + h * a3);
            g += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            m += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        if !(g.is_finite() && m.is_finite()) {
            return Err(SimError::NonFinite { t: times[k + 1] });
        }
        if let Some(r) = events[k + 1] {
            m *= r;
        }
        m_c[k + 1] = m;
        tau_c[k + 1] = tau(m);
        if !tau_c[k + 1].is_finite() {
            return Err(SimError::NonFinite { t: times[k + 1] });
        }
    }
    Ok(Trajectory { times, tau_c, m_c })
}

/// Simulates every sampled row; failed rows are dropped and listed in the
/// provenance record.
pub fn monte_carlo(model: &InputModel, cfg: &SimConfig, n: usize, seed: u64) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    if model.dim() != 7 {
        return Err(SimError::InputLength { got: model.dim() });
    }
    let x = model.sample(n, seed);
    let rows: Vec<Result<Trajectory>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            simulate(&row, cfg)
        })
        .collect();

    let mut kept = Vec::with_capacity(n);
    let mut failed = Vec::new();
    let mut outputs = Vec::with_capacity(n);
    for (r, res) in rows.into_iter().enumerate() {
        match res {
            Ok(tr) => {
                kept.push(r);
                outputs.push(tr.tau_c);
            }
            Err(e) => {
                log::warn!("row {r} failed: {e}");
                failed.push(FailedRow {
                    row: r,
                    message: e.to_string(),
                });
            }
        }
    }
    let steps = cfg.n_steps;
    let inputs = DMatrix::from_fn(kept.len(), 7, |i, j| x[(kept[i], j)]);
    let outputs = DMatrix::from_fn(kept.len(), steps, |i, k| outputs[i][k]);
    let provenance = Provenance {
        model_hash: model.fingerprint(),
        schedule_hash: Some(cfg.fingerprint()),
        seed: Some(seed),
        tool_version: crate::TOOL_VERSION.to_string(),
        failed_rows: failed,
    };
    Ok(TrajectoryDataset::new(model.names(), cfg.times(), inputs, outputs, Some(provenance))?)
}

/// Bisects `k_v` (log scale) so the nominal trajectory without cleanings
/// reaches `target` at `t_f`.
pub fn calibrate_k_v(cfg: &SimConfig, nominal: &[f64], target: f64) -> Result<f64> {
    let mut probe = cfg.without_cleanings();
    let end = |kv: f64, probe: &mut SimConfig| -> Result<f64> {
        probe.constants.k_v = kv;
        Ok(*simulate(nominal, probe)?.tau_c.last().unwrap())
    };
    let (mut lo, mut hi) = (1e-6f64, 1e24f64);
    if end(lo, &mut probe)? >= target || end(hi, &mut probe)? < target {
        return Err(SimError::Calibration(format!("target {target} is not bracketed")));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if end(mid, &mut probe)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-13 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}
