//! Independent input probabilistic model: Gaussian and triangular marginals,
//! inverse-transform sampling, analytic and quadrature moments.
//!
//! A triangular marginal `T(a, b, c)` is parameterized by its lower bound,
//! mode and upper bound. Gaussian marginals store the standard deviation;
//! model files carry the variance and are converted on load.

use std::collections::HashSet;
use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc_inv;
use thiserror::Error;

use crate::quadrature::{integrate_piecewise, QuadError, QuadOptions};

/// Name of the built-in seven-input clogging model.
pub const SG_CLOGGING_PRESET: &str = "sg-clogging-7d";

/// Highest raw moment order served without an explicit limit.
pub const DEFAULT_MAX_MOMENT_ORDER: usize = 2 * 20 + 2;

#[derive(Debug, Error)]
pub enum ProbModelError {
    #[error("invalid Gaussian marginal: std must be positive and finite, got {0}")]
    InvalidStd(f64),
    #[error("invalid Gaussian marginal: variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("invalid triangular marginal ({a}, {b}, {c}): need a <= b <= c and a < c")]
    InvalidTriangular { a: f64, b: f64, c: f64 },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("moment order {order} exceeds the configured maximum {max}")]
    MomentOrderTooHigh { order: usize, max: usize },
    #[error("moment quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
    #[error("input names must be non-empty")]
    EmptyName,
    #[error("duplicate input name '{0}'")]
    DuplicateName(String),
    #[error("input model has no inputs")]
    EmptyModel,
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("input '{name}': unknown kind '{kind}'")]
    UnknownKind { name: String, kind: String },
    #[error("input '{name}': missing parameter '{param}'")]
    MissingParam { name: String, param: String },
    #[error("reading model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing model file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ProbModelError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Gaussian { mean: f64, std: f64 },
    Triangular { lower: f64, mode: f64, upper: f64 },
}

impl Marginal {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) || !mean.is_finite() {
            return Err(ProbModelError::InvalidStd(std));
        }
        Ok(Marginal::Gaussian { mean, std })
    }

    pub fn gaussian_from_variance(mean: f64, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(ProbModelError::InvalidVariance(variance));
        }
        Self::gaussian(mean, variance.sqrt())
    }

    pub fn triangular(lower: f64, mode: f64, upper: f64) -> Result<Self> {
        let finite = lower.is_finite() && mode.is_finite() && upper.is_finite();
        if !finite || lower > mode || mode > upper || lower >= upper {
            return Err(ProbModelError::InvalidTriangular {
                a: lower,
                b: mode,
                c: upper,
            });
        }
        Ok(Marginal::Triangular { lower, mode, upper })
    }

    /// Support interval; infinite for Gaussian marginals.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Marginal::Triangular { lower, upper, .. } => (lower, upper),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Gaussian { mean, .. } => mean,
            Marginal::Triangular { lower, mode, upper } => (lower + mode + upper) / 3.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Gaussian { std, .. } => std * std,
            Marginal::Triangular {
                lower: a,
                mode: b,
                upper: c,
            } => (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
            }
            Marginal::Triangular {
                lower: a,
                mode: b,
                upper: c,
            } => {
                if x < a || x > c {
                    0.0
                } else if x < b {
                    2.0 * (x - a) / ((c - a) * (b - a))
                } else if x == b {
                    2.0 / (c - a)
                } else {
                    2.0 * (c - x) / ((c - a) * (c - b))
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Gaussian { mean, std } => 0.5 * libm::erfc(-(x - mean) / (std * SQRT_2)),
            Marginal::Triangular {
                lower: a,
                mode: b,
                upper: c,
            } => {
                if x <= a {
                    0.0
                } else if x >= c {
                    1.0
                } else if x <= b {
                    (x - a) * (x - a) / ((c - a) * (b - a))
                } else {
                    1.0 - (c - x) * (c - x) / ((c - a) * (c - b))
                }
            }
        }
    }

    /// Inverse CDF. Gaussian marginals map `p = 0` and `p = 1` to `∓∞`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ProbModelError::ProbabilityOutOfRange(p));
        }
        Ok(match *self {
            Marginal::Gaussian { mean, std } => {
                if p == 0.0 {
                    f64::NEG_INFINITY
                } else if p == 1.0 {
                    f64::INFINITY
                } else {
                    let x = mean - std * SQRT_2 * erfc_inv(2.0 * p);
                    // One Newton step polishes the inverse to near machine precision.
                    let dens = self.pdf(x);
                    if dens > 0.0 {
                        x - (self.cdf(x) - p) / dens
                    } else {
                        x
                    }
                }
            }
            Marginal::Triangular {
                lower: a,
                mode: b,
                upper: c,
            } => {
                let split = (b - a) / (c - a);
                if p <= split {
                    a + (p * (c - a) * (b - a)).sqrt()
                } else {
                    c - ((1.0 - p) * (c - a) * (c - b)).sqrt()
                }
            }
        })
    }

    /// `E[X^k]`, exact for Gaussian and by adaptive quadrature for triangular.
    pub fn raw_moment(&self, k: usize) -> Result<f64> {
        self.raw_moment_with_limit(k, DEFAULT_MAX_MOMENT_ORDER)
    }

    pub fn raw_moment_with_limit(&self, k: usize, max_order: usize) -> Result<f64> {
        if k > max_order {
            return Err(ProbModelError::MomentOrderTooHigh {
                order: k,
                max: max_order,
            });
        }
        match *self {
            Marginal::Gaussian { mean, std } => {
                // E[(μ + σZ)^k] = Σ_j C(k, j) μ^{k-j} σ^j E[Z^j], E[Z^j] = (j-1)!! for even j.
                let mut total = 0.0;
                let mut binom = 1.0;
                let mut z_moment = 1.0;
                for j in 0..=k {
                    if j > 0 {
                        binom *= (k - j + 1) as f64 / j as f64;
                    }
                    if j % 2 == 0 {
                        if j >= 2 {
                            z_moment *= (j - 1) as f64;
                        }
                        total += binom * mean.powi((k - j) as i32) * std.powi(j as i32) * z_moment;
                    }
                }
                Ok(total)
            }
            Marginal::Triangular { lower, mode, upper } => {
                if k == 0 {
                    return Ok(1.0);
                }
                let opts = QuadOptions {
                    rel_tol: 1e-13,
                    ..Default::default()
                };
                let r = integrate_piecewise(
                    |x| x.powi(k as i32) * self.pdf(x),
                    &[lower, mode, upper],
                    &opts,
                )?;
                Ok(r.value)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedMarginal {
    pub name: String,
    pub marginal: Marginal,
}

/// Ordered independent marginals; the joint law is their product.
#[derive(Debug, Clone, PartialEq)]
pub struct InputModel {
    inputs: Vec<NamedMarginal>,
}

impl InputModel {
    pub fn new(inputs: Vec<NamedMarginal>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(ProbModelError::EmptyModel);
        }
        let mut seen = HashSet::new();
        for input in &inputs {
            if input.name.trim().is_empty() {
                return Err(ProbModelError::EmptyName);
            }
            if !seen.insert(input.name.clone()) {
                return Err(ProbModelError::DuplicateName(input.name.clone()));
            }
        }
        Ok(Self { inputs })
    }

    pub fn from_pairs<S: Into<String>>(pairs: Vec<(S, Marginal)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, marginal)| NamedMarginal {
                    name: name.into(),
                    marginal,
                })
                .collect(),
        )
    }

    /// Built-in presets, currently only [`SG_CLOGGING_PRESET`].
    ///
    /// The Gaussian spreads of the two correlation parameters are read as
    /// standard deviations (4.0 and 0.0005). Read as variances, β would be
    /// negative for about 15% of draws, which the clogging correlation
    /// cannot accept.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            SG_CLOGGING_PRESET => Self::from_pairs(vec![
                ("alpha", Marginal::gaussian(101.6, 4.0)?),
                ("beta", Marginal::gaussian(0.0233, 0.0005)?),
                ("eps_e", Marginal::triangular(0.2, 0.3, 0.5)?),
                ("eps_c", Marginal::triangular(0.01, 0.05, 0.3)?),
                ("d_p", Marginal::triangular(0.5e-6, 5.0e-6, 10.0e-6)?),
                ("gamma_p0", Marginal::triangular(1.0e-9, 4.5e-9, 8.0e-9)?),
                ("a_v", Marginal::triangular(0.1e-4, 7.8e-4, 12.0e-4)?),
            ]),
            other => Err(ProbModelError::UnknownPreset(other.to_string())),
        }
    }

    pub fn dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs(&self) -> &[NamedMarginal] {
        &self.inputs
    }

    pub fn names(&self) -> Vec<String> {
        self.inputs.iter().map(|i| i.name.clone()).collect()
    }

    pub fn marginal(&self, i: usize) -> &Marginal {
        &self.inputs[i].marginal
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|i| i.name == name)
    }

    pub fn means(&self) -> Vec<f64> {
        self.inputs.iter().map(|i| i.marginal.mean()).collect()
    }

    /// Draws an `n × d` design matrix by inverse-transform sampling.
    ///
    /// Entry `(row, col)` depends only on `(seed, row, col)`: column `col`
    /// reads ChaCha stream `col` at word position `2·row`, so any row range
    /// can be generated independently and reproduces the same values.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        self.sample_rows(0, n, seed)
    }

    /// Rows `start..start + n` of the design that [`InputModel::sample`] would draw.
    pub fn sample_rows(&self, start: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        for (col, input) in self.inputs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(col as u64);
            rng.set_word_pos(2 * start as u128);
            for row in 0..n {
                let u = open_unit(rng.next_u64());
                out[(row, col)] = input
                    .marginal
                    .quantile(u)
                    .expect("open-interval probability is always valid");
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.to_file()).expect("model serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_file(&self) -> InputModelFile {
        InputModelFile {
            inputs: self
                .inputs
                .iter()
                .map(|i| {
                    let (kind, params) = match i.marginal {
                        Marginal::Gaussian { mean, std } => (
                            "gaussian",
                            MarginalParams {
                                mean: Some(mean),
                                variance: Some(std * std),
                                ..Default::default()
                            },
                        ),
                        Marginal::Triangular { lower, mode, upper } => (
                            "triangular",
                            MarginalParams {
                                a: Some(lower),
                                b: Some(mode),
                                c: Some(upper),
                                ..Default::default()
                            },
                        ),
                    };
                    InputEntry {
                        name: i.name.clone(),
                        kind: kind.to_string(),
                        params,
                    }
                })
                .collect(),
        }
    }

    pub fn from_file(file: &InputModelFile) -> Result<Self> {
        let mut inputs = Vec::with_capacity(file.inputs.len());
        for entry in &file.inputs {
            let need = |v: Option<f64>, param: &str| {
                v.ok_or_else(|| ProbModelError::MissingParam {
                    name: entry.name.clone(),
                    param: param.to_string(),
                })
            };
            let p = &entry.params;
            let marginal = match entry.kind.to_ascii_lowercase().as_str() {
                "gaussian" | "normal" => {
                    Marginal::gaussian_from_variance(need(p.mean, "mean")?, need(p.variance, "variance")?)?
                }
                "triangular" => Marginal::triangular(need(p.a, "a")?, need(p.b, "b")?, need(p.c, "c")?)?,
                other => {
                    return Err(ProbModelError::UnknownKind {
                        name: entry.name.clone(),
                        kind: other.to_string(),
                    })
                }
            };
            inputs.push(NamedMarginal {
                name: entry.name.clone(),
                marginal,
            });
        }
        Self::new(inputs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: InputModelFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }

    /// A preset name or a path to a model file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match Self::preset(spec) {
            Ok(m) => Ok(m),
            Err(ProbModelError::UnknownPreset(_)) => Self::load(Path::new(spec)),
            Err(e) => Err(e),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }
}

/// On-disk model schema: `{ "inputs": [ { "name", "kind", "params" } ] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputModelFile {
    pub inputs: Vec<InputEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputEntry {
    pub name: String,
    pub kind: String,
    pub params: MarginalParams,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

/// Maps 64 random bits to the open interval (0, 1) with 53-bit resolution.
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Ranks of a sample column mapped to (0, 1): `rank / (n + 1)`; ties share
/// the average rank.
pub fn rank_transform(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg / (n as f64 + 1.0);
        }
        i = j + 1;
    }
    ranks
}
