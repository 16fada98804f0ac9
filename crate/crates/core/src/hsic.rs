//! HSIC dependence measures between scalar inputs and per-timestep outputs.
//!
//! All estimators are V-statistics with Gaussian RBF kernels
//! `k(u, v) = exp(−(u − v)² / (2h²))`. The target variant replaces the output
//! by a smooth indicator of the critical region; the conditional variant
//! reweights the empirical measure by that indicator.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::dataio::TrajectoryDataset;

/// Default critical threshold on the clogging rate (%).
pub const DEFAULT_BOUND: f64 = 70.0;
/// Default filter length scale, in output standard deviations.
pub const DEFAULT_FILTER_SCALE: f64 = 0.2;
pub const DEFAULT_PERMUTATIONS: usize = 500;
/// Independence is accepted above this p-value.
pub const PVALUE_THRESHOLD: f64 = 0.05;
/// Smallest bandwidth used for filtered outputs, which live in `[0, 1]`.
pub const FILTERED_BANDWIDTH_FLOOR: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HsicError {
    #[error("samples have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("median heuristic needs two distinct values but '{0}' is constant")]
    ConstantSample(String),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("output sample has zero standard deviation; the target filter is undefined")]
    ZeroSpread,
    #[error("all weights vanish; the conditional measure is undefined")]
    ZeroWeight,
    #[error("permutation test needs at least 100 permutations, got {0}")]
    TooFewPermutations(usize),
    #[error("asymptotic p-values are not available for the conditional estimator")]
    AsymptoticUnavailable,
}

pub type Result<T> = std::result::Result<T, HsicError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn fixed(h: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed(h),
        }
    }

    pub fn median() -> Self {
        Self {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::median()
    }
}

/// Lower median of the positive pairwise distances, each pair `(p, q)`
/// weighted by `w_p w_q` when weights are given.
pub fn median_distance(x: &[f64], weights: Option<&[f64]>) -> Option<f64> {
    let n = x.len();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for p in 0..n {
        for q in p + 1..n {
            let d = (x[p] - x[q]).abs();
            if d > 0.0 {
                let w = weights.map_or(1.0, |w| w[p] * w[q]);
                if w > 0.0 {
                    pairs.push((d, w));
                }
            }
        }
    }
    if pairs.is_empty() {
        return None;
    }
    if weights.is_none() {
        let mid = (pairs.len() - 1) / 2;
        let (_, m, _) = pairs.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0));
        return Some(m.0);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (d, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return Some(*d);
        }
    }
    pairs.last().map(|p| p.0)
}

fn resolve(x: &[f64], spec: &KernelSpec, weights: Option<&[f64]>, floor: f64, name: &str) -> Result<f64> {
    match spec.bandwidth {
        Bandwidth::Fixed(h) => {
            if h.is_finite() && h > 0.0 {
                Ok(h)
            } else {
                Err(HsicError::InvalidBandwidth(h))
            }
        }
        Bandwidth::MedianHeuristic => median_distance(x, weights)
            .map(|h| h.max(floor))
            .ok_or_else(|| HsicError::ConstantSample(name.to_string())),
    }
}

fn rbf_gram(x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let c = -0.5 / (h * h);
    let mut k = DMatrix::from_element(n, n, 1.0);
    for j in 0..n {
        for i in j + 1..n {
            let d = x[i] - x[j];
            let v = (c * d * d).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gram matrix of `x` under the RBF kernel.
pub fn gram(x: &[f64], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if x.len() < 2 {
        return Err(HsicError::TooFewSamples { needed: 2, got: x.len() });
    }
    let h = resolve(x, spec, None, 0.0, "x")?;
    Ok(rbf_gram(x, h))
}

/// `HKH` with `H = I − 11ᵀ/n`.
pub fn center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let w = vec![1.0 / n as f64; n];
    weighted_center(k, &w)
}

/// `(I − 1wᵀ) K (I − w1ᵀ)` for weights summing to one.
pub fn weighted_center(k: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let n = k.nrows();
    // (Kw)_i, and wᵀKw.
    let kw: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[(i, j)] * w[j]).sum()).collect();
    let wkw: f64 = kw.iter().zip(w).map(|(a, b)| a * b).sum();
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - kw[i] - kw[j] + wkw)
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn weighted_frob(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += w[i] * a[(i, j)] * b[(i, j)];
        }
        acc += w[j] * col;
    }
    acc
}

/// `Tr(K̃ L̃)/n²` from Gram matrices.
pub fn hsic_from_grams(k: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let n = k.nrows() as f64;
    frob(&center(k), l) / (n * n)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(HsicError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(HsicError::TooFewSamples { needed: 2, got: x.len() });
    }
    Ok(())
}

/// V-statistic `Tr(K H L H)/n²`.
pub fn hsic_v(x: &[f64], y: &[f64], kx: &KernelSpec, ky: &KernelSpec) -> Result<f64> {
    check_pair(x, y)?;
    let k = gram(x, kx)?;
    let l = gram(y, ky)?;
    Ok(hsic_from_grams(&k, &l))
}

fn r2_from_grams(k: &DMatrix<f64>, l: &DMatrix<f64>) -> Option<f64> {
    let kc = center(k);
    let lc = center(l);
    let xy = frob(&kc, l);
    let xx = frob(&kc, k);
    let yy = frob(&lc, l);
    normalize(xy, xx, yy)
}

fn normalize(xy: f64, xx: f64, yy: f64) -> Option<f64> {
    let denom = (xx * yy).sqrt();
    if !(denom > 0.0) || xx <= 1e-14 * k_scale(xx, yy) || yy <= 1e-14 * k_scale(xx, yy) {
        return None;
    }
    Some((xy / denom).clamp(0.0, 1.0))
}

fn k_scale(a: f64, b: f64) -> f64 {
    // Values are n²-scaled traces of matrices with unit-bounded entries;
    // anything at roundoff relative to the larger one is treated as zero.
    a.abs().max(b.abs()).max(1e-300)
}

/// `HSIC(x, y) / √(HSIC(x, x) HSIC(y, y))`; `None` for constant variables.
pub fn r2_hsic(x: &[f64], y: &[f64], kx: &KernelSpec, ky: &KernelSpec) -> Result<Option<f64>> {
    check_pair(x, y)?;
    let k = gram(x, kx)?;
    let l = gram(y, ky)?;
    Ok(r2_from_grams(&k, &l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Permutation(usize),
    Asymptotic,
}

impl PValueMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            PValueMethod::Permutation(_) => "permutation",
            PValueMethod::Asymptotic => "asymptotic",
        }
    }
}

/// Gamma approximation of the null law of `n·HSIC`, moment-matched to the
/// permutation-null mean and variance estimated from the Gram matrices.
pub fn gamma_pvalue(k: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    if n < 6 {
        return Err(HsicError::TooFewSamples { needed: 6, got: n });
    }
    let nf = n as f64;
    let kc = center(k);
    let lc = center(l);
    let stat = frob(&kc, &lc) / nf;

    let mut var = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let v = kc[(i, j)] * lc[(i, j)] / 6.0;
                var += v * v;
            }
        }
    }
    var /= nf * (nf - 1.0);
    var *= 72.0 * (nf - 4.0) * (nf - 5.0) / (nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0));

    let off_mean = |m: &DMatrix<f64>| (m.sum() - m.trace()) / (nf * (nf - 1.0));
    let mu_x = off_mean(k);
    let mu_y = off_mean(l);
    let mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / nf;
    if !(var > 0.0) || !(mean > 0.0) {
        // Degenerate null (a constant kernel matrix): the statistic carries no evidence.
        return Ok(1.0);
    }
    let shape = mean * mean / var;
    let scale = var * nf / mean;
    Ok(gamma_ur(shape, stat / scale).clamp(0.0, 1.0))
}

fn permutation_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// `(1 + #{b : S_b ≥ S_obs}) / (1 + B)`.
pub fn permutation_pvalue_from_counts(exceed: usize, b: usize) -> f64 {
    (1 + exceed) as f64 / (1 + b) as f64
}

/// Weighted statistic `Σ_pq w_p w_q K_{π(p)π(q)} M_pq` for each permutation
/// `π` of the `x` sample, with `M` already centered.
fn permuted_stats(k: &DMatrix<f64>, m: &DMatrix<f64>, w: Option<&[f64]>, b: usize, seed: u64) -> Vec<f64> {
    let n = k.nrows();
    (0..b)
        .map(|bi| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut permutation_rng(seed, bi));
            let mut acc = 0.0;
            for q in 0..n {
                let pq = perm[q];
                let mut col = 0.0;
                for p in 0..n {
                    let v = k[(perm[p], pq)] * m[(p, q)];
                    col += match w {
                        Some(w) => w[p] * v,
                        None => v,
                    };
                }
                acc += match w {
                    Some(w) => w[q] * col,
                    None => col,
                };
            }
            acc
        })
        .collect()
}

/// Permutation p-value of `Σ K̃ ∘ L`, permuting `x` against fixed `y`.
pub fn permutation_pvalue(k: &DMatrix<f64>, l: &DMatrix<f64>, b: usize, seed: u64) -> Result<f64> {
    if b < 100 {
        return Err(HsicError::TooFewPermutations(b));
    }
    let lc = center(l);
    let obs = frob(k, &lc);
    let stats = permuted_stats(k, &lc, None, b, seed);
    let tol = 1e-12 * obs.abs().max(1e-300);
    Ok(permutation_pvalue_from_counts(stats.iter().filter(|&&s| s >= obs - tol).count(), b))
}

pub fn pvalue(x: &[f64], y: &[f64], kx: &KernelSpec, ky: &KernelSpec, method: PValueMethod, seed: u64) -> Result<f64> {
    check_pair(x, y)?;
    let k = gram(x, kx)?;
    let l = gram(y, ky)?;
    match method {
        PValueMethod::Asymptotic => gamma_pvalue(&k, &l),
        PValueMethod::Permutation(b) => permutation_pvalue(&k, &l, b, seed),
    }
}

/// Sample standard deviation with the `n − 1` divisor.
fn sample_std(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `exp(−dist(y_j, [bound, ∞)) / (s σ̂))` and the size of the target set.
pub fn target_filter(y: &[f64], bound: f64, s: f64) -> Result<(Vec<f64>, usize)> {
    if y.len() < 2 {
        return Err(HsicError::TooFewSamples { needed: 2, got: y.len() });
    }
    let sd = sample_std(y);
    if !(sd > 0.0) {
        return Err(HsicError::ZeroSpread);
    }
    let w = y
        .iter()
        .map(|&v| if v >= bound { 1.0 } else { (-(bound - v) / (s * sd)).exp() })
        .collect();
    Ok((w, y.iter().filter(|&&v| v >= bound).count()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsicResult {
    pub raw: f64,
    /// R²-normalized index; `None` when a self-dependence term vanishes.
    pub normalized: Option<f64>,
    pub p_value: f64,
    pub method: PValueMethod,
    /// Number of samples inside the critical region.
    pub target_set_size: usize,
    /// Kish effective sample size of the weights.
    pub effective_size: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FilterOptions {
    pub bound: f64,
    pub s: f64,
    pub method: PValueMethod,
    pub seed: u64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            bound: DEFAULT_BOUND,
            s: DEFAULT_FILTER_SCALE,
            method: PValueMethod::Permutation(DEFAULT_PERMUTATIONS),
            seed: 0,
        }
    }
}

fn target_from_grams(k: &DMatrix<f64>, y: &[f64], ky: &KernelSpec, opts: &FilterOptions) -> Result<HsicResult> {
    let n = y.len();
    let (f, size) = target_filter(y, opts.bound, opts.s)?;
    let nf = n as f64;
    let (raw, normalized, l) = match resolve(&f, ky, None, FILTERED_BANDWIDTH_FLOOR, "filtered output") {
        Ok(h) => {
            let l = rbf_gram(&f, h);
            let kc = center(k);
            let xy = frob(&kc, &l);
            let xx = frob(&kc, k);
            let yy = frob(&center(&l), &l);
            // A filtered output without resolvable variation has no dependence to share.
            let norm = if yy <= 1e-14 * nf * nf { Some(0.0) } else { normalize(xy, xx, yy) };
            (xy / (nf * nf), norm, Some(l))
        }
        // Saturated filter: the filtered output is constant.
        Err(HsicError::ConstantSample(_)) => (0.0, Some(0.0), None),
        Err(e) => return Err(e),
    };
    let p_value = match &l {
        None => 1.0,
        Some(l) => match opts.method {
            PValueMethod::Asymptotic => gamma_pvalue(k, l)?,
            PValueMethod::Permutation(b) => permutation_pvalue(k, l, b, opts.seed)?,
        },
    };
    Ok(HsicResult {
        raw: raw.max(0.0),
        normalized,
        p_value,
        method: opts.method,
        target_set_size: size,
        effective_size: nf,
    })
}

/// HSIC between `x` and the filtered output.
pub fn t_hsic(x: &[f64], y: &[f64], kx: &KernelSpec, ky: &KernelSpec, opts: &FilterOptions) -> Result<HsicResult> {
    check_pair(x, y)?;
    let k = gram(x, kx)?;
    target_from_grams(&k, y, ky, opts)
}

/// Weights `f(y_p) / Σ_q f(y_q)` computed in log space so that outputs far
/// from the critical region do not underflow to a zero total.
pub fn conditional_weights(y: &[f64], bound: f64, s: f64) -> Result<(Vec<f64>, usize)> {
    if y.len() < 2 {
        return Err(HsicError::TooFewSamples { needed: 2, got: y.len() });
    }
    let sd = sample_std(y);
    if !(sd > 0.0) {
        return Err(HsicError::ZeroSpread);
    }
    let logf: Vec<f64> = y
        .iter()
        .map(|&v| if v >= bound { 0.0 } else { -(bound - v) / (s * sd) })
        .collect();
    let max = logf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logf.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(HsicError::ZeroWeight);
    }
    Ok((w.iter().map(|v| v / total).collect(), y.iter().filter(|&&v| v >= bound).count()))
}

/// Weighted V-statistic `Σ_pq w_p w_q K̃^w_pq L_pq`.
pub fn c_hsic_weighted(k: &DMatrix<f64>, l: &DMatrix<f64>, w: &[f64]) -> f64 {
    weighted_frob(&weighted_center(k, w), l, w)
}

fn conditional_from_grams(k: &DMatrix<f64>, y: &[f64], w: &[f64], size: usize, ky: &KernelSpec, opts: &FilterOptions) -> Result<HsicResult> {
    let effective_size = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    let h = match resolve(y, ky, Some(w), 0.0, "output") {
        Ok(h) => h,
        Err(HsicError::ConstantSample(_)) => {
            // The weighted measure sits on a single output value.
            return Ok(HsicResult {
                raw: 0.0,
                normalized: Some(0.0),
                p_value: 1.0,
                method: opts.method,
                target_set_size: size,
                effective_size,
            });
        }
        Err(e) => return Err(e),
    };
    let l = rbf_gram(y, h);
    let kc = weighted_center(k, w);
    let lc = weighted_center(&l, w);
    let xy = weighted_frob(&kc, &l, w);
    let xx = weighted_frob(&kc, k, w);
    let yy = weighted_frob(&lc, &l, w);
    let normalized = if yy <= 1e-14 || xx <= 1e-14 { Some(0.0) } else { normalize(xy, xx, yy) };
    let p_value = match opts.method {
        PValueMethod::Asymptotic => return Err(HsicError::AsymptoticUnavailable),
        PValueMethod::Permutation(b) => {
            if b < 100 {
                return Err(HsicError::TooFewPermutations(b));
            }
            let stats = permuted_stats(k, &lc, Some(w), b, opts.seed);
            let obs = weighted_frob(k, &lc, w);
            let tol = 1e-12 * obs.abs().max(1e-300);
            permutation_pvalue_from_counts(stats.iter().filter(|&&s| s >= obs - tol).count(), b)
        }
    };
    Ok(HsicResult {
        raw: xy.max(0.0),
        normalized,
        p_value,
        method: opts.method,
        target_set_size: size,
        effective_size,
    })
}

/// HSIC under the empirical measure reweighted by the target filter.
pub fn c_hsic(x: &[f64], y: &[f64], kx: &KernelSpec, ky: &KernelSpec, opts: &FilterOptions) -> Result<HsicResult> {
    check_pair(x, y)?;
    let k = gram(x, kx)?;
    let (w, size) = conditional_weights(y, opts.bound, opts.s)?;
    conditional_from_grams(&k, y, &w, size, ky, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Global,
    Target(f64),
    Conditional(f64),
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Global => "global",
            Variant::Target(_) => "target",
            Variant::Conditional(_) => "conditional",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TimeSeriesOptions {
    pub variant: Variant,
    pub method: PValueMethod,
    pub s: f64,
    pub seed: u64,
    pub kx: KernelSpec,
    pub ky: KernelSpec,
}

impl Default for TimeSeriesOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Global,
            method: PValueMethod::Asymptotic,
            s: DEFAULT_FILTER_SCALE,
            seed: 0,
            kx: KernelSpec::median(),
            ky: KernelSpec::median(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsicCell {
    pub index: Option<f64>,
    pub raw: Option<f64>,
    pub p_value: Option<f64>,
    pub target_set_size: Option<usize>,
    /// Why the cell is undefined, if it is.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsicTimeSeries {
    pub input_names: Vec<String>,
    pub times: Vec<f64>,
    pub variant: Variant,
    pub method: PValueMethod,
    /// `cells[i][k]` for input `i` at timestep `k`.
    pub cells: Vec<Vec<HsicCell>>,
}

impl HsicTimeSeries {
    /// Inputs sorted by decreasing index at timestep `k`; undefined cells last.
    pub fn ranking(&self, k: usize) -> Vec<usize> {
        let val = |i: usize| self.cells[i][k].index.unwrap_or(f64::NEG_INFINITY);
        let mut order: Vec<usize> = (0..self.cells.len()).collect();
        order.sort_by(|&a, &b| val(b).total_cmp(&val(a)).then(a.cmp(&b)));
        order
    }
}

/// Seed for the `(input, timestep)` cell, independent of evaluation order.
pub fn cell_seed(seed: u64, input: usize, step: usize) -> u64 {
    let mut z = seed
        .wrapping_add((input as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((step as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn undefined(err: String) -> HsicCell {
    HsicCell {
        index: None,
        raw: None,
        p_value: None,
        target_set_size: None,
        error: Some(err),
    }
}

/// Index, p-value and target-set size for every input and timestep.
pub fn hsic_timeseries(ds: &TrajectoryDataset, opts: &TimeSeriesOptions) -> HsicTimeSeries {
    let d = ds.dim();
    let steps = ds.n_steps();
    let xgrams: Vec<std::result::Result<DMatrix<f64>, String>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let x = ds.input_column(i);
            let h = resolve(&x, &opts.kx, None, 0.0, &ds.input_names[i]).map_err(|e| e.to_string())?;
            Ok(rbf_gram(&x, h))
        })
        .collect();

    let columns: Vec<Vec<HsicCell>> = (0..steps)
        .into_par_iter()
        .map(|k| {
            let y = ds.output_column(k);
            (0..d)
                .map(|i| {
                    let kx = match &xgrams[i] {
                        Ok(g) => g,
                        Err(e) => return undefined(e.clone()),
                    };
                    let seed = cell_seed(opts.seed, i, k);
                    cell(kx, &y, opts, seed).unwrap_or_else(|e| undefined(e.to_string()))
                })
                .collect()
        })
        .collect();

    let cells = (0..d).map(|i| (0..steps).map(|k| columns[k][i].clone()).collect()).collect();
    HsicTimeSeries {
        input_names: ds.input_names.clone(),
        times: ds.times.clone(),
        variant: opts.variant,
        method: opts.method,
        cells,
    }
}

fn cell(k: &DMatrix<f64>, y: &[f64], opts: &TimeSeriesOptions, seed: u64) -> Result<HsicCell> {
    match opts.variant {
        Variant::Global => {
            let h = resolve(y, &opts.ky, None, 0.0, "output")?;
            let l = rbf_gram(y, h);
            let nf = y.len() as f64;
            let raw = frob(&center(k), &l) / (nf * nf);
            let p = match opts.method {
                PValueMethod::Asymptotic => gamma_pvalue(k, &l)?,
                PValueMethod::Permutation(b) => permutation_pvalue(k, &l, b, seed)?,
            };
            Ok(HsicCell {
                index: r2_from_grams(k, &l),
                raw: Some(raw.max(0.0)),
                p_value: Some(p),
                target_set_size: None,
                error: None,
            })
        }
        Variant::Target(bound) | Variant::Conditional(bound) => {
            let fopts = FilterOptions {
                bound,
                s: opts.s,
                method: opts.method,
                seed,
            };
            let r = if let Variant::Target(_) = opts.variant {
                target_from_grams(k, y, &opts.ky, &fopts)?
            } else {
                let (w, size) = conditional_weights(y, bound, opts.s)?;
                conditional_from_grams(k, y, &w, size, &opts.ky, &fopts)?
            };
            Ok(HsicCell {
                index: r.normalized,
                raw: Some(r.raw),
                p_value: Some(r.p_value),
                target_set_size: Some(r.target_set_size),
                error: None,
            })
        }
    }
}
