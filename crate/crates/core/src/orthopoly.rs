//! Univariate orthonormal polynomial families and sparse tensorized bases.
//!
//! Every family works on a standardized variable `u = (x - center) / scale`:
//! the z-score for Gaussian marginals and the affine map of the support onto
//! `[-1, 1]` for triangular ones. Recurrence coefficients are stored for the
//! monic family in `u`; evaluation applies the orthonormal scaling.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probmodel::{InputModel, Marginal};
use crate::quadrature::{integrate_piecewise, QuadError, QuadOptions};

#[derive(Debug, Error)]
pub enum OrthoError {
    #[error("Stieltjes quadrature failed at degree {degree}: {source}")]
    Quadrature {
        degree: usize,
        #[source]
        source: QuadError,
    },
    #[error("non-positive recurrence coefficient beta_{degree} = {value:e}")]
    NonPositiveBeta { degree: usize, value: f64 },
    #[error("invalid hyperbolic truncation: d = {d}, q = {q}")]
    InvalidTruncation { d: usize, q: f64 },
    #[error("multi-index of length {got} in a basis of dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis requests degree {degree} for input {input} but its family stops at {max}")]
    DegreeTooHigh {
        input: usize,
        degree: usize,
        max: usize,
    },
    #[error("basis must contain the zero multi-index exactly once and no duplicates")]
    BadIndexSet,
}

pub type Result<T> = std::result::Result<T, OrthoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Hermite,
    Legendre,
    Stieltjes,
}

/// Monic three-term recurrence `π_{k+1}(u) = (u − α_k) π_k(u) − β_k π_{k−1}(u)`
/// with `β_0` the total mass (1 for probability measures).
///
/// The squared norm of `π_k` is `β_0 β_1 ⋯ β_k`, so the orthonormal family
/// follows `√β_{k+1} φ_{k+1} = (u − α_k) φ_k − √β_k φ_{k−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recurrence {
    pub kind: FamilyKind,
    pub center: f64,
    pub scale: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Recurrence {
    /// Highest degree the family can evaluate.
    pub fn max_degree(&self) -> usize {
        self.alpha.len().min(self.beta.len()).saturating_sub(1)
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    /// Squared norm of the monic polynomial of degree `k`.
    pub fn monic_norm_sq(&self, k: usize) -> f64 {
        self.beta[..=k].iter().product()
    }

    /// Coefficients of the monic recurrence in the variable `x` itself:
    /// `α_k ↦ center + scale·α_k`, `β_k ↦ scale²·β_k` for `k ≥ 1`.
    pub fn physical_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let alpha = self.alpha.iter().map(|a| self.center + self.scale * a).collect();
        let beta = self
            .beta
            .iter()
            .enumerate()
            .map(|(k, b)| if k == 0 { *b } else { b * self.scale * self.scale })
            .collect();
        (alpha, beta)
    }

    /// Orthonormal values `φ_0(x), …, φ_degree(x)` written into `out`.
    pub fn eval_into(&self, x: f64, degree: usize, out: &mut [f64]) {
        let u = self.standardize(x);
        out[0] = 1.0 / self.beta[0].sqrt();
        if degree == 0 {
            return;
        }
        out[1] = (u - self.alpha[0]) * out[0] / self.beta[1].sqrt();
        for k in 1..degree {
            out[k + 1] =
                ((u - self.alpha[k]) * out[k] - self.beta[k].sqrt() * out[k - 1]) / self.beta[k + 1].sqrt();
        }
    }

    pub fn eval_all(&self, x: f64, degree: usize) -> Vec<f64> {
        let mut out = vec![0.0; degree + 1];
        self.eval_into(x, degree, &mut out);
        out
    }

    pub fn eval(&self, x: f64, degree: usize) -> f64 {
        self.eval_all(x, degree)[degree]
    }
}

/// Normalized probabilists' Hermite family for `N(μ, σ²)`.
pub fn hermite_family(max_degree: usize, mean: f64, std: f64) -> Recurrence {
    Recurrence {
        kind: FamilyKind::Hermite,
        center: mean,
        scale: std,
        alpha: vec![0.0; max_degree + 1],
        beta: (0..=max_degree).map(|k| if k == 0 { 1.0 } else { k as f64 }).collect(),
    }
}

/// Normalized Legendre family for the uniform law on `[lower, upper]`.
pub fn legendre_family(max_degree: usize, lower: f64, upper: f64) -> Recurrence {
    Recurrence {
        kind: FamilyKind::Legendre,
        center: 0.5 * (lower + upper),
        scale: 0.5 * (upper - lower),
        alpha: vec![0.0; max_degree + 1],
        beta: (0..=max_degree)
            .map(|k| {
                if k == 0 {
                    1.0
                } else {
                    let k2 = (k * k) as f64;
                    k2 / (4.0 * k2 - 1.0)
                }
            })
            .collect(),
    }
}

/// Discretized Stieltjes procedure for the measure with density `density`
/// on `[breaks[0], breaks[last]]`; `breaks` should include the kinks.
///
/// Returns `(alpha_0..=alpha_n, beta_0..=beta_n)` of the monic recurrence.
/// Every inner product is an adaptive Gauss–Kronrod integral at relative
/// tolerance 1e-12.
pub fn stieltjes_recurrence<F>(density: F, breaks: &[f64], max_degree: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64) -> f64,
{
    let opts = QuadOptions::default();
    let mut alpha = Vec::with_capacity(max_degree + 1);
    let mut beta = Vec::with_capacity(max_degree + 1);

    // π_k(u) from the coefficients found so far.
    let monic = |u: f64, k: usize, alpha: &[f64], beta: &[f64]| -> f64 {
        let mut prev = 0.0;
        let mut cur = 1.0;
        for j in 0..k {
            let next = (u - alpha[j]) * cur - if j == 0 { 0.0 } else { beta[j] * prev };
            prev = cur;
            cur = next;
        }
        cur
    };

    let mut prev_norm = 1.0;
    for k in 0..=max_degree {
        let quad_err = |source| OrthoError::Quadrature { degree: k, source };
        let norm = integrate_piecewise(
            |u| {
                let p = monic(u, k, &alpha, &beta);
                p * p * density(u)
            },
            breaks,
            &opts,
        )
        .map_err(quad_err)?
        .value;
        if !(norm > 0.0) {
            return Err(OrthoError::NonPositiveBeta { degree: k, value: norm });
        }
        let first = integrate_piecewise(
            |u| {
                let p = monic(u, k, &alpha, &beta);
                u * p * p * density(u)
            },
            breaks,
            &opts,
        )
        .map_err(quad_err)?;
        // α_k is a ratio; tolerate an absolute error relative to the norm
        // when the first moment cancels to zero.
        let a = first.value / norm;
        let b = if k == 0 { norm } else { norm / prev_norm };
        alpha.push(if a.abs() < 1e-15 { 0.0 } else { a });
        beta.push(b);
        prev_norm = norm;
    }
    Ok((alpha, beta))
}

/// Orthonormal family for a triangular law by the Stieltjes procedure.
pub fn stieltjes_family(marginal: &Marginal, max_degree: usize) -> Result<Recurrence> {
    match *marginal {
        Marginal::Triangular { lower, mode, upper } => {
            let center = 0.5 * (lower + upper);
            let scale = 0.5 * (upper - lower);
            let m = *marginal;
            let mode_u = ((mode - center) / scale).clamp(-1.0, 1.0);
            let mut breaks = vec![-1.0];
            if mode_u > -1.0 && mode_u < 1.0 {
                breaks.push(mode_u);
            }
            breaks.push(1.0);
            let (alpha, beta) =
                stieltjes_recurrence(|u| scale * m.pdf(center + scale * u), &breaks, max_degree)?;
            Ok(Recurrence {
                kind: FamilyKind::Stieltjes,
                center,
                scale,
                alpha,
                beta,
            })
        }
        Marginal::Gaussian { mean, std } => {
            // Truncation at ±40σ loses far less than double precision.
            let breaks: Vec<f64> = (-8..=8).map(|k| 5.0 * k as f64).collect();
            let (alpha, beta) = stieltjes_recurrence(
                |u| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
                &breaks,
                max_degree,
            )?;
            Ok(Recurrence {
                kind: FamilyKind::Stieltjes,
                center: mean,
                scale: std,
                alpha,
                beta,
            })
        }
    }
}

/// Hermite for Gaussian marginals, Stieltjes for triangular ones.
pub fn family_for(marginal: &Marginal, max_degree: usize) -> Result<Recurrence> {
    match *marginal {
        Marginal::Gaussian { mean, std } => Ok(hermite_family(max_degree, mean, std)),
        Marginal::Triangular { .. } => stieltjes_family(marginal, max_degree),
    }
}

/// Exponent vector `α ∈ ℕ^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// Inputs with a positive exponent.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &a)| a > 0).map(|(i, _)| i)
    }

    pub fn quasi_norm(&self, q: f64) -> f64 {
        self.0
            .iter()
            .filter(|&&a| a > 0)
            .map(|&a| (a as f64).powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    }
}

/// Canonical order: total degree ascending, then exponents in descending
/// lexicographic order, so `(1,0)` precedes `(0,1)`.
pub fn canonical_cmp(a: &MultiIndex, b: &MultiIndex) -> std::cmp::Ordering {
    a.total_degree()
        .cmp(&b.total_degree())
        .then_with(|| b.0.cmp(&a.0))
}

/// `{ α ∈ ℕ^d : (Σ α_i^q)^{1/q} ≤ p }` in canonical order.
pub fn hyperbolic_enumerate(d: usize, p: u32, q: f64) -> Result<Vec<MultiIndex>> {
    if d == 0 || !(q > 0.0 && q <= 1.0) {
        return Err(OrthoError::InvalidTruncation { d, q });
    }
    let budget = (p as f64).powf(q);
    // Relative slack so that exact boundary cases such as 1^q + 1^q = 2 when
    // p^q = 2 are kept despite rounding in powf.
    let limit = budget * (1.0 + 1e-12) + 1e-12;
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    fn recurse(i: usize, used: f64, limit: f64, p: u32, q: f64, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if i == current.len() {
            out.push(MultiIndex(current.clone()));
            return;
        }
        for a in 0..=p {
            let cost = if a == 0 { 0.0 } else { (a as f64).powf(q) };
            if used + cost > limit {
                break;
            }
            current[i] = a;
            recurse(i + 1, used + cost, limit, p, q, current, out);
        }
        current[i] = 0;
    }
    recurse(0, 0.0, limit, p, q, &mut current, &mut out);
    out.sort_by(canonical_cmp);
    Ok(out)
}

/// Tensorized orthonormal basis `φ_α(x) = Π_i φ_{α_i}(x_i)` over a fixed
/// multi-index list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBasis {
    pub families: Vec<Recurrence>,
    pub indices: Vec<MultiIndex>,
    pub p: u32,
    pub q: f64,
}

impl TensorBasis {
    pub fn new(families: Vec<Recurrence>, indices: Vec<MultiIndex>, p: u32, q: f64) -> Result<Self> {
        let d = families.len();
        let mut zero_count = 0;
        for idx in &indices {
            if idx.dim() != d {
                return Err(OrthoError::DimensionMismatch {
                    expected: d,
                    got: idx.dim(),
                });
            }
            for (i, &a) in idx.0.iter().enumerate() {
                if a as usize > families[i].max_degree() {
                    return Err(OrthoError::DegreeTooHigh {
                        input: i,
                        degree: a as usize,
                        max: families[i].max_degree(),
                    });
                }
            }
            if idx.is_zero() {
                zero_count += 1;
            }
        }
        let mut sorted = indices.clone();
        sorted.sort();
        sorted.dedup();
        if zero_count != 1 || sorted.len() != indices.len() {
            return Err(OrthoError::BadIndexSet);
        }
        Ok(Self {
            families,
            indices,
            p,
            q,
        })
    }

    /// Hyperbolic candidate basis for the marginals of `model`.
    pub fn hyperbolic(model: &InputModel, p: u32, q: f64) -> Result<Self> {
        let families = model
            .inputs()
            .iter()
            .map(|i| family_for(&i.marginal, p as usize))
            .collect::<Result<Vec<_>>>()?;
        Self::hyperbolic_with_families(families, p, q)
    }

    pub fn hyperbolic_with_families(families: Vec<Recurrence>, p: u32, q: f64) -> Result<Self> {
        let indices = hyperbolic_enumerate(families.len(), p, q)?;
        Self::new(families, indices, p, q)
    }

    pub fn dim(&self) -> usize {
        self.families.len()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Same families restricted to `indices`.
    pub fn with_indices(&self, indices: Vec<MultiIndex>) -> Result<Self> {
        Self::new(self.families.clone(), indices, self.p, self.q)
    }

    pub fn zero_position(&self) -> usize {
        self.indices
            .iter()
            .position(MultiIndex::is_zero)
            .expect("basis always holds the zero index")
    }

    fn max_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.dim()];
        for idx in &self.indices {
            for (i, &a) in idx.0.iter().enumerate() {
                deg[i] = deg[i].max(a as usize);
            }
        }
        deg
    }

    fn eval_with(&self, x: &[f64], deg: &[usize], table: &mut [Vec<f64>], out: &mut [f64]) {
        for (i, fam) in self.families.iter().enumerate() {
            fam.eval_into(x[i], deg[i], &mut table[i]);
        }
        for (slot, idx) in out.iter_mut().zip(&self.indices) {
            let mut v = 1.0;
            for (i, &a) in idx.0.iter().enumerate() {
                if a > 0 {
                    v *= table[i][a as usize];
                }
            }
            *slot = v;
        }
    }

    /// `φ_α(x)` for every multi-index, in basis order.
    pub fn eval_basis(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(OrthoError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let deg = self.max_degrees();
        let mut table: Vec<Vec<f64>> = deg.iter().map(|&k| vec![0.0; k + 1]).collect();
        let mut out = vec![0.0; self.len()];
        self.eval_with(x, &deg, &mut table, &mut out);
        Ok(out)
    }

    /// `n × P` matrix of basis evaluations at the rows of `x`.
    pub fn design_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(OrthoError::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let deg = self.max_degrees();
        let n = x.nrows();
        let p = self.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map_init(
                || deg.iter().map(|&k| vec![0.0; k + 1]).collect::<Vec<_>>(),
                |table, r| {
                    let xr: Vec<f64> = x.row(r).iter().copied().collect();
                    let mut out = vec![0.0; p];
                    self.eval_with(&xr, &deg, table, &mut out);
                    out
                },
            )
            .collect();
        Ok(DMatrix::from_fn(n, p, |r, c| rows[r][c]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_examples() {
        let h = hermite_family(4, 0.0, 1.0);
        assert_eq!(h.eval(3.7, 0), 1.0);
        assert!((h.eval(1.0, 1) - 1.0).abs() < 1e-15);
        assert!((h.eval(0.0, 2) + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        // He_3(x)/√6 = (x³ − 3x)/√6
        let x: f64 = 1.3;
        assert!((h.eval(x, 3) - (x.powi(3) - 3.0 * x) / 6f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn legendre_closed_form() {
        let l = legendre_family(3, -1.0, 1.0);
        let x: f64 = 0.4;
        // √(2k+1) P_k(x)
        assert!((l.eval(x, 1) - 3f64.sqrt() * x).abs() < 1e-15);
        assert!((l.eval(x, 2) - 5f64.sqrt() * 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn stieltjes_symmetric_triangle() {
        let m = Marginal::triangular(-1.0, 0.0, 1.0).unwrap();
        let r = stieltjes_family(&m, 1).unwrap();
        assert_eq!(r.alpha[0], 0.0);
    }

    #[test]
    fn stieltjes_first_beta_is_variance() {
        let m = Marginal::triangular(0.0, 0.5, 1.0).unwrap();
        let r = stieltjes_family(&m, 1).unwrap();
        let (alpha, beta) = r.physical_coefficients();
        assert!((alpha[0] - 0.5).abs() < 1e-14);
        assert!((beta[1] - 1.0 / 24.0).abs() < 1e-14);
    }

    #[test]
    fn stieltjes_uniform_average_reproduces_legendre() {
        // T(-1,-1,1) and T(-1,1,1) average to the uniform density on [-1, 1].
        let left = Marginal::triangular(-1.0, -1.0, 1.0).unwrap();
        let right = Marginal::triangular(-1.0, 1.0, 1.0).unwrap();
        let (alpha, beta) =
            stieltjes_recurrence(|u| 0.5 * (left.pdf(u) + right.pdf(u)), &[-1.0, 1.0], 12).unwrap();
        for k in 0..=12 {
            assert!(alpha[k].abs() < 1e-6);
            if k > 0 {
                let k2 = (k * k) as f64;
                assert!((beta[k] - k2 / (4.0 * k2 - 1.0)).abs() < 1e-6, "k={k}");
            }
        }
    }

    #[test]
    fn stieltjes_gaussian_matches_hermite() {
        let m = Marginal::gaussian(2.0, 3.0).unwrap();
        let r = stieltjes_family(&m, 10).unwrap();
        for k in 0..=10 {
            assert!(r.alpha[k].abs() < 1e-9, "alpha {k} = {}", r.alpha[k]);
            let expect = if k == 0 { 1.0 } else { k as f64 };
            assert!((r.beta[k] - expect).abs() < 1e-9 * expect, "beta {k}");
        }
    }

    #[test]
    fn hyperbolic_examples() {
        let full = hyperbolic_enumerate(2, 2, 1.0).unwrap();
        let expect: Vec<MultiIndex> = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
            .iter()
            .map(|a| MultiIndex(a.to_vec()))
            .collect();
        assert_eq!(full, expect);
        let sparse = hyperbolic_enumerate(2, 2, 0.5).unwrap();
        assert_eq!(sparse.len(), 5);
        assert!(!sparse.contains(&MultiIndex(vec![1, 1])));
        assert_eq!(hyperbolic_enumerate(7, 0, 0.3).unwrap(), vec![MultiIndex::zero(7)]);
        assert_eq!(hyperbolic_enumerate(7, 4, 1.0).unwrap().len(), 330);
        assert_eq!(hyperbolic_enumerate(7, 4, 0.5).unwrap().len(), 50);
        assert!(hyperbolic_enumerate(2, 2, 0.0).is_err());
    }

    #[test]
    fn eval_basis_examples() {
        let fams = vec![hermite_family(2, 0.0, 1.0), hermite_family(2, 0.0, 1.0)];
        let b = TensorBasis::hyperbolic_with_families(fams, 2, 1.0).unwrap();
        let v = b.eval_basis(&[1.0, 1.0]).unwrap();
        assert_eq!(v[b.zero_position()], 1.0);
        let pos = b.indices.iter().position(|a| a.0 == vec![1, 1]).unwrap();
        assert!((v[pos] - 1.0).abs() < 1e-15);

        let one = TensorBasis::hyperbolic_with_families(vec![hermite_family(2, 0.0, 1.0)], 2, 1.0).unwrap();
        let v = one.eval_basis(&[0.0]).unwrap();
        assert!((v[2] + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(one.eval_basis(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn design_matrix_matches_rowwise() {
        let model = InputModel::preset(crate::probmodel::SG_CLOGGING_PRESET).unwrap();
        let b = TensorBasis::hyperbolic(&model, 3, 0.7).unwrap();
        let x = model.sample(17, 4);
        let a = b.design_matrix(&x).unwrap();
        for r in 0..17 {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            let v = b.eval_basis(&row).unwrap();
            for c in 0..b.len() {
                assert_eq!(a[(r, c)], v[c]);
            }
        }
    }

    #[test]
    fn basis_rejects_bad_sets() {
        let fams = vec![hermite_family(2, 0.0, 1.0)];
        assert!(TensorBasis::new(fams.clone(), vec![MultiIndex(vec![1])], 2, 1.0).is_err());
        assert!(TensorBasis::new(
            fams.clone(),
            vec![MultiIndex(vec![0]), MultiIndex(vec![1]), MultiIndex(vec![1])],
            2,
            1.0
        )
        .is_err());
        assert!(TensorBasis::new(fams, vec![MultiIndex(vec![0]), MultiIndex(vec![3])], 2, 1.0).is_err());
    }
}
