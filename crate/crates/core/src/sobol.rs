//! Sobol' indices read off sparse PCE coefficients.
//!
//! With an orthonormal basis the variance at timestep `k` is the energy
//! `Σ_{α≠0} (g^k_α)²`, and each index is the share of that energy held by a
//! set of multi-indices.

use serde::Serialize;

use crate::pce::SparsePceSurrogate;

/// Total variance below which indices at a timestep are undefined.
pub const MIN_VARIANCE: f64 = 1e-14;

fn energy<F: Fn(&[u32]) -> bool>(s: &SparsePceSurrogate, k: usize, keep: F) -> f64 {
    s.basis
        .indices
        .iter()
        .zip(s.coefficients.row(k).iter())
        .filter(|(a, _)| !a.is_zero() && keep(&a.0))
        .map(|(_, c)| c * c)
        .sum()
}

/// `Σ_{α≠0} (g^k_α)²`.
pub fn total_variance(s: &SparsePceSurrogate, k: usize) -> f64 {
    energy(s, k, |_| true)
}

fn normalized<F: Fn(&[u32]) -> bool>(s: &SparsePceSurrogate, k: usize, keep: F) -> Option<f64> {
    let total = total_variance(s, k);
    if total < MIN_VARIANCE {
        return None;
    }
    Some(energy(s, k, keep) / total)
}

/// Closed index of the exact group `γ`: terms whose support is exactly `group`.
/// `None` when the variance at `k` is negligible or the group is empty.
pub fn group_index(s: &SparsePceSurrogate, group: &[usize], k: usize) -> Option<f64> {
    if group.is_empty() {
        return None;
    }
    let d = s.basis.dim();
    let mut member = vec![false; d];
    for &g in group {
        if g < d {
            member[g] = true;
        }
    }
    normalized(s, k, |a| a.iter().enumerate().all(|(i, &e)| (e > 0) == member[i]))
}

/// Terms depending on input `i` alone.
pub fn first_order(s: &SparsePceSurrogate, i: usize, k: usize) -> Option<f64> {
    normalized(s, k, |a| only_input(a, i))
}

/// Terms involving input `i`.
pub fn total_order(s: &SparsePceSurrogate, i: usize, k: usize) -> Option<f64> {
    normalized(s, k, |a| a[i] > 0)
}

/// `S_* = 1 − Σ_i S_i`, the share held by interaction terms.
pub fn interaction_residual(s: &SparsePceSurrogate, k: usize) -> Option<f64> {
    normalized(s, k, |a| a.iter().filter(|&&e| e > 0).count() > 1)
}

/// Unnormalized `Var(g_i^k(X_i))`.
pub fn variance_contribution(s: &SparsePceSurrogate, i: usize, k: usize) -> f64 {
    energy(s, k, |a| only_input(a, i))
}

fn only_input(a: &[u32], i: usize) -> bool {
    a[i] > 0 && a.iter().enumerate().all(|(j, &e)| j == i || e == 0)
}

/// Per-timestep indices for every input; `first[i][k]` etc.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolTimeSeries {
    pub input_names: Vec<String>,
    pub times: Vec<f64>,
    pub first: Vec<Vec<Option<f64>>>,
    pub total: Vec<Vec<Option<f64>>>,
    pub interaction: Vec<Option<f64>>,
    pub variance_contribution: Vec<Vec<f64>>,
    pub total_variance: Vec<f64>,
}

impl SobolTimeSeries {
    /// Inputs sorted by decreasing first-order index at timestep `k`.
    pub fn ranking(&self, k: usize) -> Option<Vec<usize>> {
        let vals: Option<Vec<f64>> = self.first.iter().map(|f| f[k]).collect();
        let vals = vals?;
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
        Some(order)
    }
}

pub fn sobol_timeseries(s: &SparsePceSurrogate) -> SobolTimeSeries {
    let d = s.basis.dim();
    let n = s.n_steps();
    SobolTimeSeries {
        input_names: s.input_names.clone(),
        times: s.times.clone(),
        first: (0..d).map(|i| (0..n).map(|k| first_order(s, i, k)).collect()).collect(),
        total: (0..d).map(|i| (0..n).map(|k| total_order(s, i, k)).collect()).collect(),
        interaction: (0..n).map(|k| interaction_residual(s, k)).collect(),
        variance_contribution: (0..d).map(|i| (0..n).map(|k| variance_contribution(s, i, k)).collect()).collect(),
        total_variance: (0..n).map(|k| total_variance(s, k)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthopoly::{hermite_family, MultiIndex, TensorBasis};
    use crate::pce::SelectionMethod;
    use nalgebra::DMatrix;

    fn surrogate(terms: &[([u32; 2], f64)]) -> SparsePceSurrogate {
        let fams = vec![hermite_family(3, 0.0, 1.0), hermite_family(3, 0.0, 1.0)];
        let mut indices = vec![MultiIndex(vec![0, 0])];
        indices.extend(terms.iter().map(|(a, _)| MultiIndex(a.to_vec())));
        let basis = TensorBasis::new(fams, indices, 3, 1.0).unwrap();
        let mut row = vec![0.5];
        row.extend(terms.iter().map(|(_, c)| *c));
        SparsePceSurrogate {
            coefficients: DMatrix::from_row_slice(1, row.len(), &row),
            basis,
            times: vec![0.0],
            input_names: vec!["a".into(), "b".into()],
            model_fingerprint: String::new(),
            selection: SelectionMethod::Lars,
        }
    }

    #[test]
    fn single_active_term() {
        let s = surrogate(&[([1, 0], 1.0)]);
        assert_eq!(group_index(&s, &[0], 0), Some(1.0));
        assert_eq!(group_index(&s, &[1], 0), Some(0.0));
        assert_eq!(group_index(&s, &[0, 1], 0), Some(0.0));
        assert_eq!(variance_contribution(&s, 0, 0), 1.0);
    }

    #[test]
    fn parseval_ratios() {
        let s = surrogate(&[([1, 0], 2.0), ([0, 1], 1.0)]);
        assert!((first_order(&s, 0, 0).unwrap() - 0.8).abs() < 1e-15);
        assert!((first_order(&s, 1, 0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(group_index(&s, &[0, 1], 0), Some(0.0));
        assert_eq!(interaction_residual(&s, 0), Some(0.0));
        assert_eq!(total_order(&s, 0, 0), first_order(&s, 0, 0));
        assert_eq!(variance_contribution(&s, 0, 0), 4.0);
    }

    #[test]
    fn pure_interaction() {
        let s = surrogate(&[([1, 1], 1.0)]);
        assert_eq!(first_order(&s, 0, 0), Some(0.0));
        assert_eq!(total_order(&s, 1, 0), Some(1.0));
        assert_eq!(interaction_residual(&s, 0), Some(1.0));
    }

    #[test]
    fn constant_surrogate_is_undefined() {
        let s = surrogate(&[]);
        assert_eq!(first_order(&s, 0, 0), None);
        assert_eq!(variance_contribution(&s, 1, 0), 0.0);
        let ts = sobol_timeseries(&s);
        assert_eq!(ts.interaction, vec![None]);
        assert!(ts.ranking(0).is_none());
    }
}
