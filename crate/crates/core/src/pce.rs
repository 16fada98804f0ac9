//! Sparse polynomial chaos surrogates for trajectory outputs.
//!
//! Each timestep is fitted independently over the same hyperbolic candidate
//! basis. The surrogate keeps the union of the per-timestep selections, with
//! zero coefficients where a term was not selected at a given timestep.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{split, TrajectoryDataset};
use crate::lars::{hybrid_lars, ols, HybridOptions, LarsError};
use crate::orthopoly::{family_for, OrthoError, Recurrence, TensorBasis};
use crate::probmodel::InputModel;

#[derive(Debug, Error)]
pub enum PceError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {dataset} inputs but the model has {model}")]
    DimensionMismatch { dataset: usize, model: usize },
    #[error("input vector has {got} entries, surrogate expects {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("timestep {timestep}: design matrix is rank deficient (condition estimate {condition:e})")]
    RankDeficient { timestep: usize, condition: f64 },
    #[error("timestep {timestep}: {source}")]
    Regression {
        timestep: usize,
        #[source]
        source: LarsError,
    },
    #[error("test set has {got} timesteps, surrogate has {expected}")]
    TimestepMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Basis(#[from] OrthoError),
}

pub type Result<T> = std::result::Result<T, PceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Lars,
    Ols,
}

impl std::str::FromStr for SelectionMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lars" => Ok(Self::Lars),
            "ols" => Ok(Self::Ols),
            other => Err(format!("unknown selection method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub p: u32,
    pub q: f64,
    pub selection: SelectionMethod,
    pub patience: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            p: 4,
            q: 0.5,
            selection: SelectionMethod::Lars,
            patience: HybridOptions::default().patience,
        }
    }
}

/// Per-timestep sparse coefficients over a shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePceSurrogate {
    pub basis: TensorBasis,
    /// `N × |𝒥|`; row `k` holds the coefficients at timestep `k`.
    pub coefficients: DMatrix<f64>,
    pub times: Vec<f64>,
    pub input_names: Vec<String>,
    pub model_fingerprint: String,
    pub selection: SelectionMethod,
}

/// Training-side diagnostics of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub terms: Vec<usize>,
    /// Corrected relative leave-one-out error per timestep; 0 for constant columns.
    pub loo_errors: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Out-of-sample validation.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub terms: Vec<usize>,
    /// `None` where the test output has no variance.
    pub q2: Vec<Option<f64>>,
    /// Mean over the defined timesteps.
    pub q2_mean: Option<f64>,
    pub loo_errors: Option<Vec<f64>>,
}

impl SparsePceSurrogate {
    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    /// Nonzero coefficients at each timestep.
    pub fn terms_per_step(&self) -> Vec<usize> {
        (0..self.coefficients.nrows())
            .map(|k| self.coefficients.row(k).iter().filter(|c| **c != 0.0).count())
            .collect()
    }

    /// `Σ_α g^k_α φ_α(x)` for every timestep.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.basis.dim() {
            return Err(PceError::PointDimension {
                expected: self.basis.dim(),
                got: x.len(),
            });
        }
        let phi = DVector::from_vec(self.basis.eval_basis(x)?);
        Ok((&self.coefficients * phi).iter().copied().collect())
    }

    /// `n × N` predictions at the rows of `x`.
    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.basis.dim() {
            return Err(PceError::PointDimension {
                expected: self.basis.dim(),
                got: x.ncols(),
            });
        }
        let phi = self.basis.design_matrix(x)?;
        Ok(phi * self.coefficients.transpose())
    }

    /// Mean of the surrogate at each timestep (the constant coefficient).
    pub fn mean(&self) -> Vec<f64> {
        let z = self.basis.zero_position();
        self.coefficients.column(z).iter().copied().collect()
    }

    /// `Σ_{α≠0} (g^k_α)²` at each timestep.
    pub fn variance(&self) -> Vec<f64> {
        let z = self.basis.zero_position();
        (0..self.n_steps())
            .map(|k| {
                self.coefficients
                    .row(k)
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != z)
                    .map(|(_, c)| c * c)
                    .sum()
            })
            .collect()
    }
}

fn is_degenerate(y: &DVector<f64>) -> bool {
    let min = y.min();
    let max = y.max();
    max - min <= 1e-12 * max.abs().max(min.abs()).max(1e-300) || max == min
}

/// Fits a surrogate with the family of each marginal in `model`.
pub fn fit(ds: &TrajectoryDataset, model: &InputModel, opts: &FitOptions) -> Result<(SparsePceSurrogate, FitDiagnostics)> {
    if ds.dim() != model.dim() {
        return Err(PceError::DimensionMismatch {
            dataset: ds.dim(),
            model: model.dim(),
        });
    }
    let families = model
        .inputs()
        .iter()
        .map(|i| family_for(&i.marginal, opts.p as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    fit_with_families(ds, families, &model.fingerprint(), opts)
}

/// Fits a surrogate over explicitly supplied univariate families.
pub fn fit_with_families(
    ds: &TrajectoryDataset,
    families: Vec<Recurrence>,
    fingerprint: &str,
    opts: &FitOptions,
) -> Result<(SparsePceSurrogate, FitDiagnostics)> {
    let n = ds.n();
    if n == 0 {
        return Err(PceError::EmptyDataset);
    }
    if ds.dim() != families.len() {
        return Err(PceError::DimensionMismatch {
            dataset: ds.dim(),
            model: families.len(),
        });
    }
    if opts.selection == SelectionMethod::Lars && n < 10 * ds.dim() {
        log::warn!("only {n} samples for {} inputs; LARS selection may be unreliable", ds.dim());
    }
    let candidates = TensorBasis::hyperbolic_with_families(families, opts.p, opts.q)?;
    let design = candidates.design_matrix(&ds.inputs)?;
    let zero = candidates.zero_position();
    let hybrid = HybridOptions {
        patience: opts.patience,
        max_steps: None,
    };

    struct StepFit {
        columns: Vec<usize>,
        coefficients: Vec<f64>,
        loo: f64,
        degenerate: bool,
    }

    let fits: Vec<Result<StepFit>> = (0..ds.n_steps())
        .into_par_iter()
        .map(|k| {
            let y = ds.outputs.column(k).into_owned();
            if is_degenerate(&y) {
                return Ok(StepFit {
                    columns: vec![zero],
                    coefficients: vec![y.mean()],
                    loo: 0.0,
                    degenerate: true,
                });
            }
            let sel = match opts.selection {
                SelectionMethod::Lars => hybrid_lars(&design, zero, &y, &hybrid),
                SelectionMethod::Ols => ols(&design, &y),
            }
            .map_err(|source| match source {
                LarsError::RankDeficient { condition, .. } => PceError::RankDeficient { timestep: k, condition },
                other => PceError::Regression { timestep: k, source: other },
            })?;
            Ok(StepFit {
                columns: sel.columns,
                coefficients: sel.coefficients,
                loo: sel.loo_error,
                degenerate: false,
            })
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;

    // Candidate order is canonical, so sorting candidate positions keeps the
    // union canonical regardless of which thread finished first.
    let union: BTreeSet<usize> = fits.iter().flat_map(|f| f.columns.iter().copied()).chain([zero]).collect();
    let union: Vec<usize> = union.into_iter().collect();
    let mut position = vec![usize::MAX; candidates.len()];
    for (slot, &c) in union.iter().enumerate() {
        position[c] = slot;
    }
    let mut coefficients = DMatrix::zeros(ds.n_steps(), union.len());
    for (k, f) in fits.iter().enumerate() {
        for (c, v) in f.columns.iter().zip(&f.coefficients) {
            coefficients[(k, position[*c])] = *v;
        }
    }
    let basis = candidates.with_indices(union.iter().map(|&c| candidates.indices[c].clone()).collect())?;
    let surrogate = SparsePceSurrogate {
        basis,
        coefficients,
        times: ds.times.clone(),
        input_names: ds.input_names.clone(),
        model_fingerprint: fingerprint.to_string(),
        selection: opts.selection,
    };
    let diagnostics = FitDiagnostics {
        terms: fits.iter().map(|f| f.columns.len()).collect(),
        loo_errors: fits.iter().map(|f| f.loo).collect(),
        degenerate: fits.iter().map(|f| f.degenerate).collect(),
    };
    Ok((surrogate, diagnostics))
}

/// Predictivity `Q²(t_k) = 1 − SSE/SST` against exact values `truth` (`n × N`).
pub fn q2_from_predictions(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> (Vec<Option<f64>>, Option<f64>) {
    let n = truth.nrows();
    let q2: Vec<Option<f64>> = (0..truth.ncols())
        .map(|k| {
            let col = truth.column(k);
            let mean = col.mean();
            let sst: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if n < 2 || sst <= (1e-12 * scale).powi(2) * n as f64 || sst == 0.0 {
                return None;
            }
            let sse: f64 = col.iter().zip(pred.column(k).iter()).map(|(t, p)| (t - p) * (t - p)).sum();
            Some(1.0 - sse / sst)
        })
        .collect();
    let defined: Vec<f64> = q2.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    (q2, mean)
}

/// Out-of-sample predictivity of `s` on `test`.
pub fn q2(s: &SparsePceSurrogate, test: &TrajectoryDataset) -> Result<FitReport> {
    if test.n_steps() != s.n_steps() {
        return Err(PceError::TimestepMismatch {
            expected: s.n_steps(),
            got: test.n_steps(),
        });
    }
    if test.n() == 0 {
        return Err(PceError::EmptyDataset);
    }
    let pred = s.predict_matrix(&test.inputs)?;
    let (q2, q2_mean) = q2_from_predictions(&pred, &test.outputs);
    Ok(FitReport {
        terms: s.terms_per_step(),
        q2,
        q2_mean,
        loo_errors: None,
    })
}

#[derive(Debug, Clone)]
pub struct CvCell {
    pub p: u32,
    pub q: f64,
    /// Mean predictivity for each split, or the fit failure message.
    pub scores: Vec<std::result::Result<f64, String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct CvOptions {
    pub splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub selection: SelectionMethod,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            splits: 5,
            train_fraction: 0.75,
            seed: 0,
            selection: SelectionMethod::Lars,
        }
    }
}

/// Seed of the `s`-th split derived from the base seed.
pub fn split_seed(seed: u64, s: usize) -> u64 {
    seed.wrapping_add((s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Q̄² for every `(p, q)` cell and every seeded split; failures stay in their cell.
pub fn cross_validate(
    ds: &TrajectoryDataset,
    model: &InputModel,
    p_grid: &[u32],
    q_grid: &[f64],
    opts: &CvOptions,
) -> Vec<CvCell> {
    let mut cells = Vec::new();
    let splits: Vec<(TrajectoryDataset, TrajectoryDataset)> = (0..opts.splits.max(1))
        .map(|s| split(ds, opts.train_fraction, split_seed(opts.seed, s)))
        .collect();
    for &p in p_grid {
        for &q in q_grid {
            let fit_opts = FitOptions {
                p,
                q,
                selection: opts.selection,
                ..Default::default()
            };
            let scores = splits
                .iter()
                .map(|(train, test)| {
                    let (s, _) = fit(train, model, &fit_opts).map_err(|e| e.to_string())?;
                    let report = q2(&s, test).map_err(|e| e.to_string())?;
                    report.q2_mean.ok_or_else(|| "no timestep with test variance".to_string())
                })
                .collect();
            cells.push(CvCell { p, q, scores });
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthopoly::hermite_family;
    use crate::probmodel::Marginal;

    fn gaussian_model(d: usize) -> InputModel {
        InputModel::from_pairs((0..d).map(|i| (format!("x{i}"), Marginal::gaussian(0.0, 1.0).unwrap())).collect())
            .unwrap()
    }

    fn dataset(model: &InputModel, n: usize, steps: usize, f: impl Fn(&[f64], usize) -> f64) -> TrajectoryDataset {
        let x = model.sample(n, 42);
        let y = DMatrix::from_fn(n, steps, |r, k| {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            f(&row, k)
        });
        TrajectoryDataset::new(model.names(), (0..steps).map(|k| k as f64).collect(), x, y, None).unwrap()
    }

    #[test]
    fn constant_output_gives_constant_surrogate() {
        let model = gaussian_model(2);
        let ds = dataset(&model, 50, 3, |_, _| 3.0);
        let (s, diag) = fit(&ds, &model, &FitOptions::default()).unwrap();
        assert_eq!(s.basis.len(), 1);
        assert!(diag.degenerate.iter().all(|d| *d));
        for v in s.predict(&[0.3, -1.0]).unwrap() {
            assert_eq!(v, 3.0);
        }
    }

    #[test]
    fn linear_truth_recovered() {
        let model = gaussian_model(2);
        let ds = dataset(&model, 200, 2, |x, k| (k + 1) as f64 * (2.0 * x[0] + x[1]));
        let opts = FitOptions {
            p: 2,
            q: 1.0,
            ..Default::default()
        };
        let (s, _) = fit(&ds, &model, &opts).unwrap();
        let idx = |a: [u32; 2]| s.basis.indices.iter().position(|m| m.0 == a.to_vec());
        let c10 = s.coefficients[(0, idx([1, 0]).unwrap())];
        let c01 = s.coefficients[(0, idx([0, 1]).unwrap())];
        assert!((c10 - 2.0).abs() < 1e-10 && (c01 - 1.0).abs() < 1e-10);
        for (j, m) in s.basis.indices.iter().enumerate() {
            if m.0 != vec![1, 0] && m.0 != vec![0, 1] {
                assert!(s.coefficients[(0, j)].abs() < 1e-10);
            }
        }
        let y = s.predict(&[1.0, 0.0]).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_surrogate_predicts_zero() {
        let fams = vec![hermite_family(2, 0.0, 1.0)];
        let basis = TensorBasis::hyperbolic_with_families(fams, 2, 1.0).unwrap();
        let s = SparsePceSurrogate {
            coefficients: DMatrix::zeros(4, basis.len()),
            basis,
            times: vec![0.0, 1.0, 2.0, 3.0],
            input_names: vec!["x".into()],
            model_fingerprint: String::new(),
            selection: SelectionMethod::Lars,
        };
        assert_eq!(s.predict(&[0.7]).unwrap(), vec![0.0; 4]);
        assert!(s.predict(&[0.7, 1.0]).is_err());
    }

    #[test]
    fn q2_definition_cases() {
        let truth = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let (q, m) = q2_from_predictions(&truth, &truth);
        assert_eq!(q[0], Some(1.0));
        assert_eq!(q[1], None);
        assert_eq!(m, Some(1.0));
        let mean_pred = DMatrix::from_element(4, 2, 2.5);
        assert!(q2_from_predictions(&mean_pred, &truth).0[0].unwrap().abs() < 1e-15);
        let worse = DMatrix::from_element(4, 2, 10.0);
        assert!(q2_from_predictions(&worse, &truth).0[0].unwrap() < 0.0);
    }

    #[test]
    fn ols_and_lars_agree_on_true_support() {
        let model = gaussian_model(3);
        let ds = dataset(&model, 400, 1, |x, _| 1.0 + x[0] - 0.5 * x[2] + 0.25 * (x[1] * x[1] - 1.0));
        let mk = |selection| FitOptions {
            p: 2,
            q: 1.0,
            selection,
            ..Default::default()
        };
        let (a, _) = fit(&ds, &model, &mk(SelectionMethod::Lars)).unwrap();
        let (b, _) = fit(&ds, &model, &mk(SelectionMethod::Ols)).unwrap();
        let pts = model.sample(20, 1);
        let pa = a.predict_matrix(&pts).unwrap();
        let pb = b.predict_matrix(&pts).unwrap();
        assert!((pa - pb).amax() < 1e-8);
    }

    #[test]
    fn ols_rank_deficiency_names_timestep() {
        let model = gaussian_model(2);
        let ds = dataset(&model, 5, 1, |x, _| x[0]);
        let opts = FitOptions {
            p: 3,
            q: 1.0,
            selection: SelectionMethod::Ols,
            ..Default::default()
        };
        assert!(matches!(fit(&ds, &model, &opts), Err(PceError::Regression { timestep: 0, .. })));
    }

    #[test]
    fn cross_validate_shapes() {
        let model = gaussian_model(2);
        let ds = dataset(&model, 80, 2, |x, k| x[0] + k as f64 * x[1]);
        let cells = cross_validate(
            &ds,
            &model,
            &[1, 2],
            &[1.0],
            &CvOptions {
                splits: 1,
                ..Default::default()
            },
        );
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].scores.len(), 1);
        assert!(*cells[1].scores[0].as_ref().unwrap() > 0.999);
    }
}
