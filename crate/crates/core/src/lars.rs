//! Least-angle regression path and hybrid model selection by corrected
//! leave-one-out error.
//!
//! LARS only orders the candidate regressors. Each prefix of that order is
//! refitted by ordinary least squares together with the constant term, and
//! the prefix minimizing the corrected leave-one-out error is kept.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LarsError {
    #[error("design has {rows} rows but response has {len} entries")]
    ShapeMismatch { rows: usize, len: usize },
    #[error("empty design")]
    Empty,
    #[error("rank-deficient design: column {column} is (numerically) a combination of earlier ones, condition estimate {condition:e}")]
    RankDeficient { column: usize, condition: f64 },
    #[error("least squares needs more rows ({rows}) than columns ({cols})")]
    Underdetermined { rows: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, LarsError>;

/// Relative residual norm under which a new column counts as dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Order in which LARS activates the columns of `x`.
///
/// Columns and response are centered and the columns scaled to unit norm
/// first, so `x` must not contain the constant regressor. Columns with no
/// variation or that become collinear with the active set are skipped.
pub fn lars_order(x: &DMatrix<f64>, y: &DVector<f64>, max_steps: usize) -> Vec<usize> {
    let (n, p) = x.shape();
    if n < 2 || p == 0 {
        return Vec::new();
    }
    let mut xs = x.clone();
    let mut usable = vec![true; p];
    for j in 0..p {
        let mut col = xs.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm <= 1e-300 || norm < 1e-13 * x.column(j).norm() {
            usable[j] = false;
        } else {
            col /= norm;
        }
    }
    let ymean = y.mean();
    let mut r = y.map(|v| v - ymean);
    let y_norm = r.norm();
    if y_norm == 0.0 {
        return Vec::new();
    }

    let limit = max_steps.min(p).min(n - 1);
    let mut active: Vec<usize> = Vec::new();
    let mut is_active = vec![false; p];
    let mut c = xs.tr_mul(&r);
    let mut pending: Option<usize> = None;

    while active.len() < limit {
        let next = match pending.take() {
            Some(j) => j,
            None => {
                let mut best = None;
                let mut best_c = -1.0;
                for j in 0..p {
                    if usable[j] && !is_active[j] && c[j].abs() > best_c {
                        best_c = c[j].abs();
                        best = Some(j);
                    }
                }
                match best {
                    Some(j) => j,
                    None => break,
                }
            }
        };
        if c[next].abs() <= 1e-14 * y_norm {
            break;
        }
        is_active[next] = true;
        active.push(next);

        let k = active.len();
        let xa = DMatrix::from_fn(n, k, |i, a| xs[(i, active[a])]);
        let signs = DVector::from_fn(k, |a, _| c[active[a]].signum());
        let gram = xa.tr_mul(&xa);
        let chol = match gram.clone().cholesky() {
            Some(ch) => ch,
            None => {
                // Collinear with the active set: drop it for good.
                active.pop();
                is_active[next] = false;
                usable[next] = false;
                continue;
            }
        };
        // Reject near-singular Gram matrices the Cholesky factor accepted.
        let diag_min = (0..k).map(|a| chol.l()[(a, a)]).fold(f64::INFINITY, f64::min);
        if diag_min < 1e-7 {
            active.pop();
            is_active[next] = false;
            usable[next] = false;
            continue;
        }
        let w = chol.solve(&signs);
        let aa = 1.0 / signs.dot(&w).sqrt();
        let w = w * aa;
        let u = &xa * &w;
        let a = xs.tr_mul(&u);
        let cmax = c[next].abs();

        let mut gamma = cmax / aa;
        let mut enter = None;
        for j in 0..p {
            if !usable[j] || is_active[j] {
                continue;
            }
            for cand in [(cmax - c[j]) / (aa - a[j]), (cmax + c[j]) / (aa + a[j])] {
                if cand > 1e-14 * gamma.max(1e-300) && cand < gamma {
                    gamma = cand;
                    enter = Some(j);
                }
            }
        }
        r -= &u * gamma;
        c = xs.tr_mul(&r);
        pending = enter;
    }
    active
}

/// Incremental QR by modified Gram–Schmidt with one reorthogonalization pass.
///
/// Tracks the leverages `h_i = Σ_s Q_is²` and the inverse of `R`, which give
/// leave-one-out residuals and the correction factor without refactoring.
#[derive(Debug, Clone)]
pub struct IncrementalQr {
    q: Vec<DVector<f64>>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    qty: Vec<f64>,
    residual: DVector<f64>,
    leverage: DVector<f64>,
}

impl IncrementalQr {
    pub fn new(y: &DVector<f64>) -> Self {
        let n = y.len();
        Self {
            q: Vec::new(),
            r: DMatrix::zeros(0, 0),
            r_inv: DMatrix::zeros(0, 0),
            qty: Vec::new(),
            residual: y.clone(),
            leverage: DVector::zeros(n),
        }
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    /// Appends a column; returns `false` and leaves the state unchanged when
    /// the column is numerically dependent on those already present.
    pub fn push(&mut self, col: &DVector<f64>) -> bool {
        let m = self.q.len();
        let orig = col.norm();
        if orig == 0.0 {
            return false;
        }
        let mut v = col.clone();
        let mut coeffs = vec![0.0; m];
        for _pass in 0..2 {
            for (s, qs) in self.q.iter().enumerate() {
                let proj = qs.dot(&v);
                coeffs[s] += proj;
                v.axpy(-proj, qs, 1.0);
            }
        }
        let rnn = v.norm();
        if rnn <= DEPENDENCE_TOL * orig {
            return false;
        }
        v /= rnn;

        let mut r = DMatrix::zeros(m + 1, m + 1);
        r.view_mut((0, 0), (m, m)).copy_from(&self.r);
        for s in 0..m {
            r[(s, m)] = coeffs[s];
        }
        r[(m, m)] = rnn;
        // [R c; 0 ρ]^{-1} = [R⁻¹  −R⁻¹c/ρ; 0  1/ρ]
        let mut r_inv = DMatrix::zeros(m + 1, m + 1);
        r_inv.view_mut((0, 0), (m, m)).copy_from(&self.r_inv);
        let cvec = DVector::from_vec(coeffs);
        let top = &self.r_inv * &cvec;
        for s in 0..m {
            r_inv[(s, m)] = -top[s] / rnn;
        }
        r_inv[(m, m)] = 1.0 / rnn;

        let qy = v.dot(&self.residual);
        self.residual.axpy(-qy, &v, 1.0);
        self.leverage.zip_apply(&v, |h, qi| *h += qi * qi);
        self.qty.push(qy);
        self.q.push(v);
        self.r = r;
        self.r_inv = r_inv;
        true
    }

    /// Least-squares coefficients for the columns pushed so far.
    pub fn coefficients(&self) -> Vec<f64> {
        let qty = DVector::from_column_slice(&self.qty);
        (&self.r_inv * qty).iter().copied().collect()
    }

    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }

    /// `max |R_ii| / min |R_ii|`, a cheap lower bound on the condition number.
    pub fn condition_estimate(&self) -> f64 {
        let m = self.q.len();
        if m == 0 {
            return 1.0;
        }
        let d: Vec<f64> = (0..m).map(|i| self.r[(i, i)].abs()).collect();
        d.iter().cloned().fold(0.0, f64::max) / d.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Mean squared leave-one-out residual `mean((r_i / (1 − h_i))²)`.
    pub fn loo_mse(&self) -> f64 {
        let n = self.residual.len();
        let mut acc = 0.0;
        for i in 0..n {
            let denom = 1.0 - self.leverage[i];
            if denom <= 1e-12 {
                return f64::INFINITY;
            }
            let e = self.residual[i] / denom;
            acc += e * e;
        }
        acc / n as f64
    }

    /// `n/(n − P) · (1 + tr((AᵀA/n)⁻¹)/n)`, with the trace read off `R⁻¹`.
    pub fn loo_correction(&self) -> f64 {
        let n = self.residual.len() as f64;
        let p = self.q.len() as f64;
        if n <= p {
            return f64::INFINITY;
        }
        n / (n - p) * (1.0 + self.r_inv.norm_squared())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected columns of the full design, the constant column first.
    pub columns: Vec<usize>,
    pub coefficients: Vec<f64>,
    /// Corrected leave-one-out error of the selected model, relative to the
    /// response variance.
    pub loo_error: f64,
    /// Corrected relative leave-one-out error after each path step.
    pub path_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct HybridOptions {
    /// Stop after this many path steps without improving the best error.
    pub patience: usize,
    pub max_steps: Option<usize>,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            patience: 20,
            max_steps: None,
        }
    }
}

fn check_shapes(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(LarsError::ShapeMismatch {
            rows: design.nrows(),
            len: y.len(),
        });
    }
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(LarsError::Empty);
    }
    Ok(())
}

fn variance(y: &DVector<f64>) -> f64 {
    let m = y.mean();
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (y.len().max(2) - 1) as f64
}

/// Hybrid LARS: `design[:, constant]` is the constant regressor and is always
/// kept; the other columns are ranked by LARS and each prefix is refitted.
pub fn hybrid_lars(
    design: &DMatrix<f64>,
    constant: usize,
    y: &DVector<f64>,
    opts: &HybridOptions,
) -> Result<Selection> {
    check_shapes(design, y)?;
    let (n, p) = design.shape();
    let var_y = variance(y);
    let const_col = design.column(constant).into_owned();

    let mut qr = IncrementalQr::new(y);
    if !qr.push(&const_col) {
        return Err(LarsError::RankDeficient {
            column: constant,
            condition: f64::INFINITY,
        });
    }
    if var_y <= 0.0 || n < 3 {
        return Ok(Selection {
            columns: vec![constant],
            coefficients: qr.coefficients(),
            loo_error: 0.0,
            path_errors: Vec::new(),
        });
    }

    let others: Vec<usize> = (0..p).filter(|&j| j != constant).collect();
    let x = DMatrix::from_fn(n, others.len(), |i, a| design[(i, others[a])]);
    let max_steps = opts.max_steps.unwrap_or(usize::MAX).min(n.saturating_sub(2));
    let order = lars_order(&x, y, max_steps);

    let score = |qr: &IncrementalQr| qr.loo_mse() * qr.loo_correction() / var_y;
    let mut columns = vec![constant];
    let mut best_err = score(&qr);
    let mut best = (columns.clone(), qr.coefficients());
    let mut path_errors = vec![best_err];
    let mut since_best = 0;
    for &a in &order {
        let j = others[a];
        if !qr.push(&design.column(j).into_owned()) {
            continue;
        }
        columns.push(j);
        let err = score(&qr);
        path_errors.push(err);
        if err < best_err {
            best_err = err;
            best = (columns.clone(), qr.coefficients());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
        if qr.rank() + 1 >= n {
            break;
        }
    }
    Ok(Selection {
        columns: best.0,
        coefficients: best.1,
        loo_error: best_err,
        path_errors,
    })
}

/// Ordinary least squares on every column of `design`.
pub fn ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<Selection> {
    check_shapes(design, y)?;
    let (n, p) = design.shape();
    if n <= p {
        return Err(LarsError::Underdetermined { rows: n, cols: p });
    }
    let mut qr = IncrementalQr::new(y);
    for j in 0..p {
        if !qr.push(&design.column(j).into_owned()) {
            let mut condition = qr.condition_estimate();
            if condition.is_finite() {
                condition /= DEPENDENCE_TOL;
            }
            return Err(LarsError::RankDeficient { column: j, condition });
        }
    }
    let var_y = variance(y);
    let loo = if var_y > 0.0 {
        qr.loo_mse() * qr.loo_correction() / var_y
    } else {
        0.0
    };
    Ok(Selection {
        columns: (0..p).collect(),
        coefficients: qr.coefficients(),
        loo_error: loo,
        path_errors: vec![loo],
    })
}
