//! Trajectory datasets and surrogate persistence, train/test splitting and
//! provenance records.
//!
//! A dataset is one CSV file whose header lists `x:<name>` input columns
//! followed by `y:t=<time>` output columns, plus a sidecar
//! `<stem>.provenance.json`. Floats are written in the shortest decimal form
//! that parses back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::orthopoly::TensorBasis;
use crate::pce::{SelectionMethod, SparsePceSurrogate};

/// Major version of the surrogate file layout; minor bumps stay readable.
pub const SURROGATE_FORMAT_MAJOR: u32 = 1;
pub const SURROGATE_FORMAT_MINOR: u32 = 0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("line {line}, column {column}: {msg}")]
    Value { line: usize, column: usize, msg: String },
    #[error("dataset shape: {0}")]
    Shape(String),
    #[error("unsupported surrogate format version {found} (this build reads {expected}.x)")]
    Version { found: String, expected: u32 },
    #[error("surrogate file is inconsistent: {0}")]
    Surrogate(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// A simulation row that failed and was left out of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRow {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_hash: String,
    pub schedule_hash: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    #[serde(default)]
    pub failed_rows: Vec<FailedRow>,
}

/// `n` input vectors paired with `n` output trajectories on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub input_names: Vec<String>,
    pub times: Vec<f64>,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub provenance: Option<Provenance>,
    /// Set when the file was loaded without its provenance sidecar.
    pub provenance_missing: bool,
}

impl TrajectoryDataset {
    pub fn new(
        input_names: Vec<String>,
        times: Vec<f64>,
        inputs: DMatrix<f64>,
        outputs: DMatrix<f64>,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        let ds = Self {
            input_names,
            times,
            inputs,
            outputs,
            provenance,
            provenance_missing: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.ncols() != self.input_names.len() {
            return Err(DataError::Shape(format!(
                "{} input columns but {} names",
                self.inputs.ncols(),
                self.input_names.len()
            )));
        }
        if self.outputs.ncols() != self.times.len() {
            return Err(DataError::Shape(format!(
                "{} output columns but {} timesteps",
                self.outputs.ncols(),
                self.times.len()
            )));
        }
        if self.inputs.nrows() != self.outputs.nrows() {
            return Err(DataError::Shape(format!(
                "{} input rows but {} output rows",
                self.inputs.nrows(),
                self.outputs.nrows()
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DataError::Shape("timesteps must be strictly increasing".into()));
        }
        for (m, what) in [(&self.inputs, "input"), (&self.outputs, "output")] {
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                let (r, c) = (pos % m.nrows(), pos / m.nrows());
                return Err(DataError::Shape(format!("non-finite {what} at row {r}, column {c}")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    /// Rows `idx`, in that order, with provenance carried over.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let inputs = DMatrix::from_fn(idx.len(), self.dim(), |r, c| self.inputs[(idx[r], c)]);
        let outputs = DMatrix::from_fn(idx.len(), self.n_steps(), |r, c| self.outputs[(idx[r], c)]);
        Self {
            input_names: self.input_names.clone(),
            times: self.times.clone(),
            inputs,
            outputs,
            provenance: self.provenance.clone(),
            provenance_missing: self.provenance_missing,
        }
    }

    /// Output trajectory values at timestep `k` across all rows.
    pub fn output_column(&self, k: usize) -> Vec<f64> {
        self.outputs.column(k).iter().copied().collect()
    }

    pub fn input_column(&self, i: usize) -> Vec<f64> {
        self.inputs.column(i).iter().copied().collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = self
            .input_names
            .iter()
            .map(|n| format!("x:{n}"))
            .chain(self.times.iter().map(|t| format!("y:t={}", fmt_f64(*t))))
            .collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for r in 0..self.n() {
            let mut first = true;
            for v in self.inputs.row(r).iter().chain(self.outputs.row(r).iter()) {
                if !first {
                    s.push(',');
                }
                first = false;
                let _ = write!(s, "{}", fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DataError::Schema {
            line: 1,
            msg: "empty file".into(),
        })?;
        let mut names = Vec::new();
        let mut times = Vec::new();
        for (col, field) in header.split(',').map(str::trim).enumerate() {
            if let Some(name) = field.strip_prefix("x:") {
                if !times.is_empty() {
                    return Err(DataError::Schema {
                        line: 1,
                        msg: format!("input column '{field}' after output columns"),
                    });
                }
                if name.is_empty() {
                    return Err(DataError::Schema {
                        line: 1,
                        msg: format!("column {} has an empty input name", col + 1),
                    });
                }
                names.push(name.to_string());
            } else if let Some(t) = field.strip_prefix("y:t=") {
                let t: f64 = t.parse().map_err(|_| DataError::Schema {
                    line: 1,
                    msg: format!("column {}: bad time '{t}'", col + 1),
                })?;
                times.push(t);
            } else {
                return Err(DataError::Schema {
                    line: 1,
                    msg: format!("column {}: header '{field}' is neither x:<name> nor y:t=<time>", col + 1),
                });
            }
        }
        let width = names.len() + times.len();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut rows = 0;
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(DataError::Schema {
                    line: lineno + 1,
                    msg: format!("{} fields but the header has {width}", fields.len()),
                });
            }
            for (c, f) in fields.iter().enumerate() {
                let v: f64 = f.trim().parse().map_err(|_| DataError::Value {
                    line: lineno + 1,
                    column: c + 1,
                    msg: format!("cannot parse '{f}'"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Value {
                        line: lineno + 1,
                        column: c + 1,
                        msg: "non-finite value".into(),
                    });
                }
                if c < names.len() {
                    inputs.push(v);
                } else {
                    outputs.push(v);
                }
            }
            rows += 1;
        }
        let ds = Self {
            inputs: DMatrix::from_row_slice(rows, names.len(), &inputs),
            outputs: DMatrix::from_row_slice(rows, times.len(), &outputs),
            input_names: names,
            times,
            provenance: None,
            provenance_missing: true,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// SHA-256 of the CSV form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// `<dir>/<stem>.provenance.json` for a dataset at `path`.
pub fn provenance_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.provenance.json"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_dataset(ds: &TrajectoryDataset, path: &Path) -> Result<()> {
    fs::write(path, ds.to_csv_string()).map_err(io_err(path))?;
    if let Some(p) = &ds.provenance {
        let side = provenance_path(path);
        let json = serde_json::to_string_pretty(p).expect("provenance serializes");
        fs::write(&side, json + "\n").map_err(io_err(&side))?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut ds = TrajectoryDataset::from_csv_str(&text)?;
    let side = provenance_path(path);
    if side.exists() {
        let json = fs::read_to_string(&side).map_err(io_err(&side))?;
        let prov: Provenance = serde_json::from_str(&json).map_err(|source| DataError::Json {
            path: side.clone(),
            source,
        })?;
        ds.provenance = Some(prov);
        ds.provenance_missing = false;
    } else {
        log::warn!("{}: no provenance sidecar found", path.display());
    }
    Ok(ds)
}

/// Deterministic shuffled split into `⌈f·n⌉` training and `n − ⌈f·n⌉` test rows.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((train_fraction * n as f64).ceil() as usize).min(n);
    let test = idx.split_off(n_train);
    (idx, test)
}

pub fn split(ds: &TrajectoryDataset, train_fraction: f64, seed: u64) -> (TrajectoryDataset, TrajectoryDataset) {
    let (train, test) = split_indices(ds.n(), train_fraction, seed);
    (ds.select_rows(&train), ds.select_rows(&test))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurrogateFile {
    format_version: String,
    tool_version: String,
    input_names: Vec<String>,
    model_fingerprint: String,
    selection: SelectionMethod,
    times: Vec<f64>,
    basis: TensorBasis,
    coefficients: Vec<Vec<f64>>,
}

pub fn surrogate_to_json(s: &SparsePceSurrogate) -> String {
    let file = SurrogateFile {
        format_version: format!("{SURROGATE_FORMAT_MAJOR}.{SURROGATE_FORMAT_MINOR}"),
        tool_version: crate::TOOL_VERSION.to_string(),
        input_names: s.input_names.clone(),
        model_fingerprint: s.model_fingerprint.clone(),
        selection: s.selection,
        times: s.times.clone(),
        basis: s.basis.clone(),
        coefficients: (0..s.coefficients.nrows())
            .map(|k| s.coefficients.row(k).iter().copied().collect())
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("surrogate serializes") + "\n"
}

pub fn surrogate_from_json(text: &str) -> Result<SparsePceSurrogate> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|source| DataError::Json {
        path: PathBuf::from("<surrogate>"),
        source,
    })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| DataError::Surrogate("missing format_version".into()))?
        .to_string();
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| DataError::Version {
            found: version.clone(),
            expected: SURROGATE_FORMAT_MAJOR,
        })?;
    if major != SURROGATE_FORMAT_MAJOR {
        return Err(DataError::Version {
            found: version,
            expected: SURROGATE_FORMAT_MAJOR,
        });
    }
    let file: SurrogateFile = serde_json::from_value(value).map_err(|source| DataError::Json {
        path: PathBuf::from("<surrogate>"),
        source,
    })?;
    let basis = TensorBasis::new(file.basis.families, file.basis.indices, file.basis.p, file.basis.q)
        .map_err(|e| DataError::Surrogate(e.to_string()))?;
    if file.coefficients.len() != file.times.len() {
        return Err(DataError::Surrogate(format!(
            "{} coefficient rows for {} timesteps",
            file.coefficients.len(),
            file.times.len()
        )));
    }
    if let Some((k, row)) = file.coefficients.iter().enumerate().find(|(_, r)| r.len() != basis.len()) {
        return Err(DataError::Surrogate(format!(
            "timestep {k} has {} coefficients for {} basis terms",
            row.len(),
            basis.len()
        )));
    }
    if file.input_names.len() != basis.dim() {
        return Err(DataError::Surrogate(format!(
            "{} input names for a basis of dimension {}",
            file.input_names.len(),
            basis.dim()
        )));
    }
    let n = file.times.len();
    let p = basis.len();
    let flat: Vec<f64> = file.coefficients.into_iter().flatten().collect();
    Ok(SparsePceSurrogate {
        basis,
        coefficients: DMatrix::from_row_slice(n, p, &flat),
        times: file.times,
        input_names: file.input_names,
        model_fingerprint: file.model_fingerprint,
        selection: file.selection,
    })
}

pub fn save_surrogate(s: &SparsePceSurrogate, path: &Path) -> Result<()> {
    fs::write(path, surrogate_to_json(s)).map_err(io_err(path))
}

pub fn load_surrogate(path: &Path) -> Result<SparsePceSurrogate> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    surrogate_from_json(&text)
}
