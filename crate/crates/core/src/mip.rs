//! Canonical MIP data model: `min c^T x` subject to sparse rows and bounds,
//! with a subset of variables restricted to integers.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default integrality / zero threshold.
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MipError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid instance: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MipError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        MipError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
    GeneralInteger,
}

impl VarKind {
    pub fn is_integer(self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    LE,
    EQ,
    GE,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn new(terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        Row { terms, sense, rhs }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `activity` falls outside the row's feasible side.
    pub fn violation(&self, activity: f64) -> f64 {
        match self.sense {
            Sense::LE => (activity - self.rhs).max(0.0),
            Sense::GE => (self.rhs - activity).max(0.0),
            Sense::EQ => (activity - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipInstance {
    pub name: String,
    pub family: String,
    pub param_seed: u64,
    pub var_names: Vec<String>,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kind: Vec<VarKind>,
    pub rows: Vec<Row>,
}

impl MipInstance {
    /// Empty instance; variables and rows are added with [`add_var`](Self::add_var)
    /// and [`add_row`](Self::add_row).
    pub fn new(name: impl Into<String>, family: impl Into<String>, param_seed: u64) -> Self {
        MipInstance {
            name: name.into(),
            family: family.into(),
            param_seed,
            var_names: Vec::new(),
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            kind: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lb: f64, ub: f64, obj: f64) -> usize {
        self.var_names.push(name.into());
        self.kind.push(kind);
        self.lower.push(lb);
        self.upper.push(ub);
        self.objective.push(obj);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row::new(terms, sense, rhs));
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_nonzeros(&self) -> usize {
        self.rows.iter().map(|r| r.terms.len()).sum()
    }

    /// Indices of non-continuous variables, ascending.
    pub fn integer_indices(&self) -> Vec<usize> {
        (0..self.num_vars()).filter(|&j| self.kind[j].is_integer()).collect()
    }

    pub fn has_integers(&self) -> bool {
        self.kind.iter().any(|k| k.is_integer())
    }

    /// Checks every structural invariant and reports all offenders at once.
    pub fn validate(&self) -> Result<(), MipError> {
        let n = self.num_vars();
        let mut problems = Vec::new();
        for (what, len) in [
            ("var_names", self.var_names.len()),
            ("lower", self.lower.len()),
            ("upper", self.upper.len()),
            ("kind", self.kind.len()),
        ] {
            if len != n {
                problems.push(format!("{what} has length {len}, expected {n}"));
            }
        }
        if !problems.is_empty() {
            return Err(MipError::Validation(problems));
        }
        for j in 0..n {
            let (lb, ub, name) = (self.lower[j], self.upper[j], &self.var_names[j]);
            if !self.objective[j].is_finite() {
                problems.push(format!("variable {j} ({name}): non-finite objective coefficient"));
            }
            if lb.is_nan() || ub.is_nan() || lb == f64::INFINITY || ub == f64::NEG_INFINITY {
                problems.push(format!("variable {j} ({name}): invalid bounds [{lb}, {ub}]"));
                continue;
            }
            match self.kind[j] {
                VarKind::Binary => {
                    if lb < 0.0 || ub > 1.0 || lb.fract() != 0.0 || ub.fract() != 0.0 {
                        problems.push(format!("variable {j} ({name}): binary with bounds [{lb}, {ub}] outside [0, 1]"));
                    }
                }
                VarKind::GeneralInteger => {
                    if !lb.is_finite() || !ub.is_finite() {
                        problems.push(format!("variable {j} ({name}): general integer requires finite bounds, got [{lb}, {ub}]"));
                    } else if lb.fract() != 0.0 || ub.fract() != 0.0 {
                        problems.push(format!("variable {j} ({name}): general integer with fractional bounds [{lb}, {ub}]"));
                    }
                }
                VarKind::Continuous => {}
            }
        }
        let mut seen = vec![usize::MAX; n];
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                problems.push(format!("row {i}: non-finite rhs"));
            }
            for &(j, a) in &row.terms {
                if j >= n {
                    problems.push(format!("row {i}: column index {j} out of range (n = {n})"));
                    continue;
                }
                if !a.is_finite() {
                    problems.push(format!("row {i}: non-finite coefficient on column {j}"));
                }
                if seen[j] == i {
                    problems.push(format!("row {i}: duplicate column index {j}"));
                }
                seen[j] = i;
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MipError::Validation(problems))
        }
    }

    pub fn evaluate_objective(&self, x: &[f64]) -> Result<f64, MipError> {
        self.check_len(x)?;
        Ok(self.objective.iter().zip(x).map(|(c, v)| c * v).sum())
    }

    pub fn check_feasibility(&self, x: &[f64], tol: f64) -> Result<FeasibilityReport, MipError> {
        self.check_len(x)?;
        let max_row_violation = self
            .rows
            .iter()
            .map(|r| r.violation(r.activity(x)))
            .fold(0.0, f64::max);
        let mut max_bound_violation: f64 = 0.0;
        let mut max_integrality_violation: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            let viol = (self.lower[j] - v).max(v - self.upper[j]).max(0.0);
            max_bound_violation = max_bound_violation.max(viol);
            if self.kind[j].is_integer() {
                max_integrality_violation = max_integrality_violation.max((v - v.round()).abs());
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            max_bound_violation = f64::INFINITY;
        }
        let feasible =
            max_row_violation <= tol && max_bound_violation <= tol && max_integrality_violation <= tol;
        Ok(FeasibilityReport {
            max_row_violation,
            max_bound_violation,
            max_integrality_violation,
            feasible,
        })
    }

    /// Zero/nonzero labels over the integer variables, in index order.
    pub fn binarize_solution(&self, x: &[f64], tol: f64) -> Result<Vec<u8>, MipError> {
        self.check_len(x)?;
        Ok(self
            .integer_indices()
            .into_iter()
            .map(|j| u8::from(x[j].abs() > tol))
            .collect())
    }

    fn check_len(&self, x: &[f64]) -> Result<(), MipError> {
        if x.len() != self.num_vars() {
            return Err(MipError::Dimension { expected: self.num_vars(), got: x.len() });
        }
        Ok(())
    }

    /// The canonical text form written by [`save_instance`].
    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes");
        s.push('\n');
        s
    }

    pub fn from_canonical_str(text: &str) -> Result<Self, MipError> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| MipError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        let inst = file.into_instance();
        inst.validate()?;
        Ok(inst)
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub max_row_violation: f64,
    pub max_bound_violation: f64,
    pub max_integrality_violation: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionSource {
    Solver,
    WarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
    pub source: SolutionSource,
}

impl Solution {
    /// Builds a solution, recomputing the objective and feasibility flag.
    pub fn evaluate(inst: &MipInstance, values: Vec<f64>, tol: f64, source: SolutionSource) -> Result<Self, MipError> {
        let objective = inst.evaluate_objective(&values)?;
        let feasible = inst.check_feasibility(&values, tol)?.feasible;
        Ok(Solution { values, objective, feasible, source })
    }
}

pub fn load_instance(path: &Path) -> Result<MipInstance, MipError> {
    let text = fs::read_to_string(path).map_err(|e| MipError::io(path, e))?;
    MipInstance::from_canonical_str(&text)
}

pub fn save_instance(inst: &MipInstance, path: &Path) -> Result<(), MipError> {
    crate::util::write_atomic(path, inst.to_canonical_string().as_bytes()).map_err(|e| MipError::io(path, e))
}

// ---------------------------------------------------------------------------
// On-disk layout

/// A bound that may be infinite; written as a number or `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bound(f64);

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bound(v)),
            Raw::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(Bound(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(Bound(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("invalid bound literal {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ObjSense {
    #[default]
    Min,
    Max,
}

#[derive(Serialize, Deserialize)]
struct VarEntry {
    name: String,
    kind: VarKind,
    lb: Bound,
    ub: Bound,
    obj: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    name: String,
    family: String,
    param_seed: u64,
    #[serde(default, skip_serializing_if = "is_min")]
    sense: ObjSense,
    vars: Vec<VarEntry>,
    rows: Vec<Row>,
}

fn is_min(s: &ObjSense) -> bool {
    *s == ObjSense::Min
}

impl From<&MipInstance> for InstanceFile {
    fn from(m: &MipInstance) -> Self {
        InstanceFile {
            name: m.name.clone(),
            family: m.family.clone(),
            param_seed: m.param_seed,
            sense: ObjSense::Min,
            vars: (0..m.num_vars())
                .map(|j| VarEntry {
                    name: m.var_names[j].clone(),
                    kind: m.kind[j],
                    lb: Bound(m.lower[j]),
                    ub: Bound(m.upper[j]),
                    obj: m.objective[j],
                })
                .collect(),
            rows: m.rows.clone(),
        }
    }
}

impl InstanceFile {
    fn into_instance(self) -> MipInstance {
        let flip = if self.sense == ObjSense::Max { -1.0 } else { 1.0 };
        let mut m = MipInstance::new(self.name, self.family, self.param_seed);
        for v in self.vars {
            // 0.0 * -1.0 would turn into -0.0 and break round-trips
            let obj = if flip < 0.0 { -v.obj + 0.0 } else { v.obj };
            m.add_var(v.name, v.kind, v.lb.0, v.ub.0, obj);
        }
        m.rows = self.rows;
        m
    }
}

impl fmt::Display for MipInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}]: {} vars ({} integer), {} rows, {} nonzeros",
            self.name,
            self.family,
            self.num_vars(),
            self.integer_indices().len(),
            self.num_rows(),
            self.num_nonzeros()
        )
    }
}
