//! Problem representation: `min xᵀQx + qᵀx  s.t.  Ax = b,  x_i ∈ S_i`.
//!
//! Each `S_i` is one of four bounded domain kinds. The convex hull of
//! `{(x_i, x_i²) : x_i ∈ S_i}` is described by a lower function `l_i` and the
//! secant `u_i`, collected in [`HullForm`].

use std::fmt;
use std::fs;
use std::path::Path;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, pivoted_qr};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("variable {index}: value {value} outside [{lower}, {upper}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Interval,
    Binary,
    TwoPoint,
    IntegerRange,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainKind::Interval => "interval",
            DomainKind::Binary => "binary",
            DomainKind::TwoPoint => "two_point",
            DomainKind::IntegerRange => "integer_range",
        };
        f.write_str(s)
    }
}

/// A bounded variable domain `S_i`. For `two_point` the two points are
/// exactly `{lower, upper}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableDomain {
    pub kind: DomainKind,
    pub lower: f64,
    pub upper: f64,
}

impl VariableDomain {
    pub fn interval(lower: f64, upper: f64) -> Self {
        Self {
            kind: DomainKind::Interval,
            lower,
            upper,
        }
    }

    pub fn binary() -> Self {
        Self {
            kind: DomainKind::Binary,
            lower: 0.0,
            upper: 1.0,
        }
    }

    pub fn two_point(a: f64, b: f64) -> Self {
        Self {
            kind: DomainKind::TwoPoint,
            lower: a.min(b),
            upper: a.max(b),
        }
    }

    pub fn integer_range(lower: f64, upper: f64) -> Self {
        Self {
            kind: DomainKind::IntegerRange,
            lower,
            upper,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !self.lower.is_finite() || !self.upper.is_finite() {
            return Err("bounds must be finite".into());
        }
        if self.lower > self.upper {
            return Err(format!("L = {} exceeds U = {}", self.lower, self.upper));
        }
        match self.kind {
            DomainKind::Interval => Ok(()),
            DomainKind::Binary if self.lower == 0.0 && self.upper == 1.0 => Ok(()),
            DomainKind::Binary => Err("binary domain must have L = 0 and U = 1".into()),
            DomainKind::TwoPoint if self.lower < self.upper => Ok(()),
            DomainKind::TwoPoint => Err("two_point domain needs two distinct points".into()),
            DomainKind::IntegerRange
                if self.lower.fract() == 0.0 && self.upper.fract() == 0.0 =>
            {
                Ok(())
            }
            DomainKind::IntegerRange => Err("integer_range bounds must be integral".into()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.kind, DomainKind::Interval)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// `l_i = u_i` (binary and two-point sets): the hull is a segment.
    pub fn has_affine_lower(&self) -> bool {
        matches!(self.kind, DomainKind::Binary | DomainKind::TwoPoint)
    }

    /// Membership in `S_i` within `tol`.
    pub fn contains(&self, x: f64, tol: f64) -> bool {
        if x < self.lower - tol || x > self.upper + tol {
            return false;
        }
        match self.kind {
            DomainKind::Interval => true,
            DomainKind::Binary | DomainKind::TwoPoint => {
                (x - self.lower).abs() <= tol || (x - self.upper).abs() <= tol
            }
            DomainKind::IntegerRange => (x - x.round()).abs() <= tol,
        }
    }

    /// Nearest point of `S_i`.
    pub fn project(&self, x: f64) -> f64 {
        let clamped = x.clamp(self.lower, self.upper);
        match self.kind {
            DomainKind::Interval => clamped,
            DomainKind::Binary | DomainKind::TwoPoint => {
                if clamped - self.lower <= self.upper - clamped {
                    self.lower
                } else {
                    self.upper
                }
            }
            DomainKind::IntegerRange => clamped.round().clamp(self.lower, self.upper),
        }
    }

    pub fn hull(&self) -> HullDescriptor {
        let slope = self.lower + self.upper;
        let intercept = -self.lower * self.upper;
        HullDescriptor {
            upper_slope: slope,
            upper_intercept: intercept,
            lower: if self.has_affine_lower() {
                LowerHull::Affine { slope, intercept }
            } else {
                LowerHull::Square
            },
        }
    }
}

/// Lower hull function `l_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowerHull {
    Square,
    Affine { slope: f64, intercept: f64 },
}

/// `u_i(x) = slope·x + intercept` and the matching `l_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullDescriptor {
    pub upper_slope: f64,
    pub upper_intercept: f64,
    pub lower: LowerHull,
}

impl HullDescriptor {
    pub fn upper(&self, x: f64) -> f64 {
        self.upper_slope * x + self.upper_intercept
    }

    pub fn lower(&self, x: f64) -> f64 {
        match self.lower {
            LowerHull::Square => x * x,
            LowerHull::Affine { slope, intercept } => slope * x + intercept,
        }
    }
}

pub type HullForm = Vec<HullDescriptor>;

/// A validated problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqpInstance {
    /// Symmetric `n × n` quadratic matrix.
    pub quad: DMatrix<f64>,
    /// Linear term.
    pub linear: DVector<f64>,
    /// Full-row-rank `m × n` equality matrix.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub domains: Vec<VariableDomain>,
    pub hull: HullForm,
    /// Notes produced while validating (symmetrization, pruned rows).
    pub diagnostics: Vec<String>,
}

const ASYMMETRY_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

impl MiqpInstance {
    /// Validate and normalize raw problem data.
    ///
    /// `quad` is symmetrized as `(Q + Qᵀ)/2`. Dependent equality rows are
    /// dropped after checking that `b` is consistent with them.
    pub fn new(
        quad: DMatrix<f64>,
        linear: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        domains: Vec<VariableDomain>,
    ) -> Result<Self> {
        let n = domains.len();
        let mut diagnostics = Vec::new();
        if quad.shape() != (n, n) {
            return Err(ModelError::Validation(format!(
                "Q has shape {:?}, expected ({n}, {n})",
                quad.shape()
            )));
        }
        if linear.len() != n {
            return Err(ModelError::Validation(format!(
                "q has length {}, expected {n}",
                linear.len()
            )));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(ModelError::Validation(format!(
                "A has shape {:?} but n = {n} and b has length {}",
                a.shape(),
                b.len()
            )));
        }
        let finite = quad.iter().chain(linear.iter()).chain(a.iter()).chain(b.iter());
        if !finite.into_iter().all(|v| v.is_finite()) {
            return Err(ModelError::Validation("non-finite problem data".into()));
        }
        for (i, dom) in domains.iter().enumerate() {
            dom.validate()
                .map_err(|msg| ModelError::Validation(format!("domain {i}: {msg}")))?;
        }

        let asym = linalg::max_abs(&(&quad - quad.transpose()));
        if asym > ASYMMETRY_TOL * linalg::max_abs(&quad).max(1.0) {
            let msg = format!("Q is asymmetric (max |Q_ij - Q_ji| = {asym:e}); symmetrized");
            warn!("{msg}");
            diagnostics.push(msg);
        }
        let quad = (&quad + quad.transpose()) * 0.5;

        let (a, b) = prune_dependent_rows(a, b, &mut diagnostics)?;
        let hull = domains.iter().map(VariableDomain::hull).collect();
        Ok(Self {
            quad,
            linear,
            a,
            b,
            domains,
            hull,
            diagnostics,
        })
    }

    pub fn n(&self) -> usize {
        self.domains.len()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn lower_bounds(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.domains.iter().map(|d| d.lower))
    }

    pub fn upper_bounds(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.domains.iter().map(|d| d.upper))
    }

    pub fn is_all_discrete(&self) -> bool {
        self.domains.iter().all(VariableDomain::is_discrete)
    }

    /// `Q_max = max |Q_ij|` over the upper triangle.
    pub fn q_max(&self) -> f64 {
        let n = self.n();
        let mut best = 0.0_f64;
        for j in 0..n {
            for i in 0..=j {
                best = best.max(self.quad[(i, j)].abs());
            }
        }
        best
    }

    /// `δ_max = max (U_i − L_i)`.
    pub fn delta_max(&self) -> f64 {
        self.domains.iter().map(|d| d.width()).fold(0.0, f64::max)
    }

    fn check_range(&self, i: usize, x: f64) -> Result<&VariableDomain> {
        let dom = self.domains.get(i).ok_or_else(|| ModelError::Field {
            field: "index".into(),
            message: format!("variable {i} out of range"),
        })?;
        let slack = 1e-12 * dom.width().max(1.0);
        if x < dom.lower - slack || x > dom.upper + slack || !x.is_finite() {
            return Err(ModelError::OutOfDomain {
                index: i,
                value: x,
                lower: dom.lower,
                upper: dom.upper,
            });
        }
        Ok(dom)
    }

    /// `u_i(x) = (L_i + U_i) x − L_i U_i`.
    pub fn hull_upper(&self, i: usize, x: f64) -> Result<f64> {
        self.check_range(i, x)?;
        Ok(self.hull[i].upper(x))
    }

    /// `l_i(x)`: `x²` for interval/integer domains, the secant otherwise.
    pub fn hull_lower(&self, i: usize, x: f64) -> Result<f64> {
        self.check_range(i, x)?;
        Ok(self.hull[i].lower(x))
    }

    /// `xᵀQx + qᵀx`.
    pub fn evaluate_objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.quad * x)) + self.linear.dot(x)
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.n() {
            return false;
        }
        if self.m() > 0 && (&self.a * x - &self.b).amax() > tol {
            return false;
        }
        self.domains
            .iter()
            .zip(x.iter())
            .all(|(d, &xi)| d.contains(xi, tol))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_instance()
    }

    /// Canonical JSON: upper-triangle `Q` triplets and row-major `A` triplets,
    /// zeros omitted.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from_instance(self))
            .expect("instance serialization cannot fail")
    }
}

fn prune_dependent_rows(
    a: DMatrix<f64>,
    b: DVector<f64>,
    diagnostics: &mut Vec<String>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = a.nrows();
    if m == 0 {
        return Ok((a, b));
    }
    let qr = pivoted_qr(&a.transpose(), RANK_TOL);
    if qr.rank == m {
        return Ok((a, b));
    }
    let mut keep: Vec<usize> = qr.perm[..qr.rank].to_vec();
    keep.sort_unstable();
    let a_kept = a.select_rows(keep.iter());
    let b_kept = b.select_rows(keep.iter());
    let x = linalg::least_norm_solution(&a_kept, &b_kept)
        .map_err(|e| ModelError::Validation(format!("equality system: {e}")))?;
    let scale = 1.0 + b.amax();
    for &row in &qr.perm[qr.rank..] {
        let resid = (a.row(row) * &x)[0] - b[row];
        if resid.abs() > 1e-8 * scale {
            return Err(ModelError::Infeasible(format!(
                "equality row {row} is a combination of other rows but b is inconsistent (residual {resid:e})"
            )));
        }
        let msg = format!("equality row {row} is linearly dependent (rank(A) < m); dropped");
        debug!("{msg}");
        diagnostics.push(msg);
    }
    Ok((a_kept, b_kept))
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<MiqpInstance> {
    let text = fs::read_to_string(path)?;
    let inst = MiqpInstance::from_json_str(&text)?;
    for d in &inst.diagnostics {
        warn!("{d}");
    }
    Ok(inst)
}

pub fn save_instance(instance: &MiqpInstance, path: impl AsRef<Path>) -> Result<()> {
    let mut text = instance.to_json_string();
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DomainEntry {
    kind: DomainKind,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    lower: Option<f64>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    n: usize,
    m: usize,
    #[serde(rename = "Q")]
    quad: Vec<(usize, usize, f64)>,
    #[serde(rename = "q")]
    linear: Vec<f64>,
    #[serde(rename = "A", default)]
    a: Vec<(usize, usize, f64)>,
    #[serde(default)]
    b: Vec<f64>,
    domains: Vec<DomainEntry>,
}

fn field_err(field: &str, message: impl Into<String>) -> ModelError {
    ModelError::Field {
        field: field.into(),
        message: message.into(),
    }
}

impl DomainEntry {
    fn to_domain(&self, i: usize) -> Result<VariableDomain> {
        let field = format!("domains[{i}]");
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| field_err(&field, format!("missing `{name}`")))
        };
        match self.kind {
            DomainKind::Binary => {
                let dom = VariableDomain::binary();
                if self.lower.is_some_and(|l| l != 0.0) || self.upper.is_some_and(|u| u != 1.0) {
                    return Err(field_err(&field, "binary domain must have L = 0 and U = 1"));
                }
                Ok(dom)
            }
            DomainKind::Interval => Ok(VariableDomain::interval(
                need(self.lower, "L")?,
                need(self.upper, "U")?,
            )),
            DomainKind::IntegerRange => Ok(VariableDomain::integer_range(
                need(self.lower, "L")?,
                need(self.upper, "U")?,
            )),
            DomainKind::TwoPoint => {
                let (p, q) = match (self.points, self.lower, self.upper) {
                    (Some([p, q]), l, u) => {
                        let (lo, hi) = (p.min(q), p.max(q));
                        if l.is_some_and(|l| l != lo) || u.is_some_and(|u| u != hi) {
                            return Err(field_err(&field, "points must equal {L, U}"));
                        }
                        (p, q)
                    }
                    (None, Some(l), Some(u)) => (l, u),
                    _ => return Err(field_err(&field, "two_point needs `points` or `L`/`U`")),
                };
                if p == q {
                    return Err(field_err(&field, "two_point points must be distinct"));
                }
                Ok(VariableDomain::two_point(p, q))
            }
        }
    }
}

impl InstanceFile {
    fn into_instance(self) -> Result<MiqpInstance> {
        let n = self.n;
        if self.linear.len() != n {
            return Err(field_err("q", format!("length {} but n = {n}", self.linear.len())));
        }
        if self.domains.len() != n {
            return Err(field_err(
                "domains",
                format!("length {} but n = {n}", self.domains.len()),
            ));
        }
        if self.b.len() != self.m {
            return Err(field_err("b", format!("length {} but m = {}", self.b.len(), self.m)));
        }

        let mut seen = std::collections::HashSet::new();
        let mut raw = DMatrix::<f64>::zeros(n, n);
        let upper_only = self.quad.iter().all(|&(i, j, _)| i <= j);
        for (k, &(i, j, v)) in self.quad.iter().enumerate() {
            if i >= n || j >= n {
                return Err(field_err("Q", format!("entry {k}: index ({i}, {j}) out of range")));
            }
            if !seen.insert((i, j)) {
                return Err(field_err("Q", format!("entry {k}: duplicate index ({i}, {j})")));
            }
            raw[(i, j)] = v;
        }
        let quad = if upper_only {
            let mut full = raw.clone();
            for j in 0..n {
                for i in 0..j {
                    full[(j, i)] = raw[(i, j)];
                }
            }
            full
        } else {
            raw
        };

        let mut a = DMatrix::<f64>::zeros(self.m, n);
        let mut seen = std::collections::HashSet::new();
        for (k, &(i, j, v)) in self.a.iter().enumerate() {
            if i >= self.m || j >= n {
                return Err(field_err("A", format!("entry {k}: index ({i}, {j}) out of range")));
            }
            if !seen.insert((i, j)) {
                return Err(field_err("A", format!("entry {k}: duplicate index ({i}, {j})")));
            }
            a[(i, j)] = v;
        }

        let domains = self
            .domains
            .iter()
            .enumerate()
            .map(|(i, d)| d.to_domain(i))
            .collect::<Result<Vec<_>>>()?;

        MiqpInstance::new(
            quad,
            DVector::from_vec(self.linear),
            a,
            DVector::from_vec(self.b),
            domains,
        )
    }

    fn from_instance(inst: &MiqpInstance) -> Self {
        let n = inst.n();
        let mut quad = Vec::new();
        for i in 0..n {
            for j in i..n {
                let v = inst.quad[(i, j)];
                if v != 0.0 {
                    quad.push((i, j, v));
                }
            }
        }
        let mut a = Vec::new();
        for i in 0..inst.m() {
            for j in 0..n {
                let v = inst.a[(i, j)];
                if v != 0.0 {
                    a.push((i, j, v));
                }
            }
        }
        let domains = inst
            .domains
            .iter()
            .map(|d| DomainEntry {
                kind: d.kind,
                lower: Some(d.lower),
                upper: Some(d.upper),
                points: None,
            })
            .collect();
        Self {
            n,
            m: inst.m(),
            quad,
            linear: inst.linear.iter().copied().collect(),
            a,
            b: inst.b.iter().copied().collect(),
            domains,
        }
    }
}
