//! A small mixed-integer linear programming layer: model construction,
//! a solver-backend interface, independent feasibility re-checking and an
//! LP-format text writer.

mod branch_bound;
#[cfg(feature = "highs")]
mod highs_backend;
mod lp_format;
pub(crate) mod simplex;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lp_format::export_lp_text;

/// Absolute, row-scaled tolerance used when re-checking returned solutions.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;
pub const INTEGRALITY_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_REL_GAP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate constraint name `{0}`")]
    DuplicateConstraint(String),
    #[error("constraint `{row}` references undeclared variable #{var}")]
    UndeclaredVariable { row: String, var: usize },
    #[error("variable `{0}` has inconsistent bounds")]
    InvalidBounds(String),
    #[error("solver backend `{0}` is not available in this build")]
    BackendUnavailable(String),
    #[error("unknown solver backend `{0}`")]
    UnknownBackend(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("returned solution violates `{name}` by {violation:e}")]
    FeasibilityCheck { name: String, violation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, a)| a * values[v.0]).sum()
    }

    /// Amount by which `values` violate this row, divided by the largest
    /// coefficient magnitude (at least 1).
    pub fn scaled_violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        let raw = match self.sense {
            Sense::Le => lhs - self.rhs,
            Sense::Ge => self.rhs - lhs,
            Sense::Eq => (lhs - self.rhs).abs(),
        };
        let scale = self
            .terms
            .iter()
            .map(|(_, a)| a.abs())
            .fold(1.0_f64, f64::max);
        raw.max(0.0) / scale
    }
}

/// Minimization MILP. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    vars: Vec<Variable>,
    rows: Vec<Constraint>,
}

impl MilpModel {
    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(values)
            .map(|(v, x)| v.objective * x)
            .sum()
    }

    /// Largest scaled violation over rows, bounds and integrality, with the
    /// name of the offending item.
    pub fn max_violation(&self, values: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for row in &self.rows {
            let v = row.scaled_violation(values);
            if v > worst.0 {
                worst = (v, row.name.clone());
            }
        }
        for (var, &x) in self.vars.iter().zip(values) {
            let scale = x.abs().max(1.0);
            let v = ((var.lower - x).max(x - var.upper)).max(0.0) / scale;
            if v > worst.0 {
                worst = (v, format!("bounds of {}", var.name));
            }
            if var.kind == VarKind::Binary {
                let v = (x - x.round()).abs();
                if v > INTEGRALITY_TOLERANCE && v > worst.0 {
                    worst = (v, format!("integrality of {}", var.name));
                }
            }
        }
        worst
    }
}

/// Accumulates variables and rows; [`ModelBuilder::build`] checks names
/// and references.
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    vars: Vec<Variable>,
    rows: Vec<Constraint>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
        objective: f64,
    ) -> VarId {
        let id = VarId(self.vars.len());
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            VarKind::Continuous => (lower, upper),
        };
        self.vars.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
            objective,
        });
        id
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, VarKind::Continuous, lower, upper, 0.0)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0, 0.0)
    }

    pub fn set_objective(&mut self, var: VarId, coef: f64) {
        self.vars[var.0].objective = coef;
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) {
        // Repeated variables are merged in order of first appearance and
        // cancelled terms dropped; backends reject duplicate entries.
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, a) in terms {
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some(slot) => slot.1 += a,
                None => merged.push((v, a)),
            }
        }
        merged.retain(|(_, a)| *a != 0.0);
        self.rows.push(Constraint {
            name: name.into(),
            terms: merged,
            sense,
            rhs,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn build(self) -> Result<MilpModel, MilpError> {
        let mut names = HashSet::with_capacity(self.vars.len());
        for v in &self.vars {
            if !names.insert(v.name.as_str()) {
                return Err(MilpError::DuplicateVariable(v.name.clone()));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::InvalidBounds(v.name.clone()));
            }
        }
        let mut row_names = HashSet::with_capacity(self.rows.len());
        for r in &self.rows {
            if !row_names.insert(r.name.as_str()) {
                return Err(MilpError::DuplicateConstraint(r.name.clone()));
            }
            if let Some((v, _)) = r.terms.iter().find(|(v, _)| v.0 >= self.vars.len()) {
                return Err(MilpError::UndeclaredVariable {
                    row: r.name.clone(),
                    var: v.0,
                });
            }
        }
        Ok(MilpModel {
            vars: self.vars,
            rows: self.rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Search stopped with an incumbent whose gap exceeds the target.
    GapLimit,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    /// Achieved relative gap between incumbent and best bound.
    pub rel_gap: f64,
    pub wall_time_s: f64,
    pub backend: String,
}

impl MilpSolution {
    pub fn has_solution(&self) -> bool {
        !self.objective.is_nan()
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Bundled branch-and-bound over a dense simplex.
    BranchAndBound,
    Highs,
}

impl BackendKind {
    pub fn is_available(self) -> bool {
        match self {
            BackendKind::BranchAndBound => true,
            BackendKind::Highs => cfg!(feature = "highs"),
        }
    }
}

impl Default for BackendKind {
    fn default() -> Self {
        if cfg!(feature = "highs") {
            BackendKind::Highs
        } else {
            BackendKind::BranchAndBound
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::BranchAndBound => "bnb",
            BackendKind::Highs => "highs",
        })
    }
}

impl FromStr for BackendKind {
    type Err = MilpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bnb" | "bundled" | "branch_and_bound" | "branch-and-bound" => {
                Ok(BackendKind::BranchAndBound)
            }
            "highs" => Ok(BackendKind::Highs),
            other => Err(MilpError::UnknownBackend(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub backend: BackendKind,
    pub rel_gap: f64,
    pub time_limit_s: Option<f64>,
    pub threads: Option<u32>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            backend: BackendKind::default(),
            rel_gap: DEFAULT_REL_GAP,
            time_limit_s: None,
            threads: None,
        }
    }
}

impl SolveOptions {
    pub fn with_backend(backend: BackendKind) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }
}

/// What a backend hands back before the independent re-check.
#[derive(Debug, Clone)]
pub(crate) struct RawSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub rel_gap: f64,
}

/// Narrow backend interface: solve a minimization MILP to a relative gap.
pub(crate) trait Backend {
    fn name(&self) -> &'static str;
    fn solve(
        &self,
        model: &MilpModel,
        opts: &SolveOptions,
        start: Option<&[f64]>,
    ) -> Result<RawSolution, MilpError>;
}

fn backend_for(kind: BackendKind) -> Result<Box<dyn Backend>, MilpError> {
    match kind {
        BackendKind::BranchAndBound => Ok(Box::new(branch_bound::BranchAndBound)),
        #[cfg(feature = "highs")]
        BackendKind::Highs => Ok(Box::new(highs_backend::HighsBackend)),
        #[cfg(not(feature = "highs"))]
        BackendKind::Highs => Err(MilpError::BackendUnavailable("highs".into())),
    }
}

/// Solves `model` and re-checks any returned assignment against every row,
/// bound and integrality requirement.
pub fn solve(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, MilpError> {
    solve_with_start(model, opts, None)
}

/// Like [`solve`], seeding the search with `start` when it is a feasible
/// assignment. An infeasible start is ignored.
pub fn solve_with_start(
    model: &MilpModel,
    opts: &SolveOptions,
    start: Option<&[f64]>,
) -> Result<MilpSolution, MilpError> {
    let backend = backend_for(opts.backend)?;
    let start = start.filter(|x| {
        x.len() == model.variables().len() && model.max_violation(x).0 <= FEASIBILITY_TOLERANCE
    });
    let clock = Instant::now();
    let raw = backend.solve(model, opts, start)?;
    let wall_time_s = clock.elapsed().as_secs_f64();

    let objective = if raw.values.len() != model.variables().len() {
        f64::NAN
    } else {
        let (violation, name) = model.max_violation(&raw.values);
        if violation > FEASIBILITY_TOLERANCE {
            return Err(MilpError::FeasibilityCheck { name, violation });
        }
        model.objective_value(&raw.values)
    };
    Ok(MilpSolution {
        status: raw.status,
        objective,
        values: raw.values,
        rel_gap: raw.rel_gap,
        wall_time_s,
        backend: backend.name().to_string(),
    })
}
