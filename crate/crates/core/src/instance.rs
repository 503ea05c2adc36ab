//! Problem data: generator fleet, base demand profile and the symbolic
//! scenario specification.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const BUNDLED_KAZARLIS10: &str = include_str!("../../../data/kazarlis10.json");

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("failed to read instance file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed instance document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
}

/// One thermal unit. Field names on the wire follow the instance schema
/// (`V_prime`, `B_prime`, `M`, `L`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    #[serde(default)]
    pub id: usize,
    /// Fixed cost of running the unit for one hour ($/h).
    #[serde(rename = "a")]
    pub fixed_cost: f64,
    /// Linear production cost coefficient ($/MWh).
    #[serde(rename = "b")]
    pub linear_cost: f64,
    /// Quadratic production cost coefficient ($/MW²h).
    #[serde(rename = "c")]
    pub quadratic_cost: f64,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(rename = "V_prime")]
    pub startup_rate: f64,
    #[serde(rename = "V")]
    pub ramp_up: f64,
    #[serde(rename = "B_prime")]
    pub shutdown_rate: f64,
    #[serde(rename = "B")]
    pub ramp_down: f64,
    #[serde(rename = "M")]
    pub min_up: u32,
    #[serde(rename = "L")]
    pub min_down: u32,
    #[serde(rename = "SU")]
    pub startup_cost: f64,
    #[serde(rename = "SD")]
    pub shutdown_cost: f64,
}

impl Generator {
    /// Quadratic production cost g(v) = b·v + c·v².
    pub fn production_cost(&self, output: f64) -> f64 {
        self.linear_cost * output + self.quadratic_cost * output * output
    }
}

/// Symbolic description of the filtration: where the tree branches, with
/// which probabilities, and how branch multipliers scale the base demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub branch_periods: Vec<usize>,
    pub epsilon: f64,
    pub branch_probs: Vec<f64>,
    /// Per-child demand offsets in units of ε: child `j` sees the multiplier
    /// `1 + offsets[j]·ε`. Defaults to evenly spaced offsets on [-1, 1]
    /// (so `(1-ε, 1+ε)` for a binary branch).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
}

impl ScenarioSpec {
    /// A spec without branching: a single deterministic scenario.
    pub fn deterministic() -> Self {
        Self {
            branch_periods: Vec::new(),
            epsilon: 0.0,
            branch_probs: vec![1.0],
            offsets: None,
        }
    }

    pub fn branch_offsets(&self) -> Vec<f64> {
        if let Some(offsets) = &self.offsets {
            return offsets.clone();
        }
        let k = self.branch_probs.len();
        if k <= 1 {
            return vec![0.0; k];
        }
        (0..k)
            .map(|j| -1.0 + 2.0 * j as f64 / (k - 1) as f64)
            .collect()
    }
}

/// Status of a unit just before period 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialUnitState {
    pub on: bool,
    #[serde(default)]
    pub output: f64,
    /// Consecutive hours spent in the current on/off state.
    #[serde(default)]
    pub hours_in_state: u32,
}

impl InitialUnitState {
    /// Periods `1..=n` during which the unit must keep its initial status to
    /// honour a residual minimum up/down obligation.
    pub fn residual_periods(&self, gen: &Generator) -> u32 {
        let window = if self.on { gen.min_up } else { gen.min_down };
        window.saturating_sub(self.hours_in_state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(default)]
    pub name: String,
    pub horizon: usize,
    pub generators: Vec<Generator>,
    pub base_demand: Vec<f64>,
    pub scenario: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<InitialUnitState>>,
}

impl Instance {
    /// The bundled ten-unit instance (`data/kazarlis10.json`).
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_KAZARLIS10).expect("bundled instance is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, InstanceError> {
        let mut inst: Instance = serde_json::from_str(text)?;
        inst.normalize();
        inst.check_schema()?;
        Ok(inst)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding; used as a cache key.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("instance serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// Initial status of unit `i`, falling back to the documented default:
    /// off, zero output, and no residual min-down obligation.
    pub fn initial(&self, i: usize) -> InitialUnitState {
        match &self.initial_state {
            Some(states) => states[i].clone(),
            None => InitialUnitState {
                on: false,
                output: 0.0,
                hours_in_state: self
                    .generators
                    .iter()
                    .map(|g| g.min_down)
                    .max()
                    .unwrap_or(0),
            },
        }
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.q_max).sum()
    }

    fn normalize(&mut self) {
        for (idx, g) in self.generators.iter_mut().enumerate() {
            if g.id == 0 {
                g.id = idx + 1;
            }
        }
    }

    /// Hard structural checks performed at load time. Softer operational
    /// problems are reported by [`validate_instance`].
    fn check_schema(&self) -> Result<(), InstanceError> {
        let err = |msg: String| Err(InstanceError::Schema(msg));
        if self.horizon == 0 {
            return err("horizon must be at least 1".into());
        }
        if self.base_demand.len() != self.horizon {
            return err(format!(
                "base_demand has {} entries, horizon is {}",
                self.base_demand.len(),
                self.horizon
            ));
        }
        if let Some((t, d)) = self
            .base_demand
            .iter()
            .enumerate()
            .find(|(_, d)| !d.is_finite() || **d < 0.0)
        {
            return err(format!("base_demand[{}] = {d} is negative", t + 1));
        }
        let mut ids = std::collections::HashSet::new();
        for g in &self.generators {
            if !ids.insert(g.id) {
                return err(format!("duplicate generator id {}", g.id));
            }
            let fields = [
                ("a", g.fixed_cost),
                ("b", g.linear_cost),
                ("c", g.quadratic_cost),
                ("q_min", g.q_min),
                ("q_max", g.q_max),
                ("V_prime", g.startup_rate),
                ("V", g.ramp_up),
                ("B_prime", g.shutdown_rate),
                ("B", g.ramp_down),
                ("SU", g.startup_cost),
                ("SD", g.shutdown_cost),
            ];
            for (name, value) in fields {
                if !value.is_finite() || value < 0.0 {
                    return err(format!("generator {}: {name} = {value} must be >= 0", g.id));
                }
            }
            if g.q_min > g.q_max {
                return err(format!(
                    "generator {}: q_min = {} exceeds q_max = {}",
                    g.id, g.q_min, g.q_max
                ));
            }
        }
        let spec = &self.scenario;
        if spec.branch_probs.is_empty() {
            return err("scenario.branch_probs is empty".into());
        }
        if spec.branch_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return err("scenario.branch_probs must lie in [0, 1]".into());
        }
        if !spec.epsilon.is_finite() || spec.epsilon < 0.0 {
            return err(format!("scenario.epsilon = {} must be >= 0", spec.epsilon));
        }
        if let Some(offsets) = &spec.offsets {
            if offsets.len() != spec.branch_probs.len() {
                return err("scenario.offsets must match branch_probs in length".into());
            }
        }
        if let Some(states) = &self.initial_state {
            if states.len() != self.generators.len() {
                return err(format!(
                    "initial_state has {} entries for {} generators",
                    states.len(),
                    self.generators.len()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub severity: Severity,
    /// Generator id the entry concerns, if any.
    pub generator: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match self.generator {
            Some(id) => write!(f, "{tag}: generator {id}: {}", self.message),
            None => write!(f, "{tag}: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn has_errors(&self) -> bool {
        self.entries.iter().any(|v| v.severity == Severity::Error)
    }

    fn push(&mut self, severity: Severity, generator: Option<usize>, message: String) {
        self.entries.push(Violation {
            severity,
            generator,
            message,
        });
    }
}

/// Lists every violated invariant. An empty report means the instance is
/// usable by every downstream model builder.
pub fn validate_instance(inst: &Instance) -> ValidationReport {
    use Severity::*;
    let mut report = ValidationReport::default();

    if inst.horizon == 0 {
        report.push(Error, None, "horizon must be at least 1".into());
    }
    if inst.base_demand.len() != inst.horizon {
        report.push(
            Error,
            None,
            format!(
                "base_demand has {} entries, horizon is {}",
                inst.base_demand.len(),
                inst.horizon
            ),
        );
    }
    for (t, d) in inst.base_demand.iter().enumerate() {
        if !d.is_finite() || *d < 0.0 {
            report.push(Error, None, format!("base demand in period {} is {d}", t + 1));
        }
    }
    if inst.generators.is_empty() {
        report.push(Error, None, "no generators".into());
    }

    let mut seen = std::collections::HashSet::new();
    for g in &inst.generators {
        let id = Some(g.id);
        if !seen.insert(g.id) {
            report.push(Error, id, "duplicate generator id".into());
        }
        let costs = [
            ("a", g.fixed_cost),
            ("b", g.linear_cost),
            ("c", g.quadratic_cost),
            ("SU", g.startup_cost),
            ("SD", g.shutdown_cost),
        ];
        for (name, v) in costs {
            if !v.is_finite() || v < 0.0 {
                report.push(Error, id, format!("cost {name} = {v} is negative"));
            }
        }
        if g.q_min < 0.0 || g.q_min > g.q_max {
            report.push(
                Error,
                id,
                format!("production limits [{}, {}] are not ordered", g.q_min, g.q_max),
            );
        }
        if g.startup_rate < g.q_min {
            report.push(
                Error,
                id,
                format!(
                    "start-up rate V' = {} is below q_min = {}; the unit can never start",
                    g.startup_rate, g.q_min
                ),
            );
        }
        if g.shutdown_rate < g.q_min {
            report.push(
                Error,
                id,
                format!(
                    "shut-down rate B' = {} is below q_min = {}; the unit can never stop",
                    g.shutdown_rate, g.q_min
                ),
            );
        }
        if g.ramp_up < 0.0 || g.ramp_down < 0.0 {
            report.push(Error, id, "ramp rates must be nonnegative".into());
        }
    }

    if let Some(states) = &inst.initial_state {
        if states.len() != inst.generators.len() {
            report.push(Error, None, "initial_state length differs from fleet size".into());
        } else {
            for (g, s) in inst.generators.iter().zip(states) {
                let ok = if s.on {
                    s.output >= g.q_min - 1e-9 && s.output <= g.q_max + 1e-9
                } else {
                    s.output.abs() <= 1e-9
                };
                if !ok {
                    report.push(
                        Error,
                        Some(g.id),
                        format!("initial output {} inconsistent with status", s.output),
                    );
                }
            }
        }
    }

    let spec = &inst.scenario;
    let prob_sum: f64 = spec.branch_probs.iter().sum();
    if (prob_sum - 1.0).abs() > 1e-9 {
        report.push(Error, None, format!("branch probabilities sum to {prob_sum}"));
    }
    if spec.branch_periods.windows(2).any(|w| w[0] >= w[1]) {
        report.push(Error, None, "branch periods are not strictly increasing".into());
    }
    if spec
        .branch_periods
        .iter()
        .any(|&p| p < 2 || p > inst.horizon)
    {
        report.push(
            Error,
            None,
            format!("branch periods must lie in 2..={}", inst.horizon),
        );
    }
    let offsets = spec.branch_offsets();
    if offsets.len() != spec.branch_probs.len() {
        report.push(Error, None, "offsets and branch_probs differ in length".into());
    }
    let lowest = offsets.iter().cloned().fold(0.0_f64, f64::min);
    if spec.epsilon < 0.0 || (!spec.branch_periods.is_empty() && 1.0 + lowest * spec.epsilon <= 0.0)
    {
        report.push(
            Error,
            None,
            format!("epsilon = {} yields nonpositive multipliers", spec.epsilon),
        );
    }

    // Capacity shortfall: the largest node demand any scenario can reach.
    let highest = offsets.iter().cloned().fold(0.0_f64, f64::max);
    let first_branch = spec.branch_periods.first().copied().unwrap_or(usize::MAX);
    let peak = inst
        .base_demand
        .iter()
        .enumerate()
        .map(|(t, d)| {
            if t + 1 >= first_branch {
                d * (1.0 + highest * spec.epsilon)
            } else {
                *d
            }
        })
        .fold(0.0_f64, f64::max);
    let capacity = inst.total_capacity();
    if peak > capacity {
        report.push(
            Warning,
            None,
            format!(
                "capacity shortfall: peak scenario demand {peak} MW exceeds total capacity {capacity} MW"
            ),
        );
    }

    report
}
