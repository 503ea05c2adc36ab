//! Unit-commitment MILPs: deterministic, two-stage and multi-stage.
//!
//! All three share one builder. A deterministic model is a multi-stage model
//! on a chain; a two-stage model shares the commitment, start-up and
//! shut-down binaries of every node in a period, while dispatch stays
//! node-indexed.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Generator, Instance};
use crate::milp::{self, MilpError, MilpModel, MilpSolution, ModelBuilder, Sense, VarId, VarKind};
use crate::policy::{Policy, Provenance, UnitDecision};
use crate::risk::{epigraph_coefficients, RiskError, RiskSpec, StencilTerm};
use crate::scenario_tree::{NodeId, ScenarioTree};

pub const DEFAULT_SEGMENTS: usize = 4;

/// Largest distance of an extracted binary from {0, 1}.
pub const BINARY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("piecewise cost needs at least one segment")]
    NoSegments,
    #[error("demand path has {got} periods, instance horizon is {horizon}")]
    HorizonMismatch { got: usize, horizon: usize },
    #[error("solution has no values to extract")]
    NoSolution,
    #[error("binary {name} has non-integral value {value}")]
    NonIntegral { name: String, value: f64 },
    #[error("fixed decision refers to generator {gen} at node {node}, outside the model")]
    BadFixing { gen: usize, node: usize },
}

/// Convex piecewise-linear stand-in for `b·v + c·v²` on `[q_min, q_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCost {
    /// Cost `a` incurred whenever the unit is on.
    pub fixed: f64,
    /// Production cost at `q_min`.
    pub base: f64,
    /// `K + 1` equally spaced points from `q_min` to `q_max`.
    pub breakpoints: Vec<f64>,
    /// Secant slope of each segment, nondecreasing.
    pub slopes: Vec<f64>,
    /// True when `q_min = q_max`, so every segment has zero length.
    pub degenerate: bool,
}

impl PiecewiseCost {
    pub fn q_min(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn q_max(&self) -> f64 {
        *self.breakpoints.last().expect("breakpoints are never empty")
    }

    pub fn segment_len(&self, k: usize) -> f64 {
        self.breakpoints[k + 1] - self.breakpoints[k]
    }

    pub fn num_segments(&self) -> usize {
        self.slopes.len()
    }

    /// Production cost at `output`, with `output` taken in `[q_min, q_max]`.
    pub fn evaluate(&self, output: f64) -> f64 {
        let mut cost = self.base;
        for (k, slope) in self.slopes.iter().enumerate() {
            let fill = (output - self.breakpoints[k]).clamp(0.0, self.segment_len(k));
            cost += slope * fill;
        }
        cost
    }

    /// Period cost of a unit that is on and produces `output`.
    pub fn on_cost(&self, output: f64) -> f64 {
        self.fixed + self.evaluate(output)
    }
}

pub fn piecewise_segments(gen: &Generator, segments: usize) -> Result<PiecewiseCost, ModelError> {
    if segments == 0 {
        return Err(ModelError::NoSegments);
    }
    let width = (gen.q_max - gen.q_min) / segments as f64;
    let breakpoints: Vec<f64> = (0..=segments)
        .map(|k| {
            if k == segments {
                gen.q_max
            } else {
                gen.q_min + width * k as f64
            }
        })
        .collect();
    let slopes = breakpoints
        .windows(2)
        .map(|w| gen.linear_cost + gen.quadratic_cost * (w[0] + w[1]))
        .collect();
    Ok(PiecewiseCost {
        fixed: gen.fixed_cost,
        base: gen.production_cost(gen.q_min),
        breakpoints,
        slopes,
        degenerate: gen.q_max == gen.q_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Deterministic,
    TwoStage,
    MultiStage,
}

impl ModelMode {
    /// Whether u/y/z are shared by all nodes of a period.
    pub fn period_binaries(self) -> bool {
        !matches!(self, ModelMode::MultiStage)
    }

    fn tag(self) -> &'static str {
        match self {
            ModelMode::Deterministic => "deterministic",
            ModelMode::TwoStage => "two_stage",
            ModelMode::MultiStage => "multi_stage",
        }
    }
}

/// A decision imposed on the model through equality rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedUnit {
    pub gen: usize,
    pub node: NodeId,
    pub decision: UnitDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub segments: usize,
    pub fixed: Vec<FixedUnit>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            segments: DEFAULT_SEGMENTS,
            fixed: Vec::new(),
        }
    }
}

/// One entry of the sidecar symbol table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Symbol {
    pub name: String,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    pub period: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ModelArtifacts {
    pub model: MilpModel,
    pub mode: ModelMode,
    pub tree: ScenarioTree,
    /// `u[gen][node]`; in period-shared modes all nodes of a period hold the same id.
    pub u: Vec<Vec<VarId>>,
    pub v: Vec<Vec<VarId>>,
    pub y: Vec<Vec<VarId>>,
    pub z: Vec<Vec<VarId>>,
    /// `seg[gen][node]` lists the fill variable of each non-empty segment.
    pub seg: Vec<Vec<Vec<VarId>>>,
    pub theta: Vec<VarId>,
    pub mean: Vec<Option<VarId>>,
    pub dev: Vec<Option<VarId>>,
    pub costs: Vec<PiecewiseCost>,
    pub spec: RiskSpec,
}

impl ModelArtifacts {
    pub fn num_binaries(&self) -> usize {
        self.model.num_binaries()
    }

    pub fn objective_var(&self) -> VarId {
        self.theta[0]
    }

    /// Name-to-index map for every variable, for use beside an LP export.
    pub fn symbol_table(&self) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(self.model.variables().len());
        let name = |id: VarId| self.model.variable(id).name.clone();
        let mut seen = HashSet::new();
        for (i, _) in self.costs.iter().enumerate() {
            for node in self.tree.nodes() {
                let n = node.id.0;
                let shared = self.mode.period_binaries();
                for (kind, id) in [("u", self.u[i][n]), ("y", self.y[i][n]), ("z", self.z[i][n])] {
                    if seen.insert(id) {
                        out.push(Symbol {
                            name: name(id),
                            kind,
                            gen: Some(i + 1),
                            node: (!shared).then_some(n),
                            period: node.period,
                            segment: None,
                        });
                    }
                }
                out.push(Symbol {
                    name: name(self.v[i][n]),
                    kind: "v",
                    gen: Some(i + 1),
                    node: Some(n),
                    period: node.period,
                    segment: None,
                });
                for (k, id) in self.seg[i][n].iter().enumerate() {
                    out.push(Symbol {
                        name: name(*id),
                        kind: "s",
                        gen: Some(i + 1),
                        node: Some(n),
                        period: node.period,
                        segment: Some(k + 1),
                    });
                }
            }
        }
        for node in self.tree.nodes() {
            let n = node.id.0;
            let aux = [
                ("theta", Some(self.theta[n])),
                ("m", self.mean[n]),
                ("dev", self.dev[n]),
            ];
            for (kind, id) in aux {
                if let Some(id) = id {
                    out.push(Symbol {
                        name: name(id),
                        kind,
                        gen: None,
                        node: Some(n),
                        period: node.period,
                        segment: None,
                    });
                }
            }
        }
        out
    }

    /// LP text plus a JSON sidecar describing every variable name.
    pub fn export(&self) -> (String, String) {
        let sidecar = serde_json::json!({
            "mode": self.mode.tag(),
            "nodes": self.tree.len(),
            "horizon": self.tree.horizon(),
            "symbols": self.symbol_table(),
        });
        (
            milp::export_lp_text(&self.model),
            serde_json::to_string_pretty(&sidecar).expect("symbol table serializes"),
        )
    }
}

pub fn build_deterministic(inst: &Instance, demand_path: &[f64]) -> Result<ModelArtifacts, ModelError> {
    if demand_path.len() != inst.horizon {
        return Err(ModelError::HorizonMismatch {
            got: demand_path.len(),
            horizon: inst.horizon,
        });
    }
    let tree = ScenarioTree::chain(demand_path);
    build_model(
        inst,
        &tree,
        &RiskSpec::expectation(),
        ModelMode::Deterministic,
        &BuildOptions::default(),
    )
}

pub fn build_ts(inst: &Instance, tree: &ScenarioTree, spec: &RiskSpec) -> Result<ModelArtifacts, ModelError> {
    build_model(inst, tree, spec, ModelMode::TwoStage, &BuildOptions::default())
}

pub fn build_ms(inst: &Instance, tree: &ScenarioTree, spec: &RiskSpec) -> Result<ModelArtifacts, ModelError> {
    build_model(inst, tree, spec, ModelMode::MultiStage, &BuildOptions::default())
}

/// Affine expression `Σ coef·var + constant`.
#[derive(Debug, Clone, Default)]
struct Affine {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl Affine {
    fn var(id: VarId, coef: f64) -> Self {
        Self {
            terms: vec![(id, coef)],
            constant: 0.0,
        }
    }

    fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|(v, a)| (*v, a * k)).collect(),
            constant: self.constant * k,
        }
    }

    fn add(mut self, other: &Affine) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }
}

/// Adds `lhs sense 0`, moving the constant to the right-hand side.
fn push_row(b: &mut ModelBuilder, name: String, lhs: Affine, sense: Sense) {
    b.add_row(name, lhs.terms, sense, -lhs.constant);
}

pub fn build_model(
    inst: &Instance,
    tree: &ScenarioTree,
    spec: &RiskSpec,
    mode: ModelMode,
    opts: &BuildOptions,
) -> Result<ModelArtifacts, ModelError> {
    if tree.horizon() != inst.horizon {
        return Err(ModelError::HorizonMismatch {
            got: tree.horizon(),
            horizon: inst.horizon,
        });
    }
    let costs = inst
        .generators
        .iter()
        .map(|g| piecewise_segments(g, opts.segments))
        .collect::<Result<Vec<_>, _>>()?;
    let ng = inst.num_generators();
    let nn = tree.len();
    let shared = mode.period_binaries();
    let bin_label = |n: NodeId| {
        if shared {
            format!("t{}", tree.node(n).period)
        } else {
            n.0.to_string()
        }
    };
    let node_label = |n: NodeId| {
        if mode == ModelMode::Deterministic {
            format!("t{}", tree.node(n).period)
        } else {
            n.0.to_string()
        }
    };

    let mut b = ModelBuilder::new();
    let mut u = vec![Vec::with_capacity(nn); ng];
    let mut y = vec![Vec::with_capacity(nn); ng];
    let mut z = vec![Vec::with_capacity(nn); ng];
    let mut v = vec![Vec::with_capacity(nn); ng];
    let mut seg = vec![Vec::with_capacity(nn); ng];
    for (i, gen) in inst.generators.iter().enumerate() {
        let pc = &costs[i];
        let mut per_period: Vec<Option<(VarId, VarId, VarId)>> = vec![None; inst.horizon + 1];
        for node in tree.nodes() {
            let (ui, yi, zi) = match per_period[node.period] {
                Some(ids) if shared => ids,
                _ => {
                    let label = bin_label(node.id);
                    let ids = (
                        b.add_binary(format!("u({},{label})", gen.id)),
                        b.add_binary(format!("y({},{label})", gen.id)),
                        b.add_binary(format!("z({},{label})", gen.id)),
                    );
                    per_period[node.period] = Some(ids);
                    ids
                }
            };
            u[i].push(ui);
            y[i].push(yi);
            z[i].push(zi);
            let label = node_label(node.id);
            v[i].push(b.add_continuous(format!("v({},{label})", gen.id), 0.0, gen.q_max));
            let fills = (0..pc.num_segments())
                .filter(|&k| pc.segment_len(k) > 0.0)
                .map(|k| {
                    b.add_continuous(
                        format!("s({},{label},{})", gen.id, k + 1),
                        0.0,
                        pc.segment_len(k),
                    )
                })
                .collect::<Vec<_>>();
            seg[i].push(fills);
        }
    }

    // Operating rows per generator.
    for (i, gen) in inst.generators.iter().enumerate() {
        let pc = &costs[i];
        let init = inst.initial(i);
        let u0 = if init.on { 1.0 } else { 0.0 };
        let v0 = if init.on { init.output } else { 0.0 };
        let residual = init.residual_periods(gen) as usize;
        let gid = gen.id;
        let prev_u = |n: NodeId| match tree.node(n).parent {
            Some(p) => Affine::var(u[i][p.0], 1.0),
            None => Affine::constant(u0),
        };
        let prev_v = |n: NodeId| match tree.node(n).parent {
            Some(p) => Affine::var(v[i][p.0], 1.0),
            None => Affine::constant(v0),
        };
        let mut done = HashSet::new();
        for node in tree.nodes() {
            let n = node.id;
            let t = node.period;
            let un = Affine::var(u[i][n.0], 1.0);
            if done.insert(u[i][n.0]) {
                let bl = bin_label(n);
                let switch_on = un.clone().add(&prev_u(n).scaled(-1.0));
                push_row(
                    &mut b,
                    format!("sup({gid},{bl})"),
                    switch_on.clone().add(&Affine::var(y[i][n.0], -1.0)),
                    Sense::Le,
                );
                push_row(
                    &mut b,
                    format!("sdo({gid},{bl})"),
                    switch_on.scaled(-1.0).add(&Affine::var(z[i][n.0], -1.0)),
                    Sense::Le,
                );
                for (window, up) in [(gen.min_up, true), (gen.min_down, false)] {
                    let last = (t + window as usize).min(inst.horizon);
                    for tau in t + 1..=last {
                        let mut targets = Vec::new();
                        for d in tree.descendants_at(n, tau) {
                            if !targets.contains(&u[i][d.0]) {
                                targets.push(u[i][d.0]);
                            }
                        }
                        for (k, ud) in targets.into_iter().enumerate() {
                            let step = un.clone().add(&prev_u(n).scaled(-1.0));
                            let (row, tag) = if up {
                                (step.add(&Affine::var(ud, -1.0)), "upt")
                            } else {
                                // u_prev − u_n ≤ 1 − u_τ
                                let mut r = step.scaled(-1.0).add(&Affine::var(ud, 1.0));
                                r.constant -= 1.0;
                                (r, "dot")
                            };
                            let target = if shared {
                                format!("t{tau}")
                            } else {
                                format!("{tau}.{k}")
                            };
                            push_row(&mut b, format!("{tag}({gid},{bl},{target})"), row, Sense::Le);
                        }
                    }
                }
                if t <= residual {
                    let mut row = un.clone();
                    row.constant -= u0;
                    push_row(&mut b, format!("init({gid},{bl})"), row, Sense::Eq);
                }
            }

            let nl = node_label(n);
            let vn = Affine::var(v[i][n.0], 1.0);
            push_row(
                &mut b,
                format!("cap_hi({gid},{nl})"),
                vn.clone().add(&Affine::var(u[i][n.0], -pc.q_max())),
                Sense::Le,
            );
            push_row(
                &mut b,
                format!("cap_lo({gid},{nl})"),
                vn.clone().add(&Affine::var(u[i][n.0], -pc.q_min())),
                Sense::Ge,
            );
            let mut fill = vn.clone().add(&Affine::var(u[i][n.0], -pc.q_min()));
            for s in &seg[i][n.0] {
                fill.terms.push((*s, -1.0));
            }
            push_row(&mut b, format!("fill({gid},{nl})"), fill, Sense::Eq);
            let nonempty = (0..pc.num_segments()).filter(|&k| pc.segment_len(k) > 0.0);
            for (s, k) in seg[i][n.0].iter().zip(nonempty) {
                push_row(
                    &mut b,
                    format!("seg({gid},{nl},{})", k + 1),
                    Affine::var(*s, 1.0).add(&Affine::var(u[i][n.0], -pc.segment_len(k))),
                    Sense::Le,
                );
            }
            let ramp_up = vn
                .clone()
                .add(&prev_v(n).scaled(-1.0))
                .add(&Affine::var(y[i][n.0], -gen.startup_rate))
                .add(&prev_u(n).scaled(-gen.ramp_up));
            push_row(&mut b, format!("rup({gid},{nl})"), ramp_up, Sense::Le);
            let ramp_down = prev_v(n)
                .add(&vn.scaled(-1.0))
                .add(&Affine::var(z[i][n.0], -gen.shutdown_rate))
                .add(&Affine::var(u[i][n.0], -gen.ramp_down));
            push_row(&mut b, format!("rdo({gid},{nl})"), ramp_down, Sense::Le);
        }
    }

    for node in tree.nodes() {
        let terms = (0..ng).map(|i| (v[i][node.id.0], 1.0)).collect();
        b.add_row(format!("dem({})", node_label(node.id)), terms, Sense::Ge, node.demand);
    }

    for f in &opts.fixed {
        if f.gen >= ng || f.node.0 >= nn {
            return Err(ModelError::BadFixing {
                gen: f.gen,
                node: f.node.0,
            });
        }
        let (i, n) = (f.gen, f.node.0);
        let gid = inst.generators[i].id;
        let nl = node_label(f.node);
        let bit = |x: bool| if x { 1.0 } else { 0.0 };
        for (tag, id, value) in [
            ("u", u[i][n], bit(f.decision.u)),
            ("y", y[i][n], bit(f.decision.y)),
            ("z", z[i][n], bit(f.decision.z)),
            ("v", v[i][n], f.decision.v),
        ] {
            b.add_row(format!("fix_{tag}({gid},{nl})"), vec![(id, 1.0)], Sense::Eq, value);
        }
    }

    // Stage costs and the nested risk epigraph.
    let stage_cost = |n: usize| {
        let mut e = Affine::default();
        for i in 0..ng {
            let g = &inst.generators[i];
            let pc = &costs[i];
            e.terms.push((u[i][n], pc.fixed + pc.base));
            let nonempty = (0..pc.num_segments()).filter(|&k| pc.segment_len(k) > 0.0);
            for (s, k) in seg[i][n].iter().zip(nonempty) {
                e.terms.push((*s, pc.slopes[k]));
            }
            e.terms.push((y[i][n], g.startup_cost));
            e.terms.push((z[i][n], g.shutdown_cost));
        }
        e
    };
    let theta: Vec<VarId> = tree
        .nodes()
        .iter()
        .map(|node| {
            b.add_var(
                format!("theta({})", node_label(node.id)),
                VarKind::Continuous,
                f64::NEG_INFINITY,
                f64::INFINITY,
                if node.parent.is_none() { 1.0 } else { 0.0 },
            )
        })
        .collect();
    let mut mean = vec![None; nn];
    let mut dev = vec![None; nn];
    for node in tree.nodes() {
        let n = node.id.0;
        if node.is_leaf() {
            let row = Affine::var(theta[n], 1.0).add(&stage_cost(n).scaled(-1.0));
            push_row(&mut b, format!("val({})", node_label(node.id)), row, Sense::Eq);
            continue;
        }
        let m = b.add_var(
            format!("m({})", node_label(node.id)),
            VarKind::Continuous,
            f64::NEG_INFINITY,
            f64::INFINITY,
            0.0,
        );
        mean[n] = Some(m);
        for c in &node.children {
            dev[c.0] = Some(b.add_continuous(format!("dev({})", node_label(*c)), 0.0, f64::INFINITY));
        }
        let stencil = epigraph_coefficients(tree, node.id, spec)?;
        let last = stencil.rows.len() - 1;
        for (r, row) in stencil.rows.iter().enumerate() {
            let mut e = Affine::constant(-row.rhs);
            for (term, coef) in &row.terms {
                match term {
                    StencilTerm::Theta(k) => e.terms.push((theta[k.0], *coef)),
                    StencilTerm::Mean(k) => e.terms.push((mean[k.0].expect("mean created"), *coef)),
                    StencilTerm::Dev(k) => e.terms.push((dev[k.0].expect("dev created"), *coef)),
                    StencilTerm::Cost(k) => e = e.add(&stage_cost(k.0).scaled(*coef)),
                }
            }
            let tag = match r {
                0 => "mean".to_string(),
                r if r == last => "val".to_string(),
                r => format!("dev{r}"),
            };
            push_row(&mut b, format!("{tag}({})", node_label(node.id)), e, row.sense);
        }
    }

    Ok(ModelArtifacts {
        model: b.build()?,
        mode,
        tree: tree.clone(),
        u,
        v,
        y,
        z,
        seg,
        theta,
        mean,
        dev,
        costs,
        spec: *spec,
    })
}

/// Full assignment of the model's variables that realises `pol`, for use as
/// a MIP start. Segment fills follow merit order and the risk auxiliaries
/// take their tight values.
pub fn start_from_policy(art: &ModelArtifacts, inst: &Instance, pol: &Policy) -> Result<Vec<f64>, ModelError> {
    let mut x = vec![0.0; art.model.variables().len()];
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    let mut stage = vec![0.0; art.tree.len()];
    for node in art.tree.nodes() {
        let n = node.id.0;
        for (i, pc) in art.costs.iter().enumerate() {
            let d = pol.decisions[n][i];
            let g = &inst.generators[i];
            x[art.u[i][n].0] = bit(d.u);
            x[art.y[i][n].0] = bit(d.y);
            x[art.z[i][n].0] = bit(d.z);
            x[art.v[i][n].0] = d.v;
            let mut cost = g.startup_cost * bit(d.y) + g.shutdown_cost * bit(d.z);
            if d.u {
                cost += pc.fixed + pc.base;
                let nonempty = (0..pc.num_segments()).filter(|&k| pc.segment_len(k) > 0.0);
                for (s, k) in art.seg[i][n].iter().zip(nonempty) {
                    let fill = (d.v - pc.breakpoints[k]).clamp(0.0, pc.segment_len(k));
                    x[s.0] = fill;
                    cost += pc.slopes[k] * fill;
                }
            }
            stage[n] += cost;
        }
    }
    let values = crate::risk::node_values(&art.tree, &crate::risk::TreeCostProcess(stage), &art.spec)?;
    for node in art.tree.nodes() {
        let n = node.id.0;
        x[art.theta[n].0] = values[n];
        if let Some(m) = art.mean[n] {
            let mean: f64 = node
                .children
                .iter()
                .map(|c| art.tree.node(*c).conditional_prob * values[c.0])
                .sum();
            x[m.0] = mean;
            for c in &node.children {
                if let Some(dv) = art.dev[c.0] {
                    x[dv.0] = (values[c.0] - mean).max(0.0);
                }
            }
        }
    }
    Ok(x)
}

/// Reads the node-indexed policy out of a solved model.
pub fn extract_policy(art: &ModelArtifacts, sol: &MilpSolution) -> Result<Policy, ModelError> {
    if !sol.has_solution() {
        return Err(ModelError::NoSolution);
    }
    let binary = |id: VarId| {
        let x = sol.value(id);
        let r = x.round();
        if (x - r).abs() > BINARY_TOLERANCE || !(r == 0.0 || r == 1.0) {
            Err(ModelError::NonIntegral {
                name: art.model.variable(id).name.clone(),
                value: x,
            })
        } else {
            Ok(r == 1.0)
        }
    };
    let mut decisions = Vec::with_capacity(art.tree.len());
    for node in art.tree.nodes() {
        let n = node.id.0;
        let mut row = Vec::with_capacity(art.costs.len());
        for i in 0..art.costs.len() {
            let on = binary(art.u[i][n])?;
            let output = if on { sol.value(art.v[i][n]).max(0.0) } else { 0.0 };
            row.push(UnitDecision {
                u: on,
                v: output,
                y: binary(art.y[i][n])?,
                z: binary(art.z[i][n])?,
            });
        }
        decisions.push(row);
    }
    let provenance = match art.mode {
        ModelMode::TwoStage => Provenance::Ts,
        ModelMode::MultiStage | ModelMode::Deterministic => Provenance::Ms,
    };
    Ok(Policy {
        mode: art.mode,
        provenance,
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve, BackendKind, SolveOptions, SolveStatus};
    use crate::scenario_tree::{build_tree, TreeBuilder};

    fn one_gen(a: f64, b: f64, q_min: f64, q_max: f64, demand: Vec<f64>) -> Instance {
        let text = serde_json::json!({
            "name": "single",
            "horizon": demand.len(),
            "generators": [{
                "a": a, "b": b, "c": 0.0, "q_min": q_min, "q_max": q_max,
                "V_prime": q_max, "V": q_max, "B_prime": q_max, "B": q_max,
                "M": 0, "L": 0, "SU": 0.0, "SD": 0.0
            }],
            "base_demand": demand,
            "scenario": { "branch_periods": [], "epsilon": 0.0, "branch_probs": [1.0] }
        });
        Instance::from_json_str(&text.to_string()).unwrap()
    }

    fn bnb() -> SolveOptions {
        SolveOptions::with_backend(BackendKind::BranchAndBound)
    }

    #[test]
    fn secant_slope_of_generator_three() {
        let inst = Instance::bundled();
        let pc = piecewise_segments(&inst.generators[2], 4).unwrap();
        assert!((pc.slopes[0] - 16.8025).abs() < 1e-12);
        assert!(pc.slopes.windows(2).all(|w| w[0] <= w[1]));
        assert!((pc.breakpoints[1] - 71.25).abs() < 1e-12);
    }

    #[test]
    fn linear_cost_is_exact() {
        let inst = one_gen(5.0, 2.0, 10.0, 100.0, vec![50.0]);
        let pc = piecewise_segments(&inst.generators[0], 4).unwrap();
        assert!(pc.slopes.iter().all(|s| *s == 2.0));
        for v in [10.0, 37.3, 100.0] {
            assert!((pc.evaluate(v) - 2.0 * v).abs() < 1e-9);
        }
    }

    #[test]
    fn piecewise_error_within_secant_bound() {
        let inst = Instance::bundled();
        for g in &inst.generators {
            let pc = piecewise_segments(g, 4).unwrap();
            let len = (g.q_max - g.q_min) / 4.0;
            let bound = g.quadratic_cost * len * len / 4.0;
            let mut worst: f64 = 0.0;
            let mut x = g.q_min;
            while x <= g.q_max {
                let diff = pc.evaluate(x) - g.production_cost(x);
                assert!(diff >= -1e-9, "under-estimate at {x}");
                worst = worst.max(diff);
                x += 1.0;
            }
            assert!(worst <= bound + 1e-9);
        }
        let g3 = &inst.generators[2];
        let bound = g3.quadratic_cost * 41.25f64.powi(2) / 4.0;
        assert!((bound - 0.8508).abs() < 1e-4);
    }

    #[test]
    fn degenerate_range_is_flagged() {
        let inst = one_gen(5.0, 2.0, 40.0, 40.0, vec![40.0]);
        let pc = piecewise_segments(&inst.generators[0], 4).unwrap();
        assert!(pc.degenerate);
        assert_eq!(pc.evaluate(40.0), 80.0);
        assert!(matches!(
            piecewise_segments(&inst.generators[0], 0),
            Err(ModelError::NoSegments)
        ));
    }

    #[test]
    fn single_generator_hand_solve() {
        let inst = one_gen(5.0, 2.0, 10.0, 100.0, vec![50.0]);
        let art = build_deterministic(&inst, &[50.0]).unwrap();
        let sol = solve(&art.model, &bnb()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 105.0).abs() < 1e-6);
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let inst = Instance {
            base_demand: vec![0.0; 3],
            horizon: 3,
            generators: Instance::bundled().generators[..2].to_vec(),
            ..Instance::bundled()
        };
        let art = build_deterministic(&inst, &[0.0; 3]).unwrap();
        let sol = solve(&art.model, &bnb()).unwrap();
        assert!(sol.objective.abs() < 1e-9);
        let pol = extract_policy(&art, &sol).unwrap();
        assert!(pol.decisions.iter().flatten().all(|d| !d.u));
    }

    #[test]
    fn paper_model_sizes() {
        let inst = Instance::bundled();
        let tree = build_tree(&inst, 0.2).unwrap();
        let spec = RiskSpec::mean_upper_semideviation(0.3).unwrap();
        assert_eq!(build_ts(&inst, &tree, &spec).unwrap().num_binaries(), 720);
        assert_eq!(build_ms(&inst, &tree, &spec).unwrap().num_binaries(), 2700);
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let inst = one_gen(5.0, 2.0, 10.0, 100.0, vec![50.0, 60.0]);
        assert!(matches!(
            build_deterministic(&inst, &[50.0]),
            Err(ModelError::HorizonMismatch { got: 1, horizon: 2 })
        ));
    }

    #[test]
    fn ts_shares_binaries_per_period() {
        let inst = one_gen(5.0, 2.0, 10.0, 100.0, vec![50.0, 60.0]);
        let mut tb = TreeBuilder::new(50.0);
        tb.add_child(0, 0.5, 40.0);
        tb.add_child(0, 0.5, 80.0);
        let tree = tb.finish().unwrap();
        let spec = RiskSpec::mean_upper_semideviation(0.5).unwrap();
        let ts = build_ts(&inst, &tree, &spec).unwrap();
        assert_eq!(ts.u[0][1], ts.u[0][2]);
        assert_ne!(ts.v[0][1], ts.v[0][2]);
        let ms = build_ms(&inst, &tree, &spec).unwrap();
        assert_ne!(ms.u[0][1], ms.u[0][2]);
        // Always on: 5 + 100 at the root, children cost 85 and 165.
        let sol = solve(&ms.model, &bnb()).unwrap();
        let expected = 105.0 + 125.0 + 0.5 * 0.5 * 40.0;
        assert!((sol.objective - expected).abs() < 1e-6, "{}", sol.objective);
    }

    #[test]
    fn min_up_window_is_enforced() {
        let mut inst = one_gen(0.0, 1.0, 10.0, 100.0, vec![50.0, 0.0, 0.0]);
        inst.generators[0].min_up = 2;
        inst.generators[0].fixed_cost = 7.0;
        let art = build_deterministic(&inst, &[50.0, 0.0, 0.0]).unwrap();
        let sol = solve(&art.model, &bnb()).unwrap();
        // Started at t1, so it must stay on through t3 at q_min.
        assert!((sol.objective - (7.0 + 50.0 + 2.0 * (7.0 + 10.0))).abs() < 1e-6);
    }

    #[test]
    fn sidecar_names_every_variable() {
        let inst = one_gen(5.0, 2.0, 10.0, 100.0, vec![50.0, 60.0]);
        let tree = ScenarioTree::chain(&[50.0, 60.0]);
        let art = build_ts(&inst, &tree, &RiskSpec::expectation()).unwrap();
        let symbols = art.symbol_table();
        assert_eq!(symbols.len(), art.model.variables().len());
        assert!(symbols.iter().any(|s| s.name == "u(1,t2)"));
        let (lp, sidecar) = art.export();
        assert!(lp.contains("Binaries"));
        assert!(sidecar.contains("\"two_stage\""));
    }
}
