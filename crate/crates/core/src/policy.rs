//! Tree policies: feasibility re-check, risk evaluation and the rolling
//! horizon procedure.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Instance;
use crate::milp::{solve_with_start, MilpError, SolveOptions, SolveStatus};
use crate::risk::{composite_risk, RiskError, RiskSpec, TreeCostProcess};
use crate::scenario_tree::{NodeId, ScenarioTree};
use crate::ucmodel::{
    build_model, extract_policy, piecewise_segments, start_from_policy, BuildOptions, FixedUnit, ModelError,
    ModelMode, DEFAULT_SEGMENTS,
};

/// Absolute slack, scaled by `max(1, |rhs|)`, allowed when re-checking rows.
pub const POLICY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy covers {got} nodes x {gens} units, tree has {nodes} nodes and {expected} units")]
    Shape {
        got: usize,
        gens: usize,
        nodes: usize,
        expected: usize,
    },
    #[error("policy violates {} rows, first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    Infeasible(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("sub-problem at node {node} ended with status {status:?}")]
    SubSolve { node: NodeId, status: SolveStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ts,
    Ms,
    RollingHorizon,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDecision {
    pub u: bool,
    pub v: f64,
    pub y: bool,
    pub z: bool,
}

impl UnitDecision {
    pub const OFF: UnitDecision = UnitDecision {
        u: false,
        v: 0.0,
        y: false,
        z: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub mode: ModelMode,
    pub provenance: Provenance,
    /// `decisions[node][gen]`.
    pub decisions: Vec<Vec<UnitDecision>>,
}

impl Policy {
    pub fn all_off(tree: &ScenarioTree, gens: usize) -> Self {
        Policy {
            mode: ModelMode::MultiStage,
            provenance: Provenance::External,
            decisions: vec![vec![UnitDecision::OFF; gens]; tree.len()],
        }
    }

    /// True when every node of a period carries the same u/y/z vector.
    pub fn is_period_constant(&self, tree: &ScenarioTree) -> bool {
        (1..=tree.horizon()).all(|t| {
            let stage = tree.stage(t);
            let first = &self.decisions[stage[0].0];
            stage.iter().all(|n| {
                self.decisions[n.0]
                    .iter()
                    .zip(first)
                    .all(|(a, b)| a.u == b.u && a.y == b.y && a.z == b.z)
            })
        })
    }

    /// Tab-separated `node_id period gen u v y z`, with a header line.
    pub fn dump(&self, tree: &ScenarioTree, inst: &Instance) -> String {
        let mut out = String::from("node_id\tperiod\tgen\tu\tv\ty\tz\n");
        for node in tree.nodes() {
            for (i, d) in self.decisions[node.id.0].iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    node.id.0,
                    node.period,
                    inst.generators[i].id,
                    u8::from(d.u),
                    d.v,
                    u8::from(d.y),
                    u8::from(d.z)
                );
            }
        }
        out
    }
}

fn bit(x: bool) -> f64 {
    if x {
        1.0
    } else {
        0.0
    }
}

/// Re-checks every operating row of the instance along the tree and
/// returns a description of each violation.
pub fn check_feasibility(inst: &Instance, tree: &ScenarioTree, pol: &Policy) -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |ok_slack: f64, scale: f64, what: String| {
        if ok_slack < -POLICY_TOLERANCE * scale.abs().max(1.0) {
            bad.push(what);
        }
    };
    for (i, gen) in inst.generators.iter().enumerate() {
        let init = inst.initial(i);
        let residual = init.residual_periods(gen) as usize;
        let gid = gen.id;
        for node in tree.nodes() {
            let n = node.id.0;
            let t = node.period;
            let d = pol.decisions[n][i];
            let (u_prev, v_prev) = match node.parent {
                Some(p) => (bit(pol.decisions[p.0][i].u), pol.decisions[p.0][i].v),
                None => (bit(init.on), if init.on { init.output } else { 0.0 }),
            };
            let u = bit(d.u);
            if d.u {
                check(d.v - gen.q_min, gen.q_min, format!("cap_lo({gid},{n})"));
                check(gen.q_max - d.v, gen.q_max, format!("cap_hi({gid},{n})"));
            } else {
                check(-d.v.abs(), 0.0, format!("cap_hi({gid},{n})"));
            }
            check(bit(d.y) - (u - u_prev), 1.0, format!("sup({gid},{n})"));
            check(bit(d.z) - (u_prev - u), 1.0, format!("sdo({gid},{n})"));
            let up_room = gen.startup_rate * bit(d.y) + gen.ramp_up * u_prev - (d.v - v_prev);
            check(up_room, gen.q_max, format!("rup({gid},{n})"));
            let down_room = gen.shutdown_rate * bit(d.z) + gen.ramp_down * u - (v_prev - d.v);
            check(down_room, gen.q_max, format!("rdo({gid},{n})"));
            for tau in t + 1..=(t + gen.min_up as usize).min(tree.horizon()) {
                for dn in tree.descendants_at(node.id, tau) {
                    let ud = bit(pol.decisions[dn.0][i].u);
                    check(ud - (u - u_prev), 1.0, format!("upt({gid},{n},{})", dn.0));
                }
            }
            for tau in t + 1..=(t + gen.min_down as usize).min(tree.horizon()) {
                for dn in tree.descendants_at(node.id, tau) {
                    let ud = bit(pol.decisions[dn.0][i].u);
                    check(1.0 - ud - (u_prev - u), 1.0, format!("dot({gid},{n},{})", dn.0));
                }
            }
            if t <= residual && d.u != init.on {
                check(-1.0, 1.0, format!("init({gid},{n})"));
            }
        }
    }
    for node in tree.nodes() {
        let supply: f64 = pol.decisions[node.id.0].iter().map(|d| d.v).sum();
        check(supply - node.demand, node.demand, format!("dem({})", node.id.0));
    }
    bad
}

/// Per-node operating cost `a·u + piecewise(v) + SU·y + SD·z`.
pub fn stage_costs(inst: &Instance, tree: &ScenarioTree, pol: &Policy) -> Result<TreeCostProcess, PolicyError> {
    let costs = inst
        .generators
        .iter()
        .map(|g| piecewise_segments(g, DEFAULT_SEGMENTS))
        .collect::<Result<Vec<_>, _>>()?;
    let values = tree
        .nodes()
        .iter()
        .map(|node| {
            pol.decisions[node.id.0]
                .iter()
                .zip(&inst.generators)
                .zip(&costs)
                .map(|((d, g), pc)| {
                    let run = if d.u { pc.on_cost(d.v) } else { 0.0 };
                    run + g.startup_cost * bit(d.y) + g.shutdown_cost * bit(d.z)
                })
                .sum()
        })
        .collect();
    Ok(TreeCostProcess(values))
}

/// Composite risk of the cost process a feasible policy induces.
pub fn evaluate_policy(
    inst: &Instance,
    tree: &ScenarioTree,
    pol: &Policy,
    spec: &RiskSpec,
) -> Result<f64, PolicyError> {
    let gens = pol.decisions.first().map_or(0, Vec::len);
    if pol.decisions.len() != tree.len() || pol.decisions.iter().any(|r| r.len() != inst.num_generators()) {
        return Err(PolicyError::Shape {
            got: pol.decisions.len(),
            gens,
            nodes: tree.len(),
            expected: inst.num_generators(),
        });
    }
    let bad = check_feasibility(inst, tree, pol);
    if !bad.is_empty() {
        return Err(PolicyError::Infeasible(bad));
    }
    Ok(composite_risk(tree, &stage_costs(inst, tree, pol)?, spec)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhSchedule {
    /// Re-solve only where information arrives: the root and every node
    /// whose parent branches.
    #[default]
    Revelation,
    /// Re-solve at every node.
    EveryPeriod,
}

#[derive(Debug, Clone, Default)]
pub struct RhOptions {
    pub solve: SolveOptions,
    pub schedule: RhSchedule,
    /// Solution of the two-stage model on the whole tree, if known.
    pub root_policy: Option<Policy>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RhOutcome {
    pub policy: Policy,
    pub value: f64,
    pub solves: usize,
    pub wall_time_s: f64,
    /// Largest relative gap reported by any sub-solve.
    pub max_rel_gap: f64,
}

fn is_revelation(tree: &ScenarioTree, n: NodeId, schedule: RhSchedule) -> bool {
    match (schedule, tree.node(n).parent) {
        (RhSchedule::EveryPeriod, _) | (_, None) => true,
        (RhSchedule::Revelation, Some(p)) => tree.node(p).children.len() > 1,
    }
}

/// Builds a policy by solving two-stage models rooted at each revelation
/// node, with everything already decided along its history held fixed, and
/// keeping the decisions up to the next revelation.
pub fn rolling_horizon(
    inst: &Instance,
    tree: &ScenarioTree,
    spec: &RiskSpec,
    opts: &RhOptions,
) -> Result<RhOutcome, PolicyError> {
    let start = Instant::now();
    let ng = inst.num_generators();
    let mut decided: Vec<Option<Vec<UnitDecision>>> = vec![None; tree.len()];
    let mut pending = vec![tree.root()];
    let mut solves = 0;
    let mut max_rel_gap: f64 = 0.0;
    // Latest full-tree decisions: fixed ones plus the newest sub-solve's
    // continuation below them.
    let mut plan: Option<Vec<Vec<UnitDecision>>> = None;

    while let Some(n) = pending.pop() {
        let (sub, origin) = tree.with_history_and_subtree(n);
        let mut local = vec![None; tree.len()];
        for (k, o) in origin.iter().enumerate() {
            local[o.0] = Some(NodeId(k));
        }
        let mut fixed = Vec::new();
        for h in tree.history(n).into_iter().filter(|h| *h != n) {
            let row = decided[h.0].as_ref().expect("history decided before descendants");
            let node = local[h.0].expect("history is part of the restricted tree");
            for (gen, d) in row.iter().enumerate() {
                fixed.push(FixedUnit {
                    gen,
                    node,
                    decision: *d,
                });
            }
        }
        // The root sub-problem is the full two-stage model; reuse its
        // solution when the caller already has it.
        let reused = match (&opts.root_policy, tree.node(n).parent) {
            (Some(p), None) => Some(p.decisions.clone()),
            _ => None,
        };
        let by_original = match reused {
            Some(d) => d,
            None => {
                let build = BuildOptions {
                    fixed,
                    ..BuildOptions::default()
                };
                let art = build_model(inst, &sub, spec, ModelMode::TwoStage, &build)?;
                // Continuing the current plan is feasible, so a time-limited
                // sub-solve never ends worse than the plan it refines.
                let start = match &plan {
                    Some(plan) => {
                        let pol = Policy {
                            mode: ModelMode::TwoStage,
                            provenance: Provenance::RollingHorizon,
                            decisions: origin.iter().map(|o| plan[o.0].clone()).collect(),
                        };
                        Some(start_from_policy(&art, inst, &pol)?)
                    }
                    None => None,
                };
                let sol = solve_with_start(&art.model, &opts.solve, start.as_deref())?;
                solves += 1;
                if !sol.has_solution() {
                    return Err(PolicyError::SubSolve {
                        node: n,
                        status: sol.status,
                    });
                }
                max_rel_gap = max_rel_gap.max(sol.rel_gap);
                let sub_policy = extract_policy(&art, &sol)?;
                let mut d = plan.take().unwrap_or_else(|| vec![Vec::new(); tree.len()]);
                for (k, o) in origin.iter().enumerate() {
                    d[o.0] = sub_policy.decisions[k].clone();
                }
                d
            }
        };

        let by_original = &*plan.insert(by_original);
        let mut cur = n;
        loop {
            decided[cur.0] = Some(by_original[cur.0].clone());
            let children = &tree.node(cur).children;
            match children.as_slice() {
                [only] if !is_revelation(tree, *only, opts.schedule) => cur = *only,
                _ => {
                    // Reverse so the earliest child is solved first.
                    pending.extend(children.iter().rev().copied());
                    break;
                }
            }
        }
    }

    let decisions = decided
        .into_iter()
        .map(|d| d.unwrap_or_else(|| vec![UnitDecision::OFF; ng]))
        .collect();
    let policy = Policy {
        mode: ModelMode::MultiStage,
        provenance: Provenance::RollingHorizon,
        decisions,
    };
    let value = evaluate_policy(inst, tree, &policy, spec)?;
    Ok(RhOutcome {
        policy,
        value,
        solves,
        wall_time_s: start.elapsed().as_secs_f64(),
        max_rel_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve, BackendKind};
    use crate::scenario_tree::TreeBuilder;
    use crate::ucmodel::{build_ms, build_ts};

    fn toy() -> (Instance, ScenarioTree) {
        let text = serde_json::json!({
            "name": "toy",
            "horizon": 3,
            "generators": [
                { "a": 20.0, "b": 2.0, "c": 0.01, "q_min": 10.0, "q_max": 60.0,
                  "V_prime": 60.0, "V": 60.0, "B_prime": 60.0, "B": 60.0,
                  "M": 2, "L": 1, "SU": 30.0, "SD": 5.0 },
                { "a": 5.0, "b": 4.0, "c": 0.0, "q_min": 5.0, "q_max": 40.0,
                  "V_prime": 40.0, "V": 40.0, "B_prime": 40.0, "B": 40.0,
                  "M": 1, "L": 1, "SU": 10.0, "SD": 0.0 }
            ],
            "base_demand": [30.0, 40.0, 40.0],
            "scenario": { "branch_periods": [], "epsilon": 0.0, "branch_probs": [1.0] }
        });
        let inst = Instance::from_json_str(&text.to_string()).unwrap();
        let mut tb = TreeBuilder::new(30.0);
        let lo = tb.add_child(0, 0.5, 20.0);
        let hi = tb.add_child(0, 0.5, 75.0);
        tb.add_child(lo, 1.0, 20.0);
        tb.add_child(hi, 1.0, 75.0);
        (inst, tb.finish().unwrap())
    }

    fn opts() -> SolveOptions {
        SolveOptions::with_backend(BackendKind::BranchAndBound)
    }

    #[test]
    fn all_off_on_zero_demand_is_free() {
        let (inst, _) = toy();
        let tree = ScenarioTree::chain(&[0.0, 0.0, 0.0]);
        let pol = Policy::all_off(&tree, 2);
        let spec = RiskSpec::mean_upper_semideviation(0.5).unwrap();
        assert_eq!(evaluate_policy(&inst, &tree, &pol, &spec).unwrap(), 0.0);
    }

    #[test]
    fn all_off_fails_demand() {
        let (inst, tree) = toy();
        let pol = Policy::all_off(&tree, 2);
        let err = evaluate_policy(&inst, &tree, &pol, &RiskSpec::expectation()).unwrap_err();
        match err {
            PolicyError::Infeasible(rows) => assert!(rows.iter().any(|r| r.starts_with("dem("))),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn extracted_policies_reproduce_objectives() {
        let (inst, tree) = toy();
        let spec = RiskSpec::mean_upper_semideviation(0.4).unwrap();
        for (art, provenance) in [
            (build_ts(&inst, &tree, &spec).unwrap(), Provenance::Ts),
            (build_ms(&inst, &tree, &spec).unwrap(), Provenance::Ms),
        ] {
            let sol = solve(&art.model, &opts()).unwrap();
            let pol = extract_policy(&art, &sol).unwrap();
            assert_eq!(pol.provenance, provenance);
            let value = evaluate_policy(&inst, &tree, &pol, &spec).unwrap();
            assert!((value - sol.objective).abs() <= 1e-6 * sol.objective.abs());
            if provenance == Provenance::Ts {
                assert!(pol.is_period_constant(&tree));
            }
        }
    }

    #[test]
    fn rolling_horizon_is_sandwiched() {
        let (inst, tree) = toy();
        let spec = RiskSpec::mean_upper_semideviation(0.5).unwrap();
        let z = |art: crate::ucmodel::ModelArtifacts| solve(&art.model, &opts()).unwrap().objective;
        let z_ts = z(build_ts(&inst, &tree, &spec).unwrap());
        let z_ms = z(build_ms(&inst, &tree, &spec).unwrap());
        let rh_opts = RhOptions {
            solve: opts(),
            schedule: RhSchedule::Revelation,
            root_policy: None,
        };
        let rh = rolling_horizon(&inst, &tree, &spec, &rh_opts).unwrap();
        assert_eq!(rh.solves, 3);
        let tol = 1e-6 * (z_ts.abs() + z_ms.abs());
        assert!(z_ms - tol <= rh.value && rh.value <= z_ts + tol, "{z_ms} {} {z_ts}", rh.value);

        let every = RhOptions {
            schedule: RhSchedule::EveryPeriod,
            ..rh_opts.clone()
        };
        let rh2 = rolling_horizon(&inst, &tree, &spec, &every).unwrap();
        assert_eq!(rh2.solves, tree.len());
        assert!((rh2.value - rh.value).abs() <= 1e-6 * rh.value.abs());

        let ts = build_ts(&inst, &tree, &spec).unwrap();
        let root = extract_policy(&ts, &solve(&ts.model, &opts()).unwrap()).unwrap();
        let reuse = RhOptions {
            root_policy: Some(root),
            ..rh_opts
        };
        let rh3 = rolling_horizon(&inst, &tree, &spec, &reuse).unwrap();
        assert_eq!(rh3.solves, 2);
        assert!((rh3.value - rh.value).abs() <= 1e-6 * rh.value.abs());
    }

    #[test]
    fn policy_start_is_feasible_for_multistage_model() {
        let (inst, tree) = toy();
        let spec = RiskSpec::mean_upper_semideviation(0.7).unwrap();
        let ts = build_ts(&inst, &tree, &spec).unwrap();
        let sol = solve(&ts.model, &opts()).unwrap();
        let pol = extract_policy(&ts, &sol).unwrap();
        let ms = build_ms(&inst, &tree, &spec).unwrap();
        let x = crate::ucmodel::start_from_policy(&ms, &inst, &pol).unwrap();
        let (violation, row) = ms.model.max_violation(&x);
        assert!(violation < 1e-9, "{row}: {violation}");
        assert!((ms.model.objective_value(&x) - sol.objective).abs() < 1e-6 * sol.objective);
        let warm = crate::milp::solve_with_start(&ms.model, &opts(), Some(&x)).unwrap();
        assert!(warm.objective <= sol.objective + 1e-6);
    }

    #[test]
    fn dump_has_one_line_per_unit_and_node() {
        let (inst, tree) = toy();
        let pol = Policy::all_off(&tree, 2);
        let text = pol.dump(&tree, &inst);
        assert_eq!(text.lines().count(), 1 + 2 * tree.len());
        assert!(text.lines().nth(1).unwrap().starts_with("0\t1\t1\t0\t0\t0\t0"));
    }
}
