//! Bundled backend: depth-first branch-and-bound over the binaries with
//! LP relaxations solved by the dense simplex. Adequate for desk-scale
//! models (a few dozen binaries); large models belong to an external backend.

use std::time::Instant;

use super::simplex::{solve_lp, LpOutcome, LpProblem, LpRow};
use super::{
    Backend, MilpError, MilpModel, RawSolution, SolveOptions, SolveStatus, VarKind,
    INTEGRALITY_TOLERANCE,
};

const NODE_LIMIT: usize = 200_000;

pub(crate) struct BranchAndBound;

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Backend for BranchAndBound {
    fn name(&self) -> &'static str {
        "bnb"
    }

    fn solve(
        &self,
        model: &MilpModel,
        opts: &SolveOptions,
        start: Option<&[f64]>,
    ) -> Result<RawSolution, MilpError> {
        let clock = Instant::now();
        let vars = model.variables();
        let base = LpProblem {
            cost: vars.iter().map(|v| v.objective).collect(),
            lower: vars.iter().map(|v| v.lower).collect(),
            upper: vars.iter().map(|v| v.upper).collect(),
            rows: model
                .constraints()
                .iter()
                .map(|r| LpRow {
                    terms: r.terms.iter().map(|(v, a)| (v.0, *a)).collect(),
                    sense: r.sense,
                    rhs: r.rhs,
                })
                .collect(),
        };
        let binaries: Vec<usize> = vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(j, _)| j)
            .collect();

        let mut incumbent: Option<(f64, Vec<f64>)> =
            start.map(|x| (model.objective_value(x), x.to_vec()));
        // Smallest relaxation bound among nodes discarded by the gap test.
        let mut pruned_bound = f64::INFINITY;
        let mut stack = vec![Node {
            lower: base.lower.clone(),
            upper: base.upper.clone(),
        }];
        let mut lp = base.clone();
        let mut explored = 0usize;
        let mut root_unbounded = false;
        let mut stopped = None;

        while let Some(node) = stack.pop() {
            if explored >= NODE_LIMIT {
                stopped = Some(SolveStatus::GapLimit);
                pruned_bound = f64::NEG_INFINITY;
                break;
            }
            if let Some(limit) = opts.time_limit_s {
                if clock.elapsed().as_secs_f64() > limit {
                    stopped = Some(SolveStatus::TimeLimit);
                    pruned_bound = f64::NEG_INFINITY;
                    break;
                }
            }
            explored += 1;
            lp.lower.clone_from(&node.lower);
            lp.upper.clone_from(&node.upper);
            let (x, bound) = match solve_lp(&lp) {
                LpOutcome::Infeasible => continue,
                LpOutcome::Unbounded => {
                    if explored == 1 {
                        root_unbounded = true;
                    }
                    break;
                }
                LpOutcome::Optimal { x, objective } => (x, objective),
            };
            if let Some((best, _)) = &incumbent {
                if bound >= best - opts.rel_gap * best.abs().max(1e-9) {
                    pruned_bound = pruned_bound.min(bound);
                    continue;
                }
            }
            let fractional = binaries
                .iter()
                .copied()
                .filter(|&j| (x[j] - x[j].round()).abs() > INTEGRALITY_TOLERANCE)
                .max_by(|&a, &b| {
                    let fa = (x[a] - 0.5).abs();
                    let fb = (x[b] - 0.5).abs();
                    fb.total_cmp(&fa)
                });
            match fractional {
                None => {
                    let mut sol = x;
                    for &j in &binaries {
                        sol[j] = sol[j].round();
                    }
                    let obj = model.objective_value(&sol);
                    if incumbent.as_ref().is_none_or(|(b, _)| obj < *b) {
                        incumbent = Some((obj, sol));
                    }
                }
                Some(j) => {
                    let mut down = Node {
                        lower: node.lower.clone(),
                        upper: node.upper.clone(),
                    };
                    down.upper[j] = 0.0;
                    let mut up = node;
                    up.lower[j] = 1.0;
                    // Explore the side the relaxation leans towards first.
                    if x[j] >= 0.5 {
                        stack.push(down);
                        stack.push(up);
                    } else {
                        stack.push(up);
                        stack.push(down);
                    }
                }
            }
        }

        if root_unbounded {
            return Ok(RawSolution {
                status: SolveStatus::Unbounded,
                values: Vec::new(),
                rel_gap: f64::INFINITY,
            });
        }
        match incumbent {
            None => Ok(RawSolution {
                status: stopped.unwrap_or(SolveStatus::Infeasible),
                values: Vec::new(),
                rel_gap: f64::INFINITY,
            }),
            Some((best, values)) => {
                let bound = pruned_bound.min(best);
                let gap = if best == bound {
                    0.0
                } else {
                    (best - bound) / best.abs().max(1e-9)
                };
                let status = match stopped {
                    Some(s) if gap > opts.rel_gap => s,
                    _ => SolveStatus::Optimal,
                };
                Ok(RawSolution {
                    status,
                    values,
                    rel_gap: gap,
                })
            }
        }
    }
}
