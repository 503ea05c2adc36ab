use std::num::NonZeroU32;

use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense as Objective};

use super::{
    Backend, MilpError, MilpModel, RawSolution, Sense, SolveOptions, SolveStatus, VarKind,
};

pub(crate) struct HighsBackend;

impl Backend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve(
        &self,
        model: &MilpModel,
        opts: &SolveOptions,
        start: Option<&[f64]>,
    ) -> Result<RawSolution, MilpError> {
        let mut pb = RowProblem::default();
        let cols: Vec<_> = model
            .variables()
            .iter()
            .map(|v| {
                pb.add_column_with_integrality(
                    v.objective,
                    v.lower..=v.upper,
                    v.kind == VarKind::Binary,
                )
            })
            .collect();
        for row in model.constraints() {
            let terms: Vec<_> = row.terms.iter().map(|(v, a)| (cols[v.0], *a)).collect();
            match row.sense {
                Sense::Le => pb.add_row(..=row.rhs, terms),
                Sense::Ge => pb.add_row(row.rhs.., terms),
                Sense::Eq => pb.add_row(row.rhs..=row.rhs, terms),
            }
        }

        let mut highs = pb
            .try_optimise(Objective::Minimise)
            .map_err(|s| MilpError::Backend(format!("HiGHS rejected the model: {s:?}")))?;
        if std::env::var_os("RAUC_HIGHS_LOG").is_none() {
            highs.make_quiet();
        } else {
            highs.set_option("output_flag", true);
            highs.set_option("log_to_console", true);
        }
        let set = |h: &mut highs::Model, key: &str, value: f64| {
            h.try_set_option(key, value)
                .map_err(|e| MilpError::Backend(format!("option {key}: {e:?}")))
        };
        set(&mut highs, "mip_rel_gap", opts.rel_gap)?;
        set(&mut highs, "mip_abs_gap", 1e-9)?;
        set(&mut highs, "mip_feasibility_tolerance", 1e-7)?;
        set(&mut highs, "primal_feasibility_tolerance", 1e-8)?;
        if let Some(limit) = opts.time_limit_s {
            set(&mut highs, "time_limit", limit)?;
        }
        if let Some(threads) = opts.threads.and_then(NonZeroU32::new) {
            highs.set_threads(threads);
        }

        if let Some(x) = start {
            highs
                .try_set_solution(Some(x), None, None, None)
                .map_err(|e| MilpError::Backend(format!("start rejected: {e:?}")))?;
        }

        let solved = highs
            .try_solve()
            .map_err(|s| MilpError::Backend(format!("HiGHS run failed: {s:?}")))?;
        let has_integers = model.num_binaries() > 0;
        let gap = if has_integers { solved.mip_gap() } else { 0.0 };
        let feasible = solved.primal_solution_status() == HighsSolutionStatus::Feasible;
        let values = || solved.get_solution().columns().to_vec();

        let (status, values, rel_gap) = match solved.status() {
            HighsModelStatus::Optimal => (SolveStatus::Optimal, values(), gap.max(0.0)),
            HighsModelStatus::ModelEmpty => (SolveStatus::Optimal, Vec::new(), 0.0),
            HighsModelStatus::Infeasible => (SolveStatus::Infeasible, Vec::new(), f64::INFINITY),
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => {
                (SolveStatus::Unbounded, Vec::new(), f64::INFINITY)
            }
            HighsModelStatus::ReachedTimeLimit => (
                SolveStatus::TimeLimit,
                if feasible { values() } else { Vec::new() },
                gap,
            ),
            HighsModelStatus::ReachedIterationLimit | HighsModelStatus::ReachedSolutionLimit => (
                SolveStatus::GapLimit,
                if feasible { values() } else { Vec::new() },
                gap,
            ),
            other => return Err(MilpError::Backend(format!("HiGHS status {other:?}"))),
        };
        Ok(RawSolution {
            status,
            values,
            rel_gap,
        })
    }
}
