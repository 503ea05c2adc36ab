//! Value of the multi-stage solution, rolling-horizon gap, analytical
//! bounds and the (ε, λ) experiment sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Instance;
use crate::milp::{solve, solve_with_start, MilpError, SolveOptions};
use crate::policy::{rolling_horizon, PolicyError, RhOptions, RhSchedule};
use crate::risk::{composite_risk, RiskError, RiskSpec, TreeCostProcess};
use crate::scenario_tree::{build_tree, ScenarioTree, TreeBuilder, TreeError};
use crate::ucmodel::{build_ms, build_ts, extract_policy, start_from_policy, ModelError};

pub const DEFAULT_EPSILONS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

pub const CSV_HEADER: &str = "epsilon,lambda,z_ts,z_ms,z_rh,vms_abs,vms_pct,gap_abs,gap_pct,bound_lo,bound_hi,time_ts_s,time_ms_s,time_rh_s";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("alpha upper coefficient undefined: generator {0} has q_min = 0")]
    ZeroMinimumOutput(usize),
    #[error("instance has no generators")]
    NoGenerators,
    #[error("assumption {number} violated: {detail}")]
    Assumption { number: u8, detail: String },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("cache i/o: {0}")]
    Cache(String),
}

/// `(α∗, α*)`: cheapest average cost at minimum output over the largest
/// unit, and dearest cost at full output over the smallest minimum output.
pub fn alpha_coefficients(inst: &Instance) -> Result<(f64, f64), AnalysisError> {
    let gens = &inst.generators;
    if gens.is_empty() {
        return Err(AnalysisError::NoGenerators);
    }
    if let Some(g) = gens.iter().find(|g| g.q_min <= 0.0) {
        return Err(AnalysisError::ZeroMinimumOutput(g.id));
    }
    let min_low = gens
        .iter()
        .map(|g| g.fixed_cost + g.linear_cost * g.q_min)
        .fold(f64::INFINITY, f64::min);
    let max_cap = gens.iter().map(|g| g.q_max).fold(f64::NEG_INFINITY, f64::max);
    let max_high = gens
        .iter()
        .map(|g| g.fixed_cost + g.linear_cost * g.q_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_floor = gens.iter().map(|g| g.q_min).fold(f64::INFINITY, f64::min);
    Ok((min_low / max_cap, max_high / min_floor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    /// Σ_t of the largest node demand in period t.
    pub d_max: f64,
    /// Composite risk of the demand process.
    pub rho_d: f64,
}

impl BoundInputs {
    pub fn compute(inst: &Instance, tree: &ScenarioTree, spec: &RiskSpec) -> Result<Self, AnalysisError> {
        let (alpha_lo, alpha_hi) = alpha_coefficients(inst)?;
        Ok(BoundInputs {
            alpha_lo,
            alpha_hi,
            d_max: tree.max_demand_per_period().iter().sum(),
            rho_d: composite_risk(tree, &TreeCostProcess::node_demands(tree), spec)?,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (
            self.alpha_lo * self.d_max - self.alpha_hi * self.rho_d,
            self.alpha_hi * self.d_max - self.alpha_lo * self.rho_d,
        )
    }
}

/// Index of a generator that can serve every node's demand alone, if any.
///
/// Beyond the output range and zero minimum up/down times, the unit's ramp
/// and start-up rates must let it follow demand from the initial state.
fn covering_generator(inst: &Instance, tree: &ScenarioTree) -> Option<usize> {
    inst.generators.iter().enumerate().position(|(i, g)| {
        if g.min_up != 0 || g.min_down != 0 {
            return false;
        }
        let init = inst.initial(i);
        tree.nodes().iter().all(|node| {
            let d = node.demand;
            if d < g.q_min || d > g.q_max {
                return false;
            }
            let (prev, was_on) = match node.parent {
                Some(p) => (tree.node(p).demand, true),
                None => (if init.on { init.output } else { 0.0 }, init.on),
            };
            let up_room = if was_on { g.ramp_up } else { g.startup_rate };
            d - prev <= up_room + 1e-9 && prev - d <= g.ramp_down + 1e-9
        })
    })
}

/// Checks the three conditions under which the VMS interval is certified.
pub fn check_assumptions(inst: &Instance, tree: &ScenarioTree) -> Result<(), AnalysisError> {
    for g in &inst.generators {
        let mut bad = Vec::new();
        if g.quadratic_cost != 0.0 {
            bad.push(format!("c = {}", g.quadratic_cost));
        }
        if g.startup_cost != 0.0 {
            bad.push(format!("SU = {}", g.startup_cost));
        }
        if g.shutdown_cost != 0.0 {
            bad.push(format!("SD = {}", g.shutdown_cost));
        }
        if g.fixed_cost <= 0.0 || g.linear_cost <= 0.0 {
            bad.push("a and b must be positive".into());
        }
        if !bad.is_empty() {
            return Err(AnalysisError::Assumption {
                number: 3,
                detail: format!("generator {} is not linear and stationary ({})", g.id, bad.join(", ")),
            });
        }
    }
    if covering_generator(inst, tree).is_none() {
        return Err(AnalysisError::Assumption {
            number: 1,
            detail: "no single generator covers every node demand with zero minimum up/down \
                     times and sufficient ramping"
                .into(),
        });
    }
    if let Some(n) = tree.nodes().iter().find(|n| n.demand < 0.0 || !n.demand.is_finite()) {
        return Err(AnalysisError::Assumption {
            number: 2,
            detail: format!("node {} has demand {} outside [0, ∞)", n.id, n.demand),
        });
    }
    Ok(())
}

/// `(lo, hi)` enclosing VMS. With `enforce_assumptions` the conditions that
/// certify the interval are checked first; otherwise it is a diagnostic.
pub fn theorem1_bounds(
    inst: &Instance,
    tree: &ScenarioTree,
    spec: &RiskSpec,
    enforce_assumptions: bool,
) -> Result<(f64, f64), AnalysisError> {
    if enforce_assumptions {
        check_assumptions(inst, tree)?;
    }
    Ok(BoundInputs::compute(inst, tree, spec)?.interval())
}

/// `α·(D_max − ρ(D))` at `α ∈ {α∗, (α∗+α*)/2, α*}`.
pub fn approx_almost(alpha_lo: f64, alpha_hi: f64, d_max: f64, rho_d: f64) -> (f64, f64, f64) {
    let spread = d_max - rho_d;
    let mid = 0.5 * (alpha_lo + alpha_hi);
    (alpha_lo * spread, mid * spread, alpha_hi * spread)
}

/// `α·T·(1 − λ/4)·Δ`.
pub fn approx_final(alpha: f64, periods: usize, lambda: f64, delta: f64) -> f64 {
    alpha * periods as f64 * (1.0 - lambda / 4.0) * delta
}

/// `D_max − ρ(D)` for demand `base[t] + U_t`, with independent `U_t` uniform
/// on `points` equally spaced values in `[−Δ, Δ]`.
///
/// A full tree would have `points^T` leaves. Independence across stages and
/// translation equivariance let each stage be evaluated on its own fan,
/// a root followed by `points` equiprobable children, and the results summed.
pub fn uniform_fan_spread(base: &[f64], lambda: f64, delta: f64, points: usize) -> Result<f64, AnalysisError> {
    let spec = RiskSpec::mean_upper_semideviation(lambda)?;
    let mut total = 0.0;
    for &d in base {
        let mut tb = TreeBuilder::new(0.0);
        let p = 1.0 / points as f64;
        for k in 0..points {
            let offset = if points == 1 {
                0.0
            } else {
                -delta + 2.0 * delta * k as f64 / (points - 1) as f64
            };
            tb.add_child(0, p, d + offset);
        }
        let fan = tb.finish()?;
        let d_max: f64 = fan.max_demand_per_period().iter().sum();
        let rho = composite_risk(&fan, &TreeCostProcess::node_demands(&fan), &spec)?;
        total += d_max - rho;
    }
    Ok(total)
}

/// Settings for one sweep; also the identity of its cached cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub solve: SolveOptions,
    /// Time limit for the two-stage model on the full tree.
    pub ts_time_limit_s: Option<f64>,
    /// Time limit for each rolling-horizon sub-problem.
    pub rh_time_limit_s: Option<f64>,
    /// Time limit for the multi-stage model.
    pub ms_time_limit_s: Option<f64>,
    pub schedule: RhSchedule,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl SweepOptions {
    /// The settings that influence results; scheduling fields are cleared.
    fn cache_key(&self) -> SweepOptions {
        SweepOptions {
            workers: 0,
            cache_dir: None,
            ..self.clone()
        }
    }
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            ts_time_limit_s: Some(60.0),
            rh_time_limit_s: Some(20.0),
            ms_time_limit_s: Some(90.0),
            schedule: RhSchedule::Revelation,
            workers: 1,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub epsilon: f64,
    pub lambda: f64,
    pub z_ts: f64,
    pub z_ms: f64,
    pub z_rh: f64,
    pub vms_abs: f64,
    /// `100·vms_abs/z_ms`.
    pub vms_pct: f64,
    pub gap_abs: f64,
    /// `100·gap_abs/z_ms`.
    pub gap_pct: f64,
    pub bound_lo: f64,
    pub bound_hi: f64,
    pub time_ts_s: f64,
    pub time_ms_s: f64,
    pub time_rh_s: f64,
    /// Relative gaps achieved by the solver for TS, MS and the worst RH sub-solve.
    pub rel_gap_ts: f64,
    pub rel_gap_ms: f64,
    pub rel_gap_rh: f64,
    pub rh_solves: usize,
    /// Number of sequential revelation levels the rolling horizon went through.
    pub rh_levels: usize,
    pub error: Option<String>,
}

impl CellResult {
    fn failed(epsilon: f64, lambda: f64, err: String) -> Self {
        CellResult {
            epsilon,
            lambda,
            z_ts: f64::NAN,
            z_ms: f64::NAN,
            z_rh: f64::NAN,
            vms_abs: f64::NAN,
            vms_pct: f64::NAN,
            gap_abs: f64::NAN,
            gap_pct: f64::NAN,
            bound_lo: f64::NAN,
            bound_hi: f64::NAN,
            time_ts_s: 0.0,
            time_ms_s: 0.0,
            time_rh_s: 0.0,
            rel_gap_ts: f64::NAN,
            rel_gap_ms: f64::NAN,
            rel_gap_rh: f64::NAN,
            rh_solves: 0,
            rh_levels: 0,
            error: Some(err),
        }
    }

    /// Slack a difference of the two independently solved optima may show:
    /// `|z_ts|·gap_ts + |z_ms|·gap_ms`, each gap at least the target.
    pub fn vms_tolerance(&self, target: f64) -> f64 {
        self.z_ts.abs() * self.rel_gap_ts.max(target) + self.z_ms.abs() * self.rel_gap_ms.max(target)
    }

    /// VMS slack plus the rolling-horizon slack: each revelation level may
    /// leave up to its sub-solve gap on the table.
    pub fn gap_tolerance(&self, target: f64) -> f64 {
        self.vms_tolerance(target) + self.z_rh.abs() * self.rel_gap_rh.max(target) * self.rh_levels as f64
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epsilon,
            self.lambda,
            self.z_ts,
            self.z_ms,
            self.z_rh,
            self.vms_abs,
            self.vms_pct,
            self.gap_abs,
            self.gap_pct,
            self.bound_lo,
            self.bound_hi,
            self.time_ts_s,
            self.time_ms_s,
            self.time_rh_s
        )
    }
}

pub fn results_csv(cells: &[CellResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in cells {
        out.push_str(&c.csv_row());
        out.push('\n');
    }
    out
}

fn with_limit(base: &SolveOptions, limit: Option<f64>) -> SolveOptions {
    SolveOptions {
        time_limit_s: limit,
        ..base.clone()
    }
}

/// Solves TS, the rolling horizon and MS for one grid cell.
///
/// The rolling horizon reuses the TS solution at the root, and MS starts
/// from the better of the TS and rolling-horizon policies.
pub fn run_cell(inst: &Instance, epsilon: f64, lambda: f64, opts: &SweepOptions) -> Result<CellResult, AnalysisError> {
    let tree = build_tree(inst, epsilon)?;
    let spec = RiskSpec::mean_upper_semideviation(lambda)?;

    let ts = build_ts(inst, &tree, &spec)?;
    let ts_sol = solve(&ts.model, &with_limit(&opts.solve, opts.ts_time_limit_s))?;
    if !ts_sol.has_solution() {
        return Err(MilpError::Backend(format!("two-stage model ended {:?}", ts_sol.status)).into());
    }
    let ts_policy = extract_policy(&ts, &ts_sol)?;

    let rh = rolling_horizon(
        inst,
        &tree,
        &spec,
        &RhOptions {
            solve: with_limit(&opts.solve, opts.rh_time_limit_s),
            schedule: opts.schedule,
            root_policy: Some(ts_policy.clone()),
        },
    )?;

    let ms = build_ms(inst, &tree, &spec)?;
    let seed = if rh.value <= ts_sol.objective { &rh.policy } else { &ts_policy };
    let start = start_from_policy(&ms, inst, seed)?;
    let ms_sol = solve_with_start(&ms.model, &with_limit(&opts.solve, opts.ms_time_limit_s), Some(&start))?;
    if !ms_sol.has_solution() {
        return Err(MilpError::Backend(format!("multi-stage model ended {:?}", ms_sol.status)).into());
    }

    let (bound_lo, bound_hi) = theorem1_bounds(inst, &tree, &spec, false)?;
    let (z_ts, z_ms, z_rh) = (ts_sol.objective, ms_sol.objective, rh.value);
    let levels = revelation_levels(&tree);
    Ok(CellResult {
        epsilon,
        lambda,
        z_ts,
        z_ms,
        z_rh,
        vms_abs: z_ts - z_ms,
        vms_pct: 100.0 * (z_ts - z_ms) / z_ms,
        gap_abs: z_rh - z_ms,
        gap_pct: 100.0 * (z_rh - z_ms) / z_ms,
        bound_lo,
        bound_hi,
        time_ts_s: ts_sol.wall_time_s,
        time_ms_s: ms_sol.wall_time_s,
        time_rh_s: rh.wall_time_s,
        rel_gap_ts: ts_sol.rel_gap,
        rel_gap_ms: ms_sol.rel_gap,
        rel_gap_rh: rh.max_rel_gap,
        rh_solves: rh.solves,
        rh_levels: levels,
        error: None,
    })
}

/// Number of distinct periods in which some node branches, plus the root.
fn revelation_levels(tree: &ScenarioTree) -> usize {
    let mut periods: Vec<usize> = tree
        .nodes()
        .iter()
        .filter(|n| n.children.len() > 1)
        .map(|n| n.period)
        .collect();
    periods.dedup();
    1 + periods.len()
}

fn cache_path(dir: &Path, inst_hash: &str, epsilon: f64, lambda: f64) -> PathBuf {
    dir.join(format!("cell-{}-e{epsilon}-l{lambda}.json", &inst_hash[..16]))
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    instance_hash: String,
    options: SweepOptions,
    cell: CellResult,
}

fn load_cached(path: &Path, inst_hash: &str, opts: &SweepOptions) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let rec: CacheRecord = serde_json::from_str(&text).ok()?;
    (rec.instance_hash == inst_hash && rec.options == opts.cache_key() && rec.cell.error.is_none()).then_some(rec.cell)
}

fn store_cached(path: &Path, inst_hash: &str, opts: &SweepOptions, cell: &CellResult) -> Result<(), AnalysisError> {
    let rec = CacheRecord {
        instance_hash: inst_hash.to_string(),
        options: opts.cache_key(),
        cell: cell.clone(),
    };
    let text = serde_json::to_string_pretty(&rec).map_err(|e| AnalysisError::Cache(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| AnalysisError::Cache(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| AnalysisError::Cache(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub from_cache: usize,
}

/// Runs every `(ε, λ)` cell, reusing cached cells and recording per-cell
/// failures in the result rather than aborting. Output is ordered by ε,
/// then λ. `progress` is called after each cell finishes.
pub fn run_sweep(
    inst: &Instance,
    eps_grid: &[f64],
    lambda_grid: &[f64],
    opts: &SweepOptions,
    progress: &(dyn Fn(&CellResult, bool) + Sync),
) -> Result<SweepReport, AnalysisError> {
    let hash = inst.content_hash();
    if let Some(dir) = &opts.cache_dir {
        fs::create_dir_all(dir).map_err(|e| AnalysisError::Cache(format!("{}: {e}", dir.display())))?;
    }
    let jobs: Vec<(f64, f64)> = eps_grid
        .iter()
        .flat_map(|&e| lambda_grid.iter().map(move |&l| (e, l)))
        .collect();
    let slots: Vec<Mutex<Option<CellResult>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let cached = AtomicUsize::new(0);
    let first_err: Mutex<Option<AnalysisError>> = Mutex::new(None);

    let work = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(e, l)) = jobs.get(k) else { break };
        let path = opts.cache_dir.as_ref().map(|d| cache_path(d, &hash, e, l));
        let hit = path.as_ref().and_then(|p| load_cached(p, &hash, opts));
        let was_cached = hit.is_some();
        let cell = match hit {
            Some(c) => {
                cached.fetch_add(1, Ordering::SeqCst);
                c
            }
            None => {
                let c = run_cell(inst, e, l, opts).unwrap_or_else(|err| CellResult::failed(e, l, err.to_string()));
                if let (Some(p), None) = (&path, &c.error) {
                    if let Err(err) = store_cached(p, &hash, opts, &c) {
                        first_err.lock().expect("lock").get_or_insert(err);
                    }
                }
                c
            }
        };
        progress(&cell, was_cached);
        *slots[k].lock().expect("lock") = Some(cell);
    };
    let workers = opts.workers.max(1).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 1..workers {
            s.spawn(work);
        }
        work();
    });
    if let Some(err) = first_err.into_inner().expect("lock") {
        return Err(err);
    }
    Ok(SweepReport {
        cells: slots
            .into_iter()
            .map(|m| m.into_inner().expect("lock").expect("every job ran"))
            .collect(),
        from_cache: cached.into_inner(),
    })
}

/// Aggregates over a finished sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub failed: usize,
    pub mean_vms_pct: f64,
    pub max_vms_pct: f64,
    pub mean_gap_pct: f64,
    pub max_gap_pct: f64,
    /// λ columns in which VMS does not decrease as ε grows.
    pub vms_rising_in_eps: usize,
    pub lambda_columns: usize,
    /// ε rows in which VMS does not increase as λ grows.
    pub vms_falling_in_lambda: usize,
    pub eps_rows: usize,
}

/// Summary statistics; trend comparisons allow each step the cells' VMS
/// tolerance at `target` relative gap.
pub fn summarize(cells: &[CellResult], eps_grid: &[f64], lambda_grid: &[f64], target: f64) -> SweepSummary {
    let ok: Vec<&CellResult> = cells.iter().filter(|c| c.error.is_none()).collect();
    let n = ok.len().max(1) as f64;
    let find = |e: f64, l: f64| ok.iter().find(|c| c.epsilon == e && c.lambda == l).copied();
    let rising = |a: &CellResult, b: &CellResult| b.vms_abs >= a.vms_abs - a.vms_tolerance(target) - b.vms_tolerance(target);
    let monotone = |series: Vec<Option<&CellResult>>, up: bool| {
        let series: Option<Vec<&CellResult>> = series.into_iter().collect();
        series.is_some_and(|s| {
            s.windows(2)
                .all(|w| if up { rising(w[0], w[1]) } else { rising(w[1], w[0]) })
        })
    };
    SweepSummary {
        cells: cells.len(),
        failed: cells.len() - ok.len(),
        mean_vms_pct: ok.iter().map(|c| c.vms_pct).sum::<f64>() / n,
        max_vms_pct: ok.iter().map(|c| c.vms_pct).fold(f64::NEG_INFINITY, f64::max),
        mean_gap_pct: ok.iter().map(|c| c.gap_pct).sum::<f64>() / n,
        max_gap_pct: ok.iter().map(|c| c.gap_pct).fold(f64::NEG_INFINITY, f64::max),
        vms_rising_in_eps: lambda_grid
            .iter()
            .filter(|&&l| monotone(eps_grid.iter().map(|&e| find(e, l)).collect(), true))
            .count(),
        lambda_columns: lambda_grid.len(),
        vms_falling_in_lambda: eps_grid
            .iter()
            .filter(|&&e| monotone(lambda_grid.iter().map(|&l| find(e, l)).collect(), false))
            .count(),
        eps_rows: eps_grid.len(),
    }
}

impl SweepSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cells            {} ({} failed)", self.cells, self.failed);
        let _ = writeln!(out, "VMS(%) mean/max  {:.3} / {:.3}", self.mean_vms_pct, self.max_vms_pct);
        let _ = writeln!(out, "GAP(%) mean/max  {:.3} / {:.3}", self.mean_gap_pct, self.max_gap_pct);
        let _ = writeln!(
            out,
            "VMS rising in eps for {}/{} lambda columns, falling in lambda for {}/{} eps rows",
            self.vms_rising_in_eps, self.lambda_columns, self.vms_falling_in_lambda, self.eps_rows
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_alpha_coefficients() {
        let (lo, hi) = alpha_coefficients(&Instance::bundled()).unwrap();
        assert!((lo - 1037.8 / 682.5).abs() < 1e-12);
        assert!((hi - 12749.95 / 15.0).abs() < 1e-9);
        assert!((lo - 1.52059).abs() < 1e-5);
    }

    #[test]
    fn identical_fixed_output_units_share_alpha() {
        let mut inst = Instance::bundled();
        let mut g = inst.generators[0].clone();
        g.q_min = 100.0;
        g.q_max = 100.0;
        inst.generators = vec![g.clone(), g.clone()];
        let (lo, hi) = alpha_coefficients(&inst).unwrap();
        let expected = (g.fixed_cost + g.linear_cost * 100.0) / 100.0;
        assert!((lo - expected).abs() < 1e-12 && (hi - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_minimum_output_is_an_error() {
        let mut inst = Instance::bundled();
        inst.generators[3].q_min = 0.0;
        assert!(matches!(alpha_coefficients(&inst), Err(AnalysisError::ZeroMinimumOutput(4))));
    }

    #[test]
    fn degenerate_tree_interval_is_symmetric() {
        let inst = Instance::bundled();
        let tree = build_tree(&inst, 0.0).unwrap();
        let spec = RiskSpec::mean_upper_semideviation(0.4).unwrap();
        let b = BoundInputs::compute(&inst, &tree, &spec).unwrap();
        assert!((b.d_max - 27100.0).abs() < 1e-9);
        assert!((b.rho_d - 27100.0).abs() < 1e-9);
        let (lo, hi) = b.interval();
        assert!((lo + hi).abs() < 1e-6 && lo < 0.0);
    }

    #[test]
    fn bundled_instance_violates_assumptions() {
        let inst = Instance::bundled();
        let tree = build_tree(&inst, 0.2).unwrap();
        let spec = RiskSpec::expectation();
        match theorem1_bounds(&inst, &tree, &spec, true) {
            Err(AnalysisError::Assumption { number, .. }) => assert_eq!(number, 3),
            other => panic!("unexpected {other:?}"),
        }
        let mut linear = inst.clone();
        for g in &mut linear.generators {
            g.quadratic_cost = 0.0;
            g.startup_cost = 0.0;
        }
        // Still no single unit can carry the whole system load.
        assert!(matches!(
            check_assumptions(&linear, &tree),
            Err(AnalysisError::Assumption { number: 1, .. })
        ));
        assert!(theorem1_bounds(&inst, &tree, &spec, false).is_ok());
    }

    #[test]
    fn almost_band_at_lambda_zero() {
        let inst = Instance::bundled();
        let tree = build_tree(&inst, 0.2).unwrap();
        let b = BoundInputs::compute(&inst, &tree, &RiskSpec::expectation()).unwrap();
        assert!((b.d_max - b.rho_d - 4350.0).abs() < 1e-6);
        let (lo, mid, hi) = approx_almost(b.alpha_lo, b.alpha_hi, b.d_max, b.rho_d);
        assert!((lo - b.alpha_lo * 4350.0).abs() < 1e-6);
        assert!(lo < mid && mid < hi);
        assert_eq!(approx_almost(2.0, 2.0, 10.0, 4.0), (12.0, 12.0, 12.0));
        assert_eq!(approx_almost(1.0, 3.0, 10.0, 10.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn final_approximation_arithmetic() {
        assert!((approx_final(1.0, 24, 0.4, 100.0) - 2160.0).abs() < 1e-9);
        assert!((approx_final(2.5, 10, 0.0, 3.0) - 75.0).abs() < 1e-12);
        // Linear in each argument separately.
        let f = |a: f64| approx_final(a, 24, 0.3, 50.0);
        assert!((f(3.0) - 3.0 * f(1.0)).abs() < 1e-9);
        let g = |d: f64| approx_final(1.7, 24, 0.3, d);
        assert!((g(7.0) + g(5.0) - g(12.0)).abs() < 1e-9);
        let h = |l: f64| approx_final(1.7, 24, l, 10.0);
        assert!((h(0.2) + h(0.6) - 2.0 * h(0.4)).abs() < 1e-9);
    }

    #[test]
    fn uniform_fan_matches_closed_form() {
        let base = vec![500.0; 24];
        for lambda in [0.0, 0.2, 0.4] {
            let spread = uniform_fan_spread(&base, lambda, 100.0, 1001).unwrap();
            let expected = approx_final(1.0, 24, lambda, 100.0);
            assert!((spread - expected).abs() <= 0.01 * expected, "{lambda}: {spread} vs {expected}");
        }
    }

    #[test]
    fn csv_has_exact_header() {
        let cell = CellResult::failed(0.1, 0.0, "x".into());
        let csv = results_csv(&[cell]);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 14);
    }

    #[test]
    fn trends_are_counted_per_row_and_column() {
        let mk = |e: f64, l: f64, vms: f64| CellResult {
            z_ts: 100.0 + vms,
            z_ms: 100.0,
            z_rh: 100.0,
            vms_abs: vms,
            vms_pct: vms,
            gap_abs: 0.0,
            gap_pct: 0.0,
            rel_gap_ts: 0.0,
            rel_gap_ms: 0.0,
            rel_gap_rh: 0.0,
            error: None,
            ..CellResult::failed(e, l, String::new())
        };
        let cells = vec![mk(0.1, 0.0, 1.0), mk(0.1, 0.5, 0.5), mk(0.2, 0.0, 2.0), mk(0.2, 0.5, 0.4)];
        let s = summarize(&cells, &[0.1, 0.2], &[0.0, 0.5], 1e-9);
        assert_eq!(s.vms_falling_in_lambda, 2);
        assert_eq!(s.vms_rising_in_eps, 1);
        assert!((s.mean_vms_pct - 0.975).abs() < 1e-12);
        assert_eq!(s.max_vms_pct, 2.0);
    }
}
